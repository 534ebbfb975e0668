"""Control curves: evaluable maps t -> u with derivative stacks and breakpoints.

Curves are right-continuous at their breakpoints, so a piecewise-constant
curve taking value ``w`` on ``[a, b)`` reports ``w`` at ``t = a`` and the
follow-on value at ``t = b``.
"""

from __future__ import annotations

from bisect import bisect_right
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np


def smoothstep5(theta: float, deriv: int = 0) -> float:
    """Quintic smoothstep 6 th^5 - 15 th^4 + 10 th^3 on [0, 1], clamped outside."""
    if theta <= 0.0:
        return 0.0
    if theta >= 1.0:
        return 1.0 if deriv == 0 else 0.0
    th = theta
    if deriv == 0:
        return th ** 3 * (10.0 + th * (-15.0 + 6.0 * th))
    if deriv == 1:
        return 30.0 * th ** 2 * (th - 1.0) ** 2
    if deriv == 2:
        return th * (60.0 + th * (-180.0 + 120.0 * th))
    if deriv == 3:
        return 60.0 + th * (-360.0 + 360.0 * th)
    if deriv == 4:
        return -360.0 + 720.0 * th
    if deriv == 5:
        return 720.0
    return 0.0


class ControlCurve:
    """Base class; subclasses implement ``value`` and ``jet``."""

    kind = "abstract"

    def __init__(self, horizon: float, dim: int) -> None:
        self.horizon = float(horizon)
        self.dim = int(dim)
        self.breakpoints: tuple[float, ...] = ()

    def value(self, t: float) -> np.ndarray:
        return self.jet(t, 0)[0]

    def jet(self, t: float, depth: int) -> np.ndarray:
        """Value and time derivatives at ``t``, shape (depth+1, dim)."""
        raise NotImplementedError

    def __call__(self, t: float) -> np.ndarray:
        return self.value(t)

    def values_on(self, ts: np.ndarray) -> np.ndarray:
        return np.array([self.value(t) for t in np.atleast_1d(ts)])


class ConstantControl(ControlCurve):
    kind = "analytic-callback"

    def __init__(self, value, horizon: float) -> None:
        v = np.atleast_1d(np.asarray(value, dtype=float))
        super().__init__(horizon, v.size)
        self._v = v

    def jet(self, t: float, depth: int) -> np.ndarray:
        out = np.zeros((depth + 1, self.dim))
        out[0] = self._v
        return out


class CallbackControl(ControlCurve):
    """Smooth curve given by a callback, with optional analytic derivatives.

    ``derivatives[k]`` evaluates d^(k+1) u / dt^(k+1); deeper derivatives fall
    back to symmetric differences of the highest analytic layer.
    """

    kind = "analytic-callback"

    def __init__(self, fun: Callable[[float], Sequence[float]], horizon: float,
                 dim: int = 1, derivatives: Optional[Sequence[Callable]] = None) -> None:
        super().__init__(horizon, dim)
        self._fun = fun
        self._derivs = list(derivatives or [])

    def _layer(self, k: int, t: float) -> np.ndarray:
        if k == 0:
            return np.atleast_1d(np.asarray(self._fun(t), dtype=float))
        if k <= len(self._derivs):
            return np.atleast_1d(np.asarray(self._derivs[k - 1](t), dtype=float))
        # difference quotient of the deepest analytic layer
        h = 1e-4 * max(1.0, abs(self.horizon))
        return (self._layer(k - 1, t + h) - self._layer(k - 1, t - h)) / (2.0 * h)

    def jet(self, t: float, depth: int) -> np.ndarray:
        return np.vstack([self._layer(k, t) for k in range(depth + 1)])


class PiecewiseConstantControl(ControlCurve):
    """Right-continuous step function; ``times`` are the interior jumps."""

    kind = "piecewise-constant"

    def __init__(self, times: Sequence[float], values, horizon: float) -> None:
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        if vals.shape[0] != len(times) + 1:
            raise ValueError("need len(times)+1 value rows")
        super().__init__(horizon, vals.shape[1])
        self._times = [float(x) for x in times]
        self._vals = vals
        self.breakpoints = tuple(x for x in self._times if 0.0 < x < horizon)

    def jet(self, t: float, depth: int) -> np.ndarray:
        idx = bisect_right(self._times, t)
        out = np.zeros((depth + 1, self.dim))
        out[0] = self._vals[idx]
        return out


class NeedleOverlayControl(ControlCurve):
    """Base curve overwritten by a constant ceiling value on [tau-eps, tau)."""

    kind = "piecewise-constant"

    def __init__(self, base: ControlCurve, tau: float, omega, eps: float) -> None:
        super().__init__(base.horizon, base.dim)
        self.base = base
        self.tau = float(tau)
        self.eps = float(eps)
        self.omega = np.atleast_1d(np.asarray(omega, dtype=float))
        pts = set(base.breakpoints) | {self.tau - self.eps, self.tau}
        self.breakpoints = tuple(sorted(p for p in pts if 0.0 < p < self.horizon))

    def jet(self, t: float, depth: int) -> np.ndarray:
        if self.tau - self.eps <= t < self.tau:
            out = np.zeros((depth + 1, self.dim))
            out[0] = self.omega
            return out
        return self.base.jet(t, depth)


class SmoothedNeedleControl(ControlCurve):
    """C^2 needle: quintic ramps of width k*eps^2 blend base and ceiling.

    Equals the base curve left of ``tau - eps - k eps^2`` and right of
    ``tau + k eps^2``, the ceiling on ``[tau - eps, tau]``, and the convex
    blend ``(1-w) base + w ceiling`` on the two ramps.  Box-valued whenever
    base and ceiling are.
    """

    kind = "smoothed-needle"

    def __init__(self, base: ControlCurve, tau: float, omega, eps: float, k: float) -> None:
        super().__init__(base.horizon, base.dim)
        self.base = base
        self.tau = float(tau)
        self.eps = float(eps)
        self.k = float(k)
        self.omega = np.atleast_1d(np.asarray(omega, dtype=float))
        w = self.k * self.eps ** 2
        self.t_on = self.tau - self.eps - w
        self.t_full = self.tau - self.eps
        self.t_off = self.tau
        self.t_end = self.tau + w
        self.ramp = w
        pts = set(base.breakpoints) | {self.t_on, self.t_full, self.t_off, self.t_end}
        self.breakpoints = tuple(sorted(p for p in pts if 0.0 < p < self.horizon))

    def _weight_jet(self, t: float, depth: int) -> np.ndarray:
        """w(t) and derivatives: 0 outside, 1 on the plateau, ramps in between."""
        out = np.zeros(depth + 1)
        if self.t_full <= t < self.t_off:
            out[0] = 1.0
            return out
        if self.t_on <= t < self.t_full:
            theta = (t - self.t_on) / self.ramp
            slope = 1.0 / self.ramp
        elif self.t_off <= t < self.t_end:
            theta = 1.0 - (t - self.t_off) / self.ramp
            slope = -1.0 / self.ramp
        else:
            return out
        for j in range(depth + 1):
            out[j] = smoothstep5(theta, j) * slope ** j
        return out

    def jet(self, t: float, depth: int) -> np.ndarray:
        b = self.base.jet(t, depth)
        w = self._weight_jet(t, depth)
        # Leibniz on u = b + w*(omega - b)
        out = np.empty_like(b)
        for m in range(depth + 1):
            acc = b[m].copy()
            for j in range(m + 1):
                if w[j] != 0.0:
                    target = (self.omega - b[0]) if j == m else -b[m - j]
                    acc += comb(m, j) * w[j] * target
            out[m] = acc
        return out


class BlendControl(ControlCurve):
    """Convex interpolation (1-s) u0 + s u1 of two curves on one horizon."""

    kind = "analytic-callback"

    def __init__(self, u0: ControlCurve, u1: ControlCurve, s: float) -> None:
        if abs(u0.horizon - u1.horizon) > 1e-12:
            raise ValueError("blended curves must share the horizon")
        super().__init__(u0.horizon, u0.dim)
        self.u0, self.u1, self.s = u0, u1, float(s)
        pts = set(u0.breakpoints) | set(u1.breakpoints)
        self.breakpoints = tuple(sorted(pts))

    def jet(self, t: float, depth: int) -> np.ndarray:
        return (1.0 - self.s) * self.u0.jet(t, depth) + self.s * self.u1.jet(t, depth)


class InterpolatedSamplesControl(ControlCurve):
    kind = "interpolated-samples"

    def __init__(self, ts: Sequence[float], us, horizon: float) -> None:
        from scipy.interpolate import CubicSpline

        vals = np.atleast_2d(np.asarray(us, dtype=float))
        if vals.shape[0] != len(ts):
            vals = vals.T
        super().__init__(horizon, vals.shape[1])
        self._spline = CubicSpline(np.asarray(ts, dtype=float), vals, axis=0)

    def jet(self, t: float, depth: int) -> np.ndarray:
        return np.vstack([np.atleast_1d(self._spline(t, nu=k)) for k in range(depth + 1)])


def range_within_box(u: ControlCurve, lower, upper, margin: float = 0.0,
                     samples: int = 512, tol: float = 1e-12) -> bool:
    """Sampled check that a curve stays inside the (inflated) box."""
    lo = np.atleast_1d(np.asarray(lower, dtype=float)) - margin - tol
    hi = np.atleast_1d(np.asarray(upper, dtype=float)) + margin + tol
    ts = np.linspace(0.0, u.horizon, samples)
    ts = np.unique(np.concatenate([ts, np.asarray(u.breakpoints, dtype=float)]))
    for t in ts:
        v = u.value(min(t, u.horizon * (1 - 1e-15)))
        if np.any(v < lo) or np.any(v > hi):
            return False
    return True
