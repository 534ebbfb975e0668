"""Controlled variations: two-parameter families of controlled curves, their
Jacobi fields, and the two independently computable sides of the terminal-cost
identity

    C1 - C0 = - integral_0^T integral_0^1 ( Y^a dP/du^a - d2 mu'/dt ds ) ds dt.

The left side reads terminal costs off the endpoint slices; the right side is
a tensor-product Simpson quadrature.  The mixed derivative of mu' is never
formed by differencing mu' itself: its t-integrand is known in closed form
along every slice (the extended Lagrangian and the auxiliary-function
products) and only that integrand is differentiated across slices.

The sums over the auxiliary contact index beta admit two conventions,
``full`` (0..r-1) and ``paper`` (1..r-1); the identity itself adjudicates,
see :func:`select_beta_range`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .auxiliary import (
    ExtendedCurve,
    ExtendedTangent,
    HCoefficients,
    h_quadratic_terms,
    pc_form_pairing,
)
from .controls import ControlCurve
from .dynamics import Trajectory
from .problem import DefiningTriple

BETA_RANGES = ("full", "paper")


def beta_indices(r: int, mode: str) -> range:
    if mode == "full":
        return range(0, r)
    if mode == "paper":
        return range(1, r)
    raise ValueError(f"unknown beta range {mode!r}")


@dataclass
class ControlHomotopy:
    """A smooth one-parameter family of admissible control pairs.

    ``slice_curve(s)`` yields the control curve u(., s); ``sigma_path(s)``
    the initial data; ``du_ds`` optionally evaluates the control's
    s-derivative analytically (otherwise slices are differenced).
    """

    slice_curve: Callable[[float], ControlCurve]
    sigma_path: Callable[[float], Mapping]
    s_grid: np.ndarray
    horizon: float
    du_ds: Optional[Callable[[float, float], np.ndarray]] = None

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        if self.s_grid[0] != 0.0 or abs(self.s_grid[-1] - 1.0) > 1e-12:
            raise ValueError("s-grid must span [0, 1]")
        steps = np.diff(self.s_grid)
        if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-12:
            raise ValueError("s-grid must be uniform and increasing")


def uniform_s_grid(intervals: int) -> np.ndarray:
    if intervals % 2:
        raise ValueError("use an even number of s-intervals (Simpson)")
    return np.linspace(0.0, 1.0, intervals + 1)


@dataclass
class SurfaceSlice:
    s: float
    traj: Trajectory
    ext: ExtendedCurve


class VariationSurface:
    """All slices of a controlled variation, with difference-based Jacobi
    field access on arbitrary time grids."""

    def __init__(self, triple: DefiningTriple, hom: ControlHomotopy,
                 slices: Sequence[SurfaceSlice]) -> None:
        self.triple = triple
        self.hom = hom
        self.slices = list(slices)
        self.s_nodes = np.array([sl.s for sl in self.slices])
        self.ds = float(self.s_nodes[1] - self.s_nodes[0])
        self._stacked = None   # auxiliary coefficients, solved on demand
        self._grid_cache: dict = {}

    def _coeff_stack(self):
        if self._stacked is None:
            self._stacked = (
                np.stack([sl.ext.h_coeffs.hyp for sl in self.slices]),
                np.stack([sl.ext.h_coeffs.prime for sl in self.slices]),
                np.stack([sl.ext.h_coeffs.second for sl in self.slices]),
            )
        return self._stacked

    # -- plain slice access ---------------------------------------------------

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def coeffs(self, k: int) -> HCoefficients:
        return self.slices[k].ext.h_coeffs

    def q_blocks(self, ts: np.ndarray, order: int) -> np.ndarray:
        """Jet blocks of every slice on a time grid: (ns, nt, order+1, N)."""
        ts = np.atleast_1d(ts)
        key = ("q", ts.tobytes(), order)
        hit = self._grid_cache.get(key)
        if hit is not None:
            return hit
        out = np.empty((self.n_slices, ts.size, order + 1,
                        self.triple.lagrangian.state_dim))
        for k, sl in enumerate(self.slices):
            for j, t in enumerate(ts):
                out[k, j] = sl.traj.jet(float(t), order).blocks
        self._grid_cache[key] = out
        return out

    # -- s-differencing core ----------------------------------------------------

    def s_derivative(self, stacked: np.ndarray) -> np.ndarray:
        """Second-order difference along the first (s) axis, one-sided at the
        boundary nodes."""
        a = np.asarray(stacked, dtype=float)
        out = np.empty_like(a)
        h = self.ds
        out[1:-1] = (a[2:] - a[:-2]) / (2.0 * h)
        out[0] = (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h)
        out[-1] = (3.0 * a[-1] - 4.0 * a[-2] + a[-3]) / (2.0 * h)
        return out

    def jacobi_q(self, ts: np.ndarray, order: int) -> np.ndarray:
        """Y^i_(beta) on the grid: s-derivative of jet blocks,
        shape (ns, nt, order+1, N)."""
        return self.s_derivative(self.q_blocks(ts, order))

    def coeff_derivatives(self) -> list[HCoefficients]:
        """Per-node s-derivatives of the auxiliary coefficient families."""
        hyp, prime, second = self._coeff_stack()
        dhyp = self.s_derivative(hyp)
        dprime = self.s_derivative(prime)
        dsecond = self.s_derivative(second)
        T = self.triple.horizon
        return [HCoefficients(T, dhyp[k], dprime[k], dsecond[k])
                for k in range(self.n_slices)]

    def u_values(self, ts: np.ndarray) -> np.ndarray:
        """(ns, nt, M) control values."""
        ts = np.atleast_1d(ts)
        key = ("u", ts.tobytes())
        hit = self._grid_cache.get(key)
        if hit is not None:
            return hit
        M = self.triple.controls.dim
        out = np.empty((self.n_slices, ts.size, M))
        T = self.hom.horizon
        for k, sl in enumerate(self.slices):
            u = sl.traj.control
            for j, t in enumerate(ts):
                tt = t if t < T else np.nextafter(T, 0.0)
                out[k, j] = u.value(tt)
        self._grid_cache[key] = out
        return out

    def jacobi_u(self, ts: np.ndarray) -> np.ndarray:
        """Y^a on the grid, analytic when the homotopy provides du_ds."""
        ts = np.atleast_1d(ts)
        if self.hom.du_ds is not None:
            M = self.triple.controls.dim
            out = np.empty((self.n_slices, ts.size, M))
            for k, s in enumerate(self.s_nodes):
                for j, t in enumerate(ts):
                    out[k, j] = np.atleast_1d(self.hom.du_ds(float(t), float(s)))
            return out
        return self.s_derivative(self.u_values(ts))

    def mu_values(self, t: float) -> np.ndarray:
        return np.array([sl.ext.mu(t) for sl in self.slices])


def build_surface(triple: DefiningTriple, hom: ControlHomotopy,
                  tol=(1e-8, 1e-10)) -> VariationSurface:
    """Integrate every slice of the homotopy and solve its auxiliary
    boundary-value families."""
    slices = []
    for s in hom.s_grid:
        u = hom.slice_curve(float(s))
        sigma = hom.sigma_path(float(s))
        traj = triple.controlled_curve(u, sigma, tol=tol)
        slices.append(SurfaceSlice(float(s), traj, ExtendedCurve(traj, triple)))
    return VariationSurface(triple, hom, slices)


def homotopy_lhs(surface: VariationSurface) -> float:
    """Difference of terminal costs between the endpoint slices."""
    triple = surface.triple
    order = max(1, triple.cost.actual_order)
    c1 = triple.cost.value(surface.slices[-1].traj.terminal_jet(order))
    c0 = triple.cost.value(surface.slices[0].traj.terminal_jet(order))
    return c1 - c0


def _mixed_mu_integrand(surface: VariationSurface, ts: np.ndarray,
                        beta_range: str) -> np.ndarray:
    """G(t, s) = d2 mu'/dt ds on the (s, t) grid, shape (ns, nt).

    The t-derivative of mu' is -Ltilde plus the auxiliary product sum; both
    are closed-form along slices, and only they are differenced in s.
    """
    triple = surface.triple
    r = triple.lagrangian.actual_order
    ts = np.atleast_1d(ts)
    ns, nt = surface.n_slices, ts.size

    # Ltilde(t, s) slice by slice
    ltil = np.empty((ns, nt))
    q = surface.q_blocks(ts, r)
    u = surface.u_values(ts)
    from .jetspace import JetPoint

    for k in range(ns):
        coeffs = surface.coeffs(k)
        quad = h_quadratic_terms(coeffs, ts)
        for j in range(nt):
            jet = JetPoint(ts[j], q[k, j])
            ltil[k, j] = triple.lagrangian.value(jet, u[k, j]) + float(quad[j])
    dltil = surface.s_derivative(ltil)

    G = -dltil
    idx = list(beta_indices(r, beta_range))
    if idx:
        k4 = (math.pi / (2.0 * triple.horizon)) ** 4
        dcoeffs = surface.coeff_derivatives()
        for k in range(ns):
            c = surface.coeffs(k)
            d = dcoeffs[k]
            # d/dt [h'_(3) Y'_(0) + h''_(3) Y''_(0)]
            term = (k4 * c.hp(ts, 0) * d.hp(ts, 0)
                    + c.hp(ts, 3) * d.hp(ts, 1)
                    + k4 * c.hpp(ts, 0) * d.hpp(ts, 0)
                    + c.hpp(ts, 3) * d.hpp(ts, 1))
            G[k] += np.sum(term[:, idx, :], axis=(0, 1))
    return G


def _rhs_integrand(surface: VariationSurface, ts: np.ndarray,
                   beta_range: str) -> np.ndarray:
    """F(t, s) = Y^a dP/du^a - d2 mu'/dt ds, shape (ns, nt)."""
    triple = surface.triple
    r = triple.lagrangian.actual_order
    ts = np.atleast_1d(ts)
    ns, nt = surface.n_slices, ts.size
    q = surface.q_blocks(ts, r)
    u = surface.u_values(ts)
    Ya = surface.jacobi_u(ts)

    from .jetspace import JetPoint

    F = np.empty((ns, nt))
    M = triple.controls.dim
    for k in range(ns):
        for j in range(nt):
            jet = JetPoint(ts[j], q[k, j])
            acc = 0.0
            for a in range(M):
                if Ya[k, j, a] != 0.0:
                    acc += Ya[k, j, a] * (-triple.lagrangian.du(jet, u[k, j], a))
            F[k, j] = acc
    F -= _mixed_mu_integrand(surface, ts, beta_range)
    return F


def _time_grid(surface: VariationSurface, t_nodes: int) -> np.ndarray:
    if t_nodes % 2:
        t_nodes += 1
    return np.linspace(0.0, surface.triple.horizon, t_nodes + 1)


def homotopy_rhs(surface: VariationSurface, t_nodes: int = 400,
                 beta_range: str = "full") -> float:
    """- integral of F over [0,T] x [0,1] by tensor-product Simpson."""
    ts = _time_grid(surface, t_nodes)
    F = _rhs_integrand(surface, ts, beta_range)
    inner = simpson(F, x=ts, axis=1)           # integrate over t per slice
    return -float(simpson(inner, x=surface.s_nodes))


def homotopy_gap(surface: VariationSurface, t_nodes: int = 400,
                 beta_range: str = "full") -> float:
    return abs(homotopy_lhs(surface) - homotopy_rhs(surface, t_nodes, beta_range))


def select_beta_range(surface: VariationSurface, t_nodes: int = 200) -> dict:
    """Let the two-sided identity pick the contact-index convention."""
    gaps = {mode: homotopy_gap(surface, t_nodes, mode) for mode in BETA_RANGES}
    chosen = min(gaps, key=gaps.get)
    if abs(gaps["full"] - gaps["paper"]) <= 1e-12:
        chosen = "full"
    return {"selected": chosen, "gaps": gaps}


def minimal_labour_W(surface: VariationSurface, delta: float,
                     t_nodes: int = 400, beta_range: str = "full") -> float:
    """Partial double integral of F up to s = delta (cumulative trapezoid in
    s, Simpson in t).  Nonpositive for every variation of an optimum."""
    if delta < 0.0 or delta > 1.0:
        raise ValueError("delta must lie in [0, 1]")
    if delta == 0.0:
        return 0.0
    ts = _time_grid(surface, t_nodes)
    F = _rhs_integrand(surface, ts, beta_range)
    per_slice = simpson(F, x=ts, axis=1)
    s = surface.s_nodes
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (per_slice[1:] + per_slice[:-1])
                                           * np.diff(s))])
    return float(np.interp(delta, s, cum))


def infinitesimal_conditions(surface: VariationSurface,
                             t_nodes: int = 400,
                             beta_range: str = "full") -> tuple[float, float]:
    """(dC paired with the Jacobi field at (T, 0), base-slice integral of F).

    A candidate optimum needs the first >= 0 and the second <= 0.
    """
    triple = surface.triple
    r = triple.lagrangian.actual_order
    T = triple.horizon
    order = max(r, triple.cost.actual_order, 1)
    Y_T = self_jacobi_terminal(surface, order)
    jet_T = surface.slices[0].traj.terminal_jet(order)
    dC = 0.0
    for i in range(triple.lagrangian.state_dim):
        for b in range(order + 1):
            g = triple.cost.partial(jet_T, ("q", i, b))
            if g != 0.0:
                dC += g * Y_T[b, i]

    ts = _time_grid(surface, t_nodes)
    F = _rhs_integrand(surface, ts, beta_range)
    base = float(simpson(F[0], x=ts))
    return float(dC), base


def self_jacobi_terminal(surface: VariationSurface, order: int) -> np.ndarray:
    """Jacobi jet components at (t = T, s = 0), shape (order+1, N)."""
    Y = surface.jacobi_q(np.array([surface.triple.horizon]), order)
    return Y[0, 0]


# -- mu' and the auxiliary correction -----------------------------------------


def mu_prime(surface: VariationSurface, t: float, s_index: int,
             beta_range: str = "full") -> float:
    """mu'(t, s_k): mu of the k-th slice plus the cumulative auxiliary
    correction integral over v in [0, s_k] on the surface's s-grid."""
    corr = _correction_integrand(surface, t, beta_range)
    s = surface.s_nodes
    k = int(s_index)
    mu_k = surface.slices[k].ext.mu(t)
    if k == 0:
        return mu_k
    partial = np.concatenate([[0.0], np.cumsum(0.5 * (corr[1:] + corr[:-1])
                                               * np.diff(s))])
    return float(mu_k + partial[k])


def mu_prime_correction(surface: VariationSurface, t: float, s: float,
                        beta_range: str = "full") -> float:
    """mu'(t, s) for s on the surface's s-grid (nearest-node lookup)."""
    k = int(np.argmin(np.abs(surface.s_nodes - s)))
    if abs(surface.s_nodes[k] - s) > 1e-9:
        raise ValueError(f"s={s} is not on the surface's s-grid")
    return mu_prime(surface, t, k, beta_range)


def _correction_integrand(surface: VariationSurface, t: float,
                          beta_range: str) -> np.ndarray:
    """sum over (i, beta) of h'_(3) Y'_(0) + h''_(3) Y''_(0) at time t, per
    s-node."""
    r = surface.triple.lagrangian.actual_order
    idx = list(beta_indices(r, beta_range))
    out = np.zeros(surface.n_slices)
    if not idx:
        return out
    dcoeffs = surface.coeff_derivatives()
    for k in range(surface.n_slices):
        c = surface.coeffs(k)
        d = dcoeffs[k]
        term = (c.hp(t, 3) * d.hp(t, 0) + c.hpp(t, 3) * d.hpp(t, 0))
        out[k] = float(np.sum(term[:, idx]))
    return out


def mu_prime_gap_direct(surface: VariationSurface, beta_range: str = "full") -> float:
    """mu'(T, 1) - mu'(T, 0) with the correction integrated by Simpson over
    the whole s-grid (the direct-quadrature side of the two-method check)."""
    T = surface.triple.horizon
    corr = _correction_integrand(surface, T, beta_range)
    correction = float(simpson(corr, x=surface.s_nodes))
    return (surface.slices[-1].ext.mu(T) - surface.slices[0].ext.mu(T)
            + correction)


# -- pairings along vertical sides ---------------------------------------------


def jacobi_tangent(surface: VariationSurface, t: float, k: int) -> ExtendedTangent:
    """The s-direction tangent (Jacobi field) of the extended surface at
    (t, s_k), assembled from slice differences."""
    triple = surface.triple
    r = triple.lagrangian.actual_order
    N = triple.lagrangian.state_dim
    M = triple.controls.dim
    order = max(2 * r, 1)

    Yq = surface.jacobi_q(np.array([t]), order)[k, 0]   # (order+1, N)
    dcoeffs = surface.coeff_derivatives()[k]
    dh = np.stack([dcoeffs.h(t, d) for d in range(3)], axis=-1)
    dhp = np.stack([dcoeffs.hp(t, d) for d in range(3)], axis=-1)
    dhpp = np.stack([dcoeffs.hpp(t, d) for d in range(3)], axis=-1)
    dmu0 = float(surface.s_derivative(surface.mu_values(t))[k])
    du = surface.jacobi_u(np.array([t]))[k, 0]
    return ExtendedTangent(dt=0.0, dq=Yq, dh=dh, dhp=dhp, dhpp=dhpp,
                           dmu0=dmu0, du=du)


def vertical_pairing(surface: VariationSurface, t: float, k: int) -> float:
    """Pairing of the Poincare-Cartan form with the Jacobi tangent at
    (t, s_k); vanishes identically at t = 0 by the boundary-value design."""
    pt = surface.slices[k].ext.ext_point(t)
    return pc_form_pairing(surface.triple, pt, jacobi_tangent(surface, t, k))


def conservation_residual(surface: VariationSurface, k: int,
                          t_nodes: int = 400, beta_range: str = "full") -> float:
    """Residual of the per-slice balance: pairing at (T, s_k) minus pairing
    at (0, s_k) minus the time integral of the mixed mu' derivative."""
    T = surface.triple.horizon
    ts = _time_grid(surface, t_nodes)
    G = _mixed_mu_integrand(surface, ts, beta_range)
    flux = float(simpson(G[k], x=ts))
    return (vertical_pairing(surface, T, k)
            - vertical_pairing(surface, 0.0, k) - flux)
