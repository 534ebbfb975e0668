"""Auxiliary boundary-value functions, the mu bookkeeping scalar and the
controlled Poincare-Cartan pairing.

Every controlled curve gets, per variable i and contact index beta < r,
three closed-form companions:

    h(t)   = A e^t + B e^(-t)
    h'(t)  = A' e^(kt) + B' e^(-kt) + C' cos(kt) + D' sin(kt),   k = pi/(2T)
    h''(t) = same basis as h'

whose boundary data encode the curve's momentum sums at t = 0 and t = T.
They cancel the vertical-side boundary integrals in the Stokes argument, and
enter the extended Lagrangian

    Ltilde = L + (1/2) sum (hdot^2 - h'dd^2 - h''dd^2)
               + sum ( (1/2) h^2 + (pi^4/32 T^4)(h'^2 + h''^2) ),

whose sign-flipped time integral is the scalar mu (the multiplier lambda is
identically 1 and is never integrated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .dynamics import Trajectory
from .errors import InsufficientJetOrder, SingularBoundaryMatrix
from .jetspace import JetPoint
from .problem import DefiningTriple, full_momenta, lagrangian_momenta


def boundary_matrix(T: float) -> np.ndarray:
    """The 4x4 matrix pairing the h'/h'' basis functions with their boundary
    functionals: value at 0, derivative at 0, derivative at T, second
    derivative at T, applied to (e^(kt), e^(-kt), cos kt, sin kt), k = pi/2T."""
    k = math.pi / (2.0 * T)
    e = math.exp(math.pi / 2.0)
    return np.array([
        [1.0, 1.0, 1.0, 0.0],
        [k, -k, 0.0, k],
        [k * e, -k / e, -k, 0.0],
        [k * k * e, k * k / e, 0.0, -k * k],
    ])


def _quartet_eval(coeffs: np.ndarray, k: float, t, deriv: int):
    """Derivative of A e^(kt) + B e^(-kt) + C cos(kt) + D sin(kt).

    ``coeffs`` has shape (..., 4); ``t`` may be scalar or an array appended
    as a trailing axis.
    """
    t = np.asarray(t, dtype=float)
    A, B, C, D = (coeffs[..., j] for j in range(4))
    if t.ndim:
        A, B, C, D = (x[..., None] for x in (A, B, C, D))
    kd = k ** deriv
    ek = np.exp(k * t)
    out = kd * (A * ek + ((-1.0) ** deriv) * B / ek)
    m = deriv % 4
    c, s = np.cos(k * t), np.sin(k * t)
    if m == 0:
        cc, ss = c, s
    elif m == 1:
        cc, ss = -s, c
    elif m == 2:
        cc, ss = -c, -s
    else:
        cc, ss = s, -c
    return out + kd * (C * cc + D * ss)


@dataclass
class HCoefficients:
    """Coefficient families of the auxiliary functions, with the boundary
    data they were solved from (kept for residual audits)."""

    T: float
    hyp: np.ndarray     # (N, r, 2): A, B
    prime: np.ndarray   # (N, r, 4): A', B', C', D'
    second: np.ndarray  # (N, r, 4)
    q0: np.ndarray = None       # q_(beta)(0)
    m0: np.ndarray = None       # momentum sums of L at t=0
    qT: np.ndarray = None       # q_(beta)(T)
    mT: np.ndarray = None       # momentum sums of L + dC/dt at t=T
    cond: float = float("nan")

    @property
    def dim(self) -> int:
        return self.hyp.shape[0]

    @property
    def r(self) -> int:
        return self.hyp.shape[1]

    @property
    def wavenumber(self) -> float:
        return math.pi / (2.0 * self.T)

    def h(self, t, deriv: int = 0):
        t = np.asarray(t, dtype=float)
        A, B = self.hyp[..., 0], self.hyp[..., 1]
        if t.ndim:
            A, B = A[..., None], B[..., None]
        return A * np.exp(t) + ((-1.0) ** deriv) * B * np.exp(-t)

    def hp(self, t, deriv: int = 0):
        return _quartet_eval(self.prime, self.wavenumber, t, deriv)

    def hpp(self, t, deriv: int = 0):
        return _quartet_eval(self.second, self.wavenumber, t, deriv)

    def eval(self, which: str, t, deriv: int = 0):
        return {"h": self.h, "hp": self.hp, "hpp": self.hpp}[which](t, deriv)

    def scaled(self, factor: float) -> "HCoefficients":
        return HCoefficients(self.T, factor * self.hyp, factor * self.prime,
                             factor * self.second)

    def diff(self, other: "HCoefficients", scale: float) -> "HCoefficients":
        """(self - other) / scale, used for s-derivatives across slices."""
        return HCoefficients(self.T, (self.hyp - other.hyp) / scale,
                             (self.prime - other.prime) / scale,
                             (self.second - other.second) / scale)


def eval_h(coeffs: HCoefficients, t, deriv: int = 0, which: str = "h"):
    """Closed-form evaluation of h, h' or h'' (derivatives up to any order)."""
    return coeffs.eval(which, t, deriv)


def _boundary_jet_depth(triple: DefiningTriple) -> int:
    r = triple.lagrangian.actual_order
    return max(2 * r - 1, triple.cost.actual_order + r, 1)


def solve_h(traj: Trajectory, triple: DefiningTriple) -> HCoefficients:
    """Solve the three boundary-value families for one controlled curve.

    A, B come from the 2x2 system (value and slope of h at 0); the primed and
    double-primed quartets come from the boundary matrix, the latter fed by
    the already-solved h at t = T.
    """
    r = triple.lagrangian.actual_order
    N = triple.lagrangian.state_dim
    T = triple.horizon
    depth = _boundary_jet_depth(triple)

    jet0 = traj.jet(0.0, depth)
    jetT = traj.jet(T, depth)
    uj0 = traj.control.jet(0.0, r + 1)
    ujT = traj.control.jet(np.nextafter(T, 0.0), r + 1)

    m0 = lagrangian_momenta(triple, jet0, uj0)
    mT = full_momenta(triple, jetT, ujT)
    q0 = jet0.blocks[:r, :].T.copy()   # (N, r): q^i_(beta)(0)
    qT = jetT.blocks[:r, :].T.copy()

    hyp = np.empty((N, r, 2))
    hyp[..., 0] = 0.5 * (q0 - m0)   # A
    hyp[..., 1] = 0.5 * (q0 + m0)   # B

    A = boundary_matrix(T)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularBoundaryMatrix(f"cond(A) = {cond:.3e} at T = {T}")
    lu = lu_factor(A)

    prime = np.empty((N, r, 4))
    second = np.empty((N, r, 4))
    coeffs = HCoefficients(T, hyp, prime, second, q0=q0, m0=m0, qT=qT, mT=mT,
                           cond=cond)
    hT = coeffs.h(T, 0)
    hdT = coeffs.h(T, 1)
    for i in range(N):
        for b in range(r):
            prime[i, b] = lu_solve(lu, np.array([0.0, 0.0, qT[i, b], mT[i, b]]))
            second[i, b] = lu_solve(lu, np.array([0.0, 0.0, hT[i, b], hdT[i, b]]))
    return coeffs


def bvp_residuals(coeffs: HCoefficients) -> dict:
    """Relative residuals of all boundary conditions of the solved families."""
    T = coeffs.T

    def rel(err, scale):
        return float(np.max(np.abs(err) / (1.0 + np.abs(scale))))

    out = {
        "h(0)=q(0)": rel(coeffs.h(0.0, 0) - coeffs.q0, coeffs.q0),
        "hdot(0)=-m0": rel(coeffs.h(0.0, 1) + coeffs.m0, coeffs.m0),
        "h'(0)=0": rel(coeffs.hp(0.0, 0), coeffs.qT),
        "h'dot(0)=0": rel(coeffs.hp(0.0, 1), coeffs.qT),
        "h'dot(T)=q(T)": rel(coeffs.hp(T, 1) - coeffs.qT, coeffs.qT),
        "h'dd(T)=mT": rel(coeffs.hp(T, 2) - coeffs.mT, coeffs.mT),
        "h''(0)=0": rel(coeffs.hpp(0.0, 0), coeffs.q0),
        "h''dot(0)=0": rel(coeffs.hpp(0.0, 1), coeffs.q0),
        "h''dot(T)=h(T)": rel(coeffs.hpp(T, 1) - coeffs.h(T, 0), coeffs.h(T, 0)),
        "h''dd(T)=hdot(T)": rel(coeffs.hpp(T, 2) - coeffs.h(T, 1), coeffs.h(T, 1)),
    }
    return out


def ode_identity_residuals(coeffs: HCoefficients, ts) -> dict:
    """Closed-form checks: hdd - h = 0 and (d^4 - k^4) h', h'' = 0."""
    k4 = coeffs.wavenumber ** 4
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    r_h = np.max(np.abs(coeffs.h(ts, 2) - coeffs.h(ts, 0)))
    r_p = np.max(np.abs(coeffs.hp(ts, 4) - k4 * coeffs.hp(ts, 0)))
    r_s = np.max(np.abs(coeffs.hpp(ts, 4) - k4 * coeffs.hpp(ts, 0)))
    scale = 1.0 + max(np.max(np.abs(coeffs.h(ts, 0))),
                      np.max(np.abs(coeffs.hp(ts, 0))) * k4,
                      np.max(np.abs(coeffs.hpp(ts, 0))) * k4)
    return {"h''-h": float(r_h / scale),
            "h'(4)-k4 h'": float(r_p / scale),
            "h''(4)-k4 h''": float(r_s / scale)}


def h_quadratic_terms(coeffs: HCoefficients, t) -> np.ndarray:
    """The auxiliary part of Ltilde at time(s) t:
    (1/2) sum (hdot^2 - h'dd^2 - h''dd^2) + sum ((1/2) h^2 + c4 (h'^2 + h''^2)),
    with c4 = pi^4 / (32 T^4)."""
    c4 = math.pi ** 4 / (32.0 * coeffs.T ** 4)
    hd = coeffs.h(t, 1)
    hp2 = coeffs.hp(t, 2)
    hpp2 = coeffs.hpp(t, 2)
    h0 = coeffs.h(t, 0)
    hp0 = coeffs.hp(t, 0)
    hpp0 = coeffs.hpp(t, 0)
    quad = 0.5 * (hd ** 2 - hp2 ** 2 - hpp2 ** 2) + 0.5 * h0 ** 2 \
        + c4 * (hp0 ** 2 + hpp0 ** 2)
    return np.sum(quad, axis=(0, 1))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


class ExtendedCurve:
    """A controlled curve together with its auxiliary companions and the
    scalar mu obtained by quadrature of the extended Lagrangian."""

    def __init__(self, base: Trajectory, triple: DefiningTriple,
                 h_coeffs: Optional[HCoefficients] = None) -> None:
        self.base = base
        self.triple = triple
        self._h_coeffs = h_coeffs
        self.lam = 1.0
        self._mu_nodes: Optional[np.ndarray] = None
        self._mu_cum: Optional[np.ndarray] = None

    @property
    def h_coeffs(self) -> HCoefficients:
        # solved on first use; the closed-form needle bookkeeping never needs it
        if self._h_coeffs is None:
            self._h_coeffs = solve_h(self.base, self.triple)
        return self._h_coeffs

    # -- extended Lagrangian --------------------------------------------------

    def ltilde(self, t: float) -> float:
        r = self.triple.lagrangian.actual_order
        jet = self.base.jet(t, r)
        tu = t if t < self.base.horizon else np.nextafter(self.base.horizon, 0.0)
        u = self.base.control.value(tu)
        return (self.triple.lagrangian.value(jet, u)
                + float(h_quadratic_terms(self.h_coeffs, t)))

    # -- mu by cumulative Gauss-Legendre over the integrator mesh -------------

    def _ensure_mu(self) -> None:
        if self._mu_nodes is not None:
            return
        mesh = np.unique(np.clip(self.base.mesh, 0.0, self.base.horizon))
        if mesh[0] > 0.0:
            mesh = np.concatenate([[0.0], mesh])
        if mesh[-1] < self.base.horizon:
            mesh = np.concatenate([mesh, [self.base.horizon]])
        cum = np.zeros(mesh.size)
        for k in range(mesh.size - 1):
            cum[k + 1] = cum[k] + self._gl_segment(mesh[k], mesh[k + 1])
        self._mu_nodes = mesh
        self._mu_cum = cum

    def _gl_segment(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        return half * sum(w * self.ltilde(mid + half * x)
                          for x, w in zip(_GL_NODES, _GL_WEIGHTS))

    def mu(self, t: float) -> float:
        """mu(t) = - integral of Ltilde from 0 to t."""
        if t <= 0.0:
            return 0.0
        self._ensure_mu()
        t = min(t, self.base.horizon)
        k = int(np.searchsorted(self._mu_nodes, t, side="right") - 1)
        k = min(k, self._mu_nodes.size - 2)
        partial = self._gl_segment(self._mu_nodes[k], t)
        return -(self._mu_cum[k] + partial)

    def mu_rate(self, t: float) -> float:
        return -self.ltilde(t)

    # -- extended jet points ---------------------------------------------------

    def ext_point(self, t: float) -> "ExtendedJetPoint":
        r = self.triple.lagrangian.actual_order
        depth = max(2 * r, _boundary_jet_depth(self.triple) + 1)
        jet = self.base.jet(t, depth)
        tu = t if t < self.base.horizon else np.nextafter(self.base.horizon, 0.0)
        ujet = self.base.control.jet(tu, r + 1)
        h = np.stack([self.h_coeffs.h(t, d) for d in range(4)], axis=-1)
        hp = np.stack([self.h_coeffs.hp(t, d) for d in range(4)], axis=-1)
        hpp = np.stack([self.h_coeffs.hpp(t, d) for d in range(4)], axis=-1)
        return ExtendedJetPoint(jet=jet, ujet=ujet, h=h, hp=hp, hpp=hpp,
                                lam=1.0, mu_value=self.mu(t),
                                mu_rate=self.mu_rate(t))


def extend(traj: Trajectory, triple: DefiningTriple) -> ExtendedCurve:
    return ExtendedCurve(traj, triple)


def mu_of(ext: ExtendedCurve, t: float) -> float:
    """The bookkeeping scalar at time t (zero at t = 0 by construction)."""
    return ext.mu(t)


@dataclass
class ExtendedJetPoint:
    """A jet of the extended curve: base jets, control stack, auxiliary
    function values/derivatives (rows 0..3), multiplier and mu data."""

    jet: JetPoint
    ujet: np.ndarray
    h: np.ndarray    # (N, r, 4)
    hp: np.ndarray   # (N, r, 4)
    hpp: np.ndarray  # (N, r, 4)
    lam: float
    mu_value: float
    mu_rate: float

    @property
    def t(self) -> float:
        return self.jet.t


@dataclass
class ExtendedTangent:
    """A tangent vector over the extended jet coordinates plus t and u.

    ``dq`` rows are indexed by jet order; ``dh``/``dhp``/``dhpp`` carry the
    components along the auxiliary coordinates and their derivative levels
    (rows 0..2 used).  Contact pairings subtract the coordinate velocity
    times ``dt``.
    """

    dt: float
    dq: np.ndarray            # (>= r, N)
    dh: np.ndarray            # (N, r, >=1)
    dhp: np.ndarray           # (N, r, >=2)
    dhpp: np.ndarray          # (N, r, >=2)
    dmu0: float
    du: np.ndarray

    @staticmethod
    def zero(N: int, r: int, M: int = 1, rows: int = 4) -> "ExtendedTangent":
        return ExtendedTangent(
            dt=0.0, dq=np.zeros((rows, N)), dh=np.zeros((N, r, 3)),
            dhp=np.zeros((N, r, 3)), dhpp=np.zeros((N, r, 3)),
            dmu0=0.0, du=np.zeros(M))


def lift_tangent(pt: ExtendedJetPoint) -> ExtendedTangent:
    """The tangent of the extended lift: every contact pairing vanishes."""
    n, N = pt.jet.n, pt.jet.dim
    r = pt.h.shape[1]
    dq = np.zeros((n + 1, N))
    dq[:n] = pt.jet.blocks[1:]
    dh = pt.h[..., 1:4].copy()
    dhp = pt.hp[..., 1:4].copy()
    dhpp = pt.hpp[..., 1:4].copy()
    return ExtendedTangent(dt=1.0, dq=dq, dh=dh, dhp=dhp, dhpp=dhpp,
                           dmu0=pt.mu_rate, du=np.zeros(pt.ujet.shape[1]))


def pc_form_pairing(triple: DefiningTriple, pt: ExtendedJetPoint,
                    tangent: ExtendedTangent) -> float:
    """Evaluate the controlled Poincare-Cartan form on a tangent vector.

    The form is L-hat dt, plus the momentum sums of L + dC/dt paired with
    the base contact forms, plus the auxiliary contact terms
    h_(1) w_(0) - h'_(2) w'_(1) - h''_(2) w''_(1) + h'_(3) w'_(0)
    + h''_(3) w''_(0), plus lam times the mu contact form.
    """
    L = triple.lagrangian
    r = L.actual_order
    N = L.state_dim
    jet = pt.jet
    if jet.n < 2 * r:
        raise InsufficientJetOrder(f"extended jet order must be >= {2 * r}")

    u = pt.ujet[0]
    ltil = L.value(jet, u) + h_quadratic_terms_from_point(pt, triple.horizon)
    dcdt = triple.cost.rate_field().value_uj(jet, np.zeros((2, 1)))
    lhat = pt.lam * (pt.mu_rate + ltil) + dcdt

    out = lhat * tangent.dt

    # base contact pairings with the momentum sums of L + dC/dt
    M = full_momenta(triple, jet, pt.ujet)
    for i in range(N):
        for b in range(r):
            w = tangent.dq[b, i] - jet.coord(i, b + 1) * tangent.dt
            out += M[i, b] * w

    # auxiliary contact pairings
    for i in range(N):
        for b in range(r):
            w_h0 = tangent.dh[i, b, 0] - pt.h[i, b, 1] * tangent.dt
            w_p1 = tangent.dhp[i, b, 1] - pt.hp[i, b, 2] * tangent.dt
            w_s1 = tangent.dhpp[i, b, 1] - pt.hpp[i, b, 2] * tangent.dt
            w_p0 = tangent.dhp[i, b, 0] - pt.hp[i, b, 1] * tangent.dt
            w_s0 = tangent.dhpp[i, b, 0] - pt.hpp[i, b, 1] * tangent.dt
            out += pt.lam * (
                pt.h[i, b, 1] * w_h0
                - pt.hp[i, b, 2] * w_p1 - pt.hpp[i, b, 2] * w_s1
                + pt.hp[i, b, 3] * w_p0 + pt.hpp[i, b, 3] * w_s0
            )

    # mu contact pairing
    out += pt.lam * (tangent.dmu0 - pt.mu_rate * tangent.dt)
    return float(out)


def h_quadratic_terms_from_point(pt: ExtendedJetPoint, T: float) -> float:
    """Same auxiliary Ltilde part as :func:`h_quadratic_terms`, read off the
    stored derivative rows of an extended jet point."""
    c4 = math.pi ** 4 / (32.0 * T ** 4)
    quad = (0.5 * (pt.h[..., 1] ** 2 - pt.hp[..., 2] ** 2 - pt.hpp[..., 2] ** 2)
            + 0.5 * pt.h[..., 0] ** 2
            + c4 * (pt.hp[..., 0] ** 2 + pt.hpp[..., 0] ** 2))
    return float(np.sum(quad))


def pc_lift_integral(ext: ExtendedCurve, n_nodes: int = 401) -> float:
    """Integral of the Poincare-Cartan form along the extended lift.

    Along an extended controlled curve this equals the terminal cost.
    Composite Simpson over a uniform grid refined by the control breakpoints.
    """
    from scipy.integrate import simpson

    T = ext.base.horizon
    ts = np.linspace(0.0, T, n_nodes if n_nodes % 2 == 1 else n_nodes + 1)
    vals = np.empty(ts.size)
    for k, t in enumerate(ts):
        pt = ext.ext_point(t)
        vals[k] = pc_form_pairing(ext.triple, pt, lift_tangent(pt))
    return float(simpson(vals, x=ts))
