"""Defining triples: control sets, controlled Lagrangians, costs, initial data.

A defining triple bundles a box control set, a controlled Lagrangian of
actual order ``r``, an extended terminal cost (vanishing identically on jets
at ``t = 0``), a normal-form realization of the constraint system, and the
admissible initial data.  The constraint audit, the Euler-Lagrange residual
and the pointwise maximization function ``P(u) = -L(jet, u)`` live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .controls import ControlCurve
from .dynamics import NormalFormDynamics, Trajectory, control_measure_diff, integrate
from .errors import ConstraintViolation, InsufficientJetOrder
from .jetspace import (
    DerivedField,
    JetPoint,
    ScalarJetField,
    audit_actual_order,
    iterated_total_derivative,
)


@dataclass(frozen=True)
class ControlSet:
    """Box control set K = prod [lower_a, upper_a] with inflation margin."""

    lower: np.ndarray
    upper: np.ndarray
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))
        if np.any(self.lower > self.upper):
            raise ValueError("control box needs lower <= upper componentwise")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, u, inflated: bool = False, tol: float = 1e-12) -> bool:
        pad = (self.margin if inflated else 0.0) + tol
        v = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(v >= self.lower - pad) and np.all(v <= self.upper + pad))

    def grid(self, count: int) -> np.ndarray:
        """Tensor grid over the box, flattened to rows (count^M kept small)."""
        axes = [np.linspace(lo, hi, count) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


class _PartialField:
    """The partial of a field along one coordinate, as a field itself.

    Evaluation delegates to the base field's (analytic or finite-difference)
    partial, keeping the full control-derivative stack intact.
    """

    __slots__ = ("base", "direction", "actual_order", "u_depth", "name")

    def __init__(self, base, direction, name: str = "") -> None:
        self.base = base
        self.direction = direction
        self.actual_order = base.actual_order
        self.u_depth = getattr(base, "u_depth", 0)
        self.name = name or f"d({getattr(base, 'name', 'f')})/d{direction}"

    def read_depth(self, j: int) -> int:
        return self.base.read_depth(j) if hasattr(self.base, "read_depth") \
            else self.base.actual_order

    def value_uj(self, p: JetPoint, ujet: np.ndarray) -> float:
        return self.base.partial_uj(p, ujet, self.direction)

    def value(self, p: JetPoint, u) -> float:
        from .jetspace import _as_ujet

        return self.value_uj(p, _as_ujet(u, self.u_depth))

    def partial_uj(self, p, ujet, direction, step=None):
        from .jetspace import finite_diff_partial

        return finite_diff_partial(self, p, ujet, direction, step)

    def partial(self, p, u, direction, step=None):
        from .jetspace import finite_diff_partial

        return finite_diff_partial(self, p, u, direction, step)


def _generic_partial_field(f, direction, name: str = ""):
    return _PartialField(f, direction, name)


@dataclass(frozen=True)
class ControlledLagrangian:
    """Lagrangian over (jet, control) of declared actual order ``r >= 1``.

    ``momentum_fields`` optionally supplies analytic fields for the partial
    derivatives with respect to the jet blocks ``q^i_(delta)``; anything
    missing is built from the Lagrangian's own partials.
    """

    field: ScalarJetField
    actual_order: int
    state_dim: int
    momentum_fields: Optional[Mapping] = None

    def partial_field(self, i: int, delta: int):
        if self.momentum_fields is not None and (i, delta) in self.momentum_fields:
            return self.momentum_fields[(i, delta)]
        return _generic_partial_field(self.field, ("q", i, delta))

    def value(self, p: JetPoint, u) -> float:
        return self.field.value(p, u)

    def du(self, p: JetPoint, u, a: int = 0) -> float:
        return self.field.partial(p, u, ("u", a))


@dataclass(frozen=True)
class CostFunction:
    """Extended terminal cost: a jet field with no control dependence that
    vanishes identically on jets at t = 0."""

    field: ScalarJetField
    actual_order: int

    def value(self, p: JetPoint) -> float:
        return self.field.value(p, np.zeros(1))

    def partial(self, p: JetPoint, direction) -> float:
        return self.field.partial(p, np.zeros(1), direction)

    def rate_field(self):
        """Total derivative dC/dt as a field (control independent)."""
        return DerivedField(self.field)

    def vanishes_at_zero(self, dim: int, order: int, rng, trials: int = 16,
                         scale: float = 2.0, tol: float = 1e-10) -> bool:
        for _ in range(trials):
            blocks = rng.normal(scale=scale, size=(order + 1, dim))
            if abs(self.value(JetPoint(0.0, blocks))) > tol:
                return False
        return True


@dataclass
class FreeParam:
    """One free scalar of the initial data: variable name, derivative index, range."""

    label: str
    var: str
    index: int
    lower: float
    upper: float


@dataclass
class InitialData:
    """Admissible initial jets: a base point plus boxed free parameters."""

    base: Mapping[str, Sequence[float]]
    free: Sequence[FreeParam] = ()
    predicate: Optional[Callable[[np.ndarray], bool]] = None

    def make(self, **params) -> dict:
        sigma = {k: np.array(v, dtype=float).copy() for k, v in self.base.items()}
        for p in self.free:
            if p.label in params:
                val = float(params[p.label])
                if val < p.lower - 1e-12 or val > p.upper + 1e-12:
                    raise ConstraintViolation(
                        f"{p.label}={val} outside [{p.lower}, {p.upper}]"
                    )
                sigma[p.var][p.index] = val
        return sigma

    def sample(self, rng) -> dict:
        params = {p.label: rng.uniform(p.lower, p.upper) for p in self.free}
        return self.make(**params)

    def admissible(self, state: np.ndarray) -> bool:
        if self.predicate is None:
            return True
        return bool(self.predicate(np.asarray(state, dtype=float)))


@dataclass
class DefiningTriple:
    """A generalized terminal-cost problem: controls, Lagrangian, cost,
    normal-form dynamics, admissible initial data, horizon and jet order."""

    controls: ControlSet
    lagrangian: ControlledLagrangian
    cost: CostFunction
    dynamics: NormalFormDynamics
    initial_data: InitialData
    horizon: float
    jet_order: int
    name: str = ""
    # variable split used by transversality synthesis (indices into dynamics.names)
    state_vars: tuple[int, ...] = ()
    adjoint_vars: tuple[int, ...] = ()

    def var_index(self, name: str) -> int:
        return self.dynamics.names.index(name)

    @property
    def order(self) -> int:
        return self.lagrangian.actual_order

    def controlled_curve(self, u: ControlCurve, sigma=None,
                         tol: tuple[float, float] = (1e-8, 1e-10),
                         method: str = "RK45") -> Trajectory:
        """Integrate the unique solution for (u, sigma)."""
        if sigma is None:
            sigma = self.initial_data.make()
        y0 = self.dynamics.pack_state(sigma)
        if not self.initial_data.admissible(y0):
            raise ConstraintViolation("sigma rejected by the initial-data constraint")
        return integrate(self.dynamics, u, y0, self.horizon, tol=tol, method=method)

    def terminal_cost(self, traj: Trajectory) -> float:
        return self.cost.value(traj.terminal_jet(max(self.cost.actual_order, 1)))


def _field_depth(fld, dim: int) -> int:
    if hasattr(fld, "read_depth"):
        depths = [fld.read_depth(j) for j in range(dim)]
        depths = [d for d in depths if d >= 0]
        return max(depths) if depths else 0
    return fld.actual_order


def el_residual(triple: DefiningTriple, traj, u: ControlCurve, t: float) -> np.ndarray:
    """Controlled Euler-Lagrange residual E_i(L) along a curve at time ``t``.

    E_i(L) = dL/dq^i + sum_{beta=1..r} (-1)^beta (d/dt)^beta (dL/dq^i_(beta)),
    with iterated total derivatives chained through the curve's control.
    The requested jet depth follows what the momentum fields actually read
    (at most 2r).
    """
    L = triple.lagrangian
    r = L.actual_order
    N = L.state_dim
    depth = max(
        [_field_depth(L.partial_field(i, 0), N) for i in range(N)]
        + [_field_depth(L.partial_field(i, b), N) + b
           for i in range(N) for b in range(1, r + 1)]
    )
    depth = min(max(depth, r), 2 * r)
    jet = traj.jet(t, depth) if hasattr(traj, "jet") else traj
    if jet.n < depth:
        raise InsufficientJetOrder(f"need jets of order {depth}, got {jet.n}")
    ujet = u.jet(t, r + 1)
    out = np.zeros(N)
    for i in range(N):
        f0 = L.partial_field(i, 0)
        out[i] = f0.value_uj(jet, ujet)
        for beta in range(1, r + 1):
            fb = iterated_total_derivative(L.partial_field(i, beta), beta)
            out[i] += (-1) ** beta * fb.value_uj(jet, _pad(ujet, fb.u_depth))
    return out


def _pad(ujet: np.ndarray, depth: int) -> np.ndarray:
    if ujet.shape[0] >= depth + 1:
        return ujet
    return np.vstack([ujet, np.zeros((depth + 1 - ujet.shape[0], ujet.shape[1]))])


def momentum_sums(fields_for, jet: JetPoint, ujet: np.ndarray, dim: int, r: int) -> np.ndarray:
    """Boundary momentum sums M[i, beta] grouped by contact index.

    M[i, beta] = sum_{delta=beta+1..r} (-1)^(delta-beta-1)
                 (d/dt)^(delta-beta-1) (dF/dq^i_(delta))
    for the field family ``fields_for(i, delta)``.
    """
    out = np.zeros((dim, r))
    for i in range(dim):
        for beta in range(r):
            acc = 0.0
            for delta in range(beta + 1, r + 1):
                eps = delta - beta - 1
                fld = fields_for(i, delta)
                if eps:
                    fld = iterated_total_derivative(fld, eps)
                acc += (-1) ** eps * fld.value_uj(jet, _pad(ujet, getattr(fld, "u_depth", 0)))
            out[i, beta] = acc
    return out


def lagrangian_momenta(triple: DefiningTriple, jet: JetPoint, ujet: np.ndarray) -> np.ndarray:
    """Momentum sums of L alone (used at t = 0 and in needle boundary terms)."""
    L = triple.lagrangian
    return momentum_sums(L.partial_field, jet, ujet, L.state_dim, L.actual_order)


def full_momenta(triple: DefiningTriple, jet: JetPoint, ujet: np.ndarray) -> np.ndarray:
    """Momentum sums of L + dC/dt (used at t = T)."""
    L = triple.lagrangian
    rate = triple.cost.rate_field()

    def cost_part(i, delta):
        return _generic_partial_field(rate, ("q", i, delta))

    base = momentum_sums(L.partial_field, jet, ujet, L.state_dim, L.actual_order)
    extra = momentum_sums(cost_part, jet, ujet, L.state_dim, L.actual_order)
    return base + extra


class PontryaginFunction:
    """The pointwise maximization function P(u) = -L(jet, u) on K."""

    def __init__(self, lagrangian: ControlledLagrangian, jet: JetPoint) -> None:
        self._L = lagrangian
        self.jet = jet

    def __call__(self, u) -> float:
        return -self._L.value(self.jet, u)

    def du(self, u, a: int = 0) -> float:
        return -self._L.du(self.jet, u, a)

    def argmax_on_grid(self, grid: np.ndarray) -> tuple[np.ndarray, float]:
        vals = np.array([self(u) for u in np.atleast_2d(grid)])
        k = int(np.argmax(vals))
        return np.atleast_2d(grid)[k], float(vals[k])


def pontryagin_p(triple: DefiningTriple, jet: JetPoint) -> PontryaginFunction:
    if jet.n < triple.lagrangian.actual_order:
        raise InsufficientJetOrder("jet too shallow for the Lagrangian")
    return PontryaginFunction(triple.lagrangian, jet)


def control_distance(u1: ControlCurve, u2: ControlCurve,
                     grid: int | None = None) -> float:
    """Measure of the set where two control curves differ (grid estimate)."""
    if abs(u1.horizon - u2.horizon) > 1e-12:
        raise ValueError("control curves must share the horizon")
    return control_measure_diff(u1, u2, u1.horizon, grid=grid)


@dataclass
class ValidationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[ValidationCheck] = dc_field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(ValidationCheck(name, bool(passed), detail))

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'}  {c.name}"
                + (f"  [{c.detail}]" if c.detail else "")
                for c in self.checks]


def validate_triple(triple: DefiningTriple, seed: int = 0,
                    residual_tol: float = 1e-6) -> ValidationReport:
    """Diagnostics: order inequality, cost vanishing at t = 0, actual-order
    audits, dynamics consistency (EL residual on a probe trajectory), box
    sanity.  Failures are reported, not raised."""
    rng = np.random.default_rng(seed)
    rep = ValidationReport()
    r = triple.lagrangian.actual_order
    n = triple.jet_order
    N = triple.lagrangian.state_dim

    rep.add("order inequality 2r+1 <= n", 2 * r + 1 <= n, f"r={r}, n={n}")

    rep.add(
        "cost vanishes on jets at t=0",
        triple.cost.vanishes_at_zero(N, min(n, triple.cost.actual_order + 1), rng),
    )

    probe = JetPoint(0.3 * triple.horizon, rng.normal(size=(n + 1, N)))
    u_mid = triple.controls.midpoint()
    rep.add(
        "Lagrangian actual-order audit",
        audit_actual_order(triple.lagrangian.field, probe, u_mid, rng),
        f"declared r={r}",
    )
    rep.add(
        "cost actual-order audit",
        audit_actual_order(triple.cost.field, probe, np.zeros(1), rng),
        f"declared {triple.cost.actual_order}",
    )

    box_ok = bool(np.all(triple.controls.lower <= triple.controls.upper))
    rep.add("control box sanity", box_ok and triple.controls.margin >= 0.0)

    try:
        from .controls import ConstantControl

        u = ConstantControl(u_mid, triple.horizon)
        traj = triple.controlled_curve(u)
        ts = np.linspace(0.12 * triple.horizon, 0.93 * triple.horizon, 5)
        worst = max(float(np.max(np.abs(el_residual(triple, traj, u, t)))) for t in ts)
        scale = 1.0 + float(np.max(np.abs(traj.states)))
        rep.add(
            "dynamics realizes the Euler-Lagrange constraints",
            worst <= residual_tol * scale,
            f"max residual {worst:.3e}",
        )
    except Exception as exc:  # report, never raise
        rep.add("dynamics realizes the Euler-Lagrange constraints", False, repr(exc))

    return rep
