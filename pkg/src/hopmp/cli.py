"""Batch experiment runner.

Loads a flat INI-style config, executes the requested verification suites
(triple validation, the two-sided homotopy identity, needle corrective
estimates, maximum-principle scans, classical cross-checks, the empirical
boundedness probe, the initial-velocity surjectivity probe), and writes a
deterministic text report plus plot-ready trajectory data.

Exit codes: 0 all checks pass, 1 a violation or refutation was found,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .controls import ConstantControl
from .dynamics import lipschitz_probe
from .errors import ConfigError, HopmpError, NoClosedForm
from .homotopy import (
    ControlHomotopy,
    build_surface,
    conservation_residual,
    homotopy_lhs,
    homotopy_rhs,
    minimal_labour_W,
    select_beta_range,
    uniform_s_grid,
    vertical_pairing,
    mu_prime_gap_direct,
)
from .needle import (
    NeedleSpec,
    corrective_term,
    default_eps_sequence,
    gpmp_verdict,
    mu_prime_gap_closed,
    needle_variation,
    pmp_scan,
    transversality_synthesize,
)
from .problem import validate_triple
from .problems import build, optimal_reference

SUITES = ("validate", "homotopy", "needle", "pmp-scan", "classical-cross",
          "lipschitz", "phi-probe")


@dataclass
class RunConfig:
    problem_id: str = "pendulum-r2"
    T: float = math.pi / 2
    v_max: float = 1.0
    a: Optional[list] = None
    u0: Optional[float] = None          # constant-control override
    jet_order: Optional[int] = None     # override the problem's jet order
    t_nodes: int = 400
    s_nodes: int = 64
    tau_points: int = 32
    omega_points: int = 17
    eps0: float = 0.1
    eps_count: int = 7
    needle_k: float = 0.05
    lipschitz_pairs: int = 100
    rtol: float = 1e-8
    atol: float = 1e-10
    suites: tuple = SUITES
    seed: int = 1234
    out: Path = Path("out")
    quiet: bool = False
    dump_mu_grid: bool = False

    @property
    def tol(self):
        return (self.rtol, self.atol)


def load_config(path: Path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = RunConfig()
    try:
        if parser.has_section("problem"):
            p = parser["problem"]
            cfg.problem_id = p.get("id", cfg.problem_id)
            cfg.T = p.getfloat("T", cfg.T)
            cfg.v_max = p.getfloat("v_max", cfg.v_max)
            if "a" in p:
                cfg.a = [float(x) for x in p["a"].split()]
            if "u0" in p:
                cfg.u0 = p.getfloat("u0")
            if "jet_order" in p:
                cfg.jet_order = p.getint("jet_order")
        if parser.has_section("grids"):
            g = parser["grids"]
            cfg.t_nodes = g.getint("t_nodes", cfg.t_nodes)
            cfg.s_nodes = g.getint("s_nodes", cfg.s_nodes)
            cfg.tau_points = g.getint("tau_points", cfg.tau_points)
            cfg.omega_points = g.getint("omega_points", cfg.omega_points)
            cfg.eps0 = g.getfloat("eps0", cfg.eps0)
            cfg.eps_count = g.getint("eps_count", cfg.eps_count)
            cfg.needle_k = g.getfloat("k", cfg.needle_k)
            cfg.lipschitz_pairs = g.getint("lipschitz_pairs", cfg.lipschitz_pairs)
        if parser.has_section("tolerances"):
            t = parser["tolerances"]
            cfg.rtol = t.getfloat("rtol", cfg.rtol)
            cfg.atol = t.getfloat("atol", cfg.atol)
        if parser.has_section("run"):
            r = parser["run"]
            if "suites" in r:
                cfg.suites = tuple(r["suites"].split())
            cfg.seed = r.getint("seed", cfg.seed)
            if "out" in r:
                cfg.out = Path(r["out"])
            cfg.dump_mu_grid = r.getboolean("mu_grid_dump", cfg.dump_mu_grid)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    unknown = set(cfg.suites) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown suites: {sorted(unknown)}")
    if cfg.t_nodes < 2 or cfg.s_nodes < 2 or cfg.tau_points < 1 \
            or cfg.omega_points < 1 or cfg.eps_count < 3:
        raise ConfigError("grids must be nonempty (and eps_count >= 3)")
    return cfg


@dataclass
class SuiteResult:
    name: str
    lines: list = dc_field(default_factory=list)
    violation: bool = False
    config_error: bool = False

    def check(self, label: str, ok: bool, detail: str = "") -> bool:
        status = "PASS" if ok else "FAIL"
        self.lines.append(f"  [{status}] {label}" + (f": {detail}" if detail else ""))
        if not ok:
            self.violation = True
        return ok

    def info(self, text: str) -> None:
        self.lines.append(f"  {text}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _build_problem(cfg: RunConfig):
    params = {"T": cfg.T}
    if cfg.problem_id in ("pendulum-r2", "pendulum-direct", "pendulum-classical"):
        params["v_max"] = cfg.v_max
    if cfg.problem_id == "mth-order":
        params = {"a": cfg.a or [1.0, 0.0, 1.0], "T": cfg.T}
    triple = build(cfg.problem_id, **params)
    if cfg.jet_order is not None:
        triple.jet_order = cfg.jet_order
    return triple, params


def _reference_pair(cfg: RunConfig, triple):
    """Reference control and initial data: the closed-form optimum when one
    exists, the box midpoint otherwise; the config may override u0."""
    if cfg.u0 is not None:
        u = ConstantControl([cfg.u0], triple.horizon)
        try:
            _, sigma, _ = optimal_reference(cfg.problem_id, T=cfg.T,
                                            v_max=cfg.v_max, a=cfg.a) \
                if cfg.problem_id == "mth-order" else \
                optimal_reference(cfg.problem_id, T=cfg.T, v_max=cfg.v_max)
        except (NoClosedForm, TypeError):
            sigma = triple.initial_data.make()
        return u, sigma, None
    try:
        if cfg.problem_id == "mth-order":
            u, sigma, cost = optimal_reference(cfg.problem_id, a=cfg.a or [1, 0, 1],
                                               T=cfg.T)
        else:
            u, sigma, cost = optimal_reference(cfg.problem_id, T=cfg.T,
                                               v_max=cfg.v_max)
        return u, sigma, cost
    except NoClosedForm:
        return (ConstantControl(triple.controls.midpoint(), triple.horizon),
                triple.initial_data.make(), None)


def _tau_range(cfg: RunConfig, triple):
    lo = cfg.eps0 + cfg.needle_k * cfg.eps0 ** 2 + 1e-3
    hi = triple.horizon - cfg.needle_k * cfg.eps0 ** 2 - 1e-3
    return np.linspace(lo, hi, cfg.tau_points)


def _suite_validate(cfg, triple, gamma0) -> SuiteResult:
    res = SuiteResult("validate")
    report = validate_triple(triple, seed=cfg.seed)
    for c in report.checks:
        res.check(c.name, c.passed, c.detail)
    res.config_error = not report.ok
    if report.ok:
        from .auxiliary import solve_h

        coeffs = solve_h(gamma0, triple)
        res.info(f"boundary matrix condition number: {_fmt(coeffs.cond)}")
    return res


def _suite_homotopy(cfg, triple, gamma0) -> SuiteResult:
    res = SuiteResult("homotopy")
    u0 = gamma0.control
    # deform toward the box corner farthest from the reference control
    mid = triple.controls.midpoint()
    u_mean = u0.value(0.5 * triple.horizon)
    corner = np.where(u_mean >= mid, triple.controls.lower, triple.controls.upper)
    top = ConstantControl(corner, triple.horizon)
    from .controls import BlendControl

    sigma0 = {name: gamma0.initial_state[off:off + m].copy()
              for name, off, m in zip(triple.dynamics.names,
                                      triple.dynamics.offsets,
                                      triple.dynamics.orders)}
    hom = ControlHomotopy(
        slice_curve=lambda s: u0 if s == 0.0 else BlendControl(u0, top, s),
        sigma_path=lambda s: sigma0,
        s_grid=uniform_s_grid(cfg.s_nodes),
        horizon=triple.horizon,
        du_ds=lambda t, s: top.value(t) - u0.value(
            t if t < triple.horizon else np.nextafter(triple.horizon, 0.0)),
    )
    surface = build_surface(triple, hom, tol=cfg.tol)

    selection = select_beta_range(surface, t_nodes=max(100, cfg.t_nodes // 2))
    res.info(f"contact-index convention selected by the identity: "
             f"{selection['selected']} "
             f"(gaps: full={_fmt(selection['gaps']['full'])}, "
             f"paper={_fmt(selection['gaps']['paper'])})")
    mode = selection["selected"]

    lhs = homotopy_lhs(surface)
    rhs = homotopy_rhs(surface, t_nodes=cfg.t_nodes, beta_range=mode)
    gap = abs(lhs - rhs)
    tol = 1e-3 * (abs(lhs) + 1.0)
    res.info(f"lhs={_fmt(lhs)} rhs={_fmt(rhs)}")
    res.check("terminal-cost identity", gap <= tol,
              f"gap={_fmt(gap)} tol={_fmt(tol)}")

    gap_coarse = abs(lhs - homotopy_rhs(surface, t_nodes=cfg.t_nodes // 2,
                                        beta_range=mode))
    res.info("grid convergence table (t-nodes, gap): "
             f"({cfg.t_nodes // 2}, {_fmt(gap_coarse)}) "
             f"({cfg.t_nodes}, {_fmt(gap)})")

    vmax = max(abs(vertical_pairing(surface, 0.0, k))
               for k in range(0, surface.n_slices, max(1, surface.n_slices // 8)))
    res.check("vertical side at t=0 vanishes", vmax <= 1e-8, f"max={_fmt(vmax)}")

    kmid = surface.n_slices // 2
    cres = conservation_residual(surface, kmid, t_nodes=cfg.t_nodes // 2,
                                 beta_range=mode)
    res.check("per-slice balance", abs(cres) <= 5e-4, f"residual={_fmt(cres)}")

    w1 = minimal_labour_W(surface, 1.0, t_nodes=cfg.t_nodes, beta_range=mode)
    res.check("labour functional endpoint", abs(w1 - (-lhs)) <= 2 * tol,
              f"W(1)={_fmt(w1)} C0-C1={_fmt(-lhs)}")

    if cfg.dump_mu_grid:
        _dump_mu_grid(cfg, surface, mode)
    return res


def _dump_mu_grid(cfg, surface, mode) -> None:
    from .homotopy import mu_prime

    path = Path(cfg.out) / "mu_prime_grid.csv"
    ts = np.linspace(0.0, surface.triple.horizon, 41)
    with open(path, "w") as fh:
        fh.write("t,s,mu_prime\n")
        for t in ts:
            for k, s in enumerate(surface.s_nodes):
                fh.write(f"{_fmt(t)},{_fmt(s)},{_fmt(mu_prime(surface, float(t), k, mode))}\n")


def _suite_needle(cfg, triple, gamma0) -> SuiteResult:
    res = SuiteResult("needle")
    T = triple.horizon
    tau = 0.45 * T
    omega = triple.controls.lower.copy()
    spec = NeedleSpec(tau=tau, omega=omega, eps0=cfg.eps0, k=cfg.needle_k)
    eps_seq = default_eps_sequence(cfg.eps0, cfg.eps_count)

    est = corrective_term(triple, gamma0, spec, eps_seq, tol=cfg.tol)
    res.info("corrective-term table (eps, estimate, boundary residual):")
    for e, v, g in zip(est.eps, est.estimates, est.goodn_residuals):
        res.info(f"    {_fmt(e)}  {_fmt(v)}  {_fmt(g)}")
    res.info(f"shrinking-limit proxy: {_fmt(est.liminf_proxy)}; "
             f"extrapolated: {_fmt(est.richardson) if est.richardson is not None else 'n/a'}; "
             f"trend consistent: {est.consistent}")

    v = gpmp_verdict(triple, gamma0, spec, eps_seq, tol=cfg.tol)
    res.check("pointwise inequality at the probe needle", v.satisfied,
              f"margin={_fmt(v.margin)} tol={_fmt(v.tolerance)} "
              f"boundary-sign test: {'pass' if v.goodn_all else 'fail'}")

    for eps in (eps_seq[0], eps_seq[len(eps_seq) // 2]):
        surface = needle_variation(triple, gamma0, spec, float(eps),
                                   s_intervals=8, tol=cfg.tol)
        closed = mu_prime_gap_closed(triple, surface)
        direct = mu_prime_gap_direct(surface, "full")
        # relative agreement, with an absolute floor for gaps that vanish
        # identically (both evaluations are then pure quadrature noise)
        ok = abs(closed - direct) <= 1e-4 * max(abs(closed), abs(direct)) + 1e-8
        res.check(f"two-method gap agreement at eps={_fmt(eps)}", ok,
                  f"closed={_fmt(closed)} direct={_fmt(direct)}")
    return res


def _suite_pmp_scan(cfg, triple, gamma0) -> SuiteResult:
    res = SuiteResult("pmp-scan")
    taus = _tau_range(cfg, triple)
    lo, hi = triple.controls.lower[0], triple.controls.upper[0]
    omegas = np.linspace(lo, hi, cfg.omega_points).reshape(-1, 1)
    report = pmp_scan(triple, gamma0, taus, omegas,
                      eps_sequence=default_eps_sequence(cfg.eps0, cfg.eps_count),
                      eps0=cfg.eps0, k=cfg.needle_k, tol=cfg.tol)
    res.info(report.note)
    res.info(f"grid: {len(taus)} tau x {len(omegas)} omega = {report.n_points} points")
    if report.empty:
        res.check("no violations on the scan grid", True)
    else:
        res.violation = True
        top = report.sorted_violations()[:10]
        res.lines.append(f"  [FAIL] {len(report.violations)} violations; worst:")
        for v in top:
            res.info(f"    tau={_fmt(v.tau)} omega={_fmt(v.omega[0])} "
                     f"margin={_fmt(v.margin)}")
    return res


def _suite_classical_cross(cfg, triple, gamma0) -> SuiteResult:
    from .classical import classical_chain_oracle, chain_reduction_problem, \
        classical_pmp_check
    from .problem import pontryagin_p
    from .needle import adjoint_branch

    res = SuiteResult("classical-cross")
    if len(triple.state_vars) != 1 or not triple.adjoint_vars:
        res.info("chain oracle needs a single state variable and an adjoint "
                 "variable; skipped")
        return res

    conds = transversality_synthesize(
        triple, jet_T=gamma0.jet(triple.horizon,
                                 2 * triple.lagrangian.actual_order - 1))
    name = triple.dynamics.names[triple.adjoint_vars[0]]
    vals = " ".join(_fmt(v) for v in conds.terminal_values[name])
    res.info(f"synthesized terminal adjoint jet ({name}): {vals}")
    if conds.paper_sign_note:
        res.info("NOTE: " + conds.paper_sign_note)
    res.check("annihilation residuals", float(np.max(conds.residuals)) < 1e-8,
              f"max={_fmt(float(np.max(conds.residuals)))}")

    taus = np.linspace(0.1, 0.9, 7) * triple.horizon
    omegas = triple.controls.grid(5)
    oracle = classical_chain_oracle(triple, gamma0, taus, omegas)
    branch = adjoint_branch(triple, gamma0, conds)
    agree = True
    r = triple.lagrangian.actual_order
    for row, tau in enumerate(taus):
        P = pontryagin_p(triple, branch.jet(float(tau), r))
        w_p, _ = P.argmax_on_grid(omegas)
        agree = agree and bool(np.max(np.abs(w_p - oracle[row])) < 1e-9)
    res.check("argmax agreement with the chain-reduction oracle", agree)

    cp = chain_reduction_problem(triple, gamma0)
    rep = classical_pmp_check(cp, gamma0.control, taus,
                              np.linspace(cp.controls.lower[0],
                                          cp.controls.upper[0], 9))
    if rep.empty:
        res.check("first-order check on the reference control", True)
    else:
        res.violation = True
        res.lines.append(f"  [FAIL] classical check found {len(rep.violations)} "
                         "violations")
    return res


def _suite_lipschitz(cfg, triple, gamma0) -> SuiteResult:
    res = SuiteResult("lipschitz")
    report = lipschitz_probe(triple, n_pairs=cfg.lipschitz_pairs, seed=cfg.seed)
    res.info(f"pairs={cfg.lipschitz_pairs} seed={cfg.seed} "
             f"skipped={report.n_skipped}")
    res.info(report.note)
    res.check("finite boundedness ratio",
              bool(np.isfinite(report.max_ratio)),
              f"max={_fmt(report.max_ratio)} mean={_fmt(report.mean_ratio)}")
    return res


def _suite_phi_probe(cfg, triple, gamma0) -> SuiteResult:
    from .classical import phi_surjectivity_probe
    from .errors import DegenerateHorizon
    from .problems import pendulum_direct

    res = SuiteResult("phi-probe")
    try:
        probe_triple = triple if triple.name == "pendulum-direct" \
            else pendulum_direct(T=cfg.T, v_max=cfg.v_max)
    except HopmpError as exc:
        res.info(f"probe problem rejected: {exc}")
        res.check("degenerate horizon rejected", True)
        return res
    try:
        report = phi_surjectivity_probe(probe_triple, np.linspace(-cfg.v_max,
                                                                  cfg.v_max, 9))
    except DegenerateHorizon as exc:
        res.info(f"degenerate horizon: {exc}")
        res.check("degenerate horizon rejected", True)
        return res
    res.check("slope equals sin(T)",
              abs(report.slope - report.expected_slope) <= 1e-9,
              f"slope={_fmt(report.slope)} expected={_fmt(report.expected_slope)}")
    res.check("affine residual", report.residual <= 1e-9,
              f"residual={_fmt(report.residual)}")
    return res


_SUITE_FUNCS = {
    "validate": _suite_validate,
    "homotopy": _suite_homotopy,
    "needle": _suite_needle,
    "pmp-scan": _suite_pmp_scan,
    "classical-cross": _suite_classical_cross,
    "lipschitz": _suite_lipschitz,
    "phi-probe": _suite_phi_probe,
}


def _write_trajectory_csv(cfg: RunConfig, triple, gamma0) -> Path:
    dyn = triple.dynamics
    state_cols, adjoint_cols = [], []
    for i, (name, off, m) in enumerate(zip(dyn.names, dyn.offsets, dyn.orders)):
        labels = [name] + [f"{name}_d{k}" for k in range(1, m)]
        cols = [(lab, off + k) for k, lab in enumerate(labels)]
        (adjoint_cols if i in triple.adjoint_vars else state_cols).extend(cols)

    path = Path(cfg.out) / "trajectory.csv"
    ts = np.linspace(0.0, triple.horizon, cfg.t_nodes + 1)
    with open(path, "w") as fh:
        header = ["t"] + [c[0] for c in state_cols] + [c[0] for c in adjoint_cols]
        header += [f"u{a+1}" for a in range(triple.controls.dim)]
        fh.write(",".join(header) + "\n")
        T = triple.horizon
        for t in ts:
            y = gamma0.state(float(t))
            tu = t if t < T else np.nextafter(T, 0.0)
            u = gamma0.control.value(float(tu))
            row = [_fmt(t)]
            row += [_fmt(y[idx]) for _, idx in state_cols]
            row += [_fmt(y[idx]) for _, idx in adjoint_cols]
            row += [_fmt(v) for v in u]
            fh.write(",".join(row) + "\n")
    return path


def run(cfg: RunConfig) -> int:
    """Execute the configured suites; write report and data files."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    lines = [f"hopmp verification report (v{__version__})"]
    lines.append("generated: " + datetime.now(timezone.utc).isoformat())
    lines.append("")
    lines.append("[config]")
    for key in ("problem_id", "T", "v_max", "a", "u0", "t_nodes", "s_nodes",
                "tau_points", "omega_points", "eps0", "eps_count", "needle_k",
                "lipschitz_pairs", "rtol", "atol", "seed"):
        lines.append(f"  {key} = {getattr(cfg, key)}")
    lines.append(f"  suites = {' '.join(cfg.suites)}")
    lines.append("")

    exit_code = 0
    try:
        triple, params = _build_problem(cfg)
        u0, sigma0, ref_cost = _reference_pair(cfg, triple)
        gamma0 = triple.controlled_curve(u0, sigma0, tol=cfg.tol)
        if ref_cost is not None:
            achieved = triple.terminal_cost(gamma0)
            lines.append(f"reference cost: analytic={_fmt(ref_cost)} "
                         f"integrated={_fmt(achieved)}")
            lines.append("")
        csv_path = _write_trajectory_csv(cfg, triple, gamma0)

        for name in cfg.suites:
            result = _SUITE_FUNCS[name](cfg, triple, gamma0)
            lines.append(f"[{name}]")
            lines.extend(result.lines)
            lines.append("")
            if result.config_error:
                exit_code = max(exit_code, 2)
            elif result.violation:
                exit_code = max(exit_code, 1)
        lines.append(f"trajectory data: {csv_path.name}")
    except ConfigError as exc:
        lines.append(f"CONFIG ERROR: {exc}")
        exit_code = 2
    except HopmpError as exc:
        from .errors import BadParams

        if isinstance(exc, BadParams):
            lines.append(f"CONFIG ERROR: {exc}")
            exit_code = 2
        else:
            lines.append(f"NUMERICAL FAILURE: {type(exc).__name__}: {exc}")
            exit_code = 3

    lines.append(f"exit code: {exit_code}")
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report)
    if not cfg.quiet:
        sys.stdout.write(report)
    return exit_code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="hopmp",
        description="Run maximum-principle verification suites on a control "
                    "problem described by a config file.")
    ap.add_argument("--config", type=Path, default=None,
                    help="INI config file (defaults apply when omitted)")
    ap.add_argument("--suite", action="append", default=None,
                    help="suite name, repeatable; overrides the config")
    ap.add_argument("--out", type=Path, default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)

    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    if args.suite:
        bad = set(args.suite) - set(SUITES)
        if bad:
            sys.stderr.write(f"config error: unknown suites {sorted(bad)}\n")
            return 2
        cfg.suites = tuple(args.suite)
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.quiet:
        cfg.quiet = True
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
