"""``agebif`` command line: eigen, semitrivial, bifpoints, continue, diagram, verify."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bifurcate import (
    NotFound,
    continue_branch,
    estimate_limits,
    eta0,
    eta1,
    kernel_basis_eta,
    kernel_basis_predator,
    kernel_basis_xi,
    xi0,
    xi1,
)
from .birthop import SpectralConditionError, spectral_radius
from .config import ConfigError, ScenarioConfig, load_config
from .evolve import SubstepLimitError
from .outputs import BRANCH_HEADER, write_csv, write_json
from .spatial import ConvergenceError, DiscretizationError, closed_form_lambda1
from .steady import predator_state, prey_state
from .verify import verify_suite

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
SOLVER_ERRORS = (ConvergenceError, SubstepLimitError, SpectralConditionError)

log = logging.getLogger("agebif")


class PartialOutput(RuntimeError):
    """A solver failed after some files were written."""


def _map(fn, items, parallel: bool):
    if parallel and len(items) > 1:
        with ProcessPoolExecutor() as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# -- commands ---------------------------------------------------------------


def _csv(cfg: ScenarioConfig, path: Path, header, rows) -> None:
    if "csv" in cfg.output.formats:
        write_csv(path, header, rows)


def _json(cfg: ScenarioConfig, path: Path, obj) -> None:
    if "json" in cfg.output.formats:
        write_json(path, obj)


def cmd_eigen(cfg: ScenarioConfig, out: Path, args) -> int:
    model = cfg.build()
    g = model.grids
    exact = closed_form_lambda1(g.space)
    summary = {
        "lambda1": g.lambda1,
        "lambda1_closed_form": exact,
        "relative_error": abs(g.lambda1 - exact) / exact,
        "eigen_residual": g.spectral.residual,
        "iterations": g.spectral.iterations,
        "radius_prey": spectral_radius(0.0, model.prey, g).radius,
        "radius_predator": spectral_radius(0.0, model.predator, g).radius,
        "profile_scale_prey": model.prey.scale,
        "profile_scale_predator": model.predator.scale,
    }
    _json(cfg, out / "eigen.json", summary)
    return EXIT_OK


def _semitrivial_row(job):
    cfg, species, param = job
    model = cfg.build()
    sol = prey_state(model, param) if species == "prey" else predator_state(model, param)
    if not sol:
        return (param, 0.0, 0.0, 0.0, float("nan"), float("nan"), "trivial")
    return (param, sol.sup, model.grids.l2_norm(sol.field), float(np.max(sol.trace)), sol.consistency, sol.newton_residual, "positive")


def cmd_semitrivial(cfg: ScenarioConfig, out: Path, args) -> int:
    header = ("param", "sup", "l2", "trace_sup", "consistency", "newton_residual", "status")
    for species, params in (("prey", cfg.run.eta), ("predator", cfg.run.xi)):
        rows = _map(_semitrivial_row, [(cfg, species, p) for p in sorted(params)], args.parallel)
        _csv(cfg, out / f"semitrivial_{species}.csv", header, rows)
    return EXIT_OK


def _point(kind, fn, *fargs):
    try:
        pt = fn(*fargs)
    except NotFound as exc:
        return {"kind": kind, "fixed": fargs[1], "status": "NotFound", "detail": str(exc)}
    return {"kind": kind, "fixed": pt.fixed, "status": "found", "value": pt.value, "spectral_residual": pt.spectral_residual}


def _bifpoint_job(job):
    cfg, kind, param = job
    model = cfg.build()
    if kind == "xi0":
        return _point(kind, xi0, model, param)
    if kind == "xi1":
        return _point(kind, xi1, model, param, cfg.run.xi_max)
    if kind == "eta0":
        return _point(kind, eta0, model, param)
    return _point(kind, eta1, model, param, cfg.run.eta_max)


def cmd_bifpoints(cfg: ScenarioConfig, out: Path, args) -> int:
    etas = sorted(e for e in cfg.run.eta if e > 1.0)
    xis = sorted(x for x in cfg.run.xi if x > 1.0)
    small = sorted(x for x in set(cfg.run.xi) | set(cfg.run.s4_xi) if 0.0 < x < 1.0)
    jobs = [(cfg, "xi0", e) for e in etas] + [(cfg, "xi1", e) for e in etas]
    jobs += [(cfg, "eta0", x) for x in xis] + [(cfg, "eta1", x) for x in small]
    points = _map(_bifpoint_job, jobs, args.parallel)
    summary = {kind: [p for p in points if p["kind"] == kind] for kind in ("xi0", "xi1", "eta0", "eta1")}
    lim = estimate_limits(cfg.build(), cfg.run.eta_max, cfg.run.xi_max)
    summary["n_lower"] = lim.n_lower
    summary["delta_upper"] = lim.delta_upper
    summary["limits_evaluated_at"] = {"eta_max": lim.eta_max, "xi_max": lim.xi_max}
    summary["trend"] = [{"param": p, "eta0": a, "xi0": b} for p, a, b in lim.table]
    _json(cfg, out / "bifpoints.json", summary)
    return EXIT_OK


def _branch_job(job):
    cfg, kind, fixed = job
    model = cfg.build()
    if kind == "B3_in_xi":
        basis, limit = kernel_basis_xi(model, fixed), cfg.run.xi_limit
    elif kind == "S3_in_eta":
        basis, limit = kernel_basis_predator(model, fixed), cfg.run.eta_limit
    else:
        basis, limit = kernel_basis_eta(model, fixed, cfg.run.eta_max), cfg.run.eta_limit
    br = continue_branch(model, kind, basis, cfg.run.step0, limit, cfg.run.point_cap)
    rows = [(p.param, p.sup_u, p.sup_v, p.l2_u, p.l2_v, p.residual, br.termination) for p in br.points]
    return kind, fixed, rows, br.termination, br.join_param


def _branch_name(kind: str, fixed: float) -> str:
    tag = "eta" if kind == "B3_in_xi" else "xi"
    return f"branch_{kind}_{tag}{fixed:g}.csv"


def cmd_continue(cfg: ScenarioConfig, out: Path, args) -> int:
    jobs = [(cfg, "B3_in_xi", e) for e in sorted(cfg.run.eta) if e > 1.0]
    jobs += [(cfg, "S3_in_eta", x) for x in sorted(cfg.run.xi) if x > 1.0]
    jobs += [(cfg, "S4_in_eta", x) for x in sorted(cfg.run.s4_xi) if 0.0 < x < 1.0]
    summary = []
    for kind, fixed, rows, term, join in _map(_branch_job, jobs, args.parallel):
        _csv(cfg, out / _branch_name(kind, fixed), BRANCH_HEADER, rows)
        summary.append({"kind": kind, "fixed": fixed, "points": len(rows), "termination": term, "join_param": join})
    _json(cfg, out / "branches.json", summary)
    return EXIT_OK


def cmd_diagram(cfg: ScenarioConfig, out: Path, args) -> int:
    done = []
    try:
        for step in (cmd_bifpoints, cmd_continue, cmd_semitrivial):
            step(cfg, out, args)
            done.append(step.__name__[4:])
    except SOLVER_ERRORS as exc:
        _json(cfg, out / "status.json", {"partial": True, "completed": done, "error": str(exc)})
        raise PartialOutput(str(exc)) from exc
    _json(cfg, out / "status.json", {"partial": False, "completed": done, "error": None})
    return EXIT_OK


def cmd_verify(cfg: ScenarioConfig, out: Path, args) -> int:
    report = verify_suite(cfg, seed=args.seed, parallel=args.parallel)
    _json(cfg, out / "report.json", report.to_dict())
    for rec in report.records:
        mark = "PASS" if rec.passed else "FAIL"
        print(f"{mark} {rec.name}: {rec.value:.6g} (tol {rec.tolerance:.3g}) {rec.detail}".rstrip())
    print(f"total {report.timings['total']:.1f} s, {len(report.failures)} failure(s)")
    return EXIT_OK if report.passed else EXIT_VERIFY


COMMANDS = {
    "eigen": cmd_eigen,
    "semitrivial": cmd_semitrivial,
    "bifpoints": cmd_bifpoints,
    "continue": cmd_continue,
    "diagram": cmd_diagram,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agebif", description=__doc__)
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML scenario file")
    parser.add_argument("--out", help="output directory (overrides [output].directory)")
    parser.add_argument("--parallel", action="store_true", help="run independent parameter points in worker processes")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized property trials")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output.directory)
    try:
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, DiscretizationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PartialOutput, NotFound, *SOLVER_ERRORS) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
