"""Command line driver: ``mvperiodic run config.toml`` / ``mvperiodic validate config.toml``.

Exit status: 0 success, 1 configuration error, 2 particle blowup,
3 failed verdict (no certification, no convergence, unexpected check result).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import rng as _rng
from .config import ConfigError, RunConfig, load_config
from .dynamics import ConditionConstants
from .lyapunov import SamplePlan, builtin_lyapunov, check_condition
from .measures import EmpiricalMeasure, GaussianLaw, dirac
from .oracles import ou_stationary, variance_drift_law
from .particle_sim import BlowupError, propagate, simulate
from .periodic_finder import find_stationary, picard_iterate, verify_periodic

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERDICT = 0, 1, 2, 3

log = logging.getLogger("mvperiodic")


@dataclass
class Outcome:
    code: int
    summary: list[str]


def _task_simulate(cfg: RunConfig, out: Path, base: Path) -> Outcome:
    task = cfg.task
    model = cfg.build_model()
    report = simulate(model, cfg.initial_measure(base), task.t_end, cfg.sim_config(), r=task.r, vartheta=task.vartheta)
    report.save(out / "simulation")
    final_t, m_v, m_r = report.moment_track[-1]
    lines = [
        f"reached t={final_t:g} of {task.t_end:g}",
        f"final moments: vartheta={report.vartheta:g}: {m_v:.6g}, r={report.r:g}: {m_r:.6g}",
        f"time average of r-moment: {report.time_average('r'):.6g}",
    ]
    if report.blowup_flag:
        return Outcome(EXIT_BLOWUP, [f"verdict: FAIL (blowup: {report.blowup})"] + lines)
    return Outcome(EXIT_OK, ["verdict: PASS (simulation completed)"] + lines)


def _fixed_point_lines(rep) -> list[str]:
    fm = rep.final_measure
    var = fm.variance
    return [
        f"iterations: {rep.n_iterations}, converged: {rep.converged}",
        f"last residual: {rep.residual:.6g}, noise floor: {rep.noise_floor:.6g}, tol: {rep.tolerance:g}",
        f"final mean: {np.array2string(fm.mean, precision=6)}",
        f"final variance: {var:.6f}",
    ]


def _task_find_periodic(cfg: RunConfig, out: Path, base: Path) -> Outcome:
    task = cfg.task
    model = cfg.build_model()
    sim = cfg.sim_config()
    rep = picard_iterate(model, cfg.initial_measure(base), task.k_max, task.tol, sim, task.vartheta,
                         consecutive=task.consecutive)
    rep.save(out / "fixed_point")
    lines = _fixed_point_lines(rep)
    if rep.blowup:
        return Outcome(EXIT_BLOWUP, [f"verdict: FAIL (blowup: {rep.blowup})"] + lines)
    if not rep.converged:
        return Outcome(EXIT_VERDICT, ["verdict: FAIL (Picard iteration did not converge)"] + lines)
    if task.verify:
        cert = verify_periodic(rep.final_measure, model, sim, task.vartheta, task.n_periods, factor=task.factor)
        cert.save(out / "certification")
        lines.append(f"certification: one-period residual {cert.one_period_residual:.6g}, "
                     f"max marginal residual {cert.max_marginal_residual:.6g}, "
                     f"threshold {cert.factor * cert.noise_floor:.6g}")
        if cert.blowup:
            return Outcome(EXIT_BLOWUP, [f"verdict: FAIL (blowup during certification: {cert.blowup})"] + lines)
        if not cert.certified:
            return Outcome(EXIT_VERDICT, ["verdict: FAIL (candidate not certified)"] + lines)
    return Outcome(EXIT_OK, ["verdict: PASS (periodic measure found)"] + lines)


def _task_find_stationary(cfg: RunConfig, out: Path, base: Path) -> Outcome:
    task = cfg.task
    model = cfg.build_model()
    if not model.time_homogeneous:
        raise ConfigError("task: find-stationary needs a time-homogeneous model")
    rep = find_stationary(model, cfg.initial_measure(base), task.k_max, task.tol, cfg.sim_config(),
                          task.vartheta, probe_period=task.probe_period)
    rep.save(out / "fixed_point")
    lines = _fixed_point_lines(rep)
    if rep.blowup:
        return Outcome(EXIT_BLOWUP, [f"verdict: FAIL (blowup: {rep.blowup})"] + lines)
    if not rep.converged:
        return Outcome(EXIT_VERDICT, ["verdict: FAIL (no stationary measure found)"] + lines)
    return Outcome(EXIT_OK, ["verdict: PASS (stationary measure found)"] + lines)


def _task_verify(cfg: RunConfig, out: Path, base: Path) -> Outcome:
    task = cfg.task
    path = Path(task.candidate)
    if not path.is_absolute():
        path = base / path
    try:
        cand = EmpiricalMeasure.from_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"task.candidate: {exc}") from None
    cert = verify_periodic(cand, cfg.build_model(), cfg.sim_config(), task.vartheta, task.n_periods, factor=task.factor)
    cert.save(out)
    lines = [
        f"one-period residual: {cert.one_period_residual:.6g}",
        f"max marginal residual: {cert.max_marginal_residual:.6g}",
        f"threshold: {cert.factor * cert.noise_floor:.6g} ({cert.factor:g} x noise floor)",
        f"note: {cert.reduction}",
    ]
    if cert.blowup:
        return Outcome(EXIT_BLOWUP, [f"verdict: FAIL (blowup: {cert.blowup})"] + lines)
    if not cert.certified:
        return Outcome(EXIT_VERDICT, ["verdict: FAIL (not certified)"] + lines)
    return Outcome(EXIT_OK, ["verdict: PASS (certified periodic up to sampling noise)"] + lines)


def _task_check_lyapunov(cfg: RunConfig, out: Path, base: Path) -> Outcome:
    task = cfg.task
    model = cfg.build_model()
    try:
        V = builtin_lyapunov(task.lyapunov, q=task.q, C_sigma=task.C_sigma)
    except ValueError as exc:
        raise ConfigError(f"task.lyapunov: {exc}") from None
    plan = SamplePlan.build(
        model.dimension, model.period, r_max=task.r_max, n_t=task.n_t, n_radii=task.n_radii,
        n_directions=task.n_directions, n_mu=task.n_mu, seed=_rng.derive_seed(cfg.sim.seed, "plan"),
    )
    (out / "lyapunov").mkdir(parents=True, exist_ok=True)
    rows = []
    all_ok = True
    for i, chk in enumerate(task.checks):
        try:
            constants = ConditionConstants(**chk.constants)
            rep = check_condition(V, model, chk.condition, constants, plan)
        except ValueError as exc:
            raise ConfigError(f"task.checks.{i}: {exc}") from None
        rep.save(out / "lyapunov" / f"{i:02d}_{chk.condition}.json")
        result = "pass" if rep.passed else "fail"
        ok = result == chk.expect
        all_ok &= ok
        rows.append((i, chk.condition, chk.expect, result, rep.n_violations, rep.n_checked, ok))
    with open(out / "lyapunov" / "checks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "condition", "expect", "result", "violations", "n_checked", "as_expected"])
        w.writerows(rows)
    table = [f"{'condition':<10}{'expect':<8}{'result':<8}{'violations':>11}"]
    table += [f"{c:<10}{e:<8}{r:<8}{v:>11}" for _, c, e, r, v, _, _ in rows]
    print("\n".join(table))
    head = "verdict: PASS (all checks as expected)" if all_ok else "verdict: FAIL (some checks not as expected)"
    lines = [head, f"Lyapunov function: {V.name}; plan: {plan.n_triples} (t, x, mu) triples, r_max={plan.r_max:g}"]
    lines += table
    return Outcome(EXIT_OK if all_ok else EXIT_VERDICT, lines)


def _task_oracle_compare(cfg: RunConfig, out: Path, base: Path) -> Outcome:
    task = cfg.task
    model = cfg.build_model()
    sim = cfg.sim_config()
    name = cfg.model.name
    if name == "variance_drift":
        law = variance_drift_law(task.x0 if task.start == "dirac" else "standard_normal", task.t)
    elif name == "ou":
        if model.dimension != 1:
            raise ConfigError("model.dimension: oracle-compare is one-dimensional")
        law = ou_stationary(cfg.model.kappa, cfg.model.sigma)
    else:
        raise ConfigError(f"model.name: no closed-form oracle for {name!r}")
    if task.start == "dirac":
        init = dirac([task.x0])
    else:
        init = GaussianLaw(0.0, 1.0).sample(sim.n_particles, _rng.derive_seed(sim.seed, "init-sample"))
    cloud = propagate(init, 0.0, task.t, model, sim)
    cloud.to_csv(out / "final_cloud.csv")
    mean, var = float(cloud.mean[0]), cloud.variance
    ok_m = abs(mean - law.mean) <= task.mean_tol
    ok_v = abs(var - law.variance) <= task.var_tol
    with open(out / "oracle.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "simulated", "oracle", "tolerance", "pass"])
        w.writerow(["mean", repr(mean), repr(law.mean), repr(task.mean_tol), ok_m])
        w.writerow(["variance", repr(var), repr(law.variance), repr(task.var_tol), ok_v])
    lines = [
        f"oracle law at t={task.t:g}: {law}",
        f"simulated (mean, var) = ({mean:.6f}, {var:.6f}) vs ({law.mean:g}, {law.variance:g})",
        f"mean {'pass' if ok_m else 'fail'} (tol {task.mean_tol:g}), variance {'pass' if ok_v else 'fail'} (tol {task.var_tol:g})",
    ]
    if ok_m and ok_v:
        return Outcome(EXIT_OK, ["verdict: PASS (matches closed form)"] + lines)
    return Outcome(EXIT_VERDICT, ["verdict: FAIL (outside tolerance)"] + lines)


TASKS = {
    "simulate": _task_simulate,
    "find-periodic": _task_find_periodic,
    "find-stationary": _task_find_stationary,
    "verify": _task_verify,
    "check-lyapunov": _task_check_lyapunov,
    "oracle-compare": _task_oracle_compare,
}


def _versions() -> dict:
    return {"mvperiodic": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def run(config_path, *, output: str | Path | None = None) -> int:
    """Run one configured task; returns the exit status."""
    config_path = Path(config_path)
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(output) if output is not None else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    began = time.perf_counter()
    try:
        outcome = TASKS[cfg.task.kind](cfg, out, config_path.parent)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowupError as exc:
        outcome = Outcome(EXIT_BLOWUP, [f"verdict: FAIL (blowup: {exc})"])
    wall = time.perf_counter() - began
    meta = {
        "config": cfg.model_dump(mode="json"),
        "config_path": str(config_path),
        "task": cfg.task.kind,
        "seed": cfg.sim.seed,
        "versions": _versions(),
        "wall_time": wall,
        "exit_status": outcome.code,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    (out / "summary.txt").write_text("\n".join(outcome.summary) + "\n")
    print(outcome.summary[0])
    return outcome.code


def validate(config_path) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: model={cfg.model.name} task={cfg.task.kind}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mvperiodic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the task in a config file")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", help="override output.directory")
    p_val = sub.add_parser("validate", help="parse and check a config file without running it")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run(args.config, output=args.output)
    return validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
