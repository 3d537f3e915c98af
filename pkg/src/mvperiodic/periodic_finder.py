"""Search for and certify periodic (and stationary) measures.

Two constructions: Picard iteration of the period map mu -> P*_theta mu,
and Cesaro averages (1/T) int_0^T P*_s delta_0 ds built by pooling
recorded snapshots. Candidates are certified by comparing one-period and
time-marginal residuals against the sampling noise floor.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from .dynamics import ConditionConstants, ModelSpec
from .measures import EmpiricalMeasure, dirac, pool, wasserstein
from .particle_sim import (
    BlowupError,
    SimConfig,
    _iterate,
    initial_particles,
    propagate,
    simulate,
)

__all__ = [
    "FixedPointReport",
    "CertificationReport",
    "MomentBoundReport",
    "noise_floor",
    "picard_iterate",
    "find_stationary",
    "cesaro_average",
    "verify_periodic",
    "moment_bound_report",
    "h3a_n0",
]

log = logging.getLogger(__name__)

MARGINAL_REDUCTION = (
    "joint-law periodicity is checked through one-dimensional time marginals only; "
    "joint distributions at several times are not compared"
)


def noise_floor(mu: EmpiricalMeasure, vartheta: float = 2.0, *, seed: int = 0, n_splits: int = 8) -> float:
    """Mean W_vartheta between the two halves of random splits of ``mu``.

    This is the distance two independent samples of the same law typically
    show at this cloud size (slightly pessimistic: halves are half as big).
    """
    if mu.size < 2:
        return 0.0
    gen = np.random.default_rng(seed)
    vals = []
    for _ in range(n_splits):
        a, b = mu.split(gen)
        vals.append(wasserstein(a, b, vartheta, seed=int(gen.integers(2**31))))
    return math.fsum(vals) / n_splits


@dataclass
class FixedPointReport:
    iterates: list[tuple[int, float]]
    final_measure: EmpiricalMeasure
    converged: bool
    noise_floor: float
    residual: float
    tolerance: float
    vartheta: float
    noise_floors: list[float] = field(default_factory=list)
    blowup: str | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.iterates)

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "residual": self.residual,
            "noise_floor": self.noise_floor,
            "tolerance": self.tolerance,
            "vartheta": self.vartheta,
            "iterates": [
                {"k": k, "residual": r, "noise_floor": f}
                for (k, r), f in zip(self.iterates, self.noise_floors)
            ],
            "final_mean": self.final_measure.mean.tolist(),
            "final_variance": self.final_measure.variance,
            "blowup": self.blowup,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "fixed_point.json", "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
        with open(directory / "residuals.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "residual", "noise_floor", "threshold"])
            for (k, r), f in zip(self.iterates, self.noise_floors):
                w.writerow([k, repr(r), repr(f), repr(max(self.tolerance, f))])
        self.final_measure.to_csv(directory / "candidate.csv")
        return directory


def picard_iterate(
    model: ModelSpec,
    mu0: EmpiricalMeasure,
    k_max: int,
    tol: float,
    config: SimConfig,
    vartheta: float = 2.0,
    *,
    consecutive: int = 3,
) -> FixedPointReport:
    """Iterate mu_{k+1} = P*_theta mu_k with a fresh noise substream per iteration.

    Stops after ``consecutive`` residuals W(mu_{k+1}, mu_k) at or below
    max(tol, noise floor of mu_k), or immediately on an exactly zero
    residual (the period map fixed the cloud exactly).
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    mu = mu0
    iterates: list[tuple[int, float]] = []
    floors: list[float] = []
    streak = 0
    converged = False
    blow = None
    for k in range(k_max):
        cfg = config.with_seed(_rng.derive_seed(config.seed, "picard", k))
        try:
            nxt = propagate(mu, 0.0, model.period, model, cfg)
        except BlowupError as exc:
            log.warning("picard iteration %d blew up: %s", k, exc)
            blow = str(exc)
            break
        res = wasserstein(nxt, mu, vartheta, seed=_rng.derive_seed(config.seed, "picard-w", k))
        floor = noise_floor(mu, vartheta, seed=_rng.derive_seed(config.seed, "picard-floor", k))
        iterates.append((k, res))
        floors.append(floor)
        mu = nxt
        log.debug("picard k=%d residual=%.4g floor=%.4g", k, res, floor)
        if res == 0.0:
            converged = True
            break
        streak = streak + 1 if res <= max(tol, floor) else 0
        if streak >= consecutive:
            converged = True
            break
    return FixedPointReport(
        iterates=iterates,
        final_measure=mu,
        converged=converged,
        noise_floor=floors[-1] if floors else 0.0,
        residual=iterates[-1][1] if iterates else math.inf,
        tolerance=tol,
        vartheta=vartheta,
        noise_floors=floors,
        blowup=blow,
    )


def find_stationary(
    model: ModelSpec,
    mu0: EmpiricalMeasure,
    k_max: int,
    tol: float,
    config: SimConfig,
    vartheta: float = 2.0,
    *,
    probe_period: float = 1.0,
) -> FixedPointReport:
    """Picard iteration for an invariant measure of a time-homogeneous model.

    Any period is valid when the coefficients do not depend on time, so
    the period map is probed at ``probe_period``.
    """
    return picard_iterate(model.with_period(probe_period), mu0, k_max, tol, config, vartheta)


def _pool_snapshots(snaps: list[tuple[float, EmpiricalMeasure]], horizon: float) -> EmpiricalMeasure:
    """Left-endpoint quadrature of (1/T) int_0^T L_s ds over recorded snapshots."""
    times = [s for s, _ in snaps]
    clouds, weights = [], []
    for i, (s, m) in enumerate(snaps):
        if s >= horizon - 1e-12:
            break
        nxt = times[i + 1] if i + 1 < len(times) else horizon
        clouds.append(m)
        weights.append(min(nxt, horizon) - s)
    w = np.asarray(weights) / math.fsum(weights)
    if np.allclose(w, w[0], rtol=1e-9, atol=0):
        w = np.full(len(w), 1.0 / len(w))
    return pool(clouds, w)


def cesaro_average(
    model: ModelSpec,
    horizons,
    config: SimConfig,
    init: EmpiricalMeasure | None = None,
) -> list[EmpiricalMeasure]:
    """Cesaro means nu_n = (1/T_n) int_0^{T_n} P*_s mu ds, one per horizon.

    ``init`` defaults to the point mass at the origin.
    """
    horizons = [float(h) for h in horizons]
    if not horizons or any(h <= 0 for h in horizons) or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError(f"horizons must be positive and increasing, got {horizons}")
    init = dirac(np.zeros(model.dimension)) if init is None else init
    report = simulate(model, init, horizons[-1], config)
    reached = report.times[-1]
    if report.blowup_flag and reached < horizons[0]:
        raise report.blowup
    out = []
    for h in horizons:
        if h > reached + 1e-12:
            log.warning("blowup at t=%g: Cesaro sequence truncated before T=%g", reached, h)
            break
        out.append(_pool_snapshots(report.snapshots, h))
    return out


@dataclass
class CertificationReport:
    certified: bool
    one_period_residual: float
    marginal_residuals: list[dict]
    noise_floor: float
    factor: float
    vartheta: float
    n_periods: int
    reduction: str = MARGINAL_REDUCTION
    blowup: str | None = None

    @property
    def max_marginal_residual(self) -> float:
        return max((m["residual"] for m in self.marginal_residuals), default=0.0)

    def to_json(self) -> dict:
        return {
            "certified": self.certified,
            "one_period_residual": self.one_period_residual,
            "noise_floor": self.noise_floor,
            "threshold": self.factor * self.noise_floor,
            "factor": self.factor,
            "vartheta": self.vartheta,
            "n_periods": self.n_periods,
            "marginal_residuals": self.marginal_residuals,
            "reduction": self.reduction,
            "blowup": self.blowup,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "certification.json", "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
        with open(directory / "marginal_residuals.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "period", "residual", "threshold"])
            w.writerow(["0", "one-period", repr(self.one_period_residual), repr(self.factor * self.noise_floor)])
            for m in self.marginal_residuals:
                w.writerow([repr(m["t"]), m["period"], repr(m["residual"]), repr(self.factor * self.noise_floor)])
        return directory


def verify_periodic(
    candidate: EmpiricalMeasure,
    model: ModelSpec,
    config: SimConfig,
    vartheta: float = 2.0,
    n_periods: int = 3,
    *,
    n_grid: int = 4,
    factor: float = 2.0,
) -> CertificationReport:
    """Certify P*_theta candidate = candidate up to sampling noise.

    Runs the particle system from ``candidate`` and compares (a) the cloud
    after one period with the candidate, and (b) the clouds at t_j + p*theta
    and t_j + (p+1)*theta for grid times t_j in (0, theta), p < n_periods.
    Every residual must be at most ``factor`` times the noise floor.
    """
    dt = config.dt
    per = round(model.period / dt)
    grid = sorted({max(1, min(per - 1, round((j + 1) * per / (n_grid + 1)))) for j in range(n_grid)})
    wanted = {per}
    for g in grid:
        wanted.update(g + p * per for p in range(n_periods + 1))
    last = max(wanted)

    cfg = config.with_seed(_rng.derive_seed(config.seed, "verify"))
    floor = noise_floor(candidate, vartheta, seed=_rng.derive_seed(config.seed, "verify-floor"))
    clouds: dict[int, EmpiricalMeasure] = {}
    blow = None
    try:
        for k, x in _iterate(initial_particles(candidate, cfg), 0, last, model, cfg):
            if k in wanted:
                clouds[k] = EmpiricalMeasure(x)
    except BlowupError as exc:
        blow = str(exc)
    if blow is not None:
        return CertificationReport(False, math.inf, [], floor, factor, vartheta, n_periods, blowup=blow)

    wseed = _rng.derive_seed(config.seed, "verify-w")
    one = wasserstein(clouds[per], candidate, vartheta, seed=wseed)
    marginals = []
    for g in grid:
        for p in range(n_periods):
            a, b = clouds[g + p * per], clouds[g + (p + 1) * per]
            marginals.append({"t": g * dt, "period": p, "residual": wasserstein(a, b, vartheta, seed=wseed)})
    threshold = factor * floor
    ok = one <= threshold and all(m["residual"] <= threshold for m in marginals)
    return CertificationReport(ok, one, marginals, floor, factor, vartheta, n_periods)


def h3a_n0(C1: float, C2: float, r: float, vartheta: float) -> int:
    """Smallest positive integer N0 with C2 / N0^(r - vartheta) <= C1 / 2."""
    n0 = max(1, math.ceil((2.0 * C2 / C1) ** (1.0 / (r - vartheta))))
    while n0 > 1 and C2 / (n0 - 1) ** (r - vartheta) <= C1 / 2:
        n0 -= 1
    while C2 / n0 ** (r - vartheta) > C1 / 2:
        n0 += 1
    return n0


@dataclass
class MomentBoundReport:
    empirical: float
    horizon: float
    v_start: float
    bound_h3a: float | None
    bound_h3b: float | None
    n0: int | None
    constants: ConditionConstants
    moment_order: float

    @property
    def margin_h3a(self) -> float | None:
        return None if self.bound_h3a is None else self.bound_h3a - self.empirical

    @property
    def margin_h3b(self) -> float | None:
        return None if self.bound_h3b is None else self.bound_h3b - self.empirical

    @property
    def holds(self) -> bool:
        margins = [m for m in (self.margin_h3a, self.margin_h3b) if m is not None]
        return bool(margins) and all(m > 0 for m in margins)

    def to_json(self) -> dict:
        return {
            "empirical_time_average": self.empirical,
            "moment_order": self.moment_order,
            "horizon": self.horizon,
            "v_start": self.v_start,
            "bound_h3a": self.bound_h3a,
            "bound_h3b": self.bound_h3b,
            "margin_h3a": self.margin_h3a,
            "margin_h3b": self.margin_h3b,
            "n0": self.n0,
            "holds": self.holds,
            "constants": self.constants.to_json(),
        }


def moment_bound_report(
    model: ModelSpec,
    constants: ConditionConstants,
    t_end: float,
    config: SimConfig,
    *,
    lyapunov=None,
    init: EmpiricalMeasure | None = None,
    which: str = "both",
) -> MomentBoundReport:
    """Compare the simulated (1/t) int_0^t ||L_{X_s}||_r^r ds with its a priori bounds.

    H3a: 2 [C2 (1 + N0^vartheta) + (C0 + V0)/t] / C1
    H3b: (C3 + (C0 + V0)/t) / (C1 - C2)

    V0 is V(0, 0) for the default point-mass start (0 without ``lyapunov``),
    or the mean of V(0, .) over ``init`` otherwise.
    """
    if which not in ("H3a", "H3b", "both"):
        raise ValueError(f"which must be 'H3a', 'H3b' or 'both', got {which!r}")
    c = constants
    if not c.C1 > 0:
        raise ValueError("C1 must be > 0")
    if which == "H3b" and not c.C1 > c.C2:
        raise ValueError(f"H3b bound needs C1 > C2 (C1={c.C1}, C2={c.C2})")
    init = dirac(np.zeros(model.dimension)) if init is None else init
    v0 = 0.0 if lyapunov is None else init.expect(lambda x: lyapunov.value(0.0, x))

    report = simulate(model, init, t_end, config, r=c.r, vartheta=c.vartheta)
    if report.blowup_flag:
        raise report.blowup
    horizon = (report.moment_track.shape[0] - 1) * config.dt
    empirical = report.time_average("r")

    b_a = b_b = None
    n0 = None
    if which in ("H3a", "both") and c.r > c.vartheta:
        n0 = h3a_n0(c.C1, c.C2, c.r, c.vartheta)
        b_a = 2.0 * (c.C2 * (1 + n0**c.vartheta) + (c.C0 + v0) / horizon) / c.C1
    if which in ("H3b", "both") and c.C1 > c.C2:
        b_b = (c.C3 + (c.C0 + v0) / horizon) / (c.C1 - c.C2)
    return MomentBoundReport(empirical, horizon, v0, b_a, b_b, n0, c, c.r)
