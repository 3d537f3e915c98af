"""Interacting particle approximation of a DDSDE.

Euler-Maruyama with the empirical measure frozen at the start of each step.
Noise for particle ``i`` at global step ``k`` comes from the counter-based
stream keyed by ``(seed, i, k)``; step ``k`` always runs at time
``k * dt``, so runs split at a step boundary reproduce the unsplit run
bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rng as _rng
from .dynamics import ModelSpec
from .measures import EmpiricalMeasure, resample

__all__ = [
    "SimConfig",
    "SimReport",
    "BlowupError",
    "step",
    "propagate",
    "simulate",
    "initial_particles",
    "step_time",
    "THREADS_ENV",
]

THREADS_ENV = "MVPERIODIC_THREADS"
BLOWUP_RADIUS = 1e12
# particles per work unit; fixed so the arithmetic never depends on thread count
STEP_BLOCK = 2048


class BlowupError(RuntimeError):
    """A particle left the finite region; carries where and when."""

    def __init__(self, particle: int, time: float, step: int, value=None):
        self.particle = int(particle)
        self.time = float(time)
        self.step = int(step)
        self.value = value
        super().__init__(f"blowup at t={time:g} (step {step}), particle {particle}: {value}")


@dataclass(frozen=True)
class SimConfig:
    n_particles: int = 1000
    dt: float = 1e-2
    seed: int = 0
    scheme: str = "explicit"  # "explicit" | "tamed"
    interaction: str = "full"  # "full" | "subsample"
    subsample_size: int | None = None
    record_stride: int | None = None
    threads: int | None = None

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float)) and self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_particles < 2:
            raise ValueError(f"n_particles must be >= 2, got {self.n_particles}")
        if self.scheme not in ("explicit", "tamed"):
            raise ValueError(f"scheme must be 'explicit' or 'tamed', got {self.scheme!r}")
        if self.interaction not in ("full", "subsample"):
            raise ValueError(f"interaction must be 'full' or 'subsample', got {self.interaction!r}")
        if self.interaction == "subsample":
            m = self.subsample_size
            if m is None or not 1 <= m <= self.n_particles:
                raise ValueError(f"subsample_size must be in [1, n_particles], got {m}")
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be positive")

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))

    def stride_for(self, period: float) -> int:
        if self.record_stride is not None:
            return self.record_stride
        return max(1, round(period / (10 * self.dt)))

    def n_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        return max(1, int(os.environ.get(THREADS_ENV, "1")))

    def to_json(self) -> dict:
        return asdict(self)


def step_time(k: int, dt: float) -> float:
    """Time label of global step ``k`` (rounded so multiples of the period land exactly)."""
    return float(round(k * dt, 12))


def initial_particles(mu: EmpiricalMeasure, config: SimConfig) -> np.ndarray:
    """Particle array for ``mu``: a point mass is replicated, a uniform cloud
    is used as-is, a weighted cloud is resampled to ``n_particles``."""
    if mu.size == 1:
        return np.repeat(mu.points, config.n_particles, axis=0)
    if mu.is_uniform:
        return np.array(mu.points)
    gen = np.random.default_rng(_rng.derive_seed(config.seed, "init"))
    return np.array(resample(mu, config.n_particles, gen).points)


def _interaction_measure(points: np.ndarray, k: int, config: SimConfig) -> EmpiricalMeasure:
    if config.interaction == "full" or config.subsample_size >= points.shape[0]:
        return EmpiricalMeasure(points)
    u = _rng.uniforms(_rng.derive_seed(config.seed, "subsample"), np.arange(points.shape[0]), k)
    pick = np.sort(np.argsort(u, kind="stable")[: config.subsample_size])
    return EmpiricalMeasure(points[pick])


def _advance_block(x, idx, t, k, mu, model, config, noise_seed):
    dt = config.dt
    b = model.drift_fn(t, x, mu)
    if config.scheme == "tamed":
        b = b / (1.0 + dt * np.sqrt(np.sum(b * b, axis=1, keepdims=True)))
    sig = model.diffusion_fn(t, x, mu)
    xi = _rng.standard_normals(noise_seed, idx, k, x.shape[1])
    return x + b * dt + math.sqrt(dt) * np.einsum("mij,mj->mi", sig, xi)


def _check_finite(x: np.ndarray, t: float, k: int) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP_RADIUS)
    if bad.any():
        i = int(np.argmax(bad.any(axis=1)))
        raise BlowupError(i, t, k, x[i].tolist())


def _step_array(x: np.ndarray, k: int, model: ModelSpec, config: SimConfig, pool=None) -> np.ndarray:
    t = step_time(k, config.dt)
    mu = _interaction_measure(x, k, config)
    noise_seed = _rng.derive_seed(config.seed, "noise")
    n = x.shape[0]
    starts = range(0, n, STEP_BLOCK)

    def work(s):
        idx = np.arange(s, min(s + STEP_BLOCK, n), dtype=np.uint64)
        return _advance_block(x[s : s + STEP_BLOCK], idx, t, k, mu, model, config, noise_seed)

    if pool is None or n <= STEP_BLOCK:
        blocks = [work(s) for s in starts]
    else:
        blocks = list(pool.map(work, starts))
    out = blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=0)
    _check_finite(out, step_time(k + 1, config.dt), k)
    return out


def step(cloud: EmpiricalMeasure, t: float, model: ModelSpec, config: SimConfig, step_index: int | None = None) -> EmpiricalMeasure:
    """One Euler-Maruyama step from time ``t``.

    ``step_index`` selects the noise counter; by default it is ``round(t / dt)``.
    """
    if not cloud.is_uniform:
        raise ValueError("step needs a uniform-weight cloud")
    k = round(t / config.dt) if step_index is None else int(step_index)
    return EmpiricalMeasure(_step_array(np.asarray(cloud.points), k, model, config))


def _iterate(x: np.ndarray, k0: int, k1: int, model: ModelSpec, config: SimConfig) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(k, particles at step k)`` for k = k0+1 .. k1."""
    threads = config.n_threads()
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for k in range(k0, k1):
            x = _step_array(x, k, model, config, pool)
            yield k + 1, x
    finally:
        if pool is not None:
            pool.shutdown()


def _steps(s: float, t: float, dt: float) -> tuple[int, int]:
    if t < s:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    return round(s / dt), round(t / dt)


def propagate(mu: EmpiricalMeasure, s: float, t: float, model: ModelSpec, config: SimConfig) -> EmpiricalMeasure:
    """Approximate P*_{s,t} mu by running the particle system from s to t."""
    k0, k1 = _steps(s, t, config.dt)
    if k0 == k1:
        return mu
    x = initial_particles(mu, config)
    for _, x in _iterate(x, k0, k1, model, config):
        pass
    return EmpiricalMeasure(x)


@dataclass
class SimReport:
    """Trajectory summary: per-step moments and recorded clouds."""

    times: np.ndarray
    moment_track: np.ndarray  # columns: time, ||mu||_vartheta^vartheta, ||mu||_r^r
    snapshots: list[tuple[float, EmpiricalMeasure]]
    blowup_flag: bool = False
    blowup: BlowupError | None = None
    vartheta: float = 2.0
    r: float = 2.0
    dt: float = 0.0
    config: SimConfig | None = None
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> EmpiricalMeasure:
        return self.snapshots[-1][1]

    def time_average(self, which: str = "r", upto: float | None = None) -> float:
        """Left-endpoint Riemann average (1/t) sum_k m(t_k) dt of a moment column."""
        col = 2 if which == "r" else 1
        track = self.moment_track
        steps = track.shape[0] - 1  # last row is the endpoint
        if upto is not None:
            steps = min(steps, round(upto / self.dt))
        if steps <= 0:
            return 0.0
        horizon = steps * self.dt
        return math.fsum(track[:steps, col] * self.dt) / horizon

    def snapshot_at(self, t: float) -> EmpiricalMeasure:
        for s, m in self.snapshots:
            if abs(s - t) <= 1e-9:
                return m
        raise KeyError(f"no snapshot at t={t}")

    def save(self, directory) -> Path:
        directory = Path(directory)
        (directory / "snapshots").mkdir(parents=True, exist_ok=True)
        with open(directory / "moments.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", f"moment_vartheta_{self.vartheta:g}", f"moment_r_{self.r:g}"])
            for row in self.moment_track:
                w.writerow([repr(float(v)) for v in row])
        for s, m in self.snapshots:
            m.to_csv(directory / "snapshots" / f"t_{s:.6f}.csv")
        meta = {
            "config": self.config.to_json() if self.config else None,
            "blowup_flag": self.blowup_flag,
            "blowup": str(self.blowup) if self.blowup else None,
            "vartheta": self.vartheta,
            "r": self.r,
            "wall_time": self.wall_time,
            **self.meta,
        }
        with open(directory / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)
        return directory


def _moments(x: np.ndarray, vartheta: float, r: float) -> tuple[float, float]:
    rad = np.sqrt(np.sum(x * x, axis=1))
    return float(np.mean(rad**vartheta)), float(np.mean(rad**r))


def simulate(
    model: ModelSpec,
    init: EmpiricalMeasure,
    t_end: float,
    config: SimConfig,
    r: float = 2.0,
    *,
    vartheta: float | None = None,
    t_start: float = 0.0,
) -> SimReport:
    """Run from ``t_start`` to ``t_end`` recording moments every step.

    Snapshots are taken at the start, every ``record_stride`` steps, at every
    multiple of the period, and at the end. A blowup stops the run and the
    partial report comes back with ``blowup_flag`` set.
    """
    if not t_end > t_start:
        raise ValueError(f"t_end must exceed t_start, got {t_end}")
    vartheta = model.declared_vartheta if vartheta is None else vartheta
    dt = config.dt
    k0, k1 = _steps(t_start, t_end, dt)
    stride = config.stride_for(model.period)
    period_steps = {round(j * model.period / dt) for j in range(1, int(t_end / model.period + 1e-9) + 1)}

    began = _time.perf_counter()
    x = initial_particles(init, config)
    t0 = step_time(k0, dt)
    times = [t0]
    track = [(t0, *_moments(x, vartheta, r))]
    snaps = [(t0, EmpiricalMeasure(x))]
    blow = None
    try:
        for k, x in _iterate(x, k0, k1, model, config):
            t = step_time(k, dt)
            times.append(t)
            track.append((t, *_moments(x, vartheta, r)))
            if (k - k0) % stride == 0 or k in period_steps or k == k1:
                snaps.append((t, EmpiricalMeasure(x)))
    except BlowupError as exc:
        blow = exc
    return SimReport(
        times=np.asarray(times),
        moment_track=np.asarray(track),
        snapshots=snaps,
        blowup_flag=blow is not None,
        blowup=blow,
        vartheta=vartheta,
        r=r,
        dt=dt,
        config=config,
        wall_time=_time.perf_counter() - began,
        meta={"model": model.name, "model_params": model.params, "t_end": t_end, "t_start": t_start},
    )
