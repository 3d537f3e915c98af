"""Particle-cloud laws on R^d, moment norms and Wasserstein distances."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "EmpiricalMeasure",
    "GaussianLaw",
    "TransportResult",
    "dirac",
    "pool",
    "moment_norm",
    "moment",
    "wasserstein",
    "transport",
    "brute_force_wasserstein",
    "resample",
]

ASSIGNMENT_CAP = 512
N_PROJECTIONS = 64


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted particle cloud standing in for a probability law on R^d.

    ``points`` has shape ``(n, d)``; ``weights`` defaults to uniform. Arrays
    are copied and frozen on construction.
    """

    points: np.ndarray
    weights: np.ndarray | None = None
    _uniform: bool = field(default=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
            uniform = True
        else:
            w = np.array(self.weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"{w.shape[0]} weights for {n} points")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")
            total = math.fsum(w)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {total!r}, not 1")
            uniform = bool(np.all(w == w[0]))
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_uniform", uniform)

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        return cls(points)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.size

    @property
    def is_uniform(self) -> bool:
        return self._uniform

    @cached_property
    def mean(self) -> np.ndarray:
        if self._uniform:
            return self.points.mean(axis=0)
        return self.weights @ self.points

    @cached_property
    def variance(self) -> float:
        """Second central moment, summed over coordinates."""
        centered = self.points - self.mean
        sq = np.sum(centered * centered, axis=1)
        if self._uniform:
            return float(sq.mean())
        return float(self.weights @ sq)

    def expect(self, f) -> float:
        """Integrate ``f`` (vectorized over rows) against the cloud."""
        vals = np.asarray(f(self.points), dtype=np.float64)
        return float(self.weights @ vals)

    def split(self, rng: np.random.Generator) -> tuple["EmpiricalMeasure", "EmpiricalMeasure"]:
        """Random split into two uniform halves of equal size (for n >= 2)."""
        if self.size < 2:
            raise ValueError("cannot split a single-point cloud")
        perm = rng.permutation(self.size)
        half = self.size // 2
        return (
            EmpiricalMeasure(self.points[perm[:half]]),
            EmpiricalMeasure(self.points[perm[half : 2 * half]]),
        )

    # -- serialization -------------------------------------------------

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EmpiricalMeasure":
        pts = np.asarray(obj["points"], dtype=np.float64).reshape(-1, int(obj["dimension"]))
        return cls(pts, obj.get("weights"))

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["weight"] + [f"x{i + 1}" for i in range(self.dimension)])
            for w, row in zip(self.weights, self.points):
                writer.writerow([repr(float(w))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader if r]
        if not header or header[0] != "weight":
            raise ValueError(f"{path}: expected header starting with 'weight'")
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, len(header))
        weights = arr[:, 0]
        # re-normalize against text round-off
        weights = weights / math.fsum(weights)
        return cls(arr[:, 1:], weights)


@dataclass(frozen=True)
class GaussianLaw:
    """One-dimensional normal law N(mean, variance)."""

    mean: float
    variance: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise ValueError("mean must be finite")
        if not (self.variance >= 0.0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be finite and >= 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def sample(self, n: int, rng: np.random.Generator | int | None = None) -> EmpiricalMeasure:
        rng = np.random.default_rng(rng)
        return EmpiricalMeasure(self.mean + self.std * rng.standard_normal((n, 1)))

    def quantile_cloud(self, n: int) -> EmpiricalMeasure:
        """Deterministic n-point cloud at the mid-quantiles (i + 1/2)/n."""
        from scipy.special import ndtri

        u = (np.arange(n) + 0.5) / n
        return EmpiricalMeasure((self.mean + self.std * ndtri(u)).reshape(-1, 1))

    def __str__(self) -> str:
        return f"N({self.mean:g}, {self.variance:g})"


@dataclass(frozen=True)
class TransportResult:
    value: float
    backend: str  # "sorted", "assignment" or "sliced"
    exact: bool
    n_projections: int = 0
    resampled: bool = False


def dirac(x) -> EmpiricalMeasure:
    """Point mass at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return EmpiricalMeasure(x.reshape(1, -1))


def pool(measures: Sequence[EmpiricalMeasure], weights: Sequence[float]) -> EmpiricalMeasure:
    """Mixture sum_k weights[k] * measures[k] as one concatenated cloud."""
    if len(measures) == 0:
        raise ValueError("pool needs at least one measure")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(measures),):
        raise ValueError(f"{weights.shape[0] if weights.ndim else 1} weights for {len(measures)} measures")
    if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > 1e-12:
        raise ValueError("pool weights must be nonnegative and sum to 1")
    dims = {m.dimension for m in measures}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch in pool: {sorted(dims)}")
    if len(measures) == 1:
        return measures[0]
    pts = np.concatenate([m.points for m in measures], axis=0)
    w = np.concatenate([wk * m.weights for wk, m in zip(weights, measures)])
    w = w / math.fsum(w)
    return EmpiricalMeasure(pts, w)


def moment(mu: EmpiricalMeasure, theta: float) -> float:
    """The theta-th absolute moment sum_i w_i |x_i|^theta."""
    if theta <= 0:
        raise ValueError(f"moment order must be positive, got {theta}")
    radii = np.sqrt(np.sum(mu.points * mu.points, axis=1))
    return float(mu.weights @ radii**theta)


def moment_norm(mu: EmpiricalMeasure, theta: float = 2.0) -> float:
    """(sum_i w_i |x_i|^theta)^(1/theta)."""
    if theta < 1:
        raise ValueError(f"theta must be >= 1, got {theta}")
    return moment(mu, theta) ** (1.0 / theta)


def _pairwise_cost(x: np.ndarray, y: np.ndarray, theta: float) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1)) ** theta


def _sorted_1d(x: np.ndarray, y: np.ndarray, theta: float) -> float:
    xs = np.sort(x)
    ys = np.sort(y)
    return math.fsum(np.abs(xs - ys) ** theta) / xs.shape[0]


def _quantile_1d(x, wx, y, wy, theta: float) -> float:
    """Exact W_theta^theta for weighted 1D clouds via quantile functions."""
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    xs, ys = x[ix], y[iy]
    cx = np.cumsum(wx[ix])
    cy = np.cumsum(wy[iy])
    cx /= cx[-1]
    cy /= cy[-1]
    u = np.union1d(cx, cy)
    du = np.diff(np.concatenate(([0.0], u)))
    mid = u - 0.5 * du
    qx = xs[np.minimum(np.searchsorted(cx, mid), xs.shape[0] - 1)]
    qy = ys[np.minimum(np.searchsorted(cy, mid), ys.shape[0] - 1)]
    return math.fsum(du * np.abs(qx - qy) ** theta)


def _assignment(x: np.ndarray, y: np.ndarray, theta: float) -> float:
    cost = _pairwise_cost(x, y, theta)
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols]) / x.shape[0]


def resample(mu: EmpiricalMeasure, n: int, rng: np.random.Generator) -> EmpiricalMeasure:
    """Multinomial resampling of ``mu`` to a uniform ``n``-point cloud."""
    counts = rng.multinomial(n, mu.weights / mu.weights.sum())
    return EmpiricalMeasure(np.repeat(mu.points, counts, axis=0))


def _validate_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure, theta: float) -> None:
    if theta < 1:
        raise ValueError(f"theta must be >= 1, got {theta}")
    if mu.dimension != nu.dimension:
        raise ValueError(f"dimension mismatch: {mu.dimension} vs {nu.dimension}")


def transport(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    theta: float = 2.0,
    *,
    assignment_cap: int = ASSIGNMENT_CAP,
    n_projections: int = N_PROJECTIONS,
    seed: int = 0,
) -> TransportResult:
    """W_theta(mu, nu) together with the backend that produced it.

    d = 1: exact (sorted matching for equal-size uniform clouds, quantile
    coupling otherwise). d > 1: exact assignment when the common size is at
    most ``assignment_cap``, after multinomial resampling of unequal or
    weighted clouds; sliced approximation above the cap.
    """
    _validate_pair(mu, nu, theta)
    if mu.dimension == 1:
        x, y = mu.points[:, 0], nu.points[:, 0]
        if mu.is_uniform and nu.is_uniform and mu.size == nu.size:
            wp = _sorted_1d(x, y, theta)
        else:
            wp = _quantile_1d(x, mu.weights, y, nu.weights, theta)
        return TransportResult(wp ** (1.0 / theta), "sorted", True)

    n = max(mu.size, nu.size)
    if n > assignment_cap:
        return _sliced(mu, nu, theta, n_projections, seed)
    resampled = False
    if not (mu.is_uniform and nu.is_uniform and mu.size == nu.size):
        rng = np.random.default_rng(seed)
        if not (mu.is_uniform and mu.size == n):
            mu = resample(mu, n, rng)
            resampled = True
        if not (nu.is_uniform and nu.size == n):
            nu = resample(nu, n, rng)
            resampled = True
    wp = _assignment(mu.points, nu.points, theta)
    return TransportResult(wp ** (1.0 / theta), "assignment", not resampled, resampled=resampled)


def _sliced(mu, nu, theta, n_projections, seed) -> TransportResult:
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, mu.dimension))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px = mu.points @ dirs.T
    py = nu.points @ dirs.T
    vals = [_quantile_1d(px[:, k], mu.weights, py[:, k], nu.weights, theta) for k in range(n_projections)]
    value = (math.fsum(vals) / n_projections) ** (1.0 / theta)
    return TransportResult(value, "sliced", False, n_projections)


def wasserstein(mu: EmpiricalMeasure, nu: EmpiricalMeasure, theta: float = 2.0, **kwargs) -> float:
    """Wasserstein-theta distance between two clouds (see :func:`transport`)."""
    return transport(mu, nu, theta, **kwargs).value


def brute_force_wasserstein(x: np.ndarray, y: np.ndarray, theta: float) -> float:
    """Minimum over all n! matchings of two equal-size uniform clouds.

    Independent reference for small n; shares no code with the fast paths.
    """
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    n = x.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i, j in enumerate(perm):
            total += math.dist(x[i], y[j]) ** theta
        best = min(best, total)
    return (best / n) ** (1.0 / theta)


def measure_from_json_file(path) -> EmpiricalMeasure:
    with open(path) as fh:
        return EmpiricalMeasure.from_json(json.load(fh))
