"""Distribution-dependent SDE models dX = b(t,X,L_X) dt + sigma(t,X,L_X) dB.

Evaluators are batched: ``drift_fn(t, X, mu)`` maps an ``(m, d)`` array of
states to ``(m, d)`` and ``diffusion_fn(t, X, mu)`` maps to ``(m, d, d)``.
Mean-field integrals over ``mu`` are weighted sums over its particles; for
affine inner maps the integral collapses onto the cloud mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .measures import EmpiricalMeasure

__all__ = [
    "ModelSpec",
    "ConditionConstants",
    "PeriodicFunction",
    "FieldMap",
    "LandauValidity",
    "variance_drift_model",
    "ou_model",
    "zero_model",
    "constant_drift_model",
    "polynomial_interaction_model",
    "landau_sigma0",
    "landau_maxwell_model",
    "check_landau_validity",
    "landau_q_upper",
    "default_landau_q",
    "landau_h3b_constants",
    "bounded_diffusion_model",
    "inward_drift",
    "smooth_cutoff",
]

Evaluator = Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]

# row block for O(N^2) mean-field sums; fixed so results never depend on threading
PAIRWISE_BLOCK = 256


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of a DDSDE with period ``period``."""

    dimension: int
    period: float
    drift_fn: Evaluator
    diffusion_fn: Evaluator
    name: str = "model"
    declared_vartheta: float = 2.0
    time_homogeneous: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.period > 0:
            raise ValueError(f"period must be > 0, got {self.period}")
        if self.declared_vartheta < 1:
            raise ValueError("declared_vartheta must be >= 1")

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim <= 1
        x = x.reshape(-1, self.dimension)
        return x, single

    def drift(self, t: float, x, mu: EmpiricalMeasure) -> np.ndarray:
        xb, single = self._batch(x)
        out = np.asarray(self.drift_fn(float(t), xb, mu), dtype=np.float64)
        return out[0] if single else out

    def diffusion(self, t: float, x, mu: EmpiricalMeasure) -> np.ndarray:
        xb, single = self._batch(x)
        out = np.asarray(self.diffusion_fn(float(t), xb, mu), dtype=np.float64)
        return out[0] if single else out

    def with_period(self, period: float) -> "ModelSpec":
        """Same coefficients under another declared period.

        Only meaningful for time-homogeneous models, where every period is valid.
        """
        if not self.time_homogeneous:
            raise ValueError(f"model {self.name!r} is time-dependent; its period is fixed")
        return ModelSpec(
            self.dimension, period, self.drift_fn, self.diffusion_fn, self.name,
            self.declared_vartheta, True, dict(self.params, period=period),
        )


@dataclass(frozen=True)
class ConditionConstants:
    """Named constants appearing in the drift and growth conditions.

    Unused constants keep their defaults; :meth:`validate_for` checks only
    the invariants relevant to one condition.
    """

    C0: float = 0.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 0.0
    r: float = 2.0
    vartheta: float = 1.0
    Kb1: float = 0.0
    Kb2: float = 0.0
    Kb3: float = 0.0
    Kb4: float = 1.0
    Kb5: float = 1.0
    Ksig1: float = 0.0
    Ksig2: float = 0.0
    C_sigma: float = 1.0
    q: float = 2.0
    n: int = 1
    alpha: float = 0.0
    beta: float = 0.0

    def validate_for(self, condition: str) -> None:
        if self.vartheta < 1:
            raise ValueError(f"vartheta must be >= 1, got {self.vartheta}")
        if condition in ("H3a", "H3b", "H3c") and not self.r > self.vartheta:
            raise ValueError(f"{condition} needs r > vartheta (r={self.r}, vartheta={self.vartheta})")
        if condition in ("H3a", "H3b", "H3c") and not self.C1 > 0:
            raise ValueError(f"{condition} needs C1 > 0")
        if condition == "H3b" and not self.C1 > self.C2 > 0:
            raise ValueError(f"H3b needs C1 > C2 > 0 (C1={self.C1}, C2={self.C2})")
        if condition == "A3" and not 1 <= self.vartheta < 2:
            raise ValueError("A3 is stated for vartheta in [1, 2)")
        if condition == "A4":
            if self.vartheta < 2:
                raise ValueError("A4 is stated for vartheta >= 2")
            if not self.r > self.vartheta:
                raise ValueError("A4 needs r > vartheta")
        if condition == "A5" and not self.q > max(1.0, self.vartheta / 2):
            raise ValueError(f"A5 needs q > max(1, vartheta/2), got q={self.q}")
        if condition == "A6" and not self.C_sigma > 0:
            raise ValueError("A6 needs C_sigma > 0")
        if self.n < 1:
            raise ValueError("n must be a positive integer")

    def replace(self, **changes) -> "ConditionConstants":
        return ConditionConstants(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PeriodicFunction:
    """t -> a + b sin(2 pi t / period) + c cos(2 pi t / period)."""

    a: float
    b: float = 0.0
    c: float = 0.0
    period: float = 1.0

    def __call__(self, t):
        w = 2.0 * np.pi * np.asarray(t, dtype=np.float64) / self.period
        out = self.a + self.b * np.sin(w) + self.c * np.cos(w)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def is_constant(self) -> bool:
        return self.b == 0.0 and self.c == 0.0

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c}


@dataclass(frozen=True)
class FieldMap:
    """Catalog of inner maps for the mean-field integrals.

    ``matrix=False`` gives R^d -> R^d maps, ``matrix=True`` gives diagonal
    R^d -> R^{d x d} maps (``constant`` is ``scale`` times the identity).
    """

    kind: str  # "linear" | "negated-linear" | "tanh-componentwise" | "constant"
    scale: float = 1.0
    matrix: bool = False

    KINDS = ("linear", "negated-linear", "tanh-componentwise", "constant")

    def __post_init__(self):
        if self.kind == "tanh":
            object.__setattr__(self, "kind", "tanh-componentwise")
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}; choose from {self.KINDS}")

    @property
    def affine(self) -> bool:
        return self.kind != "tanh-componentwise"

    def _vector(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.scale * y
        if self.kind == "negated-linear":
            return -self.scale * y
        if self.kind == "tanh-componentwise":
            return self.scale * np.tanh(y)
        return np.full_like(y, self.scale)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        v = self._vector(y)
        if not self.matrix:
            return v
        d = y.shape[-1]
        if self.kind == "constant":
            return np.broadcast_to(self.scale * np.eye(d), y.shape[:-1] + (d, d)).copy()
        out = np.zeros(y.shape[:-1] + (d, d))
        idx = np.arange(d)
        out[..., idx, idx] = v
        return out


def _mean_field(f, x: np.ndarray, mu: EmpiricalMeasure, c: float, affine: bool) -> np.ndarray:
    """sum_j w_j f(x_i - c z_j) for each row x_i."""
    if affine or c == 0.0:
        return f(x - c * mu.mean)
    z = mu.points
    w = mu.weights
    parts = []
    for start in range(0, x.shape[0], PAIRWISE_BLOCK):
        xb = x[start : start + PAIRWISE_BLOCK]
        vals = np.asarray(f(xb[:, None, :] - c * z[None, :, :]))
        parts.append(np.einsum("mj...,j->m...", vals, w))
    return np.concatenate(parts, axis=0)


def _const_diffusion(sigma: float, d: int) -> Evaluator:
    eye = sigma * np.eye(d)

    def diffusion(t, x, mu):
        return np.broadcast_to(eye, (x.shape[0], d, d))

    return diffusion


def variance_drift_model(period: float = 1.0) -> ModelSpec:
    """dX = Var(L_X) dt + dB in one dimension."""

    def drift(t, x, mu):
        return np.full((x.shape[0], 1), mu.variance)

    return ModelSpec(1, period, drift, _const_diffusion(1.0, 1), "variance_drift",
                     time_homogeneous=True, params={"period": period})


def ou_model(kappa: float = 1.0, sigma: float = 1.0, dimension: int = 1, period: float = 1.0) -> ModelSpec:
    """Ornstein-Uhlenbeck dX = -kappa X dt + sigma dB (no measure dependence)."""

    def drift(t, x, mu):
        return -kappa * x

    return ModelSpec(dimension, period, drift, _const_diffusion(sigma, dimension), "ou",
                     time_homogeneous=True,
                     params={"kappa": kappa, "sigma": sigma, "dimension": dimension, "period": period})


def zero_model(dimension: int = 1, period: float = 1.0) -> ModelSpec:
    def drift(t, x, mu):
        return np.zeros_like(x)

    return ModelSpec(dimension, period, drift, _const_diffusion(0.0, dimension), "zero",
                     time_homogeneous=True, params={"dimension": dimension, "period": period})


def constant_drift_model(c, sigma: float = 0.0, period: float = 1.0) -> ModelSpec:
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    d = c.shape[0]

    def drift(t, x, mu):
        return np.broadcast_to(c, x.shape).copy()

    return ModelSpec(d, period, drift, _const_diffusion(sigma, d), "constant_drift",
                     time_homogeneous=True, params={"c": c.tolist(), "sigma": sigma, "period": period})


def _check_positive_inf(gamma, period: float, what: str, n_grid: int = 1024) -> None:
    grid = np.arange(n_grid) * (period / n_grid)
    lo = float(np.min(gamma(grid)))
    if not lo > 0:
        raise ValueError(f"inf of {what} over one period must be > 0, got {lo}")


def _is_affine(f) -> bool:
    return bool(getattr(f, "affine", False))


def polynomial_interaction_model(
    gamma1,
    gamma2,
    gamma3,
    b0,
    sigma0,
    n: int,
    alpha: float,
    beta: float,
    *,
    dimension: int = 1,
    period: float = 1.0,
) -> ModelSpec:
    """Superlinear confinement plus mean-field interaction.

    b(t,x,mu) = -g1(t) x^(2n+1) + g2(t) int b0(x - alpha z) mu(dz)
    sigma(t,x,mu) = g3(t) int sigma0(x - beta z) mu(dz)

    Powers are componentwise. ``b0``/``sigma0`` act on batches: ``b0`` maps
    ``(..., d)`` to ``(..., d)``, ``sigma0`` maps ``(..., d)`` to ``(..., d, d)``.
    Maps flagged ``affine`` (see :class:`FieldMap`) integrate via the cloud mean.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    _check_positive_inf(gamma1, period, "gamma1")
    power = 2 * int(n) + 1
    b0_affine = _is_affine(b0)
    s0_affine = _is_affine(sigma0)

    def drift(t, x, mu):
        out = -gamma1(t) * x**power
        g2 = gamma2(t)
        if g2 != 0.0:
            out = out + g2 * _mean_field(b0, x, mu, alpha, b0_affine)
        return out

    def diffusion(t, x, mu):
        g3 = gamma3(t)
        if g3 == 0.0:
            return np.zeros((x.shape[0], dimension, dimension))
        return g3 * _mean_field(sigma0, x, mu, beta, s0_affine)

    homogeneous = all(getattr(g, "is_constant", False) for g in (gamma1, gamma2, gamma3))
    params = {"n": int(n), "alpha": alpha, "beta": beta, "dimension": dimension, "period": period}
    return ModelSpec(dimension, period, drift, diffusion, "polynomial_interaction",
                     declared_vartheta=2.0, time_homogeneous=homogeneous, params=params)


def landau_sigma0(y: np.ndarray) -> np.ndarray:
    """The 3x3 Landau-Maxwell diffusion pattern, batched over leading axes.

    [[ y2,  0,  y3],
     [-y1, y3,   0],
     [  0, -y2, -y1]]
    """
    y = np.asarray(y, dtype=np.float64)
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    zero = np.zeros_like(y1)
    return np.stack(
        [
            np.stack([y2, zero, y3], axis=-1),
            np.stack([-y1, y3, zero], axis=-1),
            np.stack([zero, -y2, -y1], axis=-1),
        ],
        axis=-2,
    )


landau_sigma0.affine = True  # linear in y


def landau_maxwell_model(gamma2, gamma3, alpha: float, beta: float, *, period: float = 1.0) -> ModelSpec:
    """Time-periodic homogeneous Landau equation with Maxwell molecules (d = 3).

    b = g2(t) int -2 (x - alpha z) mu(dz),  sigma = g3(t) int sigma0(x - beta z) mu(dz).
    """
    grid = np.arange(1024) * (period / 1024)
    if np.min(gamma2(grid)) < 0:
        raise ValueError("gamma2 must be nonnegative")

    def drift(t, x, mu):
        return -2.0 * gamma2(t) * (x - alpha * mu.mean)

    def diffusion(t, x, mu):
        return gamma3(t) * landau_sigma0(x - beta * mu.mean)

    homogeneous = all(getattr(g, "is_constant", False) for g in (gamma2, gamma3))
    return ModelSpec(3, period, drift, diffusion, "landau_maxwell", declared_vartheta=2.0,
                     time_homogeneous=homogeneous,
                     params={"alpha": alpha, "beta": beta, "period": period})


@dataclass(frozen=True)
class LandauValidity:
    valid: bool
    margin: float
    inf_gamma2: float
    sup_gamma2: float
    sup_gamma3_sq: float


def _landau_extrema(gamma2, gamma3, time_grid):
    grid = np.asarray(time_grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("time_grid is empty")
    g2 = np.asarray(gamma2(grid), dtype=np.float64) * np.ones_like(grid)
    g3 = np.asarray(gamma3(grid), dtype=np.float64) * np.ones_like(grid)
    return float(g2.min()), float(g2.max()), float(np.max(g3 * g3))


def check_landau_validity(gamma2, gamma3, alpha: float, beta: float, time_grid) -> LandauValidity:
    """Test inf g2 > |alpha| sup g2 + 3 (1+|beta|)^2 / 2 * sup g3^2 on a grid."""
    inf2, sup2, sup3 = _landau_extrema(gamma2, gamma3, time_grid)
    rhs = abs(alpha) * sup2 + 1.5 * (1 + abs(beta)) ** 2 * sup3
    margin = inf2 - rhs
    return LandauValidity(margin > 0, margin, inf2, sup2, sup3)


def landau_q_upper(gamma2, gamma3, alpha: float, beta: float, time_grid) -> float:
    """Supremum of exponents q for which the q-dependent validity inequality holds."""
    inf2, sup2, sup3 = _landau_extrema(gamma2, gamma3, time_grid)
    slack = inf2 - abs(alpha) * sup2
    if sup3 == 0.0:
        return math.inf if slack > 0 else -math.inf
    # slack > (2q+1)(1+|beta|)^2 / 2 * sup3
    return (2.0 * slack / ((1 + abs(beta)) ** 2 * sup3) - 1.0) / 2.0


def default_landau_q(gamma2, gamma3, alpha: float, beta: float, time_grid) -> float:
    """q = 2 when admissible, otherwise the midpoint of (1, q_upper)."""
    q_hi = landau_q_upper(gamma2, gamma3, alpha, beta, time_grid)
    if q_hi <= 1:
        raise ValueError("no admissible q > 1: the Landau validity inequality fails")
    return 2.0 if q_hi > 2 else 0.5 * (1.0 + q_hi)


def landau_h3b_constants(
    gamma2, gamma3, alpha: float, beta: float, q: float, time_grid, *, C0: float = 0.0, C3: float = 1e-3
) -> ConditionConstants:
    """Constants of LV <= -C1 |x|^{2q} + C2 ||mu||_{2q}^{2q} for V = |x|^{2q}.

    C1 and C2 are the two bracketed coefficients of the Landau estimate. That
    estimate carries no additive term, so C3 is a free positive constant.
    """
    inf2, sup2, sup3 = _landau_extrema(gamma2, gamma3, time_grid)
    a, b = abs(alpha), abs(beta)
    c1 = 2.0 * (2 * q * inf2 - (2 * q - 1) * a * sup2 - (2 * q + 1) * (1 + b) * (q + (q - 1) * b) * sup3)
    c2 = 2.0 * (a * sup2 + (2 * q + 1) * (b + b * b) * sup3)
    return ConditionConstants(C0=C0, C1=c1, C2=c2, C3=C3, r=2 * q, vartheta=2.0, q=q, alpha=alpha, beta=beta)


def smooth_cutoff(radius: np.ndarray, c_sigma: float, inner: float = 0.5) -> np.ndarray:
    """C-infinity factor: 1 for radius <= inner*c_sigma, exactly 0 for radius >= c_sigma."""
    radius = np.asarray(radius, dtype=np.float64)
    u = (c_sigma - radius) / ((1.0 - inner) * c_sigma)
    u = np.clip(u, 0.0, 1.0)

    def f(s):
        with np.errstate(divide="ignore"):
            return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    fu, fv = f(u), f(1.0 - u)
    return fu / (fu + fv)


def inward_drift(t, x, mu):
    """b(x) = -x / (1 + |x|^2): inward but only like -x/|x|^2 at infinity."""
    return -x / (1.0 + np.sum(x * x, axis=-1, keepdims=True))


def bounded_diffusion_model(
    drift_inward: Evaluator,
    C_sigma: float,
    sigma_core: Evaluator,
    *,
    dimension: int = 1,
    period: float = 1.0,
    time_homogeneous: bool = False,
) -> ModelSpec:
    """Model whose diffusion is ``sigma_core`` cut smoothly to zero outside |x| <= C_sigma."""
    if not C_sigma > 0:
        raise ValueError(f"C_sigma must be > 0, got {C_sigma}")

    def diffusion(t, x, mu):
        core = np.asarray(sigma_core(t, x, mu), dtype=np.float64)
        core = np.broadcast_to(core, (x.shape[0], dimension, dimension))
        phi = smooth_cutoff(np.sqrt(np.sum(x * x, axis=-1)), C_sigma)
        return phi[:, None, None] * core

    return ModelSpec(dimension, period, drift_inward, diffusion, "bounded_diffusion",
                     time_homogeneous=time_homogeneous,
                     params={"C_sigma": C_sigma, "dimension": dimension, "period": period})
