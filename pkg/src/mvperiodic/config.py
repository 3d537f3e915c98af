"""TOML run configuration with strict validation.

Unknown keys are errors. Error messages carry the dotted path of the
offending field (``sim.dt``, ``task.t_end``, ...).
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import dynamics as dyn
from . import rng as _rng
from .measures import EmpiricalMeasure, GaussianLaw, dirac
from .particle_sim import SimConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "dump_config", "parse_config"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Gamma = tuple[float, float, float]  # a + b sin(2 pi t / theta) + c cos(2 pi t / theta)


def _gamma(g: Gamma, period: float) -> dyn.PeriodicFunction:
    return dyn.PeriodicFunction(*g, period=period)


class VarianceDriftModel(_Strict):
    name: Literal["variance_drift"]
    period: float = Field(1.0, gt=0)

    def build(self) -> dyn.ModelSpec:
        return dyn.variance_drift_model(self.period)


class OUModel(_Strict):
    name: Literal["ou"]
    kappa: float = Field(1.0, gt=0)
    sigma: float = 1.0
    dimension: int = Field(1, ge=1)
    period: float = Field(1.0, gt=0)

    def build(self) -> dyn.ModelSpec:
        return dyn.ou_model(self.kappa, self.sigma, self.dimension, self.period)


class ZeroModel(_Strict):
    name: Literal["zero"]
    dimension: int = Field(1, ge=1)
    period: float = Field(1.0, gt=0)

    def build(self) -> dyn.ModelSpec:
        return dyn.zero_model(self.dimension, self.period)


MapKind = Literal["linear", "negated-linear", "tanh-componentwise", "tanh", "constant"]


class PolynomialModel(_Strict):
    name: Literal["polynomial_interaction"]
    gamma1: Gamma
    gamma2: Gamma
    gamma3: Gamma
    b0: MapKind = "negated-linear"
    b0_scale: float = 1.0
    sigma0: MapKind = "constant"
    sigma0_scale: float = 1.0
    n: int = Field(1, ge=1)
    alpha: float = 0.0
    beta: float = 0.0
    dimension: int = Field(1, ge=1)
    period: float = Field(1.0, gt=0)

    def build(self) -> dyn.ModelSpec:
        p = self.period
        return dyn.polynomial_interaction_model(
            _gamma(self.gamma1, p), _gamma(self.gamma2, p), _gamma(self.gamma3, p),
            dyn.FieldMap(self.b0, self.b0_scale), dyn.FieldMap(self.sigma0, self.sigma0_scale, matrix=True),
            self.n, self.alpha, self.beta, dimension=self.dimension, period=p,
        )


class LandauModel(_Strict):
    name: Literal["landau_maxwell"]
    gamma2: Gamma
    gamma3: Gamma
    alpha: float
    beta: float
    period: float = Field(1.0, gt=0)

    def build(self) -> dyn.ModelSpec:
        p = self.period
        return dyn.landau_maxwell_model(_gamma(self.gamma2, p), _gamma(self.gamma3, p), self.alpha, self.beta, period=p)


class BoundedDiffusionModel(_Strict):
    """Inward drift -x/(1+|x|^2) with constant diffusion cut off outside |x| <= C_sigma."""

    name: Literal["bounded_diffusion"]
    C_sigma: float = Field(gt=0)
    sigma: float = 1.0
    dimension: int = Field(1, ge=1)
    period: float = Field(1.0, gt=0)

    def build(self) -> dyn.ModelSpec:
        d, s = self.dimension, self.sigma
        eye = s * np.eye(d)

        def core(t, x, mu):
            return np.broadcast_to(eye, (x.shape[0], d, d))

        return dyn.bounded_diffusion_model(dyn.inward_drift, self.C_sigma, core, dimension=d,
                                           period=self.period, time_homogeneous=True)


ModelSection = Annotated[
    Union[VarianceDriftModel, OUModel, ZeroModel, PolynomialModel, LandauModel, BoundedDiffusionModel],
    Field(discriminator="name"),
]


class SimSection(_Strict):
    n_particles: int = Field(1000, ge=2)
    dt: float = Field(1e-2, gt=0)
    seed: int = Field(0, ge=0)
    scheme: Optional[Literal["explicit", "tamed"]] = None  # None: tamed for superlinear drifts
    interaction: Literal["full", "subsample"] = "full"
    subsample_size: Optional[int] = Field(None, ge=1)
    record_stride: Optional[int] = Field(None, ge=1)
    threads: Optional[int] = Field(None, ge=1)


class InitSection(_Strict):
    """Initial law: point mass at ``x``, Gaussian sample, or a cloud CSV."""

    kind: Literal["dirac", "gaussian", "csv"] = "dirac"
    x: Optional[list[float]] = None
    mean: Optional[list[float]] = None
    variance: float = Field(1.0, ge=0)
    size: Optional[int] = Field(None, ge=2)
    path: Optional[str] = None


class SimulateTask(_Strict):
    kind: Literal["simulate"]
    t_end: float = Field(gt=0)
    r: float = Field(2.0, gt=0)
    vartheta: Optional[float] = Field(None, ge=1)
    init: InitSection = InitSection()


class FindPeriodicTask(_Strict):
    kind: Literal["find-periodic"]
    k_max: int = Field(40, ge=1)
    tol: float = Field(0.02, gt=0)
    vartheta: float = Field(2.0, ge=1)
    consecutive: int = Field(3, ge=1)
    verify: bool = True
    n_periods: int = Field(3, ge=1)
    factor: float = Field(2.0, gt=0)
    init: InitSection = InitSection()


class FindStationaryTask(_Strict):
    kind: Literal["find-stationary"]
    k_max: int = Field(40, ge=1)
    tol: float = Field(0.02, gt=0)
    vartheta: float = Field(2.0, ge=1)
    probe_period: float = Field(1.0, gt=0)
    init: InitSection = InitSection()


class VerifyTask(_Strict):
    kind: Literal["verify"]
    candidate: str
    vartheta: float = Field(2.0, ge=1)
    n_periods: int = Field(3, ge=1)
    factor: float = Field(2.0, gt=0)


_CONSTANT_NAMES = set(dyn.ConditionConstants.__dataclass_fields__)


class LyapunovCheck(_Strict):
    condition: Literal["H3a", "H3b", "H3c", "A3", "A4", "A5", "A6"]
    expect: Literal["pass", "fail"] = "pass"
    constants: dict[str, float] = {}

    @field_validator("constants")
    @classmethod
    def _known(cls, v):
        unknown = sorted(set(v) - _CONSTANT_NAMES)
        if unknown:
            raise ValueError(f"unknown constant(s) {unknown}")
        return v


class CheckLyapunovTask(_Strict):
    kind: Literal["check-lyapunov"]
    lyapunov: Literal["quadratic", "power", "smoothed_power", "cutoff_quartic"] = "quadratic"
    q: Optional[float] = Field(None, gt=1)
    C_sigma: Optional[float] = Field(None, gt=0)
    r_max: float = Field(5.0, gt=0)
    n_t: int = Field(8, ge=1)
    n_radii: int = Field(24, ge=2)
    n_directions: int = Field(8, ge=1)
    n_mu: int = Field(8, ge=1)
    checks: list[LyapunovCheck] = Field(min_length=1)


class OracleCompareTask(_Strict):
    """Simulated mean/variance at time t against the closed-form law.

    variance_drift models compare with the law from ``start``; OU models
    with the stationary law (meaningful once t is several relaxation times).
    """

    kind: Literal["oracle-compare"]
    t: float = Field(1.0, gt=0)
    start: Literal["dirac", "standard_normal"] = "dirac"
    x0: float = 0.0
    mean_tol: float = Field(0.03, gt=0)
    var_tol: float = Field(0.05, gt=0)


TaskSection = Annotated[
    Union[SimulateTask, FindPeriodicTask, FindStationaryTask, VerifyTask, CheckLyapunovTask, OracleCompareTask],
    Field(discriminator="kind"),
]


class OutputSection(_Strict):
    directory: str = "mvperiodic-out"


class RunConfig(_Strict):
    model: ModelSection
    sim: SimSection = SimSection()
    task: TaskSection
    output: OutputSection = OutputSection()

    def build_model(self) -> dyn.ModelSpec:
        return self.model.build()

    def sim_config(self) -> SimConfig:
        s = self.sim
        scheme = s.scheme
        if scheme is None:
            scheme = "tamed" if isinstance(self.model, PolynomialModel) else "explicit"
        return SimConfig(
            n_particles=s.n_particles, dt=s.dt, seed=s.seed, scheme=scheme, interaction=s.interaction,
            subsample_size=s.subsample_size, record_stride=s.record_stride, threads=s.threads,
        )

    def initial_measure(self, base: Path | None = None) -> EmpiricalMeasure:
        """Initial law from ``task.init``; Gaussian draws use the "init-sample" substream."""
        init = getattr(self.task, "init", InitSection())
        d = self.build_model().dimension
        if init.kind == "dirac":
            x = np.zeros(d) if init.x is None else np.asarray(init.x, dtype=np.float64)
            if x.shape != (d,):
                raise ConfigError(f"task.init.x: expected {d} coordinates, got {x.shape[0]}")
            return dirac(x)
        if init.kind == "gaussian":
            n = init.size or self.sim.n_particles
            mean = np.zeros(d) if init.mean is None else np.asarray(init.mean, dtype=np.float64)
            if mean.shape != (d,):
                raise ConfigError(f"task.init.mean: expected {d} coordinates, got {mean.shape[0]}")
            gen = np.random.default_rng(_rng.derive_seed(self.sim.seed, "init-sample"))
            pts = mean + np.sqrt(init.variance) * gen.standard_normal((n, d))
            return EmpiricalMeasure(pts)
        if init.path is None:
            raise ConfigError("task.init.path: required when kind = 'csv'")
        path = Path(init.path)
        if base is not None and not path.is_absolute():
            path = base / path
        return EmpiricalMeasure.from_csv(path)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    try:
        cfg.build_model()
        cfg.sim_config()
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from None
    return parse_config(data)


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(mode="json", exclude_none=True))
