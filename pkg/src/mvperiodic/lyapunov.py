"""Generator evaluation and sampled verification of drift conditions.

A grid check can only report that no violation was found on the sampled
plan; every report carries its plan so the statement is reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import ConditionConstants, ModelSpec
from .measures import EmpiricalMeasure, dirac, moment

__all__ = [
    "LyapunovSpec",
    "GeneratorValue",
    "GeneratorError",
    "SamplePlan",
    "ConditionReport",
    "FitResult",
    "builtin_lyapunov",
    "generator_apply",
    "check_condition",
    "fit_constants",
    "CONDITIONS",
]

CONDITIONS = ("H3a", "H3b", "H3c", "A3", "A4", "A5", "A6")
VIOLATION_TOL = 1e-9
HESS_STEP = 1e-4

Field = Callable[[float, np.ndarray], np.ndarray]


def _radius(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class LyapunovSpec:
    """Test function V(t, x) with its derivatives, batched over rows of x.

    ``value``/``dt_value`` return ``(m,)``, ``grad`` ``(m, d)``, ``hess``
    ``(m, d, d)``.
    """

    value: Field
    dt_value: Field
    grad: Field
    hess: Field
    name: str = "V"
    derivative_mode: str = "analytic"
    h: float | None = None

    def finite_difference(self, h: float = 1e-5) -> "LyapunovSpec":
        """Same V with derivatives replaced by central differences.

        Gradient and time steps are ``h (1 + |x|)``; Hessian steps are
        ``1e-4 (1 + |x|)``.
        """
        V = self.value

        def dt_value(t, x):
            return (V(t + h, x) - V(t - h, x)) / (2 * h)

        def grad(t, x):
            x = np.asarray(x, dtype=np.float64)
            step = h * (1.0 + _radius(x))
            out = np.empty_like(x)
            for i in range(x.shape[1]):
                e = np.zeros_like(x)
                e[:, i] = step
                out[:, i] = (V(t, x + e) - V(t, x - e)) / (2 * step)
            return out

        def hess(t, x):
            x = np.asarray(x, dtype=np.float64)
            m, d = x.shape
            step = HESS_STEP * (1.0 + _radius(x))
            out = np.empty((m, d, d))
            v0 = V(t, x)
            for i in range(d):
                ei = np.zeros_like(x)
                ei[:, i] = step
                out[:, i, i] = (V(t, x + ei) - 2 * v0 + V(t, x - ei)) / step**2
                for j in range(i + 1, d):
                    ej = np.zeros_like(x)
                    ej[:, j] = step
                    val = (V(t, x + ei + ej) - V(t, x + ei - ej) - V(t, x - ei + ej) + V(t, x - ei - ej)) / (4 * step**2)
                    out[:, i, j] = out[:, j, i] = val
            return out

        return LyapunovSpec(V, dt_value, grad, hess, self.name, "finite_difference", h)


def _zero_t(t, x):
    return np.zeros(np.asarray(x).shape[0])


def _quadratic() -> LyapunovSpec:
    def value(t, x):
        return np.sum(x * x, axis=-1)

    def grad(t, x):
        return 2.0 * np.asarray(x, dtype=np.float64)

    def hess(t, x):
        m, d = np.asarray(x).shape
        return np.broadcast_to(2.0 * np.eye(d), (m, d, d)).copy()

    return LyapunovSpec(value, _zero_t, grad, hess, "quadratic")


def _radial(name: str, q: float, g, g1, g2) -> LyapunovSpec:
    """V = g(|x|^{2q}) from g and its first two derivatives."""

    def parts(x):
        x = np.asarray(x, dtype=np.float64)
        r2 = np.sum(x * x, axis=-1)
        y = r2**q
        with np.errstate(divide="ignore", invalid="ignore"):
            pw1 = np.where(r2 > 0, r2 ** (q - 1), 0.0)  # |x|^{2(q-1)}
            pw2 = np.where(r2 > 0, r2 ** (q - 2), 0.0)  # |x|^{2(q-2)}
        return x, r2, y, pw1, pw2

    def value(t, x):
        return g(np.sum(np.asarray(x, dtype=np.float64) ** 2, axis=-1) ** q)

    def grad(t, x):
        x, r2, y, pw1, _ = parts(x)
        return (2 * q * g1(y) * pw1)[:, None] * x

    def hess(t, x):
        x, r2, y, pw1, pw2 = parts(x)
        d = x.shape[1]
        xx = x[:, :, None] * x[:, None, :]
        eye = np.eye(d)[None]
        outer = (4 * q * q * g2(y) * pw1 * pw1)[:, None, None] * xx
        inner = (2 * q * g1(y) * pw2)[:, None, None] * (2 * (q - 1) * xx + r2[:, None, None] * eye)
        return outer + inner

    return LyapunovSpec(value, _zero_t, grad, hess, name)


def builtin_lyapunov(kind: str, q: float | None = None, C_sigma: float | None = None) -> LyapunovSpec:
    """Built-in test functions.

    ``quadratic``: |x|^2. ``power``: |x|^{2q}. ``smoothed_power``: g(|x|^{2q})
    with g(y) = y - e^{-y}. ``cutoff_quartic``: g(|x|^{2q}) with
    g(y) = (y - C_sigma^{2q})^4 above C_sigma^{2q} and 0 below.
    """
    if kind == "quadratic":
        return _quadratic()
    if kind == "constant":
        const = 0.0 if q is None else float(q)
        return LyapunovSpec(
            lambda t, x: np.full(np.asarray(x).shape[0], const),
            _zero_t,
            lambda t, x: np.zeros_like(np.asarray(x, dtype=np.float64)),
            lambda t, x: np.zeros(np.asarray(x).shape + (np.asarray(x).shape[1],)),
            "constant",
        )
    if q is None or not q > 1:
        raise ValueError(f"{kind} needs q > 1, got {q}")
    if kind == "power":
        return _radial(f"power(q={q:g})", q, lambda y: y, np.ones_like, np.zeros_like)
    if kind == "smoothed_power":
        return _radial(
            f"smoothed_power(q={q:g})", q,
            lambda y: y - np.exp(-y), lambda y: 1 + np.exp(-y), lambda y: -np.exp(-y),
        )
    if kind == "cutoff_quartic":
        if C_sigma is None or not C_sigma > 0:
            raise ValueError(f"cutoff_quartic needs C_sigma > 0, got {C_sigma}")
        c = C_sigma ** (2 * q)

        def over(y):
            return np.maximum(y - c, 0.0)

        return _radial(
            f"cutoff_quartic(q={q:g}, C_sigma={C_sigma:g})", q,
            lambda y: over(y) ** 4, lambda y: 4 * over(y) ** 3, lambda y: 12 * over(y) ** 2,
        )
    raise ValueError(f"unknown Lyapunov kind {kind!r}")


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class GeneratorValue:
    total: np.ndarray
    time_part: np.ndarray
    drift_part: np.ndarray
    diffusion_part: np.ndarray


def generator_apply(V: LyapunovSpec, model: ModelSpec, t: float, x, mu: EmpiricalMeasure) -> GeneratorValue:
    """(LV)(t, x, mu) = dV/dt + <b, grad V> + trace(sigma sigma^T Hess V) / 2.

    ``x`` may be one point ``(d,)`` or a batch ``(m, d)``; each piece is
    returned separately alongside the total.
    """
    xb = np.asarray(x, dtype=np.float64).reshape(-1, model.dimension)
    if mu.dimension != model.dimension:
        raise ValueError(f"measure dimension {mu.dimension} != model dimension {model.dimension}")

    def run(piece, fn):
        try:
            return np.asarray(fn(), dtype=np.float64)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise GeneratorError(f"{piece} evaluation failed: {exc}") from exc

    dtv = run("dt_V", lambda: V.dt_value(t, xb))
    b = run("drift", lambda: model.drift(t, xb, mu))
    gv = run("grad_V", lambda: V.grad(t, xb))
    sig = run("diffusion", lambda: model.diffusion(t, xb, mu))
    hv = run("hess_V", lambda: V.hess(t, xb))
    drift_part = np.sum(b * gv, axis=-1)
    a = np.einsum("mik,mjk->mij", sig, sig)
    diff_part = 0.5 * np.einsum("mij,mji->m", a, hv)
    total = dtv + drift_part + diff_part
    return GeneratorValue(total, dtv, drift_part, diff_part)


@dataclass
class SamplePlan:
    """Sampled (t, x, mu) triples: the full product of the three lists."""

    t_grid: np.ndarray
    x_samples: np.ndarray
    mu_samples: list[EmpiricalMeasure]
    r_max: float
    seed: int = 0

    @classmethod
    def build(
        cls,
        dimension: int,
        period: float = 1.0,
        *,
        r_max: float = 5.0,
        n_t: int = 8,
        n_radii: int = 24,
        n_directions: int = 8,
        n_mu: int = 8,
        mu_size: int = 32,
        seed: int = 0,
    ) -> "SamplePlan":
        """Radial grid x random directions for x; Gaussian clouds for mu.

        The mu sample always starts with the point mass at the origin; the
        rest have means uniform in [-r_max, r_max]^d and variances in [0.1, 4].
        """
        gen = np.random.default_rng(seed)
        t_grid = np.arange(n_t) * (period / n_t)
        radii = np.linspace(0.0, r_max, n_radii + 1)[1:]
        if dimension == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            dirs = gen.standard_normal((n_directions, dimension))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        xs = np.concatenate([np.zeros((1, dimension)), (radii[:, None, None] * dirs[None]).reshape(-1, dimension)])
        mus = [dirac(np.zeros(dimension))]
        for _ in range(n_mu - 1):
            mean = gen.uniform(-r_max, r_max, dimension)
            var = gen.uniform(0.1, 4.0)
            mus.append(EmpiricalMeasure(mean + math.sqrt(var) * gen.standard_normal((mu_size, dimension))))
        return cls(t_grid, xs, mus, r_max, seed)

    @property
    def n_triples(self) -> int:
        return len(self.t_grid) * len(self.x_samples) * len(self.mu_samples)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "r_max": self.r_max,
            "t_grid": self.t_grid.tolist(),
            "x_samples": self.x_samples.tolist(),
            "mu_samples": [m.to_json() for m in self.mu_samples],
        }


@dataclass
class _Table:
    """Quantities on the (t, mu, x) product, each of shape (n_t, n_mu, n_x)."""

    t: np.ndarray
    radius: np.ndarray
    mu_scale: np.ndarray
    bx: np.ndarray
    sig2: np.ndarray
    lv: np.ndarray | None
    v: np.ndarray | None
    v0: np.ndarray | None
    sigma_max: np.ndarray
    mu_moment: Callable[[float], np.ndarray]


def _tabulate(V: LyapunovSpec | None, model: ModelSpec, plan: SamplePlan) -> _Table:
    xs = plan.x_samples
    nt, nm, nx = len(plan.t_grid), len(plan.mu_samples), xs.shape[0]
    shape = (nt, nm, nx)
    bx = np.empty(shape)
    sig2 = np.empty(shape)
    smax = np.empty(shape)
    lv = np.empty(shape) if V is not None else None
    v = np.empty(shape) if V is not None else None
    for i, t in enumerate(plan.t_grid):
        for j, mu in enumerate(plan.mu_samples):
            b = model.drift(t, xs, mu)
            s = model.diffusion(t, xs, mu)
            bx[i, j] = np.sum(b * xs, axis=-1)
            sig2[i, j] = np.sum(s * s, axis=(-2, -1))
            smax[i, j] = np.max(np.abs(s), axis=(-2, -1))
            if V is not None:
                lv[i, j] = generator_apply(V, model, t, xs, mu).total
                v[i, j] = V.value(t, xs)
    v0 = None
    if V is not None:
        v0 = np.broadcast_to(V.value(0.0, xs)[None, None, :], shape)
    radius = np.broadcast_to(_radius(xs)[None, None, :], shape)
    tt = np.broadcast_to(plan.t_grid[:, None, None], shape)
    scale = np.array([math.sqrt(moment(mu, 2)) for mu in plan.mu_samples])
    mu_scale = np.broadcast_to(scale[None, :, None], shape)

    def mu_moment(p: float) -> np.ndarray:
        vals = np.array([moment(mu, p) for mu in plan.mu_samples])
        return np.broadcast_to(vals[None, :, None], shape)

    return _Table(tt, radius, mu_scale, bx, sig2, lv, v, v0, smax, mu_moment)


@dataclass
class ConditionReport:
    condition: str
    passed: bool
    violations: list[dict]
    n_checked: int
    constants: ConditionConstants
    plan: SamplePlan
    lyapunov: str | None = None
    n_violations: int = 0

    @property
    def statement(self) -> str:
        if self.passed:
            return f"{self.condition}: no violation found on the sampled plan ({self.n_checked} checks)"
        return f"{self.condition}: {self.n_violations} violation(s) among {self.n_checked} checks"

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "passed": self.passed,
            "statement": self.statement,
            "n_checked": self.n_checked,
            "n_violations": self.n_violations,
            "lyapunov": self.lyapunov,
            "constants": self.constants.to_json(),
            "violations": self.violations,
            "plan": self.plan.to_json(),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
        return path


def _inequalities(cond: str, c: ConditionConstants, tab: _Table, d: int) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(label, lhs, rhs) triples; each requires lhs <= rhs everywhere."""
    if cond in ("H3a", "H3b", "H3c") and tab.lv is None:
        raise ValueError(f"{cond} needs a Lyapunov function")
    if cond == "H3a":
        return [
            ("V >= -C0", -tab.v, np.full_like(tab.v, c.C0)),
            ("LV", tab.lv, -c.C1 * tab.radius**c.r + c.C2 * (1 + tab.mu_moment(c.vartheta))),
        ]
    if cond == "H3b":
        return [
            ("V >= -C0", -tab.v, np.full_like(tab.v, c.C0)),
            ("LV", tab.lv, -c.C1 * tab.radius**c.r + c.C2 * tab.mu_moment(c.r) + c.C3),
        ]
    if cond == "H3c":
        return [
            ("V(t,x) >= V(0,x)", tab.v0, tab.v),
            ("V(0,x) >= C1|x|^r - C2", c.C1 * tab.radius**c.r - c.C2, tab.v0),
            ("LV <= 0", tab.lv, np.zeros_like(tab.lv)),
        ]
    if cond == "A3":
        return [("<b,x>", tab.bx, -c.Kb4 * tab.radius**2 + c.Kb5 * (1 + tab.mu_moment(c.vartheta)))]
    if cond == "A4":
        return [("<b,x>", tab.bx, -c.Kb4 * tab.radius**c.r + c.Kb5 * (1 + tab.mu_moment(c.vartheta)))]
    if cond == "A5":
        return [("<b,x> + (q-1+d/2)|sigma|^2", tab.bx + (c.q - 1 + d / 2) * tab.sig2, np.zeros_like(tab.bx))]
    if cond == "A6":
        outside = tab.radius > c.C_sigma
        return [
            ("<b,x> <= 0", tab.bx, np.zeros_like(tab.bx)),
            ("sigma = 0 for |x| > C_sigma", np.where(outside, tab.sigma_max, 0.0), np.zeros_like(tab.bx)),
        ]
    raise ValueError(f"unknown condition {cond!r}; choose from {CONDITIONS}")


def _excess(lhs: np.ndarray, rhs: np.ndarray, tol: float = VIOLATION_TOL) -> np.ndarray:
    """Amount by which lhs exceeds rhs beyond a scale-relative tolerance (else 0)."""
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    gap = lhs - rhs
    return np.where(gap > tol * scale, gap, 0.0)


def check_condition(
    V: LyapunovSpec | None,
    model: ModelSpec,
    condition: str,
    constants: ConditionConstants,
    plan: SamplePlan,
    *,
    max_reported: int = 100,
) -> ConditionReport:
    """Evaluate one condition on every (t, x, mu) triple of ``plan``.

    Passes iff no inequality is exceeded by more than 1e-9 relative to the
    magnitude of its two sides.
    """
    constants.validate_for(condition)
    tab = _tabulate(V if condition.startswith("H3") else None, model, plan)
    violations = []
    n_checked = n_bad = 0
    for label, lhs, rhs in _inequalities(condition, constants, tab, model.dimension):
        ex = _excess(lhs, rhs)
        n_checked += ex.size
        n_bad += int(np.count_nonzero(ex))
        for i, j, k in zip(*np.nonzero(ex)):
            if len(violations) >= max_reported:
                break
            violations.append({
                "inequality": label,
                "t": float(plan.t_grid[i]),
                "mu_index": int(j),
                "x": plan.x_samples[k].tolist(),
                "lhs": float(lhs[i, j, k]),
                "rhs": float(rhs[i, j, k]),
                "slack": float(lhs[i, j, k] - rhs[i, j, k]),
            })
    return ConditionReport(condition, n_bad == 0, violations, n_checked, constants, plan,
                           V.name if V is not None else None, n_bad)


@dataclass
class FitResult:
    constants: ConditionConstants
    feasible: bool
    slack: float
    details: dict = field(default_factory=dict)


_C1_GRID = np.logspace(-6, 6, 121)
_RATIOS = np.concatenate([[0.0], np.linspace(0.02, 0.98, 49)])


def fit_constants(
    V: LyapunovSpec | None,
    model: ModelSpec,
    condition: str,
    r: float,
    vartheta: float,
    plan: SamplePlan,
    *,
    eps: float = 1e-6,
    refine_steps: int = 60,
) -> FitResult:
    """Search for constants making ``condition`` hold on ``plan``.

    Each sample gives one linear inequality in the constants. For a trial
    coercivity constant C1 the additive constants are fitted on the inner
    half of the plan (|x| and ||mu||_2 at most half their sampled maxima)
    and then tested on the whole plan; the total positive slack there is
    the objective. C1 is maximized over a log grid and refined by
    bisection; for H3b the ratio C2/C1 is scanned and C1 - C2 maximized.
    A condition whose required constants keep growing with the sampling
    radius leaves positive slack for every C1 >= eps and is reported
    infeasible.
    """
    if condition not in ("H3a", "H3b", "A3", "A4"):
        raise ValueError(f"fit_constants supports H3a, H3b, A3, A4; got {condition!r}")
    radii = _radius(plan.x_samples)
    if np.ptp(radii) == 0:
        raise ValueError("degenerate sample plan: all |x| equal")
    r_eff = 2.0 if condition == "A3" else r
    tab = _tabulate(V if condition.startswith("H3") else None, model, plan)
    f = tab.lv if condition.startswith("H3") else tab.bx
    g = tab.radius**r_eff
    inner = (tab.radius <= 0.5 * tab.radius.max()) & (tab.mu_scale <= 0.5 * tab.mu_scale.max())

    if condition == "H3b":
        h = tab.mu_moment(r)

        def fit_add(c1, ratio):
            req = f + c1 * g - ratio * c1 * h
            add = max(0.0, float(req[inner].max()))
            slack = float(_excess(f, -c1 * g + ratio * c1 * h + add).sum())
            return add, slack
    else:
        den = 1.0 + tab.mu_moment(vartheta)

        def fit_add(c1, ratio):
            req = (f + c1 * g) / den
            add = max(0.0, float(req[inner].max()))
            slack = float(_excess(f, -c1 * g + add * den).sum())
            return add, slack

    def best_c1(ratio):
        feasible = [c for c in _C1_GRID if c >= eps and fit_add(c, ratio)[1] == 0.0]
        if not feasible:
            return None
        lo = max(feasible)
        bigger = _C1_GRID[_C1_GRID > lo]
        if bigger.size == 0:
            return lo
        hi = float(bigger[0])
        for _ in range(refine_steps):
            mid = 0.5 * (lo + hi)
            if fit_add(mid, ratio)[1] == 0.0:
                lo = mid
            else:
                hi = mid
        return lo

    ratios = _RATIOS if condition == "H3b" else [0.0]
    best = None
    for ratio in ratios:
        c1 = best_c1(ratio)
        if c1 is None:
            continue
        score = c1 * (1 - ratio)
        if best is None or score > best[0]:
            best = (score, c1, ratio)

    if best is None:
        c1, ratio = eps, ratios[-1] if condition == "H3b" else 0.0
        add, slack = fit_add(c1, ratio)
        feasible = False
    else:
        _, c1, ratio = best
        add, slack = fit_add(c1, ratio)
        feasible = slack == 0.0

    if condition == "H3a":
        consts = ConditionConstants(C1=c1, C2=add, r=r, vartheta=vartheta)
    elif condition == "H3b":
        consts = ConditionConstants(C1=c1, C2=ratio * c1, C3=add, r=r, vartheta=vartheta)
    else:
        consts = ConditionConstants(Kb4=c1, Kb5=add, r=r_eff, vartheta=vartheta)
    return FitResult(consts, feasible, slack, {"ratio": ratio, "n_samples": int(f.size)})
