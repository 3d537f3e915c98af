import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvperiodic.dynamics import (
    ConditionConstants,
    ModelSpec,
    PeriodicFunction,
    bounded_diffusion_model,
    default_landau_q,
    inward_drift,
    landau_h3b_constants,
    landau_maxwell_model,
    ou_model,
    variance_drift_model,
    zero_model,
)
from mvperiodic.lyapunov import (
    GeneratorError,
    SamplePlan,
    builtin_lyapunov,
    check_condition,
    fit_constants,
    generator_apply,
)
from mvperiodic.measures import EmpiricalMeasure, dirac
from mvperiodic.particle_sim import SimConfig, simulate


def unit_core(t, x, mu):
    return np.ones((x.shape[0], 1, 1))


@pytest.fixture(scope="module")
def a6_model():
    return bounded_diffusion_model(inward_drift, 1.0, unit_core, time_homogeneous=True)


@pytest.fixture(scope="module")
def plan1():
    return SamplePlan.build(1, 1.0, r_max=5.0, seed=0)


class TestBuiltins:
    def test_quadratic(self):
        V = builtin_lyapunov("quadratic")
        x = np.array([[np.sqrt(2.0), np.sqrt(2.0)]])  # |x| = 2
        assert V.value(0.0, x)[0] == pytest.approx(4.0)
        assert np.allclose(V.grad(0.0, x), 2 * x)
        assert np.allclose(V.hess(0.0, x)[0], 2 * np.eye(2))
        assert V.dt_value(0.3, x)[0] == 0.0

    def test_power(self):
        V = builtin_lyapunov("power", q=2)
        x = np.array([[2.0]])
        assert V.value(0.0, x)[0] == pytest.approx(16.0)
        assert V.grad(0.0, x)[0, 0] == pytest.approx(32.0)
        assert V.hess(0.0, x)[0, 0, 0] == pytest.approx(48.0)

    def test_smoothed_power_is_flat_at_origin(self):
        V = builtin_lyapunov("smoothed_power", q=2)
        origin = np.zeros((1, 3))
        assert V.value(0.0, origin)[0] == -1.0
        assert np.all(V.grad(0.0, origin) == 0.0)

    def test_cutoff_vanishes_inside(self):
        V = builtin_lyapunov("cutoff_quartic", q=2, C_sigma=1.5)
        x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.49]])
        assert np.all(V.value(0.0, x) == 0.0)
        assert np.all(V.grad(0.0, x) == 0.0)
        assert np.all(V.hess(0.0, x) == 0.0)
        assert V.value(0.0, np.array([[2.0, 0.0]]))[0] > 0

    @pytest.mark.parametrize(
        "kind, kwargs",
        [("power", {"q": 1.0}), ("smoothed_power", {}), ("cutoff_quartic", {"q": 2}),
         ("cutoff_quartic", {"q": 2, "C_sigma": 0.0}), ("hyperbolic", {"q": 2})],
    )
    def test_invalid(self, kind, kwargs):
        with pytest.raises(ValueError):
            builtin_lyapunov(kind, **kwargs)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(["quadratic", "power", "smoothed_power", "cutoff_quartic"]),
           st.integers(1, 3), st.integers(0, 2**31))
    def test_finite_difference_matches_analytic(self, kind, d, seed):
        V = builtin_lyapunov(kind, q=2.5, C_sigma=1.0)
        Vfd = V.finite_difference()
        x = np.random.default_rng(seed).normal(size=(5, d)) * 2
        scale = 1.0 + np.abs(V.value(0.0, x)).max()
        assert np.allclose(V.grad(0.0, x), Vfd.grad(0.0, x), rtol=1e-5, atol=1e-6 * scale)
        assert np.allclose(V.hess(0.0, x), Vfd.hess(0.0, x), rtol=1e-4, atol=1e-4 * scale)


class TestGenerator:
    def test_constant_is_annihilated(self, gen):
        mu = EmpiricalMeasure(gen.normal(size=(20, 1)))
        out = generator_apply(builtin_lyapunov("constant", q=7.0), ou_model(), 0.2, gen.normal(size=(9, 1)), mu)
        assert np.all(out.total == 0.0)

    def test_variance_drift_quadratic(self):
        # Var(mu) = 2: drift 2, so <b, 2x> = 12 at x = 3; diffusion adds 1
        mu = EmpiricalMeasure([[-np.sqrt(2.0)], [np.sqrt(2.0)]])
        out = generator_apply(builtin_lyapunov("quadratic"), variance_drift_model(), 0.0, [3.0], mu)
        assert out.drift_part[0] == pytest.approx(12.0)
        assert out.diffusion_part[0] == pytest.approx(1.0)
        assert out.total[0] == pytest.approx(13.0)

    def test_ou_quadratic(self):
        out = generator_apply(builtin_lyapunov("quadratic"), ou_model(), 0.0, [1.0], dirac(0.0))
        assert out.total[0] == pytest.approx(-1.0)

    def test_batch_matches_single_points(self, gen):
        V = builtin_lyapunov("power", q=2)
        mu = EmpiricalMeasure(gen.normal(size=(10, 1)))
        xs = gen.normal(size=(6, 1))
        batch = generator_apply(V, variance_drift_model(), 0.0, xs, mu).total
        single = [generator_apply(V, variance_drift_model(), 0.0, x, mu).total[0] for x in xs]
        assert np.allclose(batch, single, rtol=1e-14)

    def test_diffusion_scaling_is_quadratic(self, gen):
        V = builtin_lyapunov("smoothed_power", q=2)
        x = gen.normal(size=(8, 2))
        mu = dirac([0.0, 0.0])
        base = generator_apply(V, ou_model(sigma=1.0, dimension=2), 0.0, x, mu).diffusion_part
        for c in (0.5, 3.0):
            scaled = generator_apply(V, ou_model(sigma=c, dimension=2), 0.0, x, mu).diffusion_part
            assert np.allclose(scaled, c * c * base, rtol=1e-12)

    def test_error_names_failing_piece(self):
        def bad_drift(t, x, mu):
            raise FloatingPointError("overflow")

        model = ModelSpec(1, 1.0, bad_drift, lambda t, x, mu: np.zeros((x.shape[0], 1, 1)))
        with pytest.raises(GeneratorError, match="drift"):
            generator_apply(builtin_lyapunov("quadratic"), model, 0.0, [1.0], dirac(0.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            generator_apply(builtin_lyapunov("quadratic"), ou_model(), 0.0, [1.0], dirac([0.0, 0.0]))

    def test_smoothed_power_nonpositive_where_a5_holds(self, gen):
        # LV <= g'(|x|^{2q}) 2q |x|^{2q-2} (<b,x> + (q - 1/2)|sigma|^2) and q - 1/2 <= q - 1 + d/2
        q = 2.0
        V = builtin_lyapunov("smoothed_power", q=q)
        for d in (1, 2):
            model = ou_model(sigma=0.5, dimension=d)
            x = gen.normal(size=(400, d)) * 2
            mu = dirac(np.zeros(d))
            bx = np.sum(model.drift(0.0, x, mu) * x, axis=1)
            sig2 = np.sum(model.diffusion(0.0, x, mu) ** 2, axis=(1, 2))
            a5 = bx + (q - 1 + d / 2) * sig2 <= 0
            assert a5.any() and (~a5).any()
            assert np.all(generator_apply(V, model, 0.0, x[a5], mu).total <= 1e-12)


class TestSamplePlan:
    def test_shape(self):
        plan = SamplePlan.build(2, 0.5, n_t=4, n_radii=5, n_directions=3, n_mu=2, seed=1)
        assert plan.x_samples.shape == (1 + 5 * 3, 2)
        assert np.allclose(plan.t_grid, [0, 0.125, 0.25, 0.375])
        assert plan.n_triples == 4 * 16 * 2
        assert np.all(plan.mu_samples[0].points == 0)

    def test_seeded(self):
        a, b = SamplePlan.build(3, seed=5), SamplePlan.build(3, seed=5)
        assert np.array_equal(a.x_samples, b.x_samples)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())


class TestCheckCondition:
    def test_a5_deterministic_contraction(self, plan1):
        c = ConditionConstants(q=2.0, vartheta=2.0)
        assert check_condition(None, ou_model(sigma=0.0), "A5", c, plan1).passed
        rep = check_condition(None, ou_model(sigma=1.0), "A5", c, plan1)
        # -x^2 + 1.5 > 0 exactly for |x| < sqrt(1.5)
        assert not rep.passed
        assert all(abs(v["x"][0]) < np.sqrt(1.5) for v in rep.violations)

    @pytest.mark.parametrize("kb4, ok", [(0.9, True), (1.0, True), (1.5, False)])
    def test_a3_on_ou(self, plan1, kb4, ok):
        rep = check_condition(None, ou_model(), "A3", ConditionConstants(Kb4=kb4, Kb5=1.0, vartheta=1.0), plan1)
        assert rep.passed is ok
        assert (rep.n_violations == 0) is ok

    def test_a6(self, plan1, a6_model):
        c = ConditionConstants(C_sigma=1.0)
        assert check_condition(None, a6_model, "A6", c, plan1).passed
        rep = check_condition(None, ou_model(), "A6", c, plan1)
        assert not rep.passed and {v["inequality"] for v in rep.violations} == {"sigma = 0 for |x| > C_sigma"}

    def test_h3c_with_cutoff(self, plan1, a6_model):
        c = ConditionConstants(C1=1.0, C2=2.0, r=2.0, vartheta=1.0)
        rep = check_condition(builtin_lyapunov("cutoff_quartic", q=2, C_sigma=1.0), a6_model, "H3c", c, plan1)
        assert rep.passed and rep.n_checked == 3 * plan1.n_triples

    def test_h3a_on_ou(self, plan1):
        V = builtin_lyapunov("quadratic")
        good = ConditionConstants(C1=2.0, C2=1.0, r=2.0, vartheta=1.0)
        assert check_condition(V, ou_model(), "H3a", good, plan1).passed
        assert not check_condition(V, ou_model(), "H3a", good.replace(C1=2.5), plan1).passed

    def test_reported_violations_are_capped(self, plan1):
        rep = check_condition(builtin_lyapunov("quadratic"), ou_model(), "H3a",
                              ConditionConstants(C1=10.0, C2=0.1, r=2.0, vartheta=1.0), plan1, max_reported=5)
        assert len(rep.violations) == 5 < rep.n_violations
        assert all(v["slack"] > 0 for v in rep.violations)

    def test_invalid_constants_and_condition(self, plan1):
        V = builtin_lyapunov("quadratic")
        with pytest.raises(ValueError, match="C1 > C2"):
            check_condition(V, ou_model(), "H3b", ConditionConstants(C1=1.0, C2=1.0, r=2.0), plan1)
        with pytest.raises(ValueError, match="r > vartheta"):
            check_condition(V, ou_model(), "H3a", ConditionConstants(r=1.0, vartheta=1.0), plan1)
        with pytest.raises(ValueError, match="Lyapunov"):
            check_condition(None, ou_model(), "H3a", ConditionConstants(), plan1)
        with pytest.raises(ValueError, match="unknown condition"):
            check_condition(None, ou_model(), "B7", ConditionConstants(), plan1)

    def test_save(self, tmp_path, plan1):
        rep = check_condition(None, ou_model(), "A3", ConditionConstants(Kb4=1.5, vartheta=1.0), plan1)
        path = rep.save(tmp_path / "sub" / "a3.json")
        data = json.loads(path.read_text())
        assert data["passed"] is False and data["n_violations"] == rep.n_violations
        assert data["statement"].startswith("A3:") and len(data["plan"]["t_grid"]) == 8

    def test_statement_is_sample_bound(self, plan1):
        rep = check_condition(None, ou_model(), "A3", ConditionConstants(Kb4=1.0, vartheta=1.0), plan1)
        assert "sampled plan" in rep.statement


class TestFitConstants:
    def test_ou_quadratic_h3a(self, plan1):
        V = builtin_lyapunov("quadratic")
        fit = fit_constants(V, ou_model(), "H3a", 2.0, 1.0, plan1)
        assert fit.feasible and fit.slack == 0.0
        # LV = -2|x|^2 + 1: C1 cannot exceed 2 beyond the check's 1e-9 relative tolerance
        assert 1.9 <= fit.constants.C1 <= 2.0 * (1 + 1e-8)
        assert check_condition(V, ou_model(), "H3a", fit.constants, plan1).passed

    def test_ou_a3(self, plan1):
        fit = fit_constants(None, ou_model(), "A3", 2.0, 1.0, plan1)
        assert fit.feasible and fit.constants.Kb4 == pytest.approx(1.0, rel=1e-6)

    def test_flat_generator_is_infeasible(self, plan1):
        # LV = 0 cannot be bounded by -C1|x|^2 + C2(1 + ||mu||) uniformly in |x|
        fit = fit_constants(builtin_lyapunov("quadratic"), zero_model(), "H3a", 2.0, 1.0, plan1)
        assert not fit.feasible and fit.slack > 0

    def test_landau_desk_recovers_displayed_margin(self):
        grid = np.arange(1000) / 1000
        g2, g3 = PeriodicFunction(1.0, 0.2), PeriodicFunction(0.3)
        q = default_landau_q(g2, g3, 0.1, 0.1, grid)
        braces = landau_h3b_constants(g2, g3, 0.1, 0.1, q, grid)
        model = landau_maxwell_model(g2, g3, 0.1, 0.1)
        plan = SamplePlan.build(3, 1.0, r_max=3.0, n_t=4, n_radii=12, n_directions=8, n_mu=6, seed=2)
        fit = fit_constants(builtin_lyapunov("power", q=q), model, "H3b", 2 * q, 2.0, plan)
        assert fit.feasible
        c = fit.constants
        assert c.C1 - c.C2 >= 0.9 * (braces.C1 - braces.C2)

    def test_degenerate_plan(self):
        plan = SamplePlan(np.array([0.0]), np.zeros((3, 1)), [dirac(0.0)], 1.0)
        with pytest.raises(ValueError, match="degenerate"):
            fit_constants(None, ou_model(), "A3", 2.0, 1.0, plan)

    def test_unsupported_condition(self, plan1):
        with pytest.raises(ValueError):
            fit_constants(None, ou_model(), "A6", 2.0, 1.0, plan1)


def test_cutoff_lyapunov_is_a_supermartingale(a6_model):
    # outside C_sigma there is no noise and the drift points inward, inside V = 0
    V = builtin_lyapunov("cutoff_quartic", q=2, C_sigma=1.0)
    init = EmpiricalMeasure(np.linspace(-3.0, 3.0, 201)[:, None])
    rep = simulate(a6_model, init, 3.0, SimConfig(n_particles=2000, dt=1e-2, seed=4, record_stride=25))
    means = [float(np.mean(V.value(t, m.points))) for t, m in rep.snapshots]
    assert means[0] > 0
    assert all(b <= a * (1 + 1e-12) for a, b in zip(means, means[1:]))
