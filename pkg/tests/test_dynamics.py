import numpy as np
import pytest

from mvperiodic.dynamics import (
    ConditionConstants,
    FieldMap,
    ModelSpec,
    PeriodicFunction,
    bounded_diffusion_model,
    check_landau_validity,
    constant_drift_model,
    default_landau_q,
    inward_drift,
    landau_h3b_constants,
    landau_maxwell_model,
    landau_q_upper,
    landau_sigma0,
    ou_model,
    polynomial_interaction_model,
    smooth_cutoff,
    variance_drift_model,
    zero_model,
)
from mvperiodic.measures import EmpiricalMeasure, dirac

GRID = np.arange(1000) / 1000
ONE = PeriodicFunction(1.0)
ZERO = PeriodicFunction(0.0)


def unit_sigma(t, x, mu):
    return np.ones((x.shape[0], 1, 1))


def example31(alpha=0.5, beta=0.5, b0=FieldMap("negated-linear"), sigma0=FieldMap("constant", matrix=True)):
    return polynomial_interaction_model(
        PeriodicFunction(2.0, 1.0), PeriodicFunction(0.0, 0.0, 1.0), PeriodicFunction(0.4),
        b0, sigma0, 1, alpha, beta,
    )


def zoo():
    g2, g3 = PeriodicFunction(1.0, 0.2), PeriodicFunction(0.3)
    return [
        variance_drift_model(),
        ou_model(),
        zero_model(2),
        constant_drift_model([1.0, -2.0], sigma=0.5),
        example31(),
        example31(b0=FieldMap("tanh", 2.0), sigma0=FieldMap("tanh", 0.3, matrix=True)),
        landau_maxwell_model(g2, g3, 0.1, 0.1),
        bounded_diffusion_model(inward_drift, 1.0, unit_sigma),
    ]


class TestVarianceDrift:
    def test_point_mass(self):
        assert variance_drift_model().drift(0.0, [1.0], dirac(0.0))[0] == 0.0

    def test_standard_normal_cloud(self, gen):
        mu = EmpiricalMeasure(gen.standard_normal((10**5, 1)))
        assert variance_drift_model().drift(0.0, [0.0], mu)[0] == pytest.approx(1.0, abs=0.02)

    def test_independent_of_x(self, gen):
        m = variance_drift_model()
        mu = EmpiricalMeasure(gen.normal(size=(50, 1)))
        assert m.drift(0.3, [3.0], mu)[0] == m.drift(0.3, [-7.0], mu)[0]
        assert np.array_equal(m.diffusion(0.0, [2.0], mu), [[1.0]])


class TestPolynomialInteraction:
    def test_pure_confinement(self):
        m = polynomial_interaction_model(ONE, ZERO, ZERO, FieldMap("linear"), FieldMap("constant", matrix=True), 1, 0.0, 0.0)
        assert m.drift(0.0, [2.0], dirac(5.0))[0] == -8.0
        assert np.array_equal(m.diffusion(0.0, [2.0], dirac(5.0)), [[0.0]])

    def test_interaction_without_alpha(self, gen):
        m = polynomial_interaction_model(PeriodicFunction(1e-300), ONE, ZERO, FieldMap("negated-linear"),
                                         FieldMap("constant", matrix=True), 1, 0.0, 0.0)
        for mu in (dirac(4.0), EmpiricalMeasure(gen.normal(size=(9, 1)))):
            assert m.drift(0.0, [1.0], mu)[0] == pytest.approx(-1.0)

    def test_interaction_hand_sum(self):
        m = polynomial_interaction_model(PeriodicFunction(1e-300), ONE, ZERO, FieldMap("negated-linear"),
                                         FieldMap("constant", matrix=True), 1, 0.5, 0.0)
        assert m.drift(0.0, [1.0], EmpiricalMeasure([[0.0], [2.0]]))[0] == pytest.approx(-0.5)

    def test_componentwise_power(self):
        m = polynomial_interaction_model(ONE, ZERO, ZERO, FieldMap("linear"), FieldMap("constant", matrix=True), 1,
                                         0.0, 0.0, dimension=2)
        assert np.array_equal(m.drift(0.0, [2.0, -1.0], dirac([0.0, 0.0])), [-8.0, 1.0])

    def test_rejects_nonpositive_gamma1(self):
        with pytest.raises(ValueError):
            polynomial_interaction_model(PeriodicFunction(0.5, 1.0), ONE, ZERO, FieldMap("linear"),
                                         FieldMap("constant", matrix=True), 1, 0.0, 0.0)

    def test_rejects_bad_n(self):
        with pytest.raises(ValueError):
            polynomial_interaction_model(ONE, ONE, ZERO, FieldMap("linear"), FieldMap("constant", matrix=True), 0, 0, 0)

    def test_linear_map_depends_on_mean_only(self, gen):
        m = example31()
        a = EmpiricalMeasure(gen.normal(1.0, 1.0, (40, 1)))
        pts = gen.normal(0.0, 3.0, (60, 1))
        b = EmpiricalMeasure(pts - pts.mean() + a.mean)
        x = gen.normal(size=(20, 1))
        assert np.allclose(m.drift(0.2, x, a), m.drift(0.2, x, b), atol=1e-12, rtol=0)

    def test_nonlinear_map_uses_pairwise_sum(self, gen):
        m = example31(b0=FieldMap("tanh"))
        mu = EmpiricalMeasure(gen.normal(size=(300, 1)))
        x = gen.normal(size=(5, 1))
        t = 0.1
        direct = [np.mean(np.tanh(xi - 0.5 * mu.points[:, 0])) for xi in x[:, 0]]
        expected = -PeriodicFunction(2.0, 1.0)(t) * x[:, 0] ** 3 + PeriodicFunction(0, 0, 1)(t) * np.array(direct)
        assert np.allclose(m.drift(t, x, mu)[:, 0], expected, rtol=1e-12)

    def test_one_dimensional_monotonicity(self, gen):
        # -<x^3 - y^3, x - y> <= 0, so the confinement only helps
        x, y = gen.normal(size=1000) * 3, gen.normal(size=1000) * 3
        assert np.all(-(x**3 - y**3) * (x - y) <= 0)

    def test_one_sided_lipschitz_constant_is_stable(self):
        m = example31()

        def fitted(seed):
            g = np.random.default_rng(seed)
            mu = EmpiricalMeasure(g.normal(size=(32, 1)))
            t = g.uniform(0, 1, 500)
            x, y = g.normal(size=(500, 1)) * 3, g.normal(size=(500, 1)) * 3
            ratios = [
                float((m.drift(ti, xi, mu) - m.drift(ti, yi, mu)) @ (xi - yi)) / float((xi - yi) @ (xi - yi))
                for ti, xi, yi in zip(t, x, y)
            ]
            return max(ratios)

        ks = [fitted(s) for s in range(3)]
        # bounded by sup |gamma2| * Lip(b0) = 1 and stable across seeds
        assert max(ks) <= 1.0 and max(ks) - min(ks) < 0.5


class TestLandau:
    def test_sigma0_at_unit_vector(self):
        assert landau_sigma0(np.array([1.0, 0.0, 0.0])).tolist() == [[0, 0, 0], [-1, 0, 0], [0, 0, -1]]

    def test_drift_without_alpha(self, gen):
        m = landau_maxwell_model(ONE, ZERO, 0.0, 0.0)
        mu = EmpiricalMeasure(gen.normal(size=(5, 3)))
        assert np.array_equal(m.drift(0.0, [1.0, 2.0, 3.0], mu), [-2.0, -4.0, -6.0])

    def test_sigma0_times_x_hand_expansion(self, gen):
        # the displayed matrix does not annihilate x; check the product row by row instead
        x = gen.normal(size=(100, 3))
        x1, x2, x3 = x.T
        expected = np.stack([x1 * x2 + x3**2, -x1**2 + x2 * x3, -x2**2 - x1 * x3], axis=1)
        assert np.allclose(np.einsum("mij,mj->mi", landau_sigma0(x), x), expected, rtol=1e-12)

    def test_sigma0_frobenius(self, gen):
        x = gen.normal(size=(100, 3))
        s = landau_sigma0(x)
        assert np.allclose(np.einsum("mij,mij->m", s, s), 2 * np.sum(x * x, axis=1), rtol=1e-12)

    def test_diffusion_uses_cloud(self, gen):
        m = landau_maxwell_model(ONE, PeriodicFunction(0.3), 0.1, 0.5)
        mu = EmpiricalMeasure(gen.normal(size=(20, 3)))
        x = gen.normal(size=3)
        direct = 0.3 * np.mean([landau_sigma0(x - 0.5 * z) for z in mu.points], axis=0)
        assert np.allclose(m.diffusion(0.0, x, mu), direct, rtol=1e-12)

    def test_validity_desk_instance(self):
        v = check_landau_validity(PeriodicFunction(1.0, 0.2), PeriodicFunction(0.3), 0.1, 0.1, GRID)
        assert v.valid and v.margin == pytest.approx(0.8 - (0.12 + 1.5 * 1.21 * 0.09), abs=1e-6)

    def test_validity_without_noise(self):
        assert check_landau_validity(PeriodicFunction(0.7, 0.1), ZERO, 0.0, 0.3, GRID).valid

    def test_validity_fails_for_large_gamma3(self):
        v = check_landau_validity(PeriodicFunction(1.0, 0.2), PeriodicFunction(2.0), 0.1, 0.1, GRID)
        assert not v.valid and v.margin == pytest.approx(0.8 - 0.12 - 7.26, abs=1e-6)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            check_landau_validity(ONE, ONE, 0.0, 0.0, [])

    def test_h3b_constants_desk_instance(self):
        g2, g3 = PeriodicFunction(1.0, 0.2), PeriodicFunction(0.3)
        q_hi = landau_q_upper(g2, g3, 0.1, 0.1, GRID)
        # (2q+1)(1+|beta|)^2/2 sup g3^2 < inf g2 - |alpha| sup g2
        assert q_hi == pytest.approx(((2 * 0.68 / (1.21 * 0.09)) - 1) / 2, rel=1e-6)
        q = default_landau_q(g2, g3, 0.1, 0.1, GRID)
        assert q == 2.0
        c = landau_h3b_constants(g2, g3, 0.1, 0.1, q, GRID)
        c1 = 2 * (4 * 0.8 - 3 * 0.1 * 1.2 - 5 * 1.1 * (2 + 0.1) * 0.09)
        c2 = 2 * (0.1 * 1.2 + 5 * (0.1 + 0.01) * 0.09)
        assert c.C1 == pytest.approx(c1, rel=1e-6) and c.C2 == pytest.approx(c2, rel=1e-6)
        assert c.r == 4.0 and c.C1 > c.C2 > 0
        c.validate_for("H3b")

    def test_no_admissible_q(self):
        with pytest.raises(ValueError):
            default_landau_q(PeriodicFunction(1.0, 0.2), PeriodicFunction(2.0), 0.1, 0.1, GRID)


class TestBoundedDiffusion:
    def test_outside_support(self):
        m = bounded_diffusion_model(inward_drift, 1.5, unit_sigma)
        assert np.array_equal(m.diffusion(0.0, [3.0], dirac(0.0)), [[0.0]])
        assert np.array_equal(m.diffusion(0.0, [1.5 + 1e-9], dirac(0.0)), [[0.0]])

    def test_inside_support(self):
        m = bounded_diffusion_model(inward_drift, 1.5, unit_sigma)
        assert np.array_equal(m.diffusion(0.0, [0.0], dirac(0.0)), [[1.0]])

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            bounded_diffusion_model(inward_drift, 0.0, unit_sigma)

    def test_cutoff_is_monotone_and_smooth(self):
        r = np.linspace(0, 2, 2001)
        phi = smooth_cutoff(r, 1.0)
        assert np.all(np.diff(phi) <= 0) and phi[0] == 1.0 and np.all(phi[r >= 1.0] == 0.0)

    def test_inward_drift(self, gen):
        x = gen.normal(size=(100, 2)) * 10
        assert np.all(np.sum(inward_drift(0, x, None) * x, axis=1) <= 0)


class TestModelSpec:
    @pytest.mark.parametrize("model", zoo(), ids=lambda m: m.name)
    def test_periodicity(self, model, gen):
        d = model.dimension
        for _ in range(100):
            t = gen.uniform(0, 1)
            x = gen.normal(size=d) * 2
            mu = EmpiricalMeasure(gen.normal(size=(8, d)))
            assert np.allclose(model.drift(t, x, mu), model.drift(t + model.period, x, mu), atol=1e-10, rtol=0)
            assert np.allclose(model.diffusion(t, x, mu), model.diffusion(t + model.period, x, mu), atol=1e-10, rtol=0)

    @pytest.mark.parametrize("model", zoo(), ids=lambda m: m.name)
    def test_shapes_and_finite(self, model, gen):
        d = model.dimension
        x = gen.normal(size=(7, d))
        mu = EmpiricalMeasure(gen.normal(size=(5, d)))
        b, s = model.drift(0.3, x, mu), model.diffusion(0.3, x, mu)
        assert b.shape == (7, d) and s.shape == (7, d, d)
        assert np.all(np.isfinite(b)) and np.all(np.isfinite(s))
        assert model.drift(0.3, x[0], mu).shape == (d,)

    def test_with_period(self):
        assert ou_model().with_period(2.5).period == 2.5
        with pytest.raises(ValueError):
            example31().with_period(2.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelSpec(1, 0.0, inward_drift, unit_sigma)
        with pytest.raises(ValueError):
            ModelSpec(0, 1.0, inward_drift, unit_sigma)


class TestConditionConstants:
    @pytest.mark.parametrize(
        "condition, kwargs",
        [
            ("H3a", dict(r=1.0, vartheta=1.0)),
            ("H3b", dict(C1=1.0, C2=2.0, r=3.0)),
            ("H3b", dict(C1=1.0, C2=0.0, r=3.0)),
            ("A3", dict(vartheta=2.5)),
            ("A4", dict(vartheta=1.5, r=3.0)),
            ("A4", dict(vartheta=2.0, r=2.0)),
            ("A5", dict(q=1.0)),
            ("A5", dict(q=1.5, vartheta=4.0)),
            ("A6", dict(C_sigma=0.0)),
        ],
    )
    def test_invalid(self, condition, kwargs):
        with pytest.raises(ValueError):
            ConditionConstants(**kwargs).validate_for(condition)

    def test_valid(self):
        ConditionConstants(C1=2, C2=1, r=2, vartheta=1).validate_for("H3a")
        ConditionConstants(C1=2, C2=1, C3=0.5, r=3, vartheta=2).validate_for("H3b")
        ConditionConstants(q=2, vartheta=2).validate_for("A5")

    def test_replace(self):
        c = ConditionConstants(C1=2.0).replace(C2=0.5)
        assert (c.C1, c.C2) == (2.0, 0.5)


def test_periodic_function():
    f = PeriodicFunction(2.0, 1.0, 0.5, period=2.0)
    assert f(0.5) == pytest.approx(3.0)
    assert f(0.0) == pytest.approx(2.5)
    assert not f.is_constant and PeriodicFunction(3.0).is_constant


def test_field_map_catalog():
    y = np.array([[1.0, -2.0]])
    assert np.array_equal(FieldMap("linear", 2.0)(y), [[2.0, -4.0]])
    assert np.array_equal(FieldMap("negated-linear")(y), [[-1.0, 2.0]])
    assert np.allclose(FieldMap("tanh")(y), np.tanh(y))
    assert np.array_equal(FieldMap("constant", 0.4, matrix=True)(y), [0.4 * np.eye(2)])
    with pytest.raises(ValueError):
        FieldMap("cubic")
