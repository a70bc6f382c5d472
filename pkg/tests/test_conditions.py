"""Condition checks: LOAC rates, ellipticity, gap scans, Lyapunov, Lamperti."""

import math

import numpy as np
import pytest

from utweak.conditions import (
    SINGULAR,
    ConditionReport,
    RateFunction,
    apply_generator,
    commutation_check,
    cosh_ratio,
    ellipticity_check,
    gap_scan,
    hypothesis_report,
    lamperti_transform,
    loac_rate_1d,
    loac_scan,
    lyapunov_check,
    make_grid,
    radial_confinement_check,
    sphere_directions,
)
from utweak.dsl import DomainError, VectorField
from utweak.engine import simulate_batch, steps_for
from utweak.models import SdeModel, builtin_example


def fields(name):
    spec = builtin_example(name)
    return spec.model.drift_strat, spec.model.diffusions[0]


class TestLoacRate1d:
    def test_arctan_closed_form(self):
        v0, v1 = fields("arctan")
        xs = np.linspace(-20, 20, 1001)
        for x in xs[::100]:
            assert loac_rate_1d(v0, v1, x) == pytest.approx(1 / (1 + x * x), abs=1e-12)
        assert loac_rate_1d(v0, v1, 0.0) == pytest.approx(1.0, abs=1e-14)
        assert loac_rate_1d(v0, v1, 1.0) == pytest.approx(0.5, abs=1e-14)

    def test_bump_closed_form(self):
        v0, v1 = fields("bump")
        assert loac_rate_1d(v0, v1, 5.0) == pytest.approx(-1.0, abs=1e-13)
        for x in (-3.0, 0.0, 8.0):
            assert loac_rate_1d(v0, v1, x) == pytest.approx(1 - 2 / (1 + (x - 5) ** 2), abs=1e-12)

    def test_sincos_closed_form_and_singularity(self):
        v0, v1 = fields("sincos")
        for x in (-1.0, 0.0, 0.7, 2.5):
            assert loac_rate_1d(v0, v1, x) == pytest.approx(1 / math.cos(x), rel=1e-12)
        assert loac_rate_1d(v0, v1, math.pi / 2) is SINGULAR

    def test_rate_makes_inequality_tight(self):
        """The extracted rate turns the coercivity inequality into an equality."""
        for name in ("arctan", "bump", "sincos"):
            v0, v1 = fields(name)
            from utweak.dsl import commutator
            for x in (-2.0, 0.1, 1.2):
                lam = loac_rate_1d(v0, v1, x)
                if lam is SINGULAR:
                    continue
                p = np.array([x])
                residual = commutator(v1, v0, p)[0] * v1.eval_point(p)[0] \
                    + lam * v1.eval_point(p)[0] ** 2
                assert abs(residual) < 1e-10


class TestLoacScan:
    def test_grusin_rate_is_one(self):
        spec = builtin_example("grusin")
        rng = np.random.default_rng(7)
        X = rng.uniform(-3, 3, size=(2, 1000))
        X[0] = np.where(np.abs(X[0]) < 1e-3, 1.0, X[0])  # avoid the degenerate line
        rate, report = loac_scan(spec.model.diffusions[0], spec.model.drift_strat, X)
        vals = rate.columns(X)
        assert report.verdict == "pass"
        assert np.nanmax(np.abs(vals - 1.0)) < 1e-8

    def test_self_direction_yields_zero(self):
        spec = builtin_example("grusin")
        X = np.array([[1.0, 2.0], [0.5, -0.5]])
        rate, _ = loac_scan(spec.model.drift_strat, spec.model.drift_strat, X)
        assert np.nanmax(np.abs(rate.columns(X))) < 1e-12

    def test_one_dim_reduction_agrees(self):
        v0, v1 = fields("arctan")
        xs = make_grid(-5, 5, 0.1)
        rate, _ = loac_scan(v1, v0, xs[None, :])
        scan_vals = rate.columns(xs[None, :])
        direct = np.array([loac_rate_1d(v0, v1, x) for x in xs])
        assert np.max(np.abs(scan_vals - direct)) < 1e-10


class TestCommutation:
    def test_constant_fields_commute_with_additive_noise(self):
        v = VectorField.parse(["2", "1"], 2)
        noise = [VectorField.parse(["1", "0"], 2), VectorField.parse(["0", "1"], 2)]
        X = np.random.default_rng(1).uniform(-2, 2, (2, 50))
        assert commutation_check(v, noise, X).verdict == "pass"

    def test_grusin_second_coordinate(self):
        spec = builtin_example("grusin")
        v = VectorField.parse(["0", "1"], 2)
        X = np.random.default_rng(2).uniform(-2, 2, (2, 50))
        assert commutation_check(v, spec.model.diffusions, X).verdict == "pass"

    def test_grusin_first_coordinate_fails_with_witness(self):
        spec = builtin_example("grusin")
        v = VectorField.parse(["1", "0"], 2)
        X = np.random.default_rng(3).uniform(-2, 2, (2, 50))
        report = commutation_check(v, spec.model.diffusions, X)
        assert report.verdict == "fail"
        assert report.witness is not None and report.witness["value"] == pytest.approx(1.0)


class TestEllipticity:
    def test_identity_noise(self):
        noise = [VectorField.parse(["1", "0"], 2), VectorField.parse(["0", "1"], 2)]
        X = np.random.default_rng(4).uniform(-3, 3, (2, 40))
        report = ellipticity_check(noise, X)
        assert report.verdict == "pass"
        assert report.details["nu"] == pytest.approx(1.0, abs=1e-12)

    def test_grusin_degenerate_with_witness(self):
        spec = builtin_example("grusin")
        X = np.random.default_rng(5).uniform(-3, 3, (2, 40))
        report = ellipticity_check(spec.model.diffusions, X)
        assert report.verdict == "fail"
        assert abs(report.witness["xi"][1]) < 1e-12  # xi = (+-1, 0) kills the noise

    def test_sincos_small_near_half_pi(self):
        spec = builtin_example("sincos")
        xs = make_grid(-1.6, 1.6, 0.01)
        report = ellipticity_check(spec.model.diffusions, xs[None, :])
        assert report.details["nu"] < 1e-4
        assert abs(abs(report.details["argmin_x"][0]) - math.pi / 2) < 0.02


class TestGenerator:
    def test_constant_function(self):
        model = builtin_example("arctan").model
        assert apply_generator(model, "5", 0.3) == pytest.approx(0.0, abs=1e-14)

    def test_arctan_cosh(self):
        model = builtin_example("arctan").model
        for x in (-1.5, 0.0, 0.8, 3.0):
            want = -math.atan(x) * math.sinh(x) + math.cosh(x)
            assert apply_generator(model, "cosh(x1)", x) == pytest.approx(want, rel=1e-13)

    def test_cosh_ratio_identity(self):
        """alpha^2 + alpha b tanh(alpha x) equals (L cosh(alpha .))/cosh(alpha .)."""
        for name in ("arctan", "bump", "ou", "xcubed"):
            model = builtin_example(name).model
            alpha = 0.5
            xs = make_grid(-8, 8, 0.25)
            direct = cosh_ratio(model, alpha, xs)
            via_generator = apply_generator(model, "cosh(0.5*x1)", xs) / np.cosh(alpha * xs)
            assert np.max(np.abs(direct - via_generator)) < 1e-10

    def test_cosh_ratio_at_origin(self):
        model = builtin_example("arctan").model
        assert cosh_ratio(model, 0.5, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_arctan_ratio_closed_form(self):
        model = builtin_example("arctan").model
        for x in (-4.0, 0.3, 7.0):
            want = 0.25 - 0.5 * math.atan(x) * math.tanh(0.5 * x)
            assert cosh_ratio(model, 0.5, x) == pytest.approx(want, rel=1e-13)

    def test_bump_ratio_closed_form(self):
        model = builtin_example("bump").model
        for x in (-2.0, 5.0, 11.0):
            want = 0.25 + 0.5 * (2 * math.atan(x - 5) - x) * math.tanh(0.5 * x)
            assert cosh_ratio(model, 0.5, x) == pytest.approx(want, rel=1e-12)


class TestGapScan:
    def test_constant_rate_zero_ratio(self):
        res = gap_scan(lambda xs: np.ones_like(xs), lambda xs: np.zeros_like(xs), (-5, 5, 0.1))
        assert res.lambda0 == pytest.approx(1.0)
        assert res.passed

    def test_arctan_regression(self):
        """Frozen from this scan on the canonical grid; also inside the
        band covering both readings of the reference constant."""
        spec = builtin_example("arctan")
        rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        res = gap_scan(rate, lambda x: cosh_ratio(spec.model, 0.5, x), (-60, 60, 0.01), alpha=0.5)
        assert res.passed
        assert 0.25 <= res.infimum <= 0.75
        assert res.infimum == pytest.approx(0.5031423928749945, abs=1e-12)

    def test_bump_regression(self):
        # frozen from an independent step-1e-3 numpy oracle on [-60, 60]
        spec = builtin_example("bump")
        rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        res = gap_scan(rate, lambda x: cosh_ratio(spec.model, 0.5, x), (-60, 60, 1e-3), alpha=0.5)
        assert res.passed
        assert res.infimum == pytest.approx(0.20325096506169915, abs=1e-9)

    def test_refinement_never_increases_infimum(self):
        spec = builtin_example("arctan")
        rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        ratio = lambda x: cosh_ratio(spec.model, 0.5, x)
        coarse = gap_scan(rate, ratio, (-60, 60, 0.04))
        fine = gap_scan(rate, ratio, (-60, 60, 0.01))
        finer = gap_scan(rate, ratio, (-60, 60, 0.002))
        assert fine.infimum <= coarse.infimum
        assert finer.infimum <= fine.infimum

    def test_singular_rate_rejected(self):
        spec = builtin_example("sincos")
        rate = RateFunction.from_expression("1/cos(x1)")
        vals = rate.on_grid(np.array([math.pi / 2 - 1e-16, 0.0]))
        assert np.isfinite(vals[1])
        rate_fields = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        with pytest.raises(DomainError):
            gap_scan(rate_fields, lambda xs: np.zeros_like(xs), (0, math.pi, math.pi / 2))


class TestLyapunov:
    def test_xcubed_quadratic_passes(self):
        model = builtin_example("xcubed").model
        report = lyapunov_check(model, "1+x1^2", (-10, 10, 0.01), c_grid=[0.5, 1.0, 2.0])
        assert report.verdict == "pass"
        assert report.details["c"] > 0 and report.details["d"] > 0

    def test_arctan_polynomial_fails(self):
        model = builtin_example("arctan").model
        report = lyapunov_check(model, "1+x1^2", (-60, 60, 0.01), c_grid=[0.05, 0.2, 1.0])
        assert report.verdict == "fail"
        assert report.witness is not None

    def test_arctan_cosh_passes(self):
        model = builtin_example("arctan").model
        report = lyapunov_check(model, "cosh(x1)", (-30, 30, 0.01), c=0.2)
        assert report.verdict == "pass"

    def test_radial_confinement_circle(self):
        model = builtin_example("circle").model
        grid = np.stack(np.meshgrid(np.linspace(-5, 5, 41), np.linspace(-5, 5, 41))
                        ).reshape(2, -1)
        assert radial_confinement_check(model, grid, radius=3.0).verdict == "pass"


class TestLamperti:
    def test_unit_diffusion_is_identity(self):
        model = builtin_example("arctan").model
        tm, tr = lamperti_transform(model, (-5, 5))
        assert tr.forward(1.3) == pytest.approx(1.3, abs=1e-12)
        assert tr.inverse(0.7) == pytest.approx(0.7, abs=1e-12)
        ys = np.array([-2.0, 0.0, 1.5])
        assert np.allclose(tm.drift_ito(ys[None, :])[0], -np.arctan(ys), atol=1e-12)

    def test_constant_two_diffusion(self):
        v0 = VectorField.parse(["-x1"], 1)
        model = SdeModel.from_ito(v0, [VectorField.parse(["2"], 1)], label="scaled")
        tm, tr = lamperti_transform(model, (-6, 6))
        assert tr.forward(3.0) == pytest.approx(1.5, abs=1e-12)
        ys = np.array([-1.0, 0.5, 2.0])
        # b_Y(y) = U0(2y)/2 = -y
        assert np.allclose(tm.drift_ito(ys[None, :])[0], -ys, atol=1e-11)

    def test_sincos_closed_form(self):
        model = builtin_example("sincos").model
        tm, tr = lamperti_transform(model, (-1.45, 1.45))
        ys = np.linspace(-2.5, 2.5, 9)
        assert np.allclose(tm.drift_ito(ys[None, :])[0], -np.sinh(ys), atol=1e-10)
        assert np.allclose(tm.drift_ito.derivatives_1d(ys, order=1)[1], -np.cosh(ys), atol=1e-9)

    def test_oac_equivalence_on_random_elliptic_models(self):
        """b_Y' from the bracket chain rule vs an independent finite
        difference of the quadrature-built drift."""
        rng = np.random.default_rng(11)
        for _ in range(3):
            a = rng.uniform(0.2, 0.6)
            c = rng.uniform(0.5, 1.5)
            v0 = VectorField.parse([f"-{c!r}*x1"], 1)
            u1 = VectorField.parse([f"1+{a!r}*sin(x1)"], 1)
            model = SdeModel.from_ito(v0, [u1], label="random-elliptic")
            tm, tr = lamperti_transform(model, (-4, 4))
            h = 1e-5
            for y in (-1.0, 0.2, 1.4):
                grad = tm.drift_ito.derivatives_1d(np.array([y]), order=1)[1][0]
                fd = (tm.drift_ito(np.array([[y + h]]))[0, 0]
                      - tm.drift_ito(np.array([[y - h]]))[0, 0]) / (2 * h)
                assert grad == pytest.approx(fd, rel=1e-5, abs=1e-7)
                # bracket form of the same quantity, evaluated independently
                z = tr.inverse(y)
                from utweak.dsl import commutator
                zz = np.array([z])
                v0z = model.drift_ito.eval_point(zz)[0] - u1.eval_point(zz)[0] * u1.jacobian(zz)[0, 0]
                v0f = VectorField.parse([f"-{c!r}*x1-(1+{a!r}*sin(x1))*({a!r}*cos(x1))"], 1)
                br = commutator(u1, v0f, zz)[0]
                assert grad == pytest.approx(br / u1.eval_point(zz)[0], rel=1e-8, abs=1e-9)

    def test_vanishing_diffusion_rejected(self):
        model = builtin_example("sincos").model
        with pytest.raises(DomainError):
            lamperti_transform(model, (-3.0, 3.0))  # cos vanishes inside

    @pytest.mark.slow
    def test_simulation_commutes_with_transform(self):
        """Simulating the reduced model and pulling back through the inverse
        matches simulating the original on the same noise."""
        v0 = VectorField.parse(["-0.5*x1"], 1)
        u1 = VectorField.parse(["1+0.1*sin(x1)"], 1)
        model = SdeModel.from_ito(v0, [u1], label="gentle")
        tm, tr = lamperti_transform(model, (-8, 8))
        delta, n, paths = 1e-3, steps_for(1.0, 1e-3), 4
        orig = simulate_batch(model, [0.4], delta, n, paths, seed=71)
        trans = simulate_batch(tm, [tr.forward(0.4)], delta, n, paths, seed=71)
        pulled = np.array([tr.inverse(float(y)) for y in trans.states[-1, 0]])
        assert np.max(np.abs(pulled - orig.states[-1, 0])) < 5e-3


class TestHypothesisReport:
    def test_arctan_chain_passes(self):
        spec = builtin_example("arctan")
        bundle = hypothesis_report(spec.model, alpha=0.5, grid=spec.grid, spec=spec)
        checks = bundle["checks"]
        assert checks["ellipticity"]["verdict"] == "pass"
        assert checks["growth"]["verdict"] == "pass"
        assert checks["growth"]["details"]["p"] < 0.1  # bounded coefficients
        assert checks["derivative-decay"]["verdict"] == "pass"
        assert checks["moment-bounds"]["notes"] == "delegated"
        assert bundle["gap"]["lambda0"] > 0.25

    def test_grusin_fails_ellipticity(self):
        spec = builtin_example("grusin")
        bundle = hypothesis_report(spec.model, grid=spec.grid, spec=spec)
        assert bundle["checks"]["ellipticity"]["verdict"] == "fail"
        assert bundle["checks"]["derivative-decay"]["details"].get("status") == "not established"

    def test_circle_decay_not_established(self):
        spec = builtin_example("circle")
        bundle = hypothesis_report(spec.model, grid=spec.grid, spec=spec)
        assert bundle["checks"]["derivative-decay"]["verdict"] == "fail"
        assert bundle["checks"]["derivative-decay"]["details"]["status"] == "not established"


class TestReports:
    def test_fail_requires_witness(self):
        with pytest.raises(ValueError):
            ConditionReport(name="x", verdict="fail")

    def test_sphere_directions_are_unit(self):
        for dim in (1, 2, 3):
            dirs = sphere_directions(dim)
            norms = np.linalg.norm(dirs, axis=0)
            assert np.allclose(norms, 1.0, atol=1e-12)
            # coordinate directions included
            for j in range(dim):
                e = np.zeros(dim)
                e[j] = 1.0
                assert np.any(np.all(np.isclose(dirs.T, e), axis=1))
