"""Estimator harness: closed-form checks, CIs, explosion handling."""

import math

import numpy as np
import pytest

from utweak.conditions import RateFunction
from utweak.dsl import VectorField
from utweak.estimators import (
    decay_functional,
    derivative_estimate,
    ergodic_average,
    gamma_pathwise_check,
    moment_supremum,
    weak_error_curve,
)
from utweak.models import builtin_example, invariant_expectation

D_X = VectorField.parse(["1"], 1)


class TestWeakError:
    def test_ou_mean_closed_form(self):
        """Zero-variance curve: |x| |(1-d)^{t/d} - e^{-t}| at every mesh time."""
        spec = builtin_example("ou")
        delta, x0 = 0.1, 2.0
        curve = weak_error_curve(spec, "x1", x0=[x0], delta=delta, horizon=5.0,
                                 n_paths=0, seed=1, reference="exact")
        n = np.arange(len(curve.times))
        want = abs(x0) * np.abs((1 - delta) ** n - np.exp(-curve.times))
        assert np.allclose(curve.estimate, want, atol=1e-14)
        assert np.all(curve.stderr == 0)

    def test_identical_steps_give_zero_curve(self):
        spec = builtin_example("arctan")
        curve = weak_error_curve(spec, "tanh(x1)", x0=[0.5], delta=0.1, horizon=2.0,
                                 n_paths=200, seed=3, reference=1)
        assert np.all(curve.estimate == 0.0)

    def test_order_one_in_delta_closed_form(self):
        spec = builtin_example("ou")
        sups = {}
        for delta in (0.2, 0.1, 0.05):
            for phi in ("x1", "x1^2"):
                c = weak_error_curve(spec, phi, x0=[1.0], delta=delta, horizon=10.0,
                                     n_paths=0, seed=1, reference="exact")
                sups[(phi, delta)] = c.sup
        for phi in ("x1", "x1^2"):
            assert 1.7 <= sups[(phi, 0.2)] / sups[(phi, 0.1)] <= 2.3
            assert 1.7 <= sups[(phi, 0.1)] / sups[(phi, 0.05)] <= 2.3

    def test_mc_mode_reports_stderr(self):
        spec = builtin_example("ou")
        curve = weak_error_curve(spec, "x1", x0=[1.0], delta=0.1, horizon=2.0,
                                 n_paths=500, seed=5, reference="exact")
        assert np.all(curve.stderr[1:] > 0)

    def test_sup_is_non_decreasing(self):
        spec = builtin_example("arctan")
        curve = weak_error_curve(spec, "tanh(x1)", x0=[1.0], delta=0.1, horizon=3.0,
                                 n_paths=500, seed=7, reference=4)
        assert np.all(np.diff(curve.sup_so_far) >= 0)

    def test_missing_oracle_rejected(self):
        spec = builtin_example("arctan")
        with pytest.raises(ValueError):
            weak_error_curve(spec, "x1", x0=[0.0], delta=0.1, horizon=1.0,
                             n_paths=0, seed=1, reference="exact")

    def test_grusin_variance_proxy_flagged_divergent(self):
        """The second-moment observable keeps drifting from the reference."""
        spec = builtin_example("grusin")
        curve = weak_error_curve(spec, "x2^2", delta=0.01, horizon=5.0,
                                 n_paths=500, seed=9, reference=8)
        assert curve.divergent
        assert curve.explosion_fraction == 0.0  # growth, not blow-up

    def test_exploding_curve_keeps_finite_sup(self):
        spec = builtin_example("xcubed")
        curve = weak_error_curve(spec, "x1^2", x0=[4.0], delta=1.0, horizon=10.0,
                                 n_paths=50, seed=3, reference=2)
        assert curve.divergent
        assert curve.explosion_fraction > 0.5
        assert np.isfinite(curve.sup)  # nan tail must not poison the running sup

    def test_stable_curves_not_flagged(self):
        arctan = builtin_example("arctan")
        c1 = weak_error_curve(arctan, "tanh(x1)", x0=[1.0], delta=0.1, horizon=10.0,
                              n_paths=2000, seed=9, reference=8)
        assert not c1.divergent
        ou = builtin_example("ou")
        c2 = weak_error_curve(ou, "x1^2", x0=[1.0], delta=0.1, horizon=10.0,
                              n_paths=0, seed=9, reference="exact")
        assert not c2.divergent  # saturating closed-form curve


class TestMomentSupremum:
    def test_trivial_weight(self):
        model = builtin_example("ou").model
        curve = moment_supremum(model, x0=[1.0], delta=0.1, n_steps=30, n_paths=50, seed=11)
        assert np.all(curve.estimate == 1.0)
        assert curve.sup == 1.0

    def test_explosion_reported(self):
        model = builtin_example("xcubed").model
        curve = moment_supremum(model, x0=[4.0], delta=1.0, n_steps=10, n_paths=100,
                                seed=13, power=2.0)
        assert curve.explosion_fraction == 1.0
        assert curve.sup > 1e8

    def test_cosh_weight_curve(self):
        model = builtin_example("arctan").model
        curve = moment_supremum(model, x0=[1.0], delta=0.05, n_steps=200, n_paths=400,
                                seed=17, weight="cosh(x1)")
        assert np.all(np.isfinite(curve.estimate))
        assert curve.sup_stderr > 0


class TestDecay:
    def test_constant_rate_exact(self):
        model = builtin_example("ou").model
        rate = RateFunction.from_expression("0.8+0*x1")
        curve = decay_functional(model, rate, x0=[0.0], delta=0.02, n_steps=100,
                                 n_paths=64, seed=19)
        assert np.allclose(curve.estimate, np.exp(-1.6 * curve.times), rtol=1e-12)
        assert np.all(curve.stderr < 1e-8)  # no Monte Carlo noise, only rounding
        assert curve.fit.rate == pytest.approx(1.6, abs=1e-9)

    def test_values_in_unit_interval_for_nonnegative_rate(self):
        spec = builtin_example("arctan")
        rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        curve = decay_functional(spec.model, rate, x0=[0.0], delta=0.01, n_steps=500,
                                 n_paths=400, seed=23)
        assert np.all(curve.estimate > 0)
        assert np.all(curve.estimate <= 1.0 + 1e-12)

    def test_singular_rate_aborts_paths(self):
        spec = builtin_example("sincos")
        rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        # started at the singular point, every path aborts immediately
        curve = decay_functional(spec.model, rate, x0=[math.pi / 2], delta=0.01,
                                 n_steps=20, n_paths=32, seed=29)
        assert curve.aborted_fraction == 1.0

    def test_arctan_decay_below_gap_bound(self):
        """E[exp(-2 int rate)] stays under e^{-2 lambda0 t} within 3 sigma,
        with lambda0 taken from the gap scan."""
        from utweak.conditions import cosh_ratio, gap_scan
        spec = builtin_example("arctan")
        rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
        lam0 = gap_scan(rate, lambda x: cosh_ratio(spec.model, 0.5, x),
                        (-60, 60, 0.01), alpha=0.5).lambda0
        curve = decay_functional(spec.model, rate, x0=[0.0], delta=0.01, n_steps=500,
                                 n_paths=2000, seed=97)
        bound = np.exp(-2.0 * lam0 * curve.times)
        assert np.all(curve.estimate <= bound + 3.0 * curve.stderr)

    def test_sincos_confined_rate(self):
        """Paths started at 0 stay in (-pi/2, pi/2) where the rate is >= 1."""
        spec = builtin_example("sincos")
        rate = RateFunction.from_expression("1/cos(x1)")
        curve = decay_functional(spec.model, rate, x0=[0.0], delta=1e-3, n_steps=3000,
                                 n_paths=500, seed=31)
        assert curve.aborted_fraction == 0.0
        assert curve.fit.rate >= 2.0 - 0.2


class TestDerivative:
    def test_ou_variational_recurrence_exact(self):
        model = builtin_example("ou").model
        delta = 0.1
        curve = derivative_estimate(model, "x1", D_X, x0=[1.0], delta=delta, n_steps=30,
                                    n_paths=16, seed=37, jacobian="variational")
        n = np.arange(31)
        assert np.allclose(curve.estimate, (1 - delta) ** n, rtol=1e-12)
        assert np.all(curve.stderr == 0)

    def test_ou_quadrature_route(self):
        model = builtin_example("ou").model
        curve = derivative_estimate(model, "x1", D_X, x0=[1.0], delta=0.01, n_steps=100,
                                    n_paths=16, seed=37)
        assert np.allclose(curve.estimate, np.exp(-curve.times), rtol=1e-12)

    def test_constant_observable_gives_zero(self):
        model = builtin_example("arctan").model
        curve = derivative_estimate(model, "2", D_X, x0=[0.0], delta=0.05, n_steps=20,
                                    n_paths=32, seed=41)
        assert np.allclose(curve.estimate, 0.0)

    def test_bound_curve_attached(self):
        model = builtin_example("arctan").model
        curve = derivative_estimate(model, "tanh(x1)", D_X, x0=[0.0], delta=0.05,
                                    n_steps=40, n_paths=500, seed=43,
                                    bound=(1.0, 0.25, 1.0))
        assert curve.bound is not None
        assert curve.bound[0] == 1.0
        assert curve.bound_satisfied is not None


class TestGamma:
    def test_constant_drift_exact_equality(self):
        from utweak.models import SdeModel
        model = SdeModel.from_stratonovich(VectorField.parse(["0.7"], 1),
                                           [VectorField.parse(["1"], 1)], label="const")
        res = gamma_pathwise_check(model, "tanh(x1)", x0=[0.0], delta=0.01, n_steps=100,
                                   n_paths=64, seed=47)
        assert res.violations == 0
        assert res.worst_deficit < 1e-12

    def test_ou_equality_within_rounding(self):
        model = builtin_example("ou").model
        res = gamma_pathwise_check(model, "x1", x0=[1.0], delta=0.01, n_steps=200,
                                   n_paths=128, seed=53)
        assert res.violations == 0
        assert res.worst_deficit < 1e-8

    def test_arctan_no_violations_small(self):
        model = builtin_example("arctan").model
        res = gamma_pathwise_check(model, "tanh(x1)", x0=[0.0], delta=1e-3, n_steps=1000,
                                   n_paths=100, seed=59)
        assert res.violations == 0

    def test_requires_additive(self):
        with pytest.raises(ValueError):
            gamma_pathwise_check(builtin_example("sincos").model, "x1", x0=[0.0],
                                 delta=0.01, n_steps=10, n_paths=4, seed=1)


class TestErgodic:
    def test_constant_observable(self):
        model = builtin_example("ou").model
        curve = ergodic_average(model, "4", x0=[1.0], delta=0.1, n_steps=50,
                                n_paths=16, seed=61)
        assert np.allclose(curve.average, 4.0, rtol=1e-12)

    def test_gap_column(self):
        spec = builtin_example("ou")
        oracle = invariant_expectation(spec, "x1^2")
        assert oracle == pytest.approx(1.0, abs=1e-8)
        curve = ergodic_average(spec.model, "x1^2", x0=[0.0], delta=0.05, n_steps=2000,
                                n_paths=200, seed=67, oracle_value=oracle)
        assert curve.gap is not None
        assert abs(curve.gap[-1]) < 0.15

    def test_stderr_positive(self):
        model = builtin_example("arctan").model
        curve = ergodic_average(model, "x1^2", x0=[0.0], delta=0.1, n_steps=100,
                                n_paths=64, seed=71)
        assert np.all(curve.stderr[1:] > 0)


class TestDeterminism:
    def test_thread_count_invariant(self):
        from utweak.engine import CHUNK
        spec = builtin_example("arctan")
        # span multiple chunks so the worker pool is actually exercised
        kwargs = dict(x0=[1.0], delta=0.1, horizon=1.0, n_paths=CHUNK + 50, seed=83, reference=2)
        a = weak_error_curve(spec, "tanh(x1)", threads=1, **kwargs)
        b = weak_error_curve(spec, "tanh(x1)", threads=4, **kwargs)
        assert np.array_equal(a.estimate, b.estimate)
        assert np.array_equal(a.stderr, b.stderr)

    def test_env_threads_fallback(self, monkeypatch):
        from utweak.engine import default_threads
        monkeypatch.setenv("UTWEAK_THREADS", "3")
        assert default_threads() == 3
        monkeypatch.setenv("UTWEAK_THREADS", "junk")
        assert default_threads() == 1
        monkeypatch.delenv("UTWEAK_THREADS")
        assert default_threads() == 1


class TestCsv:
    def test_error_curve_schema(self, tmp_path):
        spec = builtin_example("ou")
        curve = weak_error_curve(spec, "x1", x0=[1.0], delta=0.1, horizon=1.0,
                                 n_paths=0, seed=1, reference="exact")
        p = tmp_path / "err.csv"
        curve.to_csv(str(p), label="ou")
        lines = p.read_text().splitlines()
        assert lines[0] == "# schema: utweak.error_curve.v1"
        assert "t,estimate,stderr,sup_so_far" in lines
