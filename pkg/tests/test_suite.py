"""Closed-form oracle formulas and the scripted reproductions."""

import json
import math

import numpy as np
import pytest

from utweak.engine import simulate_batch
from utweak.models import builtin_example
from utweak.suite import (
    ORACLES,
    circle_exact,
    circle_radius_recurrence,
    cosh_bound_constants,
    grusin_variances,
    reproduce,
    xcubed_threshold,
)


class TestGrusinVariances:
    def test_zero_time(self):
        assert grusin_variances(0.0, 1e-3, 0) == (0.0, 0.0)

    def test_unit_time(self):
        ve, _ = grusin_variances(1.0, 1e-3, 1000)
        assert ve == pytest.approx(6.38905609893065, rel=1e-12)

    def test_gap_grows_with_time(self):
        delta = 1e-3
        gaps = []
        for t in (1.0, 10.0):
            n = round(t / delta)
            ve, vu = grusin_variances(t, delta, n)
            gaps.append(abs(vu - ve))
        assert gaps[1] > gaps[0] > 0

    def test_euler_variance_matches_simulation(self):
        """Closed form vs sample variance of the Gaussian iterates, 3 sigma."""
        spec = builtin_example("grusin")
        delta, n, paths = 0.01, 100, 4000
        batch = simulate_batch(spec.model, spec.x0, delta, n, paths, seed=101)
        want = grusin_variances(1.0, delta, n)[1]
        got = float(np.var(batch.states[-1, 1], ddof=1))
        se = want * math.sqrt(2.0 / (paths - 1))
        assert abs(got - want) < 3 * se

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            grusin_variances(-1.0, 0.1, 1)


class TestCircle:
    def test_full_rotation(self):
        assert np.allclose(circle_exact(2 * math.pi, [1.0, 0.0]), [1.0, 0.0], atol=1e-12)

    def test_outside_radius_rejected(self):
        with pytest.raises(ValueError):
            circle_exact(1.0, [2.0, 1.0])

    def test_zero_confinement_recurrence(self):
        R = circle_radius_recurrence(0.1, 5, r0=1.0, psi=lambda r: 0.0)
        assert np.allclose(R, (1 + 0.01) ** np.arange(6))

    def test_radius_rises_past_two(self):
        R = circle_radius_recurrence(0.05, 2000, r0=1.0)
        assert np.max(R - 1.0) > 1.0
        # confinement caps the excursion at a radius slightly above 2
        assert 2.0 < math.sqrt(np.max(R)) < 2.5
        # stabilizes: the last quarter stays in a narrow band
        tail = R[1500:]
        assert tail.max() - tail.min() < 0.5

    def test_recurrence_matches_engine(self):
        """The recurrence and the actual 2-D Euler iterates agree exactly."""
        spec = builtin_example("circle")
        delta, n = 0.05, 200
        batch = simulate_batch(spec.model, spec.x0, delta, n, 1, seed=0)
        R_engine = np.einsum("ni,ni->n", batch.states[:, :, 0], batch.states[:, :, 0])
        R_formula = circle_radius_recurrence(delta, n, r0=1.0)
        assert np.allclose(R_engine, R_formula, rtol=1e-12)


class TestXcubedThreshold:
    def test_values(self):
        assert xcubed_threshold(1.0) == 8.0
        assert xcubed_threshold(0.5) == 20.0
        assert xcubed_threshold(1e6) == pytest.approx(4.0, abs=1e-6)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            xcubed_threshold(0.0)


class TestCoshBound:
    def test_constants_match_formulas(self):
        cb = cosh_bound_constants(0.05, 1.2)
        assert cb.a == pytest.approx(math.exp(0.05) * (1 - 1.2 * 0.05 + math.pi ** 2 / 8 * 0.05 ** 2),
                                     rel=1e-15)
        assert 0 < cb.a < 1
        b_want = math.exp(0.05) * cb.beta * 0.05 \
            + math.exp(0.05) * (math.pi ** 2 / 8) * 0.05 ** 2 * math.cosh(math.pi * 0.05 / 2)
        assert cb.b == pytest.approx(b_want, rel=1e-15)

    def test_pointwise_inequality_holds(self):
        """-atan(x) sinh(x) <= beta - alpha cosh(x) on a fine grid."""
        cb = cosh_bound_constants(0.05, 1.2)
        xs = np.linspace(-30, 30, 200001)
        lhs = -np.arctan(xs) * np.sinh(xs)
        rhs = cb.beta - cb.alpha * np.cosh(xs)
        assert np.all(lhs <= rhs + 1e-9)

    def test_alpha_must_be_in_window(self):
        with pytest.raises(ValueError):
            cosh_bound_constants(0.05, 0.9)
        with pytest.raises(ValueError):
            cosh_bound_constants(0.05, 1.6)

    def test_step_too_large_rejected(self):
        with pytest.raises(ValueError):
            cosh_bound_constants(2.0, 1.2)

    def test_contraction_for_small_step(self):
        cb = cosh_bound_constants(0.01, 1.2)
        assert 0 < cb.a < 1
        assert cb.bound(1.0) > math.cosh(1.0)


class TestOracleTable:
    def test_entries_carry_descriptions(self):
        for name, (fn, description) in ORACLES.items():
            assert callable(fn)
            assert len(description) > 10


class TestReproduce:
    def test_grusin_pipeline(self, tmp_path):
        out = tmp_path / "grusin"
        summary = reproduce("grusin", str(out), n_paths=2000, seed=11)
        res = summary["results"]
        assert res["gap_grows"]
        # closed forms in the CSV match the formulas to full precision
        rows = [l for l in (out / "variance.csv").read_text().splitlines()
                if not l.startswith("#") and not l.startswith("t,")]
        for row in rows[:20]:
            t, ve, vu, *_ = (float(v) for v in row.split(","))
            n = round(t / 1e-3)
            want_e, want_u = grusin_variances(t, 1e-3, n)
            assert ve == pytest.approx(want_e, rel=1e-12, abs=1e-300)
            assert vu == pytest.approx(want_u, rel=1e-12, abs=1e-300)
        # Monte Carlo column agrees with the law at the sampled times
        var_mc = res["euler_var_mc_t3"]
        want = grusin_variances(3.0, 1e-3, 3000)[1]
        assert abs(var_mc - want) < 3 * want * math.sqrt(2.0 / 1999)

    def test_circle_pipeline(self, tmp_path):
        out = tmp_path / "circle"
        summary = reproduce("circle", str(out), seed=13)
        assert summary["results"]["all_exceed_one"]
        assert set(summary["results"]["sup_radius_error"]) == {"0.05", "0.02", "0.01"}

    def test_ou_pipeline(self, tmp_path):
        out = tmp_path / "ou"
        summary = reproduce("ou", str(out), seed=17)
        for ratio in summary["results"]["ratios"].values():
            assert 1.7 <= ratio <= 2.3

    @pytest.mark.slow
    def test_arctan_pipeline(self, tmp_path):
        out = tmp_path / "arctan"
        summary = reproduce("arctan", str(out), n_paths=500, seed=19)
        res = summary["results"]
        assert res["gap_positive"]
        assert 0.25 <= res["gap_infimum"] <= 0.75
        assert res["decay_fit_rate"] > 0.2
        for fname in ("gap.csv", "overlay.csv", "decay.csv", "decay_fit.json",
                      "weak_error.csv", "summary.json"):
            assert (out / fname).exists()
        obj = json.loads((out / "summary.json").read_text())
        assert obj["results"]["gap_infimum"] == res["gap_infimum"]

    @pytest.mark.parametrize("name", ["bump", "sincos", "xcubed", "circle_noise"])
    def test_remaining_pipelines_smoke(self, name, tmp_path):
        out = tmp_path / name
        summary = reproduce(name, str(out), n_paths=200, seed=23)
        assert (out / "summary.json").exists()
        assert summary["results"]

    def test_unknown_name(self, tmp_path):
        with pytest.raises(KeyError):
            reproduce("nope", str(tmp_path))
