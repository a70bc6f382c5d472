"""Closed-form oracles for the builtin examples and scripted reproductions.

Each reproduction writes CSV curves plus a summary.json into an output
directory, using modest default ensemble sizes; anything heavier is the
job of the test suite.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import estimators, jets
from .conditions import RateFunction, cosh_ratio, gap_scan, make_grid
from .engine import exact_batch, mesh_times, simulate_batch, steps_for
from .estimators import (
    VARIANCE_SCHEMA,
    ErrorCurve,
    decay_functional,
    moment_supremum,
    weak_error_curve,
)
from .models import ExampleSpec, builtin_example
from .conditions import OVERLAY_CSV_SCHEMA

DEFAULT_SEED = 0x5DE5EED0


def grusin_variances(t: float, delta: float, n: int, x1: float = 1.0):
    """Closed-form variances of the second coordinate: law vs Euler chain."""
    if t < 0 or n < 0:
        raise ValueError("time and step count must be non-negative")
    var_exact = x1 * x1 * math.expm1(2.0 * t)
    # expm1/log1p form of 2((1+d)^{2n} - 1)/(2+d) keeps 1e-12 relative
    # accuracy out to n ~ 1e4
    var_euler = 2.0 * x1 * x1 * math.expm1(2 * n * math.log1p(delta)) / (2.0 + delta)
    return var_exact, var_euler


def circle_exact(t: float, x) -> np.ndarray:
    """Exact rotation of the circle dynamics; valid for |x| < 2."""
    x = np.asarray(x, dtype=float)
    if float(np.hypot(x[0], x[1])) >= 2.0:
        raise ValueError("the rotation solution holds only inside radius 2")
    c, s = math.cos(t), math.sin(t)
    return np.array([x[0] * c - x[1] * s, x[0] * s + x[1] * c])


def default_confinement(r):
    """Radial factor of the circle example: 0 inside 2, -1 outside 3, quintic bridge."""
    return -jets.smoothstep5(r, 2.0, 3.0)


def circle_radius_recurrence(delta: float, n: int, r0: float = 1.0,
                             psi: Optional[Callable] = None) -> np.ndarray:
    """Exact recurrence for the squared radius of the Euler iterates.

    R_{k+1} = ((1 + psi(sqrt(R_k)) delta)^2 + delta^2) R_k, with psi the
    radial confinement factor.
    """
    if psi is None:
        psi = default_confinement
    R = np.empty(n + 1)
    R[0] = r0
    for k in range(n):
        p = psi(math.sqrt(R[k]))
        R[k + 1] = ((1.0 + p * delta) ** 2 + delta ** 2) * R[k]
    return R


def xcubed_threshold(delta: float) -> float:
    """Second-moment threshold 4 + 4/delta^2 separating stable from explosive starts."""
    if delta <= 0:
        raise ValueError("step size must be positive")
    return 4.0 + 4.0 / delta ** 2


@dataclass
class CoshBound:
    """Constants of the one-step cosh recursion E[cosh(Y_{n+1})] <= a E[cosh(Y_n)] + b."""

    delta: float
    alpha: float
    beta: float
    a: float
    b: float

    def bound(self, x0: float) -> float:
        return math.cosh(x0) + self.b / (1.0 - self.a)


def cosh_bound_constants(delta: float, alpha: float, beta: Optional[float] = None,
                         grid=(-30.0, 30.0, 1e-3)) -> CoshBound:
    """Uniform-in-n cosh-moment bound constants for the arctan drift.

    Needs alpha in (1, pi/2) so that -atan(x) sinh(x) <= beta - alpha cosh(x)
    holds with a finite beta; beta defaults to the grid supremum of
    -atan(x) sinh(x) + alpha cosh(x).  Requires a = e^d (1 - alpha d +
    pi^2 d^2 / 8) < 1, which bounds the admissible step.
    """
    if not (1.0 < alpha < math.pi / 2.0):
        raise ValueError("alpha must lie in (1, pi/2)")
    if beta is None:
        xs = make_grid(*grid)
        beta = float(np.max(-np.arctan(xs) * np.sinh(xs) + alpha * np.cosh(xs)))
    a = math.exp(delta) * (1.0 - alpha * delta + math.pi ** 2 / 8.0 * delta ** 2)
    if not 0.0 < a < 1.0:
        raise ValueError(f"step {delta} too large: contraction factor a={a:.6g} not in (0, 1)")
    b = math.exp(delta) * beta * delta + math.exp(delta) * (math.pi ** 2 / 8.0) * delta ** 2 \
        * math.cosh(math.pi * delta / 2.0)
    return CoshBound(delta=delta, alpha=alpha, beta=beta, a=a, b=b)


ORACLES = {
    "grusin_variances": (grusin_variances,
                         "variance of the Gaussian second coordinate: law e^{2t}-1 vs chain 2((1+d)^{2n}-1)/(2+d)"),
    "circle_exact": (circle_exact, "rotation (x cos t - y sin t, x sin t + y cos t) inside radius 2"),
    "circle_radius_recurrence": (circle_radius_recurrence,
                                 "exact squared-radius recurrence of the Euler iterates"),
    "xcubed_threshold": (xcubed_threshold, "explosive-start threshold 4 + 4/d^2 for the cubic drift"),
    "cosh_bound_constants": (cosh_bound_constants,
                             "one-step cosh recursion constants a, b and the bound cosh(x0) + b/(1-a)"),
}


# ----------------------------------------------------------------------
# scripted reproductions
# ----------------------------------------------------------------------

def _write_overlay(path: str, spec: ExampleSpec, rate: RateFunction, lo: float, hi: float,
                   step: float) -> None:
    xs = make_grid(lo, hi, step)
    drift = spec.model.drift_ito(xs[None, :])[0]
    lam = rate.on_grid(xs)
    with open(path, "w") as fh:
        fh.write(f"# schema: {OVERLAY_CSV_SCHEMA}\n")
        fh.write(f"# label: {spec.name}\n")
        fh.write("x,drift,lambda\n")
        for x, d, l in zip(xs, drift, lam):
            fh.write(f"{x:.17g},{d:.17g},{l:.17g}\n")


def _write_summary(outdir: str, name: str, config: dict, results: dict) -> dict:
    summary = {
        "schema_version": 1,
        "command": "reproduce",
        "options": {"name": name, **config},
        "results": results,
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return summary


def reproduce(name: str, outdir: str, *, delta: Optional[float] = None,
              n_paths: Optional[int] = None, seed: int = DEFAULT_SEED,
              threads: int = 1) -> dict:
    """Run the scripted pipeline for a builtin example and write artifacts."""
    os.makedirs(outdir, exist_ok=True)
    spec = builtin_example(name)
    runner = _PIPELINES.get(name)
    if runner is None:
        raise KeyError(f"no reproduction pipeline for {name!r}")
    return runner(spec, outdir, delta, n_paths, seed, threads)


def _reproduce_gap_family(spec, outdir, delta, n_paths, seed, threads,
                          decay_horizon=10.0, weak_horizon=5.0, fine_m=64):
    delta = delta or spec.delta
    n_paths = n_paths or 2000
    rate = RateFunction.from_fields(spec.model.drift_strat, spec.model.diffusions[0])
    result = gap_scan(rate, lambda x: cosh_ratio(spec.model, spec.alpha, x), spec.grid,
                      alpha=spec.alpha)
    result.to_csv(os.path.join(outdir, "gap.csv"), label=spec.name)
    _write_overlay(os.path.join(outdir, "overlay.csv"), spec, rate, -10.0, 10.0, 0.01)

    n_steps = steps_for(decay_horizon, delta)
    decay = decay_functional(spec.model, rate, x0=spec.x0, delta=delta, n_steps=n_steps,
                             n_paths=n_paths, seed=seed, threads=threads)
    decay.to_csv(os.path.join(outdir, "decay.csv"), label=spec.name)
    with open(os.path.join(outdir, "decay_fit.json"), "w") as fh:
        json.dump(decay.fit_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    weak = weak_error_curve(spec, "tanh(x1)", delta=max(delta, 0.05), horizon=weak_horizon,
                            n_paths=n_paths, seed=seed, reference=fine_m, threads=threads)
    weak.to_csv(os.path.join(outdir, "weak_error.csv"), label=spec.name)

    results = {
        "gap_infimum": result.infimum,
        "lambda0": result.lambda0,
        "gap_positive": result.passed,
        "decay_fit_rate": decay.fit.rate,
        "weak_error_sup": weak.sup,
    }
    return _write_summary(outdir, spec.name, {"delta": delta, "n_paths": n_paths, "seed": seed}, results)


def _reproduce_arctan(spec, outdir, delta, n_paths, seed, threads):
    return _reproduce_gap_family(spec, outdir, delta, n_paths, seed, threads)


def _reproduce_bump(spec, outdir, delta, n_paths, seed, threads):
    return _reproduce_gap_family(spec, outdir, delta, n_paths, seed, threads)


def _reproduce_ou(spec, outdir, delta, n_paths, seed, threads):
    results = {}
    sups = {}
    for d in (0.2, 0.1, 0.05):
        curve = weak_error_curve(spec, "x1^2", x0=np.array([1.0]), delta=d, horizon=10.0,
                                 n_paths=0, seed=seed, reference="exact")
        curve.to_csv(os.path.join(outdir, f"weak_error_d{d}.csv"), label=f"ou d={d}")
        sups[str(d)] = curve.sup
    results["sup_errors"] = sups
    results["ratios"] = {
        "0.2/0.1": sups["0.2"] / sups["0.1"],
        "0.1/0.05": sups["0.1"] / sups["0.05"],
    }
    return _write_summary(outdir, spec.name, {"seed": seed}, results)


def _reproduce_sincos(spec, outdir, delta, n_paths, seed, threads):
    delta = delta or spec.delta
    n_paths = n_paths or 2000
    rate = RateFunction.from_expression("1/cos(x1)")
    _write_overlay(os.path.join(outdir, "overlay.csv"), spec, rate, -1.45, 1.45, 0.01)
    n_steps = steps_for(5.0, delta)
    decay = decay_functional(spec.model, rate, x0=spec.x0, delta=delta, n_steps=n_steps,
                             n_paths=n_paths, seed=seed, threads=threads)
    decay.to_csv(os.path.join(outdir, "decay.csv"), label=spec.name)
    results = {"decay_fit_rate": decay.fit.rate, "aborted_fraction": decay.aborted_fraction}
    return _write_summary(outdir, spec.name, {"delta": delta, "n_paths": n_paths, "seed": seed}, results)


def _reproduce_grusin(spec, outdir, delta, n_paths, seed, threads):
    delta = delta or 1e-3
    n_paths = n_paths or 2000
    mc_horizon = 3.0
    horizon = 10.0
    x0 = spec.x0

    n_mc = steps_for(mc_horizon, delta)
    batch = simulate_batch(spec.model, x0, delta, n_mc, n_paths, seed, threads=threads)
    exact = exact_batch(spec.model, spec.oracle.exact_step, x0, delta, n_mc, n_paths, seed)

    stride = max(1, n_mc // 100)
    rows = []
    full_times = mesh_times(delta, steps_for(horizon, delta))
    for t in full_times[:: max(1, len(full_times) // 200)]:
        n = int(round(t / delta))
        ve, vu = grusin_variances(t, delta, n, x1=float(x0[0]))
        if t <= mc_horizon:
            ys = batch.states[n, 1]
            var_mc = float(np.var(ys, ddof=1))
            stderr_mc = var_mc * math.sqrt(2.0 / (n_paths - 1))
        else:
            var_mc, stderr_mc = float("nan"), float("nan")
        rows.append((t, ve, vu, var_mc, stderr_mc))
    with open(os.path.join(outdir, "variance.csv"), "w") as fh:
        fh.write(f"# schema: {VARIANCE_SCHEMA}\n")
        fh.write(f"# label: {spec.name}\n")
        fh.write("t,var_exact,var_euler,var_mc,stderr_mc\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    n1 = steps_for(1.0, delta)
    n10 = steps_for(10.0, delta)
    gap1 = abs(grusin_variances(1.0, delta, n1)[1] - grusin_variances(1.0, delta, n1)[0])
    gap10 = abs(grusin_variances(10.0, delta, n10)[1] - grusin_variances(10.0, delta, n10)[0])
    exact_var_mc = float(np.var(exact[n_mc, 1], ddof=1))
    results = {
        "gap_t1": gap1,
        "gap_t10": gap10,
        "gap_grows": gap10 > gap1,
        "euler_var_mc_t3": float(np.var(batch.states[n_mc, 1], ddof=1)),
        "exact_var_mc_t3": exact_var_mc,
        "stride": stride,
    }
    return _write_summary(outdir, spec.name, {"delta": delta, "n_paths": n_paths, "seed": seed}, results)


def _reproduce_xcubed(spec, outdir, delta, n_paths, seed, threads):
    n_paths = n_paths or 2000
    d_conv = spec.constants["delta_convergent"]
    d_div = spec.constants["delta_divergent"]
    x0 = spec.x0

    conv = moment_supremum(spec.model, x0=x0, delta=d_conv, n_steps=10000, n_paths=n_paths,
                           seed=seed, power=2.0, threads=threads)
    _write_moment_csv(os.path.join(outdir, "moments_convergent.csv"), conv, "xcubed convergent")
    div = moment_supremum(spec.model, x0=x0, delta=d_div, n_steps=10, n_paths=min(n_paths, 1000),
                          seed=seed, power=2.0, threads=threads)
    _write_moment_csv(os.path.join(outdir, "moments_divergent.csv"), div, "xcubed divergent")

    results = {
        "threshold_divergent": xcubed_threshold(d_div),
        "threshold_convergent": xcubed_threshold(d_conv),
        "start_second_moment": float(x0[0] ** 2),
        "convergent_sup": conv.sup,
        "divergent_sup": div.sup,
        "divergent_explosion_fraction": div.explosion_fraction,
    }
    return _write_summary(outdir, spec.name,
                          {"delta_convergent": d_conv, "delta_divergent": d_div,
                           "n_paths": n_paths, "seed": seed}, results)


def _write_moment_csv(path, curve, label):
    with open(path, "w") as fh:
        fh.write(f"# schema: {estimators.ERROR_CURVE_SCHEMA}\n")
        fh.write(f"# label: {label}\n")
        fh.write("t,estimate,stderr,sup_so_far\n")
        for t, e, s, u in zip(curve.times, curve.estimate, curve.stderr, curve.running_sup):
            fh.write(f"{t:.17g},{e:.17g},{s:.17g},{u:.17g}\n")


def _reproduce_circle(spec, outdir, delta, n_paths, seed, threads):
    deltas = [delta] if delta else [0.05, 0.02, 0.01]
    sups = {}
    for d in deltas:
        n = min(10000, steps_for(500.0, d))
        R = circle_radius_recurrence(d, n, r0=float(spec.x0 @ spec.x0))
        err = R - 1.0  # |X_t|^2 = 1 along the exact rotation from (1,0)
        times = mesh_times(d, n)
        curve = ErrorCurve(times, np.abs(err), np.zeros_like(err),
                           np.maximum.accumulate(np.abs(err)), d, None, 0, seed)
        curve.to_csv(os.path.join(outdir, f"divergence_d{d}.csv"), label=f"circle d={d}")
        sups[str(d)] = float(np.max(err))
    results = {"sup_radius_error": sups, "all_exceed_one": all(v > 1.0 for v in sups.values())}
    return _write_summary(outdir, spec.name, {"deltas": deltas, "seed": seed}, results)


def _reproduce_circle_noise(spec, outdir, delta, n_paths, seed, threads):
    delta = delta or 0.05
    n_paths = n_paths or 2000
    curve = weak_error_curve(spec, "x1^2+x2^2", delta=delta, horizon=30.0, n_paths=n_paths,
                             seed=seed, reference=16, threads=threads)
    curve.to_csv(os.path.join(outdir, "weak_error.csv"), label=spec.name)
    results = {"weak_error_sup": curve.sup, "explosion_fraction": curve.explosion_fraction}
    return _write_summary(outdir, spec.name, {"delta": delta, "n_paths": n_paths, "seed": seed}, results)


_PIPELINES = {
    "arctan": _reproduce_arctan,
    "bump": _reproduce_bump,
    "sincos": _reproduce_sincos,
    "grusin": _reproduce_grusin,
    "xcubed": _reproduce_xcubed,
    "circle": _reproduce_circle,
    "circle_noise": _reproduce_circle_noise,
    "ou": _reproduce_ou,
}
