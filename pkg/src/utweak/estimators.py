"""Monte Carlo estimators for the quantities the analysis bounds.

Every estimate carries its standard error; nothing is silently absorbed.
Reductions accumulate per fixed-size path chunk and are combined in chunk
order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from . import dsl
from .conditions import RateFunction
from .dsl import parse_expr, pretty
from .engine import DEAD_EXPLODED, DEAD_SINGULAR, drive, drive_coupled, mesh_times, steps_for
from .models import ExampleSpec, SdeModel

ERROR_CURVE_SCHEMA = "utweak.error_curve.v1"
DECAY_SCHEMA = "utweak.decay.v1"
ERGODIC_SCHEMA = "utweak.ergodic.v1"
VARIANCE_SCHEMA = "utweak.variance_gap.v1"

DIVERGENT_EXPLOSION_FRACTION = 0.5


def _resolve(model_or_spec) -> Tuple[SdeModel, Optional[ExampleSpec]]:
    if isinstance(model_or_spec, ExampleSpec):
        return model_or_spec.model, model_or_spec
    return model_or_spec, None


def _as_expr(phi, dim):
    return parse_expr(phi, dim) if isinstance(phi, str) else phi


def _mean_stderr(s, s2, cnt):
    cnt = np.asarray(cnt, dtype=float)
    with np.errstate(all="ignore"):
        mean = np.where(cnt > 0, s / cnt, np.nan)
        var = np.where(cnt > 1, np.maximum(s2 - cnt * mean ** 2, 0.0) / (cnt - 1.0), np.nan)
        stderr = np.sqrt(np.where(cnt > 0, var / cnt, np.nan))
    return mean, stderr


class _SeriesSink:
    """Accumulates sum, sum of squares and alive count of one statistic."""

    def __init__(self, n_steps: int, rows: int, value_fn: Callable):
        self.value_fn = value_fn
        self.s = np.zeros(n_steps + 1)
        self.s2 = np.zeros(n_steps + 1)
        self.cnt = np.zeros(n_steps + 1, dtype=np.int64)
        self.dead_reason = None

    def emit(self, n, X, J, occ, alive):
        v = self.value_fn(n, X, J, occ)
        v = np.where(alive, v, 0.0)
        self.s[n] += float(np.sum(v))
        self.s2[n] += float(np.sum(v * v))
        self.cnt[n] += int(np.sum(alive))

    def close(self, alive, dead_step, dead_reason):
        self.dead_reason = dead_reason.copy()


def _combine_series(sinks):
    s = sum(k.s for k in sinks)
    s2 = sum(k.s2 for k in sinks)
    cnt = sum(k.cnt for k in sinks)
    dead = np.concatenate([k.dead_reason for k in sinks])
    return s, s2, cnt, dead


def _run_series(model, x0, delta, n_steps, n_paths, seed, value_fn, *,
                jacobian=None, lambda_fn=None, threads=1, stream=0):
    sinks = drive(model, x0, delta, n_steps, n_paths, seed,
                  lambda lo, rows: _SeriesSink(n_steps, rows, value_fn),
                  jacobian=jacobian, lambda_fn=lambda_fn, stream=stream, threads=threads)
    return _combine_series(sinks)


# ----------------------------------------------------------------------
# weak-error curves
# ----------------------------------------------------------------------

def _growth_divergent(est: np.ndarray, stderr: np.ndarray) -> bool:
    """Audit heuristic for curves that keep growing to the end.

    Flags a curve whose maximum sits in the final tenth of the mesh and
    clearly dominates both the early curve and the Monte Carlo noise; a
    bounded curve saturates earlier or stays within noise of its plateau.
    """
    n = len(est)
    if n < 10 or not np.any(np.isfinite(est)):
        return False
    i = int(np.nanargmax(est))
    if i < 0.9 * (n - 1):
        return False
    head = float(np.nanmedian(est[: max(2, n // 2)]))
    noise = float(np.nanmax(stderr)) if np.any(np.isfinite(stderr)) else 0.0
    return est[i] > 5.0 * head and est[i] > 10.0 * noise


@dataclass
class ErrorCurve:
    """Per-time weak-error estimates with their running supremum.

    divergent is set when more than half the paths explode or when the
    curve is still setting new suprema at the end of the horizon (see
    _growth_divergent)."""

    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    sup_so_far: np.ndarray
    delta: float
    delta_ref: Optional[float]
    n_paths: int
    seed: int
    divergent: bool = False
    explosion_fraction: float = 0.0
    observable: str = ""

    @property
    def sup(self) -> float:
        return float(self.sup_so_far[-1])

    def to_csv(self, path: str, label: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(f"# schema: {ERROR_CURVE_SCHEMA}\n")
            if label:
                fh.write(f"# label: {label}\n")
            if self.observable:
                fh.write(f"# observable: {self.observable}\n")
            fh.write("t,estimate,stderr,sup_so_far\n")
            for t, e, s, u in zip(self.times, self.estimate, self.stderr, self.sup_so_far):
                fh.write(f"{t:.17g},{e:.17g},{s:.17g},{u:.17g}\n")


class _PairSink:
    def __init__(self, n_steps: int, rows: int, value_fn: Callable):
        self.value_fn = value_fn
        self.s = np.zeros(n_steps + 1)
        self.s2 = np.zeros(n_steps + 1)
        self.cnt = np.zeros(n_steps + 1, dtype=np.int64)
        self.n_dead = 0
        self.rows = rows

    def emit_pair(self, n, Xc, Xf, alive_c, alive_f):
        both = alive_c & alive_f
        d = self.value_fn(Xc) - self.value_fn(Xf)
        d = np.where(both, d, 0.0)
        self.s[n] += float(np.sum(d))
        self.s2[n] += float(np.sum(d * d))
        self.cnt[n] += int(np.sum(both))

    def close_pair(self, alive_c, alive_f):
        self.n_dead = int(np.sum(~(alive_c & alive_f)))


def weak_error_curve(model_or_spec, phi, *, delta: float, horizon: float, n_paths: int,
                     seed: int, reference: Union[str, int] = "exact", x0=None,
                     threads: int = 1) -> ErrorCurve:
    """sup_t |E phi(X_t) - E phi(Y_t)| data, against an exact law or a finer scheme.

    reference='exact' uses the closed-form oracle for E phi(X_t) (and, when
    n_paths == 0, the closed form for the scheme mean too, giving a
    zero-variance curve).  reference=m (an integer) couples each coarse
    path to an m-times finer one on shared noise and reports the paired
    difference of the means.
    """
    model, spec = _resolve(model_or_spec)
    if x0 is None:
        if spec is None:
            raise ValueError("x0 is required when no example defaults are available")
        x0 = spec.x0
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    n_steps = steps_for(horizon, delta)
    times = mesh_times(delta, n_steps)
    expr = _as_expr(phi, model.dim)
    key = pretty(expr)

    def phi_cols(X):
        return dsl.eval_expr_cols(expr, X)

    if reference == "exact":
        if spec is None or key not in spec.oracle.moments:
            raise ValueError(f"no exact moment oracle for observable {key!r}")
        oracle = spec.oracle.moments[key]
        exact = np.array([oracle(t, x0) for t in times])
        if n_paths == 0:
            if key not in spec.oracle.euler_moments:
                raise ValueError(f"no closed-form scheme moment for observable {key!r}")
            scheme = spec.oracle.euler_moments[key]
            mean = np.array([scheme(n, delta, x0) for n in range(n_steps + 1)])
            stderr = np.zeros_like(mean)
            expl = 0.0
        else:
            s, s2, cnt, dead = _run_series(model, x0, delta, n_steps, n_paths, seed,
                                           lambda n, X, J, occ: phi_cols(X), threads=threads)
            mean, stderr = _mean_stderr(s, s2, cnt)
            expl = float(np.mean(dead == DEAD_EXPLODED))
        est = np.abs(mean - exact)
        divergent = expl > DIVERGENT_EXPLOSION_FRACTION or _growth_divergent(est, stderr)
        curve = ErrorCurve(times, est, stderr, np.fmax.accumulate(est), delta, None,
                           n_paths, seed, divergent=divergent,
                           explosion_fraction=expl, observable=key)
        return curve

    m = int(reference)
    sinks = drive_coupled(model, x0, delta, m, n_steps, n_paths, seed,
                          lambda lo, rows: _PairSink(n_steps, rows, phi_cols), threads=threads)
    s = sum(k.s for k in sinks)
    s2 = sum(k.s2 for k in sinks)
    cnt = sum(k.cnt for k in sinks)
    n_dead = sum(k.n_dead for k in sinks)
    mean, stderr = _mean_stderr(s, s2, cnt)
    est = np.abs(mean)
    expl = n_dead / n_paths
    divergent = expl > DIVERGENT_EXPLOSION_FRACTION or _growth_divergent(est, stderr)
    return ErrorCurve(times, est, stderr, np.fmax.accumulate(est), delta, delta / m,
                      n_paths, seed, divergent=divergent,
                      explosion_fraction=expl, observable=key)


# ----------------------------------------------------------------------
# moment suprema
# ----------------------------------------------------------------------

@dataclass
class MomentCurve:
    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    running_sup: np.ndarray
    sup: float
    sup_stderr: float
    explosion_fraction: float
    alive_fraction: np.ndarray

    @property
    def exploded(self) -> bool:
        return self.explosion_fraction > 0.0


def moment_supremum(model_or_spec, *, x0, delta: float, n_steps: int, n_paths: int, seed: int,
                    weight=None, power: float = 0.0, threads: int = 1) -> MomentCurve:
    """Running sup over mesh times of E[|Y|^p u(Y)], with its standard error.

    Exploded paths leave the average from their explosion step on; the
    alive fraction per time is reported alongside.
    """
    model, _ = _resolve(model_or_spec)
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    wexpr = _as_expr(weight, model.dim) if isinstance(weight, str) else weight

    def value(n, X, J, occ):
        if power:
            v = np.einsum("im,im->m", X, X) ** (0.5 * power)
        else:
            v = np.ones(X.shape[1])
        if wexpr is not None:
            if callable(wexpr):
                v = v * wexpr(X)
            else:
                v = v * dsl.eval_expr_cols(wexpr, X)
        return v

    s, s2, cnt, dead = _run_series(model, x0, delta, n_steps, n_paths, seed, value, threads=threads)
    mean, stderr = _mean_stderr(s, s2, cnt)
    running = np.maximum.accumulate(np.where(np.isfinite(mean), mean, -np.inf))
    i = int(np.argmax(np.where(np.isfinite(mean), mean, -np.inf)))
    return MomentCurve(
        times=mesh_times(delta, n_steps),
        estimate=mean,
        stderr=stderr,
        running_sup=running,
        sup=float(mean[i]),
        sup_stderr=float(stderr[i]),
        explosion_fraction=float(np.mean(dead == DEAD_EXPLODED)),
        alive_fraction=cnt / float(n_paths),
    )


# ----------------------------------------------------------------------
# occupation-decay functionals
# ----------------------------------------------------------------------

@dataclass
class DecayFit:
    rate: float
    intercept: float
    residual: float


@dataclass
class DecayCurve:
    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    fit: DecayFit
    aborted_fraction: float = 0.0

    def to_csv(self, path: str, label: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(f"# schema: {DECAY_SCHEMA}\n")
            if label:
                fh.write(f"# label: {label}\n")
            fh.write("t,decay,stderr\n")
            for t, e, s in zip(self.times, self.estimate, self.stderr):
                fh.write(f"{t:.17g},{e:.17g},{s:.17g}\n")

    def fit_json(self) -> dict:
        return {"schema_version": 1, "rate": self.fit.rate, "intercept": self.fit.intercept,
                "residual": self.fit.residual, "aborted_fraction": self.aborted_fraction}


def _log_linear_fit(times, values, tail_fraction=0.5) -> DecayFit:
    n = len(times)
    start = int(np.floor(n * (1.0 - tail_fraction)))
    t = np.asarray(times[start:])
    v = np.asarray(values[start:])
    ok = np.isfinite(v) & (v > 0)
    if ok.sum() < 2:
        return DecayFit(rate=np.nan, intercept=np.nan, residual=np.nan)
    y = np.log(v[ok])
    coef = np.polyfit(t[ok], y, 1)
    resid = float(np.sqrt(np.mean((np.polyval(coef, t[ok]) - y) ** 2)))
    return DecayFit(rate=float(-coef[0]), intercept=float(coef[1]), residual=resid)


def decay_functional(model_or_spec, rate, *, x0, delta: float, n_steps: int, n_paths: int,
                     seed: int, threads: int = 1) -> DecayCurve:
    """E[exp(-2 int_0^t rate(Y_s) ds)] per mesh time, with a log-linear tail fit.

    Paths that hit a singular point of the rate are aborted and reported.
    """
    model, _ = _resolve(model_or_spec)
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    lam = rate.columns if isinstance(rate, RateFunction) else rate

    s, s2, cnt, dead = _run_series(
        model, x0, delta, n_steps, n_paths, seed,
        lambda n, X, J, occ: np.exp(-2.0 * occ),
        lambda_fn=lam, threads=threads)
    mean, stderr = _mean_stderr(s, s2, cnt)
    times = mesh_times(delta, n_steps)
    return DecayCurve(times, mean, stderr, _log_linear_fit(times, mean),
                      aborted_fraction=float(np.mean(dead == DEAD_SINGULAR)))


# ----------------------------------------------------------------------
# semigroup-derivative estimates
# ----------------------------------------------------------------------

@dataclass
class DerivativeCurve:
    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    bound: Optional[np.ndarray]
    fit: DecayFit

    @property
    def bound_satisfied(self) -> Optional[np.ndarray]:
        if self.bound is None:
            return None
        return np.abs(self.estimate) <= self.bound + 3.0 * self.stderr


def derivative_estimate(model_or_spec, f, direction, *, x0, delta: float, n_steps: int,
                        n_paths: int, seed: int, jacobian="auto",
                        bound: Optional[Tuple[float, float, float]] = None,
                        threads: int = 1) -> DerivativeCurve:
    """Pathwise estimate of the semigroup derivative along a field.

    Estimates E[grad f(Y_t)^T J_t V(x0)] per mesh time.  `bound`, when
    given as (u_at_x0, rate, norm_of_Vf), adds the reference curve
    sqrt(u(x0)) e^{-rate t} norm_of_Vf for comparison.
    """
    model, _ = _resolve(model_or_spec)
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    fexpr = _as_expr(f, model.dim)
    vfield = direction
    vx0 = vfield.eval_point(x0)

    if model.dim == 1:
        def value(n, X, J, occ):
            fp = dsl.expr_jet_cols(fexpr, X, order=1).derivative(1)
            return fp * J * vx0[0]
    else:
        eye = np.eye(model.dim)

        def value(n, X, J, occ):
            w = np.einsum("ijm,j->im", J, vx0)
            total = np.zeros(X.shape[1])
            for i in range(model.dim):
                gi = dsl.expr_jet_cols(fexpr, X, direction=eye[i], order=1).derivative(1)
                total += gi * w[i]
            return total

    s, s2, cnt, dead = _run_series(model, x0, delta, n_steps, n_paths, seed, value,
                                   jacobian=jacobian, threads=threads)
    mean, stderr = _mean_stderr(s, s2, cnt)
    times = mesh_times(delta, n_steps)
    bound_curve = None
    if bound is not None:
        u_x0, rate0, vf_norm = bound
        bound_curve = np.sqrt(u_x0) * np.exp(-rate0 * times) * vf_norm
    return DerivativeCurve(times, mean, stderr, bound_curve,
                           _log_linear_fit(times, np.abs(mean)))


# ----------------------------------------------------------------------
# pathwise bracket-coercivity inequality check
# ----------------------------------------------------------------------

@dataclass
class GammaCheckResult:
    n_paths: int
    violations: int
    fraction: float
    worst_deficit: float
    slack: float


class _GammaSink:
    def __init__(self, rows, fexpr, v1, v1x0, slack):
        self.fexpr = fexpr
        self.v1 = v1
        self.v1x0 = v1x0
        self.slack = slack
        self.violated = np.zeros(rows, dtype=bool)
        self.worst = 0.0

    def emit(self, n, X, J, occ, alive):
        fp = dsl.expr_jet_cols(self.fexpr, X, order=1).derivative(1)
        v1x = self.v1(X)[0]
        lhs = np.exp(-2.0 * occ) * (fp * v1x) ** 2
        rhs = (fp * J * self.v1x0) ** 2
        bad = alive & (lhs < rhs * (1.0 - self.slack))
        self.violated |= bad
        with np.errstate(all="ignore"):
            deficit = np.where(alive & (rhs > 0), (rhs - lhs) / rhs, 0.0)
        self.worst = max(self.worst, float(np.max(deficit, initial=0.0)))

    def close(self, alive, dead_step, dead_reason):
        pass


def gamma_pathwise_check(model_or_spec, f, *, x0, delta: float, n_steps: int, n_paths: int,
                         seed: int, rate=None, slack: float = 1e-6,
                         threads: int = 1) -> GammaCheckResult:
    """Check the pathwise inequality exp(-2 int rate) |V1 f(X_t)|^2 >= |f'(X_t) J_t V1(x0)|^2.

    Runs on the Euler surrogate of a 1-D additive-noise model satisfying
    the LOAC; the inequality is evaluated at every mesh time along every
    path, and any time-point failure marks the whole path as violating.
    """
    model, _ = _resolve(model_or_spec)
    if model.dim != 1 or not model.additive or model.noise != 1:
        raise ValueError("the pathwise check needs a 1-D single-channel additive-noise model")
    x0 = np.asarray(x0, dtype=float).reshape(1)
    fexpr = _as_expr(f, 1)
    if rate is None:
        rate = RateFunction.from_fields(model.drift_strat, model.diffusions[0])
    lam = rate.columns if isinstance(rate, RateFunction) else rate
    v1 = model.diffusions[0]
    v1x0 = float(v1.eval_point(x0)[0])

    sinks = drive(model, x0, delta, n_steps, n_paths, seed,
                  lambda lo, rows: _GammaSink(rows, fexpr, v1, v1x0, slack),
                  jacobian="exponential", lambda_fn=lam, threads=threads)
    violations = int(sum(np.sum(k.violated) for k in sinks))
    worst = max(k.worst for k in sinks)
    return GammaCheckResult(n_paths=n_paths, violations=violations,
                            fraction=violations / n_paths, worst_deficit=worst, slack=slack)


# ----------------------------------------------------------------------
# ergodic averages
# ----------------------------------------------------------------------

@dataclass
class ErgodicCurve:
    times: np.ndarray
    average: np.ndarray
    stderr: np.ndarray
    gap: Optional[np.ndarray]
    oracle_value: Optional[float]

    def to_csv(self, path: str, label: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(f"# schema: {ERGODIC_SCHEMA}\n")
            if label:
                fh.write(f"# label: {label}\n")
            cols = "t,average,stderr" + (",gap" if self.gap is not None else "")
            fh.write(cols + "\n")
            for i, t in enumerate(self.times):
                row = f"{t:.17g},{self.average[i]:.17g},{self.stderr[i]:.17g}"
                if self.gap is not None:
                    row += f",{self.gap[i]:.17g}"
                fh.write(row + "\n")


class _ErgodicSink:
    """Per-path running time integral of the observable (trapezoid)."""

    def __init__(self, n_steps, rows, phi_cols, delta):
        self.phi_cols = phi_cols
        self.delta = delta
        self.P = np.zeros(rows)
        self.prev = None
        self.s = np.zeros(n_steps + 1)
        self.s2 = np.zeros(n_steps + 1)
        self.cnt = np.zeros(n_steps + 1, dtype=np.int64)

    def emit(self, n, X, J, occ, alive):
        v = self.phi_cols(X)
        if n > 0:
            self.P = self.P + np.where(alive, 0.5 * self.delta * (self.prev + v), 0.0)
        self.prev = v
        p = np.where(alive, self.P, 0.0)
        self.s[n] += float(np.sum(p))
        self.s2[n] += float(np.sum(p * p))
        self.cnt[n] += int(np.sum(alive))

    def close(self, alive, dead_step, dead_reason):
        pass


def ergodic_average(model_or_spec, phi, *, x0, delta: float, n_steps: int, n_paths: int,
                    seed: int, oracle_value: Optional[float] = None,
                    threads: int = 1) -> ErgodicCurve:
    """(1/t) int_0^t E[phi(Y_s)] ds and, when available, its gap to the
    invariant-measure expectation."""
    model, spec = _resolve(model_or_spec)
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    expr = _as_expr(phi, model.dim)

    def phi_cols(X):
        return dsl.eval_expr_cols(expr, X)

    sinks = drive(model, x0, delta, n_steps, n_paths, seed,
                  lambda lo, rows: _ErgodicSink(n_steps, rows, phi_cols, delta),
                  threads=threads)
    s = sum(k.s for k in sinks)
    s2 = sum(k.s2 for k in sinks)
    cnt = sum(k.cnt for k in sinks)
    meanP, stderrP = _mean_stderr(s, s2, cnt)
    times = mesh_times(delta, n_steps)
    avg = np.empty_like(meanP)
    err = np.empty_like(meanP)
    avg[0] = phi_cols(x0[:, None])[0]
    err[0] = 0.0
    avg[1:] = meanP[1:] / times[1:]
    err[1:] = stderrP[1:] / times[1:]
    gap = None
    if oracle_value is not None:
        gap = avg - oracle_value
    return ErgodicCurve(times, avg, err, gap, oracle_value)
