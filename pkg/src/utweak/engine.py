"""Explicit Euler engine: reproducible noise, path batches, coupled pairs.

Noise is counter-based (Philox).  The standard normal consumed by path p,
step n, channel k is a pure function of (seed, stream, n, p, k): paths are
grouped in fixed chunks of CHUNK, and the draws of chunk c at step n come
from the generator keyed (seed, stream) at counter (0, 0, c, n).  The
result is bit-identical under replay, independent of worker count, and a
prefix property holds when the batch grows.

States, occupation integrals and variational flows all advance on the
mesh t_n = n * delta (index arithmetic).  A path whose norm exceeds
EXPLOSION_THRESHOLD is frozen at its last finite state and flagged with
the step index; frozen paths stop contributing to statistics.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator, Philox

from .models import SdeModel

SQRT2 = np.sqrt(2.0)
CHUNK = 8192
EXPLOSION_THRESHOLD = 1e150
_NORM2_LIMIT = EXPLOSION_THRESHOLD ** 2

DEAD_NONE = 0
DEAD_EXPLODED = 1
DEAD_SINGULAR = 2

PATHS_SCHEMA = "utweak.paths.v1"


def default_threads() -> int:
    env = os.environ.get("UTWEAK_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def normal_block(seed: int, stream: int, step: int, chunk_index: int, rows: int, channels: int) -> np.ndarray:
    """Standard normals, shape (channels, rows); pure in all arguments.

    Path p in the chunk consumes draws p*channels .. p*channels+channels-1
    of the stream keyed by (seed, stream) at counter (0, 0, chunk, step),
    so the value for a given (path, channel) does not depend on how many
    rows are requested.
    """
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | ((int(stream) & 0xFFFFFFFFFFFFFFFF) << 64)
    bg = Philox(key=key, counter=[0, 0, chunk_index, step])
    return np.ascontiguousarray(Generator(bg).standard_normal((rows, channels)).T)


def mesh_times(delta: float, n_steps: int) -> np.ndarray:
    return delta * np.arange(n_steps + 1)


def steps_for(horizon: float, delta: float) -> int:
    n = round(horizon / delta)
    if abs(n * delta - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"horizon {horizon} is not a multiple of the step {delta}")
    return int(n)


def euler_step(model: SdeModel, y, delta: float, dB) -> np.ndarray:
    """One explicit update y + U0(y) delta + sqrt(2) sum_k V_k(y) dB_k."""
    if delta <= 0:
        raise ValueError("step size must be positive")
    y = np.asarray(y, dtype=float)
    dB = np.atleast_1d(np.asarray(dB, dtype=float))
    out = y + delta * model.drift_ito.eval_point(y)
    for k, vk in enumerate(model.diffusions):
        out = out + SQRT2 * vk.eval_point(y) * dB[k]
    return out


def _euler_update_cols(model: SdeModel, X: np.ndarray, delta: float, dB: Optional[np.ndarray]) -> np.ndarray:
    out = X + delta * model.drift_ito(X)
    if dB is not None:
        for k, vk in enumerate(model.diffusions):
            out = out + SQRT2 * vk(X) * dB[k]
    return out


def _resolve_jacobian_mode(model: SdeModel, mode: Optional[str]) -> Optional[str]:
    if mode in (None, False):
        return None
    if mode in ("auto", True):
        return "exponential" if (model.dim == 1 and model.additive) else "variational"
    if mode == "exponential":
        if not (model.dim == 1 and model.additive):
            raise ValueError("exponential Jacobian integration needs a 1-D additive-noise model")
        return mode
    if mode == "variational":
        return mode
    raise ValueError(f"unknown jacobian mode {mode!r}")


def _run_chunk(model, x0, delta, n_steps, seed, stream, chunk_index, rows, jac_mode, lambda_fn, sink):
    N, d = model.dim, model.noise
    X = np.tile(np.asarray(x0, dtype=float).reshape(N, 1), (1, rows))
    alive = np.ones(rows, dtype=bool)
    dead_step = np.full(rows, -1, dtype=np.int64)
    dead_reason = np.zeros(rows, dtype=np.int8)

    scalar_jac = jac_mode is not None and (jac_mode == "exponential" or N == 1)
    J = None
    log_j = None
    prev_bp = None
    if jac_mode == "exponential":
        log_j = np.zeros(rows)
        prev_bp = model.drift_derivatives_1d(X[0], order=1)[1]
    elif jac_mode == "variational":
        if N == 1:
            J = np.ones(rows)
        else:
            J = np.zeros((N, N, rows))
            J[np.arange(N), np.arange(N), :] = 1.0

    occ = None
    prev_lam = None
    if lambda_fn is not None:
        occ = np.zeros(rows)
        prev_lam = np.asarray(lambda_fn(X), dtype=float)
        bad = alive & ~np.isfinite(prev_lam)
        if bad.any():
            dead_step[bad] = 0
            dead_reason[bad] = DEAD_SINGULAR
            alive &= ~bad

    def current_j():
        if jac_mode == "exponential":
            return np.exp(log_j)
        return J

    sink.emit(0, X, current_j() if jac_mode else None, occ, alive)

    with np.errstate(all="ignore"):
        for n in range(n_steps):
            dB = None
            if d > 0:
                dB = np.sqrt(delta) * normal_block(seed, stream, n, chunk_index, rows, d)
            Xn = _euler_update_cols(model, X, delta, dB)

            if jac_mode == "variational":
                if N == 1:
                    b1 = model.drift_derivatives_1d(X[0], order=1)[1]
                    Jn = J * (1.0 + delta * b1)
                    for k, vk in enumerate(model.diffusions):
                        s1 = vk.derivatives_1d(X[0], order=1)[1]
                        Jn = Jn + SQRT2 * s1 * J * dB[k]
                    J = np.where(alive, Jn, J)
                else:
                    A = model.drift_ito.jacobian_cols(X)
                    Jn = J + delta * np.einsum("ijm,jlm->ilm", A, J)
                    for k, vk in enumerate(model.diffusions):
                        Bk = vk.jacobian_cols(X)
                        Jn = Jn + SQRT2 * np.einsum("ijm,jlm->ilm", Bk, J) * dB[k]
                    J = np.where(alive, Jn, J)

            norm2 = np.einsum("im,im->m", Xn, Xn)
            newly_dead = alive & ~(norm2 <= _NORM2_LIMIT)
            if newly_dead.any():
                dead_step[newly_dead] = n + 1
                dead_reason[newly_dead] = DEAD_EXPLODED
                alive = alive & ~newly_dead
            X = np.where(alive, Xn, X)

            if jac_mode == "exponential":
                bp = model.drift_derivatives_1d(X[0], order=1)[1]
                log_j = log_j + np.where(alive, 0.5 * delta * (prev_bp + bp), 0.0)
                prev_bp = bp
            if lambda_fn is not None:
                lam = np.asarray(lambda_fn(X), dtype=float)
                bad = alive & ~np.isfinite(lam)
                if bad.any():
                    dead_step[bad] = n + 1
                    dead_reason[bad] = DEAD_SINGULAR
                    alive = alive & ~bad
                occ = occ + np.where(alive, 0.5 * delta * (prev_lam + lam), 0.0)
                prev_lam = lam

            sink.emit(n + 1, X, current_j() if jac_mode else None, occ, alive)

    sink.close(alive, dead_step, dead_reason)
    return sink


def drive(model, x0, delta, n_steps, n_paths, seed, make_sink, *,
          jacobian=None, lambda_fn=None, stream=0, threads=1):
    """Run all chunks, return the sinks in chunk order (deterministic)."""
    jac_mode = _resolve_jacobian_mode(model, jacobian)
    n_chunks = (n_paths + CHUNK - 1) // CHUNK

    def work(c):
        lo = c * CHUNK
        rows = min(CHUNK, n_paths - lo)
        sink = make_sink(lo, rows)
        return _run_chunk(model, x0, delta, n_steps, seed, stream, c, rows, jac_mode, lambda_fn, sink)

    if threads <= 1 or n_chunks == 1:
        return [work(c) for c in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(n_chunks)))


# ----------------------------------------------------------------------
# materialized batches
# ----------------------------------------------------------------------

@dataclass
class PathBatch:
    """An ensemble of Euler trajectories on a shared mesh.

    states has shape (n_steps+1, N, n_paths).  jacobians, when present, is
    (n_steps+1, n_paths) for scalar flows or (n_steps+1, N, N, n_paths).
    """

    model: SdeModel
    x0: np.ndarray
    delta: float
    n_steps: int
    n_paths: int
    seed: int
    states: np.ndarray
    jacobians: Optional[np.ndarray] = None
    occupation: Optional[np.ndarray] = None
    dead_step: Optional[np.ndarray] = None
    dead_reason: Optional[np.ndarray] = None
    higher: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return mesh_times(self.delta, self.n_steps)

    @property
    def exploded(self) -> np.ndarray:
        return self.dead_reason == DEAD_EXPLODED

    @property
    def alive_final(self) -> np.ndarray:
        return self.dead_reason == DEAD_NONE

    def to_csv(self, path: str) -> None:
        N = self.model.dim
        cols = ["t", "path_id"] + [f"x{i + 1}" for i in range(N)]
        scalar_j = self.jacobians is not None and self.jacobians.ndim == 2
        if self.jacobians is not None:
            if scalar_j:
                cols += ["J11"]
            else:
                cols += [f"J{i + 1}{j + 1}" for i in range(N) for j in range(N)]
        if self.occupation is not None:
            cols += ["occ"]
        times = self.times
        with open(path, "w") as fh:
            fh.write(f"# schema: {PATHS_SCHEMA}\n")
            fh.write(",".join(cols) + "\n")
            for p in range(self.n_paths):
                for n in range(self.n_steps + 1):
                    row = [_fmt(times[n]), str(p)]
                    row += [_fmt(self.states[n, i, p]) for i in range(N)]
                    if self.jacobians is not None:
                        if scalar_j:
                            row.append(_fmt(self.jacobians[n, p]))
                        else:
                            row += [_fmt(self.jacobians[n, i, j, p]) for i in range(N) for j in range(N)]
                    if self.occupation is not None:
                        row.append(_fmt(self.occupation[n, p]))
                    fh.write(",".join(row) + "\n")

    def metadata(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "delta": self.delta,
            "n_steps": self.n_steps,
            "n_paths": self.n_paths,
            "x0": np.asarray(self.x0, dtype=float).tolist(),
            "model": self.model.to_json(),
            "model_hash": self.model.model_hash(),
            "exploded_paths": int(np.sum(self.exploded)),
            "aborted_paths": int(np.sum(self.dead_reason == DEAD_SINGULAR)),
        }

    def write_metadata(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


class _BatchSink:
    def __init__(self, batch: PathBatch, lo: int, rows: int):
        self.batch = batch
        self.lo = lo
        self.rows = rows

    def emit(self, n, X, J, occ, alive):
        sl = slice(self.lo, self.lo + self.rows)
        self.batch.states[n, :, sl] = X
        if J is not None and self.batch.jacobians is not None:
            if self.batch.jacobians.ndim == 2:
                self.batch.jacobians[n, sl] = J
            else:
                self.batch.jacobians[n, :, :, sl] = J
        if occ is not None and self.batch.occupation is not None:
            self.batch.occupation[n, sl] = occ

    def close(self, alive, dead_step, dead_reason):
        sl = slice(self.lo, self.lo + self.rows)
        self.batch.dead_step[sl] = dead_step
        self.batch.dead_reason[sl] = dead_reason


def simulate_batch(model: SdeModel, x0, delta: float, n_steps: int, n_paths: int, seed: int, *,
                   jacobian=None, higher_jacobians: bool = False, occupation: Optional[Callable] = None,
                   stream: int = 0, threads: int = 1) -> PathBatch:
    """Simulate and materialize a reproducible ensemble of Euler paths."""
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    jac_mode = _resolve_jacobian_mode(model, jacobian)
    if higher_jacobians and not (model.dim == 1 and model.additive):
        raise ValueError("higher-order flows need a 1-D additive-noise model")
    if higher_jacobians and jac_mode is None:
        jac_mode = "exponential"

    N = model.dim
    states = np.empty((n_steps + 1, N, n_paths))
    jac = None
    if jac_mode is not None:
        jac = np.empty((n_steps + 1, n_paths)) if (N == 1) else np.empty((n_steps + 1, N, N, n_paths))
    occ = np.empty((n_steps + 1, n_paths)) if occupation is not None else None
    batch = PathBatch(model, x0, delta, n_steps, n_paths, seed, states, jac, occ,
                      dead_step=np.empty(n_paths, dtype=np.int64),
                      dead_reason=np.empty(n_paths, dtype=np.int8))
    drive(model, x0, delta, n_steps, n_paths, seed,
          lambda lo, rows: _BatchSink(batch, lo, rows),
          jacobian=jac_mode, lambda_fn=occupation, stream=stream, threads=threads)
    if higher_jacobians:
        batch.higher = higher_order_flows(batch, model)
    return batch


def higher_order_flows(batch: PathBatch, model: SdeModel) -> dict:
    """Second to fourth derivatives of the flow map along stored 1-D paths.

    With additive noise the first-order flow is exp(int b'(X) ds) and the
    higher orders are nested time integrals of b'', b''', b'''' against
    powers of the flow; everything is evaluated by trapezoid on the mesh.
    """
    if not (model.dim == 1 and model.additive):
        raise ValueError("higher-order flows need a 1-D additive-noise model")
    if batch.jacobians is None or batch.jacobians.ndim != 2:
        raise ValueError("batch must carry the scalar first-order flow")
    J = batch.jacobians
    n_steps, n_paths = batch.n_steps, batch.n_paths
    delta = batch.delta

    J2 = np.zeros((n_steps + 1, n_paths))
    J3 = np.zeros((n_steps + 1, n_paths))
    J4 = np.zeros((n_steps + 1, n_paths))
    A2 = np.zeros(n_paths)   # int b'' J
    A3a = np.zeros(n_paths)  # int b''' J^2
    A3b = np.zeros(n_paths)  # int b'' J2
    B1 = np.zeros(n_paths)   # int b'''' J^3 + 3 b''' J J2 + b'' J3
    B2 = np.zeros(n_paths)   # int 3 b''' J^2 + 2 b'' J2

    def integrands(n):
        x = batch.states[n, 0]
        _, _, b2, b3, b4 = model.drift_derivatives_1d(x, order=4)
        j, j2, j3 = J[n], J2[n], J3[n]
        return (b2 * j, b3 * j * j, b2 * j2,
                b4 * j ** 3 + 3.0 * b3 * j * j2 + b2 * j3,
                3.0 * b3 * j * j + 2.0 * b2 * j2)

    prev = integrands(0)
    for n in range(1, n_steps + 1):
        x = batch.states[n, 0]
        _, _, b2, b3, b4 = model.drift_derivatives_1d(x, order=4)
        j = J[n]
        g2 = b2 * j
        g3a = b3 * j * j
        A2 = A2 + 0.5 * delta * (prev[0] + g2)
        A3a = A3a + 0.5 * delta * (prev[1] + g3a)
        J2[n] = j * A2
        g3b = b2 * J2[n]
        A3b = A3b + 0.5 * delta * (prev[2] + g3b)
        J3[n] = (A3a + A3b) * j + J2[n] * A2
        h1 = b4 * j ** 3 + 3.0 * b3 * j * J2[n] + b2 * J3[n]
        h2 = 3.0 * b3 * j * j + 2.0 * b2 * J2[n]
        B1 = B1 + 0.5 * delta * (prev[3] + h1)
        B2 = B2 + 0.5 * delta * (prev[4] + h2)
        J4[n] = B1 * j + B2 * J2[n] + J3[n] * A2
        prev = (g2, g3a, g3b, h1, h2)
    return {"J2": J2, "J3": J3, "J4": J4}


# ----------------------------------------------------------------------
# coupled fine/coarse reference pairs
# ----------------------------------------------------------------------

@dataclass
class CoupledBatch:
    """Coarse paths at delta and fine paths at delta/m on the shared mesh.

    Both arrays sample the trajectories at the coarse mesh times; the two
    schemes consume the same Brownian increments (the coarse increment is
    the sum of its m fine sub-increments).
    """

    model: SdeModel
    x0: np.ndarray
    delta: float
    m: int
    n_steps: int
    n_paths: int
    seed: int
    coarse: np.ndarray
    fine: np.ndarray
    coarse_dead: np.ndarray
    fine_dead: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return mesh_times(self.delta, self.n_steps)


def _run_coupled_chunk(model, x0, delta, m, n_steps, seed, stream, chunk_index, rows, sink):
    N, d = model.dim, model.noise
    fine_delta = delta / m
    Xc = np.tile(np.asarray(x0, dtype=float).reshape(N, 1), (1, rows))
    Xf = Xc.copy()
    alive_c = np.ones(rows, dtype=bool)
    alive_f = np.ones(rows, dtype=bool)
    sink.emit_pair(0, Xc, Xf, alive_c, alive_f)
    with np.errstate(all="ignore"):
        for n in range(n_steps):
            acc = np.zeros((d, rows)) if d > 0 else None
            for r in range(m):
                dBf = None
                if d > 0:
                    dBf = np.sqrt(fine_delta) * normal_block(seed, stream, n * m + r, chunk_index, rows, d)
                    acc += dBf
                Xf_next = _euler_update_cols(model, Xf, fine_delta, dBf)
                norm2 = np.einsum("im,im->m", Xf_next, Xf_next)
                newly = alive_f & ~(norm2 <= _NORM2_LIMIT)
                alive_f = alive_f & ~newly
                Xf = np.where(alive_f, Xf_next, Xf)
            Xc_next = _euler_update_cols(model, Xc, delta, acc)
            norm2c = np.einsum("im,im->m", Xc_next, Xc_next)
            newly_c = alive_c & ~(norm2c <= _NORM2_LIMIT)
            alive_c = alive_c & ~newly_c
            Xc = np.where(alive_c, Xc_next, Xc)
            sink.emit_pair(n + 1, Xc, Xf, alive_c, alive_f)
    sink.close_pair(alive_c, alive_f)
    return sink


def drive_coupled(model, x0, delta, m, n_steps, n_paths, seed, make_sink, *, stream=0, threads=1):
    if m < 1 or (m & (m - 1)) != 0:
        raise ValueError("refinement factor m must be a power of two")
    n_chunks = (n_paths + CHUNK - 1) // CHUNK

    def work(c):
        lo = c * CHUNK
        rows = min(CHUNK, n_paths - lo)
        return _run_coupled_chunk(model, x0, delta, m, n_steps, seed, stream, c, rows, make_sink(lo, rows))

    if threads <= 1 or n_chunks == 1:
        return [work(c) for c in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(n_chunks)))


class _CoupledBatchSink:
    def __init__(self, batch: CoupledBatch, lo: int, rows: int):
        self.batch = batch
        self.lo = lo
        self.rows = rows

    def emit_pair(self, n, Xc, Xf, alive_c, alive_f):
        sl = slice(self.lo, self.lo + self.rows)
        self.batch.coarse[n, :, sl] = Xc
        self.batch.fine[n, :, sl] = Xf

    def close_pair(self, alive_c, alive_f):
        sl = slice(self.lo, self.lo + self.rows)
        self.batch.coarse_dead[sl] = ~alive_c
        self.batch.fine_dead[sl] = ~alive_f


def coupled_reference(model: SdeModel, x0, delta: float, m: int, n_steps: int, n_paths: int,
                      seed: int, *, stream: int = 0, threads: int = 1) -> CoupledBatch:
    """Coarse paths plus an m-times-finer surrogate truth on shared noise."""
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    N = model.dim
    batch = CoupledBatch(model, x0, delta, m, n_steps, n_paths, seed,
                         coarse=np.empty((n_steps + 1, N, n_paths)),
                         fine=np.empty((n_steps + 1, N, n_paths)),
                         coarse_dead=np.empty(n_paths, dtype=bool),
                         fine_dead=np.empty(n_paths, dtype=bool))
    drive_coupled(model, x0, delta, m, n_steps, n_paths, seed,
                  lambda lo, rows: _CoupledBatchSink(batch, lo, rows),
                  stream=stream, threads=threads)
    return batch


# ----------------------------------------------------------------------
# exact-in-law sampling at mesh times (for models with an exact_step oracle)
# ----------------------------------------------------------------------

def exact_batch(model: SdeModel, exact_step: Callable, x0, delta: float, n_steps: int,
                n_paths: int, seed: int, *, stream: int = 1) -> np.ndarray:
    """Sample the true law at mesh times; shape (n_steps+1, N, n_paths).

    Uses a separate noise stream so the samples are independent of the
    Euler draws of the same seed.
    """
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    N, d = model.dim, max(model.noise, 1)
    out = np.empty((n_steps + 1, N, n_paths))
    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    for c in range(n_chunks):
        lo = c * CHUNK
        rows = min(CHUNK, n_paths - lo)
        X = np.tile(x0.reshape(N, 1), (1, rows))
        out[0, :, lo:lo + rows] = X
        for n in range(n_steps):
            Z = normal_block(seed, stream, n, c, rows, d)
            X = exact_step(X, n * delta, (n + 1) * delta, Z)
            out[n + 1, :, lo:lo + rows] = X
    return out
