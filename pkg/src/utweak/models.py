"""SDE models in both drift conventions, plus the builtin example catalogue.

A model stores the Stratonovich drift, the Ito drift and the diffusion
fields together; the two drifts are related by the usual correction
``U0^i = V0^i + sum_k sum_j V_k^j d_j V_k^i``.  Builtin examples come with
whatever closed-form oracles exist for them (moments of the law, moments
of the Euler chain, exact samplers, invariant densities).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from . import dsl
from .dsl import VectorField, expr_variables, parse_expr, pretty

MODEL_SCHEMA_VERSION = 1


class DerivedDriftField:
    """Drift in the opposite convention, evaluated numerically from fields.

    sign=+1 turns a Stratonovich drift into the Ito drift; sign=-1 undoes it.
    """

    __slots__ = ("base", "diffusions", "dim", "sign")

    def __init__(self, base, diffusions, sign: int):
        self.base = base
        self.diffusions = tuple(diffusions)
        self.dim = base.dim
        self.sign = sign

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.eval_point_unchecked(X)
        out = np.array(self.base(X), dtype=float)
        for vk in self.diffusions:
            Jk = vk.jacobian_cols(X)
            out += self.sign * np.einsum("ijm,jm->im", Jk, vk(X))
        return out

    def eval_point_unchecked(self, x):
        out = np.array(self.base(x), dtype=float)
        for vk in self.diffusions:
            out += self.sign * (vk.jacobian(x) @ vk(x))
        return out

    def eval_point(self, x):
        out = self.base.eval_point(x)
        for vk in self.diffusions:
            out = out + self.sign * (vk.jacobian(x) @ vk.eval_point(x))
        return out

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        J = np.array(self.base.jacobian(x), dtype=float)
        for vk in self.diffusions:
            Jk = vk.jacobian(x)
            val = vk.eval_point(x)
            H = np.array([vk.hessian_component(i, x) for i in range(self.dim)])
            J += self.sign * (Jk @ Jk + np.einsum("j,ilj->il", val, H))
        return J

    def jacobian_cols(self, X):
        X = np.asarray(X, dtype=float)
        J = np.array(self.base.jacobian_cols(X), dtype=float)
        for vk in self.diffusions:
            Jk = vk.jacobian_cols(X)
            val = vk(X)
            J += self.sign * np.einsum("ijm,jlm->ilm", Jk, Jk)
            for i in range(self.dim):
                H = vk.hessian_component(i, X)
                J[i] += self.sign * np.einsum("jm,ljm->lm", val, H)
        return J

    def derivatives_1d(self, x, order: int = 1):
        if self.dim != 1:
            raise ValueError("derivatives_1d requires a one-dimensional field")
        if order > 3:
            raise ValueError("derived drift supports derivatives up to order 3")
        base = self.base.component_jets(_as_cols(x), order=order)[0]
        out = base
        for vk in self.diffusions:
            vjet = vk.component_jets(_as_cols(x), order=order + 1)[0]
            vprime = _shift_jet(vjet)
            out = out + self.sign * (_truncate_jet(vjet, order) * vprime)
        return [out.derivative(k) for k in range(order + 1)]


def _as_cols(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


class CallableField1D:
    """A 1-D field backed by plain callables, e.g. a transformed drift.

    Carries the value function and (optionally) its first derivative via
    the chain rule; higher derivatives are not available, so only the
    first-order flow can be integrated for models built on such fields.
    """

    __slots__ = ("fn", "d1", "label")

    dim = 1
    additive = False

    def __init__(self, fn: Callable, d1: Optional[Callable] = None, label: str = ""):
        self.fn = fn
        self.d1 = d1
        self.label = label

    def __repr__(self):
        return f"CallableField1D({self.label or self.fn!r})"

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.asarray([float(self.fn(float(X[0])))])
        return np.asarray(self.fn(X[0]), dtype=float)[None, :]

    def eval_point(self, x):
        x = np.asarray(x, dtype=float)
        v = float(self.fn(float(x[0])))
        if not math.isfinite(v):
            raise dsl.DomainError(f"field {self.label!r} is singular at x={x.tolist()}", component=1)
        return np.array([v])

    def jacobian(self, x):
        if self.d1 is None:
            raise ValueError(f"field {self.label!r} carries no derivative information")
        x = np.asarray(x, dtype=float)
        return np.array([[float(self.d1(float(x[0])))]])

    def jacobian_cols(self, X):
        if self.d1 is None:
            raise ValueError(f"field {self.label!r} carries no derivative information")
        X = np.asarray(X, dtype=float)
        return np.asarray(self.d1(X[0]), dtype=float)[None, None, :]

    def derivatives_1d(self, x, order: int = 1):
        if order > 1 or (order == 1 and self.d1 is None):
            raise ValueError(f"field {self.label!r} supports derivatives up to order "
                             f"{1 if self.d1 is not None else 0}")
        x = np.asarray(x, dtype=float)
        xs = x if x.ndim else x[None]
        out = [np.asarray(self.fn(xs), dtype=float)]
        if order >= 1:
            out.append(np.asarray(self.d1(xs), dtype=float))
        return out


def _shift_jet(jet):
    """Jet of the derivative of a 1-D quantity from a one-order-higher jet."""
    from .jets import Jet

    coeffs = [(k + 1) * jet.coeffs[k + 1] for k in range(jet.order)]
    return Jet(coeffs)


def _truncate_jet(jet, order):
    from .jets import Jet

    return Jet(jet.coeffs[: order + 1])


@dataclass(frozen=True)
class SdeModel:
    """An SDE dX = V0 dt + sqrt(2) sum_k V_k o dB^k with both drift forms."""

    dim: int
    noise: int
    drift_strat: object
    drift_ito: object
    diffusions: tuple
    label: str = ""
    convention: str = "stratonovich"

    @classmethod
    def from_stratonovich(cls, v0: VectorField, diffusions: Sequence[VectorField], label: str = "") -> "SdeModel":
        diffusions = tuple(diffusions)
        if _fields_additive(diffusions):
            ito = v0  # zero correction
        else:
            ito = DerivedDriftField(v0, diffusions, sign=+1)
        return cls(v0.dim, len(diffusions), v0, ito, diffusions, label, "stratonovich")

    @classmethod
    def from_ito(cls, u0: VectorField, diffusions: Sequence[VectorField], label: str = "") -> "SdeModel":
        diffusions = tuple(diffusions)
        if _fields_additive(diffusions):
            strat = u0
        else:
            strat = DerivedDriftField(u0, diffusions, sign=-1)
        return cls(u0.dim, len(diffusions), strat, u0, diffusions, label, "ito")

    @property
    def additive(self) -> bool:
        return _fields_additive(self.diffusions)

    def drift_derivatives_1d(self, x, order: int = 1):
        """[b, b', ...] of the Ito drift for one-dimensional models."""
        return self.drift_ito.derivatives_1d(x, order=order)

    # ------------------------------------------------------------------
    # JSON field-definition format
    # ------------------------------------------------------------------

    def to_json(self) -> dict:
        def sources(f):
            if isinstance(f, VectorField):
                return list(f.sources)
            raise ValueError("only expression-backed models can be serialized")

        drift = self.drift_strat if self.convention == "stratonovich" else self.drift_ito
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "dim": self.dim,
            "noise": self.noise,
            "convention": self.convention,
            "drift": sources(drift),
            "diffusion": [sources(vk) for vk in self.diffusions],
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SdeModel":
        for key in ("dim", "noise", "convention", "drift", "diffusion"):
            if key not in obj:
                raise ValueError(f"model definition missing {key!r}")
        dim = int(obj["dim"])
        noise = int(obj["noise"])
        conv = obj["convention"]
        if conv not in ("ito", "stratonovich"):
            raise ValueError(f"unknown convention {conv!r}")
        drift = VectorField.parse(obj["drift"], dim)
        diffs = obj["diffusion"]
        if len(diffs) != noise:
            raise ValueError(f"expected {noise} diffusion fields, got {len(diffs)}")
        diffusions = [VectorField.parse(src, dim) for src in diffs]
        label = obj.get("label", "")
        if conv == "stratonovich":
            return cls.from_stratonovich(drift, diffusions, label)
        return cls.from_ito(drift, diffusions, label)

    @classmethod
    def from_file(cls, path: str) -> "SdeModel":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed model JSON {path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_json(obj)

    def model_hash(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fields_additive(diffusions) -> bool:
    for vk in diffusions:
        if not isinstance(vk, VectorField):
            return bool(getattr(vk, "additive", False))
        for comp in vk.components:
            if expr_variables(comp):
                return False
    return True


# ----------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------

@dataclass
class ExactOracle:
    """Closed forms attached to a model; every entry is optional.

    moments and euler_moments are keyed by the canonical printed form of
    the observable ("x1", "x1^2", ...).  exact_step draws the next mesh
    state exactly in law from the same standard normals the Euler scheme
    would consume.
    """

    moments: Dict[str, Callable] = field(default_factory=dict)
    variances: Dict[str, Callable] = field(default_factory=dict)
    euler_moments: Dict[str, Callable] = field(default_factory=dict)
    euler_variances: Dict[str, Callable] = field(default_factory=dict)
    exact_step: Optional[Callable] = None
    exact_path: Optional[Callable] = None
    invariant_density: Optional[Callable] = None
    density_domain: Optional[Tuple[float, float]] = None

    def moment(self, key: str):
        return self.moments.get(key)


@dataclass
class ExampleSpec:
    """A builtin model bundled with oracles and recommended run settings."""

    name: str
    model: SdeModel
    oracle: ExactOracle
    x0: np.ndarray
    delta: float
    horizon: float
    alpha: Optional[float] = None
    grid: Tuple[float, float, float] = (-60.0, 60.0, 0.01)
    decay_weight: Optional[str] = None  # u(x) source for the decay bound
    constants: Dict[str, float] = field(default_factory=dict)
    notes: Dict[str, str] = field(default_factory=dict)


def canonical_observable(source: str, dim: int) -> str:
    return pretty(parse_expr(source, dim))


# ----------------------------------------------------------------------
# builtin examples
# ----------------------------------------------------------------------

def _arctan_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(
        VectorField.parse(["-atan(x1)"], 1), [VectorField.parse(["1"], 1)], label="arctan"
    )
    oracle = ExactOracle(
        invariant_density=lambda x: np.sqrt(1.0 + x * x) * np.exp(-x * np.arctan(x)),
        density_domain=(-40.0, 40.0),
    )
    return ExampleSpec(
        name="arctan",
        model=model,
        oracle=oracle,
        x0=np.array([0.0]),
        delta=0.01,
        horizon=10.0,
        alpha=0.5,
        grid=(-60.0, 60.0, 0.01),
        decay_weight="cosh(0.5*x1)",
        notes={
            "summary": "bounded drift -atan(x); the bracket coercivity rate 1/(1+x^2) decays in space",
            "invariant_density": "stationary Fokker-Planck solution sqrt(1+x^2)exp(-x atan x), tails ~ exp(-pi|x|/2)",
        },
    )


def _bump_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(
        VectorField.parse(["2*atan(x1-5)-x1"], 1), [VectorField.parse(["1"], 1)], label="bump"
    )
    return ExampleSpec(
        name="bump",
        model=model,
        oracle=ExactOracle(),
        x0=np.array([0.0]),
        delta=0.01,
        horizon=10.0,
        alpha=0.5,
        grid=(-60.0, 60.0, 0.01),
        decay_weight="cosh(0.5*x1)",
        notes={"summary": "linear confinement with a local bump; the coercivity rate dips to -1 near x=5"},
    )


def _sincos_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(
        VectorField.parse(["-sin(x1)"], 1), [VectorField.parse(["cos(x1)"], 1)], label="sincos"
    )
    return ExampleSpec(
        name="sincos",
        model=model,
        oracle=ExactOracle(),
        x0=np.array([0.0]),
        delta=0.001,
        horizon=5.0,
        alpha=None,
        grid=(-1.5, 1.5, 0.001),
        notes={"summary": "multiplicative cos(x) noise; rate 1/cos(x) is singular at odd multiples of pi/2, "
                           "paths started in (-pi/2, pi/2) stay there"},
    )


def _grusin_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(
        VectorField.parse(["x1", "0"], 2), [VectorField.parse(["0", "x1"], 2)], label="grusin"
    )

    def var_x2(t, x0):
        return x0[0] ** 2 * math.expm1(2.0 * t)

    def euler_var_x2(n, delta, x0):
        return 2.0 * x0[0] ** 2 * math.expm1(2 * n * math.log1p(delta)) / (2.0 + delta)

    def exact_step(X, t0, t1, Z):
        out = np.empty_like(X)
        out[0] = X[0] * math.exp(t1 - t0)
        scale = math.sqrt(math.exp(2.0 * t1) - math.exp(2.0 * t0))
        out[1] = X[1] + scale * Z[0]
        return out

    oracle = ExactOracle(
        moments={"x2": lambda t, x0: float(x0[1])},
        variances={"x2": var_x2},
        euler_variances={"x2": euler_var_x2},
        exact_step=exact_step,
    )
    return ExampleSpec(
        name="grusin",
        model=model,
        oracle=oracle,
        x0=np.array([1.0, 0.0]),
        delta=1e-3,
        horizon=10.0,
        grid=(-5.0, 5.0, 0.05),
        notes={
            "summary": "degenerate 2-D system: derivative decay holds but second moments of the chain blow up",
            "variance": "second component is Gaussian; Var grows like exp(2t) for the law, like (1+d)^(2n) for Euler",
        },
    )


def _xcubed_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(
        VectorField.parse(["-x1^3-x1"], 1), [VectorField.parse(["1"], 1)], label="xcubed"
    )
    oracle = ExactOracle(
        invariant_density=lambda x: np.exp(-(x ** 4) / 4.0 - x * x / 2.0),
        density_domain=(-10.0, 10.0),
    )
    return ExampleSpec(
        name="xcubed",
        model=model,
        oracle=oracle,
        x0=np.array([4.0]),
        delta=0.01,
        horizon=100.0,
        grid=(-10.0, 10.0, 0.01),
        constants={"delta_convergent": 0.01, "delta_divergent": 1.0},
        notes={
            "summary": "cubic confinement; the chain explodes unless the step is small relative to the start point",
            "invariant_density": "stationary Fokker-Planck solution exp(-x^4/4 - x^2/2)",
        },
    )


_CIRCLE_DRIFT = [
    "-x2-smoothstep5(sqrt(x1^2+x2^2), 2, 3)*x1",
    "x1-smoothstep5(sqrt(x1^2+x2^2), 2, 3)*x2",
]


def _circle_exact_path(t, x0):
    c, s = math.cos(t), math.sin(t)
    return np.array([x0[0] * c - x0[1] * s, x0[0] * s + x0[1] * c])


def _circle_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(VectorField.parse(_CIRCLE_DRIFT, 2), [], label="circle")
    oracle = ExactOracle(exact_path=_circle_exact_path)
    return ExampleSpec(
        name="circle",
        model=model,
        oracle=oracle,
        x0=np.array([1.0, 0.0]),
        delta=0.05,
        horizon=500.0,
        grid=(-4.0, 4.0, 0.05),
        constants={"deltas": 0.05},
        notes={
            "summary": "pure rotation inside radius 2 with confinement outside radius 3; "
                       "Euler inflates the radius to where confinement balances the scheme bias",
            "confinement": "radial factor is the C^2 quintic ramp between radii 2 and 3",
        },
    )


def _circle_noise_spec() -> ExampleSpec:
    ind = "smoothstep5(sqrt(x1^2+x2^2), 3, 3)"
    diffusions = [
        VectorField.parse([f"{ind}/sqrt(2)", "0"], 2),
        VectorField.parse(["0", f"{ind}/sqrt(2)"], 2),
    ]
    model = SdeModel.from_ito(VectorField.parse(_CIRCLE_DRIFT, 2), diffusions, label="circle_noise")
    return ExampleSpec(
        name="circle_noise",
        model=model,
        oracle=ExactOracle(exact_path=_circle_exact_path),
        x0=np.array([1.0, 0.0]),
        delta=0.05,
        horizon=500.0,
        grid=(-4.0, 4.0, 0.05),
        notes={"summary": "circle dynamics with unit noise switched on outside radius 3 "
                           "(hard indicator, simulated as-is)"},
    )


def _ou_spec() -> ExampleSpec:
    model = SdeModel.from_stratonovich(
        VectorField.parse(["-x1"], 1), [VectorField.parse(["1"], 1)], label="ou"
    )

    def euler_second_moment(n, delta, x0):
        a = 1.0 - delta
        m_star = 1.0 / (1.0 - delta / 2.0)
        return a ** (2 * n) * (x0[0] ** 2 - m_star) + m_star

    def exact_step(X, t0, t1, Z):
        dt = t1 - t0
        decay = math.exp(-dt)
        scale = math.sqrt(-math.expm1(-2.0 * dt))
        return X * decay + scale * Z

    oracle = ExactOracle(
        moments={
            "x1": lambda t, x0: x0[0] * math.exp(-t),
            "x1^2": lambda t, x0: x0[0] ** 2 * math.exp(-2.0 * t) - math.expm1(-2.0 * t),
        },
        variances={"x1": lambda t, x0: -math.expm1(-2.0 * t)},
        euler_moments={
            "x1": lambda n, delta, x0: x0[0] * (1.0 - delta) ** n,
            "x1^2": euler_second_moment,
        },
        exact_step=exact_step,
        invariant_density=lambda x: np.exp(-x * x / 2.0),
        density_domain=(-12.0, 12.0),
    )
    return ExampleSpec(
        name="ou",
        model=model,
        oracle=oracle,
        x0=np.array([1.0]),
        delta=0.1,
        horizon=10.0,
        alpha=0.5,
        grid=(-30.0, 30.0, 0.01),
        notes={"summary": "exactly solvable linear control case; mean x e^{-t}, variance 1-e^{-2t}"},
    )


_BUILTINS = {
    "arctan": _arctan_spec,
    "bump": _bump_spec,
    "sincos": _sincos_spec,
    "grusin": _grusin_spec,
    "xcubed": _xcubed_spec,
    "circle": _circle_spec,
    "circle_noise": _circle_noise_spec,
    "ou": _ou_spec,
}


def builtin_names():
    return sorted(_BUILTINS)


def builtin_example(name: str) -> ExampleSpec:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown builtin example {name!r}; known: {', '.join(builtin_names())}") from None
    return factory()


def resolve_model(source: str) -> Tuple[SdeModel, Optional[ExampleSpec]]:
    """Resolve 'builtin:NAME' or a JSON file path to a model."""
    if source.startswith("builtin:"):
        spec = builtin_example(source.split(":", 1)[1])
        return spec.model, spec
    return SdeModel.from_file(source), None


# ----------------------------------------------------------------------
# invariant-measure expectations
# ----------------------------------------------------------------------

def invariant_expectation(spec: ExampleSpec, phi, epsabs: float = 1e-10) -> float:
    """Expectation of phi under the stored (unnormalized) invariant density.

    phi may be a callable, an expression string, or a parsed expression.
    Adaptive quadrature on the stored domain; absolute error of the
    normalized result is kept below 1e-8.
    """
    dens = spec.oracle.invariant_density
    if dens is None:
        raise ValueError(f"example {spec.name!r} has no invariant density")
    a, b = spec.oracle.density_domain
    phi_fn = _as_scalar_fn(phi, spec.model.dim)

    z, z_err = integrate.quad(dens, a, b, epsabs=epsabs, epsrel=1e-12, limit=400)
    num, n_err = integrate.quad(lambda x: phi_fn(x) * dens(x), a, b, epsabs=epsabs, epsrel=1e-12, limit=400)
    if z <= 0 or not np.isfinite(z) or not np.isfinite(num):
        raise ArithmeticError("quadrature failed to converge on the invariant density")
    if z_err / z + abs(n_err / z) > 1e-8:
        raise ArithmeticError("quadrature error budget exceeded")
    return num / z


def _as_scalar_fn(phi, dim):
    if callable(phi):
        return phi
    expr = parse_expr(phi, dim) if isinstance(phi, str) else phi
    return lambda x: dsl.eval_expr(expr, [x])
