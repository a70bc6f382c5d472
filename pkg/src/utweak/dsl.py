"""Expression language for vector fields and scalar observables.

Grammar (whitespace-insensitive, standard precedence, `^` binds tighter
than unary minus, right-associative):

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | 'x'INDEX | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Variables are ``x1 .. xN``.  The function set is sin, cos, tan, atan,
tanh, sinh, cosh, exp, log, sqrt and the three-argument quintic ramp
``smoothstep5(r, a, b)`` (a hard step when a == b).

Everything evaluates numerically: on float points (with domain-error
reporting), on numpy arrays (hot loops; non-finite values propagate) and
on Taylor jets (derivatives up to order four).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import jets
from .jets import Jet

FUNCTIONS = {
    "sin": jets.sin,
    "cos": jets.cos,
    "tan": jets.tan,
    "atan": jets.atan,
    "tanh": jets.tanh,
    "sinh": jets.sinh,
    "cosh": jets.cosh,
    "exp": jets.exp,
    "log": jets.log,
    "sqrt": jets.sqrt,
    "smoothstep5": jets.smoothstep5,
}

_ARITY = {name: 1 for name in FUNCTIONS}
_ARITY["smoothstep5"] = 3


class DslError(ValueError):
    """Base class for parse- and evaluation-time failures."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class ParseError(DslError):
    pass


class UnknownIdentifierError(ParseError):
    pass


class DomainError(DslError):
    """Evaluation hit a singularity (log of non-positive, division by zero, ...)."""

    def __init__(self, message: str, component: Optional[int] = None):
        self.component = component
        super().__init__(message)


# ----------------------------------------------------------------------
# syntax tree
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, Bin, Call]


# ----------------------------------------------------------------------
# tokenizer / parser
# ----------------------------------------------------------------------

def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^(),":
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                seen_dot = seen_dot or source[j] == "."
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"malformed number {text!r}", i)
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, dim: int):
        self.source = source
        self.dim = dim
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> Expr:
        expr = self.expression()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected trailing input {tok[1]!r}", tok[2])
        return expr

    def expression(self) -> Expr:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            return Bin("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.advance()
        kind, value, pos = tok
        if kind == "num":
            return Num(float(value))
        if kind == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        if kind == "name":
            if self.peek()[0] == "(":
                if value not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {value!r}", pos)
                self.advance()
                args = [self.expression()]
                while self.peek()[0] == ",":
                    self.advance()
                    args.append(self.expression())
                self.expect(")")
                if len(args) != _ARITY[value]:
                    raise ParseError(
                        f"{value} expects {_ARITY[value]} argument(s), got {len(args)}", pos
                    )
                return Call(value, tuple(args))
            if value.startswith("x") and value[1:].isdigit():
                index = int(value[1:])
                if not 1 <= index <= self.dim:
                    raise ParseError(
                        f"variable {value} out of range for dimension {self.dim}", pos
                    )
                return Var(index)
            raise UnknownIdentifierError(f"unknown identifier {value!r}", pos)
        raise ParseError(f"unexpected token {value!r}", pos)


def parse_expr(source: str, dim: int) -> Expr:
    """Parse one scalar expression over variables x1..x<dim>."""
    return _Parser(source, dim).parse()


# ----------------------------------------------------------------------
# pretty printer (parse -> pretty -> parse is a fixed point)
# ----------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def pretty(expr: Expr) -> str:
    def render(node: Expr, parent_prec: int, right_side: bool) -> str:
        if isinstance(node, Num):
            return _fmt_number(node.value)
        if isinstance(node, Var):
            return f"x{node.index}"
        if isinstance(node, Neg):
            inner = render(node.operand, _PREC["neg"], False)
            text = f"-{inner}"
            if parent_prec > _PREC["neg"] or (parent_prec == _PREC["neg"] and right_side):
                return f"({text})"
            return text
        if isinstance(node, Call):
            args = ", ".join(render(a, 0, False) for a in node.args)
            return f"{node.name}({args})"
        prec = _PREC[node.op]
        if node.op == "^":
            # right-associative; '^' outranks unary minus, so a Neg base needs parens
            left = render(node.left, prec + 1, False)
            right = render(node.right, prec, True)
        else:
            left = render(node.left, prec, False)
            right = render(node.right, prec + 1, False)
        text = f"{left}{node.op}{right}"
        need = prec < parent_prec or (prec == parent_prec and right_side)
        if need:
            return f"({text})"
        return text

    return render(expr, 0, False)


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------

def _pow(base, expo):
    if isinstance(expo, Jet):
        if isinstance(base, Jet):
            return base ** expo
        return jets.exp(expo * jets.log(Jet.constant(base, expo.order)))
    if isinstance(base, Jet):
        return base ** expo
    if isinstance(expo, (int, float, np.floating)) and float(expo) == int(expo):
        return base ** int(expo)
    return np.power(base, expo)


def eval_expr(expr: Expr, env: Sequence):
    """Evaluate with env[i] the value of x(i+1): floats, arrays, or jets."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return env[expr.index - 1]
    if isinstance(expr, Neg):
        return -eval_expr(expr.operand, env)
    if isinstance(expr, Bin):
        a = eval_expr(expr.left, env)
        b = eval_expr(expr.right, env)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if expr.op == "/":
            return a / b
        return _pow(a, b)
    fn = FUNCTIONS[expr.name]
    args = [eval_expr(a, env) for a in expr.args]
    return fn(*args)


def eval_expr_cols(expr: Expr, X) -> np.ndarray:
    """Evaluate a scalar expression on columns X (N, m) -> (m,) array."""
    X = np.asarray(X, dtype=float)
    with np.errstate(all="ignore"):
        out = eval_expr(expr, [X[i] for i in range(X.shape[0])])
    return np.broadcast_to(np.asarray(out, dtype=float), X.shape[1:]).copy()


def expr_jet_cols(expr: Expr, X, direction=None, order: int = 1) -> Jet:
    """Jet of a scalar expression along `direction` at every column of X.

    X has shape (N, m); the default direction is e_1 (the natural choice
    for N = 1).  Returns a Jet whose coefficients are (m,) arrays.
    """
    X = np.asarray(X, dtype=float)
    N, m = X.shape
    if direction is None:
        direction = np.zeros(N)
        direction[0] = 1.0
    env = []
    for i in range(N):
        seed = [X[i], direction[i] * np.ones(m)] + [np.zeros(m)] * (order - 1)
        env.append(Jet(seed))
    with np.errstate(all="ignore"):
        out = eval_expr(expr, env)
    if not isinstance(out, Jet):
        out = Jet.constant(np.broadcast_to(np.asarray(out, dtype=float), (m,)).copy(), order)
    return out


def expr_variables(expr: Expr) -> set:
    if isinstance(expr, Var):
        return {expr.index}
    if isinstance(expr, Neg):
        return expr_variables(expr.operand)
    if isinstance(expr, Bin):
        return expr_variables(expr.left) | expr_variables(expr.right)
    if isinstance(expr, Call):
        out = set()
        for a in expr.args:
            out |= expr_variables(a)
        return out
    return set()


# ----------------------------------------------------------------------
# vector fields
# ----------------------------------------------------------------------

class VectorField:
    """A smooth map R^N -> R^N given componentwise by parsed expressions.

    Immutable after construction; evaluation is side-effect free, so one
    instance may be shared across threads.
    """

    __slots__ = ("dim", "components", "sources")

    def __init__(self, components: Sequence[Expr], dim: int, sources: Optional[Sequence[str]] = None):
        if len(components) != dim:
            raise ValueError(f"need {dim} components, got {len(components)}")
        self.dim = dim
        self.components = tuple(components)
        self.sources = tuple(sources) if sources is not None else tuple(pretty(c) for c in components)

    @classmethod
    def parse(cls, sources: Sequence[str], dim: int) -> "VectorField":
        if len(sources) != dim:
            raise ValueError(f"need {dim} component expressions, got {len(sources)}")
        return cls([parse_expr(s, dim) for s in sources], dim, sources=[s.strip() for s in sources])

    def __repr__(self):
        return f"VectorField({list(self.sources)!r})"

    def __call__(self, x):
        """Vectorized evaluation: x is (N,) or (N, m); no domain checks."""
        x = np.asarray(x, dtype=float)
        env = [x[i] for i in range(self.dim)]
        with np.errstate(all="ignore"):
            rows = [np.broadcast_to(np.asarray(eval_expr(c, env), dtype=float), x.shape[1:]).copy()
                    if x.ndim > 1 else float(eval_expr(c, env))
                    for c in self.components]
        return np.asarray(rows, dtype=float)

    def eval_point(self, x) -> np.ndarray:
        """Pointwise evaluation with domain-error reporting per component."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected point of dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("evaluation point must be finite")
        out = np.empty(self.dim)
        env = [np.float64(v) for v in x]
        with np.errstate(all="ignore"):
            for i, comp in enumerate(self.components):
                v = float(eval_expr(comp, env))
                if not np.isfinite(v):
                    raise DomainError(
                        f"component {i + 1} ({self.sources[i]!r}) is singular at x={x.tolist()}",
                        component=i + 1,
                    )
                out[i] = v
        return out

    def component_jets(self, x, direction=None, order: int = 1):
        """Jets of every component at x seeded along `direction` (default e_1)."""
        x = np.asarray(x, dtype=float)
        cols = [x[i] for i in range(self.dim)]
        if direction is None:
            direction = np.zeros(self.dim)
            direction[0] = 1.0
        env = []
        for i in range(self.dim):
            d = direction[i]
            zero = np.zeros_like(cols[i]) if isinstance(cols[i], np.ndarray) else 0.0
            seed = [cols[i], d * (np.ones_like(cols[i]) if isinstance(cols[i], np.ndarray) else 1.0)]
            seed += [zero] * (order - 1)
            env.append(Jet(seed))
        with np.errstate(all="ignore"):
            return [self._as_jet(eval_expr(c, env), order, cols[0]) for c in self.components]

    @staticmethod
    def _as_jet(v, order, template):
        if isinstance(v, Jet):
            return v
        if isinstance(template, np.ndarray):
            return Jet.constant(np.broadcast_to(np.asarray(v, dtype=float), template.shape).copy(), order)
        return Jet.constant(float(v), order)

    def jacobian(self, x) -> np.ndarray:
        """Jacobian matrix, entry (i, j) = d component_i / d x_j."""
        x = np.asarray(x, dtype=float)
        J = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            cjets = self.component_jets(x, direction=e, order=1)
            for i in range(self.dim):
                v = cjets[i].derivative(1)
                if not np.isfinite(v):
                    raise DomainError(
                        f"jacobian entry ({i + 1},{j + 1}) is singular at x={x.tolist()}",
                        component=i + 1,
                    )
                J[i, j] = v
        return J

    def jacobian_cols(self, X) -> np.ndarray:
        """Jacobian at every column of X (shape (N, m)) -> (N, N, m)."""
        X = np.asarray(X, dtype=float)
        m = X.shape[1]
        J = np.empty((self.dim, self.dim, m))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            cjets = self.component_jets(X, direction=e, order=1)
            for i in range(self.dim):
                d = cjets[i].derivative(1)
                J[i, j] = d if isinstance(d, np.ndarray) else np.full(m, d)
        return J

    def hessian_component(self, i: int, x) -> np.ndarray:
        """Hessian of component i via order-2 jets and polarization.

        Accepts a point (N,) -> (N, N) or columns (N, m) -> (N, N, m).
        """
        x = np.asarray(x, dtype=float)
        N = self.dim
        shape = (N, N) if x.ndim == 1 else (N, N, x.shape[1])
        H = np.empty(shape)
        diag = []
        for j in range(N):
            e = np.zeros(N)
            e[j] = 1.0
            d = self.component_jets(x, direction=e, order=2)[i].derivative(2)
            diag.append(d)
            H[j, j] = d
        for j in range(N):
            for k in range(j + 1, N):
                e = np.zeros(N)
                e[j] = 1.0
                e[k] = 1.0
                mixed = self.component_jets(x, direction=e, order=2)[i].derivative(2)
                H[j, k] = H[k, j] = 0.5 * (mixed - diag[j] - diag[k])
        return H

    def derivatives_1d(self, x, order: int = 4):
        """For dim-1 fields: [f, f', .., f^(order)] of component 1 at x (scalar or array)."""
        if self.dim != 1:
            raise ValueError("derivatives_1d requires a one-dimensional field")
        cjets = self.component_jets(np.atleast_1d(np.asarray(x, dtype=float))
                                    if np.ndim(x) == 0 else np.asarray(x, dtype=float)[None, :],
                                    order=order)
        jet = cjets[0]
        return [jet.derivative(k) for k in range(order + 1)]


def _check_same_dim(*fields: VectorField):
    dims = {f.dim for f in fields}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch between fields: {sorted(dims)}")


def commutator(v: VectorField, w: VectorField, x) -> np.ndarray:
    """Lie bracket [v, w](x) = Jw(x) v(x) - Jv(x) w(x); antisymmetric."""
    _check_same_dim(v, w)
    return w.jacobian(x) @ v.eval_point(x) - v.jacobian(x) @ w.eval_point(x)


def commutator_cols(v: VectorField, w: VectorField, X) -> np.ndarray:
    """Bracket at every column of X (shape (N, m)) -> (N, m)."""
    _check_same_dim(v, w)
    X = np.asarray(X, dtype=float)
    Jw = w.jacobian_cols(X)
    Jv = v.jacobian_cols(X)
    return np.einsum("ijm,jm->im", Jw, v(X)) - np.einsum("ijm,jm->im", Jv, w(X))


def bracket_jacobian(v: VectorField, w: VectorField, x) -> np.ndarray:
    """Jacobian of the map y -> [v, w](y) at x, from second-order jets.

    Entry (i, l) = sum_j (d_lj w^i v^j + d_j w^i d_l v^j
                          - d_lj v^i w^j - d_j v^i d_l w^j).
    """
    _check_same_dim(v, w)
    x = np.asarray(x, dtype=float)
    N = v.dim
    vv, ww = v.eval_point(x), w.eval_point(x)
    Jv, Jw = v.jacobian(x), w.jacobian(x)
    Hv = np.array([v.hessian_component(i, x) for i in range(N)])
    Hw = np.array([w.hessian_component(i, x) for i in range(N)])
    out = np.empty((N, N))
    for i in range(N):
        for l in range(N):
            out[i, l] = (
                Hw[i, l, :] @ vv + Jw[i, :] @ Jv[:, l]
                - Hv[i, l, :] @ ww - Jv[i, :] @ Jw[:, l]
            )
    return out


def nested_commutator(u: VectorField, v: VectorField, w: VectorField, x) -> np.ndarray:
    """[u, [v, w]](x) with the inner bracket differentiated via second-order AD."""
    _check_same_dim(u, v, w)
    inner = commutator(v, w, x)
    inner_jac = bracket_jacobian(v, w, x)
    return inner_jac @ u.eval_point(x) - u.jacobian(x) @ inner


def ito_drift_point(v0: VectorField, diffusions: Sequence[VectorField], x) -> np.ndarray:
    """Ito-form drift from Stratonovich data: U0 = V0 + sum_k (JV_k) V_k."""
    _check_same_dim(v0, *diffusions) if diffusions else None
    out = v0.eval_point(x)
    for vk in diffusions:
        out = out + vk.jacobian(x) @ vk.eval_point(x)
    return out


def stratonovich_drift_point(u0: VectorField, diffusions: Sequence[VectorField], x) -> np.ndarray:
    """Inverse of ito_drift_point: V0 = U0 - sum_k (JV_k) V_k."""
    _check_same_dim(u0, *diffusions) if diffusions else None
    out = u0.eval_point(x)
    for vk in diffusions:
        out = out - vk.jacobian(x) @ vk.eval_point(x)
    return out
