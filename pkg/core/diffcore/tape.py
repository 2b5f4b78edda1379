"""
Reverse-mode automatic differentiation over scalar computation graphs.

A Tape is a Wengert list: every operation appends one node holding its
kind, the node ids of its differentiable parents and the local partial
derivative with respect to each parent. Because nodes are appended in
evaluation order the list is already topologically sorted, so the
backward pass is a single reverse sweep.

Every op in this module accepts plain floats as well as Variables. On
floats it performs exactly the float arithmetic the tape would record,
which makes any expression written against these ops its own tape-free
reference evaluator.
"""

import math
from collections import Counter
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import ContractError, EvaluationError


class Tape:
    """Flat node storage for one forward/backward pair."""

    __slots__ = ("kinds", "parents", "partials", "n_inputs", "output")

    def __init__(self):
        self.kinds: List[str] = []
        self.parents: List[Tuple[int, ...]] = []
        self.partials: List[Tuple[float, ...]] = []
        self.n_inputs = 0
        self.output: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.kinds)

    def input(self, value: float) -> "Variable":
        if self.n_inputs != len(self.kinds):
            raise ContractError("inputs must be registered before any operation is recorded")
        var = self.record("input", float(value), (), ())
        self.n_inputs += 1
        return var

    def inputs(self, values: Iterable[float]) -> List["Variable"]:
        return [self.input(v) for v in values]

    def record(self, kind: str, value: float, parents: Tuple[int, ...], partials: Tuple[float, ...]) -> "Variable":
        node = len(self.kinds)
        value = float(value)
        if not math.isfinite(value):
            raise EvaluationError(node, kind, f"value {value}")
        if not all(map(math.isfinite, partials)):
            raise EvaluationError(node, kind, "partial derivative")
        self.kinds.append(kind)
        self.parents.append(parents)
        self.partials.append(partials)
        return Variable(value, node, self)

    def set_output(self, var: "Variable"):
        if not isinstance(var, Variable) or var.tape is not self:
            raise ContractError("output must be a Variable recorded on this tape")
        self.output = var.node

    def kind_counts(self) -> Dict[str, int]:
        return dict(Counter(self.kinds))


class Variable:
    """A differentiable scalar: a value plus its node on a live tape."""

    __slots__ = ("value", "node", "tape")

    # numpy scalars defer to our reflected operators instead of broadcasting
    __array_ufunc__ = None

    def __init__(self, value: float, node: int, tape: Tape):
        self.value = value
        self.node = node
        self.tape = tape

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Variable({self.value!r}, node={self.node})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)


Scalar = Union[float, Variable]


def value_of(x: Scalar) -> float:
    return x.value if isinstance(x, Variable) else x


def values(arr) -> np.ndarray:
    """Plain float copy of an array that may hold Variables."""
    arr = np.asarray(arr)
    if arr.dtype != object:
        return arr.astype(float)
    flat = [value_of(x) for x in arr.ravel()]
    return np.array(flat, dtype=float).reshape(arr.shape)


def is_variable(x) -> bool:
    return isinstance(x, Variable)


def _same_tape(a: Variable, b: Variable) -> Tape:
    if a.tape is not b.tape:
        raise ContractError("operands belong to different tapes")
    return a.tape


# ───────────────────── binary ops ─────────────────────

def add(a: Scalar, b: Scalar) -> Scalar:
    if isinstance(a, Variable):
        if isinstance(b, Variable):
            return _same_tape(a, b).record("add", a.value + b.value, (a.node, b.node), (1.0, 1.0))
        return a.tape.record("add", a.value + b, (a.node,), (1.0,))
    if isinstance(b, Variable):
        return b.tape.record("add", a + b.value, (b.node,), (1.0,))
    return a + b


def sub(a: Scalar, b: Scalar) -> Scalar:
    if isinstance(a, Variable):
        if isinstance(b, Variable):
            return _same_tape(a, b).record("sub", a.value - b.value, (a.node, b.node), (1.0, -1.0))
        return a.tape.record("sub", a.value - b, (a.node,), (1.0,))
    if isinstance(b, Variable):
        return b.tape.record("sub", a - b.value, (b.node,), (-1.0,))
    return a - b


def mul(a: Scalar, b: Scalar) -> Scalar:
    if isinstance(a, Variable):
        if isinstance(b, Variable):
            return _same_tape(a, b).record("mul", a.value * b.value, (a.node, b.node), (b.value, a.value))
        return a.tape.record("mul", a.value * b, (a.node,), (float(b),))
    if isinstance(b, Variable):
        return b.tape.record("mul", a * b.value, (b.node,), (float(a),))
    return a * b


def div(a: Scalar, b: Scalar) -> Scalar:
    if isinstance(b, Variable):
        tape = _same_tape(a, b) if isinstance(a, Variable) else b.tape
        if b.value == 0.0:
            raise EvaluationError(tape.size, "div", "division by zero")
        av = value_of(a)
        q = av / b.value
        db = -q / b.value
        if isinstance(a, Variable):
            return tape.record("div", q, (a.node, b.node), (1.0 / b.value, db))
        return tape.record("div", q, (b.node,), (db,))
    if isinstance(a, Variable):
        if b == 0.0:
            raise EvaluationError(a.tape.size, "div", "division by zero")
        return a.tape.record("div", a.value / b, (a.node,), (1.0 / b,))
    return a / b


def minimum(a: Scalar, b: Scalar) -> Scalar:
    """min(a, b); ties select the first operand."""
    chosen = a if value_of(a) <= value_of(b) else b
    if isinstance(chosen, Variable):
        return chosen.tape.record("min", chosen.value, (chosen.node,), (1.0,))
    return chosen


def maximum(a: Scalar, b: Scalar) -> Scalar:
    """max(a, b); ties select the first operand."""
    chosen = a if value_of(a) >= value_of(b) else b
    if isinstance(chosen, Variable):
        return chosen.tape.record("max", chosen.value, (chosen.node,), (1.0,))
    return chosen


def power(x: Scalar, exponent: float) -> Scalar:
    if isinstance(exponent, Variable):
        raise ContractError("only constant exponents are supported")
    if isinstance(x, Variable):
        y = x.value ** exponent
        return x.tape.record("pow", y, (x.node,), (exponent * x.value ** (exponent - 1),))
    return x ** exponent


# ───────────────────── unary ops (table-driven) ─────────────────────

# kind -> (value fn, partial fn(x, y))
_UNARY: Dict[str, Tuple[Callable[[float], float], Callable[[float, float], float]]] = {
    "neg": (lambda x: -x, lambda x, y: -1.0),
    "exp": (math.exp, lambda x, y: y),
    "log": (math.log, lambda x, y: 1.0 / x),
    "sqrt": (math.sqrt, lambda x, y: 0.5 / y),
    "sin": (math.sin, lambda x, y: math.cos(x)),
    "cos": (math.cos, lambda x, y: -math.sin(x)),
    "square": (lambda x: x * x, lambda x, y: 2.0 * x),
    # abs(x) = max(x, -x): the tie at 0 takes the first branch
    "abs": (abs, lambda x, y: 1.0 if x >= 0.0 else -1.0),
}


def _unary(kind: str, x: Scalar) -> Scalar:
    fn, dfn = _UNARY[kind]
    if isinstance(x, Variable):
        try:
            y = fn(x.value)
            d = dfn(x.value, y)
        except (ValueError, OverflowError, ZeroDivisionError) as e:
            raise EvaluationError(x.tape.size, kind, str(e))
        return x.tape.record(kind, y, (x.node,), (d,))
    return fn(x)


def neg(x: Scalar) -> Scalar:
    return _unary("neg", x)


def exp(x: Scalar) -> Scalar:
    return _unary("exp", x)


def log(x: Scalar) -> Scalar:
    return _unary("log", x)


def sqrt(x: Scalar) -> Scalar:
    return _unary("sqrt", x)


def sin(x: Scalar) -> Scalar:
    return _unary("sin", x)


def cos(x: Scalar) -> Scalar:
    return _unary("cos", x)


def square(x: Scalar) -> Scalar:
    return _unary("square", x)


def absolute(x: Scalar) -> Scalar:
    return _unary("abs", x)


# ───────────────────── n-ary ops ─────────────────────

def total(xs: Iterable[Scalar]) -> Scalar:
    """Left-to-right sum recorded as one node."""
    s = None
    tape = None
    parents = []
    for x in xs:
        if isinstance(x, Variable):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands belong to different tapes")
            parents.append(x.node)
            v = x.value
        else:
            v = x
        s = v if s is None else s + v
    if s is None:
        return 0.0
    if tape is None:
        return s
    return tape.record("total", s, tuple(parents), (1.0,) * len(parents))


def lincomb(coeffs: Sequence[float], xs: Sequence[Scalar]) -> Scalar:
    """sum_i coeffs[i] * xs[i] with constant coefficients."""
    if len(coeffs) != len(xs):
        raise ContractError("lincomb needs one coefficient per operand")
    s = None
    tape = None
    parents = []
    partials = []
    for c, x in zip(coeffs, xs):
        if isinstance(x, Variable):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands belong to different tapes")
            parents.append(x.node)
            partials.append(float(c))
            v = c * x.value
        else:
            v = c * x
        s = v if s is None else s + v
    if s is None:
        return 0.0
    if tape is None:
        return s
    return tape.record("lincomb", s, tuple(parents), tuple(partials))


def dot(xs: Sequence[Scalar], ys: Sequence[Scalar]) -> Scalar:
    """sum_i xs[i] * ys[i]; either side may hold Variables."""
    if len(xs) != len(ys):
        raise ContractError("dot needs sequences of equal length")
    s = None
    tape = None
    parents = []
    partials = []
    for x, y in zip(xs, ys):
        xv = x.value if isinstance(x, Variable) else x
        yv = y.value if isinstance(y, Variable) else y
        for var, d in ((x, yv), (y, xv)):
            if isinstance(var, Variable):
                if tape is None:
                    tape = var.tape
                elif var.tape is not tape:
                    raise ContractError("operands belong to different tapes")
                parents.append(var.node)
                partials.append(float(d))
        v = xv * yv
        s = v if s is None else s + v
    if s is None:
        return 0.0
    if tape is None:
        return s
    return tape.record("dot", s, tuple(parents), tuple(partials))


# ───────────────────── driver ─────────────────────

Expr = Callable[[List[Scalar]], Scalar]


def forward(expr: Expr, inputs: Sequence[float]) -> Tuple[float, Tape]:
    """Evaluate expr on fresh input Variables, recording every operation."""
    tape = Tape()
    xs = tape.inputs(inputs)
    out = expr(xs)
    if not isinstance(out, Variable):
        out = tape.record("const", float(out), (), ())
    elif out.tape is not tape:
        raise ContractError("expression returned a Variable from another tape")
    tape.output = out.node
    return out.value, tape


def evaluate(expr: Expr, inputs: Sequence[float]) -> float:
    """Tape-free evaluation of the same expression."""
    return value_of(expr([float(v) for v in inputs]))


def backward(tape: Tape, seed: float = 1.0) -> np.ndarray:
    """Gradient of the tape output with respect to every input, in input order."""
    if tape.output is None:
        raise ContractError("tape has no output; call forward() or Tape.set_output() first")
    if not math.isfinite(seed):
        raise ContractError(f"seed must be finite, got {seed}")

    grads = [0.0] * (tape.output + 1)
    grads[tape.output] = float(seed)
    parents = tape.parents
    partials = tape.partials
    for node in range(tape.output, tape.n_inputs - 1, -1):
        g = grads[node]
        if g == 0.0:
            continue
        for p, d in zip(parents[node], partials[node]):
            grads[p] += g * d

    out = np.array(grads[:tape.n_inputs], dtype=float)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise EvaluationError(bad, "backward", "gradient overflow")
    return out
