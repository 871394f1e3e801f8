"""
Reverse-mode differentiation over a closed set of tensor primitives.

A `Tape` records every operation as it is evaluated; node ids are the
positions on the tape, so inputs always precede their consumers. After
`Tape.finalize()`, `backward()` walks the tape in reverse and returns the
gradient of a scalar output with respect to every leaf.

The finite-difference harness (`finite_diff_grad`, `grad_check`) is the
oracle the backward rules are tested against.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from semisup.contrast import numerics
from semisup.contrast.exc import ContractError, DomainError, ShapeError, TapeStateError
from semisup.contrast.numerics import DEFAULT_EPS, Rng, Tensor

logger = logging.getLogger(__name__)


class Op(str, enum.Enum):
    LEAF = "leaf"
    CONST = "const"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    EXP = "exp"
    LOG = "log"
    RELU = "relu"
    ROW_SUM = "row_sum"
    SUM = "sum"
    SCALE = "scale"
    ROW_SOFTMAX = "row_softmax"
    LOG_ROW_SOFTMAX = "log_row_softmax"
    L2_NORMALIZE_ROWS = "l2_normalize_rows"


@dataclass(frozen=True)
class NodeRecord:
    op: Op
    inputs: Tuple[int, ...] = ()
    attrs: Dict[str, float] = field(default_factory=dict)
    name: Optional[str] = None


def _broadcast_shape(a: Tensor, b: Tensor, op: Op) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            "{}: shapes {} and {} do not broadcast".format(op.value, a.shape, b.shape)
        )


def _unbroadcast(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """
    An append-only record of evaluated operations.
    """

    def __init__(self):
        self.nodes: List[NodeRecord] = []
        self.values: List[Tensor] = []
        self.adjoints: Dict[int, Tensor] = {}
        self.finalized = False

    def __len__(self):
        return len(self.nodes)

    def _record(self, op: Op, inputs: Sequence[int], value, name=None, **attrs) -> int:
        if self.finalized:
            raise TapeStateError("Cannot record {} on a finalized tape.".format(op.value))
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise TapeStateError("Unknown input node {}".format(i))
        self.nodes.append(NodeRecord(op=op, inputs=tuple(inputs), attrs=attrs, name=name))
        self.values.append(np.asarray(value, dtype=np.float64))
        return len(self.nodes) - 1

    def value(self, node: int) -> Tensor:
        return self.values[node]

    def finalize(self) -> "Tape":
        self.finalized = True
        return self

    @property
    def leaves(self) -> List[int]:
        return [i for i, n in enumerate(self.nodes) if n.op is Op.LEAF]

    def leaf(self, value, name: str = None) -> int:
        """A differentiable input (parameter or data)."""
        return self._record(Op.LEAF, (), numerics.as_tensor(value).copy(), name=name)

    def constant(self, value, name: str = None) -> int:
        return self._record(Op.CONST, (), numerics.as_tensor(value).copy(), name=name)

    def add(self, a: int, b: int) -> int:
        va, vb = self.values[a], self.values[b]
        _broadcast_shape(va, vb, Op.ADD)
        return self._record(Op.ADD, (a, b), va + vb)

    def sub(self, a: int, b: int) -> int:
        va, vb = self.values[a], self.values[b]
        _broadcast_shape(va, vb, Op.SUB)
        return self._record(Op.SUB, (a, b), va - vb)

    def mul(self, a: int, b: int) -> int:
        va, vb = self.values[a], self.values[b]
        _broadcast_shape(va, vb, Op.MUL)
        return self._record(Op.MUL, (a, b), va * vb)

    def matmul(self, a: int, b: int) -> int:
        return self._record(
            Op.MATMUL, (a, b), numerics.matmul(self.values[a], self.values[b])
        )

    def transpose(self, a: int) -> int:
        return self._record(Op.TRANSPOSE, (a,), np.ascontiguousarray(self.values[a].T))

    def exp(self, a: int) -> int:
        return self._record(Op.EXP, (a,), np.exp(self.values[a]))

    def log(self, a: int, eps: float = DEFAULT_EPS) -> int:
        """log(x + eps)"""
        return self._record(Op.LOG, (a,), np.log(self.values[a] + eps), eps=eps)

    def relu(self, a: int) -> int:
        return self._record(Op.RELU, (a,), np.maximum(self.values[a], 0.0))

    def row_sum(self, a: int) -> int:
        return self._record(Op.ROW_SUM, (a,), self.values[a].sum(axis=1, keepdims=True))

    def sum(self, a: int) -> int:
        return self._record(Op.SUM, (a,), np.array(self.values[a].sum()))

    def scale(self, a: int, c: float) -> int:
        return self._record(Op.SCALE, (a,), c * self.values[a], c=float(c))

    def row_softmax(self, a: int, temperature: float = 1.0) -> int:
        return self._record(
            Op.ROW_SOFTMAX,
            (a,),
            numerics.row_softmax(self.values[a], temperature),
            temperature=temperature,
        )

    def log_row_softmax(self, a: int, temperature: float = 1.0) -> int:
        return self._record(
            Op.LOG_ROW_SOFTMAX,
            (a,),
            numerics.log_row_softmax(self.values[a], temperature),
            temperature=temperature,
        )

    def l2_normalize_rows(self, a: int, eps: float = DEFAULT_EPS) -> int:
        return self._record(
            Op.L2_NORMALIZE_ROWS,
            (a,),
            numerics.l2_normalize_rows(self.values[a], eps),
            eps=eps,
        )

    def piece_signature(self) -> np.ndarray:
        """
        Which side of its kink every relu input and every normalized row lies
        on (row norm above eps). Two evaluations with equal signatures lie on
        the same smooth piece.
        """
        masks = []
        for n in self.nodes:
            if n.op is Op.RELU:
                masks.append((self.values[n.inputs[0]] > 0).ravel())
            elif n.op is Op.L2_NORMALIZE_ROWS:
                norms = numerics.row_norms(self.values[n.inputs[0]])
                masks.append((norms > n.attrs["eps"]).ravel())
        if not masks:
            return np.zeros(0, dtype=bool)
        return np.concatenate(masks)


def _input_grads(tape: Tape, node: int, g: Tensor) -> List[Tensor]:
    rec = tape.nodes[node]
    out = tape.values[node]
    xs = [tape.values[i] for i in rec.inputs]
    op = rec.op

    if op is Op.ADD:
        return [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)]
    if op is Op.SUB:
        return [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)]
    if op is Op.MUL:
        return [
            _unbroadcast(g * xs[1], xs[0].shape),
            _unbroadcast(g * xs[0], xs[1].shape),
        ]
    if op is Op.MATMUL:
        return [g @ xs[1].T, xs[0].T @ g]
    if op is Op.TRANSPOSE:
        return [g.T]
    if op is Op.EXP:
        return [g * out]
    if op is Op.LOG:
        return [g / (xs[0] + rec.attrs["eps"])]
    if op is Op.RELU:
        # Subgradient 0 at the kink.
        return [g * (xs[0] > 0)]
    if op is Op.ROW_SUM or op is Op.SUM:
        return [np.broadcast_to(g, xs[0].shape).copy()]
    if op is Op.SCALE:
        return [rec.attrs["c"] * g]
    if op is Op.ROW_SOFTMAX:
        t = rec.attrs["temperature"]
        return [out * (g - np.sum(g * out, axis=1, keepdims=True)) / t]
    if op is Op.LOG_ROW_SOFTMAX:
        t = rec.attrs["temperature"]
        return [(g - np.exp(out) * np.sum(g, axis=1, keepdims=True)) / t]
    if op is Op.L2_NORMALIZE_ROWS:
        eps = rec.attrs["eps"]
        norms = numerics.row_norms(xs[0])
        projected = (g - out * np.sum(g * out, axis=1, keepdims=True)) / np.maximum(
            norms, eps
        )
        # Rows at or below eps are treated like a relu kink: gradient 0.
        return [np.where(norms > eps, projected, 0.0)]
    raise ContractError("No backward rule for {}".format(op.value))


def backward(tape: Tape, output: int) -> Dict[int, Tensor]:
    """
    Gradient of the scalar `output` node with respect to every leaf on the tape.

    Leaves the output does not depend on get a zero gradient. The tape's
    `adjoints` are replaced with this pass's adjoints; the tape values are
    never modified, so repeated calls are bit-identical.
    """
    if not tape.finalized:
        raise TapeStateError("backward() requires a finalized tape.")
    if not 0 <= output < len(tape):
        raise TapeStateError("Unknown output node {}".format(output))
    if tape.values[output].size != 1:
        raise ContractError(
            "backward() needs a scalar output, node {} has shape {}".format(
                output, tape.values[output].shape
            )
        )

    needs_grad = []
    for rec in tape.nodes:
        needs_grad.append(
            rec.op is Op.LEAF or any(needs_grad[i] for i in rec.inputs)
        )

    adjoints: Dict[int, Tensor] = {output: np.ones_like(tape.values[output])}
    for node in range(output, -1, -1):
        g = adjoints.get(node)
        if g is None or not tape.nodes[node].inputs or not needs_grad[node]:
            continue
        for i, gi in zip(tape.nodes[node].inputs, _input_grads(tape, node, g)):
            if not needs_grad[i]:
                continue
            adjoints[i] = adjoints[i] + gi if i in adjoints else gi

    tape.adjoints = adjoints
    return {
        i: adjoints.get(i, np.zeros_like(tape.values[i])) for i in tape.leaves
    }


GraphFn = Callable[[Tape, int], int]
"""Builds a scalar node from a leaf node on the given tape."""


def evaluate(fn: GraphFn, x: Tensor) -> Tuple[float, np.ndarray]:
    """
    Evaluate a graph function at x on a fresh tape.

    :return: (scalar value, piece signature)
    """
    tape = Tape()
    out = fn(tape, tape.leaf(x))
    return float(tape.value(out)), tape.piece_signature()


def gradient(fn: GraphFn, x: Tensor) -> Tensor:
    tape = Tape()
    xn = tape.leaf(x)
    out = fn(tape, xn)
    return backward(tape.finalize(), out)[xn]


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> Tensor:
    """
    Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
    """
    if not h > 0:
        raise DomainError("h must be > 0, got {}".format(h))
    x = numerics.as_tensor(x)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    passed: bool
    checked: int
    excluded: int
    worst_index: Optional[Tuple[int, ...]] = None
    nan_location: Optional[Tuple[int, ...]] = None

    def __str__(self):
        if self.nan_location is not None:
            return "FAIL non-finite gradient at {}".format(self.nan_location)
        return "{} max_rel_error={:.3e} at {} ({} checked, {} kink-excluded)".format(
            "PASS" if self.passed else "FAIL",
            self.max_rel_error,
            self.worst_index,
            self.checked,
            self.excluded,
        )


def grad_check(
    fn: GraphFn, x: Tensor, h: float = 1e-5, tol: float = 1e-5
) -> GradCheckReport:
    """
    Compare `backward` against central finite differences at x.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8). A coordinate
    whose +h or -h evaluation leaves the smooth piece x lies on (a relu kink or
    a normalized row crossing eps) is excluded from the comparison.
    """
    if not h > 0:
        raise DomainError("h must be > 0, got {}".format(h))
    x = numerics.as_tensor(x)
    analytic = gradient(fn, x)
    _, sig_x = evaluate(fn, x)

    bad = np.argwhere(~np.isfinite(analytic))
    if len(bad):
        return GradCheckReport(
            np.inf, False, 0, 0, nan_location=tuple(int(v) for v in bad[0])
        )

    max_err = 0.0
    worst = None
    checked = excluded = 0
    for flat_i in range(x.size):
        index = np.unravel_index(flat_i, x.shape)
        xp = x.copy()
        xm = x.copy()
        xp[index] += h
        xm[index] -= h
        fp, sig_p = evaluate(fn, xp)
        fm, sig_m = evaluate(fn, xm)
        if not (np.array_equal(sig_p, sig_x) and np.array_equal(sig_m, sig_x)):
            excluded += 1
            continue
        numeric = (fp - fm) / (2 * h)
        if not np.isfinite(numeric):
            return GradCheckReport(
                np.inf,
                False,
                checked,
                excluded,
                nan_location=tuple(int(v) for v in index),
            )
        a = analytic[index]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        checked += 1
        if worst is None or err > max_err:
            max_err = err
            worst = tuple(int(v) for v in index)

    return GradCheckReport(
        max_rel_error=float(max_err),
        passed=bool(max_err <= tol),
        checked=checked,
        excluded=excluded,
        worst_index=worst,
    )


def _weighted_sum(tape: Tape, node: int, weights: Tensor) -> int:
    return tape.sum(tape.mul(node, tape.constant(weights)))


def primitive_cases(rng: Rng, rows: int = 4, cols: int = 3):
    """
    One (name, graph fn, input) case per primitive. Each fn reduces the
    primitive's output to a scalar with fixed random weights so every output
    coordinate contributes to the gradient.

    Weights and constant operands lie in [0.5, 1.5]; the row normalizers are
    reduced through one selected column per row. No gradient coordinate is
    near zero.
    """
    g = rng.generator

    def positive(*shape):
        return g.uniform(0.5, 1.5, size=shape)

    x = g.normal(size=(rows, cols))
    other = positive(rows, cols)
    right = positive(cols, 2)
    left = positive(2, rows)
    w_same = positive(rows, cols)
    w_mm = positive(rows, 2)
    w_left = positive(2, cols)
    w_t = positive(cols, rows)
    w_rows = positive(rows, 1)
    w_pick = np.zeros((rows, cols))
    w_pick[np.arange(rows), g.integers(0, cols, size=rows)] = 1.0
    # Keep relu inputs away from the kink and l2 inputs away from the axes.
    x_relu = np.where(np.abs(x) < 0.1, x + 0.3, x)
    x_far = np.sign(x) * (np.abs(x) + 0.5)

    def unary(op_name, weights=w_same, **kw):
        def fn(tape, xn):
            return _weighted_sum(tape, getattr(tape, op_name)(xn, **kw), weights)

        return fn

    return [
        ("add", lambda t, xn: _weighted_sum(t, t.add(xn, t.constant(other)), w_same), x),
        ("sub", lambda t, xn: _weighted_sum(t, t.sub(t.constant(other), xn), w_same), x),
        ("mul", lambda t, xn: _weighted_sum(t, t.mul(xn, t.constant(other)), w_same), x),
        ("matmul_left", lambda t, xn: _weighted_sum(t, t.matmul(xn, t.constant(right)), w_mm), x),
        ("matmul_right", lambda t, xn: _weighted_sum(t, t.matmul(t.constant(left), xn), w_left), x),
        ("transpose", lambda t, xn: _weighted_sum(t, t.transpose(xn), w_t), x),
        ("exp", unary("exp"), x),
        ("log", unary("log"), np.abs(x) + 0.5),
        ("relu", unary("relu"), x_relu),
        ("row_sum", lambda t, xn: _weighted_sum(t, t.row_sum(xn), w_rows), x),
        ("sum", lambda t, xn: t.sum(xn), x),
        ("scale", lambda t, xn: _weighted_sum(t, t.scale(xn, -2.5), w_same), x),
        ("row_softmax", unary("row_softmax", w_pick, temperature=0.7), x),
        ("log_row_softmax", unary("log_row_softmax", w_pick, temperature=0.7), x),
        ("l2_normalize_rows", unary("l2_normalize_rows", w_pick), x_far),
    ]


def check_primitives(
    rng: Rng, trials: int = 10, h: float = 1e-5, tol: float = 1e-6
) -> List[Tuple[str, GradCheckReport]]:
    """
    Grad-check every primitive on `trials` random inputs each.
    """
    results = []
    for trial in range(trials):
        for name, fn, x in primitive_cases(rng.derive("primitive", trial)):
            report = grad_check(fn, x, h=h, tol=tol)
            logger.debug("primitive {} trial {}: {}".format(name, trial, report))
            results.append((name, report))
    return results
