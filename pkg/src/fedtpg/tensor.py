"""Dense 64-bit matrices with a minimal reverse-mode gradient tape.

Only the primitives the prompt models need are implemented, each with its
analytic vector-Jacobian product.  A `GradTape` records one forward pass;
`GradTape.grad` replays it backward and returns one gradient buffer per
watched parameter.  Everything is pure: operations never mutate their
inputs (backing arrays are write-protected), and identical inputs produce
bitwise-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateInputError,
    NumericError,
    ParameterError,
    ShapeError,
)


class Matrix:
    """An immutable 2-D float64 value, optionally linked into a GradTape."""

    __slots__ = ("a", "tape", "node")

    def __init__(self, values):
        a = np.array(values, dtype=np.float64, copy=True)
        if a.ndim == 1:
            a = a.reshape(1, a.size)
        if a.ndim != 2:
            raise ShapeError(f"Matrix must be 2-D, got ndim={a.ndim}")
        a.setflags(write=False)
        self.a = a
        self.tape: GradTape | None = None
        self.node: int | None = None

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "Matrix":
        m = cls.__new__(cls)
        a = np.ascontiguousarray(a, dtype=np.float64)
        a.setflags(write=False)
        m.a = a
        m.tape = None
        m.node = None
        return m

    @property
    def rows(self) -> int:
        return self.a.shape[0]

    @property
    def cols(self) -> int:
        return self.a.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the entries (read-only)."""
        return self.a.ravel()

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


_Vjp = Callable[[np.ndarray], np.ndarray]


class GradTape:
    """Ordered record of primitive operations for one forward pass.

    Parameters are registered with `watch`; each primitive appends
    (output node, [(input node, vjp), ...]).  `grad` walks the records in
    reverse, accumulating adjoints, and returns the gradient of a scalar
    loss with respect to each watched parameter, matching its shape.
    """

    def __init__(self):
        self._records: list[tuple[int, tuple[tuple[int, _Vjp], ...]]] = []
        self._next = 0

    def watch(self, m: Matrix) -> Matrix:
        if m.tape is self:
            return m
        if m.tape is not None:
            raise ValueError("matrix already attached to a different tape")
        m.tape = self
        m.node = self._alloc()
        return m

    def _alloc(self) -> int:
        i = self._next
        self._next += 1
        return i

    def _record(self, out: Matrix, vjps: list[tuple[int, _Vjp]]) -> None:
        out.tape = self
        out.node = self._alloc()
        self._records.append((out.node, tuple(vjps)))

    def grad(self, loss: Matrix, params: Sequence[Matrix]) -> list[np.ndarray]:
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss is not a value recorded on this tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.rows}x{loss.cols}")
        adjoint: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
        for out_node, vjps in reversed(self._records):
            g = adjoint.pop(out_node, None)
            if g is None:
                continue
            for node, vjp in vjps:
                contrib = vjp(g)
                acc = adjoint.get(node)
                adjoint[node] = contrib if acc is None else acc + contrib
        out = []
        for p in params:
            if p.tape is not self:
                raise ValueError("parameter was not watched on this tape")
            out.append(adjoint.get(p.node, np.zeros_like(p.a)))
        return out


def _tape_of(*ms: Matrix) -> GradTape | None:
    tape = None
    for m in ms:
        if m.tape is not None:
            if tape is not None and m.tape is not tape:
                raise ValueError("operands live on different tapes")
            tape = m.tape
    return tape


def _emit(out: Matrix, inputs: Sequence[Matrix], vjps: Sequence[_Vjp | None]) -> Matrix:
    tape = _tape_of(*inputs)
    if tape is not None:
        pairs = [
            (m.node, fn)
            for m, fn in zip(inputs, vjps)
            if m.node is not None and fn is not None
        ]
        tape._record(out, pairs)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    out = Matrix._wrap(a.a @ b.a)
    return _emit(out, (a, b), (lambda g: g @ b.a.T, lambda g: a.a.T @ g))


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    out = Matrix._wrap(a.a + b.a)
    return _emit(out, (a, b), (lambda g: g, lambda g: g))


def sub(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    out = Matrix._wrap(a.a - b.a)
    return _emit(out, (a, b), (lambda g: g, lambda g: -g))


def scale(a: Matrix, c: float) -> Matrix:
    c = float(c)
    out = Matrix._wrap(a.a * c)
    return _emit(out, (a,), (lambda g: g * c,))


def add_row(a: Matrix, bias: Matrix) -> Matrix:
    """Broadcast-add a 1xC row vector to every row of a."""
    if bias.rows != 1 or bias.cols != a.cols:
        raise ShapeError(f"add_row: {a.rows}x{a.cols} + {bias.rows}x{bias.cols}")
    out = Matrix._wrap(a.a + bias.a)
    return _emit(out, (a, bias), (lambda g: g, lambda g: g.sum(axis=0, keepdims=True)))


def relu(a: Matrix) -> Matrix:
    mask = a.a > 0.0
    out = Matrix._wrap(np.where(mask, a.a, 0.0))
    return _emit(out, (a,), (lambda g: g * mask,))


def transpose(a: Matrix) -> Matrix:
    out = Matrix._wrap(a.a.T)
    return _emit(out, (a,), (lambda g: g.T,))


def reshape(a: Matrix, rows: int, cols: int) -> Matrix:
    if rows * cols != a.rows * a.cols:
        raise ShapeError(f"reshape: {a.rows}x{a.cols} -> {rows}x{cols}")
    shape = a.shape
    out = Matrix._wrap(a.a.reshape(rows, cols))
    return _emit(out, (a,), (lambda g: g.reshape(shape),))


def concat_cols(*ms: Matrix) -> Matrix:
    if not ms:
        raise ShapeError("concat_cols needs at least one operand")
    r = ms[0].rows
    for m in ms:
        if m.rows != r:
            raise ShapeError(f"concat_cols: row counts differ ({r} vs {m.rows})")
    out = Matrix._wrap(np.concatenate([m.a for m in ms], axis=1))
    offsets = np.cumsum([0] + [m.cols for m in ms])

    def slicer(i: int) -> _Vjp:
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[:, lo:hi]

    return _emit(out, ms, tuple(slicer(i) for i in range(len(ms))))


def slice_cols(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start < stop <= a.cols:
        raise ShapeError(f"slice_cols [{start}:{stop}] of {a.rows}x{a.cols}")
    out = Matrix._wrap(a.a[:, start:stop])

    def back(g: np.ndarray) -> np.ndarray:
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return full

    return _emit(out, (a,), (back,))


def row_softmax(a: Matrix, scale: float) -> Matrix:
    """Per-row softmax of a/scale with max-subtraction for stability."""
    if scale <= 0.0:
        raise ParameterError(f"softmax scale must be > 0, got {scale}")
    z = a.a / scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out_a = e / e.sum(axis=1, keepdims=True)
    out = Matrix._wrap(out_a)

    def back(g: np.ndarray) -> np.ndarray:
        inner = (g * out_a).sum(axis=1, keepdims=True)
        return (g - inner) * out_a / scale

    return _emit(out, (a,), (back,))


def layer_norm(x: Matrix, gamma: Matrix, beta: Matrix, eps: float = 1e-5) -> Matrix:
    """Per-row normalization with population variance, then affine gamma/beta."""
    if gamma.rows != 1 or gamma.cols != x.cols or beta.rows != 1 or beta.cols != x.cols:
        raise ShapeError(
            f"layer_norm: x is {x.rows}x{x.cols}, gamma {gamma.rows}x{gamma.cols}, "
            f"beta {beta.rows}x{beta.cols}"
        )
    if eps <= 0.0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    mu = x.a.mean(axis=1, keepdims=True)
    xc = x.a - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Matrix._wrap(xhat * gamma.a + beta.a)

    def back_x(g: np.ndarray) -> np.ndarray:
        gy = g * gamma.a
        t1 = gy.mean(axis=1, keepdims=True)
        t2 = (gy * xhat).mean(axis=1, keepdims=True)
        return inv * (gy - t1 - xhat * t2)

    return _emit(
        out,
        (x, gamma, beta),
        (
            back_x,
            lambda g: (g * xhat).sum(axis=0, keepdims=True),
            lambda g: g.sum(axis=0, keepdims=True),
        ),
    )


def cosine_rows(a: Matrix, b: Matrix) -> Matrix:
    """out[i][j] = cosine of row i of a with row j of b, in [-1, 1]."""
    if a.cols != b.cols:
        raise ShapeError(f"cosine_rows: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    na = np.linalg.norm(a.a, axis=1)
    nb = np.linalg.norm(b.a, axis=1)
    for name, norms in (("a", na), ("b", nb)):
        bad = np.where(norms == 0.0)[0]
        if bad.size:
            raise DegenerateInputError(f"zero-norm row {bad[0]} in operand {name}")
    an = a.a / na[:, None]
    bn = b.a / nb[:, None]
    out_a = an @ bn.T
    out = Matrix._wrap(out_a)

    def back_a(g: np.ndarray) -> np.ndarray:
        return (g @ bn - (g * out_a).sum(axis=1, keepdims=True) * an) / na[:, None]

    def back_b(g: np.ndarray) -> np.ndarray:
        return (g.T @ an - (g * out_a).sum(axis=0)[:, None] * bn) / nb[:, None]

    return _emit(out, (a, b), (back_a, back_b))


def cross_entropy_mean(logits: Matrix, labels: np.ndarray) -> Matrix:
    """Mean negative log-likelihood of integer labels under row-softmax(logits).

    Computed through log-sum-exp; the gradient is (softmax - onehot)/batch.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or y.size != logits.rows:
        raise ShapeError(f"labels: expected {logits.rows} entries, got shape {y.shape}")
    if y.size == 0:
        raise DataError("empty batch")
    if y.min() < 0 or y.max() >= logits.cols:
        raise DataError(
            f"label out of range: valid [0, {logits.cols}), got {y[np.argmax((y < 0) | (y >= logits.cols))]}"
        )
    z = logits.a
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    sums = e.sum(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(sums[:, 0])
    n = y.size
    out = Matrix._wrap(np.array([[(lse - z[np.arange(n), y]).mean()]]))
    probs = e / sums

    def back(g: np.ndarray) -> np.ndarray:
        d = probs.copy()
        d[np.arange(n), y] -= 1.0
        return d * (g[0, 0] / n)

    return _emit(out, (logits,), (back,))


def frob_sumsq(a: Matrix) -> Matrix:
    """Sum of squared entries, as a 1x1 matrix."""
    out = Matrix._wrap(np.array([[float((a.a * a.a).sum())]]))
    return _emit(out, (a,), (lambda g: 2.0 * a.a * g[0, 0],))


def check_finite(m: Matrix, what: str = "value") -> Matrix:
    if not np.all(np.isfinite(m.a)):
        raise NumericError(f"non-finite {what}")
    return m
