"""Rank-2 float64 tensors and a tape-based reverse-mode differentiation engine.

The engine supports gradients of gradients: ``backward`` normally sweeps the
tape with raw numpy arithmetic, but with ``create_graph=True`` every
vector-Jacobian product is evaluated through the recorded primitives, so the
returned gradients are ordinary on-tape values that can be differentiated
again. That is exactly what optimization-through-optimization needs: the
inner gradient step is recorded, and the outer sweep differentiates through
it.

Conventions:

- All values are dense (rows, cols) float64 matrices; vectors are 1 x n or
  n x 1, scalars are 1 x 1.
- A `Tape` stores one record per primitive application in parallel lists;
  the node id is the list index, so records are topologically ordered by
  construction. Leaves enter via `Tape.watch` (differentiable) or
  `Tape.constant`.
- A reverse sweep touches each record at most once, so it is O(n) in the
  number of records.
- Non-finite outputs are a hard error at every primitive boundary.
- Node values are treated as immutable once appended; callers must not
  mutate arrays they hand to `watch`/`constant`.
- For binary broadcasting primitives (`add`/`sub`/`mul`) only the second
  operand may broadcast (a full row, a full column, or a 1 x 1 scalar).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    DomainError,
    LineageError,
    NumericError,
)

Array = np.ndarray

__all__ = [
    "Tensor",
    "Tape",
    "Var",
    "forward_primitive",
    "backward",
    "finite_diff_gradient",
    "gradient_descent",
    "matmul",
    "add",
    "sub",
    "mul",
    "elem_abs",
    "scalar_div",
    "scalar_mul",
    "neg",
    "exp",
    "square",
    "sigmoid",
    "tanh",
    "row_softmax",
    "row_mean",
    "col_mean",
    "row_sum",
    "col_sum",
    "reduce_sum",
    "sq_frobenius",
    "concat_rows",
    "concat_cols",
    "transpose",
    "reshape",
    "slice_rows",
    "slice_cols",
    "tile_rows",
    "tile_cols",
    "pow_const",
]


def _as_matrix(data) -> Array:
    """Coerce scalars / 1-D sequences / 2-D arrays to a float64 matrix."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected rank <= 2 data, got rank {arr.ndim}")
    return arr


def _all_finite(arr: Array) -> bool:
    # NaN/Inf contaminate the sum, so one reduction detects both.
    return math.isfinite(float(arr.sum()))


class Tensor:
    """Dense rank-<=2 array of float64 with (rows, cols) shape metadata."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = _as_matrix(data)
        if not _all_finite(arr):
            raise NumericError("tensor holds non-finite entries")
        self.data = arr

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Var:
    """Reference to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> Tensor:
        t = Tensor.__new__(Tensor)
        t.data = self.tape._vals[self.idx]
        return t

    @property
    def array(self) -> Array:
        return self.tape._vals[self.idx]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tape._vals[self.idx].shape

    @property
    def requires_grad(self) -> bool:
        return self.tape._req[self.idx]

    def __repr__(self) -> str:
        return f"Var(idx={self.idx}, shape={self.shape}, req={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications.

    Records are stored in parallel lists; every record's inputs precede it
    (topological by construction). A reverse sweep may itself append
    records (``create_graph=True``), which is what enables grad-of-grad.
    """

    __slots__ = ("_ops", "_inputs", "_vals", "_req", "_aux")

    def __init__(self):
        self._ops: list[str] = []
        self._inputs: list[tuple[int, ...]] = []
        self._vals: list[Array] = []
        self._req: list[bool] = []
        self._aux: list = []

    def __len__(self) -> int:
        return len(self._ops)

    def _push(self, op: str, inputs: tuple[int, ...], value: Array, req: bool, aux) -> Var:
        self._ops.append(op)
        self._inputs.append(inputs)
        self._vals.append(value)
        self._req.append(req)
        self._aux.append(aux)
        return Var(self, len(self._ops) - 1)

    def constant(self, data) -> Var:
        """Append a non-differentiable leaf."""
        arr = data.data if isinstance(data, Tensor) else _as_matrix(data)
        if not _all_finite(arr):
            raise NumericError("constant holds non-finite entries")
        return self._push("const", (), arr, False, None)

    def watch(self, data) -> Var:
        """Append a differentiable leaf."""
        arr = data.data if isinstance(data, Tensor) else _as_matrix(data)
        if not _all_finite(arr):
            raise NumericError("watched leaf holds non-finite entries")
        return self._push("leaf", (), arr, True, None)

    @property
    def records(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(primitive-id, input node ids, output node id) per record."""
        return [(op, ins, i) for i, (op, ins) in enumerate(zip(self._ops, self._inputs))]

    def value(self, idx: int) -> Array:
        return self._vals[idx]


# ---------------------------------------------------------------------------
# forward rules
# ---------------------------------------------------------------------------

def _fwd_matmul(arrs, aux):
    a, b = arrs
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def _broadcast_ok(sa, sb):
    return sb == sa or sb == (1, sa[1]) or sb == (sa[0], 1) or sb == (1, 1)


def _fwd_add(arrs, aux):
    a, b = arrs
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"add: {a.shape} + {b.shape}")
    return a + b


def _fwd_sub(arrs, aux):
    a, b = arrs
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"subtract: {a.shape} - {b.shape}")
    return a - b


def _fwd_mul(arrs, aux):
    a, b = arrs
    if b.shape != a.shape and b.shape != (1, 1):
        raise DimensionError(f"elementwise-multiply: {a.shape} * {b.shape}")
    return a * b


def _fwd_abs(arrs, aux):
    return np.abs(arrs[0])


def _fwd_sdiv(arrs, aux):
    if aux == 0.0:
        raise DomainError("scalar-divide: divisor is zero")
    return arrs[0] / aux


def _fwd_smul(arrs, aux):
    return arrs[0] * aux


def _fwd_neg(arrs, aux):
    return -arrs[0]


def _fwd_exp(arrs, aux):
    return np.exp(arrs[0])


def _fwd_square(arrs, aux):
    a = arrs[0]
    return a * a


def _fwd_sigmoid(arrs, aux):
    # 0.5*(1+tanh(x/2)) never overflows, unlike the exp formulation.
    return 0.5 * (np.tanh(0.5 * arrs[0]) + 1.0)


def _fwd_tanh(arrs, aux):
    return np.tanh(arrs[0])


def _fwd_row_softmax(arrs, aux):
    a = arrs[0]
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _fwd_row_mean(arrs, aux):
    return arrs[0].mean(axis=1, keepdims=True)


def _fwd_col_mean(arrs, aux):
    return arrs[0].mean(axis=0, keepdims=True)


def _fwd_row_sum(arrs, aux):
    return arrs[0].sum(axis=1, keepdims=True)


def _fwd_col_sum(arrs, aux):
    return arrs[0].sum(axis=0, keepdims=True)


def _fwd_reduce_sum(arrs, aux):
    return arrs[0].sum().reshape(1, 1)


def _fwd_sq_frobenius(arrs, aux):
    a = arrs[0]
    return (a * a).sum().reshape(1, 1)


def _fwd_concat_rows(arrs, aux):
    cols = arrs[0].shape[1]
    for a in arrs[1:]:
        if a.shape[1] != cols:
            raise DimensionError("concat (rows): column counts differ")
    return np.concatenate(arrs, axis=0)


def _fwd_concat_cols(arrs, aux):
    rows = arrs[0].shape[0]
    for a in arrs[1:]:
        if a.shape[0] != rows:
            raise DimensionError("concat (cols): row counts differ")
    return np.concatenate(arrs, axis=1)


def _fwd_transpose(arrs, aux):
    return arrs[0].T


def _fwd_reshape(arrs, aux):
    r, c = aux
    a = arrs[0]
    if r * c != a.size:
        raise DimensionError(f"reshape: {a.shape} -> ({r}, {c})")
    return a.reshape(r, c)


def _fwd_slice_rows(arrs, aux):
    r0, r1 = aux
    a = arrs[0]
    if not (0 <= r0 < r1 <= a.shape[0]):
        raise DimensionError(f"slice (rows): [{r0}:{r1}] of {a.shape}")
    return a[r0:r1]


def _fwd_slice_cols(arrs, aux):
    c0, c1 = aux
    a = arrs[0]
    if not (0 <= c0 < c1 <= a.shape[1]):
        raise DimensionError(f"slice (cols): [{c0}:{c1}] of {a.shape}")
    return a[:, c0:c1]


def _fwd_tile_rows(arrs, aux):
    a = arrs[0]
    if a.shape[0] != 1:
        raise DimensionError(f"tile (rows): need a 1 x n input, got {a.shape}")
    return np.broadcast_to(a, (aux, a.shape[1]))


def _fwd_tile_cols(arrs, aux):
    a = arrs[0]
    if a.shape[1] != 1:
        raise DimensionError(f"tile (cols): need an n x 1 input, got {a.shape}")
    return np.broadcast_to(a, (a.shape[0], aux))


def _fwd_pow_const(arrs, aux):
    return arrs[0] ** aux


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "abs": _fwd_abs,
    "sdiv": _fwd_sdiv,
    "smul": _fwd_smul,
    "neg": _fwd_neg,
    "exp": _fwd_exp,
    "square": _fwd_square,
    "sigmoid": _fwd_sigmoid,
    "tanh": _fwd_tanh,
    "row_softmax": _fwd_row_softmax,
    "row_mean": _fwd_row_mean,
    "col_mean": _fwd_col_mean,
    "row_sum": _fwd_row_sum,
    "col_sum": _fwd_col_sum,
    "reduce_sum": _fwd_reduce_sum,
    "sq_frobenius": _fwd_sq_frobenius,
    "concat_rows": _fwd_concat_rows,
    "concat_cols": _fwd_concat_cols,
    "transpose": _fwd_transpose,
    "reshape": _fwd_reshape,
    "slice_rows": _fwd_slice_rows,
    "slice_cols": _fwd_slice_cols,
    "tile_rows": _fwd_tile_rows,
    "tile_cols": _fwd_tile_cols,
    "pow_const": _fwd_pow_const,
}


def _apply(kind: str, inputs: tuple[Var, ...], aux=None) -> Var:
    tape = inputs[0].tape
    vals = tape._vals
    reqs = tape._req
    req = False
    arrs = []
    for v in inputs:
        if v.tape is not tape:
            raise LineageError(f"{kind}: inputs live on different tapes")
        arrs.append(vals[v.idx])
        if reqs[v.idx]:
            req = True
    out = _FORWARD[kind](arrs, aux)
    if not math.isfinite(float(out.sum())):
        raise NumericError(f"{kind} produced non-finite values")
    return tape._push(kind, tuple(v.idx for v in inputs), out, req, aux)


def forward_primitive(kind: str, inputs: Sequence[Var], aux=None) -> Var:
    """Apply a primitive by name, recording it on the inputs' tape."""
    if kind not in _FORWARD:
        raise DomainError(f"unknown primitive '{kind}'")
    if not inputs:
        raise ContractError("forward_primitive needs at least one input")
    return _apply(kind, tuple(inputs), aux)


# primitive helpers -- thin names over _apply

def matmul(a: Var, b: Var) -> Var:
    return _apply("matmul", (a, b))


def add(a: Var, b: Var) -> Var:
    return _apply("add", (a, b))


def sub(a: Var, b: Var) -> Var:
    return _apply("sub", (a, b))


def mul(a: Var, b: Var) -> Var:
    return _apply("mul", (a, b))


def elem_abs(a: Var) -> Var:
    return _apply("abs", (a,))


def scalar_div(a: Var, c: float) -> Var:
    return _apply("sdiv", (a,), float(c))


def scalar_mul(a: Var, c: float) -> Var:
    return _apply("smul", (a,), float(c))


def neg(a: Var) -> Var:
    return _apply("neg", (a,))


def exp(a: Var) -> Var:
    return _apply("exp", (a,))


def square(a: Var) -> Var:
    return _apply("square", (a,))


def sigmoid(a: Var) -> Var:
    return _apply("sigmoid", (a,))


def tanh(a: Var) -> Var:
    return _apply("tanh", (a,))


def row_softmax(a: Var) -> Var:
    return _apply("row_softmax", (a,))


def row_mean(a: Var) -> Var:
    return _apply("row_mean", (a,))


def col_mean(a: Var) -> Var:
    return _apply("col_mean", (a,))


def row_sum(a: Var) -> Var:
    return _apply("row_sum", (a,))


def col_sum(a: Var) -> Var:
    return _apply("col_sum", (a,))


def reduce_sum(a: Var) -> Var:
    return _apply("reduce_sum", (a,))


def sq_frobenius(a: Var) -> Var:
    return _apply("sq_frobenius", (a,))


def concat_rows(*parts: Var) -> Var:
    return _apply("concat_rows", parts)


def concat_cols(*parts: Var) -> Var:
    return _apply("concat_cols", parts)


def transpose(a: Var) -> Var:
    return _apply("transpose", (a,))


def reshape(a: Var, rows: int, cols: int) -> Var:
    return _apply("reshape", (a,), (rows, cols))


def slice_rows(a: Var, start: int, stop: int) -> Var:
    return _apply("slice_rows", (a,), (start, stop))


def slice_cols(a: Var, start: int, stop: int) -> Var:
    return _apply("slice_cols", (a,), (start, stop))


def tile_rows(a: Var, n: int) -> Var:
    return _apply("tile_rows", (a,), n)


def tile_cols(a: Var, n: int) -> Var:
    return _apply("tile_cols", (a,), n)


def pow_const(a: Var, p: float) -> Var:
    return _apply("pow_const", (a,), float(p))


# ---------------------------------------------------------------------------
# raw (non-recording) vector-Jacobian products
# ---------------------------------------------------------------------------
# Signature: (g, input arrays, output array, aux, need) -> tuple of grads,
# None where need[i] is False. Returned arrays are never mutated afterwards,
# so views are safe.

def _reduce_like(g: Array, shape: tuple[int, int]) -> Array:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum().reshape(1, 1)
    if shape[0] == 1:
        return g.sum(axis=0, keepdims=True)
    return g.sum(axis=1, keepdims=True)


def _vr_matmul(g, arrs, out, aux, need):
    a, b = arrs
    return (g @ b.T if need[0] else None, a.T @ g if need[1] else None)


def _vr_add(g, arrs, out, aux, need):
    return (g if need[0] else None,
            _reduce_like(g, arrs[1].shape) if need[1] else None)


def _vr_sub(g, arrs, out, aux, need):
    return (g if need[0] else None,
            -_reduce_like(g, arrs[1].shape) if need[1] else None)


def _vr_mul(g, arrs, out, aux, need):
    a, b = arrs
    ga = g * b if need[0] else None
    if not need[1]:
        return (ga, None)
    gb = (g * a).sum().reshape(1, 1) if b.shape == (1, 1) and a.shape != (1, 1) else g * a
    return (ga, gb)


def _vr_abs(g, arrs, out, aux, need):
    return (g * np.sign(arrs[0]),)


def _vr_sdiv(g, arrs, out, aux, need):
    return (g / aux,)


def _vr_smul(g, arrs, out, aux, need):
    return (g * aux,)


def _vr_neg(g, arrs, out, aux, need):
    return (-g,)


def _vr_exp(g, arrs, out, aux, need):
    return (g * out,)


def _vr_square(g, arrs, out, aux, need):
    return (2.0 * arrs[0] * g,)


def _vr_sigmoid(g, arrs, out, aux, need):
    return (g * out * (1.0 - out),)


def _vr_tanh(g, arrs, out, aux, need):
    return (g * (1.0 - out * out),)


def _vr_row_softmax(g, arrs, out, aux, need):
    t = g * out
    return (t - out * t.sum(axis=1, keepdims=True),)


def _vr_row_mean(g, arrs, out, aux, need):
    n, c = arrs[0].shape
    return (np.broadcast_to(g * (1.0 / c), (n, c)),)


def _vr_col_mean(g, arrs, out, aux, need):
    n, c = arrs[0].shape
    return (np.broadcast_to(g * (1.0 / n), (n, c)),)


def _vr_row_sum(g, arrs, out, aux, need):
    return (np.broadcast_to(g, arrs[0].shape),)


def _vr_col_sum(g, arrs, out, aux, need):
    return (np.broadcast_to(g, arrs[0].shape),)


def _vr_reduce_sum(g, arrs, out, aux, need):
    return (np.broadcast_to(g, arrs[0].shape),)


def _vr_sq_frobenius(g, arrs, out, aux, need):
    return ((2.0 * g[0, 0]) * arrs[0],)


def _vr_concat_rows(g, arrs, out, aux, need):
    grads = []
    r = 0
    for i, a in enumerate(arrs):
        r1 = r + a.shape[0]
        grads.append(g[r:r1] if need[i] else None)
        r = r1
    return tuple(grads)


def _vr_concat_cols(g, arrs, out, aux, need):
    grads = []
    c = 0
    for i, a in enumerate(arrs):
        c1 = c + a.shape[1]
        grads.append(g[:, c:c1] if need[i] else None)
        c = c1
    return tuple(grads)


def _vr_transpose(g, arrs, out, aux, need):
    return (g.T,)


def _vr_reshape(g, arrs, out, aux, need):
    return (g.reshape(arrs[0].shape),)


def _vr_slice_rows(g, arrs, out, aux, need):
    z = np.zeros(arrs[0].shape)
    z[aux[0]:aux[1]] = g
    return (z,)


def _vr_slice_cols(g, arrs, out, aux, need):
    z = np.zeros(arrs[0].shape)
    z[:, aux[0]:aux[1]] = g
    return (z,)


def _vr_tile_rows(g, arrs, out, aux, need):
    return (g.sum(axis=0, keepdims=True),)


def _vr_tile_cols(g, arrs, out, aux, need):
    return (g.sum(axis=1, keepdims=True),)


def _vr_pow_const(g, arrs, out, aux, need):
    return (aux * arrs[0] ** (aux - 1.0) * g,)


_VJP_RAW: dict[str, Callable] = {
    "matmul": _vr_matmul,
    "add": _vr_add,
    "sub": _vr_sub,
    "mul": _vr_mul,
    "abs": _vr_abs,
    "sdiv": _vr_sdiv,
    "smul": _vr_smul,
    "neg": _vr_neg,
    "exp": _vr_exp,
    "square": _vr_square,
    "sigmoid": _vr_sigmoid,
    "tanh": _vr_tanh,
    "row_softmax": _vr_row_softmax,
    "row_mean": _vr_row_mean,
    "col_mean": _vr_col_mean,
    "row_sum": _vr_row_sum,
    "col_sum": _vr_col_sum,
    "reduce_sum": _vr_reduce_sum,
    "sq_frobenius": _vr_sq_frobenius,
    "concat_rows": _vr_concat_rows,
    "concat_cols": _vr_concat_cols,
    "transpose": _vr_transpose,
    "reshape": _vr_reshape,
    "slice_rows": _vr_slice_rows,
    "slice_cols": _vr_slice_cols,
    "tile_rows": _vr_tile_rows,
    "tile_cols": _vr_tile_cols,
    "pow_const": _vr_pow_const,
}


# ---------------------------------------------------------------------------
# recorded vector-Jacobian products (for create_graph=True)
# ---------------------------------------------------------------------------
# Expressed purely through primitives so the gradient computation is itself
# recorded and can be differentiated again.

def _reduce_like_var(g: Var, shape: tuple[int, int]) -> Var:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return reduce_sum(g)
    if shape[0] == 1:
        return col_sum(g)
    return row_sum(g)


def _vv_matmul(g, ins, out, aux, need):
    a, b = ins
    return (matmul(g, transpose(b)) if need[0] else None,
            matmul(transpose(a), g) if need[1] else None)


def _vv_add(g, ins, out, aux, need):
    return (g if need[0] else None,
            _reduce_like_var(g, ins[1].shape) if need[1] else None)


def _vv_sub(g, ins, out, aux, need):
    return (g if need[0] else None,
            neg(_reduce_like_var(g, ins[1].shape)) if need[1] else None)


def _vv_mul(g, ins, out, aux, need):
    a, b = ins
    ga = mul(g, b) if need[0] else None
    gb = None
    if need[1]:
        prod = mul(g, a)
        gb = reduce_sum(prod) if b.shape == (1, 1) and a.shape != (1, 1) else prod
    return (ga, gb)


def _vv_abs(g, ins, out, aux, need):
    sign = ins[0].tape.constant(np.sign(ins[0].array))
    return (mul(g, sign),)


def _vv_sdiv(g, ins, out, aux, need):
    return (scalar_div(g, aux),)


def _vv_smul(g, ins, out, aux, need):
    return (scalar_mul(g, aux),)


def _vv_neg(g, ins, out, aux, need):
    return (neg(g),)


def _vv_exp(g, ins, out, aux, need):
    return (mul(g, out),)


def _vv_square(g, ins, out, aux, need):
    return (scalar_mul(mul(ins[0], g), 2.0),)


def _one_minus(v: Var) -> Var:
    ones = v.tape.constant(np.ones(v.shape))
    return sub(ones, v)


def _vv_sigmoid(g, ins, out, aux, need):
    return (mul(g, mul(out, _one_minus(out))),)


def _vv_tanh(g, ins, out, aux, need):
    return (mul(g, _one_minus(square(out))),)


def _vv_row_softmax(g, ins, out, aux, need):
    t = mul(g, out)
    return (sub(t, mul(out, tile_cols(row_sum(t), out.shape[1]))),)


def _vv_row_mean(g, ins, out, aux, need):
    n, c = ins[0].shape
    return (scalar_mul(tile_cols(g, c), 1.0 / c),)


def _vv_col_mean(g, ins, out, aux, need):
    n, c = ins[0].shape
    return (scalar_mul(tile_rows(g, n), 1.0 / n),)


def _vv_row_sum(g, ins, out, aux, need):
    return (tile_cols(g, ins[0].shape[1]),)


def _vv_col_sum(g, ins, out, aux, need):
    return (tile_rows(g, ins[0].shape[0]),)


def _vv_reduce_sum(g, ins, out, aux, need):
    ones = g.tape.constant(np.ones(ins[0].shape))
    return (mul(ones, g),)


def _vv_sq_frobenius(g, ins, out, aux, need):
    return (scalar_mul(mul(ins[0], g), 2.0),)


def _vv_concat_rows(g, ins, out, aux, need):
    grads = []
    r = 0
    for i, v in enumerate(ins):
        r1 = r + v.shape[0]
        grads.append(slice_rows(g, r, r1) if need[i] else None)
        r = r1
    return tuple(grads)


def _vv_concat_cols(g, ins, out, aux, need):
    grads = []
    c = 0
    for i, v in enumerate(ins):
        c1 = c + v.shape[1]
        grads.append(slice_cols(g, c, c1) if need[i] else None)
        c = c1
    return tuple(grads)


def _vv_transpose(g, ins, out, aux, need):
    return (transpose(g),)


def _vv_reshape(g, ins, out, aux, need):
    r, c = ins[0].shape
    return (reshape(g, r, c),)


def _vv_slice_rows(g, ins, out, aux, need):
    r0, r1 = aux
    rows, cols = ins[0].shape
    parts = []
    if r0 > 0:
        parts.append(g.tape.constant(np.zeros((r0, cols))))
    parts.append(g)
    if r1 < rows:
        parts.append(g.tape.constant(np.zeros((rows - r1, cols))))
    return (parts[0] if len(parts) == 1 else concat_rows(*parts),)


def _vv_slice_cols(g, ins, out, aux, need):
    c0, c1 = aux
    rows, cols = ins[0].shape
    parts = []
    if c0 > 0:
        parts.append(g.tape.constant(np.zeros((rows, c0))))
    parts.append(g)
    if c1 < cols:
        parts.append(g.tape.constant(np.zeros((rows, cols - c1))))
    return (parts[0] if len(parts) == 1 else concat_cols(*parts),)


def _vv_tile_rows(g, ins, out, aux, need):
    return (col_sum(g),)


def _vv_tile_cols(g, ins, out, aux, need):
    return (row_sum(g),)


def _vv_pow_const(g, ins, out, aux, need):
    return (scalar_mul(mul(pow_const(ins[0], aux - 1.0), g), aux),)


_VJP_VAR: dict[str, Callable] = {
    "matmul": _vv_matmul,
    "add": _vv_add,
    "sub": _vv_sub,
    "mul": _vv_mul,
    "abs": _vv_abs,
    "sdiv": _vv_sdiv,
    "smul": _vv_smul,
    "neg": _vv_neg,
    "exp": _vv_exp,
    "square": _vv_square,
    "sigmoid": _vv_sigmoid,
    "tanh": _vv_tanh,
    "row_softmax": _vv_row_softmax,
    "row_mean": _vv_row_mean,
    "col_mean": _vv_col_mean,
    "row_sum": _vv_row_sum,
    "col_sum": _vv_col_sum,
    "reduce_sum": _vv_reduce_sum,
    "sq_frobenius": _vv_sq_frobenius,
    "concat_rows": _vv_concat_rows,
    "concat_cols": _vv_concat_cols,
    "transpose": _vv_transpose,
    "reshape": _vv_reshape,
    "slice_rows": _vv_slice_rows,
    "slice_cols": _vv_slice_cols,
    "tile_rows": _vv_tile_rows,
    "tile_cols": _vv_tile_cols,
    "pow_const": _vv_pow_const,
}


# ---------------------------------------------------------------------------
# reverse sweeps
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Var, wrt: Sequence[Var], create_graph: bool = False) -> list[Var]:
    """Gradients of a scalar loss with respect to ``wrt``, in order.

    With ``create_graph=True`` the sweep runs through recorded primitives and
    the returned Vars are differentiable; otherwise they are plain constants
    on the same tape.
    """
    if loss.tape is not tape:
        raise LineageError("loss does not belong to the given tape")
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    for v in wrt:
        if v.tape is not tape:
            raise LineageError("a wrt Var does not belong to the loss tape")
        if not v.requires_grad:
            raise ContractError("a wrt Var does not require grad")
    if create_graph:
        return _sweep_recorded(tape, loss, wrt)
    return _sweep_raw(tape, loss, wrt)


def _descendant_mask(tape: Tape, wrt: Sequence[Var], lo: int, hi: int) -> bytearray:
    """Mark nodes in [lo, hi] that depend on some wrt node.

    Restricting the reverse sweep to this set keeps each backward call
    proportional to the subgraph between wrt and loss, so repeated
    backward calls on a growing tape (descent steps) stay linear overall.
    """
    desc = bytearray(hi + 1)
    for v in wrt:
        if v.idx <= hi:
            desc[v.idx] = 1
    inputs = tape._inputs
    for i in range(lo, hi + 1):
        if desc[i]:
            continue
        for j in inputs[i]:
            if desc[j]:
                desc[i] = 1
                break
    return desc


def _sweep_raw(tape: Tape, loss: Var, wrt: Sequence[Var]) -> list[Var]:
    ops = tape._ops
    inputs = tape._inputs
    vals = tape._vals
    auxs = tape._aux
    table = _VJP_RAW

    top = loss.idx
    lo = min((v.idx for v in wrt), default=0)
    desc = _descendant_mask(tape, wrt, lo, top)
    adj: list = [None] * (top + 1)
    if desc[top]:
        adj[top] = np.ones((1, 1))
    for i in range(top, lo - 1, -1):
        g = adj[i]
        if g is None:
            continue
        ins = inputs[i]
        if not ins:
            continue
        need = tuple(bool(desc[j]) for j in ins)
        if True not in need:
            continue
        grads = table[ops[i]](g, [vals[j] for j in ins], vals[i], auxs[i], need)
        for j, gj in zip(ins, grads):
            if gj is None:
                continue
            a = adj[j]
            adj[j] = gj if a is None else a + gj

    out = []
    for v in wrt:
        g = adj[v.idx] if v.idx <= top else None
        if g is None:
            g = np.zeros(vals[v.idx].shape)
        out.append(tape._push("const", (), np.asarray(g), False, None))
    return out


def _sweep_recorded(tape: Tape, loss: Var, wrt: Sequence[Var]) -> list[Var]:
    ops = tape._ops
    inputs = tape._inputs
    auxs = tape._aux
    table = _VJP_VAR

    top = loss.idx
    lo = min((v.idx for v in wrt), default=0)
    desc = _descendant_mask(tape, wrt, lo, top)
    adj: list = [None] * (top + 1)
    if desc[top]:
        adj[top] = tape.constant(np.ones((1, 1)))
    for i in range(top, lo - 1, -1):
        g = adj[i]
        if g is None:
            continue
        ins = inputs[i]
        if not ins:
            continue
        need = tuple(bool(desc[j]) for j in ins)
        if True not in need:
            continue
        in_vars = tuple(Var(tape, j) for j in ins)
        grads = table[ops[i]](g, in_vars, Var(tape, i), auxs[i], need)
        for j, gj in zip(ins, grads):
            if gj is None:
                continue
            a = adj[j]
            adj[j] = gj if a is None else add(a, gj)

    out = []
    for v in wrt:
        g = adj[v.idx] if v.idx <= top else None
        if g is None:
            g = tape.constant(np.zeros(v.shape))
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# generic helpers built on the engine
# ---------------------------------------------------------------------------

def gradient_descent(loss_fn: Callable[[list[Var]], Var], params: list[Var],
                     lr: float, steps: int, create_graph: bool = False) -> list[Var]:
    """Full-batch gradient descent, recorded on the params' tape.

    With ``create_graph=True`` the update chain stays differentiable with
    respect to the starting parameters; otherwise the inner gradients are
    detached constants (first-order behaviour).
    """
    params = list(params)
    for step in range(steps):
        try:
            loss = loss_fn(params)
            grads = backward(params[0].tape, loss, params, create_graph=create_graph)
            # scale first, then subtract, so each backward's descendant mask
            # starts above the previous step's records
            scaled = [scalar_mul(g, lr) for g in grads]
            params = [sub(p, s) for p, s in zip(params, scaled)]
        except NumericError as e:
            raise NumericError(f"non-finite value during descent step {step}: {e}") from e
    return params


def finite_diff_gradient(f: Callable[[Array], float], point: Array,
                         epsilon: float = 1e-5) -> Array:
    """Central-difference gradient of a scalar function of a flat vector.

    Kept deliberately independent of the tape machinery: this is the oracle
    the analytic gradients are checked against.
    """
    if epsilon <= 0:
        raise DomainError("finite_diff_gradient: epsilon must be positive")
    point = np.asarray(point, dtype=np.float64).ravel()
    grad = np.empty(point.size)
    for i in range(point.size):
        p_hi = point.copy()
        p_hi[i] += epsilon
        p_lo = point.copy()
        p_lo[i] -= epsilon
        f_hi = float(f(p_hi))
        f_lo = float(f(p_lo))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise NumericError("finite_diff_gradient: non-finite function value")
        grad[i] = (f_hi - f_lo) / (2.0 * epsilon)
    return grad
