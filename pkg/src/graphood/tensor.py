"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every :class:`Tensor` is a ``rows x cols`` float64 matrix. Tensors created
through :meth:`Tape.leaf` are differentiable leaves; every operation whose
inputs live on a tape appends one record to it, and :meth:`Tape.backward`
walks those records once in reverse order. Tensors without a tape are
constants and never receive adjoints.

Sparse matrices (:class:`SparseMatrix`) are always constants.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse

from .errors import NumericalError, ShapeError

_ids = itertools.count()


class Tensor:
    """A 2-D float64 value with an accumulated adjoint."""

    __slots__ = ("values", "grad", "tape", "node_id")

    def __init__(self, values, tape: Optional["Tape"] = None):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        self.values = arr
        self.grad = np.zeros_like(arr)
        self.tape = tape
        self.node_id = next(_ids)

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        kind = "leaf/node" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {kind}, id={self.node_id})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Record of one computation, replayed backwards by :meth:`backward`."""

    def __init__(self):
        self._leaves: list[Tensor] = []
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self):
        return len(self._records)

    def leaf(self, values) -> Tensor:
        t = Tensor(values, tape=self)
        self._leaves.append(t)
        return t

    def backward(self, loss: Tensor) -> None:
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        for t in self._leaves:
            t.grad = np.zeros_like(t.values)
        for out, _, _ in self._records:
            out.grad = np.zeros_like(out.values)
        loss.grad = np.ones((1, 1))
        for out, inputs, vjp in reversed(self._records):
            if not out.grad.any():
                continue
            grads = vjp(out.grad)
            for inp, g in zip(inputs, grads):
                if g is not None and inp.tape is self:
                    inp.grad = inp.grad + g


def _record(values: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("cannot mix tensors from different tapes")
            tape = t.tape
    out = Tensor(values, tape=tape)
    if tape is not None:
        tape._records.append((out, tuple(inputs), vjp))
    return out


def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    """Classify how ``b`` stretches onto ``a``'s shape."""
    if a.shape == b.shape:
        return "same"
    if b.shape == (1, 1):
        return "scalar"
    if b.shape == (1, a.shape[1]):
        return "row"
    if b.shape == (a.shape[0], 1):
        return "col"
    raise ShapeError(f"cannot broadcast {b.shape} onto {a.shape}")


def _reduce_to(g: np.ndarray, kind: str) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "scalar":
        return np.array([[g.sum()]])
    if kind == "row":
        return g.sum(axis=0, keepdims=True)
    return g.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def vjp(g):
        return g @ bv.T, av.T @ g

    return _record(av @ bv, (a, b), vjp)


class SparseMatrix:
    """Square CSR matrix with float64 entries.

    Column indices are sorted within each row and ``(row, col)`` pairs are
    unique; :meth:`from_coo` enforces both.
    """

    def __init__(self, n: int, indptr, indices, data, *, ncols: Optional[int] = None):
        self.n = int(n)
        self.ncols = self.n if ncols is None else int(ncols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self._check()
        self._rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        self._transpose: Optional[SparseMatrix] = None
        self._scipy = None

    def _check(self):
        ip = self.indptr
        if ip.shape != (self.n + 1,) or ip[0] != 0:
            raise ValueError("indptr must have length n+1 and start at 0")
        if np.any(np.diff(ip) < 0):
            raise ValueError("indptr must be nondecreasing")
        if ip[-1] != self.indices.size or self.indices.size != self.data.size:
            raise ValueError("last offset must equal nnz")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.ncols):
            raise ValueError("column index out of range")
        rows = np.repeat(np.arange(self.n), np.diff(ip))
        bad = (np.diff(rows) == 0) & (np.diff(self.indices) <= 0)
        if bad.any():
            r = int(rows[np.argmax(bad)])
            raise ValueError(f"row {r}: column indices must be strictly increasing")

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals=None, *, ncols: Optional[int] = None) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.ones(rows.size) if vals is None else np.asarray(vals, dtype=np.float64)
        if not (rows.size == cols.size == vals.size):
            raise ValueError("rows, cols and vals must have equal length")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                i = int(np.argmax(dup))
                raise ValueError(f"duplicate entry ({rows[i]}, {cols[i]})")
        if rows.size and (rows.min() < 0 or rows.max() >= n):
            raise ValueError("row index out of range")
        counts = np.bincount(rows, minlength=n)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(n, indptr, cols, vals, ncols=ncols)

    @classmethod
    def empty(cls, n: int) -> "SparseMatrix":
        return cls(n, np.zeros(n + 1, dtype=np.int64), [], [])

    @property
    def shape(self):
        return (self.n, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self._rows, self.indices] = self.data
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self._rows, weights=self.data, minlength=self.n)

    def transpose(self) -> "SparseMatrix":
        if self._transpose is None:
            t = SparseMatrix.from_coo(self.ncols, self.indices, self._rows, self.data, ncols=self.n)
            t._transpose = self
            self._transpose = t
        return self._transpose

    def dot(self, d: np.ndarray) -> np.ndarray:
        """Sparse times dense, with ``d`` of shape ``(ncols, k)``."""
        d = np.asarray(d, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != self.ncols:
            raise ShapeError(f"spmm dimension mismatch: {self.shape} @ {d.shape}")
        return self._csr() @ d

    def _csr(self):
        if self._scipy is None:
            self._scipy = scipy.sparse.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        return self._scipy

    def __repr__(self):
        return f"SparseMatrix(n={self.n}, nnz={self.nnz})"


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    """``s @ d`` for a constant sparse ``s``; only ``d`` receives an adjoint."""
    if s.ncols != d.shape[0]:
        raise ShapeError(f"spmm dimension mismatch: {s.shape} @ {d.shape}")

    def vjp(g):
        return (s.transpose().dot(g),)

    return _record(s.dot(d.values), (d,), vjp)


# --------------------------------------------------------------------------
# Elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    ka, kb = _roles(a, b)

    def vjp(g):
        return _reduce_to(g, ka), _reduce_to(g, kb)

    return _record(a.values + b.values, (a, b), vjp)


def _roles(a: Tensor, b: Tensor):
    """Broadcast kind of each operand relative to the output shape."""
    if a.shape == b.shape:
        return "same", "same"
    if a.values.size >= b.values.size:
        return "same", _broadcast_kind(a, b)
    return _broadcast_kind(b, a), "same"


def sub(a: Tensor, b: Tensor) -> Tensor:
    ka, kb = _roles(a, b)

    def vjp(g):
        return _reduce_to(g, ka), -_reduce_to(g, kb)

    return _record(a.values - b.values, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ka, kb = _roles(a, b)
    av, bv = a.values, b.values

    def vjp(g):
        return _reduce_to(g * bv, ka), _reduce_to(g * av, kb)

    return _record(av * bv, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    ka, kb = _roles(a, b)
    av, bv = a.values, b.values

    def vjp(g):
        return _reduce_to(g / bv, ka), _reduce_to(-g * av / (bv * bv), kb)

    return _record(av / bv, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _record(a.values * c, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def vjp(g):
        return (g * mask,)

    return _record(np.where(mask, a.values, 0.0), (a,), vjp)


def square(a: Tensor) -> Tensor:
    av = a.values

    def vjp(g):
        return (2.0 * av * g,)

    return _record(av * av, (a,), vjp)


def stop_gradient(a: Tensor) -> Tensor:
    """Same values as ``a``, detached from every tape."""
    return Tensor(a.values)


# --------------------------------------------------------------------------
# Row-wise reductions


def row_sum(a: Tensor) -> Tensor:
    cols = a.shape[1]

    def vjp(g):
        return (np.repeat(g, cols, axis=1),)

    return _record(a.values.sum(axis=1, keepdims=True), (a,), vjp)


def row_norm2(a: Tensor) -> Tensor:
    """Euclidean norm of each row; the adjoint of an all-zero row is zero."""
    av = a.values
    norm = np.sqrt((av * av).sum(axis=1, keepdims=True))

    def vjp(g):
        safe = np.where(norm > 0, norm, 1.0)
        return (np.where(norm > 0, av / safe, 0.0) * g,)

    return _record(norm, (a,), vjp)


def _check_finite(v: np.ndarray, what: str):
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"{what}: non-finite input")


def _lse(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=1, keepdims=True)
    return m + np.log(np.exp(v - m).sum(axis=1, keepdims=True))


def row_logsumexp(z: Tensor) -> Tensor:
    """``log(sum(exp(z_v)))`` for each row, stabilised by the row max."""
    if z.shape[1] < 1:
        raise ShapeError("row_logsumexp needs at least one column")
    zv = z.values
    _check_finite(zv, "row_logsumexp")
    out = _lse(zv)

    def vjp(g):
        return (np.exp(zv - out) * g,)

    return _record(out, (z,), vjp)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.exp(z - _lse(z))


def _mask_indices(mask, n: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        if m.shape != (n,):
            raise ShapeError(f"mask of length {m.shape} for {n} rows")
        return np.flatnonzero(m)
    return m.astype(np.int64).ravel()


def softmax_cross_entropy(z: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the masked rows."""
    n, C = z.shape
    idx = _mask_indices(mask, n)
    if idx.size == 0:
        raise ValueError("softmax_cross_entropy: empty mask")
    y = np.asarray(labels, dtype=np.int64)[idx]
    if np.any((y < 0) | (y >= C)):
        raise ValueError(f"labels of masked nodes must lie in [0, {C})")
    zv = z.values
    _check_finite(zv, "softmax_cross_entropy")
    rows = zv[idx]
    lse = _lse(rows)
    loss = float(np.mean(lse[:, 0] - rows[np.arange(idx.size), y]))

    def vjp(g):
        p = np.exp(rows - lse)
        p[np.arange(idx.size), y] -= 1.0
        out = np.zeros_like(zv)
        np.add.at(out, idx, p * (g[0, 0] / idx.size))
        return (out,)

    return _record(np.array([[loss]]), (z,), vjp)


# --------------------------------------------------------------------------
# Selection and global reductions


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64).ravel()

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.values[idx], (a,), vjp)


def total(a: Tensor) -> Tensor:
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0]),)

    return _record(np.array([[a.values.sum()]]), (a,), vjp)


def mean(a: Tensor) -> Tensor:
    shape = a.shape
    size = a.values.size

    def vjp(g):
        return (np.full(shape, g[0, 0] / size),)

    return _record(np.array([[a.values.mean()]]), (a,), vjp)


def masked_mean(a: Tensor, mask) -> Tensor:
    """Mean of the masked rows of a column tensor."""
    if a.shape[1] != 1:
        raise ShapeError(f"masked_mean expects a column, got {a.shape}")
    idx = _mask_indices(mask, a.shape[0])
    if idx.size == 0:
        raise ValueError("masked_mean: empty mask")
    return mean(take_rows(a, idx))
