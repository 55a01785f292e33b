"""Dense matrices with reverse-mode gradients, and an immutable CSR matrix.

Every model formula is written with the small op vocabulary below.  Each op
returns a new :class:`Value` that remembers its inputs and a rule mapping the
upstream gradient to one gradient per input.  :func:`backward` walks the graph
in reverse topological order from a 1x1 root.

Gradients accumulate across calls; call :meth:`Value.zero_grad` between steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericError(ArithmeticError):
    """An op produced NaN or infinity."""


# ---------------------------------------------------------------------------
# sparse matrix

@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix of float64 entries.

    Columns within a row are strictly increasing; instances are immutable.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if offsets.shape != (self.rows + 1,):
            raise ShapeError(f"row_offsets must have length rows+1={self.rows + 1}, got {offsets.shape}")
        if offsets[0] != 0 or np.any(np.diff(offsets) < 0) or offsets[-1] != len(cols):
            raise ValueError("row_offsets must start at 0, be nondecreasing and end at nnz")
        if len(cols) != len(vals):
            raise ShapeError("col_indices and values differ in length")
        if len(cols):
            if cols.min() < 0 or cols.max() >= self.cols:
                raise ValueError("column index out of range")
            # strictly increasing inside each row: a non-increase may only happen at a row start
            drops = np.flatnonzero(np.diff(cols) <= 0) + 1
            if not np.all(np.isin(drops, offsets[1:-1])):
                raise ValueError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(vals)):
            raise NumericError("sparse matrix holds non-finite values")
        for name, arr in (("row_offsets", offsets), ("col_indices", cols), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def nnz(self) -> int:
        return len(self.values)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr.copy(), csr.indices.copy(), csr.data.copy())

    @classmethod
    def from_coo(cls, rows: int, cols: int, row_idx, col_idx, values=None) -> "SparseMatrix":
        """Build from triplets; repeated coordinates are summed."""
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        if values is None:
            values = np.ones(len(row_idx))
        return cls.from_scipy(sp.coo_matrix((values, (row_idx, col_idx)), shape=(rows, cols)))

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @classmethod
    def selection(cls, indices, n: int) -> "SparseMatrix":
        """``len(indices) x n`` matrix whose row ``r`` picks column ``indices[r]``."""
        indices = np.asarray(indices, dtype=np.int64)
        return cls.from_coo(len(indices), n, np.arange(len(indices)), indices)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    def to_scipy(self) -> sp.csr_matrix:
        return self.csr.copy()

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr_t)

    def dot(self, dense: np.ndarray) -> np.ndarray:
        return np.asarray(self.csr @ dense)

    def column_block(self, start: int, stop: int) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr[:, start:stop])

    def is_symmetric(self) -> bool:
        if self.rows != self.cols:
            return False
        diff = self.csr - self.csr_t
        return diff.nnz == 0 or float(abs(diff).max()) == 0.0

    def row_entries(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def write_sparse(mat: SparseMatrix, path) -> None:
    """Text format: a ``rows cols nnz`` header, then ``row col value`` triples."""
    coo = mat.csr.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mat.rows} {mat.cols} {mat.nnz}\n")
        fh.writelines(
            f"{r} {c} {v!r}\n" for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())
        )


def read_sparse(path) -> SparseMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected header 'rows cols nnz'")
        rows, cols, nnz = (int(x) for x in header)
        body = np.loadtxt(fh, dtype=np.float64, ndmin=2) if nnz else np.zeros((0, 3))
    if len(body) != nnz:
        raise ValueError(f"{path}: header declares {nnz} entries, found {len(body)}")
    return SparseMatrix.from_coo(rows, cols, body[:, 0].astype(np.int64), body[:, 1].astype(np.int64), body[:, 2])


# ---------------------------------------------------------------------------
# differentiable values

class Value:
    """A dense float64 matrix node in a differentiation graph."""

    __slots__ = ("data", "grad", "parents", "op", "_backward")

    def __init__(self, data, parents: tuple = (), op: str = "leaf", backward=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Value holds 2-D matrices, got ndim={arr.ndim}")
        self.data = arr
        self.grad = None
        self.parents = parents
        self.op = op
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 Value, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Value(shape={self.shape}, op={self.op})"


def _result(data: np.ndarray, parents: tuple, op: str, backward) -> Value:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Value.__new__(Value)
    out.data = data
    out.grad = None
    out.parents = parents
    out.op = op
    out._backward = backward
    return out


def _same_shape(op: str, a: Value, b: Value) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def spmm(s: SparseMatrix, v: Value) -> Value:
    if s.cols != v.shape[0]:
        raise ShapeError(f"spmm: sparse {s.shape} times dense {v.shape}")
    return _result(s.dot(v.data), (v,), "spmm", lambda g: (np.asarray(s.csr_t @ g),))


def matmul(a: Value, b: Value, transpose_b: bool = False) -> Value:
    """``a @ b``, or ``a @ b.T`` when ``transpose_b`` is set."""
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if a.shape[1] != inner_b:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}{'^T' if transpose_b else ''}")
    if transpose_b:
        def backward(g):
            return g @ b.data, g.T @ a.data
        return _result(a.data @ b.data.T, (a, b), "matmul", backward)

    def backward(g):
        return g @ b.data.T, a.data.T @ g
    return _result(a.data @ b.data, (a, b), "matmul", backward)


def add(a: Value, b: Value) -> Value:
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def scale(a: Value, c: float) -> Value:
    c = float(c)
    return _result(a.data * c, (a,), "scale", lambda g: (g * c,))


def concat_cols(*values: Value) -> Value:
    if not values:
        raise ShapeError("concat_cols needs at least one operand")
    nrows = values[0].shape[0]
    for v in values:
        if v.shape[0] != nrows:
            raise ShapeError(f"concat_cols: row counts {[x.shape[0] for x in values]} differ")
    bounds = np.cumsum([0] + [v.shape[1] for v in values])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(values)))
    return _result(np.concatenate([v.data for v in values], axis=1), tuple(values), "concat_cols", backward)


def slice_cols(a: Value, start: int, stop: int) -> Value:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}, {stop}) outside {a.shape[1]} columns")

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)
    return _result(a.data[:, start:stop].copy(), (a,), "slice_cols", backward)


def rowwise_inner(a: Value, b: Value) -> Value:
    """Row-by-row dot products, shape ``(r, 1)``."""
    _same_shape("rowwise_inner", a, b)
    return _result(
        np.einsum("ij,ij->i", a.data, b.data)[:, None], (a, b), "rowwise_inner",
        lambda g: (g * b.data, g * a.data),
    )


def relu(a: Value) -> Value:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def log_sigmoid(a: Value) -> Value:
    x = a.data
    # log(sigmoid(x)) = -log(1 + exp(-x)); its derivative is sigmoid(-x)
    out = -np.logaddexp(0.0, -x)
    return _result(out, (a,), "log_sigmoid", lambda g: (g * np.exp(-np.logaddexp(0.0, x)),))


def logsumexp_rows(a: Value) -> Value:
    """Stabilized ``log(sum(exp(row)))`` for each row, shape ``(r, 1)``."""
    if a.shape[1] == 0:
        raise ShapeError("logsumexp_rows over zero columns")
    x = a.data
    peak = x.max(axis=1, keepdims=True)
    lse = peak + np.log(np.exp(x - peak).sum(axis=1, keepdims=True))
    return _result(lse, (a,), "logsumexp_rows", lambda g: (g * np.exp(x - lse),))


def l2_norm_sq(a: Value) -> Value:
    return _result(np.array([[np.sum(a.data * a.data)]]), (a,), "l2_norm_sq", lambda g: (2.0 * g[0, 0] * a.data,))


# ---------------------------------------------------------------------------
# helpers composed from the ops above

def constant(data) -> Value:
    return Value(data, op="const")


def sum_all(a: Value) -> Value:
    r, c = a.shape
    out = matmul(constant(np.ones((1, r))), a)
    if c > 1:
        out = matmul(out, constant(np.ones((c, 1))))
    return out


def take_rows(a: Value, indices) -> Value:
    return spmm(SparseMatrix.selection(indices, a.shape[0]), a)


def stack_rows(*values: Value) -> Value:
    """Vertical concatenation, expressed as a sum of placement products."""
    total = sum(v.shape[0] for v in values)
    out, offset = None, 0
    for v in values:
        n = v.shape[0]
        place = SparseMatrix.from_coo(total, n, np.arange(offset, offset + n), np.arange(n))
        part = spmm(place, v)
        out = part if out is None else add(out, part)
        offset += n
    return out


# ---------------------------------------------------------------------------
# reverse pass

def _topological_order(root: Value) -> list[Value]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Value) -> None:
    """Populate ``grad`` on every Value reachable from the scalar ``root``."""
    if root.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 root, got {root.shape}")
    pending = {id(root): np.ones((1, 1))}
    for node in reversed(_topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg

