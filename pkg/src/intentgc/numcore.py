"""Dense numeric substrate: 2-D matrices with tape-based reverse-mode gradients.

Values are C-contiguous 2-D numpy arrays ("matrices"); a vector is a 1-row
matrix. Every primitive records a backward rule on a :class:`Tape`, which is
confined to a single training step and replayed in strict reverse execution
order. Gradients accumulate additively when a value is consumed more than
once.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64


def as_matrix(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Coerce to a C-contiguous 2-D array, validating finiteness."""
    a = np.ascontiguousarray(data, dtype=dtype)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return a


class Var:
    """A matrix value on a tape, with a gradient slot filled by backward()."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def _acc(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad += g


class Tape:
    """Records primitive ops in execution order for reverse-mode replay.

    A tape belongs to one forward/backward cycle on one thread. ``check_finite``
    makes every primitive raise :class:`NonFiniteError` the moment it produces
    a non-finite entry, which keeps training failures near their cause.
    """

    def __init__(self, dtype=DEFAULT_DTYPE, check_finite: bool = True):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self._ops: list[Callable[[], None]] = []

    # -- leaves ----------------------------------------------------------

    def leaf(self, array: np.ndarray) -> Var:
        """Wrap a parameter array (shared, not copied) as a differentiable leaf."""
        if array.ndim != 2:
            raise ShapeError(f"leaf must be 2-D, got shape {array.shape}")
        if array.dtype != self.dtype:
            raise ShapeError(f"leaf dtype {array.dtype} != tape dtype {self.dtype}")
        return Var(array)

    def const(self, data) -> Var:
        """Wrap non-trainable input data; gradients reaching it are discarded."""
        return Var(as_matrix(data, self.dtype))

    # -- recording helpers -------------------------------------------------

    def _emit(self, value: np.ndarray, backward: Callable[[np.ndarray], None]) -> Var:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError("operation produced NaN or Inf")
        out = Var(value)

        def step():
            if out.grad is not None:
                backward(out.grad)

        self._ops.append(step)
        return out

    # -- primitives ----------------------------------------------------------

    def matmul(self, a: Var, b: Var, transpose_b: bool = False) -> Var:
        bm = b.value.T if transpose_b else b.value
        if a.value.shape[1] != bm.shape[0]:
            raise ShapeError(f"matmul: {a.value.shape} @ {bm.shape}")
        value = a.value @ bm

        def backward(g):
            if transpose_b:
                _acc(a, g @ b.value)
                _acc(b, g.T @ a.value)
            else:
                _acc(a, g @ b.value.T)
                _acc(b, a.value.T @ g)

        return self._emit(value, backward)

    def add(self, a: Var, b: Var) -> Var:
        """Elementwise add; ``b`` may be a 1-row bias broadcast over a's rows."""
        if a.value.shape == b.value.shape:
            value = a.value + b.value

            def backward(g):
                _acc(a, g)
                _acc(b, g)

        elif b.value.shape == (1, a.value.shape[1]):
            value = a.value + b.value

            def backward(g):
                _acc(a, g)
                _acc(b, g.sum(axis=0, keepdims=True))

        else:
            raise ShapeError(f"add: {a.value.shape} + {b.value.shape}")
        return self._emit(value, backward)

    def scale(self, a: Var, c) -> Var:
        """Multiply by a python scalar or by a differentiable (1,1) Var."""
        if isinstance(c, Var):
            if c.value.shape != (1, 1):
                raise ShapeError(f"scale: scalar Var must be (1,1), got {c.value.shape}")
            value = a.value * c.value[0, 0]

            def backward(g):
                _acc(a, g * c.value[0, 0])
                _acc(c, np.array([[float(np.sum(g * a.value))]], dtype=self.dtype))

        else:
            cf = float(c)
            value = a.value * cf

            def backward(g):
                _acc(a, g * cf)

        return self._emit(value, backward)

    def concat_cols(self, parts: Sequence[Var]) -> Var:
        if not parts:
            raise ShapeError("concat_cols: empty part list")
        rows = parts[0].value.shape[0]
        for p in parts:
            if p.value.shape[0] != rows:
                raise ShapeError("concat_cols: row counts differ")
        value = np.concatenate([p.value for p in parts], axis=1)
        offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])

        def backward(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _acc(p, g[:, lo:hi])

        return self._emit(value, backward)

    def slice_rows(self, a: Var, start: int, stop: int) -> Var:
        if not (0 <= start <= stop <= a.value.shape[0]):
            raise ShapeError(f"slice_rows: [{start}:{stop}] of {a.value.shape}")
        value = a.value[start:stop]

        def backward(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.value)
            a.grad[start:stop] += g

        return self._emit(value, backward)

    def mean_rows(self, a: Var) -> Var:
        return self.mean_groups(a, a.value.shape[0])

    def mean_groups(self, a: Var, size: int,
                    weights: np.ndarray | None = None) -> Var:
        """Mean over consecutive groups of ``size`` rows: (g*size, m) -> (g, m).

        ``weights`` (length g*size, non-trainable) switches to a weighted
        mean, normalized within each group; all-zero groups fall back to the
        unweighted mean.
        """
        n, m = a.value.shape
        if size < 1 or n % size:
            raise ShapeError(f"mean_groups: {n} rows not divisible by {size}")
        groups = n // size
        if weights is None:
            value = a.value.reshape(groups, size, m).mean(axis=1)

            def backward(g):
                _acc(a, np.repeat(g / size, size, axis=0))

        else:
            w = np.asarray(weights, dtype=self.dtype).reshape(groups, size)
            if w.shape != (groups, size) or np.any(w < 0):
                raise ShapeError("mean_groups: weights must be non-negative, one per row")
            sums = w.sum(axis=1, keepdims=True)
            w = np.where(sums > 0, w / np.where(sums > 0, sums, 1.0), 1.0 / size)
            value = np.einsum("gs,gsm->gm", w, a.value.reshape(groups, size, m))
            w_rows = w.reshape(-1, 1)

            def backward(g):
                _acc(a, np.repeat(g, size, axis=0) * w_rows)

        return self._emit(value, backward)

    def relu(self, a: Var) -> Var:
        value = np.maximum(a.value, 0.0)

        def backward(g):
            _acc(a, g * (a.value > 0.0))

        return self._emit(value, backward)

    # max(0, x) used as the margin loss; the kink at 0 takes subgradient 0.
    hinge = relu

    def tanh(self, a: Var) -> Var:
        value = np.tanh(a.value)

        def backward(g):
            _acc(a, g * (1.0 - value * value))

        return self._emit(value, backward)

    def act(self, a: Var, kind: str) -> Var:
        """Activation by name: relu | tanh | identity."""
        if kind == "relu":
            return self.relu(a)
        if kind == "tanh":
            return self.tanh(a)
        if kind == "identity":
            return a
        raise ShapeError(f"unknown activation {kind!r}")

    def dot_rows(self, a: Var, b: Var) -> Var:
        """Row-wise inner products: (n,m),(n,m) -> (n,1)."""
        if a.value.shape != b.value.shape:
            raise ShapeError(f"dot_rows: {a.value.shape} vs {b.value.shape}")
        value = np.sum(a.value * b.value, axis=1, keepdims=True)

        def backward(g):
            _acc(a, g * b.value)
            _acc(b, g * a.value)

        return self._emit(value, backward)

    def elem(self, a: Var, i: int, j: int) -> Var:
        """Extract element (i, j) as a differentiable (1,1) scalar."""
        value = a.value[i : i + 1, j : j + 1].copy()

        def backward(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.value)
            a.grad[i, j] += g[0, 0]

        return self._emit(value, backward)

    def take_rows(self, table: Var, idx: np.ndarray) -> Var:
        """Gather rows (embedding lookup); gradients scatter-add into the table."""
        idx = np.asarray(idx, dtype=np.intp)
        if idx.ndim != 1:
            raise ShapeError("take_rows: index must be 1-D")
        value = table.value[idx]

        def backward(g):
            if table.grad is None:
                table.grad = np.zeros_like(table.value)
            np.add.at(table.grad, idx, g)

        return self._emit(value, backward)

    def rows_mean_sets(self, table: Var, sets: Sequence[np.ndarray]) -> Var:
        """Per output row, the mean of a set of table rows; empty set -> zeros."""
        m = table.value.shape[1]
        value = np.zeros((len(sets), m), dtype=self.dtype)
        for i, ids in enumerate(sets):
            if len(ids):
                value[i] = table.value[ids].mean(axis=0)

        def backward(g):
            if table.grad is None:
                table.grad = np.zeros_like(table.value)
            for i, ids in enumerate(sets):
                if len(ids):
                    np.add.at(table.grad, ids, np.broadcast_to(g[i] / len(ids), (len(ids), m)))

        return self._emit(value, backward)

    # -- reverse sweep --------------------------------------------------------

    def backward(self, root: Var) -> None:
        """Propagate d(root)/d(leaf) into every Var reachable from ``root``.

        ``root`` must be a (1,1) scalar. Ops replay in strict reverse
        execution order; shared inputs receive the sum of branch gradients.
        """
        if root.value.shape != (1, 1):
            raise ShapeError(f"backward root must be (1,1), got {root.value.shape}")
        root.grad = np.ones((1, 1), dtype=self.dtype)
        for step in reversed(self._ops):
            step()

    def __len__(self):
        return len(self._ops)


class GradCheckResult:
    """Outcome of a finite-difference gradient check."""

    def __init__(self, max_rel_err, failed, skipped):
        self.max_rel_err = max_rel_err
        self.failed = failed      # [(param_idx, coord, analytic, numeric, rel_err)]
        self.skipped = skipped    # coordinates at non-differentiable points

    def __repr__(self):
        return (
            f"GradCheckResult(max_rel_err={self.max_rel_err:.3e}, "
            f"failed={len(self.failed)}, skipped={len(self.skipped)})"
        )


def grad_check(
    f: Callable[[Tape, list[Var]], Var],
    params: Sequence[np.ndarray],
    epsilon: float = 1e-5,
    tol: float | None = None,
    kink_tol: float = 1e-3,
) -> GradCheckResult:
    """Compare tape gradients of scalar-valued ``f`` against central differences.

    ``f(tape, leaves)`` must return a (1,1) Var. Relative error per coordinate
    is |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Coordinates
    where the left and right one-sided slopes disagree (a kink, e.g. the hinge
    at its boundary) are reported as skipped rather than failed.
    """
    params = [np.array(p, dtype=DEFAULT_DTYPE) for p in params]

    def value_at(ps) -> float:
        t = Tape()
        out = f(t, [t.leaf(p) for p in ps])
        return float(out.value[0, 0])

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    out = f(tape, leaves)
    tape.backward(out)
    grads = [
        lv.grad if lv.grad is not None else np.zeros_like(p)
        for lv, p in zip(leaves, params)
    ]

    max_err = 0.0
    failed, skipped = [], []
    f0 = value_at(params)
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + epsilon
            fp = value_at(params)
            flat[ci] = orig - epsilon
            fm = value_at(params)
            flat[ci] = orig
            numeric = (fp - fm) / (2.0 * epsilon)
            d_right = (fp - f0) / epsilon
            d_left = (f0 - fm) / epsilon
            coord = np.unravel_index(ci, p.shape)
            if abs(d_right - d_left) > kink_tol * (abs(d_right) + abs(d_left) + 1.0):
                skipped.append((pi, coord))
                continue
            analytic = float(grads[pi][coord])
            rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            max_err = max(max_err, rel)
            if tol is not None and rel > tol:
                failed.append((pi, coord, analytic, numeric, rel))
    return GradCheckResult(max_err, failed, skipped)
