"""Minimal reverse-mode autodiff over dense numpy arrays.

Tensors are at most 2-D. Ops executed inside an active Tape record a
backward rule; Tape.backward walks the records in reverse execution order
(a topological order by construction), visiting each node once and
accumulating gradients deterministically. No implicit broadcasting beyond
bias-add; batch-wise row scaling is its own explicit op.

Training default is float32; `precision(np.float64)` switches tensor
creation to float64 for gradient checking.

Also hosts the two optimizer pieces every model here shares: global-norm
gradient clipping and ADAGRAD.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_DTYPE_STACK = [np.float32]
_ACTIVE_TAPE: list["Tape"] = []


def current_dtype():
    return _DTYPE_STACK[-1]


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors (gradient checks)."""
    _DTYPE_STACK.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE_STACK.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=current_dtype())
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape} grad={self.requires_grad}{tag}>"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered op records plus a registry of watched parameters."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []
        self.watched: dict[str, Tensor] = {}

    def __enter__(self):
        _ACTIVE_TAPE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.pop()
        return False

    def watch(self, params: dict[str, Tensor]) -> None:
        for name, t in params.items():
            if not t.requires_grad:
                raise ValueError(f"watched parameter {name!r} must require grad")
            self.watched[name] = t

    def record(self, out: Tensor, backward_rule) -> None:
        self._records.append((out, backward_rule))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every watched parameter.

        Unused parameters get explicit zero gradients. Repeated calls replay
        the same records and return identical values.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        accum: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, rule in reversed(self._records):
            g = accum.pop(id(out), None)
            if g is None:
                continue
            rule(g, accum)
        return {
            name: accum.get(id(t), np.zeros_like(t.data))
            for name, t in self.watched.items()
        }


def _tape() -> Tape | None:
    return _ACTIVE_TAPE[-1] if _ACTIVE_TAPE else None


def _accum(store: dict, t: Tensor, g: np.ndarray) -> None:
    key = id(t)
    if key in store:
        store[key] = store[key] + g
    else:
        store[key] = g


def _record(out: Tensor, inputs, rule) -> Tensor:
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _tape()
    if tape is not None and out.requires_grad:
        tape.record(out, rule)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- core ops ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def rule(g, store):
        if a.requires_grad:
            _accum(store, a, g)
        if b.requires_grad:
            _accum(store, b, g)
    return _record(out, (a, b), rule)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Row-broadcast bias add: x (n, m) + bias (1, m)."""
    if x.data.ndim != 2 or bias.shape != (1, x.shape[1]):
        raise ValueError(f"add_bias: expected x (n, m) and bias (1, m), "
                         f"got {x.shape} and {bias.shape}")
    out = Tensor(x.data + bias.data)

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g)
        if bias.requires_grad:
            _accum(store, bias, g.sum(axis=0, keepdims=True))
    return _record(out, (x, bias), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def rule(g, store):
        if a.requires_grad:
            _accum(store, a, g)
        if b.requires_grad:
            _accum(store, b, -g)
    return _record(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def rule(g, store):
        if a.requires_grad:
            _accum(store, a, g * b.data)
        if b.requires_grad:
            _accum(store, b, g * a.data)
    return _record(out, (a, b), rule)


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g * c)
    return _record(out, (x,), rule)


def add_const(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + c)

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g)
    return _record(out, (x,), rule)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of x (n, m) by the matching entry of s (n, 1)."""
    if x.data.ndim != 2 or s.shape != (x.shape[0], 1):
        raise ValueError(f"scale_rows: expected x (n, m) and s (n, 1), "
                         f"got {x.shape} and {s.shape}")
    out = Tensor(x.data * s.data)

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g * s.data)
        if s.requires_grad:
            _accum(store, s, (g * x.data).sum(axis=1, keepdims=True))
    return _record(out, (x, s), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g, store):
        if a.requires_grad:
            _accum(store, a, g @ b.data.T)
        if b.requires_grad:
            _accum(store, b, a.data.T @ g)
    return _record(out, (a, b), rule)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"matmul_t: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data.T)

    def rule(g, store):
        if a.requires_grad:
            _accum(store, a, g @ b.data)
        if b.requires_grad:
            _accum(store, b, g.T @ a.data)
    return _record(out, (a, b), rule)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ValueError("concat supports axis 0 or 1")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g, store):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                piece = g[lo:hi] if axis == 0 else g[:, lo:hi]
                _accum(store, p, piece)
    return _record(out, tuple(parts), rule)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if axis not in (0, 1) or x.data.ndim != 2:
        raise ValueError(f"slice_axis: need a 2-D tensor and axis 0/1, got {x.shape}")
    sl = (slice(start, stop), slice(None)) if axis == 0 else (slice(None), slice(start, stop))
    out = Tensor(x.data[sl])

    def rule(g, store):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[sl] = g
            _accum(store, x, full)
    return _record(out, (x,), rule)


def embedding_gather(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of an embedding table; gradients scatter-add into a dense table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"embedding_gather: ids must be 1-D, got shape {ids.shape}")
    out = Tensor(table.data[ids])

    def rule(g, store):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            _accum(store, table, full)
    return _record(out, (table,), rule)


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(1.0 / (1.0 + np.exp(-x.data)))

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g * out.data * (1.0 - out.data))
    return _record(out, (x,), rule)


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g * (1.0 - out.data ** 2))
    return _record(out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g * (x.data > 0.0))
    return _record(out, (x,), rule)


def _masked_shift(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        if mask.shape != x.shape:
            raise ValueError(f"softmax: mask shape {mask.shape} vs data {x.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("softmax: some row has every position masked out")
        x = np.where(mask, x, -np.inf)
    return x - x.max(axis=1, keepdims=True)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax; masked-out positions get probability exactly 0."""
    shifted = _masked_shift(x.data, mask)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=1, keepdims=True))

    def rule(g, store):
        if x.requires_grad:
            y = out.data
            dx = y * (g - (g * y).sum(axis=1, keepdims=True))
            _accum(store, x, dx)
    return _record(out, (x,), rule)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, g / x.data)
    return _record(out, (x,), rule)


def log_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable log(softmax(x)) over rows."""
    shifted = _masked_shift(x.data, mask)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(shifted - lse)

    def rule(g, store):
        if x.requires_grad:
            soft = np.exp(out.data)
            dx = g - soft * g.sum(axis=1, keepdims=True)
            if mask is not None:
                dx = np.where(mask, dx, 0.0)
            _accum(store, x, dx)
    return _record(out, (x,), rule)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = Tensor(x.data.sum())
    elif axis in (0, 1):
        out = Tensor(x.data.sum(axis=axis, keepdims=True))
    else:
        raise ValueError("reduce_sum supports axis None, 0, or 1")

    def rule(g, store):
        if x.requires_grad:
            _accum(store, x, np.broadcast_to(g, x.data.shape).copy()
                   if axis is not None else np.full_like(x.data, float(g)))
    return _record(out, (x,), rule)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    denom = x.data.size if axis is None else x.data.shape[axis]
    return scale(reduce_sum(x, axis=axis), 1.0 / denom)


# -- optimizer pieces ---------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                         for g in grads.values()))


def clip_global_norm(grads: dict[str, np.ndarray],
                     max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads)
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


class Adagrad:
    """ADAGRAD: acc += g**2; param -= lr * g / (sqrt(acc) + eps)."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.01,
                 epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.epsilon = epsilon
        self.accumulators = {k: np.zeros_like(t.data, dtype=np.float64)
                             for k, t in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            t = self.params[name]
            if grad.shape != t.data.shape:
                raise ValueError(f"grad/param shape mismatch for {name!r}: "
                                 f"{grad.shape} vs {t.data.shape}")
            acc = self.accumulators[name]
            acc += grad.astype(np.float64) ** 2
            t.data -= (self.lr * grad / (np.sqrt(acc) + self.epsilon)).astype(t.data.dtype)


# -- gradient checking --------------------------------------------------------

def finite_difference(loss_fn, params: dict[str, Tensor], h: float = 1e-5,
                      max_coords_per_param: int | None = None,
                      seed: int = 0) -> dict[str, list[tuple[tuple, float]]]:
    """Central-difference gradients of loss_fn() w.r.t. selected coordinates.

    loss_fn must recompute the loss from the current parameter values on
    every call. Returns, per parameter, a list of (index, derivative).
    """
    gen = np.random.Generator(np.random.PCG64(seed))
    out: dict[str, list[tuple[tuple, float]]] = {}
    for name, t in params.items():
        coords = list(np.ndindex(t.data.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            picks = gen.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        rows = []
        for idx in coords:
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = float(loss_fn())
            t.data[idx] = orig - h
            down = float(loss_fn())
            t.data[idx] = orig
            rows.append((idx, (up - down) / (2.0 * h)))
        out[name] = rows
    return out


def max_gradient_error(loss_fn, params: dict[str, Tensor], h: float = 1e-5,
                       max_coords_per_param: int | None = None, seed: int = 0,
                       relative: bool = False) -> float:
    """Worst absolute (or relative) disagreement between tape and differences."""
    with Tape() as tape:
        tape.watch(params)
        loss = loss_fn()
    analytic = tape.backward(loss)
    numeric = finite_difference(loss_fn, params, h=h,
                                max_coords_per_param=max_coords_per_param, seed=seed)
    worst = 0.0
    for name, rows in numeric.items():
        for idx, fd in rows:
            an = float(analytic[name][idx])
            err = abs(an - fd)
            if relative:
                err /= max(abs(an), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
