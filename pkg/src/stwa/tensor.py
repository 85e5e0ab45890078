"""Dense f64 tensors with a reverse-mode gradient tape.

Every op computes its forward value with numpy and, when at least one input is
tracked by the active :class:`Tape`, appends a node holding a closure that maps
the output gradient to input gradients. Nodes are appended in execution order,
so walking the list backwards is a valid reverse topological order.
"""
from __future__ import annotations

import contextvars
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "stwa_active_tape", default=None
)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "tape", "tape_id", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.tape: Tape | None = None
        self.tape_id: int | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    @property
    def tracked(self) -> bool:
        tape = _ACTIVE_TAPE.get()
        return tape is not None and self.tape is tape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("only division by a python scalar is supported")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return swap_last(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; ops executed inside record onto it. Leaves must be
    registered with :meth:`watch` to receive gradients.
    """

    def __init__(self):
        self.nodes: list[tuple[int, tuple[Tensor, ...], Callable]] = []
        self.leaf_registry: dict[int, Tensor] = {}
        self._next_id = 0
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            t.tape = self
            t.tape_id = self._new_id()
            self.leaf_registry[t.tape_id] = t

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
        out.tape = self
        out.tape_id = self._new_id()
        self.nodes.append((out.tape_id, parents, backward_fn))
        return out

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Return ``{tape_id: gradient}`` for every registered leaf."""
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.data)}
        for out_id, parents, fn in reversed(self.nodes):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or parent.tape is not self:
                    continue
                pid = parent.tape_id
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return {
            tid: grads.get(tid, np.zeros_like(leaf.data))
            for tid, leaf in self.leaf_registry.items()
        }

    def grad_of(self, grads: dict[int, np.ndarray], t: Tensor) -> np.ndarray:
        if t.tape is not self:
            return np.zeros_like(t.data)
        return grads[t.tape_id]


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.tape is None:
        raise ValueError("loss is not on a tape")
    return loss.tape.backward(loss)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.tape = None
    out.tape_id = None
    out.name = None
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.tape is tape for p in parents):
        tape.record(out, tuple(parents), backward_fn)
    return out


# -- broadcasting helpers ---------------------------------------------------

def _check_suffix(a: tuple, b: tuple, opname: str) -> None:
    """Allow equal shapes or leading-batch broadcast (one shape a suffix of the other)."""
    if a == b:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{opname}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# -- elementwise arithmetic -------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def tabs(a: Tensor) -> Tensor:
    # sign taken from the real part so the op stays usable under complex-step probing
    s = np.sign(a.data.real)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x.real >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data.real > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(x - x.real.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes with leading-batch broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    _check_suffix(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def swap_last(a: Tensor) -> Tensor:
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


# -- shape manipulation -------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(src),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Materialize leading-batch broadcast of ``a`` to ``shape``."""
    shape = tuple(shape)
    _check_suffix(a.shape, shape, "expand")
    src = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, src),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    ax = axis % datas[0].ndim
    for d in datas[1:]:
        if d.ndim != datas[0].ndim or any(
            d.shape[i] != datas[0].shape[i] for i in range(d.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in datas]}")
    bounds = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate(datas, axis=ax), tuple(tensors), bw)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % a.ndim
    if sum(sizes) != a.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[ax] = slice(start, start + n)
        out.append(take(a, tuple(idx)))
        start += n
    return out


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing with gradient scatter."""
    src = a.shape

    def bw(g):
        full = np.zeros(src, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ax = axis if axis >= 0 else axis + tensors[0].ndim + 1
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


# -- reductions ---------------------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    src = a.shape
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, src).copy(),))
    ax = axis % a.ndim

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), src).copy(),)

    return _make(a.data.sum(axis=ax), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


# -- utilities ----------------------------------------------------------------

def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=DTYPE))


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int, name=None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), name=name)


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is re-evaluated from scratch on every call and must read the current
    values of ``params``; it must be deterministic.
    """
    params = list(params)
    with Tape() as tape:
        tape.watch(*params)
        loss = f()
        grads = tape.backward(loss)
    analytic = [grads[p.tape_id] for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while perturbing {p.name or p}[{i}]")
            numeric = (fp - fm) / (2 * eps)
            err = abs(ga[i] - numeric) / (abs(ga[i]) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst


def complex_step_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-20,
) -> float:
    """Like :func:`grad_check`, with ``Im f(theta + i h) / h`` as the reference.

    The complex step has no subtractive cancellation, so it resolves gradients
    far below the ``1e-7`` floor where f64 central differences lose all
    relative accuracy. Every op on the path must accept complex data.
    """
    params = list(params)
    with Tape() as tape:
        tape.watch(*params)
        loss = f()
        grads = tape.backward(loss)
    worst = 0.0
    for p in params:
        ga = grads[p.tape_id].reshape(-1)
        real = p.data
        p.data = real.astype(np.complex128)
        flat = p.data.reshape(-1)
        try:
            for i in range(flat.size):
                flat[i] += 1j * h
                out = f().data
                flat[i] = real.flat[i]
                if not np.isfinite(out).all():
                    raise FloatingPointError(f"non-finite loss while probing {p.name or p}[{i}]")
                numeric = float(out.imag) / h
                err = abs(ga[i] - numeric) / (abs(ga[i]) + abs(numeric) + 1e-12)
                worst = max(worst, err)
        finally:
            p.data = real
    return worst
