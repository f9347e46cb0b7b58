"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every forward operation that touches a gradient-requiring tensor appends an
op record to the active tape. backward() replays the tape in reverse and
accumulates gradients into the tape's leaf set. The tape is meant to live
for one forward/backward cycle (one training batch) and be discarded via
reset_graph() after the optimizer step.

Gradient arrays are combined out-of-place during the backward walk, so op
backward closures are free to return views of saved arrays.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DomainError,
    FormatError,
    InvalidShape,
    NotScalar,
    NumericalFailure,
    ShapeMismatch,
)

DEFAULT_DTYPE = np.float64

_next_node_id = 0
_grad_enabled = True
_debug_nan_checks = False


def _new_node_id() -> int:
    global _next_node_id
    _next_node_id += 1
    return _next_node_id


class Tensor:
    """A dense n-dimensional float array, optionally on the gradient tape.

    data is a contiguous numpy array (float64 by default, float32 mode
    available). node_id is assigned lazily the first time the tensor joins
    a recorded operation and stays stable for the tensor's lifetime, which
    lets optimizer state survive tape resets.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions are the primary API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class GradGraph:
    """Tape of op records in execution order plus the leaf (parameter) set."""

    def __init__(self):
        self.records: list[_OpRecord] = []
        self.leaves: dict[int, Tensor] = {}
        self.produced: set[int] = set()
        self.grad_accum: dict[int, np.ndarray] = {}


class _OpRecord:
    __slots__ = ("op", "out_id", "input_ids", "backward_fn")

    def __init__(self, op, out_id, input_ids, backward_fn):
        self.op = op
        self.out_id = out_id
        self.input_ids = input_ids
        self.backward_fn = backward_fn


class GradientMap(dict):
    """Mapping node_id -> gradient Tensor with the same shape as its leaf."""

    def of(self, param: Tensor) -> Tensor:
        if param.node_id is None or param.node_id not in self:
            return Tensor(np.zeros_like(param.data))
        return self[param.node_id]


_graph = GradGraph()


def active_graph() -> GradGraph:
    return _graph


def reset_graph() -> None:
    """Discard the current tape; call between optimizer steps."""
    global _graph
    _graph = GradGraph()


@contextmanager
def no_grad():
    """Disable tape recording inside the context (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def set_debug_nan_checks(enabled: bool) -> None:
    """Check every op output for NaN/Inf (slow; for debugging)."""
    global _debug_nan_checks
    _debug_nan_checks = bool(enabled)


def _register_input(t: Tensor) -> Optional[int]:
    if not t.requires_grad:
        return None
    if t.node_id is None:
        t.node_id = _new_node_id()
    g = _graph
    if t.node_id not in g.produced and t.node_id not in g.leaves:
        g.leaves[t.node_id] = t
    return t.node_id


def apply_op(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
             backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap a computed array as a Tensor and record it on the tape.

    backward_fn(gout) must return one gradient array (or None) per input,
    in order. Used by this module's ops and by fused ops in nn.
    """
    if _debug_nan_checks and not np.all(np.isfinite(out_data)):
        raise NumericalFailure(f"non-finite output from op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.node_id = None
    if _grad_enabled and any(t.requires_grad for t in inputs):
        input_ids = tuple(_register_input(t) for t in inputs)
        out.requires_grad = True
        out.node_id = _new_node_id()
        g = _graph
        g.produced.add(out.node_id)
        g.records.append(_OpRecord(op, out.node_id, input_ids, backward_fn))
    return out


def backward(loss: Tensor) -> GradientMap:
    """Accumulate d(loss)/d(leaf) for every leaf of the active tape.

    Gradients add into the tape's accumulators, so calling backward twice
    without reset_graph() doubles them. Leaves not reachable from the loss
    get zero gradients.
    """
    if loss.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    g = _graph
    pending: dict[int, np.ndarray] = {}
    if loss.node_id is not None:
        pending[loss.node_id] = np.ones_like(loss.data)
    for rec in reversed(g.records):
        gout = pending.pop(rec.out_id, None)
        if gout is None:
            continue
        grads_in = rec.backward_fn(gout)
        for nid, gin in zip(rec.input_ids, grads_in):
            if nid is None or gin is None:
                continue
            prev = pending.get(nid)
            pending[nid] = gin if prev is None else prev + gin
    result = GradientMap()
    for nid, leaf in g.leaves.items():
        contrib = pending.get(nid)
        acc = g.grad_accum.get(nid)
        if acc is None:
            acc = np.zeros_like(leaf.data)
            g.grad_accum[nid] = acc
        if contrib is not None:
            acc += contrib
        result[nid] = Tensor(acc.copy(), dtype=leaf.data.dtype)
    return result


# ---------------------------------------------------------------------------
# construction


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise InvalidShape("shape must be nonempty")
    if any(s < 1 for s in shape):
        raise InvalidShape(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad, dtype)


def ones(shape, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(np.ones(_check_shape(shape)), requires_grad, dtype)


def full(shape, value: float, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(value)), requires_grad, dtype)


def uniform(shape, lo: float, hi: float, seed: int, requires_grad=False, dtype=None) -> Tensor:
    shape = _check_shape(shape)
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad, dtype)


def gaussian(shape, mu: float, sd: float, seed: int, requires_grad=False, dtype=None) -> Tensor:
    shape = _check_shape(shape)
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor(mu + sd * rng.standard_normal(size=shape), requires_grad, dtype)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return apply_op("matmul", ad @ bd, (a, b), bwd)


def _binary_plan(a: Tensor, b: Tensor):
    """Classify a binary op: 'same' shapes, or trailing vector broadcast.

    Broadcasting is deliberately restricted: a 1-D vector may broadcast
    against the last axis of a higher-rank operand, nothing else.
    Returns (mode, vec_side) where vec_side is 0/1 for the vector operand.
    """
    if a.shape == b.shape:
        return "same", None
    if b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:
        return "broadcast", 1
    if a.ndim == 1 and b.ndim >= 2 and b.shape[-1] == a.shape[0]:
        return "broadcast", 0
    raise ShapeMismatch(f"incompatible shapes for elementwise op: {a.shape} vs {b.shape}")


def _reduce_to_vector(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=tuple(range(g.ndim - 1)))


def add(a: Tensor, b: Tensor) -> Tensor:
    mode, vec = _binary_plan(a, b)
    if mode == "same":
        bwd = lambda g: (g, g)
    elif vec == 1:
        bwd = lambda g: (g, _reduce_to_vector(g))
    else:
        bwd = lambda g: (_reduce_to_vector(g), g)
    return apply_op("add", a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode, vec = _binary_plan(a, b)
    if mode == "same":
        bwd = lambda g: (g, -g)
    elif vec == 1:
        bwd = lambda g: (g, -_reduce_to_vector(g))
    else:
        bwd = lambda g: (_reduce_to_vector(g), -g)
    return apply_op("sub", a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode, vec = _binary_plan(a, b)
    ad, bd = a.data, b.data
    if mode == "same":
        bwd = lambda g: (g * bd, g * ad)
    elif vec == 1:
        bwd = lambda g: (g * bd, _reduce_to_vector(g * ad))
    else:
        bwd = lambda g: (_reduce_to_vector(g * bd), g * ad)
    return apply_op("mul", ad * bd, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op("scale", a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return apply_op("sigmoid", out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return apply_op("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log of non-positive value")
    return apply_op("log", np.log(x), (a,), lambda g: (g / x,))


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0
    return apply_op("relu", np.where(mask, x, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed as max(x,0) + log1p(e^-|x|) to avoid overflow."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return apply_op("softplus", out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.data.dtype

    def bwd(g):
        return (np.full(shape, g.reshape(-1)[0], dtype=dt),)

    return apply_op("sum_all", np.array([a.data.sum()], dtype=dt), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = _check_shape(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    return apply_op("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        if a.ndim != 2:
            raise ShapeMismatch("default transpose expects a 2-D tensor")
        axes = (1, 0)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return apply_op("transpose", out, (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return apply_op("concat", out, tensors, bwd)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shaped tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("stack of zero tensors")
    out = np.stack([t.data for t in tensors], axis=0)

    def bwd(g):
        return tuple(g[i] for i in range(len(tensors)))

    return apply_op("stack", out, tensors, bwd)


def mean_axis0(a: Tensor) -> Tensor:
    n = a.shape[0]
    shape = a.shape

    def bwd(g):
        return (np.broadcast_to(g * (1.0 / n), shape),)

    return apply_op("mean_axis0", a.data.mean(axis=0), (a,), bwd)


def repeat_rows(v: Tensor, n: int) -> Tensor:
    """Tile a vector into n identical rows."""
    if v.ndim != 1:
        raise ShapeMismatch(f"repeat_rows expects a vector, got {v.shape}")
    out = np.broadcast_to(v.data, (n, v.shape[0])).copy()
    return apply_op("repeat_rows", out, (v,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(builder: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Compare tape gradients against central finite differences.

    builder must rebuild the scalar loss from the current parameter values
    on every call. Returns the max over all parameter entries of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    params = list(params)
    reset_graph()
    loss = builder()
    if not np.all(np.isfinite(loss.data)):
        raise NumericalFailure("loss is non-finite at the evaluation point")
    gmap = backward(loss)
    analytic = [gmap.of(p).data.reshape(-1).copy() for p in params]
    reset_graph()

    max_err = 0.0
    with no_grad():
        for p, ana in zip(params, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                lp = builder().item()
                flat[i] = orig - eps
                lm = builder().item()
                flat[i] = orig
                if not (np.isfinite(lp) and np.isfinite(lm)):
                    raise NumericalFailure("loss is non-finite at a perturbed point")
                num = (lp - lm) / (2.0 * eps)
                err = abs(ana[i] - num) / max(1.0, abs(ana[i]), abs(num))
                if err > max_err:
                    max_err = err
    return max_err


# ---------------------------------------------------------------------------
# serialization: magic, version u16, dtype u8 (0=f32, 1=f64), rank u8,
# dims as u64 little-endian, then raw little-endian values.

TENSOR_MAGIC = b"CASTTNSR"
TENSOR_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_to_bytes(t: Tensor) -> bytes:
    tag = _DTYPE_TAGS.get(t.data.dtype)
    if tag is None:
        raise FormatError(f"unsupported dtype {t.data.dtype}")
    head = TENSOR_MAGIC + struct.pack("<HBB", TENSOR_VERSION, tag, t.ndim)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t.data, dtype=_TAG_DTYPES[tag].newbyteorder("<")).tobytes()
    return head + dims + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one serialized tensor; returns (tensor, offset past it)."""
    need = offset + len(TENSOR_MAGIC) + 4
    if len(buf) < need:
        raise FormatError("truncated tensor header")
    if buf[offset:offset + 8] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    offset += 8
    version, tag, rank = struct.unpack_from("<HBB", buf, offset)
    offset += 4
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if tag not in _TAG_DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    if rank < 1:
        raise FormatError("tensor rank must be >= 1")
    if len(buf) < offset + 8 * rank:
        raise FormatError("truncated tensor dims")
    dims = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    if any(d < 1 for d in dims):
        raise FormatError(f"invalid serialized dims {dims}")
    dt = _TAG_DTYPES[tag]
    count = int(np.prod(dims))
    nbytes = count * dt.itemsize
    if len(buf) < offset + nbytes:
        raise FormatError("truncated tensor payload")
    data = np.frombuffer(buf, dtype=dt, count=count, offset=offset).reshape(dims)
    offset += nbytes
    native = np.dtype(np.float32) if tag == 0 else np.dtype(np.float64)
    return Tensor(data, dtype=native), offset


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        buf = f.read()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor")
    return t
