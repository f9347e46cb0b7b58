"""Neural building blocks: convolution, projections, normalization,
attention, dropout, and fan-scaled parameter initialization.

Fused ops (conv2d, pooling, layer_norm, softmax, dropout) register their
own backward rules on the tape through tensor.apply_op; everything else is
composed from tensor primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ConfigError, InvalidRate, ShapeMismatch
from .seeding import derive_seed
from .tensor import Tensor, apply_op


@dataclass
class Conv2dParams:
    kernel: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor    # (out_ch,)
    stride: int = 1
    padding: int = 0


@dataclass
class PointwiseProj:
    weight: Tensor  # (d, C)
    bias: Tensor    # (d,)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5


@dataclass
class AttnHead:
    wq: Tensor  # (d, d_h)
    wk: Tensor
    wv: Tensor


@dataclass
class MhsaParams:
    heads: list[AttnHead] = field(default_factory=list)
    out_proj: Tensor = None  # (d, d)
    dropout: float = 0.0


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """2-D convolution (cross-correlation) over (C,H,W) or batched (N,C,H,W).

    H_out = floor((H + 2*pad - kh)/stride) + 1, likewise for W.
    """
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise ShapeMismatch(f"conv2d expects (C,H,W) or (N,C,H,W), got {x.shape}")
    out_ch, in_ch, kh, kw = p.kernel.shape
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if c != in_ch:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {in_ch}")
    s, pad = int(p.stride), int(p.padding)
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    h_out = (hp - kh) // s + 1
    w_out = (wp - kw) // s + 1

    xpad = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    # im2col: (n, h_out, w_out, c, kh, kw) -> (n*h_out*w_out, c*kh*kw)
    win = sliding_window_view(xpad, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, c * kh * kw)
    kmat = p.kernel.data.reshape(out_ch, -1)
    out = (cols @ kmat.T).reshape(n, h_out, w_out, out_ch).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out) + p.bias.data[None, :, None, None]
    if not batched:
        out = out[0]

    def bwd(g):
        gm = (g if batched else g[None]).transpose(0, 2, 3, 1).reshape(-1, out_ch)
        gbias = gm.sum(axis=0)
        gkernel = (gm.T @ cols).reshape(p.kernel.shape)
        gcols = gm @ kmat  # (n*h_out*w_out, c*kh*kw)
        gcols = gcols.reshape(n, h_out, w_out, c, kh, kw)
        gxpad = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxpad[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxpad[:, :, pad:pad + h, pad:pad + w] if pad else gxpad
        return (gx if batched else gx[0]), gkernel, gbias

    return apply_op("conv2d", out, (x, p.kernel, p.bias), bwd)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k mean pooling over the trailing spatial axes."""
    if k == 1:
        return x
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if h % k or w % k:
        raise ShapeMismatch(f"spatial dims {h}x{w} not divisible by pool size {k}")
    out = xd.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    if not batched:
        out = out[0]

    def bwd(g):
        gd = g if batched else g[None]
        gx = np.repeat(np.repeat(gd, k, axis=2), k, axis=3) * (1.0 / (k * k))
        return (gx if batched else gx[0],)

    return apply_op("avg_pool2d", out, (x,), bwd)


# ---------------------------------------------------------------------------
# projections and pooling


def pointwise_project(fm: Tensor, p: PointwiseProj) -> Tensor:
    """Per-site channel projection: out[:,h,w] = weight @ in[:,h,w] + bias.

    Accepts (C,H,W) or batched (N,C,H,W); returns the same rank with C
    replaced by the projection's output dim.
    """
    batched = fm.ndim == 4
    if not batched and fm.ndim != 3:
        raise ShapeMismatch(f"pointwise_project expects rank 3 or 4, got {fm.shape}")
    d, c = p.weight.shape
    if fm.shape[-3] != c:
        raise ShapeMismatch(f"feature map has {fm.shape[-3]} channels, weight expects {c}")
    sites = fm.shape[-2] * fm.shape[-1]
    lead = fm.shape[0] if batched else 1
    flat = T.reshape(fm, (lead, c, sites)) if batched else T.reshape(fm, (1, c, sites))
    cols = T.reshape(T.transpose(flat, (0, 2, 1)), (lead * sites, c))
    projected = T.add(T.matmul(cols, T.transpose(p.weight)), p.bias)
    grid = T.transpose(T.reshape(projected, (lead, sites, d)), (0, 2, 1))
    shape = (lead, d, fm.shape[-2], fm.shape[-1]) if batched else (d, fm.shape[-2], fm.shape[-1])
    return T.reshape(grid, shape)


def global_avg_pool(fm: Tensor) -> Tensor:
    """Spatial mean per channel: (C,H,W) -> (C,) or (N,C,H,W) -> (N,C)."""
    batched = fm.ndim == 4
    if not batched and fm.ndim != 3:
        raise ShapeMismatch(f"global_avg_pool expects rank 3 or 4, got {fm.shape}")
    xd = fm.data
    sites = xd.shape[-1] * xd.shape[-2]
    out = xd.reshape(*xd.shape[:-2], sites).mean(axis=-1)
    shape = fm.shape

    def bwd(g):
        return (np.broadcast_to((g * (1.0 / sites))[..., None, None], shape),)

    return apply_op("global_avg_pool", out, (fm,), bwd)


# ---------------------------------------------------------------------------
# normalization, softmax, dropout


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Row-wise normalization to zero mean and unit (biased) variance,
    then scale by gamma and shift by beta. eps sits inside the sqrt."""
    if x.ndim != 2:
        raise ShapeMismatch(f"layer_norm expects (n,d), got {x.shape}")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = (xd - mu) * inv
    out = p.gamma.data * xhat + p.beta.data

    def bwd(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * p.gamma.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, dgamma, dbeta

    return apply_op("layer_norm", out, (x, p.gamma, p.beta), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax with per-row max subtraction for stability."""
    if x.ndim != 2:
        raise ShapeMismatch(f"softmax_rows expects (n,m), got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return apply_op("softmax_rows", out, (x,), bwd)


def dropout(x: Tensor, rate: float, mode: str, seed: int = 0) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors by
    1/(1-rate). Eval mode is the identity. Deterministic per seed."""
    if not (0.0 <= rate < 1.0):
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown dropout mode '{mode}'")
    if mode == "eval" or rate == 0.0:
        return x
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = rng.random(x.shape) >= rate
    factor = keep * (1.0 / (1.0 - rate))
    return apply_op("dropout", x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# attention


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, drop_rate: float,
                         mode: str, seed: int) -> tuple[Tensor, Tensor]:
    """Single-head attention: softmax(q k^T / sqrt(d_h)) v.

    Returns (output, attention weights before dropout).
    """
    d_h = q.shape[1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d_h))
    attn = softmax_rows(scores)
    attn_used = dropout(attn, drop_rate, mode, seed) if drop_rate else attn
    return T.matmul(attn_used, v), attn


def mhsa(x: Tensor, p: MhsaParams, mode: str = "eval", seed: int = 0) -> Tensor:
    """Multi-head self-attention with per-head projections, concatenation,
    and an output projection. Dropout is applied to attention weights."""
    if x.ndim != 2:
        raise ShapeMismatch(f"mhsa expects (n,d), got {x.shape}")
    d = x.shape[1]
    n_heads = len(p.heads)
    if n_heads == 0 or d % n_heads != 0:
        raise ConfigError(f"token dim {d} not divisible by {n_heads} heads")
    outs = []
    for i, head in enumerate(p.heads):
        q = T.matmul(x, head.wq)
        k = T.matmul(x, head.wk)
        v = T.matmul(x, head.wv)
        out, _ = scaled_dot_attention(q, k, v, p.dropout, mode,
                                      derive_seed(seed, "mhsa_head", i))
        outs.append(out)
    cat = outs[0] if n_heads == 1 else T.concat(outs, axis=1)
    return T.matmul(cat, p.out_proj)


# ---------------------------------------------------------------------------
# initialization: fan-scaled uniform, bounds +-sqrt(6/(fan_in+fan_out));
# biases zero, layer-norm gamma one / beta zero.


def fan_uniform(shape, fan_in: int, fan_out: int, seed: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return T.uniform(shape, -bound, bound, seed, requires_grad=True)


def init_linear(d_in: int, d_out: int, seed: int) -> tuple[Tensor, Tensor]:
    """Weight (d_out, d_in) and zero bias (d_out,)."""
    w = fan_uniform((d_out, d_in), d_in, d_out, seed)
    b = T.zeros((d_out,), requires_grad=True)
    return w, b


def init_conv2d(out_ch: int, in_ch: int, kh: int, kw: int, stride: int,
                padding: int, seed: int) -> Conv2dParams:
    fan_in = in_ch * kh * kw
    fan_out = out_ch * kh * kw
    kernel = fan_uniform((out_ch, in_ch, kh, kw), fan_in, fan_out, seed)
    bias = T.zeros((out_ch,), requires_grad=True)
    return Conv2dParams(kernel=kernel, bias=bias, stride=stride, padding=padding)


def init_pointwise(d: int, c: int, seed: int) -> PointwiseProj:
    weight = fan_uniform((d, c), c, d, seed)
    bias = T.zeros((d,), requires_grad=True)
    return PointwiseProj(weight=weight, bias=bias)


def init_layer_norm(d: int, eps: float = 1e-5) -> LayerNormParams:
    return LayerNormParams(gamma=T.ones((d,), requires_grad=True),
                           beta=T.zeros((d,), requires_grad=True), eps=eps)


def init_mhsa(d: int, n_heads: int, drop_rate: float, seed: int) -> MhsaParams:
    if d % n_heads != 0:
        raise ConfigError(f"token dim {d} not divisible by {n_heads} heads")
    d_h = d // n_heads
    heads = []
    for i in range(n_heads):
        heads.append(AttnHead(
            wq=fan_uniform((d, d_h), d, d_h, derive_seed(seed, "wq", i)),
            wk=fan_uniform((d, d_h), d, d_h, derive_seed(seed, "wk", i)),
            wv=fan_uniform((d, d_h), d, d_h, derive_seed(seed, "wv", i)),
        ))
    out_proj = fan_uniform((d, d), d, d, derive_seed(seed, "out"))
    return MhsaParams(heads=heads, out_proj=out_proj, dropout=drop_rate)
