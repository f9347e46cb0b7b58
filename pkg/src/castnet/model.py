"""The cross-attentive spatio-temporal fusion architecture.

Per clip: a small convolutional backbone extracts per-frame feature maps;
1x1 projections turn them into spatial tokens (one per grid cell) and, via
global average pooling, temporal tokens (one per frame). Temporal tokens
plus learnable positional embeddings go through a pre-norm transformer
encoder. Cross-attention then lets each encoded temporal token attend over
the time-averaged spatial tokens (queries from time, keys/values from
space), followed by residual add + layer norm, mean pooling, and a linear
classifier. Every ablation variant is a runtime configuration choice.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional

from . import nn
from . import tensor as T
from .errors import CheckpointError, ConfigError, FormatError
from .nn import (
    AttnHead,
    Conv2dParams,
    LayerNormParams,
    MhsaParams,
    PointwiseProj,
)
from .preprocess import FrameClip
from .seeding import derive_seed
from .tensor import Tensor, tensor_from_bytes, tensor_to_bytes

VARIANTS = ("full", "no_cross_attention", "decoupled_self_attention",
            "reversed_qkv", "multi_scale", "no_projection")
EVAL_LOGIT_MODES = ("clip", "frame_mean")

# variants whose fusion stage is the cross-attention block (and define A)
_CROSS_ATTN_VARIANTS = ("full", "reversed_qkv", "multi_scale", "no_projection")


@dataclass
class CastConfig:
    backbone_channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    d: int = 64
    encoder_layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    fusion_heads: int = 4
    dropout: float = 0.3
    clip_len: int = 16
    variant: str = "full"
    eval_logit_mode: str = "frame_mean"

    @property
    def backbone_out_channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def downsample_factor(self) -> int:
        return self.stride ** len(self.backbone_channels)

    def validate(self) -> None:
        if not self.backbone_channels or any(c < 1 for c in self.backbone_channels):
            raise ConfigError(f"bad backbone channels {self.backbone_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("backbone kernel must be a positive odd number")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.d < 1 or self.encoder_layers < 0 or self.clip_len < 1:
            raise ConfigError("d, encoder_layers, clip_len must be positive")
        if self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be >= 1")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.fusion_heads < 1 or self.d % self.fusion_heads:
            raise ConfigError(f"d={self.d} not divisible by fusion_heads={self.fusion_heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.eval_logit_mode not in EVAL_LOGIT_MODES:
            raise ConfigError(f"unknown eval_logit_mode {self.eval_logit_mode!r}")
        if self.variant == "no_projection" and self.d != self.backbone_out_channels:
            raise ConfigError(
                f"no_projection requires d == backbone output channels "
                f"({self.d} != {self.backbone_out_channels})")

    def to_text(self) -> str:
        """Canonical key=value block, keys sorted."""
        items = {
            "backbone_channels": ",".join(str(c) for c in self.backbone_channels),
            "clip_len": str(self.clip_len),
            "d": str(self.d),
            "dropout": repr(self.dropout),
            "encoder_layers": str(self.encoder_layers),
            "eval_logit_mode": self.eval_logit_mode,
            "ffn_dim": str(self.ffn_dim),
            "fusion_heads": str(self.fusion_heads),
            "heads": str(self.heads),
            "kernel": str(self.kernel),
            "stride": str(self.stride),
            "variant": self.variant,
        }
        return "".join(f"{k}={v}\n" for k, v in sorted(items.items()))

    @classmethod
    def from_text(cls, text: str) -> "CastConfig":
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line {line!r}")
            key, value = line.split("=", 1)
            if key == "backbone_channels":
                kwargs[key] = tuple(int(v) for v in value.split(","))
            elif key in ("clip_len", "d", "encoder_layers", "ffn_dim",
                         "fusion_heads", "heads", "kernel", "stride"):
                kwargs[key] = int(value)
            elif key == "dropout":
                kwargs[key] = float(value)
            elif key in ("variant", "eval_logit_mode"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class EncoderLayerParams:
    ln1: LayerNormParams
    mhsa: MhsaParams
    ln2: LayerNormParams
    ffn_w1: Tensor  # (ffn_dim, d)
    ffn_b1: Tensor
    ffn_w2: Tensor  # (d, ffn_dim)
    ffn_b2: Tensor


@dataclass
class FusionParams:
    heads: list[AttnHead]
    out_proj: Tensor  # (d, d)
    out_bias: Tensor  # (d,)
    ln: LayerNormParams


@dataclass
class DecoupledParams:
    temporal: MhsaParams
    spatial: MhsaParams
    mix_w: Tensor  # (d, 2d)
    mix_b: Tensor  # (d,)


@dataclass
class CastParams:
    backbone: list[Conv2dParams]
    pos_embed: Tensor
    encoder: list[EncoderLayerParams]
    classifier_w: Tensor  # (1, d)
    classifier_b: Tensor  # (1,)
    spatial_proj: Optional[PointwiseProj] = None
    temporal_proj: Optional[PointwiseProj] = None
    fusion: Optional[FusionParams] = None
    decoupled: Optional[DecoupledParams] = None
    multi_scale_proj: Optional[PointwiseProj] = None

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.backbone):
            out[f"backbone.{i}.kernel"] = conv.kernel
            out[f"backbone.{i}.bias"] = conv.bias
        if self.spatial_proj is not None:
            out["spatial_proj.weight"] = self.spatial_proj.weight
            out["spatial_proj.bias"] = self.spatial_proj.bias
        if self.temporal_proj is not None:
            out["temporal_proj.weight"] = self.temporal_proj.weight
            out["temporal_proj.bias"] = self.temporal_proj.bias
        out["pos_embed"] = self.pos_embed
        for i, layer in enumerate(self.encoder):
            pre = f"encoder.{i}"
            out[f"{pre}.ln1.gamma"] = layer.ln1.gamma
            out[f"{pre}.ln1.beta"] = layer.ln1.beta
            for h, head in enumerate(layer.mhsa.heads):
                out[f"{pre}.mhsa.{h}.wq"] = head.wq
                out[f"{pre}.mhsa.{h}.wk"] = head.wk
                out[f"{pre}.mhsa.{h}.wv"] = head.wv
            out[f"{pre}.mhsa.out_proj"] = layer.mhsa.out_proj
            out[f"{pre}.ln2.gamma"] = layer.ln2.gamma
            out[f"{pre}.ln2.beta"] = layer.ln2.beta
            out[f"{pre}.ffn.w1"] = layer.ffn_w1
            out[f"{pre}.ffn.b1"] = layer.ffn_b1
            out[f"{pre}.ffn.w2"] = layer.ffn_w2
            out[f"{pre}.ffn.b2"] = layer.ffn_b2
        if self.fusion is not None:
            for h, head in enumerate(self.fusion.heads):
                out[f"fusion.{h}.wq"] = head.wq
                out[f"fusion.{h}.wk"] = head.wk
                out[f"fusion.{h}.wv"] = head.wv
            out["fusion.out_proj"] = self.fusion.out_proj
            out["fusion.out_bias"] = self.fusion.out_bias
            out["fusion.ln.gamma"] = self.fusion.ln.gamma
            out["fusion.ln.beta"] = self.fusion.ln.beta
        if self.decoupled is not None:
            for name, attn in (("temporal", self.decoupled.temporal),
                               ("spatial", self.decoupled.spatial)):
                for h, head in enumerate(attn.heads):
                    out[f"decoupled.{name}.{h}.wq"] = head.wq
                    out[f"decoupled.{name}.{h}.wk"] = head.wk
                    out[f"decoupled.{name}.{h}.wv"] = head.wv
                out[f"decoupled.{name}.out_proj"] = attn.out_proj
            out["decoupled.mix_w"] = self.decoupled.mix_w
            out["decoupled.mix_b"] = self.decoupled.mix_b
        if self.multi_scale_proj is not None:
            out["multi_scale_proj.weight"] = self.multi_scale_proj.weight
            out["multi_scale_proj.bias"] = self.multi_scale_proj.bias
        out["classifier.weight"] = self.classifier_w
        out["classifier.bias"] = self.classifier_b
        return out

    def all_tensors(self) -> list[Tensor]:
        return list(self.named_parameters().values())


@dataclass
class ModelOutput:
    clip_logit: Tensor         # (1,)
    frame_logits: Tensor       # (clip_len,)
    fused_tokens: Tensor       # (clip_len, d)
    pooled: Tensor             # (d,)
    attention: Optional[Tensor]  # (clip_len, H'*W'), head-averaged; None if undefined


def init_cast_params(cfg: CastConfig, seed: int) -> CastParams:
    cfg.validate()
    backbone = []
    in_ch = 3
    for i, ch in enumerate(cfg.backbone_channels):
        backbone.append(nn.init_conv2d(ch, in_ch, cfg.kernel, cfg.kernel,
                                       stride=cfg.stride, padding=cfg.kernel // 2,
                                       seed=derive_seed(seed, "backbone", i)))
        in_ch = ch
    c_out = cfg.backbone_out_channels
    d = cfg.d

    spatial_proj = temporal_proj = None
    if cfg.variant != "no_projection":
        spatial_proj = nn.init_pointwise(d, c_out, derive_seed(seed, "spatial_proj"))
        temporal_proj = nn.init_pointwise(d, c_out, derive_seed(seed, "temporal_proj"))

    pos_embed = T.gaussian((cfg.clip_len, d), 0.0, 0.02,
                           derive_seed(seed, "pos_embed"), requires_grad=True)

    encoder = []
    for i in range(cfg.encoder_layers):
        w1, b1 = nn.init_linear(d, cfg.ffn_dim, derive_seed(seed, "ffn1", i))
        w2, b2 = nn.init_linear(cfg.ffn_dim, d, derive_seed(seed, "ffn2", i))
        encoder.append(EncoderLayerParams(
            ln1=nn.init_layer_norm(d),
            mhsa=nn.init_mhsa(d, cfg.heads, cfg.dropout, derive_seed(seed, "mhsa", i)),
            ln2=nn.init_layer_norm(d),
            ffn_w1=w1, ffn_b1=b1, ffn_w2=w2, ffn_b2=b2))

    fusion = decoupled = multi_scale_proj = None
    if cfg.variant in _CROSS_ATTN_VARIANTS:
        attn = nn.init_mhsa(d, cfg.fusion_heads, cfg.dropout, derive_seed(seed, "fusion"))
        fusion = FusionParams(heads=attn.heads, out_proj=attn.out_proj,
                              out_bias=T.zeros((d,), requires_grad=True),
                              ln=nn.init_layer_norm(d))
    elif cfg.variant == "decoupled_self_attention":
        mix_w, mix_b = nn.init_linear(2 * d, d, derive_seed(seed, "decoupled_mix"))
        decoupled = DecoupledParams(
            temporal=nn.init_mhsa(d, cfg.fusion_heads, cfg.dropout,
                                  derive_seed(seed, "decoupled_t")),
            spatial=nn.init_mhsa(d, cfg.fusion_heads, cfg.dropout,
                                 derive_seed(seed, "decoupled_s")),
            mix_w=mix_w, mix_b=mix_b)
    if cfg.variant == "multi_scale":
        total_c = sum(cfg.backbone_channels)
        multi_scale_proj = nn.init_pointwise(d, total_c, derive_seed(seed, "ms_proj"))

    cls_w, cls_b = nn.init_linear(d, 1, derive_seed(seed, "classifier"))
    return CastParams(backbone=backbone, pos_embed=pos_embed, encoder=encoder,
                      classifier_w=cls_w, classifier_b=cls_b,
                      spatial_proj=spatial_proj, temporal_proj=temporal_proj,
                      fusion=fusion, decoupled=decoupled,
                      multi_scale_proj=multi_scale_proj)


# ---------------------------------------------------------------------------
# forward pieces


def _linear_rows(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """(n, c) @ (d, c)^T + (d,) -> (n, d)."""
    return T.add(T.matmul(x, T.transpose(weight)), bias)


def backbone_stages(frames: Tensor, backbone: list[Conv2dParams]) -> list[Tensor]:
    """Per-frame conv stages (conv then rectifier); one output per stage."""
    outs = []
    x = frames
    for p in backbone:
        x = T.relu(nn.conv2d(x, p))
        outs.append(x)
    return outs


def backbone_forward(frames: Tensor, backbone: list[Conv2dParams],
                     cfg: CastConfig) -> Tensor:
    f = cfg.downsample_factor
    h, w = frames.shape[2], frames.shape[3]
    if h % f or w % f:
        raise ConfigError(f"frame dims {h}x{w} not divisible by backbone factor {f}")
    return backbone_stages(frames, backbone)[-1]


def spatial_tokens(fmaps: Tensor, proj: Optional[PointwiseProj]) -> Tensor:
    """(F, C, H', W') -> (F, H'*W', d); row-major flatten of the grid.
    Without a projection the raw C-dim channel fibers are the tokens."""
    n_frames, c, hp, wp = fmaps.shape
    sites = hp * wp
    x = T.transpose(T.reshape(fmaps, (n_frames, c, sites)), (0, 2, 1))
    if proj is None:
        return x
    d = proj.weight.shape[0]
    flat = _linear_rows(T.reshape(x, (n_frames * sites, c)), proj.weight, proj.bias)
    return T.reshape(flat, (n_frames, sites, d))


def temporal_tokens(fmaps: Tensor, proj: Optional[PointwiseProj]) -> Tensor:
    """(F, C, H', W') -> (F, d): global average pool then projection."""
    pooled = nn.global_avg_pool(fmaps)
    if proj is None:
        return pooled
    return _linear_rows(pooled, proj.weight, proj.bias)


def encode_temporal(t_seq: Tensor, pos_embed: Tensor,
                    layers: list[EncoderLayerParams], drop_rate: float,
                    mode: str, seed: int) -> Tensor:
    """Add positional embeddings, then pre-norm transformer encoder layers."""
    if t_seq.shape != pos_embed.shape:
        raise ConfigError(f"positional embeddings {pos_embed.shape} do not match "
                          f"token sequence {t_seq.shape}")
    x = T.add(t_seq, pos_embed)
    for i, layer in enumerate(layers):
        attn = nn.mhsa(nn.layer_norm(x, layer.ln1), layer.mhsa, mode,
                       derive_seed(seed, "enc_attn", i))
        x = T.add(x, attn)
        h = nn.layer_norm(x, layer.ln2)
        h = T.relu(_linear_rows(h, layer.ffn_w1, layer.ffn_b1))
        h = nn.dropout(h, drop_rate, mode, derive_seed(seed, "enc_ffn", i))
        h = _linear_rows(h, layer.ffn_w2, layer.ffn_b2)
        x = T.add(x, h)
    return x


def spatial_mean(s: Tensor) -> Tensor:
    """Mean of the spatial tokens over the frame axis: (F,HW,d) -> (HW,d)."""
    return T.mean_axis0(s)


def cross_attention_core(z: Tensor, s_mean: Tensor, fusion: FusionParams,
                         drop_rate: float, mode: str, seed: int) -> tuple[Tensor, Tensor]:
    """Multi-head cross-attention before the residual: queries from z,
    keys/values from s_mean. Returns (z_hat, head-averaged attention)."""
    outs, attns = [], []
    for i, head in enumerate(fusion.heads):
        q = T.matmul(z, head.wq)
        k = T.matmul(s_mean, head.wk)
        v = T.matmul(s_mean, head.wv)
        out, attn = nn.scaled_dot_attention(q, k, v, drop_rate, mode,
                                            derive_seed(seed, "fusion_head", i))
        outs.append(out)
        attns.append(attn)
    cat = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
    z_hat = T.add(T.matmul(cat, fusion.out_proj), fusion.out_bias)
    avg = attns[0]
    if len(attns) > 1:
        for a in attns[1:]:
            avg = T.add(avg, a)
        avg = T.scale(avg, 1.0 / len(attns))
    return z_hat, avg


def cross_attention_fuse(z: Tensor, s_mean: Tensor, fusion: FusionParams,
                         variant: str, drop_rate: float, mode: str,
                         seed: int) -> tuple[Tensor, Optional[Tensor]]:
    """Fusion stage for the cross-attention variants.

    full / multi_scale / no_projection: temporal queries over spatial
    keys/values, dropout, residual add, layer norm; A is the head-averaged
    weight matrix.

    reversed_qkv: spatial tokens are queries, temporal tokens keys/values.
    The spatially-indexed output rows are redistributed to temporal rows
    through the transposed head-averaged attention before the residual; the
    reported A is that transpose, row-normalized so each temporal row is
    again a distribution over spatial sites.
    """
    if variant == "reversed_qkv":
        z_hat_s, attn_avg = cross_attention_core(s_mean, z, fusion, drop_rate,
                                                 mode, seed)
        z_hat_s = nn.dropout(z_hat_s, drop_rate, mode, derive_seed(seed, "fusion_out"))
        z_hat = T.matmul(T.transpose(attn_avg), z_hat_s)
        at = attn_avg.data.T
        report = Tensor(at / at.sum(axis=1, keepdims=True))
    else:
        z_hat, attn_avg = cross_attention_core(z, s_mean, fusion, drop_rate,
                                               mode, seed)
        z_hat = nn.dropout(z_hat, drop_rate, mode, derive_seed(seed, "fusion_out"))
        report = Tensor(attn_avg.data.copy())
    fused = nn.layer_norm(T.add(z, z_hat), fusion.ln)
    return fused, report


def decoupled_fuse(z: Tensor, s_mean: Tensor, p: DecoupledParams,
                   mode: str, seed: int) -> Tensor:
    """Ablation: independent self-attention per stream, spatial side mean
    pooled and concatenated to every temporal row, linear back to d."""
    za = nn.mhsa(z, p.temporal, mode, derive_seed(seed, "dec_t"))
    sa = nn.mhsa(s_mean, p.spatial, mode, derive_seed(seed, "dec_s"))
    s_pool = T.mean_axis0(sa)
    cat = T.concat([za, T.repeat_rows(s_pool, z.shape[0])], axis=1)
    return _linear_rows(cat, p.mix_w, p.mix_b)


def multi_scale_tokens(stages: list[Tensor], proj: PointwiseProj) -> Tensor:
    """Pool every backbone stage to the final resolution, concatenate the
    channels, and project to token dim: -> (F, H'*W', d)."""
    target_h = stages[-1].shape[2]
    pooled = []
    for s in stages:
        factor = s.shape[2] // target_h
        pooled.append(nn.avg_pool2d(s, factor) if factor > 1 else s)
    cat = T.concat(pooled, axis=1)
    return spatial_tokens(cat, proj)


def classify(fused: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Mean-pool fused tokens, then one linear logit; per-frame logits come
    from the same affine map, so their mean equals the clip logit."""
    n, d = fused.shape
    pooled = T.mean_axis0(fused)
    clip_logit = T.reshape(_linear_rows(T.reshape(pooled, (1, d)), weight, bias), (1,))
    frame_logits = T.reshape(_linear_rows(fused, weight, bias), (n,))
    return clip_logit, frame_logits, pooled


def forward(clip: FrameClip, params: CastParams, cfg: CastConfig,
            mode: str = "eval", seed: int = 0) -> ModelOutput:
    """Full per-clip forward pass. mode 'eval' disables all dropout; mode
    'train' uses seed to derive deterministic per-site dropout masks."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    if clip.clip_len != cfg.clip_len:
        raise ConfigError(f"clip has {clip.clip_len} frames, config wants {cfg.clip_len}")
    f = cfg.downsample_factor
    if clip.height % f or clip.width % f:
        raise ConfigError(f"frame dims {clip.height}x{clip.width} not divisible "
                          f"by backbone factor {f}")
    stages = backbone_stages(clip.frames, params.backbone)
    fmaps = stages[-1]

    t_seq = temporal_tokens(fmaps, params.temporal_proj)
    z = encode_temporal(t_seq, params.pos_embed, params.encoder, cfg.dropout,
                        mode, derive_seed(seed, "encoder"))

    attention = None
    if cfg.variant == "no_cross_attention":
        fused = z
    elif cfg.variant == "decoupled_self_attention":
        s_mean = spatial_mean(spatial_tokens(fmaps, params.spatial_proj))
        fused = decoupled_fuse(z, s_mean, params.decoupled, mode,
                               derive_seed(seed, "fusion"))
    else:
        if cfg.variant == "multi_scale":
            s_mean = T.mean_axis0(multi_scale_tokens(stages, params.multi_scale_proj))
        else:
            s_mean = spatial_mean(spatial_tokens(fmaps, params.spatial_proj))
        fused, attention = cross_attention_fuse(z, s_mean, params.fusion,
                                                cfg.variant, cfg.dropout, mode,
                                                derive_seed(seed, "fusion"))

    clip_logit, frame_logits, pooled = classify(fused, params.classifier_w,
                                                params.classifier_b)
    return ModelOutput(clip_logit=clip_logit, frame_logits=frame_logits,
                       fused_tokens=fused, pooled=pooled, attention=attention)


# ---------------------------------------------------------------------------
# checkpoints: magic, version u16, u32 length-prefixed config text, then
# named parameter entries (u16 name length, name, tensor bytes) until EOF.

CKPT_MAGIC = b"CASTCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, cfg: CastConfig, params: CastParams) -> None:
    cfg_block = cfg.to_text().encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION),
             struct.pack("<I", len(cfg_block)), cfg_block]
    for name, tensor in params.named_parameters().items():
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(tensor_to_bytes(tensor))
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[CastConfig, CastParams]:
    """Load and validate a checkpoint. Shapes are checked against a skeleton
    built from the embedded config; any mismatch raises CheckpointError."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 14 or buf[:8] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = struct.unpack_from("<H", buf, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", buf, 10)
    off = 14
    if len(buf) < off + cfg_len:
        raise FormatError("truncated checkpoint config block")
    cfg = CastConfig.from_text(buf[off:off + cfg_len].decode("utf-8"))
    off += cfg_len

    loaded: dict[str, Tensor] = {}
    while off < len(buf):
        if len(buf) < off + 2:
            raise FormatError("truncated checkpoint entry header")
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        if len(buf) < off + name_len:
            raise FormatError("truncated checkpoint entry name")
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        tensor, off = tensor_from_bytes(buf, off)
        loaded[name] = tensor

    params = init_cast_params(cfg, seed=0)
    expected = params.named_parameters()
    missing = sorted(set(expected) - set(loaded))
    extra = sorted(set(loaded) - set(expected))
    if missing or extra:
        raise CheckpointError(f"parameter names do not match config "
                              f"(missing={missing}, extra={extra})")
    for name, target in expected.items():
        src = loaded[name]
        if src.shape != target.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint "
                                  f"{src.shape}, config wants {target.shape}")
        target.data = src.data.astype(target.data.dtype, copy=True)
    return cfg, params
