"""Binary cross-entropy with logits, Adam with loss-scaling semantics, and
the training loop with best-validation checkpointing."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from . import model as M
from . import tensor as T
from .errors import ConfigError, DivergenceError, ShapeMismatch
from .metrics import roc_auc, stable_sigmoid
from .preprocess import FrameClip, load_split
from .seeding import derive_seed
from .tensor import GradientMap, Tensor


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 8
    max_epochs: int = 25
    dropout: float = 0.3
    loss_scale: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.lr <= 0 or self.loss_scale <= 0:
            raise ConfigError("lr and loss_scale must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")


def bce_with_logits(logit: Union[Tensor, float], y: int):
    """Binary cross-entropy from the raw logit: softplus(-z) + (1-y)*z.

    Stable for |z| up to at least 1e4. Tensor input joins the gradient
    tape and returns a scalar Tensor; plain numbers return a float.
    """
    y = float(y)
    if y not in (0.0, 1.0):
        raise ConfigError(f"label must be 0 or 1, got {y}")
    if isinstance(logit, Tensor):
        loss = T.softplus(T.scale(logit, -1.0))
        if y != 1.0:
            loss = T.add(loss, T.scale(logit, 1.0 - y))
        return loss
    z = float(logit)
    return max(-z, 0.0) + float(np.log1p(np.exp(-abs(z)))) + (1.0 - y) * z


class AdamState:
    """First/second moment buffers keyed by parameter node id, plus the
    shared step counter."""

    def __init__(self):
        self.step_count = 0
        self.moments: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def adam_step(params: Sequence[Tensor], grads: GradientMap, state: AdamState,
              cfg: TrainConfig) -> bool:
    """One Adam update over params (mutated in place).

    Gradients are unscaled by cfg.loss_scale first; the L2 weight-decay term
    is added to the unscaled gradient; then standard Adam with bias
    correction. If any unscaled gradient is non-finite the whole update is
    skipped and state is untouched. Returns whether the update was applied.
    """
    params = list(params)
    inv_scale = 1.0 / cfg.loss_scale
    unscaled = []
    for p in params:
        g = grads.get(p.node_id) if p.node_id is not None else None
        gd = g.data if g is not None else np.zeros_like(p.data)
        if gd.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {gd.shape} != param {p.data.shape}")
        unscaled.append(gd * inv_scale if cfg.loss_scale != 1.0 else gd)
    if any(not np.all(np.isfinite(g)) for g in unscaled):
        return False

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for p, g in zip(params, unscaled):
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        if p.node_id is None:
            p.node_id = T._new_node_id()
        prev = state.moments.get(p.node_id)
        if prev is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            m, v = prev
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        state.moments[p.node_id] = (m, v)
        p.data = p.data - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return True


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_checkpoint: str
    history_path: str
    best_epoch: int
    best_val_loss: float
    params: "M.CastParams"


def clip_score(out: M.ModelOutput, mode: str) -> float:
    """Per-video score in [0,1]: mean of per-frame sigmoids, or the sigmoid
    of the clip logit."""
    if mode == "frame_mean":
        return float(stable_sigmoid(out.frame_logits.data).mean())
    if mode == "clip":
        return float(stable_sigmoid(out.clip_logit.data)[0])
    raise ConfigError(f"unknown eval_logit_mode {mode!r}")


def _validate_epoch(params: M.CastParams, cfg: M.CastConfig,
                    val_set: list[tuple[FrameClip, int]]) -> tuple[float, float]:
    losses, scores, labels = [], [], []
    with T.no_grad():
        for clip, label in val_set:
            out = M.forward(clip, params, cfg, mode="eval")
            losses.append(bce_with_logits(out.clip_logit.item(), label))
            scores.append(clip_score(out, cfg.eval_logit_mode))
            labels.append(label)
    if all(np.isfinite(s) for s in scores):
        _, auc = roc_auc(scores, labels)
    else:
        auc = float("nan")  # diverged weights; the epoch loop decides what next
    return float(np.mean(losses)), auc


def format_history(history: list[EpochRecord]) -> str:
    lines = ["epoch\ttrain_loss\tval_loss\tval_auc\n"]
    for rec in history:
        lines.append(f"{rec.epoch}\t{rec.train_loss!r}\t{rec.val_loss!r}"
                     f"\t{rec.val_auc!r}\n")
    return "".join(lines)


def train(model_cfg: M.CastConfig, train_manifest, val_manifest,
          cfg: TrainConfig, out_dir) -> TrainResult:
    """Train with seeded shuffling, save the checkpoint whenever validation
    loss strictly improves, and write a per-epoch history file."""
    cfg.validate()
    model_cfg = replace(model_cfg, dropout=cfg.dropout)
    model_cfg.validate()
    train_set = load_split(train_manifest, "train")
    val_set = load_split(val_manifest, "val")
    if not train_set or not val_set:
        raise ConfigError("train and val manifests must be non-empty")

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(os.fspath(out_dir), "best.ckpt")
    history_path = os.path.join(os.fspath(out_dir), "history.tsv")

    params = M.init_cast_params(model_cfg, derive_seed(cfg.seed, "init"))
    tensors = params.all_tensors()
    state = AdamState()
    history: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = -1

    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "shuffle", epoch)))
        order = rng.permutation(len(train_set))
        batch_losses = []
        for step in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[step:step + cfg.batch_size]]
            T.reset_graph()
            loss_sum = None
            for j, (clip, label) in enumerate(batch):
                out = M.forward(clip, params, model_cfg, mode="train",
                                seed=derive_seed(cfg.seed, "drop", epoch, step, j))
                li = bce_with_logits(out.clip_logit, label)
                loss_sum = li if loss_sum is None else T.add(loss_sum, li)
            batch_loss = T.scale(loss_sum, 1.0 / len(batch))
            scaled = (T.scale(batch_loss, cfg.loss_scale)
                      if cfg.loss_scale != 1.0 else batch_loss)
            grads = T.backward(scaled)
            adam_step(tensors, grads, state, cfg)
            batch_losses.append(batch_loss.item())
        T.reset_graph()

        if not any(np.isfinite(v) for v in batch_losses):
            raise DivergenceError(f"epoch {epoch}: every batch loss was non-finite")
        train_loss = float(np.mean(batch_losses))
        val_loss, val_auc = _validate_epoch(params, model_cfg, val_set)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss,
                                   val_loss=val_loss, val_auc=val_auc))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            M.save_checkpoint(ckpt_path, model_cfg, params)

    with open(history_path, "w", encoding="utf-8", newline="") as f:
        f.write(format_history(history))
    return TrainResult(history=history, best_checkpoint=ckpt_path,
                       history_path=history_path, best_epoch=best_epoch,
                       best_val_loss=float(best_val), params=params)
