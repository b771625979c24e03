"""Pseudo-Siamese semantic change network.

Two branches with identical architecture but independent parameters each
extract per-epoch crop features; recurrent criss-cross attention (shared
parameters across its repeats) spreads context along rows and columns, one
repeat reaching a pixel's row and column and a second repeat the full map.
Per-branch heads classify crops; a discriminator on the absolute feature
difference detects change. The training objective is
seg_t1 + seg_t2 + 2 * change, with the change term weighted double because
both epochs share the unchanged background.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn import functional as F
from .nn.modules import BatchNorm2d, Conv2d, ConvBnRelu, Module
from .nn.optim import sgd_step
from .nn.rng import Xoshiro256, stream_seed
from .nn.tensor import NumericalError, Tensor, absolute, add, concat, no_grad, relu, scale, softmax, sub

# Per-epoch label spaces: spring crops vs autumn crops.
T1_CLASSES = ("background", "vegetable", "nursery", "early_rice", "rapeseed")
T2_CLASSES = ("background", "vegetable", "nursery", "middle_rice", "late_rice")

FEATURE_CHANNELS = 32
OUTPUT_STRIDE = 4


class ResidualBlock(Module):
    def __init__(self, cin: int, cout: int, rng: Xoshiro256, dilation: int = 1):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, padding=dilation, dilation=dilation, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=dilation, dilation=dilation, bias=False)
        self.bn2 = BatchNorm2d(cout)
        self.shortcut = Conv2d(cin, cout, 1, rng, bias=False) if cin != cout else None
        self.shortcut_bn = BatchNorm2d(cout) if cin != cout else None

    def __call__(self, x: Tensor) -> Tensor:
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut_bn(self.shortcut(x))
        return relu(add(out, skip))


class Backbone(Module):
    """7x7/2 stem + 2x2 pool + four residual blocks at output stride 4.

    No global pooling or fully connected layers; the last block dilates its
    convolutions instead of striding, keeping the stride-4 resolution.
    """

    def __init__(self, rng: Xoshiro256):
        super().__init__()
        self.stem = Conv2d(3, 16, 7, rng, stride=2, padding=3, bias=False)
        self.stem_bn = BatchNorm2d(16)
        self.blocks = [
            ResidualBlock(16, 32, rng),
            ResidualBlock(32, 32, rng),
            ResidualBlock(32, 32, rng),
            ResidualBlock(32, FEATURE_CHANNELS, rng, dilation=2),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        out = relu(self.stem_bn(self.stem(x)))
        out = F.maxpool2d(out)
        for block in self.blocks:
            out = block(out)
        return out


class CcamParams(Module):
    """Unshared 1x1 projections to query/key (channels/8) and value spaces."""

    def __init__(self, channels: int, rng: Xoshiro256):
        super().__init__()
        reduced = max(1, channels // 8)
        self.query_proj = Conv2d(channels, reduced, 1, rng)
        self.key_proj = Conv2d(channels, reduced, 1, rng)
        self.value_proj = Conv2d(channels, channels, 1, rng)


def ccam_with_attention(x: Tensor, p: CcamParams) -> tuple[Tensor, Tensor]:
    """Criss-cross attention step, returning (output, attention weights).

    For each position the H+W-1 pixels sharing its row or column are scored
    by query-key dot products, softmax-normalized, and used to average the
    value projections; the context is summed with the input feature. The
    attention layout is (N, H, W, H+W) with the duplicate self slot masked.
    """
    q = p.query_proj(x)
    k = p.key_proj(x)
    v = p.value_proj(x)
    energy = F.cc_mask_self(F.cc_energy(q, k))
    attn = softmax(energy, axis=3)
    context = F.cc_aggregate(attn, v)
    return add(context, x), attn


def ccam_forward(x: Tensor, p: CcamParams) -> Tensor:
    out, _ = ccam_with_attention(x, p)
    return out


def rcca(x: Tensor, p: CcamParams, repeats: int = 2) -> Tensor:
    """Recurrent criss-cross attention: `repeats` passes with shared params."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    out = x
    for _ in range(repeats):
        out = ccam_forward(out, p)
    return out


class SegHead(Module):
    """Fuse attended features with the raw ones, classify, restore resolution."""

    def __init__(self, channels: int, num_classes: int, rng: Xoshiro256):
        super().__init__()
        self.fuse = ConvBnRelu(2 * channels, channels, rng)
        self.classifier = Conv2d(channels, num_classes, 1, rng)

    def __call__(self, features: Tensor, attended: Tensor) -> Tensor:
        fused = self.fuse(concat([features, attended], axis=1))
        return F.upsample_bilinear(self.classifier(fused), OUTPUT_STRIDE)


class ChangeHead(Module):
    """Binary discriminator on the absolute difference of branch features."""

    def __init__(self, channels: int, rng: Xoshiro256):
        super().__init__()
        self.conv1 = ConvBnRelu(channels, channels // 2, rng)
        self.conv2 = ConvBnRelu(channels // 2, channels // 2, rng)
        self.classifier = Conv2d(channels // 2, 1, 1, rng)

    def __call__(self, f_t1: Tensor, f_t2: Tensor) -> Tensor:
        diff = absolute(sub(f_t1, f_t2))
        out = self.conv2(self.conv1(diff))
        return F.upsample_bilinear(self.classifier(out), OUTPUT_STRIDE)


class ChangeNet(Module):
    """Full pseudo-Siamese model; branch parameter sets are disjoint."""

    def __init__(self, seed: int, rcca_repeats: int = 2):
        super().__init__()
        rng = Xoshiro256(stream_seed(seed, "changenet-init"))
        self.backbone_t1 = Backbone(rng)
        self.backbone_t2 = Backbone(rng)
        self.reduce_t1 = Conv2d(FEATURE_CHANNELS, FEATURE_CHANNELS, 1, rng)
        self.reduce_t2 = Conv2d(FEATURE_CHANNELS, FEATURE_CHANNELS, 1, rng)
        self.rcca_t1 = CcamParams(FEATURE_CHANNELS, rng)
        self.rcca_t2 = CcamParams(FEATURE_CHANNELS, rng)
        self.seg_head_t1 = SegHead(FEATURE_CHANNELS, len(T1_CLASSES), rng)
        self.seg_head_t2 = SegHead(FEATURE_CHANNELS, len(T2_CLASSES), rng)
        self.change_head = ChangeHead(FEATURE_CHANNELS, rng)
        self.rcca_repeats = rcca_repeats

    def __call__(self, img_t1: Tensor, img_t2: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        f1 = self.backbone_t1(img_t1)
        f2 = self.backbone_t2(img_t2)
        x1 = rcca(self.reduce_t1(f1), self.rcca_t1, self.rcca_repeats)
        x2 = rcca(self.reduce_t2(f2), self.rcca_t2, self.rcca_repeats)
        logits_t1 = self.seg_head_t1(f1, x1)
        logits_t2 = self.seg_head_t2(f2, x2)
        logits_bcd = self.change_head(f1, f2)
        return logits_t1, logits_t2, logits_bcd


BCD_WEIGHT = 2.0


def total_loss(
    logits_t1: Tensor,
    y_t1: np.ndarray,
    logits_t2: Tensor,
    y_t2: np.ndarray,
    logits_bcd: Tensor,
    y_bcd: np.ndarray,
) -> tuple[Tensor, dict[str, float]]:
    """seg_t1 + seg_t2 + 2*change; returns the scalar and its logged parts."""
    l1 = F.cce_with_logits(logits_t1, y_t1)
    l2 = F.cce_with_logits(logits_t2, y_t2)
    bcd_targets = np.asarray(y_bcd, dtype=logits_bcd.data.dtype)
    if bcd_targets.ndim == 3:
        bcd_targets = bcd_targets[:, None]
    lb = F.bce_with_logits(logits_bcd, bcd_targets)
    loss = add(add(l1, l2), scale(lb, BCD_WEIGHT))
    parts = {
        "loss_t1": float(l1.data),
        "loss_t2": float(l2.data),
        "loss_bcd": float(lb.data),
        "total": float(loss.data),
    }
    return loss, parts


@dataclass
class ScdSample:
    img_t1: np.ndarray  # (3, H, W) float32 in [0, 1]
    img_t2: np.ndarray
    y_t1: np.ndarray  # (H, W) class ids
    y_t2: np.ndarray
    y_bcd: np.ndarray  # (H, W) 0/1


@dataclass
class ScdTrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    seed: int = 0
    rcca_repeats: int = 2


@dataclass
class ScdTrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _batch(samples: list[ScdSample], idx) -> tuple[Tensor, Tensor, np.ndarray, np.ndarray, np.ndarray]:
    x1 = Tensor(np.stack([samples[i].img_t1 for i in idx]).astype(np.float32))
    x2 = Tensor(np.stack([samples[i].img_t2 for i in idx]).astype(np.float32))
    y1 = np.stack([samples[i].y_t1 for i in idx]).astype(np.int64)
    y2 = np.stack([samples[i].y_t2 for i in idx]).astype(np.int64)
    yb = np.stack([samples[i].y_bcd for i in idx]).astype(np.float32)
    return x1, x2, y1, y2, yb


def validation_loss(model: ChangeNet, samples: list[ScdSample], batch_size: int = 4) -> float:
    model.eval()
    total = 0.0
    count = 0
    with no_grad():
        for start in range(0, len(samples), batch_size):
            idx = range(start, min(start + batch_size, len(samples)))
            x1, x2, y1, y2, yb = _batch(samples, idx)
            logits = model(x1, x2)
            _, parts = total_loss(logits[0], y1, logits[1], y2, logits[2], yb)
            total += parts["total"] * len(idx)
            count += len(idx)
    model.train()
    return total / max(count, 1)


def train_change_net(
    train_samples: list[ScdSample],
    val_samples: list[ScdSample],
    config: ScdTrainConfig,
    model: Optional[ChangeNet] = None,
) -> tuple[ChangeNet, ScdTrainLog]:
    """SGD training; retains the parameter snapshot of the best validation epoch."""
    if not train_samples:
        raise ValueError("empty training set")
    if model is None:
        model = ChangeNet(config.seed, config.rcca_repeats)
    model.train()
    params = model.parameters()
    shuffle_rng = np.random.default_rng(stream_seed(config.seed, "scd-shuffle"))
    log = ScdTrainLog()
    best_val = np.inf
    best_state: Optional[list[np.ndarray]] = None
    best_buffers: Optional[list[np.ndarray]] = None
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_samples))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            x1, x2, y1, y2, yb = _batch(train_samples, idx)
            logits = model(x1, x2)
            loss, parts = total_loss(logits[0], y1, logits[1], y2, logits[2], yb)
            if not np.isfinite(parts["total"]):
                raise NumericalError(f"change training diverged at epoch {epoch} step {step}")
            loss.backward()
            sgd_step(params, config.lr, config.momentum, config.weight_decay)
            log.steps.append({"step": step, "epoch": epoch, **parts})
            step += 1
        val = validation_loss(model, val_samples) if val_samples else float("nan")
        log.epochs.append({"epoch": epoch, "val_loss": val})
        if val_samples and val < best_val:
            best_val = val
            log.best_epoch = epoch
            best_state = [p.data.copy() for p in params]
            best_buffers = [b.copy() for _, b in model.named_buffers()]
    if best_state is not None:
        for p, snap in zip(params, best_state):
            p.data = snap
        for (_, buf), snap in zip(model.named_buffers(), best_buffers):
            buf[...] = snap
    return model, log


def infer_change(
    model: ChangeNet, img_t1: np.ndarray, img_t2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel argmax labels for both epochs plus the binary change mask.

    Argmax ties break toward the lowest class id; the binary head counts as
    changed only when its logit is strictly positive, which is the same
    convention (logit 0 resolves to the unchanged class).
    """
    model.eval()
    with no_grad():
        logits_t1, logits_t2, logits_bcd = model(Tensor(img_t1[None]), Tensor(img_t2[None]))
    seg_t1 = logits_t1.data[0].argmax(axis=0).astype(np.uint16)
    seg_t2 = logits_t2.data[0].argmax(axis=0).astype(np.uint16)
    change = (logits_bcd.data[0, 0] > 0).astype(np.uint16)
    return seg_t1, seg_t2, change
