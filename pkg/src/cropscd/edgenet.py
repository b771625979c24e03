"""Cascaded multi-scale edge detection network.

Five incremental blocks of conv+ReLU stacks sit between 2x2 pools, so each
block sees a wider context. Every conv output runs through a scale
enhancement module (parallel dilated 3x3 branches, summed, then a 1x1
projection); the block's enhanced features feed two 1x1 heads that emit a
deep-to-shallow and a shallow-to-deep edge logit map. All 10 side logits
plus a fused 1x1 combination are supervised with class-balanced binary
cross-entropy, and the sigmoid of the fused map is the edge probability
raster consumed by parcel extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import Raster
from .nn import functional as F
from .nn.modules import Conv2d, Module
from .nn.optim import sgd_step
from .nn.rng import Xoshiro256, stream_seed
from .nn.tensor import NumericalError, Tensor, add, concat, no_grad, relu, sigmoid

BLOCK_CHANNELS = (8, 16, 32, 32, 32)
BLOCK_CONVS = (2, 2, 3, 3, 3)


@dataclass(frozen=True)
class SemConfig:
    """Scale enhancement: `branches` dilated 3x3 convs at rates rate_factor*k."""

    rate_factor: int = 1
    branches: int = 3
    channels: int = 8

    def __post_init__(self):
        if self.rate_factor < 1 or self.branches < 1:
            raise ValueError("rate_factor and branches must be >= 1")

    def dilation_rates(self) -> list[int]:
        return [self.rate_factor * k for k in range(1, self.branches + 1)]


class ScaleEnhancement(Module):
    def __init__(self, in_channels: int, cfg: SemConfig, rng: Xoshiro256, out_channels: int = 8):
        super().__init__()
        self.branch_convs = [
            Conv2d(in_channels, cfg.channels, 3, rng, padding=d, dilation=d)
            for d in cfg.dilation_rates()
        ]
        self.project = Conv2d(cfg.channels, out_channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        total: Optional[Tensor] = None
        for conv in self.branch_convs:
            branch = relu(conv(x))
            total = branch if total is None else add(total, branch)
        return self.project(total)


def sem_forward(x: Tensor, sem: ScaleEnhancement) -> Tensor:
    return sem(x)


class IncrementalBlock(Module):
    """Conv stack with per-conv scale enhancement and two 1x1 edge heads."""

    def __init__(self, in_channels: int, channels: int, convs: int, sem_cfg: SemConfig, rng: Xoshiro256):
        super().__init__()
        self.convs = []
        cin = in_channels
        for _ in range(convs):
            self.convs.append(Conv2d(cin, channels, 3, rng, padding=1))
            cin = channels
        sem_out = 8
        self.sems = [ScaleEnhancement(channels, sem_cfg, rng, sem_out) for _ in range(convs)]
        self.head_d2s = Conv2d(sem_out, 1, 1, rng)
        self.head_s2d = Conv2d(sem_out, 1, 1, rng)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        features = x
        enhanced: Optional[Tensor] = None
        for conv, sem in zip(self.convs, self.sems):
            features = relu(conv(features))
            s = sem(features)
            enhanced = s if enhanced is None else add(enhanced, s)
        return features, self.head_d2s(enhanced), self.head_s2d(enhanced)


class EdgeNet(Module):
    """Five-block cascade; forward returns 10 side logits and the fused logits."""

    def __init__(self, seed: int, sem_cfg: SemConfig = SemConfig()):
        super().__init__()
        rng = Xoshiro256(stream_seed(seed, "edgenet-init"))
        self.blocks = []
        cin = 3
        for channels, convs in zip(BLOCK_CHANNELS, BLOCK_CONVS):
            self.blocks.append(IncrementalBlock(cin, channels, convs, sem_cfg, rng))
            cin = channels
        self.fuse = Conv2d(2 * len(self.blocks), 1, 1, rng)

    def __call__(self, image: Tensor) -> tuple[list[Tensor], list[Tensor], Tensor]:
        n, c, h, w = image.shape
        if h % 16 or w % 16:
            raise F.ShapeError(f"input spatial size must be divisible by 16, got {h}x{w}")
        side_d2s: list[Tensor] = []
        side_s2d: list[Tensor] = []
        feats = image
        for i, block in enumerate(self.blocks):
            feats, d2s, s2d = block(feats)
            up = 2**i
            side_d2s.append(F.upsample_bilinear(d2s, up))
            side_s2d.append(F.upsample_bilinear(s2d, up))
            if i < len(self.blocks) - 1:
                feats = F.maxpool2d(feats)
        fused = self.fuse(concat(side_d2s + side_s2d, axis=1))
        return side_d2s, side_s2d, fused


def edge_probabilities(model: EdgeNet, image: Tensor) -> np.ndarray:
    """(N, H, W) edge probability in [0, 1] from the fused logits."""
    _, _, fused = model(image)
    return sigmoid(fused).data[:, 0]


def class_balanced_bce(logits: Tensor, target: np.ndarray) -> Tensor:
    """Edge-detection BCE with per-map class balancing.

    Positive pixels are weighted by the map's negative fraction and negative
    pixels by the positive fraction, so sparse edges still contribute. An
    all-positive or all-negative map simply zeroes one of the weights.
    """
    t = np.asarray(target, dtype=logits.data.dtype)
    if t.ndim == 3:
        t = t[:, None]
    if t.shape != logits.data.shape:
        raise F.ShapeError(f"target shape {t.shape} != logits shape {logits.shape}")
    n = t.shape[0]
    per_map = t.reshape(n, -1)
    total = per_map.shape[1]
    positives = per_map.sum(axis=1)
    w_pos = ((total - positives) / total).reshape(n, 1, 1, 1)
    w_neg = (positives / total).reshape(n, 1, 1, 1)
    return F.weighted_bce_with_logits(logits, t, w_pos, w_neg)


def edge_total_loss(model: EdgeNet, image: Tensor, target: np.ndarray) -> Tensor:
    side_d2s, side_s2d, fused = model(image)
    loss = class_balanced_bce(fused, target)
    for side in side_d2s + side_s2d:
        loss = add(loss, class_balanced_bce(side, target))
    return loss


@dataclass
class EdgeTrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    seed: int = 0


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)

    def append(self, **kwargs):
        self.steps.append(kwargs)

    def losses(self) -> list[float]:
        return [s["loss"] for s in self.steps]


def train_edge_net(
    images: list[np.ndarray],
    edge_masks: list[np.ndarray],
    config: EdgeTrainConfig,
    model: Optional[EdgeNet] = None,
) -> tuple[EdgeNet, TrainLog]:
    """SGD training over (3,H,W) float images and (H,W) 0/1 edge masks."""
    if len(images) != len(edge_masks) or not images:
        raise ValueError("need equally many images and edge masks, at least one pair")
    if model is None:
        model = EdgeNet(config.seed)
    model.train()
    params = model.parameters()
    shuffle_rng = np.random.default_rng(stream_seed(config.seed, "edge-shuffle"))
    log = TrainLog()
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(images))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            x = Tensor(np.stack([images[i] for i in batch]).astype(np.float32))
            y = np.stack([edge_masks[i] for i in batch]).astype(np.float32)
            loss = edge_total_loss(model, x, y)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"edge training diverged at epoch {epoch} step {step}")
            loss.backward(np.ones_like(loss.data))
            sgd_step(params, config.lr, config.momentum, config.weight_decay)
            log.append(step=step, epoch=epoch, loss=value)
            step += 1
    return model, log


def infer_edge_raster(
    model: EdgeNet,
    image: np.ndarray,
    frame: Raster,
    window: int = 256,
    margin: int = 16,
) -> Raster:
    """Tile a (3, H, W) image through the net and mosaic an edge probability raster.

    Windows overlap by ``margin`` on interior seams and only window interiors
    are kept, which avoids visible stitching artifacts in the mosaic.
    """
    _, h, w = image.shape
    out = np.zeros((h, w), dtype=np.float32)
    model.eval()
    step = window - 2 * margin
    if h <= window and w <= window:
        starts_r, starts_c = [0], [0]
        window_r, window_c = h, w
    else:
        starts_r = list(range(0, max(h - window, 0) + 1, step)) or [0]
        if starts_r[-1] != h - window:
            starts_r.append(h - window)
        starts_c = list(range(0, max(w - window, 0) + 1, step)) or [0]
        if starts_c[-1] != w - window:
            starts_c.append(w - window)
        window_r = window_c = window
    with no_grad():
        for r0 in starts_r:
            for c0 in starts_c:
                patch = image[:, r0 : r0 + window_r, c0 : c0 + window_c]
                probs = edge_probabilities(model, Tensor(patch[None]))[0]
                rlo = 0 if r0 == 0 else margin
                clo = 0 if c0 == 0 else margin
                rhi = window_r if r0 + window_r >= h else window_r - margin
                chi = window_c if c0 + window_c >= w else window_c - margin
                out[r0 + rlo : r0 + rhi, c0 + clo : c0 + chi] = probs[rlo:rhi, clo:chi]
    return frame.like(out)
