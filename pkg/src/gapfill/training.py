"""Masked-loss training with online cloud masking, shared by both model families."""
from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
import torch

from ._nn import as_mask, as_tensor, masked_mse
from .direct import DirectNet, DirectNetConfig
from .errors import ConfigError, Diverged, EmptySelection
from .field import GappyField
from .obs_sim import CloudMaskConfig, gen_cloud_mask
from .variational import Prior, SolverSpec, VariationalModel, build_model

logger = logging.getLogger(__name__)

VALID_SEED_OFFSET = 1_000_003


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 20
    batch_size: int = 4
    window: int = 5
    lr: float = 0.01
    lr_decay: float = 1.0  # multiplicative, applied after every epoch
    grad_clip: float | None = 10.0
    valid_windows: int = 8
    grad_check: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.steps_per_epoch < 1 or self.batch_size < 1 or self.window < 1:
            raise ConfigError(f"invalid training config {self}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


@dataclasses.dataclass
class Batch:
    target: torch.Tensor  # (B, T, H, W) values, zero where invalid
    visible: torch.Tensor  # target validity
    obs: torch.Tensor  # observation validity (visible and not cloud-masked)
    ocean: torch.Tensor  # (H, W) float


def make_batch(field: GappyField, starts, window: int, cloud: CloudMaskConfig, frame_seeds) -> Batch:
    ocean = field.ocean
    target, visible, obs = [], [], []
    for s, fs in zip(starts, frame_seeds):
        v = field.valid[s:s + window]
        mask = gen_cloud_mask((window,) + field.shape[1:], cloud, int(fs), ocean=ocean)
        target.append(field.filled(0.0)[s:s + window])
        visible.append(v)
        obs.append(v & ~mask)
    return Batch(as_tensor(np.stack(target)), as_mask(np.stack(visible)), as_mask(np.stack(obs)),
                 as_tensor(ocean.astype(np.float64)))


def batch_loss(model, batch: Batch, differentiable: bool = True) -> torch.Tensor:
    """Reconstruct from the cloud-masked batch and score on target-visible pixels only."""
    pred = model(batch.target, batch.obs, batch.ocean, differentiable=differentiable)
    return masked_mse(pred, batch.target, batch.visible)


def validation_batches(field: GappyField, cloud: CloudMaskConfig, tcfg: TrainConfig) -> list[Batch]:
    """Fixed windows and masks so validation losses are comparable across epochs."""
    T = field.shape[0]
    if T < tcfg.window:
        raise EmptySelection(f"validation split has {T} frames, window is {tcfg.window}")
    n = min(tcfg.valid_windows, T - tcfg.window + 1)
    starts = np.linspace(0, T - tcfg.window, n).round().astype(int)
    seeds = [tcfg.seed + VALID_SEED_OFFSET + 97 * i for i in range(n)]
    return [make_batch(field, [s], tcfg.window, cloud, [fs]) for s, fs in zip(starts, seeds)]


def evaluate_loss(model, batches: list[Batch]) -> float:
    with torch.no_grad():
        return float(np.mean([float(batch_loss(model, b, differentiable=False)) for b in batches]))


def trainable_parameters(model) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def directional_gradient_check(model, batch: Batch, h: float = 1e-6, seed: int = 0) -> float:
    """Relative gap between the autograd and central-difference derivative along a random direction."""
    params = trainable_parameters(model)
    model.zero_grad()
    loss = batch_loss(model, batch)
    grads = torch.autograd.grad(loss, params)
    g = torch.Generator().manual_seed(seed)
    dirs = [torch.randn(p.shape, generator=g, dtype=p.dtype) for p in params]
    analytic = float(sum((gr * d).sum() for gr, d in zip(grads, dirs)))
    with torch.no_grad():
        for p, d in zip(params, dirs):
            p += h * d
        up = float(batch_loss(model, batch, differentiable=False))
        for p, d in zip(params, dirs):
            p -= 2 * h * d
        down = float(batch_loss(model, batch, differentiable=False))
        for p, d in zip(params, dirs):
            p += h * d
    numeric = (up - down) / (2 * h)
    return abs(analytic - numeric) / max(abs(numeric), 1e-300)


def fit(model, dataset: GappyField, cloud: CloudMaskConfig, tcfg: TrainConfig,
        valid: GappyField | None = None) -> list[dict]:
    """Train ``model`` in place on a normalized dataset; return per-epoch history.

    Each step draws ``batch_size`` random windows, hides fresh cloud masks in
    them and backpropagates the masked MSE through the whole model (for the
    variational family: through every unrolled solver iteration).
    """
    T = dataset.shape[0]
    if T < tcfg.window:
        raise EmptySelection(f"training split has {T} frames, window is {tcfg.window}")
    if tcfg.epochs == 0:
        return []
    rng = np.random.default_rng(tcfg.seed)
    params = trainable_parameters(model)
    if not params:
        raise ConfigError("model has no trainable parameters")
    opt = torch.optim.Adam(params, lr=tcfg.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=tcfg.lr_decay)
    vbatches = validation_batches(valid, cloud, tcfg) if valid is not None else []
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        losses = []
        for step in range(tcfg.steps_per_epoch):
            starts = rng.integers(0, T - tcfg.window + 1, size=tcfg.batch_size)
            seeds = rng.integers(0, 2**31 - 1, size=tcfg.batch_size)
            batch = make_batch(dataset, starts, tcfg.window, cloud, seeds)
            if tcfg.grad_check and epoch == 1 and step == 0:
                err = directional_gradient_check(model, batch)
                logger.info("training gradient check: relative error %.3g", err)
                if err > 1e-5:
                    logger.warning("training gradient disagrees with finite differences (%.3g)", err)
            opt.zero_grad()
            loss = batch_loss(model, batch)
            if not torch.isfinite(loss):
                raise Diverged(f"non-finite training loss at epoch {epoch} step {step}", iteration=step)
            loss.backward()
            if tcfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, tcfg.grad_clip)
            opt.step()
            losses.append(loss.item())
        sched.step()
        vloss = evaluate_loss(model, vbatches) if vbatches else math.nan
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_loss": vloss})
        logger.info("epoch %d train %.5f valid %.5f", epoch, history[-1]["train_loss"], vloss)
    return history


def train(dataset: GappyField, cloud: CloudMaskConfig, prior: Prior | dict | None = None,
          spec: SolverSpec | dict | None = None, tcfg: TrainConfig = TrainConfig(),
          valid: GappyField | None = None) -> tuple[VariationalModel, list[dict]]:
    """Jointly train a prior and its unrolled solver; returns ``(model, history)``.

    ``model.prior`` and ``model.solver`` are the trained prior and solver.
    """
    model = build_model(prior, spec, seed=tcfg.seed)
    return model, fit(model, dataset, cloud, tcfg, valid)


def train_direct(dataset: GappyField, cloud: CloudMaskConfig, cfg: DirectNetConfig = DirectNetConfig(),
                 tcfg: TrainConfig = TrainConfig(), valid: GappyField | None = None) -> tuple[DirectNet, list[dict]]:
    if cfg.window != tcfg.window:
        raise ConfigError(f"direct-net window {cfg.window} != training window {tcfg.window}")
    model = DirectNet(cfg)
    return model, fit(model, dataset, cloud, tcfg, valid)
