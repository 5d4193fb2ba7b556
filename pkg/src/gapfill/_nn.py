"""Torch plumbing shared by the variational solver and the direct network."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64


def as_tensor(a) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a.to(DTYPE)
    return torch.tensor(np.asarray(a), dtype=DTYPE)


def as_mask(a) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a.to(torch.bool)
    return torch.tensor(np.asarray(a), dtype=torch.bool)


def pad_space_time(x: torch.Tensor, pt: int, ps: int) -> torch.Tensor:
    """Pad a (B, C, T, H, W) tensor: reflect in space, replicate in time."""
    if ps:
        B, C, T, H, W = x.shape
        x = F.pad(x.reshape(B, C * T, H, W), (ps, ps, ps, ps), mode="reflect").reshape(B, C, T, H + 2 * ps, W + 2 * ps)
    if pt:
        x = F.pad(x, (0, 0, 0, 0, pt, pt), mode="replicate")
    return x


def conv_st(x: torch.Tensor, weight: torch.Tensor, ocean: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Space-time 'same' convolution with land zeroed on input and output.

    ``x`` is (B, C, T, H, W), ``weight`` (O, C, kt, k, k) with odd kernel
    sizes, ``ocean`` broadcastable to (H, W). Evaluated as a single 2-D
    convolution over time-shifted channel stacks, which is markedly faster
    than the float64 3-D convolution on CPU.
    """
    O, C, kt, k, _ = weight.shape
    B, _, T, H, W = x.shape
    x = pad_space_time(x * ocean, kt // 2, k // 2)
    Hp, Wp = H + 2 * (k // 2), W + 2 * (k // 2)
    stack = torch.cat([x[:, :, d:d + T] for d in range(kt)], dim=1)  # (B, kt*C, T, Hp, Wp)
    stack = stack.transpose(1, 2).reshape(B * T, kt * C, Hp, Wp)
    w2 = weight.transpose(1, 2).reshape(O, kt * C, k, k)
    y = F.conv2d(stack, w2, bias).reshape(B, T, O, H, W).transpose(1, 2)
    return y * ocean


def masked_mse(pred: torch.Tensor, target: torch.Tensor, visible: torch.Tensor) -> torch.Tensor:
    """Mean squared error over ``visible`` entries only.

    Entries outside ``visible`` are replaced by exact zeros before any
    arithmetic, so whatever they hold (NaN included) cannot reach the loss.
    """
    zero = torch.zeros((), dtype=pred.dtype)
    diff = torch.where(visible, pred - torch.where(visible, target, zero), zero)
    n = visible.sum()
    return (diff * diff).sum() / n.clamp(min=1)
