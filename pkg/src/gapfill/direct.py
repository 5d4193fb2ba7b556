"""Direct encoder-decoder interpolator (one x2 down/up level, bilinear bottleneck).

Input is a window of ``window`` normalized frames with gaps at zero plus the
``window`` observation masks as extra channels; output is the gap-free window.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._nn import as_mask, as_tensor
from .errors import OddDimensions, ShapeMismatch


@dataclasses.dataclass(frozen=True)
class DirectNetConfig:
    hidden_dim: int = 16
    window: int = 5
    k: int = 3
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> DirectNetConfig:
        return cls(**d)

    def param_count(self) -> int:
        """Analytic parameter count of :class:`DirectNet` for this config."""
        h, w, k2 = self.hidden_dim, self.window, self.k * self.k
        conv = lambda i, o: i * o * k2 + o  # noqa: E731
        return conv(2 * w, h) + conv(h, h) + 3 * conv(h, h) + conv(2 * h, w)


class DirectNet(nn.Module):
    """``enc1 -> enc2 -> pool2 -> [h + A h + B1 h * B2 h] -> up2 -> concat(enc2) -> dec``."""

    family = "direct-net"

    def __init__(self, cfg: DirectNetConfig = DirectNetConfig()):
        super().__init__()
        if cfg.k % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.cfg = cfg
        h, w, k = cfg.hidden_dim, cfg.window, cfg.k

        def conv(i, o):
            return nn.Conv2d(i, o, k, padding=k // 2, padding_mode="reflect", dtype=torch.float64)

        # default torch init, but seeded without touching the global generator
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.enc1 = conv(2 * w, h)
            self.enc2 = conv(h, h)
            self.lin = conv(h, h)
            self.bil1 = conv(h, h)
            self.bil2 = conv(h, h)
            self.dec = conv(2 * h, w)
        nn.init.zeros_(self.dec.weight)
        nn.init.zeros_(self.dec.bias)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, y, omega, ocean, differentiable: bool = True):
        """Reconstruct (B, window, H, W) observations; ``differentiable`` is accepted for API parity."""
        B, T, H, W = y.shape
        if T != self.cfg.window:
            raise ShapeMismatch(f"direct-net expects windows of {self.cfg.window} frames, got {T}")
        if H % 2 or W % 2:
            raise OddDimensions(f"H and W must be even for the x2 down/up path, got {H}x{W}")
        if min(H, W) // 2 <= self.cfg.k // 2:
            raise ShapeMismatch(f"{H}x{W} is too small for reflect padding after pooling")
        zero = torch.zeros((), dtype=torch.float64)
        ocean = ocean.to(torch.float64)
        y0 = torch.where(omega, y, zero) * ocean
        inp = torch.cat([y0, omega.to(torch.float64) * ocean], dim=1)
        e = torch.tanh(self.enc1(inp))
        e = torch.tanh(self.enc2(e))
        b = F.avg_pool2d(e, 2)
        b = b + self.lin(b) + self.bil1(b) * self.bil2(b)
        u = F.interpolate(b, scale_factor=2, mode="nearest")
        out = self.dec(torch.cat([u, e], dim=1))
        return out * ocean

    def reconstruct(self, y: np.ndarray, omega: np.ndarray, ocean: np.ndarray) -> np.ndarray:
        """Full-length (T, H, W) reconstruction by averaging every sliding window."""
        T = y.shape[0]
        w = self.cfg.window
        if T < w:
            raise ShapeMismatch(f"sequence of {T} frames is shorter than the {w}-frame window")
        yt, om, oc = as_tensor(y), as_mask(omega), as_tensor(np.asarray(ocean, np.float64))
        starts = list(range(T - w + 1))
        acc = torch.zeros_like(yt)
        count = torch.zeros(T, dtype=torch.float64)
        with torch.no_grad():
            for i in range(0, len(starts), 16):
                chunk = starts[i:i + 16]
                out = self.forward(torch.stack([yt[s:s + w] for s in chunk]),
                                   torch.stack([om[s:s + w] for s in chunk]), oc)
                for s, o in zip(chunk, out):
                    acc[s:s + w] += o
                    count[s:s + w] += 1
        return (acc / count[:, None, None]).numpy()

    def config(self) -> dict:
        return dataclasses.asdict(self.cfg)
