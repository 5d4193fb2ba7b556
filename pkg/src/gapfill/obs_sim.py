"""Synthetic truth generators and cloud-gap simulation."""
from __future__ import annotations

import dataclasses
import datetime as dt

import numpy as np

from .errors import BadDimensions, ConfigError, ShapeMismatch
from .field import GappyField


@dataclasses.dataclass(frozen=True)
class CloudMaskConfig:
    """Random-ellipse cloud masks.

    Each frame draws its own coverage goal around ``target_missing_fraction``
    (jitter ``fraction_spread``) and stacks ellipses until the goal is met or
    the blob budget drawn from ``blob_count_range`` is exhausted.
    """

    target_missing_fraction: float = 0.45
    blob_count_range: tuple[int, int] = (1, 400)
    blob_radius_range: tuple[float, float] = (2.0, 10.0)
    fraction_spread: float = 0.1
    seed: int = 0

    def __post_init__(self):
        f = self.target_missing_fraction
        if not 0.0 <= f < 1.0:
            raise ConfigError(f"target_missing_fraction must be in [0, 1), got {f}")
        lo, hi = self.blob_count_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad blob_count_range {self.blob_count_range}")
        rlo, rhi = self.blob_radius_range
        if rlo <= 0 or rhi < rlo:
            raise ConfigError(f"bad blob_radius_range {self.blob_radius_range}")

    @classmethod
    def from_dict(cls, d: dict) -> CloudMaskConfig:
        d = dict(d)
        for k in ("blob_count_range", "blob_radius_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class SyntheticTruthConfig:
    T: int = 64
    H: int = 32
    W: int = 32
    mode: str = "advected-blobs"
    rank: int = 2
    velocity: tuple[float, float] = (0.5, 0.25)
    smoothness: float = 4.0
    # advected-blobs values are 10**(offset + amplitude * z), z roughly unit scale
    amplitude: float = 0.3
    offset: float = -2.5
    seasonal: float = 0.3
    period: float = 365.0
    land_rect: tuple[int, int, int, int] | None = None
    t0: dt.date = dt.date(2017, 1, 1)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticTruthConfig:
        d = dict(d)
        for k in ("velocity", "land_rect"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        if isinstance(d.get("t0"), str):
            d["t0"] = dt.date.fromisoformat(d["t0"])
        return cls(**d)


def _land(cfg: SyntheticTruthConfig) -> np.ndarray:
    land = np.zeros((cfg.H, cfg.W), bool)
    if cfg.land_rect is not None:
        r0, r1, c0, c1 = cfg.land_rect
        land[r0:r1, c0:c1] = True
    return land


def _smooth_noise(rng: np.random.Generator, H: int, W: int, length: float) -> np.ndarray:
    """Periodic Gaussian-filtered white noise with unit standard deviation."""
    ky = np.fft.fftfreq(H)[:, None]
    kx = np.fft.fftfreq(W)[None, :]
    spectrum = np.fft.fft2(rng.standard_normal((H, W)))
    spectrum *= np.exp(-2.0 * (np.pi * length) ** 2 * (ky ** 2 + kx ** 2))
    z = np.fft.ifft2(spectrum).real
    z -= z.mean()
    return z / z.std()


def _fourier_shift(z: np.ndarray, dy: float, dx: float) -> np.ndarray:
    H, W = z.shape
    if float(dy).is_integer() and float(dx).is_integer():
        return np.roll(z, (int(dy), int(dx)), axis=(0, 1))
    ky = np.fft.fftfreq(H)[:, None]
    kx = np.fft.fftfreq(W)[None, :]
    phase = np.exp(-2j * np.pi * (ky * dy + kx * dx))
    return np.fft.ifft2(np.fft.fft2(z) * phase).real


def gen_truth(cfg: SyntheticTruthConfig) -> GappyField:
    """Gap-free synthetic sequence (land excepted), deterministic in ``cfg.seed``.

    ``lowrank`` builds ``sum_r a_r(t) u_r(x)`` with exactly ``cfg.rank``
    independent terms; ``advected-blobs`` translates a smooth periodic
    pattern by ``cfg.velocity`` pixels per frame on top of a seasonal cycle,
    and maps it through ``10**(offset + amplitude * z)`` so values are
    positive like bio-optical concentrations.
    """
    T, H, W = cfg.T, cfg.H, cfg.W
    if min(T, H, W) < 1:
        raise BadDimensions(f"dimensions must be positive, got {(T, H, W)}")
    rng = np.random.default_rng(cfg.seed)
    land = _land(cfg)
    if cfg.mode == "lowrank":
        if not 1 <= cfg.rank <= min(T, H * W):
            raise BadDimensions(f"rank {cfg.rank} outside [1, {min(T, H * W)}]")
        # orthonormal factors make the rank exact regardless of draws
        u, _ = np.linalg.qr(rng.standard_normal((T, cfg.rank)))
        v, _ = np.linalg.qr(rng.standard_normal((H * W, cfg.rank)))
        s = np.sqrt(T * H * W) * np.linspace(1.0, 0.5, cfg.rank)
        values = ((u * s) @ v.T).reshape(T, H, W)
    elif cfg.mode == "advected-blobs":
        if T < 4 or H < 8 or W < 8:
            raise BadDimensions(f"advected-blobs needs at least 4x8x8, got {(T, H, W)}")
        base = _smooth_noise(rng, H, W, cfg.smoothness)
        phase = rng.uniform(0, 2 * np.pi)
        vy, vx = cfg.velocity
        t = np.arange(T)
        frames = np.stack([_fourier_shift(base, vy * k, vx * k) for k in t])
        season = cfg.seasonal * np.sin(2 * np.pi * t / cfg.period + phase)
        values = 10.0 ** (cfg.offset + cfg.amplitude * (frames + season[:, None, None]))
    else:
        raise ConfigError(f"unknown truth mode {cfg.mode!r}")
    valid = np.broadcast_to(~land, (T, H, W))
    return GappyField(values, valid, t0=cfg.t0, var_name=f"synthetic-{cfg.mode}", units="1")


def _ellipse(mask: np.ndarray, rng: np.random.Generator, rlo: float, rhi: float) -> None:
    H, W = mask.shape
    cy, cx = rng.uniform(0, H), rng.uniform(0, W)
    ry, rx = rng.uniform(rlo, rhi, size=2)
    theta = rng.uniform(0, np.pi)
    r = int(np.ceil(max(ry, rx)))
    y0, y1 = max(0, int(cy) - r), min(H, int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(W, int(cx) + r + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
    c, s = np.cos(theta), np.sin(theta)
    u, v = c * dy + s * dx, -s * dy + c * dx
    mask[y0:y1, x0:x1] |= (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def gen_cloud_mask(shape, cfg: CloudMaskConfig, frame_seed: int, ocean: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of removed pixels for one frame (``True`` = hidden).

    ``shape`` is ``(H, W)`` or ``(T, H, W)``; for stacks, frame ``t`` uses
    ``frame_seed + t``. Coverage is measured on ``ocean`` only and land
    pixels are never flagged.
    """
    shape = tuple(shape)
    if len(shape) == 3:
        return np.stack([gen_cloud_mask(shape[1:], cfg, frame_seed + t, ocean) for t in range(shape[0])])
    H, W = shape
    ocean = np.ones(shape, bool) if ocean is None else np.asarray(ocean, bool)
    mask = np.zeros(shape, bool)
    n_ocean = int(ocean.sum())
    if cfg.target_missing_fraction == 0 or cfg.blob_count_range[1] == 0 or n_ocean == 0:
        return mask
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, frame_seed & 0xFFFFFFFFFFFFFFFF])
    goal = float(np.clip(cfg.target_missing_fraction + cfg.fraction_spread * rng.uniform(-1, 1), 0.0, 0.98))
    budget = int(rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1))
    target = goal * n_ocean
    covered = 0
    for i in range(budget):
        if i >= cfg.blob_count_range[0] and covered >= target:
            break
        trial = mask.copy()
        _ellipse(trial, rng, *cfg.blob_radius_range)
        new = int((trial & ocean).sum())
        # stop at whichever side of the goal is closer, so small frames do not overshoot
        if i >= cfg.blob_count_range[0] and new - target > target - covered:
            break
        mask, covered = trial, new
    return mask & ocean


def apply_mask(field: GappyField, mask: np.ndarray) -> GappyField:
    """Hide ``mask`` pixels; validity only ever shrinks."""
    mask = np.asarray(mask, bool)
    if mask.shape == field.shape[1:]:
        mask = np.broadcast_to(mask, field.shape)
    if mask.shape != field.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} does not match field {field.shape}")
    return field.replace(values=field.values, valid=field.valid & ~mask)


def simulate_observations(truth: GappyField, cfg: CloudMaskConfig, frame_seed: int = 0) -> tuple[GappyField, np.ndarray]:
    mask = gen_cloud_mask(truth.shape, cfg, frame_seed, ocean=truth.ocean)
    return apply_mask(truth, mask), mask
