"""Patch-wise inference over large domains with overlap averaging."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import CoverageGap, PatchTooLarge, ShapeMismatch
from .field import GappyField, NormStats


@dataclasses.dataclass(frozen=True)
class TileLayout:
    patch_h: int
    patch_w: int
    origins: tuple[tuple[int, int], ...]
    H: int
    W: int

    def coverage(self) -> np.ndarray:
        count = np.zeros((self.H, self.W), int)
        for r, c in self.origins:
            count[r:r + self.patch_h, c:c + self.patch_w] += 1
        return count


def _axis_origins(length: int, patch: int, min_overlap: int) -> list[int]:
    if patch > length:
        raise PatchTooLarge(f"patch {patch} larger than domain {length}")
    if not 0 <= min_overlap < patch:
        raise PatchTooLarge(f"overlap {min_overlap} must be in [0, {patch})")
    if patch == length:
        return [0]
    n = math.ceil((length - patch) / (patch - min_overlap)) + 1
    # rounding an even spacing never exceeds the integer bound patch - min_overlap
    return [round(i * (length - patch) / (n - 1)) for i in range(n)]


def plan_tiles(H: int, W: int, patch_h: int, patch_w: int, min_overlap_h: int = 0, min_overlap_w: int = 0) -> TileLayout:
    rows = _axis_origins(H, patch_h, min_overlap_h)
    cols = _axis_origins(W, patch_w, min_overlap_w)
    origins = tuple((r, c) for r in rows for c in cols)
    return TileLayout(patch_h, patch_w, origins, H, W)


def split(field: GappyField, layout: TileLayout) -> list[tuple[tuple[int, int], GappyField]]:
    if field.shape[1:] != (layout.H, layout.W):
        raise ShapeMismatch(f"layout is for {layout.H}x{layout.W}, field is {field.shape[1:]}")
    out = []
    for r, c in layout.origins:
        sl = (slice(None), slice(r, r + layout.patch_h), slice(c, c + layout.patch_w))
        out.append(((r, c), field.replace(values=field.values[sl], valid=field.valid[sl],
                                          lat0=field.lat0 + r * field.dlat, lon0=field.lon0 + c * field.dlon)))
    return out


def merge(patches, H: int | None = None, W: int | None = None, ocean: np.ndarray | None = None,
          like: GappyField | None = None) -> GappyField:
    """Average overlapping patches pixel by pixel.

    ``patches`` is a sequence of ``((row, col), GappyField)``; only valid
    patch pixels contribute. Summation runs in sorted-origin order so the
    result does not depend on the order patches arrive in. Pixels of
    ``ocean`` that no patch covers raise :class:`CoverageGap`.
    """
    patches = sorted(patches, key=lambda item: tuple(item[0]))
    if not patches:
        raise CoverageGap("no patches to merge")
    T = patches[0][1].shape[0]
    if H is None or W is None:
        if like is None:
            raise ShapeMismatch("domain size is required")
        H, W = like.shape[1:]
    acc = np.zeros((T, H, W))
    count = np.zeros((T, H, W), int)
    for (r, c), p in patches:
        t, h, w = p.shape
        if t != T or r + h > H or c + w > W:
            raise ShapeMismatch(f"patch at {(r, c)} with shape {p.shape} does not fit {T}x{H}x{W}")
        acc[:, r:r + h, c:c + w] += p.filled(0.0)
        count[:, r:r + h, c:c + w] += p.valid
    valid = count > 0
    if ocean is not None and (np.asarray(ocean, bool)[None] & ~valid).any():
        raise CoverageGap("some ocean pixels are covered by no patch")
    values = np.where(valid, acc / np.maximum(count, 1), np.nan)
    meta = like.meta() if like is not None else {}
    return GappyField(values, valid, **meta)


def tile_infer(y: GappyField, model, stats: NormStats, layout: TileLayout, workers: int = 1) -> GappyField:
    """Run ``infer`` independently on every patch of ``layout`` and merge."""
    from .variational import infer

    jobs = [(o, p) for o, p in split(y, layout) if p.valid.any()]

    def run(job):
        origin, patch = job
        return origin, infer(patch, model, stats)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    return merge(results, layout.H, layout.W, ocean=y.ocean, like=y)
