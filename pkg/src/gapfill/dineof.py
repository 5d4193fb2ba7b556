"""Iterative EOF gap filling (DInEOF-style reference interpolator).

Missing entries of the time x ocean-pixel matrix start at zero (the mean in
normalized space) and are repeatedly replaced by their rank-``r`` truncated
SVD reconstruction until the refill stabilises. Observed entries are never
touched. The number of modes is chosen by holding out a random fraction of
the observed pixels and scoring each candidate rank on them.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings

import numpy as np

from .errors import AllMissing, InsufficientData, RankTooLarge
from .field import GappyField

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class DineofConfig:
    max_modes: int = 10
    conv_tol: float = 1e-5
    max_iters: int = 200
    cv_fraction: float = 0.03
    # ranks whose holdout RMSE is within this fraction of the holdout RMS of the
    # data from the best one count as ties; the smallest of them wins
    cv_tie_tol: float = 1e-3
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> DineofConfig:
        return cls(**d)


@dataclasses.dataclass
class EofDecomposition:
    spatial_modes: np.ndarray  # (n_ocean, r), orthonormal columns
    temporal_amplitudes: np.ndarray  # (T, r), orthonormal columns
    singular_values: np.ndarray  # (r,), descending
    ocean: np.ndarray  # (H, W) pixels kept as matrix columns
    iterations: int
    converged: bool
    history: list[float]  # Frobenius norm of each refill update

    @property
    def r(self) -> int:
        return self.singular_values.size


def _unfold(obs: GappyField):
    T, H, W = obs.shape
    ocean = obs.ocean
    if not ocean.any():
        raise AllMissing("observation has no valid pixel")
    X = obs.filled(0.0).reshape(T, H * W)[:, ocean.ravel()]
    observed = obs.valid.reshape(T, H * W)[:, ocean.ravel()]
    return X, observed, ocean


def _fold(X: np.ndarray, obs: GappyField, ocean: np.ndarray) -> GappyField:
    T, H, W = obs.shape
    out = np.full((T, H * W), np.nan)
    out[:, ocean.ravel()] = X
    valid = np.broadcast_to(ocean, (T, H, W))
    return obs.replace(values=out.reshape(T, H, W), valid=valid)


def _refill(X: np.ndarray, missing: np.ndarray, r: int, cfg: DineofConfig):
    """Run the truncated-SVD refill in place on ``X``; return (U, s, Vt, iters, converged, history)."""
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        rec = (U[:, :r] * s[:r]) @ Vt[:r]
        old = X[missing]
        new = rec[missing]
        X[missing] = new
        step = float(np.linalg.norm(new - old))
        history.append(step)
        scale = float(np.linalg.norm(new))
        if not missing.any() or step <= cfg.conv_tol * max(scale, 1e-300):
            converged = True
            break
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    return U, s, Vt, it, converged, history


def impute(obs: GappyField, r: int, cfg: DineofConfig | None = None) -> tuple[GappyField, EofDecomposition]:
    """Fill ``obs`` on every ocean pixel using ``r`` EOF modes.

    Pixels never observed in time are treated as land and stay invalid.
    If ``cfg.max_iters`` runs out first, the last iterate is returned with
    ``converged=False`` and a ``RuntimeWarning``.
    """
    cfg = cfg or DineofConfig()
    X, observed, ocean = _unfold(obs)
    if r < 1 or r > min(X.shape):
        raise RankTooLarge(f"requested {r} modes, allowed range is 1..{min(X.shape)}")
    missing = ~observed
    U, s, Vt, iters, converged, history = _refill(X, missing, r, cfg)
    if not converged:
        warnings.warn(f"DINEOF refill did not converge in {iters} iterations (r={r})", RuntimeWarning)
    dec = EofDecomposition(
        spatial_modes=Vt[:r].T.copy(),
        temporal_amplitudes=U[:, :r].copy(),
        singular_values=s[:r].copy(),
        ocean=ocean,
        iterations=iters,
        converged=converged,
        history=history,
    )
    return _fold(X, obs, ocean), dec


def holdout_mask(obs: GappyField, fraction: float, seed: int) -> np.ndarray:
    """Random subset of valid pixels to hide; no ocean column loses all observations."""
    rng = np.random.default_rng(seed)
    flat_valid = np.flatnonzero(obs.valid)
    n = int(round(fraction * flat_valid.size))
    chosen = np.zeros(obs.valid.size, bool)
    chosen[rng.choice(flat_valid, size=n, replace=False)] = True
    chosen = chosen.reshape(obs.shape)
    remaining = (obs.valid & ~chosen).sum(axis=0)
    starved = obs.ocean & (remaining == 0)
    if starved.any():
        # give back the first held-out frame of each starved column
        first = np.argmax(chosen, axis=0)
        for i, j in zip(*np.nonzero(starved)):
            chosen[first[i, j], i, j] = False
    return chosen


def cross_validate(obs: GappyField, cfg: DineofConfig | None = None) -> tuple[int, list[float]]:
    """Pick the number of modes minimising RMSE on a seeded holdout.

    Returns ``(best_r, curve)`` where ``curve[i]`` is the holdout RMSE of
    ``r = i + 1``. Ranks within ``cv_tie_tol`` (relative to the RMS of the
    held-out values) of the minimum are ties and the smallest one wins, so a
    larger rank never beats a smaller one on refill noise alone.
    """
    cfg = cfg or DineofConfig()
    hold = holdout_mask(obs, cfg.cv_fraction, cfg.seed)
    if not hold.any():
        raise InsufficientData("cross-validation holdout is empty")
    n_ocean = int(obs.ocean.sum())
    if cfg.max_modes > min(obs.shape[0], n_ocean):
        raise RankTooLarge(f"max_modes={cfg.max_modes} exceeds min(T, ocean pixels)={min(obs.shape[0], n_ocean)}")
    masked = obs.replace(values=obs.values, valid=obs.valid & ~hold)
    truth = obs.values[hold]
    curve = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for r in range(1, cfg.max_modes + 1):
            rec, _ = impute(masked, r, cfg)
            err = float(np.sqrt(np.mean((rec.values[hold] - truth) ** 2)))
            logger.debug("dineof cv r=%d rmse=%.6g", r, err)
            curve.append(err)
    slack = cfg.cv_tie_tol * float(np.sqrt(np.mean(truth ** 2)))
    best = int(np.flatnonzero(np.asarray(curve) <= min(curve) + slack)[0]) + 1
    return best, curve
