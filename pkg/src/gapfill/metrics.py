"""Evaluation on hidden-but-known pixels: RMSLE, relative error, monthly means, error maps."""
from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import math
from pathlib import Path

import numpy as np

from .errors import EmptyMask, EmptySelection, NonPositiveValue, ShapeMismatch, ZeroTarget
from .field import GappyField, NormStats, denormalize


def eval_mask(target: GappyField, obs: GappyField) -> np.ndarray:
    """Pixels visible in the target but hidden in the observation."""
    if target.shape != obs.shape:
        raise ShapeMismatch(f"target {target.shape} vs observation {obs.shape}")
    return target.valid & ~obs.valid


def _pairs(pred, target, mask):
    pred, target, mask = np.asarray(pred, float), np.asarray(target, float), np.asarray(mask, bool)
    if not (pred.shape == target.shape == mask.shape):
        raise ShapeMismatch(f"shapes differ: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    if not mask.any():
        raise EmptyMask("evaluation mask selects no pixel")
    return pred[mask], target[mask]


def rmsle(pred, target, mask) -> float:
    p, t = _pairs(pred, target, mask)
    if np.any(p <= 0) or np.any(t <= 0):
        raise NonPositiveValue("RMSLE needs strictly positive predictions and targets")
    return float(np.sqrt(np.mean((np.log10(p) - np.log10(t)) ** 2)))


def relative_error(pred, target, mask) -> float:
    """Mean of ``|target - pred| / |target|`` over ``mask``, in percent."""
    p, t = _pairs(pred, target, mask)
    if np.any(t == 0):
        raise ZeroTarget("relative error is undefined for zero targets")
    return float(np.mean(np.abs(t - p) / np.abs(t)) * 100.0)


@dataclasses.dataclass
class MetricsReport:
    rmsle: float
    re_percent: float
    n_eval: int
    frames: list[dict]  # frame, date, rmsle, re, n_eval; NaN metrics where a frame has nothing to score

    def write_csv(self, path) -> Path:
        """Write the summary to ``path`` and the per-frame rows next to it (``*_frames.csv``)."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value", "n_eval"])
            w.writerow(["rmsle", repr(self.rmsle), self.n_eval])
            w.writerow(["re_percent", repr(self.re_percent), self.n_eval])
        frames = path.with_name(path.stem + "_frames.csv")
        with open(frames, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "date", "rmsle", "re"])
            for row in self.frames:
                w.writerow([row["frame"], row["date"], repr(row["rmsle"]), repr(row["re"])])
        return frames


def evaluate(pred: GappyField, target: GappyField, obs: GappyField, stats: NormStats | None = None) -> MetricsReport:
    """Score ``pred`` on pixels hidden in ``obs`` but present in ``target``.

    Inputs are physical values; pass ``stats`` when they are normalized and
    they are mapped back before scoring.
    """
    if stats is not None:
        pred, target, obs = (denormalize(f, stats) for f in (pred, target, obs))
    mask = eval_mask(target, obs)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    if not mask.any():
        raise EmptyMask("observation hides no target pixel; nothing to evaluate")
    scored = mask & pred.valid
    if not scored.any():
        raise EmptyMask("prediction has no value on any hidden target pixel")
    if (mask & ~pred.valid).any():
        raise ShapeMismatch("prediction has gaps on evaluation pixels")
    p, t = pred.filled(np.nan), target.filled(np.nan)
    frames = []
    for i, d in enumerate(target.dates):
        m = mask[i]
        if m.any():
            frames.append({"frame": i, "date": d.isoformat(), "rmsle": rmsle(p[i], t[i], m),
                           "re": relative_error(p[i], t[i], m), "n_eval": int(m.sum())})
        else:
            frames.append({"frame": i, "date": d.isoformat(), "rmsle": math.nan, "re": math.nan, "n_eval": 0})
    return MetricsReport(rmsle(p, t, mask), relative_error(p, t, mask), int(mask.sum()), frames)


def comparison_table(reports: dict[str, MetricsReport], path=None) -> list[list]:
    """Rows ``method, RMSLE, RE (%)`` in insertion order; optionally written as CSV."""
    rows = [["method", "RMSLE", "RE (%)"]]
    rows += [[name, f"{r.rmsle:.4f}", f"{r.re_percent:.2f}"] for name, r in reports.items()]
    if path is not None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return rows


def monthly_mean(field: GappyField, year: int, month: int) -> GappyField:
    """Per-pixel mean over the valid frames of one calendar month."""
    idx = [i for i, d in enumerate(field.dates) if (d.year, d.month) == (year, month)]
    if not idx:
        raise EmptySelection(f"no frame in {year:04d}-{month:02d}")
    v = field.valid[idx]
    n = v.sum(axis=0)
    total = np.where(v, field.values[idx], 0.0).sum(axis=0)
    valid = n > 0
    mean = np.where(valid, total / np.maximum(n, 1), np.nan)
    return field.replace(values=mean[None], valid=valid[None], t0=dt.date(year, month, 1))


def emit_error_map(pred, target, mask, path, vmin: float | None = None, vmax: float | None = None) -> dict:
    """Write ``|log10 pred - log10 target|`` on ``mask`` as an 8-bit PGM.

    Side outputs: ``<path>.csv`` with one ``row,col,abs_log10_error`` line
    per masked pixel and ``<path>.txt`` recording the linear scaling. Pixels
    off the mask are black. Returns the scaling used.
    """
    pred, target, mask = np.asarray(pred, float), np.asarray(target, float), np.asarray(mask, bool)
    if pred.ndim != 2 or pred.shape != target.shape or mask.shape != pred.shape:
        raise ShapeMismatch("error maps take matching 2-D arrays")
    err = np.zeros(pred.shape)
    if mask.any():
        if np.any(pred[mask] <= 0) or np.any(target[mask] <= 0):
            raise NonPositiveValue("log10 error map needs positive values on the mask")
        err[mask] = np.abs(np.log10(pred[mask]) - np.log10(target[mask]))
    lo = 0.0 if vmin is None else float(vmin)
    hi = float(err[mask].max()) if (vmax is None and mask.any()) else (lo if vmax is None else float(vmax))
    scaled = np.zeros(pred.shape)
    if hi > lo:
        scaled = np.clip((err - lo) / (hi - lo), 0.0, 1.0)
    img = np.where(mask, np.round(scaled * 255), 0).astype(np.uint8)
    path = Path(path)
    H, W = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    with open(path.with_name(path.name + ".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "abs_log10_error"])
        for i, j in zip(*np.nonzero(mask)):
            w.writerow([i, j, repr(float(err[i, j]))])
    scaling = {"vmin": lo, "vmax": hi, "quantity": "abs_log10_error", "maxval": 255}
    path.with_name(path.name + ".txt").write_text("".join(f"{k}={v}\n" for k, v in scaling.items()))
    return scaling


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    W, H = (int(s) for s in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(H, W)
