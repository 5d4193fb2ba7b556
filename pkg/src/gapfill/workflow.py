"""Experiment commands behind the ``gapfill`` CLI.

Each ``cmd_*`` takes a plain config dict (the JSON run manifest) plus paths,
writes its outputs and returns what it wrote. Everything is a deterministic
function of the config and seed when run with a single worker.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from . import dineof as dineof_mod
from .baselines import mean_fill
from .checkpoint import load_model, save_model
from .direct import DirectNetConfig
from .errors import ConfigError
from .field import (GappyField, NormStats, SplitSpec, compute_stats, denormalize, normalize, read_gfd,
                    select_frames, write_gfd)
from .metrics import MetricsReport, comparison_table, emit_error_map, eval_mask, evaluate
from .obs_sim import CloudMaskConfig, SyntheticTruthConfig, gen_truth, simulate_observations
from .tiling import plan_tiles, tile_infer
from .training import TrainConfig, train, train_direct
from .variational import infer

logger = logging.getLogger(__name__)


def bundled_config(name: str = "benchmark") -> dict:
    """One of the JSON manifests shipped in ``gapfill/configs``."""
    text = resources.files("gapfill").joinpath("configs", f"{name}.json").read_text()
    return json.loads(text)


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def set_workers(workers: int = 1) -> None:
    torch.set_num_threads(max(1, int(workers)))


def _split(cfg: dict) -> SplitSpec:
    if "split" not in cfg:
        raise ConfigError("config has no 'split' section")
    return SplitSpec.from_dict(cfg["split"])


def _interval(cfg: dict, part: str):
    return getattr(_split(cfg), part)


def _seeded(cfg: dict, section: str) -> dict:
    """Config section with its seed defaulting to the run seed."""
    d = dict(cfg.get(section, {}))
    d.setdefault("seed", int(cfg.get("seed", 0)))
    return d


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: dict, out_dir) -> dict:
    """Write ``truth.gfd`` and ``obs.gfd``; returns paths and realized missing fraction."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth_cfg = SyntheticTruthConfig.from_dict(_seeded(cfg, "truth"))
    cloud = CloudMaskConfig.from_dict(_seeded(cfg, "cloud"))
    truth = gen_truth(truth_cfg)
    obs, mask = simulate_observations(truth, cloud, frame_seed=int(cfg.get("obs_frame_seed", 1_000_000_000)))
    ocean = np.broadcast_to(truth.ocean, truth.shape)
    fraction = float(mask[ocean].mean())
    write_gfd(truth, out / "truth.gfd")
    write_gfd(obs, out / "obs.gfd")
    return {"truth": out / "truth.gfd", "obs": out / "obs.gfd", "missing_fraction": fraction}


# ---------------------------------------------------------------- train


def dataset_stats(field: GappyField, cfg: dict) -> NormStats:
    """Normalization statistics of a dataset over its training period."""
    return compute_stats(select_frames(field, _interval(cfg, "train")), cfg.get("transform", "log10"))


def cmd_train(cfg: dict, dataset_path, out_dir) -> dict:
    """Train the configured family; writes ``model.gpm``, ``history.csv`` and ``stats.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    family = cfg.get("family", "variational")
    field = read_gfd(dataset_path)
    stats = dataset_stats(field, cfg)
    train_f = normalize(select_frames(field, _interval(cfg, "train")), stats)
    valid_f = normalize(select_frames(field, _interval(cfg, "valid")), stats)
    cloud = CloudMaskConfig.from_dict(_seeded(cfg, "cloud"))
    tdict = _seeded(cfg, "train")
    tcfg = TrainConfig.from_dict(tdict)
    if family == "variational":
        vc = cfg.get("variational", {})
        model, history = train(train_f, cloud, copy.deepcopy(vc.get("prior")), copy.deepcopy(vc.get("solver")),
                               tcfg, valid=valid_f)
    elif family == "direct":
        dc = dict(cfg.get("direct", {}))
        dc.setdefault("window", tcfg.window)
        dc.setdefault("seed", tcfg.seed)
        model, history = train_direct(train_f, cloud, DirectNetConfig.from_dict(dc), tcfg, valid=valid_f)
    else:
        raise ConfigError(f"family {family!r} is not trainable (expected 'variational' or 'direct')")
    save_model(model, out / "model.gpm")
    stats.save(out / "stats.json")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "valid_loss"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["valid_loss"])])
    return {"model": out / "model.gpm", "stats": out / "stats.json", "history": history,
            "history_csv": out / "history.csv"}


# ---------------------------------------------------------------- infer


def _maybe_select(field: GappyField, interval):
    return select_frames(field, interval) if interval is not None else field


def cmd_infer(model_path, in_path, out_path, stats: NormStats | None = None, transform: str = "log10",
              interval=None, patch: tuple[int, int] | None = None, overlap: tuple[int, int] = (0, 0),
              workers: int = 1) -> GappyField:
    """Apply a checkpoint to a dataset without touching its parameters.

    The input is normalized with ``stats`` (the target dataset's own
    statistics); when omitted they are computed from the input itself.
    With ``patch`` the domain is tiled and patches are averaged.
    """
    model = load_model(model_path)
    y = _maybe_select(read_gfd(in_path), interval)
    if stats is None:
        stats = compute_stats(y, transform)
    if patch is not None:
        layout = plan_tiles(y.shape[1], y.shape[2], patch[0], patch[1], overlap[0], overlap[1])
        rec = tile_infer(y, model, stats, layout, workers=workers)
    else:
        rec = infer(y, model, stats)
    write_gfd(rec, out_path)
    return rec


# ---------------------------------------------------------------- dineof


def cmd_dineof(in_path, out_path, cfg: dict | None = None, modes: int | None = None, cv: bool = False,
               transform: str = "log10", stats: NormStats | None = None, interval=None, cv_out=None) -> dict:
    """Reconstruct with iterative EOFs; ``cv`` selects the number of modes by holdout."""
    dcfg = dineof_mod.DineofConfig.from_dict(dict(cfg or {}))
    y = _maybe_select(read_gfd(in_path), interval)
    if stats is None:
        stats = compute_stats(y, transform)
    yn = normalize(y, stats)
    curve = None
    if cv or modes is None:
        modes, curve = dineof_mod.cross_validate(yn, dcfg)
        if cv_out is not None:
            with open(cv_out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["r", "rmse"])
                for r, e in enumerate(curve, start=1):
                    w.writerow([r, repr(e)])
    rec, dec = dineof_mod.impute(yn, modes, dcfg)
    rec = denormalize(rec, stats)
    write_gfd(rec, out_path)
    return {"modes": modes, "curve": curve, "converged": dec.converged, "field": rec}


# ---------------------------------------------------------------- eval


def cmd_eval(preds: dict, target_path, obs_path, out_dir, interval=None, maps: bool = True) -> dict[str, MetricsReport]:
    """Score every prediction, write per-method reports, error maps and ``comparison.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = _maybe_select(read_gfd(target_path), interval)
    obs = _maybe_select(read_gfd(obs_path), interval)
    mask = eval_mask(target, obs)
    reports = {}
    for name, path in preds.items():
        pred = _maybe_select(read_gfd(path), interval) if not isinstance(path, GappyField) else path
        report = evaluate(pred, target, obs)
        report.write_csv(out / f"{name}_report.csv")
        reports[name] = report
        if maps:
            mdir = out / "maps"
            mdir.mkdir(exist_ok=True)
            for i in range(target.shape[0]):
                emit_error_map(pred.filled(1.0)[i], target.filled(1.0)[i], mask[i], mdir / f"{name}_frame{i:04d}.pgm")
    comparison_table(reports, out / "comparison.csv")
    return reports


# ---------------------------------------------------------------- report


def cmd_report(cfg: dict, out_dir, workers: int = 1, maps: bool = False, transfer: dict | None = None) -> dict:
    """Full synthetic experiment: simulate, train, reconstruct the test split with
    the trained model, DInEOF and mean filling, then score them all.

    ``transfer`` is an optional second dataset manifest; the trained model is
    then also applied to it (with its own statistics) and scored there.
    """
    set_workers(workers)
    out = Path(out_dir)
    results = {}
    for label, dcfg in [("A", cfg)] + ([("B", transfer)] if transfer else []):
        d = out / f"data_{label}"
        sim = cmd_simulate(dcfg, d)
        results[label] = {"sim": sim}
    trained = cmd_train(cfg, results["A"]["sim"]["truth"], out / "model")
    family = cfg.get("family", "variational")
    tables = {}
    for label, dcfg in [("A", cfg)] + ([("B", transfer)] if transfer else []):
        sim = results[label]["sim"]
        test = _interval(dcfg, "test")
        d = out / f"eval_{label}"
        d.mkdir(parents=True, exist_ok=True)
        truth = read_gfd(sim["truth"])
        stats = dataset_stats(truth, dcfg)
        preds = {}
        preds[family] = cmd_infer(trained["model"], sim["obs"], d / f"{family}.gfd", stats=stats, interval=test,
                                  workers=workers)
        dres = cmd_dineof(sim["obs"], d / "dineof.gfd", cfg=cfg.get("dineof", {}), cv=True, stats=stats,
                          interval=test, cv_out=d / "dineof_cv.csv")
        preds["dineof"] = dres["field"]
        obs_test = select_frames(read_gfd(sim["obs"]), test)
        preds["mean-fill"] = mean_fill(obs_test, stats)
        write_gfd(preds["mean-fill"], d / "mean-fill.gfd")
        reports = cmd_eval(preds, sim["truth"], sim["obs"], d, interval=test, maps=maps)
        tables[label] = reports
        results[label].update({"reports": reports, "dineof_modes": dres["modes"]})
    results["trained"] = trained
    summary = {label: {name: {"rmsle": r.rmsle, "re_percent": r.re_percent, "n_eval": r.n_eval}
                       for name, r in reps.items()} for label, reps in tables.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    results["summary"] = summary
    return results
