"""``gapfill`` command line.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys

from . import workflow
from .errors import ConfigError, GapfillError
from .field import NormStats


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def _date(text: str) -> dt.date:
    return dt.date.fromisoformat(text)


def _config(args) -> dict:
    cfg = workflow.load_config(args.config) if getattr(args, "config", None) else workflow.bundled_config()
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    elif "seed" not in cfg and os.environ.get("GAPFILL_SEED"):
        cfg["seed"] = int(os.environ["GAPFILL_SEED"])
    for key in ("epochs", "lr", "batch_size", "steps_per_epoch"):
        value = getattr(args, key, None)
        if value is not None:
            cfg.setdefault("train", {})[key] = value
    if getattr(args, "family", None):
        cfg["family"] = args.family
    return cfg


def _interval(args):
    if getattr(args, "start", None) or getattr(args, "end", None):
        if not (args.start and args.end):
            raise ConfigError("--start and --end go together")
        return (args.start, args.end)
    return None


def _stats(args):
    return NormStats.load(args.stats) if getattr(args, "stats", None) else None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gapfill", description="Gap filling for gappy raster time series.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run manifest (default: bundled synthetic benchmark)")
            sp.add_argument("--seed", type=int, help="overrides the config seed (fallback: $GAPFILL_SEED)")
        sp.add_argument("--workers", type=int, default=1, help="torch threads / patch workers; 1 is fully deterministic")

    def window(sp):
        sp.add_argument("--start", type=_date, help="first date to process (inclusive)")
        sp.add_argument("--end", type=_date, help="last date to process (inclusive)")

    sp = sub.add_parser("simulate", help="write synthetic truth.gfd and obs.gfd")
    common(sp)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("train", help="train a model; writes model.gpm, history.csv, stats.json")
    common(sp)
    sp.add_argument("--dataset", required=True, help="GFD training dataset (split by the config)")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--family", choices=["variational", "direct"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)

    for name, helptext in (("infer", "reconstruct a dataset with a trained model"),
                           ("tile-infer", "patch-wise reconstruction with overlap averaging")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, config=False)
        sp.add_argument("--in", dest="inp", required=True)
        sp.add_argument("--model", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--stats", help="NormStats JSON of the input dataset (default: computed from the input)")
        sp.add_argument("--transform", choices=["log10", "physical"], default="log10")
        sp.add_argument("--patch", type=_pair, required=(name == "tile-infer"), help="HxW")
        sp.add_argument("--overlap", type=_pair, default=(0, 0), help="minimum overlap HxW")
        window(sp)

    sp = sub.add_parser("dineof", help="iterative EOF reconstruction")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--modes", type=int)
    g.add_argument("--cv", action="store_true")
    sp.add_argument("--cv-out", help="CSV for the cross-validation curve (r,rmse)")
    sp.add_argument("--stats")
    sp.add_argument("--transform", choices=["log10", "physical"], default="log10")
    window(sp)

    sp = sub.add_parser("eval", help="score predictions on pixels hidden in the observations")
    common(sp, config=False)
    sp.add_argument("--pred", action="append", required=True, help="NAME=PATH or PATH; repeatable")
    sp.add_argument("--target", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--no-maps", action="store_true")
    window(sp)

    sp = sub.add_parser("report", help="run the full synthetic experiment and print the comparison table")
    common(sp)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--transfer", help="second dataset manifest to apply the trained model to")
    sp.add_argument("--maps", action="store_true")
    sp.add_argument("--family", choices=["variational", "direct"])
    sp.add_argument("--epochs", type=int)
    return p


def _print_table(reports) -> None:
    from .metrics import comparison_table

    for row in comparison_table(reports):
        print("{:<16} {:>8} {:>8}".format(*row))


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    workflow.set_workers(args.workers)
    cmd = args.command
    if cmd == "simulate":
        res = workflow.cmd_simulate(_config(args), args.out_dir)
        print(f"missing_fraction={res['missing_fraction']:.4f}")
    elif cmd == "train":
        res = workflow.cmd_train(_config(args), args.dataset, args.out_dir)
        if res["history"]:
            last = res["history"][-1]
            print(f"epochs={len(res['history'])} train_loss={last['train_loss']:.6g} valid_loss={last['valid_loss']:.6g}")
        print(f"model={res['model']}")
    elif cmd in ("infer", "tile-infer"):
        workflow.cmd_infer(args.model, args.inp, args.out, stats=_stats(args), transform=args.transform,
                           interval=_interval(args), patch=args.patch, overlap=args.overlap, workers=args.workers)
    elif cmd == "dineof":
        cfg = _config(args).get("dineof", {})
        res = workflow.cmd_dineof(args.inp, args.out, cfg=cfg, modes=args.modes, cv=args.cv,
                                  transform=args.transform, stats=_stats(args), interval=_interval(args),
                                  cv_out=args.cv_out)
        print(f"modes={res['modes']} converged={res['converged']}")
    elif cmd == "eval":
        preds = {}
        for item in args.pred:
            name, _, path = item.rpartition("=")
            preds[name or os.path.splitext(os.path.basename(path))[0]] = path
        reports = workflow.cmd_eval(preds, args.target, args.obs, args.out_dir, interval=_interval(args),
                                    maps=not args.no_maps)
        _print_table(reports)
    elif cmd == "report":
        transfer = workflow.load_config(args.transfer) if args.transfer else None
        res = workflow.cmd_report(_config(args), args.out_dir, workers=args.workers, maps=args.maps, transfer=transfer)
        for label in ("A", "B"):
            if label in res and "reports" in res[label]:
                print(f"[dataset {label}]")
                _print_table(res[label]["reports"])
        print(json.dumps({"summary": str(os.path.join(args.out_dir, "summary.json"))}))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except GapfillError as exc:
        print(f"gapfill: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gapfill: I/O error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, TypeError) as exc:
        print(f"gapfill: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
