"""Checks on the shipped benchmark beyond the acceptance ordering."""
import numpy as np

from gapfill import infer, read_gfd, rmsle, select_frames
from gapfill.checkpoint import load_model
from gapfill.workflow import bundled_config, dataset_stats


def test_validation_loss_decreases(benchmark_run):
    history = benchmark_run["trained"]["history"]
    assert len(history) == bundled_config()["train"]["epochs"]
    assert history[-1]["valid_loss"] < history[0]["valid_loss"]


def test_gap_free_input_scores_better_than_hidden_pixels(benchmark_run):
    cfg = bundled_config()
    truth = read_gfd(benchmark_run["out"] / "data_A" / "truth.gfd")
    test = select_frames(truth, tuple(cfg["split"]["test"]))
    out = infer(test, load_model(benchmark_run["trained"]["model"]), dataset_stats(truth, cfg))
    full = rmsle(out.filled(1.0), test.filled(1.0), test.valid)
    assert full < benchmark_run["summary"]["A"]["variational"]["rmsle"]


def test_report_files(benchmark_run):
    out = benchmark_run["out"]
    rows = (out / "eval_A" / "comparison.csv").read_text().splitlines()
    assert rows[0] == "method,RMSLE,RE (%)" and [r.split(",")[0] for r in rows[1:]] == ["variational", "dineof", "mean-fill"]
    assert (out / "eval_A" / "dineof_cv.csv").exists()
    assert 1 <= benchmark_run["A"]["dineof_modes"] <= bundled_config()["dineof"]["max_modes"]
    assert np.isfinite([v["rmsle"] for v in benchmark_run["summary"]["B"].values()]).all()
