import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from gapfill import GappyField

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def make_field(values, valid=None, **meta) -> GappyField:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, None, :]
    return GappyField.from_array(values, valid, **meta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_field(rng):
    values = 10.0 ** rng.normal(-2, 0.3, size=(6, 8, 10))
    valid = rng.random(values.shape) < 0.7
    valid[:, 0, :2] = False  # land
    return GappyField(values, valid, lat0=40.0, lon0=3.5, dlat=0.01, dlon=0.015,
                      t0=dt.date(2019, 3, 1), var_name="bbp443", units="m-1")


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory):
    """The shipped synthetic benchmark (dataset A) with transfer to dataset B, run once per session."""
    import time

    from gapfill.workflow import bundled_config, cmd_report

    out = tmp_path_factory.mktemp("benchmark")
    start = time.perf_counter()
    res = cmd_report(bundled_config("benchmark"), out, workers=1, transfer=bundled_config("transfer_b"))
    res["seconds"] = time.perf_counter() - start
    res["out"] = out
    return res
