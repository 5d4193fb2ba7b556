"""Trivial reference interpolators."""
from __future__ import annotations

import numpy as np

from .field import GappyField, NormStats, denormalize_array


def mean_fill(obs: GappyField, stats: NormStats) -> GappyField:
    """Keep observed pixels and put the dataset mean (in ``stats.space``) in every ocean gap."""
    ocean = np.broadcast_to(obs.ocean, obs.shape)
    fill = float(denormalize_array(np.zeros(()), stats))
    values = np.where(obs.valid, obs.values, fill)
    return obs.replace(values=np.where(ocean, values, np.nan), valid=ocean)
