"""Raster-sequence data model, normalization and the GFD file format.

A :class:`GappyField` is a ``T x H x W`` stack of values with a boolean
validity mask. Invalid entries always hold NaN, but numerical code goes
through ``valid`` and never tests values for NaN.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import (
    AllMissing,
    BadMagic,
    ConfigError,
    EmptySelection,
    GfdShapeMismatch,
    MalformedHeader,
    NonPositiveValue,
    ShapeMismatch,
    ZeroVariance,
)

Transform = Literal["physical", "log10"]
DateInterval = tuple[dt.date, dt.date]

GFD_MAGIC = "GFD1"
GFD_KEYS = ("shape", "dtype", "var", "units", "lat0", "lon0", "dlat", "dlon", "t0", "dt_days")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class GappyField:
    values: np.ndarray
    valid: np.ndarray
    lat0: float = 0.0
    lon0: float = 0.0
    dlat: float = 1.0
    dlon: float = 1.0
    t0: dt.date = dt.date(2000, 1, 1)
    dt_days: float = 1.0
    var_name: str = "var"
    units: str = "1"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 3:
            raise ShapeMismatch(f"values must be T x H x W, got shape {values.shape}")
        if valid.shape != values.shape:
            raise ShapeMismatch(f"mask shape {valid.shape} != values shape {values.shape}")
        if min(values.shape) < 1:
            raise ShapeMismatch(f"empty dimension in shape {values.shape}")
        values[~valid] = np.nan
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))
        if isinstance(self.t0, str):
            object.__setattr__(self, "t0", dt.date.fromisoformat(self.t0))

    @classmethod
    def from_array(cls, values, valid=None, **meta) -> GappyField:
        """Build a field; ``valid`` defaults to the finite entries of ``values``."""
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            valid = np.isfinite(values)
        return cls(values, valid, **meta)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def land(self) -> np.ndarray:
        """H x W mask of pixels never observed at any time."""
        return ~self.valid.any(axis=0)

    @property
    def ocean(self) -> np.ndarray:
        return ~self.land

    @property
    def dates(self) -> list[dt.date]:
        return [self.date_of(i) for i in range(self.shape[0])]

    def date_of(self, index: int) -> dt.date:
        return self.t0 + dt.timedelta(days=index * self.dt_days)

    def meta(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name not in ("values", "valid")}

    def replace(self, **changes) -> GappyField:
        return dataclasses.replace(self, **changes)

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Writable float64 copy of the values with invalid entries set to ``fill``."""
        return np.where(self.valid, self.values, fill)

    def missing_fraction(self) -> float:
        """Fraction of invalid entries over ocean pixels."""
        ocean = np.broadcast_to(self.ocean, self.shape)
        n = ocean.sum()
        return float((~self.valid & ocean).sum() / n) if n else 1.0


@dataclasses.dataclass(frozen=True)
class NormStats:
    m: float
    sigma: float
    space: Transform = "physical"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ZeroVariance(f"sigma must be positive, got {self.sigma}")
        if self.space not in ("physical", "log10"):
            raise ConfigError(f"unknown transform {self.space!r}")

    @property
    def std(self) -> float:
        return math.sqrt(self.sigma)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> NormStats:
        d = json.loads(text)
        return cls(float(d["m"]), float(d["sigma"]), d.get("space", "physical"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> NormStats:
        return cls.from_json(Path(path).read_text())


@dataclasses.dataclass(frozen=True)
class SplitSpec:
    train: DateInterval
    valid: DateInterval
    test: DateInterval

    def __post_init__(self):
        ivs = [(name, _as_interval(getattr(self, name))) for name in ("train", "valid", "test")]
        for name, iv in ivs:
            object.__setattr__(self, name, iv)
        for i, (na, a) in enumerate(ivs):
            for nb, b in ivs[i + 1:]:
                if a[0] <= b[1] and b[0] <= a[1]:
                    raise ConfigError(f"split intervals {na} and {nb} overlap")

    @classmethod
    def from_dict(cls, d: dict) -> SplitSpec:
        return cls(**{k: tuple(d[k]) for k in ("train", "valid", "test")})

    def to_dict(self) -> dict:
        return {k: [v[0].isoformat(), v[1].isoformat()]
                for k, v in dataclasses.asdict(self).items()}


def _as_interval(iv) -> DateInterval:
    a, b = iv
    a = a if isinstance(a, dt.date) else dt.date.fromisoformat(a)
    b = b if isinstance(b, dt.date) else dt.date.fromisoformat(b)
    if b < a:
        raise ConfigError(f"interval end {b} precedes start {a}")
    return a, b


def _forward(v: np.ndarray, space: Transform) -> np.ndarray:
    if space == "log10":
        if np.any(v <= 0):
            raise NonPositiveValue("log10 transform requires strictly positive values")
        return np.log10(v)
    return v


def compute_stats(field: GappyField, transform: Transform = "log10") -> NormStats:
    """Mean and population variance of the (transformed) valid values."""
    v = field.values[field.valid]
    if v.size == 0:
        raise AllMissing("field has no valid pixel")
    v = _forward(v, transform)
    m = float(np.mean(v))
    sigma = float(np.mean((v - m) ** 2))
    # a constant field still leaves rounding noise in the variance
    if sigma <= (1e-12 * max(1.0, abs(m))) ** 2:
        raise ZeroVariance("valid values are constant")
    return NormStats(m, sigma, transform)


def normalize(field: GappyField, stats: NormStats) -> GappyField:
    out = np.full(field.shape, np.nan)
    v = _forward(field.values[field.valid], stats.space)
    out[field.valid] = (v - stats.m) / stats.std
    return field.replace(values=out, valid=field.valid)


def denormalize(field: GappyField, stats: NormStats) -> GappyField:
    out = np.full(field.shape, np.nan)
    v = field.values[field.valid] * stats.std + stats.m
    out[field.valid] = 10.0 ** v if stats.space == "log10" else v
    return field.replace(values=out, valid=field.valid)


def denormalize_array(a: np.ndarray, stats: NormStats) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64) * stats.std + stats.m
    return 10.0 ** v if stats.space == "log10" else v


def select_frames(field: GappyField, interval: DateInterval) -> GappyField:
    """Contiguous frames whose dates fall inside the inclusive ``interval``."""
    start, end = _as_interval(interval)
    idx = [i for i, d in enumerate(field.dates) if start <= d <= end]
    if not idx:
        raise EmptySelection(f"no frame of {field.t0}+{field.shape[0]}x{field.dt_days}d in [{start}, {end}]")
    lo, hi = idx[0], idx[-1] + 1
    return field.replace(values=field.values[lo:hi], valid=field.valid[lo:hi], t0=field.date_of(lo))


def write_gfd(field: GappyField, path) -> None:
    T, H, W = field.shape
    header = [
        GFD_MAGIC,
        f"shape={T},{H},{W}",
        "dtype=f32le",
        f"var={field.var_name}",
        f"units={field.units}",
        f"lat0={field.lat0!r}",
        f"lon0={field.lon0!r}",
        f"dlat={field.dlat!r}",
        f"dlon={field.dlon!r}",
        f"t0={field.t0.isoformat()}",
        f"dt_days={field.dt_days!r}",
        "",
        "",
    ]
    payload = np.where(field.valid, field.values, np.nan).astype("<f4")
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("utf-8"))
        fh.write(payload.tobytes(order="C"))


def read_gfd(path) -> GappyField:
    data = Path(path).read_bytes()
    first, _, rest = data.partition(b"\n")
    if first.strip() != GFD_MAGIC.encode():
        raise BadMagic(f"{path}: expected magic {GFD_MAGIC!r}, got {first[:16]!r}")
    head, sep, payload = rest.partition(b"\n\n")
    if not sep:
        raise MalformedHeader(f"{path}: header is not terminated by an empty line")
    try:
        kv = dict(line.split("=", 1) for line in head.decode("utf-8").splitlines())
    except ValueError as exc:
        raise MalformedHeader(f"{path}: header line without '='") from exc
    missing = [k for k in GFD_KEYS if k not in kv]
    if missing:
        raise MalformedHeader(f"{path}: missing header keys {missing}")
    if kv["dtype"] != "f32le":
        raise MalformedHeader(f"{path}: unsupported dtype {kv['dtype']!r}")
    try:
        shape = tuple(int(s) for s in kv["shape"].split(","))
        meta = dict(
            lat0=float(kv["lat0"]), lon0=float(kv["lon0"]),
            dlat=float(kv["dlat"]), dlon=float(kv["dlon"]),
            t0=dt.date.fromisoformat(kv["t0"]), dt_days=float(kv["dt_days"]),
            var_name=kv["var"], units=kv["units"],
        )
    except ValueError as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    if len(shape) != 3:
        raise MalformedHeader(f"{path}: shape must have three entries")
    n = shape[0] * shape[1] * shape[2]
    if len(payload) != 4 * n:
        raise GfdShapeMismatch(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    return GappyField(values, ~np.isnan(values), **meta)


def write_mask_gfd(mask: np.ndarray, path, like: GappyField | None = None) -> None:
    """Export a boolean mask as a 0/1 GFD for inspection."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None]
    meta = like.meta() if like is not None else {}
    meta.update(var_name="mask", units="1")
    write_gfd(GappyField(mask.astype(np.float64), np.ones(mask.shape, bool), **meta), path)
