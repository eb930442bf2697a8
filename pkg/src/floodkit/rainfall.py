"""Rainfall ingestion, resampling, masking, accumulation and trigger logic.

Rates are mm/h everywhere in this module; the solver does the single
conversion to m/s.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import GeoTransform, Grid2D, Mask, bilinear_resample, read_esri_ascii, write_esri_ascii

SECONDS_PER_DAY = 86_400.0
_RAIN_NAME = re.compile(r"^rain_(\d+(?:\.\d+)?)\.asc$")


@dataclass(frozen=True, eq=False)
class RainSeries:
    """Rain-rate grids (mm/h) at uniformly spaced epoch start times (s)."""

    t_starts: np.ndarray
    grids: tuple
    dt_epoch: float

    def __post_init__(self):
        t = np.array(self.t_starts, dtype=float)
        grids = tuple(self.grids)
        if t.ndim != 1 or len(t) != len(grids) or len(t) == 0:
            raise ValueError("need one start time per grid and at least one epoch")
        if self.dt_epoch <= 0:
            raise ValueError("dt_epoch must be positive")
        if len(t) > 1 and not np.allclose(np.diff(t), self.dt_epoch, rtol=0, atol=1e-9 * self.dt_epoch):
            raise ValueError("epochs must be strictly increasing with uniform spacing dt_epoch")
        shape = grids[0].shape
        for g in grids:
            if g.shape != shape:
                raise ValueError("all rain grids must share one shape")
            if np.any(g.values[~g.nodata] < 0):
                raise ValueError("rain rates must be non-negative")
        t.setflags(write=False)
        object.__setattr__(self, "t_starts", t)
        object.__setattr__(self, "grids", grids)

    def __len__(self):
        return len(self.grids)

    @property
    def shape(self):
        return self.grids[0].shape

    @property
    def t_end(self) -> float:
        return float(self.t_starts[-1] + self.dt_epoch)

    def epoch_at(self, t: float) -> int:
        """Index of the epoch whose interval [start, start+dt) contains ``t``."""
        i = int(np.floor((t - self.t_starts[0]) / self.dt_epoch + 1e-9))
        if i < 0 or i >= len(self):
            raise ValueError(f"t={t} outside rain series [{self.t_starts[0]}, {self.t_end})")
        return i

    def rates(self) -> np.ma.MaskedArray:
        """(epochs, rows, cols) masked array of rates."""
        return np.ma.stack([g.masked() for g in self.grids])

    @classmethod
    def constant(cls, rate_mm_h, shape, n_epochs, dt_epoch, t0=0.0, transform=None) -> "RainSeries":
        transform = transform or GeoTransform()
        grid = Grid2D(np.full(shape, float(rate_mm_h)), transform)
        return cls(t0 + dt_epoch * np.arange(n_epochs), (grid,) * n_epochs, dt_epoch)


@dataclass(frozen=True)
class ThresholdPolicy:
    two_day_mm: float = 10.0
    daily_mm: float = 50.0

    def __post_init__(self):
        if self.two_day_mm <= 0 or self.daily_mm <= 0:
            raise ValueError("thresholds must be positive")


@dataclass
class EventReport:
    day_starts: list
    daily_mm: list
    two_day_mm: list
    daily_exceeded: list
    two_day_exceeded: list
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)

    @property
    def max_daily_mm(self) -> float:
        return max(self.daily_mm)

    @property
    def max_two_day_mm(self) -> float:
        return max(self.two_day_mm)

    @property
    def trigger(self) -> bool:
        return any(self.daily_exceeded) or any(self.two_day_exceeded)

    def to_dict(self) -> dict:
        return {
            "policy": {"two_day_mm": self.policy.two_day_mm, "daily_mm": self.policy.daily_mm},
            "days": [
                {
                    "day": i,
                    "t_start": t,
                    "daily_mm": d,
                    "two_day_mm": w,
                    "daily_exceeded": de,
                    "two_day_exceeded": we,
                }
                for i, (t, d, w, de, we) in enumerate(
                    zip(self.day_starts, self.daily_mm, self.two_day_mm, self.daily_exceeded, self.two_day_exceeded)
                )
            ],
            "max_daily_mm": self.max_daily_mm,
            "max_two_day_mm": self.max_two_day_mm,
            "trigger": self.trigger,
        }


def load_rain_series(manifest_path) -> RainSeries:
    """Load ``rain_<epoch_seconds>.asc`` grids listed beside a JSON manifest.

    The manifest holds ``{"dt_epoch": seconds, "unit": "mm/h"}``.
    """
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    unit = meta.get("unit", "mm/h")
    if unit != "mm/h":
        raise ValueError(f"unsupported rain unit {unit!r}; expected 'mm/h'")
    if "dt_epoch" not in meta:
        raise ValueError(f"{manifest_path}: manifest lacks 'dt_epoch'")
    entries = []
    for p in manifest_path.parent.iterdir():
        m = _RAIN_NAME.match(p.name)
        if m:
            entries.append((float(m.group(1)), p))
    if not entries:
        raise ValueError(f"no rain_<seconds>.asc grids next to {manifest_path}")
    entries.sort()
    return RainSeries([t for t, _ in entries], [read_esri_ascii(p) for _, p in entries], float(meta["dt_epoch"]))


def save_rain_series(series: RainSeries, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, g in zip(series.t_starts, series.grids):
        name = f"rain_{int(t)}.asc" if float(t).is_integer() else f"rain_{t!r}.asc"
        write_esri_ascii(g, directory / name)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"dt_epoch": series.dt_epoch, "unit": "mm/h"}))
    return manifest


def resample_rain(series: RainSeries, target_rows: int, target_cols: int) -> RainSeries:
    grids = [bilinear_resample(g, target_rows, target_cols) for g in series.grids]
    return RainSeries(series.t_starts, grids, series.dt_epoch)


def mask_extract(series: RainSeries, region: Mask) -> RainSeries:
    region.check_matches(series.shape)
    out = []
    for g in series.grids:
        vals = np.where(region.bits, g.values, g.transform.nodata_value)
        out.append(g.with_values(vals))
    return RainSeries(series.t_starts, out, series.dt_epoch)


def _epoch_depths(series: RainSeries) -> np.ndarray:
    """Area-mean rain depth (mm) delivered in each epoch over valid cells."""
    rates = series.rates()
    depth = rates.mean(axis=(1, 2)) * (series.dt_epoch / 3600.0)
    return np.ma.filled(depth, 0.0)


def accumulate(series: RainSeries, window: float):
    """Rolling area-mean accumulation over ``window`` seconds.

    Returns ``(t_end, depth_mm)``: one value per epoch end, summing the
    epochs whose intervals lie inside ``(t_end - window, t_end]``.
    """
    ratio = window / series.dt_epoch
    if window <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"window {window} s is not a positive multiple of dt_epoch {series.dt_epoch} s")
    w = int(round(ratio))
    depths = _epoch_depths(series)
    csum = np.concatenate([[0.0], np.cumsum(depths)])
    idx = np.arange(1, len(depths) + 1)
    acc = csum[idx] - csum[np.maximum(idx - w, 0)]
    return series.t_starts + series.dt_epoch, acc


def extreme_events(series: RainSeries, policy: ThresholdPolicy | None = None) -> EventReport:
    """Per-day rainfall flags against the daily and rolling 2-day thresholds.

    Days are consecutive 24 h blocks from the first epoch; an incomplete
    trailing day is dropped. The 2-day total for day ``d`` is the 48 h
    window ending at the close of day ``d`` (for day 0 only the available
    24 h). Exceedance is strict.
    """
    policy = policy or ThresholdPolicy()
    per_day = SECONDS_PER_DAY / series.dt_epoch
    if abs(per_day - round(per_day)) > 1e-9:
        raise ValueError("dt_epoch must divide one day")
    per_day = int(round(per_day))
    n_days = len(series) // per_day
    if n_days < 2:
        raise ValueError(f"series spans {len(series) * series.dt_epoch / 3600:.1f} h; need at least 2 days")
    depths = _epoch_depths(series)[: n_days * per_day]
    daily = depths.reshape(n_days, per_day).sum(axis=1)
    two_day = daily.copy()
    two_day[1:] += daily[:-1]
    return EventReport(
        day_starts=[float(series.t_starts[0] + d * SECONDS_PER_DAY) for d in range(n_days)],
        daily_mm=[float(v) for v in daily],
        two_day_mm=[float(v) for v in two_day],
        daily_exceeded=[bool(v > policy.daily_mm) for v in daily],
        two_day_exceeded=[bool(v > policy.two_day_mm) for v in two_day],
        policy=policy,
    )
