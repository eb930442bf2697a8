"""Change-detection flood mapping, boundary-interpolated depth estimation
and accuracy metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .raster import (
    DegenerateRangeError,
    Grid2D,
    Mask,
    minmax_normalize,
    read_esri_ascii,
    slope_percent,
    write_esri_ascii,
)

DEFAULT_K = 1.65
DEPTH_THRESHOLDS = (0.0, 0.1, 0.5)
_EIGHT = np.ones((3, 3), dtype=int)


@dataclass(frozen=True, eq=False)
class FloodMap:
    """Flooded-pixel mask with the threshold that produced it and an
    append-only log of refinement steps as ``(rule, removed_count)``."""

    mask: Mask
    threshold_used: float
    scale_factor: float = 1.0
    refinement_log: tuple = ()
    transform: object = None

    @property
    def bits(self) -> np.ndarray:
        return self.mask.bits

    def count(self) -> int:
        return self.mask.count()

    def sidecar(self) -> dict:
        return {
            "threshold_used": self.threshold_used,
            "scale_factor": self.scale_factor,
            "refinement_log": [{"rule": r, "removed": n} for r, n in self.refinement_log],
        }


def _channels(img):
    if isinstance(img, Grid2D):
        return [img]
    return list(img)


def cva_difference(after, before, normalize: bool = True) -> Grid2D:
    """Mean over channels of squared differences, min-max scaled to [0, 1].

    ``after``/``before`` are a Grid2D or a sequence of per-channel Grid2Ds.
    Pixels that are nodata in any channel stay nodata. A difference layer
    without range (e.g. identical images) comes back as all zeros.
    """
    a, b = _channels(after), _channels(before)
    if len(a) != len(b) or not a:
        raise ValueError(f"channel mismatch: {len(a)} after vs {len(b)} before")
    shape = a[0].shape
    for g in a + b:
        if g.shape != shape:
            raise ValueError("all channels must share one shape")
    nodata = np.zeros(shape, dtype=bool)
    acc = np.zeros(shape)
    for ga, gb in zip(a, b):
        nodata |= ga.nodata | gb.nodata
        acc += (ga.values - gb.values) ** 2
    d = acc / len(a)
    tr = a[0].transform
    d[nodata] = tr.nodata_value
    out = Grid2D(d, tr)
    if not normalize:
        return out
    valid = d[~nodata]
    if valid.size and valid.max() == valid.min():
        return out.with_values(np.where(nodata, tr.nodata_value, 0.0))
    return minmax_normalize(out)


def mean_filter_3x3(grid: Grid2D) -> Grid2D:
    """3x3 moving average over valid neighbours (edges replicate)."""
    valid = (~grid.nodata).astype(float)
    vals = np.where(grid.nodata, 0.0, grid.values)
    num = ndimage.uniform_filter(vals, size=3, mode="nearest")
    den = ndimage.uniform_filter(valid, size=3, mode="nearest")
    out = np.where(grid.nodata | (den == 0), grid.transform.nodata_value, num / np.where(den == 0, 1, den))
    return grid.with_values(out)


def otsu_threshold(diff: Grid2D, bins: int = 256) -> float:
    """Otsu threshold on a [0, 1] layer, returned as a bin upper edge.

    Pixels ``>= threshold`` form the upper class. Class means use the actual
    pixel values, not bin centres. Ties go to the lower threshold.
    """
    v = diff.values[~diff.nodata]
    if v.size == 0:
        raise DegenerateRangeError("difference layer has no valid pixels")
    if v.min() < 0 or v.max() > 1:
        raise ValueError("difference layer must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    sums = np.bincount(idx, weights=v, minlength=bins)
    if np.count_nonzero(counts) < 2:
        raise DegenerateRangeError("difference layer occupies a single histogram bin")
    n = v.size
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    n1 = n - n0
    s1 = sums.sum() - s0
    ok = (n0 > 0) & (n1 > 0)
    between = np.full(bins - 1, -np.inf)
    mu0 = s0[ok] / n0[ok]
    mu1 = s1[ok] / n1[ok]
    between[ok] = (n0[ok] / n) * (n1[ok] / n) * (mu0 - mu1) ** 2
    k = int(np.argmax(between))  # first maximum -> lowest threshold
    return float(edges[k + 1])


def scaled_threshold(t_otsu: float, k: float = DEFAULT_K) -> float:
    if not k > 0:
        raise ValueError(f"scale factor must be positive, got {k}")
    return min(k * t_otsu, 1.0)


def classify(diff: Grid2D, t: float, scale_factor: float = 1.0) -> FloodMap:
    """Flag pixels with ``d >= t`` (nodata pixels are never flagged)."""
    bits = (diff.values >= t) & ~diff.nodata
    return FloodMap(Mask(bits), float(t), float(scale_factor), (), diff.transform)


def refine(
    fmap: FloodMap,
    dem: Grid2D,
    permanent_water: Grid2D | None = None,
    min_neighbors: int = 5,
    max_slope_percent: float = 5.0,
    max_water_months: float = 10.0,
) -> FloodMap:
    """Drop steep pixels, then permanent water, then weakly connected pixels.

    The connectivity rule runs once: a pixel survives only if at least
    ``min_neighbors`` of its 8 neighbours are flooded.
    """
    fmap.mask.check_matches(dem.shape)
    bits = fmap.bits.copy()
    log = list(fmap.refinement_log)

    slope = slope_percent(dem)
    steep = (slope.values > max_slope_percent) & ~slope.nodata
    log.append(("slope", int((bits & steep).sum())))
    bits &= ~steep

    if permanent_water is not None:
        fmap.mask.check_matches(permanent_water.shape)
        perm = (permanent_water.values > max_water_months) & ~permanent_water.nodata
        log.append(("permanent_water", int((bits & perm).sum())))
        bits &= ~perm

    kernel = _EIGHT.copy()
    kernel[1, 1] = 0
    neighbours = ndimage.convolve(bits.astype(int), kernel, mode="constant", cval=0)
    weak = bits & (neighbours < min_neighbors)
    log.append(("connectivity", int(weak.sum())))
    bits &= ~weak

    return FloodMap(Mask(bits), fmap.threshold_used, fmap.scale_factor, tuple(log), fmap.transform)


def _boundary_pixels(comp):
    padded = np.pad(comp, 1, constant_values=True)
    inner_all = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return comp & ~inner_all


def fwdet_depth(fmap: FloodMap, dem: Grid2D, k: int = 8, power: float = 2.0) -> Grid2D:
    """Depth from a water surface interpolated off each component's edge.

    For every 8-connected flooded component, the surface is the
    inverse-distance-weighted mean of the DEM at the ``k`` nearest boundary
    pixels (flooded pixels with a dry 4-neighbour). A component that fills
    the whole grid uses the grid-edge cells instead.
    """
    fmap.mask.check_matches(dem.shape)
    flooded = fmap.bits & ~dem.nodata
    labels, n_comp = ndimage.label(flooded, structure=_EIGHT)
    z = dem.values
    depth = np.zeros(dem.shape)
    for lab in range(1, n_comp + 1):
        comp = labels == lab
        edge = _boundary_pixels(comp)
        if not edge.any():
            edge = comp.copy()
            edge[1:-1, 1:-1] = False
        src = np.argwhere(edge)
        dst = np.argwhere(comp)
        kk = min(k, len(src))
        dist, nn = cKDTree(src).query(dst, k=kk)
        dist = dist.reshape(len(dst), kk)
        nn = nn.reshape(len(dst), kk)
        zb = z[src[:, 0], src[:, 1]][nn]
        exact = dist[:, 0] == 0
        w = np.where(exact[:, None], 0.0, 1.0 / np.where(dist == 0, 1.0, dist) ** power)
        surf = np.where(exact, zb[:, 0], (w * zb).sum(axis=1) / np.where(exact, 1.0, w.sum(axis=1)))
        depth[dst[:, 0], dst[:, 1]] = np.maximum(0.0, surf - z[dst[:, 0], dst[:, 1]])
    return dem.with_values(depth)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionMetrics:
    """Counts plus derived scores; a score with a zero denominator is None."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @staticmethod
    def _ratio(num, den):
        return None if den == 0 else num / den

    @property
    def oa(self):
        return self._ratio(self.tp + self.tn, self.total)

    @property
    def kappa(self):
        n = self.total
        if n == 0:
            return None
        po = (self.tp + self.tn) / n
        pe = ((self.tp + self.fp) * (self.tp + self.fn) + (self.fn + self.tn) * (self.fp + self.tn)) / (n * n)
        return self._ratio(po - pe, 1.0 - pe)

    @property
    def recall_flood(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def precision_flood(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall_nonflood(self):
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def precision_nonflood(self):
        return self._ratio(self.tn, self.tn + self.fn)

    def to_dict(self) -> dict:
        names = ("tp", "fp", "tn", "fn", "oa", "kappa", "recall_flood", "precision_flood",
                 "recall_nonflood", "precision_nonflood")
        return {n: getattr(self, n) for n in names}


def _bits(m):
    if isinstance(m, FloodMap):
        return m.bits
    if isinstance(m, Mask):
        return m.bits
    return np.asarray(m, dtype=bool)


def confusion_metrics(pred, ref) -> ConfusionMetrics:
    p, r = _bits(pred), _bits(ref)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs ref {r.shape}")
    return ConfusionMetrics(
        tp=int((p & r).sum()),
        fp=int((p & ~r).sum()),
        tn=int((~p & ~r).sum()),
        fn=int((~p & r).sum()),
    )


@dataclass
class DepthErrorEntry:
    threshold: float
    daily_mae: list
    daily_mape: list
    daily_count: list
    mae: float | None
    mape: float | None
    pixel_count: int

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class DepthErrorReport:
    entries: list = field(default_factory=list)
    mape_floor: float = 1e-3

    def at(self, threshold: float) -> DepthErrorEntry:
        for e in self.entries:
            if e.threshold == threshold:
                return e
        raise KeyError(threshold)

    def to_dict(self) -> dict:
        return {"mape_floor_m": self.mape_floor, "thresholds": [e.to_dict() for e in self.entries]}


def _as_arrays(series):
    if isinstance(series, Grid2D):
        series = [series]
    out = []
    for g in series:
        if isinstance(g, Grid2D):
            out.append(np.where(g.nodata, np.nan, g.values))
        else:
            out.append(np.asarray(g, dtype=float))
    return out


def _mean_or_none(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def depth_errors(pred, ref, thresholds=DEPTH_THRESHOLDS, mape_floor: float = 1e-3) -> DepthErrorReport:
    """MAE (m) and MAPE (%) per day and averaged over days, per threshold.

    At threshold ``tau`` the pixels with ``ref >= tau`` enter MAE; MAPE
    further requires ``ref >= mape_floor``. Overall values are the mean of
    the defined per-day values.
    """
    P, R = _as_arrays(pred), _as_arrays(ref)
    if len(P) != len(R):
        raise ValueError(f"series lengths differ: {len(P)} vs {len(R)}")
    for p, r in zip(P, R):
        if p.shape != r.shape:
            raise ValueError(f"shape mismatch: pred {p.shape} vs ref {r.shape}")
    report = DepthErrorReport(mape_floor=mape_floor)
    for tau in thresholds:
        maes, mapes, counts = [], [], []
        for p, r in zip(P, R):
            sel = np.isfinite(p) & np.isfinite(r) & (r >= tau)
            err = np.abs(p[sel] - r[sel])
            counts.append(int(sel.sum()))
            maes.append(float(err.mean()) if err.size else None)
            msel = sel & (r >= mape_floor)
            rel = np.abs(p[msel] - r[msel]) / r[msel]
            mapes.append(float(100.0 * rel.mean()) if rel.size else None)
        report.entries.append(
            DepthErrorEntry(float(tau), maes, mapes, counts, _mean_or_none(maes), _mean_or_none(mapes), sum(counts))
        )
    return report


# ---------------------------------------------------------------------------
# persistence


def save_flood_map(fmap: FloodMap, path, transform=None) -> Path:
    """Write a 0/1 ESRI ASCII grid and a JSON sidecar next to it."""
    path = Path(path)
    tr = transform or fmap.transform
    grid = Grid2D(fmap.bits.astype(float)) if tr is None else Grid2D(fmap.bits.astype(float), tr)
    write_esri_ascii(grid, path)
    side = path.with_suffix(".json")
    side.write_text(json.dumps(fmap.sidecar(), indent=2))
    return side


def load_flood_map(path) -> FloodMap:
    path = Path(path)
    grid = read_esri_ascii(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    log = tuple((e["rule"], int(e["removed"])) for e in meta.get("refinement_log", []))
    bits = (grid.values == 1.0) & ~grid.nodata
    return FloodMap(Mask(bits), float(meta["threshold_used"]), float(meta["scale_factor"]), log, grid.transform)
