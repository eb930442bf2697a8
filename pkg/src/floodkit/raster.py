"""Raster data model and ESRI ASCII grid I/O.

Row 0 of every array is the northernmost row (image convention) while
``GeoTransform.y_origin`` is the lower-left corner, as in the ESRI header.
All other modules inherit this layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_NODATA = -9999.0

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


class RasterFormatError(ValueError):
    """Malformed ESRI ASCII header or body."""


class TruncationError(RasterFormatError):
    """Value count in an ESRI ASCII body does not match its header."""


class DegenerateRangeError(ValueError):
    """A grid has fewer than two distinct valid values."""


@dataclass(frozen=True)
class GeoTransform:
    x_origin: float = 0.0
    y_origin: float = 0.0
    cell_size: float = 1.0
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")


def _frozen(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Immutable georeferenced 2-D raster of 64-bit reals."""

    values: np.ndarray
    transform: GeoTransform = field(default_factory=GeoTransform)

    def __post_init__(self):
        arr = _frozen(self.values, np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Grid2D needs a 2-D array, got shape {arr.shape}")
        valid = arr[arr != self.transform.nodata_value]
        if not np.all(np.isfinite(valid)):
            raise ValueError("Grid2D values must be finite outside nodata cells")
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def cell_size(self) -> float:
        return self.transform.cell_size

    @property
    def nodata(self) -> np.ndarray:
        """Boolean array, True where the cell holds the nodata sentinel."""
        return self.values == self.transform.nodata_value

    def with_values(self, values) -> "Grid2D":
        return Grid2D(values, self.transform)

    def masked(self) -> np.ma.MaskedArray:
        return np.ma.masked_array(self.values, mask=self.nodata)


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.bits, bool)
        if arr.ndim != 2:
            raise ValueError(f"Mask needs a 2-D array, got shape {arr.shape}")
        object.__setattr__(self, "bits", arr)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def check_matches(self, grid_shape) -> None:
        if tuple(grid_shape) != self.shape:
            raise ValueError(f"mask shape {self.shape} does not match grid shape {tuple(grid_shape)}")


def read_esri_ascii(path) -> Grid2D:
    """Read an ESRI ASCII grid.

    The five geometry keys must appear in the canonical order; the
    ``NODATA_value`` line is optional and defaults to -9999.
    """
    lines = Path(path).read_text().splitlines()
    header = {}
    pos = 0
    for key in _HEADER_KEYS + ("nodata_value",):
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise RasterFormatError(f"{path}: missing header line for {key!r}")
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0].lower() != key:
            if key == "nodata_value":
                break
            raise RasterFormatError(
                f"{path}: line {pos + 1}: expected {key!r}, got {lines[pos].strip()!r}"
            )
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise RasterFormatError(
                f"{path}: line {pos + 1}: bad number for {key!r}: {parts[1]!r}"
            ) from None
        pos += 1

    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise RasterFormatError(f"{path}: ncols/nrows must be positive integers")
    ncols, nrows = int(ncols), int(nrows)

    body = " ".join(lines[pos:]).split()
    if len(body) != nrows * ncols:
        raise TruncationError(
            f"{path}: header declares {nrows}x{ncols}={nrows * ncols} values "
            f"but {len(body)} present"
        )
    try:
        values = np.array([float(v) for v in body], dtype=np.float64)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-numeric value in body ({exc})") from None

    transform = GeoTransform(
        header["xllcorner"],
        header["yllcorner"],
        header["cellsize"],
        header.get("nodata_value", DEFAULT_NODATA),
    )
    return Grid2D(values.reshape(nrows, ncols), transform)


def write_esri_ascii(grid: Grid2D, path) -> None:
    """Write ``grid`` with 17 significant digits so a re-read is bit-exact."""
    tr = grid.transform
    out = [
        f"ncols {grid.cols}",
        f"nrows {grid.rows}",
        f"xllcorner {tr.x_origin!r}",
        f"yllcorner {tr.y_origin!r}",
        f"cellsize {tr.cell_size!r}",
        f"NODATA_value {tr.nodata_value!r}",
    ]
    for row in grid.values:
        out.append(" ".join("%.17g" % v for v in row))
    Path(path).write_text("\n".join(out) + "\n")


def bilinear_resample(grid: Grid2D, target_rows: int, target_cols: int) -> Grid2D:
    """Resample onto a ``target_rows`` x ``target_cols`` lattice over the same extent.

    Sampling is corner-aligned: the first and last output nodes coincide with
    the first and last input nodes along each axis. An output cell whose
    interpolation support touches nodata becomes nodata.
    """
    if target_rows < 2 or target_cols < 2:
        raise ValueError(f"target dims must be >= 2x2, got {target_rows}x{target_cols}")
    if grid.rows < 2 or grid.cols < 2:
        raise ValueError("source grid must be at least 2x2")

    nodata = grid.nodata
    src = np.where(nodata, 0.0, grid.values)

    def axis_weights(n_src, n_dst):
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
        i0 = np.minimum(np.floor(pos).astype(int), n_src - 2)
        return i0, pos - i0

    r0, fr = axis_weights(grid.rows, target_rows)
    c0, fc = axis_weights(grid.cols, target_cols)
    R0, C0 = np.meshgrid(r0, c0, indexing="ij")
    FR, FC = np.meshgrid(fr, fc, indexing="ij")

    # Lerp form a + f*(b - a) keeps constant fields exactly constant.
    v00, v01 = src[R0, C0], src[R0, C0 + 1]
    v10, v11 = src[R0 + 1, C0], src[R0 + 1, C0 + 1]
    top = v00 + FC * (v01 - v00)
    bottom = v10 + FC * (v11 - v10)
    out = top + FR * (bottom - top)
    bad = np.zeros((target_rows, target_cols), dtype=bool)
    for ri, ci, w in (
        (R0, C0, (1 - FR) * (1 - FC)),
        (R0, C0 + 1, (1 - FR) * FC),
        (R0 + 1, C0, FR * (1 - FC)),
        (R0 + 1, C0 + 1, FR * FC),
    ):
        bad |= (w > 0) & nodata[ri, ci]

    tr = grid.transform
    out[bad] = tr.nodata_value
    new_size = tr.cell_size * grid.cols / target_cols
    return Grid2D(out, GeoTransform(tr.x_origin, tr.y_origin, new_size, tr.nodata_value))


def minmax_normalize(grid: Grid2D) -> Grid2D:
    valid = ~grid.nodata
    vals = grid.values[valid]
    if vals.size == 0:
        raise DegenerateRangeError("grid has no valid cells")
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        raise DegenerateRangeError(f"grid is constant ({lo}); min-max range is zero")
    out = grid.values.copy()
    out[valid] = (vals - lo) / (hi - lo)
    return grid.with_values(out)


def slope_percent(dem: Grid2D) -> Grid2D:
    """Percent slope from central differences (one-sided on the outer ring).

    Cells that are nodata, or whose stencil reaches a nodata cell, come
    back as nodata.
    """
    z = np.where(dem.nodata, np.nan, dem.values)
    dz_dy, dz_dx = np.gradient(z, dem.cell_size, edge_order=1)
    slope = 100.0 * np.hypot(dz_dx, dz_dy)
    slope[~np.isfinite(slope)] = dem.transform.nodata_value
    return dem.with_values(slope)
