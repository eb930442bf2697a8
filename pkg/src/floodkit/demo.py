"""Synthetic input cases for trying the command line and for benchmarks."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .raster import GeoTransform, Grid2D, write_esri_ascii
from .swe import DAILY_INFLOW_M3S, Hydrograph


def valley_dem(rows: int = 64, cols: int = 64, cell_size: float = 480.0,
               down_slope: float = 2e-4, side_slope: float = 2e-3) -> Grid2D:
    """V-shaped valley falling from the north edge towards the south edge."""
    i = np.arange(rows)[:, None]
    j = np.arange(cols)[None, :]
    centre = (cols - 1) / 2.0
    z = 10.0 - down_slope * cell_size * i + side_slope * cell_size * np.abs(j - centre)
    return Grid2D(z, GeoTransform(0.0, 0.0, cell_size))


def write_valley_case(directory, rows: int = 64, cols: int = 64, cell_size: float = 480.0,
                      discharge: float = DAILY_INFLOW_M3S[0][1], duration: float = 6 * 3600.0,
                      snapshot_every: float = 300.0, manning: float = 0.035) -> Path:
    """Write DEM, inflow CSV and a run config; return the config path.

    The inflow enters through 10 faces centred on the valley floor at the
    north edge, with constant discharge.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_esri_ascii(valley_dem(rows, cols, cell_size), d / "dem.asc")
    Hydrograph.constant(discharge).to_csv(d / "inflow.csv")
    config = {
        "dem": "dem.asc",
        "manning_uniform": manning,
        "inflow": [{"csv": "inflow.csv", "side": "north", "n_faces": 10}],
        "scheme": {"theta": 0.7, "alpha": 0.7},
        "duration": duration,
        "snapshot_every": snapshot_every,
        "output_dir": "out",
    }
    path = d / "run.json"
    path.write_text(json.dumps(config, indent=2))
    return path
