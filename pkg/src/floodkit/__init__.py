"""Flood dynamics toolkit: shallow-water solver, derivative kernels, PDE
residual checks, satellite flood mapping and rainfall triggers."""

from .raster import GeoTransform, Grid2D, Mask, read_esri_ascii, write_esri_ascii
from .swe import BasinModel, BoundarySpec, Hydrograph, InflowSegment, SchemeParams, StaggeredState, simulate

__all__ = [
    "BasinModel",
    "BoundarySpec",
    "GeoTransform",
    "Grid2D",
    "Hydrograph",
    "InflowSegment",
    "Mask",
    "SchemeParams",
    "StaggeredState",
    "read_esri_ascii",
    "simulate",
    "write_esri_ascii",
]

__version__ = "0.1.0"
