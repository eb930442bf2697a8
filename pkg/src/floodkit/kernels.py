"""Spectral and fourth-order finite-difference derivatives on a rectangular
computational grid.

Arrays are indexed ``[..., eta, xi]``: the last two axes are the eta and xi
directions. Leading axes (e.g. time) are treated as a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AXES = {"eta": -2, "xi": -1}


def _axis_index(axis, ndim):
    if isinstance(axis, str):
        try:
            axis = AXES[axis]
        except KeyError:
            raise ValueError(f"axis must be 'eta', 'xi' or an int, got {axis!r}") from None
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for a {ndim}-D array")
    return axis % ndim


@dataclass(frozen=True, eq=False)
class SpectralPlan:
    """Wavenumbers for an ``n_eta`` x ``n_xi`` periodic grid.

    ``w_eta``/``w_xi`` hold the integer mode numbers in FFT storage order,
    so ``k_eta = 2*pi*w_eta/len_eta``. An axis of length 1 is inactive
    (a 1-D plan); derivatives along it are refused.
    """

    n_eta: int
    n_xi: int
    len_eta: float = 2 * np.pi
    len_xi: float = 2 * np.pi
    dealias: bool = False
    w_eta: np.ndarray = field(init=False, repr=False)
    w_xi: np.ndarray = field(init=False, repr=False)
    k_eta: np.ndarray = field(init=False, repr=False)
    k_xi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("n_eta", "n_xi"):
            n = getattr(self, name)
            if n != 1 and (n < 4 or n % 2):
                raise ValueError(f"{name} must be even and >= 4 (or 1 for an inactive axis), got {n}")
        if self.len_eta <= 0 or self.len_xi <= 0:
            raise ValueError("domain lengths must be positive")
        w_eta = np.rint(np.fft.fftfreq(self.n_eta) * self.n_eta).astype(int)
        w_xi = np.rint(np.fft.fftfreq(self.n_xi) * self.n_xi).astype(int)
        for name, val in (
            ("w_eta", w_eta),
            ("w_xi", w_xi),
            ("k_eta", 2 * np.pi * w_eta / self.len_eta),
            ("k_xi", 2 * np.pi * w_xi / self.len_xi),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def periodic_1d(cls, n: int, length: float = 2 * np.pi, dealias: bool = False) -> "SpectralPlan":
        return cls(1, n, 1.0, length, dealias)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_eta, self.n_xi)

    def spacing(self, axis) -> float:
        if _axis_index(axis, 2) == 0:
            return self.len_eta / self.n_eta
        return self.len_xi / self.n_xi

    def nodes(self, axis) -> np.ndarray:
        n = self.n_eta if _axis_index(axis, 2) == 0 else self.n_xi
        return np.arange(n) * self.spacing(axis)

    def mode_index(self, axis, w: int) -> int:
        """FFT storage index of mode number ``w`` along ``axis``."""
        modes = self.w_eta if _axis_index(axis, 2) == 0 else self.w_xi
        hits = np.flatnonzero(modes == w)
        if hits.size == 0:
            raise ValueError(f"mode {w} not representable on axis {axis!r}")
        return int(hits[0])

    def keep_mask(self) -> np.ndarray:
        """Boolean (n_eta, n_xi) array of modes that survive the 2/3 rule."""
        keep_eta = np.abs(self.w_eta) <= self.n_eta / 3
        keep_xi = np.abs(self.w_xi) <= self.n_xi / 3
        return keep_eta[:, None] & keep_xi[None, :]


def _check_plan_shape(arr, plan):
    if arr.ndim < 2 or arr.shape[-2:] != plan.shape:
        raise ValueError(f"field trailing shape {arr.shape[-2:]} does not match plan {plan.shape}")


def dealias_23(spectrum, plan: SpectralPlan) -> np.ndarray:
    """Zero every coefficient with ``|w_eta| > N_eta/3`` or ``|w_xi| > N_xi/3``."""
    spectrum = np.asarray(spectrum)
    _check_plan_shape(spectrum, plan)
    return np.where(plan.keep_mask(), spectrum, 0)


def fftps_derivative(field, axis, order: int, plan: SpectralPlan, dealias: bool | None = None) -> np.ndarray:
    """Pseudo-spectral derivative of a periodic field.

    ``order`` is 1 or 2. ``dealias`` defaults to ``plan.dealias``.
    """
    u = np.asarray(field, dtype=float)
    _check_plan_shape(u, plan)
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    ax = _axis_index(axis, 2)
    n_axis = plan.shape[ax]
    if n_axis == 1:
        raise ValueError(f"axis {axis!r} is inactive in this plan")

    k = plan.k_eta[:, None] if ax == 0 else plan.k_xi[None, :]
    factor = 1j * k if order == 1 else -(k**2)
    spec = np.fft.fft2(u) * factor
    if plan.dealias if dealias is None else dealias:
        spec = dealias_23(spec, plan)
    return np.fft.ifft2(spec).real


# third-order one-sided first-derivative weights on nodes 0..3 (over 6h)
_ONE_SIDED_D1 = (-11.0, 18.0, -9.0, 2.0)
# one-sided second-derivative weights on nodes 0..4 (over 12h^2)
_ONE_SIDED_D2 = (35.0, -104.0, 114.0, -56.0, 11.0)


def fd4_derivative(field, axis, spacing: float) -> np.ndarray:
    """First derivative: 5-point fourth-order central stencil in the interior,
    third-order one-sided stencils on the two nodes nearest each end."""
    u = np.asarray(field, dtype=float)
    ax = _axis_index(axis, u.ndim)
    u = np.moveaxis(u, ax, -1)
    n = u.shape[-1]
    if n < 5:
        raise ValueError(f"fd4 needs at least 5 nodes along the axis, got {n}")
    h = float(spacing)
    d = np.empty_like(u)
    d[..., 2:-2] = (-u[..., 4:] + 8 * u[..., 3:-1] - 8 * u[..., 1:-3] + u[..., :-4]) / (12 * h)
    w = _ONE_SIDED_D1
    for i in (0, 1):
        d[..., i] = (w[0] * u[..., i] + w[1] * u[..., i + 1] + w[2] * u[..., i + 2] + w[3] * u[..., i + 3]) / (6 * h)
        j = n - 1 - i
        d[..., j] = -(w[0] * u[..., j] + w[1] * u[..., j - 1] + w[2] * u[..., j - 2] + w[3] * u[..., j - 3]) / (6 * h)
    return np.moveaxis(d, -1, ax)


def fd4_second_derivative(field, axis, spacing: float) -> np.ndarray:
    """Second derivative with the fourth-order 5-point central stencil and
    one-sided 5-point stencils near the ends."""
    u = np.asarray(field, dtype=float)
    ax = _axis_index(axis, u.ndim)
    u = np.moveaxis(u, ax, -1)
    n = u.shape[-1]
    if n < 5:
        raise ValueError(f"fd4 needs at least 5 nodes along the axis, got {n}")
    h2 = float(spacing) ** 2
    d = np.empty_like(u)
    d[..., 2:-2] = (-u[..., 4:] + 16 * u[..., 3:-1] - 30 * u[..., 2:-2] + 16 * u[..., 1:-3] - u[..., :-4]) / (12 * h2)
    w = _ONE_SIDED_D2
    for i in (0, 1):
        d[..., i] = sum(w[m] * u[..., i + m] for m in range(5)) / (12 * h2)
        j = n - 1 - i
        d[..., j] = sum(w[m] * u[..., j - m] for m in range(5)) / (12 * h2)
    return np.moveaxis(d, -1, ax)
