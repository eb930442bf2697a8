"""PDE residual evaluators for candidate space-time fields.

Nothing here trains anything: each evaluator takes fields from any source
(an analytic formula, the solver, a learned model) and measures how far
they are from satisfying the governing equations. Temporal derivatives use
the fd4 stencil along axis 0; spatial derivatives use fd4 or the
pseudo-spectral kernel.

Norms are taken over the interior: the two nodes nearest each end of every
fd4-differentiated axis are excluded, since their one-sided stencils are
only third order. L2 norms are root-mean-square values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import SpectralPlan, fd4_derivative, fftps_derivative
from .mesh import CurvilinearMesh, physical_gradient
from .raster import Mask
from .swe import BasinModel, SchemeParams, rain_rate_at


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Values on a (time, rows, cols) lattice with uniform step ``dt``.

    ``domain`` describes the spatial lattice: a SpectralPlan, a
    CurvilinearMesh, a float grid spacing, or None.
    """

    values: np.ndarray
    dt: float
    domain: object = None
    t0: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError(f"values must be (time, rows, cols), got shape {v.shape}")
        if v.shape[0] < 5:
            raise ValueError(f"need at least 5 time levels for the fd4 time derivative, got {v.shape[0]}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if isinstance(self.domain, (SpectralPlan, CurvilinearMesh)) and v.shape[1:] != self.domain.shape:
            raise ValueError(f"spatial shape {v.shape[1:]} does not match domain {self.domain.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def with_values(self, values) -> "SpaceTimeField":
        return SpaceTimeField(values, self.dt, self.domain, self.t0)

    def time_derivative(self) -> np.ndarray:
        return fd4_derivative(self.values, 0, self.dt)


@dataclass(frozen=True)
class ResidualReport:
    pde_max: float
    pde_l2: float
    ic_l2: float
    bc_l2: float
    masked_fraction: float
    lam: float
    weighted_total: float

    def to_dict(self) -> dict:
        return {
            "pde_max": self.pde_max,
            "pde_l2": self.pde_l2,
            "ic_l2": self.ic_l2,
            "bc_l2": self.bc_l2,
            "masked_fraction": self.masked_fraction,
            "lambda": self.lam,
            "weighted_total": self.weighted_total,
        }


def _rms(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sqrt(np.mean(a * a))) if a.size else 0.0


def _interior(arr, trim_axes):
    sl = [slice(None)] * arr.ndim
    for ax in trim_axes:
        sl[ax] = slice(2, arr.shape[ax] - 2) if arr.shape[ax] > 4 else slice(None)
    return arr[tuple(sl)]


def _norms(parts, valid=None):
    """Max and RMS over several residual arrays (optionally masked)."""
    vals = []
    for p in parts:
        vals.append(p[valid] if valid is not None else p.ravel())
    allv = np.concatenate(vals) if vals else np.zeros(0)
    if allv.size == 0:
        return 0.0, 0.0
    return float(np.max(np.abs(allv))), _rms(allv)


# ---------------------------------------------------------------------------
# convection


def convection_analytic(beta: float, nt: int, T: float, plan: SpectralPlan, initial=np.sin) -> SpaceTimeField:
    """Exact solution of ``u_t + beta*u_x = 0`` on a periodic 1-D plan,
    obtained by translating the Fourier coefficients of ``initial``."""
    if plan.n_eta != 1:
        raise ValueError("convection_analytic needs a 1-D plan (n_eta = 1)")
    if nt < 5:
        raise ValueError("nt must be >= 5")
    x = plan.nodes("xi")
    t = np.linspace(0.0, T, nt)
    spec = np.fft.fft(initial(x))
    phase = np.exp(-1j * beta * plan.k_xi[None, :] * t[:, None])
    u = np.fft.ifft(spec[None, :] * phase, axis=-1).real
    return SpaceTimeField(u[:, None, :], t[1] - t[0], plan, 0.0)


@dataclass(frozen=True, eq=False)
class ConvectionResidual:
    residual: np.ndarray
    report: ResidualReport

    @property
    def max_norm(self) -> float:
        return self.report.pde_max


def _periodic_end_value(u):
    """Cubic extrapolation of the last four nodes to x = L."""
    return -u[..., -4] + 4 * u[..., -3] - 6 * u[..., -2] + 4 * u[..., -1]


def convection_residual(
    u: SpaceTimeField, beta: float, scheme: str = "fftps", initial=np.sin, lam: float = 1.0
) -> ConvectionResidual:
    """Residual ``u_t + beta*u_x`` of a 1-D field stored as (nt, 1, N).

    The IC mismatch compares ``u(x, 0)`` with ``initial(x)``; the BC
    mismatch compares ``u(0, t)`` with ``u(2*pi, t)`` extrapolated from the
    last four nodes. ``weighted_total = ic_l2 + bc_l2 + lam * pde_l2``.
    """
    plan = u.domain
    if not isinstance(plan, SpectralPlan) or plan.n_eta != 1:
        raise ValueError("convection_residual needs a field on a 1-D SpectralPlan")
    vals = u.values
    u_t = u.time_derivative()
    if scheme == "fftps":
        u_x = np.stack([fftps_derivative(frame, "xi", 1, plan) for frame in vals])
        trim = (0,)
    elif scheme == "fd4":
        u_x = fd4_derivative(vals, -1, plan.spacing("xi"))
        trim = (0, 2)
    else:
        raise ValueError(f"scheme must be 'fftps' or 'fd4', got {scheme!r}")
    res = u_t + beta * u_x
    pde_max, pde_l2 = _norms([_interior(res, trim)])
    ic = _rms(vals[0, 0] - initial(plan.nodes("xi")))
    bc = _rms(vals[:, 0, 0] - _periodic_end_value(vals[:, 0, :]))
    report = ResidualReport(pde_max, pde_l2, ic, bc, 0.0, lam, ic + bc + lam * pde_l2)
    return ConvectionResidual(res, report)


def temporal_order(errors, dts) -> float:
    """Observed order from the first and last (error, step) pairs."""
    return math.log(errors[0] / errors[-1]) / math.log(dts[0] / dts[-1])


# ---------------------------------------------------------------------------
# shallow water


@dataclass(frozen=True, eq=False)
class SWEResidual:
    continuity: np.ndarray
    momentum_x: np.ndarray
    momentum_y: np.ndarray
    masked: np.ndarray  # True where momentum residuals are not evaluated
    report: ResidualReport
    continuity_max: float
    momentum_max: float


def swe_residual(
    h: SpaceTimeField,
    qx: SpaceTimeField,
    qy: SpaceTimeField,
    model: BasinModel,
    rain=None,
    params: SchemeParams | None = None,
    lam: float = 10.0,
    h_initial=None,
) -> SWEResidual:
    """Continuity and momentum residuals of cell-centred depth/discharge fields.

    x runs along columns and y along rows, both with spacing
    ``model.dx``. Momentum residuals are masked where ``h <= h_flow_min``.
    ``rain`` is a mm/h RainSeries sampled at each time level.
    ``weighted_total = lam * ic_l2 + pde_l2`` with ``ic_l2`` comparing the
    first depth frame against ``h_initial`` (zero when not given).
    """
    params = params or SchemeParams()
    if not (h.shape == qx.shape == qy.shape):
        raise ValueError(f"field shapes differ: h {h.shape}, qx {qx.shape}, qy {qy.shape}")
    if h.shape[1:] != model.shape:
        raise ValueError(f"field spatial shape {h.shape[1:]} does not match model {model.shape}")
    if not (h.dt == qx.dt == qy.dt):
        raise ValueError("fields must share one time step")
    dx, g = model.dx, model.gravity
    H, QX, QY = h.values, qx.values, qy.values

    if rain is None:
        r = np.zeros_like(H)
    else:
        r = np.stack([rain_rate_at(rain, t) for t in h.times])
    cont = (
        h.time_derivative()
        + fd4_derivative(QX, -1, dx)
        + fd4_derivative(QY, -2, dx)
        - r
        + model.infil[None]
    )

    eta = H + model.z[None]
    wet = H > params.h_flow_min
    h_safe = np.where(wet, H, 1.0)
    qnorm = np.sqrt(QX * QX + QY * QY)
    fric = g * model.n[None] ** 2 * qnorm / h_safe ** (7.0 / 3.0)
    mom_x = qx.time_derivative() + g * H * fd4_derivative(eta, -1, dx) + fric * QX
    mom_y = qy.time_derivative() + g * H * fd4_derivative(eta, -2, dx) + fric * QY
    mom_x = np.where(wet, mom_x, 0.0)
    mom_y = np.where(wet, mom_y, 0.0)

    trim = (0, 1, 2)
    c_in = _interior(cont, trim)
    mx_in, my_in = _interior(mom_x, trim), _interior(mom_y, trim)
    wet_in = _interior(wet, trim)
    c_max, _ = _norms([c_in])
    m_max, _ = _norms([mx_in, my_in], wet_in)
    pde_max, pde_l2 = _norms([c_in.ravel(), mx_in[wet_in], my_in[wet_in]])
    masked_fraction = float(1.0 - wet_in.mean()) if wet_in.size else 0.0
    ic = 0.0 if h_initial is None else _rms(H[0] - np.asarray(h_initial, dtype=float))
    report = ResidualReport(pde_max, pde_l2, ic, 0.0, masked_fraction, lam, lam * ic + pde_l2)
    return SWEResidual(cont, mom_x, mom_y, ~wet, report, c_max, m_max)


def snapshots_to_fields(states, dt: float, cell_size: float):
    """(h, qx, qy) SpaceTimeFields from equally spaced solver states,
    using cell-centred face averages for the discharges."""
    hs, qxs, qys = [], [], []
    for s in states:
        cx, cy = s.centred_discharge()
        hs.append(s.h)
        qxs.append(cx)
        qys.append(cy)
    t0 = float(states[0].t)
    return tuple(SpaceTimeField(np.stack(a), dt, float(cell_size), t0) for a in (hs, qxs, qys))


# ---------------------------------------------------------------------------
# steady incompressible Navier-Stokes on a mapped mesh


@dataclass(frozen=True, eq=False)
class NSResidual:
    continuity: np.ndarray
    momentum_x: np.ndarray
    momentum_y: np.ndarray
    report: ResidualReport


def ns_residual(vx, vy, p, mesh: CurvilinearMesh, nu: float, second_form: str = "composed") -> NSResidual:
    """Residuals of div v = 0 and (v.grad)v + grad p - nu*lap v = 0.

    All derivatives go through :func:`physical_gradient`; the Laplacian uses
    ``second_form`` (composed first derivatives by default, which stay
    consistent on curved meshes).
    """
    vx, vy, p = (np.asarray(a, dtype=float) for a in (vx, vy, p))

    def d(f, axis):
        return physical_gradient(f, mesh, axis, 1)

    def lap(f):
        return physical_gradient(f, mesh, "x", 2, second_form) + physical_gradient(f, mesh, "y", 2, second_form)

    vx_x, vx_y, vy_x, vy_y = d(vx, "x"), d(vx, "y"), d(vy, "x"), d(vy, "y")
    cont = vx_x + vy_y
    mom_x = vx * vx_x + vy * vx_y + d(p, "x") - nu * lap(vx)
    mom_y = vx * vy_x + vy * vy_y + d(p, "y") - nu * lap(vy)
    trim = (0, 1)
    parts = [_interior(a, trim) for a in (cont, mom_x, mom_y)]
    pde_max, pde_l2 = _norms(parts)
    report = ResidualReport(pde_max, pde_l2, 0.0, 0.0, 0.0, 1.0, pde_l2)
    return NSResidual(cont, mom_x, mom_y, report)


# ---------------------------------------------------------------------------
# boundary encoding and marching windows


def hard_encode_bc(field: SpaceTimeField, bc_mask: Mask, bc_values) -> SpaceTimeField:
    """Overwrite masked nodes with prescribed values at every time level.

    ``bc_values`` may be shaped (nt,) for one value per time level,
    (nt, n_masked) for per-node values in row-major mask order, or
    (nt, rows, cols) with finite entries at every masked node.
    """
    bc_mask.check_matches(field.shape[1:])
    bits = bc_mask.bits
    out = np.array(field.values)
    if not bits.any():
        return field.with_values(out)
    vals = np.asarray(bc_values, dtype=float)
    nt, n_masked = field.nt, int(bits.sum())
    if vals.ndim == 0:
        vals = np.full(nt, float(vals))
    if vals.shape == (nt,):
        out[:, bits] = vals[:, None]
    elif vals.shape == (nt, n_masked):
        out[:, bits] = vals
    elif vals.shape == field.shape:
        sub = vals[:, bits]
        if not np.all(np.isfinite(sub)):
            raise ValueError("bc_values lack a finite value for some masked node")
        out[:, bits] = sub
    else:
        raise ValueError(
            f"bc_values shape {vals.shape} fits none of {(nt,)}, {(nt, n_masked)}, {field.shape}"
        )
    return field.with_values(out)


@dataclass(frozen=True)
class SequenceSchedule:
    total_steps: int
    window: int
    windows: tuple

    def __len__(self):
        return len(self.windows)

    def initial_index(self, i: int) -> int:
        """Time index whose state seeds window ``i``: the previous window's
        end state, i.e. this window's start."""
        return self.windows[i][0]


def sequence_windows(total_steps: int, window: int) -> SequenceSchedule:
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    if total_steps < 0:
        raise ValueError("total_steps must be >= 0")
    wins = tuple((s, min(s + window, total_steps)) for s in range(0, total_steps, window))
    return SequenceSchedule(total_steps, window, wins)
