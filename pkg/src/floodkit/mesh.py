"""Curvilinear meshes and derivatives mapped from the computational
(eta, xi) grid to physical (x, y) space."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import fd4_derivative, fd4_second_derivative

log = logging.getLogger(__name__)


class FoldedMeshError(ValueError):
    """The mapping has a non-positive Jacobian somewhere."""


class SingularMappingError(ValueError):
    """A derivative was requested on a mesh with J <= 0."""


@dataclass(frozen=True, eq=False)
class CurvilinearMesh:
    """Physical node coordinates on an ``n_eta`` x ``n_xi`` computational grid.

    Metric fields are fd4 derivatives of ``x`` and ``y`` with computational
    steps ``d_eta`` and ``d_xi``; ``jac = x_eta*y_xi - x_xi*y_eta``.
    """

    x: np.ndarray
    y: np.ndarray
    d_eta: float = 1.0
    d_xi: float = 1.0
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    dx_deta: np.ndarray = field(init=False, repr=False)
    dx_dxi: np.ndarray = field(init=False, repr=False)
    dy_deta: np.ndarray = field(init=False, repr=False)
    dy_dxi: np.ndarray = field(init=False, repr=False)
    jac: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim != 2 or x.shape != y.shape:
            raise ValueError("x and y must be 2-D arrays of equal shape")
        metrics = {
            "x": x,
            "y": y,
            "dx_deta": fd4_derivative(x, "eta", self.d_eta),
            "dx_dxi": fd4_derivative(x, "xi", self.d_xi),
            "dy_deta": fd4_derivative(y, "eta", self.d_eta),
            "dy_dxi": fd4_derivative(y, "xi", self.d_xi),
        }
        metrics["jac"] = metrics["dx_deta"] * metrics["dy_dxi"] - metrics["dx_dxi"] * metrics["dy_deta"]
        for name, arr in metrics.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape

    @property
    def n_eta(self) -> int:
        return self.x.shape[0]

    @property
    def n_xi(self) -> int:
        return self.x.shape[1]

    @classmethod
    def identity(cls, n_eta: int, n_xi: int, d_eta: float = 1.0, d_xi: float = 1.0) -> "CurvilinearMesh":
        eta = np.arange(n_eta) * d_eta
        xi = np.arange(n_xi) * d_xi
        x, y = np.meshgrid(eta, xi, indexing="ij")
        return cls(x, y, d_eta, d_xi)

    @classmethod
    def from_mapping(cls, func, n_eta: int, n_xi: int, d_eta: float = 1.0, d_xi: float = 1.0) -> "CurvilinearMesh":
        """Build a mesh from an analytic map ``(eta, xi) -> (x, y)``."""
        eta, xi = np.meshgrid(np.arange(n_eta) * d_eta, np.arange(n_xi) * d_xi, indexing="ij")
        x, y = func(eta, xi)
        return cls(x, y, d_eta, d_xi)

    def fields(self) -> dict[str, np.ndarray]:
        names = ("x", "y", "jac", "dx_deta", "dx_dxi", "dy_deta", "dy_dxi")
        return {n: getattr(self, n) for n in names}


# ---------------------------------------------------------------------------
# elliptic generation


@dataclass(frozen=True)
class MeshBoundary:
    """Four boundary polylines of the physical domain, each an (n, 2) array.

    ``eta_min``/``eta_max`` are the curves at the first/last eta index
    (sampled along xi, length ``n_xi``); ``xi_min``/``xi_max`` are the curves
    at the first/last xi index (sampled along eta, length ``n_eta``).
    """

    eta_min: np.ndarray
    eta_max: np.ndarray
    xi_min: np.ndarray
    xi_max: np.ndarray

    def __post_init__(self):
        for name in ("eta_min", "eta_max", "xi_min", "xi_max"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError(f"{name} must be an (n, 2) array of points")
            object.__setattr__(self, name, arr)

    @property
    def n_eta(self) -> int:
        return len(self.xi_min)

    @property
    def n_xi(self) -> int:
        return len(self.eta_min)

    def check_corners(self, atol: float = 1e-12) -> None:
        pairs = (
            ("eta_min[0]", self.eta_min[0], "xi_min[0]", self.xi_min[0]),
            ("eta_min[-1]", self.eta_min[-1], "xi_max[0]", self.xi_max[0]),
            ("eta_max[0]", self.eta_max[0], "xi_min[-1]", self.xi_min[-1]),
            ("eta_max[-1]", self.eta_max[-1], "xi_max[-1]", self.xi_max[-1]),
        )
        for na, a, nb, b in pairs:
            if not np.allclose(a, b, atol=atol, rtol=0):
                raise ValueError(f"boundary corners disagree: {na}={a} vs {nb}={b}")

    @classmethod
    def from_json(cls, path) -> "MeshBoundary":
        data = json.loads(Path(path).read_text())
        return cls(*(data[k] for k in ("eta_min", "eta_max", "xi_min", "xi_max")))

    def to_json(self, path) -> None:
        data = {k: getattr(self, k).tolist() for k in ("eta_min", "eta_max", "xi_min", "xi_max")}
        Path(path).write_text(json.dumps(data))


def rectangle_boundary(x0, x1, y0, y1, n_eta, n_xi) -> MeshBoundary:
    """Uniformly sampled rectangle, eta along x and xi along y."""
    xs = np.linspace(x0, x1, n_eta)
    ys = np.linspace(y0, y1, n_xi)
    return MeshBoundary(
        eta_min=np.column_stack([np.full(n_xi, x0), ys]),
        eta_max=np.column_stack([np.full(n_xi, x1), ys]),
        xi_min=np.column_stack([xs, np.full(n_eta, y0)]),
        xi_max=np.column_stack([xs, np.full(n_eta, y1)]),
    )


def channel_boundary(length, width, amplitude, n_eta, n_xi, waves=1.0) -> MeshBoundary:
    """Channel along x whose side walls are sinusoids of the given amplitude."""
    xs = np.linspace(0.0, length, n_eta)
    wall = amplitude * np.sin(2 * np.pi * waves * xs / length)
    bottom = np.column_stack([xs, wall])
    top = np.column_stack([xs, width + wall])
    left = np.column_stack([np.zeros(n_xi), np.linspace(wall[0], width + wall[0], n_xi)])
    right = np.column_stack([np.full(n_xi, length), np.linspace(wall[-1], width + wall[-1], n_xi)])
    return MeshBoundary(eta_min=left, eta_max=right, xi_min=bottom, xi_max=top)


def _transfinite(b: MeshBoundary):
    n_eta, n_xi = b.n_eta, b.n_xi
    s = np.linspace(0.0, 1.0, n_eta)[:, None]
    t = np.linspace(0.0, 1.0, n_xi)[None, :]
    out = []
    for c in (0, 1):
        left, right = b.eta_min[:, c][None, :], b.eta_max[:, c][None, :]
        bottom, top = b.xi_min[:, c][:, None], b.xi_max[:, c][:, None]
        corners = (
            (1 - s) * (1 - t) * b.eta_min[0, c]
            + (1 - s) * t * b.eta_min[-1, c]
            + s * (1 - t) * b.eta_max[0, c]
            + s * t * b.eta_max[-1, c]
        )
        out.append((1 - s) * left + s * right + (1 - t) * bottom + t * top - corners)
    return out


def _coefficients(x, y, de, dx):
    x_e = (x[2:, 1:-1] - x[:-2, 1:-1]) / (2 * de)
    y_e = (y[2:, 1:-1] - y[:-2, 1:-1]) / (2 * de)
    x_x = (x[1:-1, 2:] - x[1:-1, :-2]) / (2 * dx)
    y_x = (y[1:-1, 2:] - y[1:-1, :-2]) / (2 * dx)
    alpha = x_x**2 + y_x**2
    gamma = x_e**2 + y_e**2
    beta = x_e * x_x + y_e * y_x
    return alpha, beta, gamma


def _correction(u, alpha, beta, gamma, de, dx):
    """Node update implied by one Gauss-Seidel step at every interior node."""
    cross = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * de * dx)
    ae, gx = alpha / de**2, gamma / dx**2
    target = (ae * (u[2:, 1:-1] + u[:-2, 1:-1]) + gx * (u[1:-1, 2:] + u[1:-1, :-2]) - 2 * beta * cross) / (2 * (ae + gx))
    return target - u[1:-1, 1:-1]


def _sweep(u, alpha, beta, gamma, de, dx, omega):
    # four-colour ordering: same-colour nodes share no stencil entries
    n_eta, n_xi = u.shape
    ae, gx = alpha / de**2, gamma / dx**2
    diag = 2 * (ae + gx)
    for pi in (1, 0):
        for pj in (1, 0):
            i0 = 1 if pi else 2
            j0 = 1 if pj else 2
            if i0 > n_eta - 2 or j0 > n_xi - 2:
                continue
            I = slice(i0, n_eta - 1, 2)
            J = slice(j0, n_xi - 1, 2)
            Ip = slice(i0 + 1, n_eta, 2)
            Im = slice(i0 - 1, n_eta - 2, 2)
            Jp = slice(j0 + 1, n_xi, 2)
            Jm = slice(j0 - 1, n_xi - 2, 2)
            ci = slice(i0 - 1, n_eta - 2, 2)
            cj = slice(j0 - 1, n_xi - 2, 2)
            cross = (u[Ip, Jp] - u[Ip, Jm] - u[Im, Jp] + u[Im, Jm]) / (4 * de * dx)
            target = (
                ae[ci, cj] * (u[Ip, J] + u[Im, J]) + gx[ci, cj] * (u[I, Jp] + u[I, Jm]) - 2 * beta[ci, cj] * cross
            ) / diag[ci, cj]
            u[I, J] += omega * (target - u[I, J])


def elliptic_mesh(
    boundary: MeshBoundary,
    n_eta: int | None = None,
    n_xi: int | None = None,
    tol: float = 1e-8,
    max_iter: int = 50_000,
    d_eta: float = 1.0,
    d_xi: float = 1.0,
    omega: float = 1.0,
) -> CurvilinearMesh:
    """Solve ``alpha*x_ee - 2*beta*x_ex + gamma*x_xx = 0`` (same for y) with the
    boundary curves as Dirichlet data.

    Picard iteration: alpha, beta, gamma are frozen from the current iterate
    for each Gauss-Seidel sweep (``omega`` > 1 gives over-relaxation). The
    reported residual is the largest node correction a Gauss-Seidel step
    would make, in physical length units. Starts from transfinite
    interpolation of the boundary.
    """
    n_eta = boundary.n_eta if n_eta is None else n_eta
    n_xi = boundary.n_xi if n_xi is None else n_xi
    if (n_eta, n_xi) != (boundary.n_eta, boundary.n_xi):
        raise ValueError(
            f"requested {n_eta}x{n_xi} nodes but boundary curves sample {boundary.n_eta}x{boundary.n_xi}"
        )
    if n_eta < 5 or n_xi < 5:
        raise ValueError("elliptic_mesh needs at least 5 nodes per direction")
    boundary.check_corners()

    x, y = _transfinite(boundary)
    residual = np.inf
    it = 0
    while True:
        alpha, beta, gamma = _coefficients(x, y, d_eta, d_xi)
        residual = max(
            np.abs(_correction(x, alpha, beta, gamma, d_eta, d_xi)).max(),
            np.abs(_correction(y, alpha, beta, gamma, d_eta, d_xi)).max(),
        )
        if residual <= tol or it >= max_iter:
            break
        _sweep(x, alpha, beta, gamma, d_eta, d_xi, omega)
        _sweep(y, alpha, beta, gamma, d_eta, d_xi, omega)
        it += 1

    converged = bool(residual <= tol)
    if not converged:
        log.warning("elliptic_mesh: no convergence after %d sweeps (residual %.3e > %.1e)", it, residual, tol)
    mesh = CurvilinearMesh(x, y, d_eta, d_xi, converged=converged, iterations=it, residual=float(residual))
    bad = np.argwhere(mesh.jac <= 0)
    if bad.size:
        i, j = bad[0]
        raise FoldedMeshError(f"folded mesh: J={mesh.jac[i, j]:.3e} at node ({i}, {j}) and {len(bad) - 1} others")
    return mesh


# ---------------------------------------------------------------------------
# physical-space derivatives


def _check_mapping(field, mesh):
    f = np.asarray(field, dtype=float)
    if f.shape[-2:] != mesh.shape:
        raise ValueError(f"field trailing shape {f.shape[-2:]} does not match mesh {mesh.shape}")
    if np.any(mesh.jac <= 0):
        raise SingularMappingError("mesh Jacobian is non-positive somewhere")
    return f


def physical_gradient(field, mesh: CurvilinearMesh, direction: str, order: int = 1, second_form: str = "transformed"):
    """Derivative of ``field`` with respect to physical ``x`` or ``y``.

    First derivatives use the inverse-Jacobian metric identities. For
    ``order=2`` the default ``second_form="transformed"`` evaluates the
    closed-form metric expansion with J held outside the bracket, a unit
    weight on the mixed eta-xi term and an eta-only correction term. That
    form is exact on uniformly scaled axis-aligned grids but not on
    stretched, rotated or curved meshes.
    ``second_form="composed"`` applies the first-derivative operator twice
    and stays consistent on arbitrary meshes.
    """
    f = _check_mapping(field, mesh)
    if direction not in ("x", "y"):
        raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")
    de, dx = mesh.d_eta, mesh.d_xi

    if order == 1:
        f_e = fd4_derivative(f, "eta", de)
        f_x = fd4_derivative(f, "xi", dx)
        if direction == "x":
            return (f_e * mesh.dy_dxi - f_x * mesh.dy_deta) / mesh.jac
        return (f_x * mesh.dx_deta - f_e * mesh.dx_dxi) / mesh.jac
    if order != 2:
        raise ValueError(f"order must be 1 or 2, got {order}")

    if second_form == "composed":
        first = physical_gradient(f, mesh, direction, 1)
        return physical_gradient(first, mesh, direction, 1)
    if second_form != "transformed":
        raise ValueError(f"unknown second_form {second_form!r}")

    # for d/dy the roles of y-metrics are taken by x-metrics
    if direction == "x":
        a_xi, a_eta = mesh.dy_dxi, mesh.dy_deta
    else:
        a_xi, a_eta = mesh.dx_dxi, mesh.dx_deta
    f_ee = fd4_second_derivative(f, "eta", de)
    f_xx = fd4_second_derivative(f, "xi", dx)
    f_ex = fd4_derivative(fd4_derivative(f, "eta", de), "xi", dx)
    f_e = fd4_derivative(f, "eta", de)
    correction = -a_eta * fd4_derivative(a_xi, "xi", dx) + a_xi * fd4_derivative(a_xi, "eta", de)
    return (a_xi * a_xi * f_ee - a_xi * a_eta * f_ex + a_eta * a_eta * f_xx + correction * f_e) / mesh.jac**2
