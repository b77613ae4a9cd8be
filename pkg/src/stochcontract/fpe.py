"""Explicit finite-volume Fokker-Planck solver on a 2-D box with zero-flux
walls, plus circle quadrature for boundary functionals.

The flux through a face between cells ``L`` and ``R`` is
``a * mu_L - b * mu_R`` with ``a = v+ + g`` and ``b = v- + g`` where ``v`` is
the face velocity ``f - 1/2 dD/dx`` and ``g`` the diffusive conductance.  With
``scheme="upwind"`` ``g = D / (2h)`` (upwind advection plus centred
diffusion); with ``scheme="exponential"`` (default) ``g = k B(|v|/k)``,
``k = D/(2h)``, ``B(z) = z / (e^z - 1)``, the exponentially fitted flux that is
exact for stationary profiles with constant face velocity.  Both are
conservative and keep the density non-negative under the step bound.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .measures import Grid, GridDensity, snapshot_difference

log = logging.getLogger(__name__)


class SchemeError(RuntimeError):
    pass


class StabilityError(ValueError):
    pass


class NotConvergedError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _conductance(v, kappa, scheme):
    if scheme == "upwind":
        return kappa.copy()
    if scheme != "exponential":
        raise ValueError(f"unknown scheme {scheme!r}")
    av = np.abs(v)
    out = kappa.copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(kappa > 0, av / np.where(kappa > 0, kappa, 1.0), np.inf)
        big = z > 1e-8
        out[big] = av[big] / np.expm1(z[big])
    out[np.isinf(z)] = 0.0
    return out


def _diffusion_diagonal(G, pts):
    flat = pts.reshape(-1, 2)
    g = G.func(0.0, flat)
    D = np.einsum("nik,njk->nij", g, g)
    off = np.abs(D[:, 0, 1]).max()
    if off > 1e-12 * max(1.0, np.abs(D).max()):
        raise ValueError("the grid solver needs a diagonal diffusion matrix G G^T")
    return D[:, 0, 0].reshape(pts.shape[:-1]), D[:, 1, 1].reshape(pts.shape[:-1])


@dataclass
class FpeProblem:
    drift: object
    diffusion: object
    grid: Grid
    dt: Optional[float] = None
    scheme: str = "exponential"
    safety: float = 0.5
    initial: Optional[GridDensity] = None
    boundary: str = "zero_flux"
    _coef: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.boundary != "zero_flux":
            raise ValueError("only zero-flux boundaries are supported")
        if self.drift.dim != 2 or self.diffusion.dim != 2:
            raise ValueError("the grid solver is two-dimensional")
        if not self.drift.autonomous:
            raise ValueError("the grid solver needs an autonomous drift")
        self._coef = self._assemble()
        bound = self.max_stable_dt
        if self.dt is None:
            self.dt = self.safety * bound
        elif self.dt > bound:
            raise StabilityError(f"dt={self.dt} exceeds the stability bound {bound:.4g}")

    def _assemble(self):
        g = self.grid
        hx, hy = g.hx, g.hy
        xs, ys = g.xs, g.ys
        cell = g.centers()
        Dxx_c, Dyy_c = _diffusion_diagonal(self.diffusion, cell)

        fx_pts = np.stack(np.meshgrid(xs[:-1] + hx / 2, ys, indexing="ij"), axis=-1)
        fy_pts = np.stack(np.meshgrid(xs, ys[:-1] + hy / 2, indexing="ij"), axis=-1)
        vx = self.drift.func(0.0, fx_pts.reshape(-1, 2))[:, 0].reshape(fx_pts.shape[:-1])
        vy = self.drift.func(0.0, fy_pts.reshape(-1, 2))[:, 1].reshape(fy_pts.shape[:-1])
        Dx_f = _diffusion_diagonal(self.diffusion, fx_pts)[0]
        Dy_f = _diffusion_diagonal(self.diffusion, fy_pts)[1]
        vx = vx - 0.5 * (Dxx_c[1:, :] - Dxx_c[:-1, :]) / hx
        vy = vy - 0.5 * (Dyy_c[:, 1:] - Dyy_c[:, :-1]) / hy
        gx = _conductance(vx, Dx_f / (2 * hx), self.scheme)
        gy = _conductance(vy, Dy_f / (2 * hy), self.scheme)
        coef = {
            "ax": np.maximum(vx, 0) + gx, "bx": np.maximum(-vx, 0) + gx,
            "ay": np.maximum(vy, 0) + gy, "by": np.maximum(-vy, 0) + gy,
            "max_D": float(max(Dxx_c.max(), Dyy_c.max())),
            "max_f": float(np.sqrt(np.max(np.sum(
                self.drift.func(0.0, cell.reshape(-1, 2)) ** 2, axis=1)))),
        }
        out = np.zeros(g.shape)
        out[:-1, :] += coef["ax"] / hx
        out[1:, :] += coef["bx"] / hx
        out[:, :-1] += coef["ay"] / hy
        out[:, 1:] += coef["by"] / hy
        coef["outflow"] = out
        return coef

    @property
    def max_stable_dt(self):
        """Largest step keeping every cell's outflow fraction below one."""
        return float(1.0 / self._coef["outflow"].max())

    @property
    def cfl_bound(self):
        """``min(h^2 / (2 max D), h / max |f|)``; implied by ``max_stable_dt``."""
        h = min(self.grid.hx, self.grid.hy)
        c = self._coef
        a = h * h / (2 * c["max_D"]) if c["max_D"] > 0 else np.inf
        b = h / c["max_f"] if c["max_f"] > 0 else np.inf
        return float(min(a, b))


def _step_values(p, mu, dt):
    c = p._coef
    fx = c["ax"] * mu[:-1, :] - c["bx"] * mu[1:, :]
    fy = c["ay"] * mu[:, :-1] - c["by"] * mu[:, 1:]
    new = mu.copy()
    sx = dt / p.grid.hx
    sy = dt / p.grid.hy
    new[:-1, :] -= sx * fx
    new[1:, :] += sx * fx
    new[:, :-1] -= sy * fy
    new[:, 1:] += sy * fy
    return new


def fpe_step(p, density, n_steps=1):
    """Advance ``density`` by ``n_steps`` explicit steps of size ``p.dt``."""
    if p.dt > p.max_stable_dt * (1 + 1e-12):
        raise StabilityError("step size violates the stability bound")
    if density.grid != p.grid:
        raise ValueError("density grid does not match the problem grid")
    mu = density.values
    for _ in range(n_steps):
        mu = _step_values(p, mu, p.dt)
    if mu.min() < -1e-12:
        raise SchemeError(f"negative density {mu.min():.3e}")
    return GridDensity(p.grid, mu, density.time + n_steps * p.dt)


def fpe_evolve(p, density, T, record_interval):
    """Snapshots every ``record_interval`` time units up to ``T``."""
    every = max(1, int(round(record_interval / p.dt)))
    n_rec = int(round(T / (every * p.dt)))
    out = [density]
    for _ in range(n_rec):
        density = fpe_step(p, density, every)
        out.append(density)
    return out


def solve_stationary(p, tol=1e-6, max_steps=1_000_000, initial=None, check_interval=0.01,
                     history=None, min_time=0.0):
    """Step until the snapshot difference (sampled every ``check_interval``
    time units) drops below ``tol``.  ``history`` collects ``(step, residual)``.
    """
    mu = initial if initial is not None else p.initial
    if mu is None:
        mu = GridDensity(p.grid, np.ones(p.grid.shape)).normalized()
    every = max(1, int(round(check_interval / p.dt)))
    steps = 0
    residual = np.inf
    while steps < max_steps:
        nxt = fpe_step(p, mu, every)
        steps += every
        residual = snapshot_difference(mu, nxt)
        mu = nxt
        if history is not None:
            history.append((steps, residual))
        if residual < tol and mu.time >= min_time:
            log.debug("stationary after %d steps, residual %.3e", steps, residual)
            return mu
    raise NotConvergedError(
        f"no convergence within {max_steps} steps (residual {residual:.3e})", residual)


def check_coverage(grid, equilibria, omega, c):
    """Boxes ``x* +- 4 sigma`` with ``sigma = omega / sqrt(2c)`` that leave the grid."""
    sigma = omega / np.sqrt(2 * c)
    bad = []
    for x in equilibria:
        x = np.asarray(x, dtype=float)
        if (x[0] - 4 * sigma < grid.x_min or x[0] + 4 * sigma > grid.x_max
                or x[1] - 4 * sigma < grid.y_min or x[1] + 4 * sigma > grid.y_max):
            bad.append(x)
    return bad


# ---------------------------------------------------------------------------
# circle quadrature

@dataclass(frozen=True)
class SurfaceQuadrature:
    center: tuple
    radius: float
    n_nodes: int = 720

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(np.asarray(self.center, dtype=float)))
        if not self.radius > 0 or self.n_nodes < 3:
            raise ValueError("need a positive radius and at least three nodes")

    @property
    def angles(self):
        return 2 * np.pi * np.arange(self.n_nodes) / self.n_nodes

    @property
    def normals(self):
        th = self.angles
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    @property
    def nodes(self):
        return np.asarray(self.center) + self.radius * self.normals

    @property
    def weights(self):
        return np.full(self.n_nodes, 2 * np.pi * self.radius / self.n_nodes)

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    def refined(self, factor=2):
        return SurfaceQuadrature(self.center, self.radius, self.n_nodes * factor)


def _interpolate(grid, values, pts):
    xs, ys = grid.xs, grid.ys
    if (pts[:, 0].min() < xs[0] or pts[:, 0].max() > xs[-1]
            or pts[:, 1].min() < ys[0] or pts[:, 1].max() > ys[-1]):
        raise ValueError("quadrature circle leaves the grid")
    interp = RegularGridInterpolator((xs, ys), values, method="linear")
    return interp(pts)


def surface_integral(field_on_grid, q, integrand_form="scalar", grid=None):
    """Trapezoidal circle integral of a grid function (bilinear interpolation).

    ``field_on_grid`` is a ``GridDensity`` or an array on ``grid`` of shape
    ``(n_x, n_y)`` (scalar) or ``(n_x, n_y, 2)`` (vector).  ``integrand_form``
    is ``"scalar"``, ``"flux_against_normal"`` or a callable
    ``(values, nodes, normals) -> pointwise integrand``.
    """
    if isinstance(field_on_grid, GridDensity):
        grid, values = field_on_grid.grid, field_on_grid.values
    else:
        values = np.asarray(field_on_grid, dtype=float)
        if grid is None:
            raise ValueError("a grid is required for raw arrays")
    nodes, normals = q.nodes, q.normals
    vals = _interpolate(grid, values, nodes)
    if integrand_form == "scalar":
        integrand = vals
    elif integrand_form == "flux_against_normal":
        integrand = np.sum(vals * normals, axis=-1)
    elif callable(integrand_form):
        integrand = integrand_form(vals, nodes, normals)
    else:
        raise ValueError(f"unknown integrand form {integrand_form!r}")
    return q.integrate(integrand)


@dataclass
class LemmaReport:
    lhs: float
    rhs: float
    gap: float
    n_nodes: int


def _fd_divergence_rows(A, x, h):
    """``(div A)_i = sum_j d_j A_ij`` by central differences."""
    out = np.zeros((x.shape[0], 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        out += (A(x + e)[:, :, j] - A(x - e)[:, :, j]) / (2 * h)
    return out


def _fd_jacobian(v, x, h):
    cols = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        cols.append((v(x + e) - v(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)   # J[n, i, j] = d_j v_i


def lemma_tr_two_sided(A, v, q, div_A=None, jac_v=None, fd_step=1e-5):
    """Evaluate both sides of the boundary identity
    ``int (div A, v) dsigma`` and ``-int Tr(A J_v^T) dsigma`` on a circle.

    ``A`` maps ``(n, 2)`` points to ``(n, 2, 2)`` matrices and ``v`` to
    ``(n, 2)`` vectors; derivatives default to central differences.
    """
    x = q.nodes
    dA = div_A(x) if div_A is not None else _fd_divergence_rows(A, x, fd_step)
    Jv = jac_v(x) if jac_v is not None else _fd_jacobian(v, x, fd_step)
    lhs = q.integrate(np.sum(dA * v(x), axis=-1))
    rhs = -q.integrate(np.einsum("nij,nij->n", A(x), Jv))
    return LemmaReport(lhs, rhs, abs(lhs - rhs), q.n_nodes)


@dataclass
class BallFluxReport:
    flux_rate: float        # d/dt of the ball mass from the original flux form
    drift_form: float       # (1/r) int mu [-(f, x - x*) - d omega^2 / 2]
    contraction_form: float  # (1/r) int mu [c* r^2 - d omega^2 / 2]
    boundary_mass: float    # int mu dsigma


def ball_flux(density, drift, omega, center, radius, c_star=None, n_nodes=720):
    """Boundary functionals for the mass of ``B_radius(center)``.

    ``flux_rate`` integrates ``-mu (f, xi) + omega^2/2 (grad mu, xi)`` and is the
    actual rate of change of the ball mass under the evolution; the two other
    entries are the forms obtained after replacing the gradient term by
    ``-mu d omega^2 / (2r)``.
    """
    q = SurfaceQuadrature(center, radius, n_nodes)
    g = density.grid
    mu = density.values
    gx, gy = np.gradient(mu, g.hx, g.hy)
    nodes, xi = q.nodes, q.normals
    mu_n = _interpolate(g, mu, nodes)
    grad_n = np.stack([_interpolate(g, gx, nodes), _interpolate(g, gy, nodes)], axis=-1)
    f_n = drift.func(0.0, nodes)
    d = 2
    flux = q.integrate(-mu_n * np.sum(f_n * xi, axis=-1)
                       + 0.5 * omega ** 2 * np.sum(grad_n * xi, axis=-1))
    rel = nodes - np.asarray(center)
    drift_form = q.integrate(mu_n * (-np.sum(f_n * rel, axis=-1) - 0.5 * d * omega ** 2)) / radius
    contraction_form = float("nan")
    if c_star is not None:
        contraction_form = q.integrate(mu_n * (c_star * radius ** 2 - 0.5 * d * omega ** 2)) / radius
    return BallFluxReport(flux, drift_form, contraction_form, q.integrate(mu_n))


def standard_lemma_cases(n_nodes=720):
    """The three reference ``(A, v)`` pairs: zero ``A``; a constant ``A`` with
    the radial extension ``v = (x - x0)/r``; ``A = diag(x1^2, x2^2)`` with the
    rotation field on the unit circle."""
    x0, r = np.array([0.3, -0.2]), 1.5
    A_const = np.array([[1.0, 0.5], [0.2, 2.0]])

    def zero(x):
        return np.zeros((x.shape[0], 2, 2))

    def rotation(x):
        return np.stack([-x[:, 1], x[:, 0]], axis=-1)

    def const(x):
        return np.broadcast_to(A_const, (x.shape[0], 2, 2))

    def radial(x):
        return (x - x0) / r

    def squares(x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = x[:, 0] ** 2
        out[:, 1, 1] = x[:, 1] ** 2
        return out

    return [
        ("zero_matrix", zero, rotation, SurfaceQuadrature((0.0, 0.0), 1.0, n_nodes)),
        ("constant_matrix_radial", const, radial, SurfaceQuadrature(tuple(x0), r, n_nodes)),
        ("diag_squares_rotation", squares, rotation,
         SurfaceQuadrature((0.0, 0.0), 1.0, n_nodes)),
    ]
