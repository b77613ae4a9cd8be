"""Empirical measures: grid densities, kernel density estimates, 2-Wasserstein
distances, convergence monitoring and ball masses."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import erf, logsumexp


@dataclass(frozen=True)
class Grid:
    """Cell-centred rectangular lattice; ``x_min``/``x_max`` are outer edges."""

    x_min: float
    x_max: float
    n_x: int
    y_min: float
    y_max: float
    n_y: int

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("grid needs at least two cells per axis")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid bounds must be increasing")

    @classmethod
    def square(cls, half_width, n):
        return cls(-half_width, half_width, n, -half_width, half_width, n)

    @property
    def hx(self):
        return (self.x_max - self.x_min) / self.n_x

    @property
    def hy(self):
        return (self.y_max - self.y_min) / self.n_y

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def xs(self):
        return self.x_min + (np.arange(self.n_x) + 0.5) * self.hx

    @property
    def ys(self):
        return self.y_min + (np.arange(self.n_y) + 0.5) * self.hy

    @property
    def shape(self):
        return (self.n_x, self.n_y)

    def centers(self):
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def contains(self, points, margin=0.0):
        p = np.atleast_2d(points)
        return ((p[:, 0] >= self.x_min - margin) & (p[:, 0] <= self.x_max + margin)
                & (p[:, 1] >= self.y_min - margin) & (p[:, 1] <= self.y_max + margin))

    def refined(self, factor=2):
        return Grid(self.x_min, self.x_max, self.n_x * factor,
                    self.y_min, self.y_max, self.n_y * factor)


@dataclass
class GridDensity:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")

    @property
    def cell_area(self):
        return self.grid.cell_area

    def mass(self):
        return float(self.values.sum() * self.cell_area)

    def normalized(self):
        return GridDensity(self.grid, self.values / self.mass(), self.time)

    def mean(self):
        c = self.grid.centers()
        w = self.values * self.cell_area
        return np.einsum("ij,ijk->k", w, c) / w.sum()

    def covariance(self):
        c = self.grid.centers() - self.mean()
        w = self.values * self.cell_area
        return np.einsum("ij,ijk,ijl->kl", w, c, c) / w.sum()

    @classmethod
    def from_function(cls, grid, func, time=0.0, normalize=True):
        """Evaluate ``func`` on an ``(n_x, n_y, 2)`` array of cell centres."""
        d = cls(grid, np.asarray(func(grid.centers()), dtype=float), time)
        return d.normalized() if normalize else d

    @classmethod
    def gaussian(cls, grid, mean, cov, time=0.0):
        mean = np.asarray(mean, dtype=float)
        prec = np.linalg.inv(np.asarray(cov, dtype=float))

        def func(p):
            r = p - mean
            return np.exp(-0.5 * np.einsum("...i,ij,...j->...", r, prec, r))

        return cls.from_function(grid, func, time)

    @classmethod
    def uniform_ball(cls, grid, center, radius, time=0.0):
        center = np.asarray(center, dtype=float)

        def func(p):
            return (np.linalg.norm(p - center, axis=-1) <= radius).astype(float)

        d = cls(grid, func(grid.centers()), time)
        if d.values.sum() == 0:
            raise ValueError("ball contains no cell centres")
        return d.normalized()

    def to_csv(self, path=None):
        """Write the CSV matrix: one header row with the grid bounds, then
        ``n_x`` rows of ``n_y`` values."""
        g = self.grid
        buf = io.StringIO()
        buf.write(f"x_min={g.x_min!r},x_max={g.x_max!r},n_x={g.n_x},"
                  f"y_min={g.y_min!r},y_max={g.y_max!r},n_y={g.n_y},t={self.time!r}\n")
        for row in self.values:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text):
        if "\n" in str(path_or_text):
            text = str(path_or_text)
        else:
            with open(path_or_text) as fh:
                text = fh.read()
        lines = text.strip().splitlines()
        meta = dict(item.split("=") for item in lines[0].split(","))
        grid = Grid(float(meta["x_min"]), float(meta["x_max"]), int(meta["n_x"]),
                    float(meta["y_min"]), float(meta["y_max"]), int(meta["n_y"]))
        values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(grid, values, float(meta.get("t", 0.0)))


def _points(e):
    return np.asarray(getattr(e, "particles", e), dtype=float)


# ---------------------------------------------------------------------------
# kernel density estimation

@dataclass
class KdeResult:
    density: GridDensity
    escaped_mass: float
    grid_mass: float


def kde_grid(e, kernel_cov, grid, time=None, return_details=False):
    """Sum of Gaussian bumps centred at the particles, renormalised on the grid.

    With ``return_details`` the mass of the kernel mixture falling outside the
    grid is reported alongside; it is exact for diagonal kernels.
    """
    pts = _points(e)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("kde_grid needs a two-dimensional ensemble")
    cov = np.asarray(kernel_cov, dtype=float)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
        raise ValueError("kernel covariance must be a symmetric 2x2 matrix")
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 0:
        raise ValueError("kernel covariance must be positive definite")
    if time is None:
        time = float(getattr(e, "time", 0.0))

    far = ~grid.contains(pts, margin=5.0 * np.sqrt(eig.max()))
    n = len(pts)
    xs, ys = grid.xs, grid.ys

    if cov[0, 1] == 0.0:
        sx, sy = np.sqrt(cov[0, 0]), np.sqrt(cov[1, 1])
        kx = np.exp(-0.5 * ((xs[:, None] - pts[None, :, 0]) / sx) ** 2) / (np.sqrt(2 * np.pi) * sx)
        ky = np.exp(-0.5 * ((ys[:, None] - pts[None, :, 1]) / sy) ** 2) / (np.sqrt(2 * np.pi) * sy)
        raw = kx @ ky.T / n

        def inside(lo, hi, m, s):
            return 0.5 * (erf((hi - m) / (np.sqrt(2) * s)) - erf((lo - m) / (np.sqrt(2) * s)))

        p_in = (inside(grid.x_min, grid.x_max, pts[:, 0], sx)
                * inside(grid.y_min, grid.y_max, pts[:, 1], sy))
        grid_mass = float(p_in.mean())
    else:
        prec = np.linalg.inv(cov)
        norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
        c = grid.centers().reshape(-1, 2)
        raw = np.zeros(len(c))
        for start in range(0, n, 256):
            r = c[:, None, :] - pts[None, start:start + 256, :]
            q = np.einsum("cpi,ij,cpj->cp", r, prec, r)
            raw += np.exp(-0.5 * q).sum(axis=1)
        raw = (raw * norm / n).reshape(grid.shape)
        grid_mass = float(min(raw.sum() * grid.cell_area, 1.0))

    escaped = 1.0 - grid_mass
    if far.any():
        warnings.warn(
            f"{int(far.sum())} particles lie more than 5 kernel standard deviations "
            f"outside the grid; escaped mass ~ {escaped:.3g}", RuntimeWarning)
    total = raw.sum() * grid.cell_area
    if total <= 0:
        raise ValueError("kernel mixture has no mass on the grid")
    dens = GridDensity(grid, raw / total, time)
    if return_details:
        return KdeResult(dens, escaped, grid_mass)
    return dens


# ---------------------------------------------------------------------------
# Wasserstein distance

class SinkhornError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class WassersteinEstimate:
    value: float
    method: str
    n_points_used: int
    regularization: Optional[float] = None
    plan: Optional[np.ndarray] = field(default=None, repr=False)


def _subsample(pts, n, seed):
    """Keep ``n`` points; the choice depends only on ``(seed, len(pts))`` so
    swapping the two arguments of ``wasserstein2`` selects the same subsets."""
    if len(pts) == n:
        return pts
    rng = np.random.default_rng([seed, len(pts)])
    return pts[np.sort(rng.choice(len(pts), n, replace=False))]


def sinkhorn_log(cost, reg, tol=1e-6, max_iter=10_000):
    """Log-domain Sinkhorn for uniform marginals; returns the transport plan."""
    n, m = cost.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    K = -cost / reg
    g = np.zeros(m)
    residual = np.inf
    for it in range(max_iter):
        f = log_a - logsumexp(K + g[None, :], axis=1)
        g = log_b - logsumexp(K + f[:, None], axis=0)
        if it % 10 == 0 or it == max_iter - 1:
            log_plan = K + f[:, None] + g[None, :]
            residual = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - 1.0 / n).sum())
            if residual < tol:
                return np.exp(log_plan)
    raise SinkhornError(
        f"Sinkhorn did not reach marginal tolerance {tol} in {max_iter} iterations "
        f"(residual {residual:.3e})", residual)


def _canonical_key(pts):
    """Total order on point clouds: lexicographically sorted rows, then raw order."""
    order = np.lexsort(pts.T[::-1])
    return pts[order].tobytes(), pts.tobytes()


def wasserstein2(a, b, method="exact_assignment", n_max=1024, seed=0, reg=None,
                 tol=1e-6, max_iter=10_000, n_projections=200, return_plan=False):
    """2-Wasserstein distance between two equally weighted point clouds.

    ``exact_assignment`` subsamples both clouds to a common size
    ``n <= n_max`` and solves the squared-cost assignment problem.
    ``entropic`` runs log-domain Sinkhorn with regularisation ``reg``
    (default: 1% of the median pairwise cost) and reports the transport cost
    of the entropic plan.  ``sliced`` averages 1-D sorted matchings over random
    directions.  Returned values are square roots of the squared costs.
    """
    pa, pb = _points(a), _points(b)
    if pa.ndim != 2 or pb.ndim != 2 or pa.shape[1] != pb.shape[1]:
        raise ValueError("ensembles must have equal dimension")
    rng = np.random.default_rng(seed)

    if method == "exact_assignment":
        n = min(len(pa), len(pb), n_max)
        xa, xb = _subsample(pa, n, seed), _subsample(pb, n, seed)
        # solve in a canonical argument order: with tied optima the solver may
        # pick different matchings whose float sums differ in the last bit
        swap = _canonical_key(xb) < _canonical_key(xa)
        cost = cdist(xb, xa, "sqeuclidean") if swap else cdist(xa, xb, "sqeuclidean")
        rows, cols = linear_sum_assignment(cost)
        sq = float(np.sort(cost[rows, cols]).mean())
        plan = None
        if return_plan:
            plan = np.zeros((n, n))
            plan[rows, cols] = 1.0 / n
            if swap:
                plan = plan.T
        return WassersteinEstimate(float(np.sqrt(max(sq, 0.0))), method, n, None, plan)

    if method == "entropic":
        cost = cdist(pa, pb, "sqeuclidean")
        if reg is None:
            reg = 0.01 * float(np.median(cost))
            if reg == 0:
                reg = 1e-3
        plan = sinkhorn_log(cost, reg, tol, max_iter)
        sq = float((plan * cost).sum())
        return WassersteinEstimate(float(np.sqrt(max(sq, 0.0))), method, len(pa) + len(pb), reg,
                                   plan if return_plan else None)

    if method == "sliced":
        n = min(len(pa), len(pb))
        xa, xb = _subsample(pa, n, seed), _subsample(pb, n, seed)
        dirs = rng.standard_normal((n_projections, pa.shape[1]))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        proj_a = np.sort(xa @ dirs.T, axis=0)
        proj_b = np.sort(xb @ dirs.T, axis=0)
        sq = float(np.mean((proj_a - proj_b) ** 2))
        return WassersteinEstimate(float(np.sqrt(sq)), method, n, None)

    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# convergence and ball masses

@dataclass
class ConvergenceResult:
    converged_at: Optional[float]
    norm_series: np.ndarray
    times: np.ndarray


DEFAULT_THRESHOLD = 1e-6


def snapshot_difference(prev: GridDensity, cur: GridDensity):
    if prev.grid != cur.grid:
        raise ValueError("grid mismatch between snapshots")
    return float(np.linalg.norm((cur.values - prev.values) * cur.cell_area))


def convergence_monitor(history: Sequence[GridDensity], threshold=DEFAULT_THRESHOLD):
    """l2 norm of successive snapshot differences weighted by the cell area;
    ``converged_at`` is the time of the first snapshot whose difference to its
    predecessor drops below ``threshold``."""
    if len(history) < 2:
        raise ValueError("need at least two snapshots")
    series = np.array([snapshot_difference(p, c) for p, c in zip(history[:-1], history[1:])])
    times = np.array([h.time for h in history[1:]])
    below = np.nonzero(series < threshold)[0]
    at = float(times[below[0]]) if below.size else None
    return ConvergenceResult(at, series, times)


def mass_in_ball(m, center, r):
    """Mass of a grid density (cell-centre membership) or the fraction of an
    ensemble's particles inside the closed ball ``B_r(center)``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    if isinstance(m, GridDensity):
        g = m.grid
        if (center[0] + r < g.x_min or center[0] - r > g.x_max
                or center[1] + r < g.y_min or center[1] - r > g.y_max):
            warnings.warn("ball lies entirely outside the grid", RuntimeWarning)
            return 0.0
        inside = np.linalg.norm(g.centers() - center, axis=-1) <= r
        return float(m.values[inside].sum() * g.cell_area)
    pts = _points(m)
    return float(np.mean(np.linalg.norm(pts - center, axis=-1) <= r))
