"""Sampled estimates of the regularity constants consumed by the convergence
and concentration results: one-sided Lipschitz rates, diffusion constants,
equilibria and local contraction balls."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PERTURBATIONS = (1e-3, 1e-2, 1e-1)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if not np.all(hi > lo):
            raise ValueError("degenerate region: every side must have positive length")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    @classmethod
    def cube(cls, half_width, d):
        return cls((-half_width,) * d, (half_width,) * d)

    @property
    def dim(self):
        return len(self.lo)

    def sample(self, rng, n):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + (hi - lo) * rng.random((n, lo.size))


@dataclass
class ContractionReport:
    global_rate_estimate: float
    region: Box
    n_pairs: int
    classification: str
    contraction_rate: Optional[float] = None
    expansion_rate: Optional[float] = None
    radius: Optional[float] = None
    outside_rate: Optional[float] = None
    inside_rate: Optional[float] = None

    def to_text(self):
        keys = ["classification", "global_rate_estimate", "contraction_rate",
                "expansion_rate", "radius", "outside_rate", "inside_rate", "n_pairs"]
        lines = [f"{k}: {getattr(self, k)}" for k in keys]
        lines.append(f"region: lo={list(self.region.lo)} hi={list(self.region.hi)}")
        return "\n".join(lines)


def _pairs(region, n_pairs, rng):
    """Uniform pairs plus perturbation pairs ``y = x + delta u`` for each
    delta in ``PERTURBATIONS``."""
    d = region.dim
    xs = [region.sample(rng, n_pairs)]
    ys = [region.sample(rng, n_pairs)]
    for delta in PERTURBATIONS:
        x = region.sample(rng, n_pairs)
        u = rng.standard_normal((n_pairs, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        xs.append(x)
        ys.append(x + delta * u)
    return np.vstack(xs), np.vstack(ys)


def pair_rates(f, x, y, t=0.0):
    """``(f(x) - f(y), x - y) / |x - y|^2`` for each row."""
    dx = x - y
    df = f.func(t, x) - f.func(t, y)
    return np.sum(df * dx, axis=1) / np.sum(dx * dx, axis=1)


def estimate_one_sided_rate(f, region, n_pairs=2000, seed=0, exclusion_ball=None, t=0.0):
    """Sampled sup of the one-sided Lipschitz quotient over ``region``.

    With ``exclusion_ball=(center, r)`` the pairs are split into those with
    both points outside the ball and the rest, and the field is classified as
    B_r-contracting when the outside supremum is negative.
    """
    if n_pairs < 100:
        raise ValueError("n_pairs must be at least 100")
    if region.dim != f.dim:
        raise ValueError("region and field dimensions disagree")
    rng = np.random.default_rng(seed)
    x, y = _pairs(region, n_pairs, rng)
    keep = np.sum((x - y) ** 2, axis=1) > 0
    x, y = x[keep], y[keep]
    rates = pair_rates(f, x, y, t)
    sup = float(rates.max())
    report = ContractionReport(sup, region, len(rates), "unclassified")
    if exclusion_ball is None:
        if sup < 0:
            report.classification = "globally_contracting"
            report.contraction_rate = -sup
        return report

    center, r = exclusion_ball
    center = np.asarray(center, dtype=float)
    outside = ((np.linalg.norm(x - center, axis=1) > r)
               & (np.linalg.norm(y - center, axis=1) > r))
    report.radius = float(r)
    report.outside_rate = float(rates[outside].max()) if outside.any() else None
    report.inside_rate = float(rates[~outside].max()) if (~outside).any() else None
    if sup < 0:
        report.classification = "globally_contracting"
        report.contraction_rate = -sup
    elif report.outside_rate is not None and report.outside_rate < 0:
        report.classification = "br_contracting"
        report.contraction_rate = -report.outside_rate
        report.expansion_rate = max(report.inside_rate or 0.0, 0.0)
    return report


@dataclass
class DiffusionConstantsEstimate:
    lipschitz_sq: float       # sup |dG|_F^2 / |dx|^2
    lipschitz_plain: float    # sup |dG|_F / |dx|
    frobenius_sup: float


def estimate_diffusion_constants(G, region, n_pairs=2000, seed=0, t=0.0):
    if n_pairs < 100:
        raise ValueError("n_pairs must be at least 100")
    if region.dim != G.dim:
        raise ValueError("region and field dimensions disagree")
    rng = np.random.default_rng(seed)
    x, y = _pairs(region, n_pairs, rng)
    gx, gy = G.func(t, x), G.func(t, y)
    dg = np.sum((gx - gy) ** 2, axis=(1, 2))
    dx = np.sum((x - y) ** 2, axis=1)
    q = dg / dx
    fro = np.sqrt(np.sum(gx ** 2, axis=(1, 2)))
    return DiffusionConstantsEstimate(float(q.max()), float(np.sqrt(q).max()), float(fro.max()))


# ---------------------------------------------------------------------------
# equilibria

@dataclass
class EquilibriumRecord:
    x_star: np.ndarray
    stability: str
    jacobian_spectrum_abscissa: float
    residual: float
    r_star: Optional[float] = None
    c_star: Optional[float] = None


def fd_jacobian(f, x, h=1e-6, t=0.0):
    d = x.size
    e = np.eye(d) * h
    plus = f.func(t, x[None] + e)
    minus = f.func(t, x[None] - e)
    return ((plus - minus) / (2 * h)).T


def newton_root(f, x0, root_tol=1e-10, max_iter=100, fd_step=1e-6, t=0.0):
    """Damped Newton with backtracking on ``|f|``; returns ``x`` or ``None``."""
    x = np.asarray(x0, dtype=float).copy()
    fx = f.func(t, x[None])[0]
    norm = np.linalg.norm(fx)
    polish = 0
    for _ in range(max_iter):
        if norm <= root_tol:
            # two extra iterations push the root well under the tolerance
            polish += 1
            if polish > 2 or norm == 0.0:
                return x
        J = fd_jacobian(f, x, fd_step, t)
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            return None
        alpha = 1.0
        while alpha > 1e-6:
            xn = x + alpha * step
            fn = f.func(t, xn[None])[0]
            nn = np.linalg.norm(fn)
            if nn < norm or (norm <= root_tol and nn <= root_tol):
                break
            alpha *= 0.5
        else:
            return x if norm <= root_tol else None
        x, fx, norm = xn, fn, nn
    return x if norm <= root_tol else None


def find_equilibria(f, region, n_starts=200, root_tol=1e-10, seed=0, dedup=1e-6,
                    fd_step=1e-6, r_max=None, n_pairs=1000):
    """Multi-start damped Newton search for zeros of an autonomous drift.

    Stability follows the sign of the largest real part of the
    finite-difference Jacobian spectrum.  When ``r_max`` is given, stable
    equilibria also get a local contraction ball.
    """
    if not f.autonomous:
        raise ValueError("find_equilibria needs an autonomous drift")
    rng = np.random.default_rng(seed)
    starts = np.vstack([region.sample(rng, n_starts), np.zeros((1, f.dim))])
    roots = []
    for s in starts:
        x = newton_root(f, s, root_tol, fd_step=fd_step)
        if x is None:
            continue
        if not np.all((x >= np.asarray(region.lo)) & (x <= np.asarray(region.hi))):
            continue
        if any(np.linalg.norm(x - r) <= dedup for r in roots):
            continue
        roots.append(x)
    if not roots:
        warnings.warn("Newton did not converge from any start", RuntimeWarning)
        return []
    out = []
    for x in sorted(roots, key=lambda v: tuple(v)):
        J = fd_jacobian(f, x, fd_step)
        abscissa = float(np.linalg.eigvals(J).real.max())
        rec = EquilibriumRecord(x, "stable" if abscissa < 0 else "unstable", abscissa,
                                float(np.linalg.norm(f(0.0, x))))
        if r_max is not None and rec.stability == "stable":
            ball = local_contraction_ball(f, x, r_max, n_pairs, seed)
            if ball.contracting:
                rec.r_star, rec.c_star = ball.r_star, ball.c_star
        out.append(rec)
    return out


@dataclass
class LocalContraction:
    r_star: Optional[float]
    c_star: Optional[float]
    contracting: bool
    radii: np.ndarray = field(repr=False)
    rates: np.ndarray = field(repr=False)   # sampled sup quotient per radius


def _ball_points(rng, center, r, n):
    d = center.size
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return center + v * (r * rng.random(n) ** (1.0 / d))[:, None]


def local_contraction_ball(f, x_star, r_max, n_pairs=1000, seed=0, n_radii=32, t=0.0):
    """Largest grid radius ``r* <= r_max`` with every sampled pair inside
    ``B_{r*}(x_star)`` contracting, and the sampled rate there.

    Pairs are pooled over all radius levels and each radius uses every pooled
    pair lying in its ball, so the rate profile is monotone in the radius.
    """
    x_star = np.asarray(x_star, dtype=float)
    radii = r_max * np.arange(1, n_radii + 1) / n_radii
    rng = np.random.default_rng(seed)
    per = max(n_pairs // n_radii, 20)
    px, py = [], []
    for r in radii:
        px.append(_ball_points(rng, x_star, r, per))
        py.append(_ball_points(rng, x_star, r, per))
        for delta in PERTURBATIONS:
            x = _ball_points(rng, x_star, r, per)
            u = rng.standard_normal(x.shape)
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            px.append(x)
            py.append(x + delta * r * u)
    X, Y = np.vstack(px), np.vstack(py)
    q = pair_rates(f, X, Y, t)
    reach = np.maximum(np.linalg.norm(X - x_star, axis=1), np.linalg.norm(Y - x_star, axis=1))
    rates = np.array([q[reach <= r].max() if np.any(reach <= r) else -np.inf for r in radii])

    if not rates[0] < 0:
        return LocalContraction(None, None, False, radii, rates)
    # rates are non-decreasing in r: bisect for the last negative entry
    lo, hi = 0, len(radii) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if rates[mid] < 0:
            lo = mid
        else:
            hi = mid - 1
    return LocalContraction(float(radii[lo]), float(-rates[lo]), True, radii, rates)


def mass_sink_threshold(omega, r_star, d):
    """Contraction rate needed for a ball of radius ``r_star`` to gain mass:
    ``(d / 2) (omega / r_star)^2``."""
    return 0.5 * d * (omega / r_star) ** 2
