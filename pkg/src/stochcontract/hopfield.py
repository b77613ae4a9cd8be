"""Two-dimensional input-driven Hopfield model.

Dynamics ``dx/dt = -x + W_u tanh(beta x)`` with ``W_u = s * M diag(u) M^T`` and
``M = [[1, 1], [1, -1]]``.  The default ``s = 1/2`` makes the columns of ``M``
eigenvectors of ``W_u`` with eigenvalues ``u``; with that choice the
equilibria along ``M^j`` solve ``gamma = u_j tanh(beta gamma)`` and the
origin is globally contracting exactly when ``max(u) < 1/beta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DriftConstants, DriftField

M = np.array([[1.0, 1.0], [1.0, -1.0]])


@dataclass(frozen=True)
class HopfieldModel:
    beta: float
    u: tuple
    weight_scale: float = 0.5

    @property
    def W(self):
        return self.weight_scale * M @ np.diag(self.u) @ M.T

    @property
    def eigen_inputs(self):
        """Eigenvalues of ``W_u`` along the columns of ``M``."""
        return 2.0 * self.weight_scale * np.asarray(self.u)

    @property
    def regime(self):
        top = self.beta * self.eigen_inputs.max()
        if top < 1.0:
            return "globally_contracting"
        if top > 1.0:
            return "multistable"
        return "critical"

    def activation(self, x):
        return np.tanh(self.beta * np.asarray(x, dtype=float))

    def _wphi(self, phi):
        W = self.W
        # written out so each row is computed identically whatever the batch size
        return np.stack(
            [phi[..., 0] * W[0, 0] + phi[..., 1] * W[0, 1],
             phi[..., 0] * W[1, 0] + phi[..., 1] * W[1, 1]],
            axis=-1,
        )

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        return -x + self._wphi(self.activation(x))

    def energy(self, x):
        """``-1/2 phi^T W phi + x^T phi - sum_i log(cosh(beta x_i))/beta``."""
        x = np.asarray(x, dtype=float)
        phi = self.activation(x)
        quad = np.sum(phi * self._wphi(phi), axis=-1)
        bx = self.beta * np.abs(x)
        # log cosh(z) = |z| + log1p(exp(-2|z|)) - log 2, stable for large |z|
        logcosh = bx + np.log1p(np.exp(-2.0 * bx)) - np.log(2.0)
        return -0.5 * quad + np.sum(x * phi, axis=-1) - np.sum(logcosh, axis=-1) / self.beta

    def activation_slope(self, x):
        t = self.activation(x)
        return self.beta * (1.0 - t * t)

    def energy_gradient(self, x):
        # dE/dx_i = phi_i'(x_i) * (x_i - (W phi)_i)
        x = np.asarray(x, dtype=float)
        return self.activation_slope(x) * (x - self._wphi(self.activation(x)))

    def metric_diagonal(self, x):
        """Diagonal of ``P(x) = J_x Phi(x)^{-1}``."""
        return 1.0 / self.activation_slope(x)

    def metric(self, x):
        p = self.metric_diagonal(x)
        out = np.zeros(p.shape + (2,))
        out[..., 0, 0] = p[..., 0]
        out[..., 1, 1] = p[..., 1]
        return out

    def metric_derivative_diagonal(self, x):
        """``d/dx_i P_ii(x) = 2 tanh(beta x_i) / (1 - tanh(beta x_i)^2)``."""
        t = self.activation(x)
        return 2.0 * t / (1.0 - t * t)

    def equilibrium_gammas(self, tol=1e-14):
        return tuple(equilibrium_gamma(ui, self.beta, tol) for ui in self.eigen_inputs)

    def equilibria(self):
        """Origin plus the four equilibria along the columns of ``M``."""
        pts = [np.zeros(2)]
        for j, g in enumerate(self.equilibrium_gammas()):
            if g > 0:
                pts += [g * M[:, j], -g * M[:, j]]
        return pts

    def drift_field(self):
        top = self.beta * self.eigen_inputs.max()
        if self.regime == "globally_contracting":
            consts = DriftConstants(lipschitz=1.0 + top, sublinearity=(1.0 + top) ** 2,
                                    contraction_rate=1.0 - top)
        else:
            consts = DriftConstants(lipschitz=1.0 + top, expansion_rate=top - 1.0)
        name = "hopfield_global" if self.regime == "globally_contracting" else "hopfield_multistable"
        return DriftField(2, lambda t, x: self.drift(x), consts, name=name)


def build_model(u, beta, weight_scale=0.5):
    u = tuple(float(v) for v in np.asarray(u, dtype=float).ravel())
    if len(u) != 2:
        raise ValueError("input u must have two entries")
    if min(u) < 0:
        raise ValueError(f"input entries must be non-negative, got {u}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return HopfieldModel(float(beta), u, float(weight_scale))


def energy(model, x):
    return model.energy(x)


def equilibrium_gamma(u_i, beta, tol=1e-12, max_iter=100_000):
    """Positive fixed point of ``gamma = u_i tanh(beta gamma)`` (0 if none)."""
    if u_i < 0 or beta <= 0:
        raise ValueError("need u_i >= 0 and beta > 0")
    if u_i * beta <= 1.0:
        return 0.0
    g = float(u_i)
    for _ in range(max_iter):
        new = u_i * np.tanh(beta * g)
        if abs(new - g) <= tol:
            g = new
            break
        g = new
    else:
        raise RuntimeError(f"fixed-point iteration for gamma did not converge (u={u_i})")
    # one Newton step on g - u tanh(beta g) to reach machine precision
    t = np.tanh(beta * g)
    return float(g - (g - u_i * t) / (1.0 - u_i * beta * (1.0 - t * t)))


@dataclass
class DriftConsistency:
    drift: np.ndarray
    reconstructed: np.ndarray
    residual: float


def drift_p_consistency(model, x):
    """Compare the drift with ``-P(x) grad E(x)`` at ``x`` (single or batch)."""
    x = np.asarray(x, dtype=float)
    drift = model.drift(x)
    rec = -model.metric_diagonal(x) * model.energy_gradient(x)
    res = np.linalg.norm(drift - rec, axis=-1)
    return DriftConsistency(drift, rec, float(np.max(res)))


@dataclass
class Thm2Hypotheses:
    orthant_ok: bool
    energy_order_ok: bool
    iii_residual: float
    iii_residual_flux: float
    details: dict


def _disk_samples(r, n_angles, n_radii):
    th = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    rr = np.linspace(0.0, r, n_radii + 1)[1:]
    pts = rr[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]
    return np.vstack([np.zeros((1, 2)), pts.reshape(-1, 2)])


def check_thm2_hypotheses(model, x_a, x_b, r, stationary=None, omega=None,
                          n_angles=1440, n_radii=60, support=1e-3):
    """Check the orthant and energy-ordering hypotheses and quantify the
    stationary-gradient hypothesis on a grid density.

    The energy ordering is sampled over the whole closed disk (rings out to
    the boundary circle).  ``iii_residual`` is the max over cells with
    ``mu >= support * max(mu)`` of ``|grad mu + P grad E mu| / max(mu)``;
    ``iii_residual_flux`` is the same with ``grad mu`` scaled by
    ``omega^2 / 2`` (the zero-flux form), reported when ``omega`` is given.
    """
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    th = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    circle = r * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def in_orthant(center):
        s = np.sign(center)
        if np.any(s == 0):
            return False
        return bool(np.all(np.sign(circle + center) == s))

    orthant_ok = in_orthant(x_a) and in_orthant(x_b)

    disk = _disk_samples(r, n_angles, n_radii)
    e_a = model.energy(disk + x_a)
    e_b = model.energy(disk + x_b)
    e_xb = float(model.energy(x_b))
    energy_order_ok = bool(e_a.max() <= e_xb <= e_b.min() and e_b.max() < 0.0)

    details = {
        "max_E_ball_a": float(e_a.max()),
        "E_x_b": e_xb,
        "min_E_ball_b": float(e_b.min()),
        "max_E_ball_b": float(e_b.max()),
    }

    iii = float("nan")
    iii_flux = float("nan")
    if stationary is not None:
        g = stationary.grid
        for c in (x_a, x_b):
            if (c[0] - r < g.x_min or c[0] + r > g.x_max
                    or c[1] - r < g.y_min or c[1] + r > g.y_max):
                raise ValueError("hypothesis balls overlap the grid boundary")
        mu = stationary.values
        dmu_x, dmu_y = np.gradient(mu, g.hx, g.hy)
        X, Y = np.meshgrid(g.xs, g.ys, indexing="ij")
        pts = np.stack([X, Y], axis=-1)
        pgrad = model.metric_diagonal(pts) * model.energy_gradient(pts)
        mask = mu >= support * mu.max()
        # np.gradient is one-sided on the outer ring; keep centered cells only
        mask[[0, -1], :] = False
        mask[:, [0, -1]] = False
        grad = np.stack([dmu_x, dmu_y], axis=-1)
        lit = np.linalg.norm(grad + pgrad * mu[..., None], axis=-1)
        iii = float(lit[mask].max() / mu.max())
        if omega is not None:
            flux = np.linalg.norm(0.5 * omega ** 2 * grad + pgrad * mu[..., None], axis=-1)
            iii_flux = float(flux[mask].max() / mu.max())
    return Thm2Hypotheses(orthant_ok, energy_order_ok, iii, iii_flux, details)
