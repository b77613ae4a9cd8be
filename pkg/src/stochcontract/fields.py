"""Drift and diffusion fields, a small catalog of built-in systems, and the
infinitesimal generator.

Field callables are vectorised: they receive a time and an ``(n, d)`` array of
states and return ``(n, d)`` drifts or ``(n, d, m)`` diffusion matrices.  The
public ``__call__`` also accepts a single ``(d,)`` state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np


class FieldError(ValueError):
    """Raised for invalid field construction or catalog parameters."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class DriftConstants:
    lipschitz: Optional[float] = None          # L_f
    sublinearity: Optional[float] = None       # s_f
    contraction_rate: Optional[float] = None   # c
    expansion_rate: Optional[float] = None     # lambda
    expansion_radius: Optional[float] = None   # r


@dataclass(frozen=True)
class DiffusionConstants:
    # squared convention: ||G(x) - G(y)||_F^2 <= L_G ||x - y||^2
    lipschitz_sq: Optional[float] = None
    sublinearity: Optional[float] = None
    frobenius_sup: Optional[float] = None
    isotropic_amplitude: Optional[float] = None


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != d:
        raise FieldError(f"expected states of dimension {d}, got shape {x.shape}")
    return xb, single


@dataclass(frozen=True)
class DriftField:
    """Vector field ``f(t, x)`` with optional declared regularity constants."""

    dim: int
    func: Callable[[float, np.ndarray], np.ndarray]
    constants: DriftConstants = field(default_factory=DriftConstants)
    autonomous: bool = True
    name: str = "drift"

    def __call__(self, t, x):
        xb, single = _as_batch(x, self.dim)
        out = np.asarray(self.func(t, xb), dtype=float)
        return out[0] if single else out


@dataclass(frozen=True)
class DiffusionField:
    """Matrix field ``G(t, x)`` of shape ``(dim, noise_dim)``."""

    dim: int
    func: Callable[[float, np.ndarray], np.ndarray]
    constants: DiffusionConstants = field(default_factory=DiffusionConstants)
    noise_dim: Optional[int] = None
    name: str = "diffusion"

    def __post_init__(self):
        if self.noise_dim is None:
            object.__setattr__(self, "noise_dim", self.dim)

    @property
    def isotropic(self):
        return self.constants.isotropic_amplitude

    def __call__(self, t, x):
        xb, single = _as_batch(x, self.dim)
        out = np.asarray(self.func(t, xb), dtype=float)
        return out[0] if single else out

    def apply(self, t, x, dw):
        """Return ``G(t, x) @ dw`` row by row for batched ``x`` and ``dw``."""
        omega = self.isotropic
        if omega is not None:
            return omega * dw
        g = self.func(t, x)
        # explicit elementwise reduction keeps per-row results batch independent
        return (g * dw[:, None, :]).sum(axis=-1)


@dataclass(frozen=True)
class TestFunction:
    """Scalar test function ``h(t, x)`` with derivatives.

    ``hessian`` falls back to central differences of ``gradient`` and
    ``time_derivative`` to zero when not supplied.
    """

    __test__ = False  # not a pytest class

    value: Callable[[float, np.ndarray], float]
    gradient: Callable[[float, np.ndarray], np.ndarray]
    hessian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    time_derivative: Optional[Callable[[float, np.ndarray], float]] = None
    fd_step: float = 1e-5

    def __call__(self, t, x):
        return float(self.value(t, np.asarray(x, dtype=float)))

    def grad(self, t, x):
        return np.asarray(self.gradient(t, np.asarray(x, dtype=float)), dtype=float)

    def hess(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(t, x), dtype=float)
        d = x.size
        h = self.fd_step
        out = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            out[:, j] = (self.grad(t, x + e) - self.grad(t, x - e)) / (2 * h)
        return 0.5 * (out + out.T)

    def dt(self, t, x):
        if self.time_derivative is None:
            return 0.0
        return float(self.time_derivative(t, np.asarray(x, dtype=float)))

    @classmethod
    def squared_norm(cls):
        return cls(
            value=lambda t, x: float(x @ x),
            gradient=lambda t, x: 2.0 * x,
            hessian=lambda t, x: 2.0 * np.eye(x.size),
        )

    @classmethod
    def constant(cls, c=1.0):
        return cls(
            value=lambda t, x: float(c),
            gradient=lambda t, x: np.zeros_like(x),
            hessian=lambda t, x: np.zeros((x.size, x.size)),
        )


def eval_generator(f, G, h, t, x):
    """Infinitesimal generator ``dh/dt + grad h . f + 1/2 Tr(G hess(h) G^T)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != f.dim or G.dim != f.dim:
        raise FieldError(
            f"dimension mismatch: state {x.shape}, drift {f.dim}, diffusion {G.dim}"
        )
    g = G(t, x)
    hess = h.hess(t, x)
    return h.dt(t, x) + float(h.grad(t, x) @ f(t, x)) + 0.5 * float(np.trace(g.T @ hess @ g))


def coupled_fields(f, G):
    """Drift and diffusion of the pair ``(X, Z)`` driven by one Brownian path.

    The state is ``(x, z)`` in ``R^{2d}``; both halves receive the same noise,
    so the diffusion is the stacked ``(2d, d)`` matrix ``[G(x); G(z)]``.
    """
    d = f.dim

    def drift(t, s):
        return np.concatenate([f.func(t, s[:, :d]), f.func(t, s[:, d:])], axis=1)

    def diffusion(t, s):
        return np.concatenate([G.func(t, s[:, :d]), G.func(t, s[:, d:])], axis=1)

    return (
        DriftField(2 * d, drift, autonomous=f.autonomous, name=f"coupled({f.name})"),
        DiffusionField(2 * d, diffusion, noise_dim=G.noise_dim, name=f"coupled({G.name})"),
    )


def difference_test_function(d):
    """``h(x, z) = ||x - z||^2`` on the coupled state space."""

    def value(t, s):
        r = s[:d] - s[d:]
        return float(r @ r)

    def gradient(t, s):
        r = s[:d] - s[d:]
        return np.concatenate([2 * r, -2 * r])

    def hessian(t, s):
        eye = np.eye(d)
        return 2.0 * np.block([[eye, -eye], [-eye, eye]])

    return TestFunction(value, gradient, hessian)


# ---------------------------------------------------------------------------
# catalog

def linear_drift(A, name="linear"):
    A = np.asarray(A, dtype=float)
    sym = 0.5 * (A + A.T)
    rate = float(np.linalg.eigvalsh(sym).max())
    norm = float(np.linalg.norm(A, 2))
    consts = DriftConstants(
        lipschitz=norm,
        sublinearity=norm ** 2,
        contraction_rate=-rate if rate < 0 else None,
    )
    return DriftField(A.shape[0], lambda t, x: x @ A.T, consts, name=name)


def isotropic_diffusion(omega, d):
    omega = float(omega)
    eye = np.eye(d)

    def func(t, x):
        return np.broadcast_to(omega * eye, (x.shape[0], d, d)).copy()

    consts = DiffusionConstants(
        lipschitz_sq=0.0,
        sublinearity=d * omega ** 2,
        frobenius_sup=omega * np.sqrt(d),
        isotropic_amplitude=omega,
    )
    return DiffusionField(d, func, consts, name="constant_isotropic_diffusion")


def diagonal_trig_diffusion(a):
    """``G(x) = a * diag(sin x1, cos x2)``."""
    a = float(a)

    def func(t, x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = a * np.sin(x[:, 0])
        out[:, 1, 1] = a * np.cos(x[:, 1])
        return out

    consts = DiffusionConstants(
        lipschitz_sq=a ** 2,
        sublinearity=a ** 2,
        frobenius_sup=abs(a) * np.sqrt(2.0),
    )
    return DiffusionField(2, func, consts, name="paper_inhomogeneous_diffusion")


@dataclass(frozen=True)
class DoubleWell:
    """Tilted double-well potential along a unit ``axis``.

    ``E(x) = s^4/4 - s^2/2 + tilt*s + stiffness/2 * (|x|^2 - s^2)`` with
    ``s = axis . x``; the drift is ``-grad E`` and the metric is the identity.
    """

    dim: int = 2
    tilt: float = 0.0
    stiffness: float = 1.0
    axis: tuple = None

    def __post_init__(self):
        axis = np.zeros(self.dim) if self.axis is None else np.asarray(self.axis, float)
        if self.axis is None:
            axis[0] = 1.0
        if axis.shape != (self.dim,) or not np.isclose(np.linalg.norm(axis), 1.0):
            raise FieldError("axis must be a unit vector of the field dimension", "axis")
        object.__setattr__(self, "axis", tuple(axis))

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        s = x @ np.asarray(self.axis)
        return x, s

    def energy(self, x):
        x, s = self._split(x)
        perp = np.sum(x * x, axis=-1) - s * s
        return 0.25 * s ** 4 - 0.5 * s ** 2 + self.tilt * s + 0.5 * self.stiffness * perp

    def energy_gradient(self, x):
        x, s = self._split(x)
        a = np.asarray(self.axis)
        ds = s ** 3 - s + self.tilt - self.stiffness * s
        return self.stiffness * x + np.multiply.outer(ds, a)

    def metric(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))

    def metric_diagonal(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones_like(x)

    def drift(self, x):
        return -self.energy_gradient(x)

    def drift_field(self):
        consts = DriftConstants()
        if self.dim == 1 and self.tilt == 0.0:
            # (f(x)-f(y))/(x-y) = 1 - (x^2 + xy + y^2); pairs outside |x| < sqrt(2)
            consts = DriftConstants(
                contraction_rate=1.0, expansion_rate=1.0, expansion_radius=np.sqrt(2.0)
            )
        return DriftField(self.dim, lambda t, x: self.drift(x), consts,
                          name="double_well_gradient")


_REQUIRED = {
    "ou_linear": {"c": 0.5, "d": 2, "omega": 0.4},
    "double_well_gradient": {"tilt": 0.0, "stiffness": 1.0, "d": 2, "omega": 0.4,
                             "axis": None},
    "hopfield_global": {"beta": 2.0, "u": (0.2, 0.25), "a": 0.4},
    "hopfield_multistable": {"beta": 2.0, "u": (1.0, 3.0), "omega": 0.4},
    "paper_inhomogeneous_diffusion": {"a": 0.4},
    "constant_isotropic_diffusion": {"omega": 0.4, "d": 2},
}

CATALOG_NAMES = tuple(_REQUIRED)


def _positive(params, key):
    v = params[key]
    if not np.isscalar(v) or not float(v) > 0:
        raise FieldError(f"parameter {key!r} must be a positive number, got {v!r}", key)
    return float(v)


def _dimension(params, key="d"):
    v = params[key]
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
        raise FieldError(f"parameter {key!r} must be a positive integer, got {v!r}", key)
    return int(v)


def catalog_field(name, params: Mapping | None = None):
    """Build a named system and return ``(drift, diffusion)``.

    Drift entries come paired with the diffusion used alongside them; the pure
    diffusion entries return ``None`` as the drift.
    """
    if name not in _REQUIRED:
        raise FieldError(f"unknown catalog field {name!r}", "name")
    params = dict(params or {})
    unknown = set(params) - set(_REQUIRED[name])
    if unknown:
        key = sorted(unknown)[0]
        raise FieldError(f"unknown parameter {key!r} for {name!r}", key)
    p = {**_REQUIRED[name], **params}

    if name == "ou_linear":
        c, d = _positive(p, "c"), _dimension(p)
        f = linear_drift(-c * np.eye(d), name=name)
        f = DriftField(d, f.func, DriftConstants(lipschitz=c, sublinearity=c * c,
                                                 contraction_rate=c), name=name)
        return f, isotropic_diffusion(_positive(p, "omega"), d)
    if name == "double_well_gradient":
        d = _dimension(p)
        well = DoubleWell(d, float(p["tilt"]), _positive(p, "stiffness"), p["axis"])
        return well.drift_field(), isotropic_diffusion(_positive(p, "omega"), d)
    if name in ("hopfield_global", "hopfield_multistable"):
        from .hopfield import build_model

        u = p["u"]
        if np.ndim(u) != 1 or len(u) != 2:
            raise FieldError("parameter 'u' must be a length-2 vector", "u")
        beta = _positive(p, "beta")
        try:
            model = build_model(u, beta)
        except ValueError as exc:
            raise FieldError(str(exc), "u") from exc
        expected = "globally_contracting" if name == "hopfield_global" else "multistable"
        if model.regime != expected:
            raise FieldError(f"parameters put the model in the {model.regime} regime", "u")
        if name == "hopfield_global":
            return model.drift_field(), diagonal_trig_diffusion(_positive(p, "a"))
        return model.drift_field(), isotropic_diffusion(_positive(p, "omega"), 2)
    if name == "paper_inhomogeneous_diffusion":
        return None, diagonal_trig_diffusion(_positive(p, "a"))
    return None, isotropic_diffusion(_positive(p, "omega"), _dimension(p))
