"""Euler-Maruyama simulation of single trajectories, coupled pairs and particle
ensembles.

Brownian increments come from counter-based Philox streams.  The standard
normal used by particle ``i`` at global step ``k`` is entry
``(k % STEP_BLOCK, i % PARTICLE_BLOCK)`` of the block drawn from
``SeedSequence(seed, spawn_key=(i // PARTICLE_BLOCK, k // STEP_BLOCK))``.
It therefore depends only on ``(seed, i, k)``: not on the ensemble size, the
number of worker threads, or how a run is split into calls.  Two ensembles
evolved with the same seed share the same noise index by index.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

PARTICLE_BLOCK = 512
STEP_BLOCK = 64


class DivergenceError(RuntimeError):
    """A state became non-finite during integration."""

    def __init__(self, message, state=None, step=None, particle=None):
        super().__init__(message)
        self.state = state
        self.step = step
        self.particle = particle


def normal_block(seed, particle_block, step_block, noise_dim):
    ss = np.random.SeedSequence(seed, spawn_key=(particle_block, step_block))
    rng = np.random.Generator(np.random.Philox(ss))
    return rng.standard_normal((STEP_BLOCK, PARTICLE_BLOCK, noise_dim))


def brownian_increments(seed, indices, first_step, n_steps, noise_dim, dt):
    """Increments ``dW`` of shape ``(n_steps, len(indices), noise_dim)``."""
    indices = np.asarray(indices)
    out = np.empty((n_steps, len(indices), noise_dim))
    cache = {}
    for k in range(n_steps):
        step = first_step + k
        sb, so = divmod(step, STEP_BLOCK)
        for col, i in enumerate(indices):
            pb, po = divmod(int(i), PARTICLE_BLOCK)
            key = (pb, sb)
            if key not in cache:
                cache[key] = normal_block(seed, pb, sb, noise_dim)
            out[k, col] = cache[key][so, po]
    return out * np.sqrt(dt)


def step_em(x, f, G, t, dt, dW):
    """One Euler-Maruyama step ``x + f(t,x) dt + G(t,x) dW`` (single or batch)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    dW = np.asarray(dW, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    dWb = dW[None] if dW.ndim == 1 else dW
    if dWb.shape != (xb.shape[0], G.noise_dim):
        raise ValueError(f"noise increment shape {dW.shape} does not match the diffusion")
    new = xb + f.func(t, xb) * dt + G.apply(t, xb, dWb)
    bad = ~np.isfinite(new).all(axis=1)
    if bad.any():
        j = int(np.argmax(bad))
        raise DivergenceError(f"non-finite state after step at t={t}", state=new[j],
                              particle=j)
    return new[0] if single else new


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    time: float = 0.0
    master_seed: int = 0
    step: int = 0

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if len(self.particles) < 1:
            raise ValueError("an ensemble needs at least one particle")
        if not np.isfinite(self.particles).all():
            raise ValueError("ensemble contains non-finite particles")

    @property
    def n(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]

    def covariance(self):
        return np.cov(self.particles, rowvar=False)

    def to_csv(self, path, field_name="", dt=None):
        d = self.dim
        header = "id," + ",".join(f"x{j + 1}" for j in range(d))
        rows = [f"{i}," + ",".join(repr(float(v)) for v in p) for i, p in enumerate(self.particles)]
        with open(path, "w") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")
        _write_meta(path, seed=self.master_seed, dt=dt, field=field_name,
                    time=self.time, step=self.step)

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        with open(str(path) + ".meta.json") as fh:
            meta = json.load(fh)
        return cls(data[:, 1:], meta["time"], meta["seed"], meta["step"])


def _write_meta(path, **meta):
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    seed: int
    dt: float

    def to_csv(self, path, field_name=""):
        d = self.states.shape[1]
        header = "t," + ",".join(f"x{j + 1}" for j in range(d))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
        _write_meta(path, seed=self.seed, dt=self.dt, field=field_name)


@dataclass
class CoupledPair:
    trajectory_x: Trajectory
    trajectory_z: Trajectory
    shared_noise_seed: int


@dataclass
class EnsemblePath:
    times: np.ndarray
    states: np.ndarray = field(repr=False)  # (n_records, N, d)
    final: ParticleEnsemble = None


def _evolve_block(x, f, G, t0, step0, dt, n_steps, seed, pb, record_every, rec, col):
    """Advance one particle block in place; optionally store snapshots."""
    m = G.noise_dim
    count = x.shape[0]
    sqdt = np.sqrt(dt)
    k = 0
    while k < n_steps:
        step = step0 + k
        sb, so = divmod(step, STEP_BLOCK)
        z = normal_block(seed, pb, sb, m)
        stop = min(n_steps - k, STEP_BLOCK - so)
        for j in range(stop):
            t = t0 + (k + j) * dt
            dw = z[so + j, :count] * sqdt
            x = x + f.func(t, x) * dt + G.apply(t, x, dw)
            if not np.isfinite(x).all():
                bad = int(np.argmax(~np.isfinite(x).all(axis=1)))
                raise DivergenceError(
                    f"particle {pb * PARTICLE_BLOCK + bad} diverged at step {step + j + 1}",
                    state=x[bad], step=step + j + 1, particle=pb * PARTICLE_BLOCK + bad)
            if record_every and (k + j + 1) % record_every == 0:
                rec[(k + j + 1) // record_every, col] = x
        k += stop
    return x


def simulate_ensemble_path(e, f, G, dt, n_steps, record_every=None, workers=1):
    """Evolve every particle ``n_steps`` Euler-Maruyama steps.

    Snapshots are stored every ``record_every`` steps (including the initial
    state).  Work is split into fixed particle blocks, so the output is
    bit-identical for any ``workers`` count.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if e.dim != f.dim or G.dim != f.dim:
        raise ValueError("ensemble, drift and diffusion dimensions disagree")
    n, d = e.particles.shape
    n_rec = n_steps // record_every + 1 if record_every else 0
    rec = np.empty((n_rec, n, d)) if record_every else None
    if record_every:
        rec[0] = e.particles
    out = np.empty_like(e.particles)
    blocks = [(pb, slice(pb * PARTICLE_BLOCK, min(n, (pb + 1) * PARTICLE_BLOCK)))
              for pb in range((n + PARTICLE_BLOCK - 1) // PARTICLE_BLOCK)]

    def run(block):
        pb, sl = block
        out[sl] = _evolve_block(e.particles[sl].copy(), f, G, e.time, e.step, dt, n_steps,
                                e.master_seed, pb, record_every, rec, sl)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    else:
        for b in blocks:
            run(b)
    final = replace(e, particles=out, time=e.time + n_steps * dt, step=e.step + n_steps)
    times = e.time + dt * record_every * np.arange(n_rec) if record_every else np.array([])
    return EnsemblePath(times, rec, final)


def evolve_ensemble(e, f, G, dt, n_steps, workers=1):
    return simulate_ensemble_path(e, f, G, dt, n_steps, workers=workers).final


def _n_steps(T, dt):
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


def simulate_coupled_pairs(f, G, x0s, z0s, T, dt, seed, record_every=1, workers=1):
    """Evolve pairs ``(X^i, Z^i)`` that share particle ``i``'s Brownian path."""
    n = _n_steps(T, dt)
    px = simulate_ensemble_path(ParticleEnsemble(x0s, 0.0, seed), f, G, dt, n,
                                record_every, workers)
    pz = simulate_ensemble_path(ParticleEnsemble(z0s, 0.0, seed), f, G, dt, n,
                                record_every, workers)
    return px, pz


def simulate_coupled_pair(f, G, x0, z0, T, dt, seed):
    px, pz = simulate_coupled_pairs(f, G, np.atleast_2d(x0), np.atleast_2d(z0), T, dt, seed)
    return CoupledPair(Trajectory(px.times, px.states[:, 0], seed, dt),
                       Trajectory(pz.times, pz.states[:, 0], seed, dt), seed)


def _init_rng(seed):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(0xFFFFFFFF,))))


def sample_measure(spec, n, seed):
    """Draw ``n`` initial points from a measure description.

    ``spec`` is a mapping with ``kind`` one of ``point`` (``x``), ``gaussian``
    (``mean``, ``cov``), ``uniform_ball`` (``center``, ``radius``) or
    ``uniform_box`` (``lo``, ``hi``).
    """
    rng = _init_rng(seed)
    kind = spec["kind"]
    if kind == "point":
        x = np.asarray(spec["x"], dtype=float)
        return np.tile(x, (n, 1))
    if kind == "gaussian":
        mean = np.asarray(spec["mean"], dtype=float)
        cov = np.asarray(spec.get("cov", np.eye(mean.size)), dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(mean.size)
        return rng.multivariate_normal(mean, cov, size=n, method="cholesky")
    if kind == "uniform_ball":
        c = np.asarray(spec["center"], dtype=float)
        d = c.size
        v = rng.standard_normal((n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        rad = spec["radius"] * rng.random(n) ** (1.0 / d)
        return c + v * rad[:, None]
    if kind == "uniform_box":
        lo = np.asarray(spec["lo"], dtype=float)
        hi = np.asarray(spec["hi"], dtype=float)
        return lo + (hi - lo) * rng.random((n, lo.size))
    raise ValueError(f"unknown measure kind {kind!r}")
