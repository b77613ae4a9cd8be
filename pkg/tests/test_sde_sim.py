import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochcontract.fields import (DiffusionField, DriftField, catalog_field, isotropic_diffusion,
                                  linear_drift)
from stochcontract.sde_sim import (DivergenceError, ParticleEnsemble, brownian_increments,
                                   evolve_ensemble, sample_measure, simulate_coupled_pair,
                                   simulate_coupled_pairs, simulate_ensemble_path, step_em)

ZERO_F = linear_drift(np.zeros((2, 2)))
ZERO_G = isotropic_diffusion(0.0, 2)


def test_step_zero_dynamics_leaves_state():
    x = np.array([0.3, -2.0])
    assert np.array_equal(step_em(x, ZERO_F, ZERO_G, 0.0, 0.37, np.array([1.0, 5.0])), x)


def test_step_deterministic_euler():
    f, _ = catalog_field("ou_linear", {"c": 0.5})
    out = step_em(np.array([1.0, 0.0]), f, ZERO_G, 0.0, 0.01, np.zeros(2))
    assert np.allclose(out, [0.995, 0.0], atol=1e-15)


def test_step_pure_diffusion():
    G = isotropic_diffusion(0.4, 2)
    x, dw = np.array([1.0, 2.0]), np.array([0.1, -0.3])
    assert np.array_equal(step_em(x, ZERO_F, G, 0.0, 0.01, dw), x + 0.4 * dw)


def test_step_rejects_bad_input_and_flags_divergence():
    with pytest.raises(ValueError):
        step_em(np.zeros(2), ZERO_F, ZERO_G, 0.0, 0.0, np.zeros(2))
    with pytest.raises(ValueError):
        step_em(np.zeros(2), ZERO_F, ZERO_G, 0.0, 0.1, np.zeros(3))
    blow = DriftField(2, lambda t, x: np.where(np.abs(x) > 0, np.inf, 0.0))
    with pytest.raises(DivergenceError) as exc:
        step_em(np.array([1.0, 0.0]), blow, ZERO_G, 0.0, 0.1, np.zeros(2))
    assert exc.value.state is not None


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_ensemble_divergence_reports_particle_and_step():
    f = DriftField(1, lambda t, x: x ** 3)
    G = isotropic_diffusion(0.0, 1)
    e = ParticleEnsemble(np.array([[0.1], [50.0]]))
    with pytest.raises(DivergenceError) as exc:
        evolve_ensemble(e, f, G, 0.1, 50)
    assert exc.value.particle == 1
    assert exc.value.step >= 1


def test_coupled_pair_equal_starts_are_identical():
    f, G = catalog_field("hopfield_global", {})
    pair = simulate_coupled_pair(f, G, [0.5, -1.0], [0.5, -1.0], 2.0, 0.01, seed=4)
    assert np.array_equal(pair.trajectory_x.states, pair.trajectory_z.states)
    assert len(pair.trajectory_x.times) == len(pair.trajectory_x.states) == 201
    assert np.allclose(np.diff(pair.trajectory_x.times), 0.01, atol=1e-12)


def test_coupled_linear_difference_follows_noiseless_recursion():
    c, dt = 0.7, 0.01
    f, G = catalog_field("ou_linear", {"c": c, "omega": 0.4})
    x0, z0 = np.array([1.0, 2.0]), np.array([-0.5, 0.3])
    pair = simulate_coupled_pair(f, G, x0, z0, 3.0, dt, seed=9)
    dist = np.linalg.norm(pair.trajectory_x.states - pair.trajectory_z.states, axis=1)
    expect = np.linalg.norm(x0 - z0) * (1 - c * dt) ** np.arange(len(dist))
    assert np.allclose(dist, expect, rtol=1e-10)


def test_coupled_pair_replays_from_seed():
    f, G = catalog_field("hopfield_global", {})
    a = simulate_coupled_pair(f, G, [1.0, 1.0], [-1.0, 0.0], 1.0, 0.01, seed=21)
    b = simulate_ensemble_path(ParticleEnsemble([[1.0, 1.0]], 0.0, 21), f, G, 0.01, 100, 1)
    assert np.array_equal(a.trajectory_x.states, b.states[:, 0])


def test_non_integer_horizon_rejected():
    f, G = catalog_field("ou_linear", {})
    with pytest.raises(ValueError):
        simulate_coupled_pair(f, G, [0, 0], [1, 1], 1.005, 0.01, seed=0)


def test_dynkin_consequence_for_hopfield_global_pairs():
    # mean ||X_t - Z_t||^2 over 200 coupled pairs stays below the contraction bound
    f, G = catalog_field("hopfield_global", {})
    c, L_G = 0.5, 0.16
    n = 200
    x0 = np.tile([1.5, -1.0], (n, 1))
    z0 = np.tile([-1.0, 1.2], (n, 1))
    px, pz = simulate_coupled_pairs(f, G, x0, z0, 4.0, 0.01, seed=5, record_every=50)
    h = np.sum((px.states - pz.states) ** 2, axis=2)
    h0 = float(np.sum((x0[0] - z0[0]) ** 2))
    for k, t in enumerate(px.times):
        mean = h[k].mean()
        se = h[k].std(ddof=1) / np.sqrt(n)
        assert mean <= h0 * np.exp(-(2 * c - L_G) * t) + 3 * se + 1e-12


def test_zero_steps_is_identity():
    f, G = catalog_field("ou_linear", {})
    e = ParticleEnsemble(np.random.default_rng(0).normal(size=(7, 2)), 1.5, 3, 10)
    out = evolve_ensemble(e, f, G, 0.01, 0)
    assert np.array_equal(out.particles, e.particles)
    assert out.time == 1.5 and out.step == 10


def test_brownian_variance_after_unit_time():
    G = isotropic_diffusion(0.4, 2)
    e = ParticleEnsemble(np.zeros((20000, 2)), 0.0, 17)
    out = evolve_ensemble(e, ZERO_F, G, 0.01, 100)
    var = out.particles.var(axis=0, ddof=1)
    assert np.allclose(var, 0.16, rtol=0.04)
    assert out.time == pytest.approx(1.0)


def test_thread_count_and_splitting_do_not_change_results():
    f, G = catalog_field("hopfield_global", {})
    x0 = np.random.default_rng(1).uniform(-2, 2, (1300, 2))
    e = ParticleEnsemble(x0, 0.0, 99)
    one = evolve_ensemble(e, f, G, 0.01, 150, workers=1)
    four = evolve_ensemble(e, f, G, 0.01, 150, workers=4)
    split = evolve_ensemble(evolve_ensemble(e, f, G, 0.01, 70, workers=3), f, G, 0.01, 80)
    assert np.array_equal(one.particles, four.particles)
    assert np.array_equal(one.particles, split.particles)


def test_noise_of_a_particle_does_not_depend_on_ensemble_size():
    f, G = catalog_field("hopfield_global", {})
    x0 = np.random.default_rng(2).uniform(-2, 2, (700, 2))
    big = evolve_ensemble(ParticleEnsemble(x0, 0.0, 5), f, G, 0.01, 90)
    small = evolve_ensemble(ParticleEnsemble(x0[:10], 0.0, 5), f, G, 0.01, 90)
    assert np.array_equal(big.particles[:10], small.particles)


@settings(max_examples=15, deadline=None)
@given(first=st.integers(0, 200), n=st.integers(1, 80), seed=st.integers(0, 2 ** 32))
def test_increments_match_ensemble_noise(first, n, seed):
    G = isotropic_diffusion(1.0, 2)
    idx = np.array([0, 3, 515])
    x0 = np.zeros((516, 2))
    e = ParticleEnsemble(x0, 0.0, seed, first)
    out = evolve_ensemble(e, ZERO_F, G, 0.25, n)
    dw = brownian_increments(seed, idx, first, n, 2, 0.25)
    assert np.allclose(out.particles[idx], dw.sum(axis=0), rtol=0, atol=1e-12)


def test_euler_mean_converges_at_first_order():
    # E X_T = (1 - c dt)^(T/dt) x0 for the Euler scheme; distance to e^{-cT} x0 is O(dt)
    c, x0, T = 1.0, np.array([1.0, 0.0]), 1.0
    f, G = catalog_field("ou_linear", {"c": c, "omega": 0.4})
    errs = []
    for dt in (0.1, 0.05, 0.025):
        e = ParticleEnsemble(np.tile(x0, (20000, 1)), 0.0, 8)
        m = evolve_ensemble(e, f, G, dt, int(round(T / dt))).particles.mean(axis=0)
        se = 0.4 * np.sqrt((1 - np.exp(-2 * c * T)) / (2 * c)) / np.sqrt(20000)
        assert abs(m[0] - (1 - c * dt) ** (T / dt)) < 4 * se
        errs.append(abs((1 - c * dt) ** (T / dt) - np.exp(-c * T)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.15)


def test_csv_exports(tmp_path):
    e = ParticleEnsemble(np.array([[1.0, 2.0], [0.1 + 0.2, -3.0]]), 2.5, 42, 250)
    path = tmp_path / "ens.csv"
    e.to_csv(path, "ou_linear", 0.01)
    assert path.read_text().splitlines()[0] == "id,x1,x2"
    back = ParticleEnsemble.from_csv(path)
    assert np.array_equal(back.particles, e.particles)
    assert (back.time, back.master_seed, back.step) == (2.5, 42, 250)
    meta = json.loads((tmp_path / "ens.csv.meta.json").read_text())
    assert meta["field"] == "ou_linear" and meta["dt"] == 0.01

    f, G = catalog_field("ou_linear", {})
    pair = simulate_coupled_pair(f, G, [0, 1], [1, 0], 0.05, 0.01, seed=1)
    tp = tmp_path / "traj.csv"
    pair.trajectory_x.to_csv(tp, "ou_linear")
    lines = tp.read_text().splitlines()
    assert lines[0] == "t,x1,x2" and len(lines) == 7


@pytest.mark.parametrize("spec", [
    {"kind": "point", "x": [1.0, 2.0]},
    {"kind": "gaussian", "mean": [0.0, 1.0], "cov": 0.5},
    {"kind": "uniform_ball", "center": [1.0, -1.0], "radius": 0.5},
    {"kind": "uniform_box", "lo": [0.0, 0.0], "hi": [1.0, 2.0]},
])
def test_sample_measure_kinds(spec):
    a = sample_measure(spec, 500, 3)
    assert a.shape == (500, 2)
    assert np.array_equal(a, sample_measure(spec, 500, 3))
    if spec["kind"] == "uniform_ball":
        assert np.all(np.linalg.norm(a - spec["center"], axis=1) <= 0.5)
    if spec["kind"] == "uniform_box":
        assert np.all((a >= 0) & (a <= [1.0, 2.0]))


def test_sample_measure_unknown_kind():
    with pytest.raises(ValueError):
        sample_measure({"kind": "cauchy"}, 5, 0)


def test_general_matrix_diffusion_apply():
    G = DiffusionField(2, lambda t, x: np.broadcast_to(np.array([[1.0, 2.0], [0.0, 3.0]]),
                                                        (x.shape[0], 2, 2)).copy())
    x = np.zeros((3, 2))
    dw = np.array([[1.0, 1.0], [0.0, 1.0], [2.0, -1.0]])
    assert np.allclose(G.apply(0.0, x, dw), dw @ np.array([[1.0, 2.0], [0.0, 3.0]]).T)
