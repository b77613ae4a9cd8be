import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochcontract.contraction import Box, estimate_diffusion_constants, estimate_one_sided_rate
from stochcontract.fields import (CATALOG_NAMES, DoubleWell, FieldError, TestFunction,
                                  catalog_field, coupled_fields, difference_test_function,
                                  eval_generator, isotropic_diffusion, linear_drift)

coords = st.floats(-3, 3, allow_nan=False)
vec2 = st.lists(coords, min_size=2, max_size=2).map(np.array)


def test_ou_catalog_entry():
    f, G = catalog_field("ou_linear", {"c": 0.5, "d": 2})
    x = np.array([1.0, -2.0])
    assert np.allclose(f(0.0, x), -0.5 * x)
    assert f.constants.contraction_rate == 0.5
    assert f.constants.lipschitz == 0.5
    assert np.allclose(G(0.0, x), 0.4 * np.eye(2))


def test_inhomogeneous_diffusion_entry():
    _, G = catalog_field("paper_inhomogeneous_diffusion", {"a": 0.4})
    x = np.array([0.7, -1.1])
    assert np.allclose(G(0.0, x), 0.4 * np.diag([np.sin(0.7), np.cos(-1.1)]))
    assert G.constants.lipschitz_sq == pytest.approx(0.16)
    assert G.constants.frobenius_sup == pytest.approx(0.4 * np.sqrt(2))


def test_constant_isotropic_entry():
    f, G = catalog_field("constant_isotropic_diffusion", {"omega": 0.4, "d": 2})
    assert f is None
    assert np.array_equal(G(3.0, np.array([5.0, 1.0])), 0.4 * np.eye(2))
    assert G.constants.isotropic_amplitude == 0.4


def test_unknown_name_and_bad_parameters_name_the_key():
    with pytest.raises(FieldError) as exc:
        catalog_field("no_such_field", {})
    assert exc.value.key == "name"
    with pytest.raises(FieldError) as exc:
        catalog_field("hopfield_global", {"beta": -1.0})
    assert exc.value.key == "beta"
    with pytest.raises(FieldError) as exc:
        catalog_field("ou_linear", {"gamma": 1.0})
    assert exc.value.key == "gamma"
    with pytest.raises(FieldError) as exc:
        catalog_field("ou_linear", {"d": 0})
    assert exc.value.key == "d"


def test_hopfield_entries_check_regime():
    with pytest.raises(FieldError):
        catalog_field("hopfield_global", {"u": [1.0, 3.0]})
    with pytest.raises(FieldError):
        catalog_field("hopfield_multistable", {"u": [0.2, 0.25]})


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_catalog_fields_are_deterministic_and_autonomous(name):
    f, G = catalog_field(name, {})
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, (50, G.dim))
    assert np.array_equal(G.func(0.0, x), G.func(7.0, x))
    if f is not None:
        assert np.array_equal(f.func(0.0, x), f.func(0.0, x))
        assert np.array_equal(f.func(0.0, x), f.func(3.5, x))


@pytest.mark.parametrize("name", ["ou_linear", "hopfield_global", "paper_inhomogeneous_diffusion",
                                  "constant_isotropic_diffusion"])
def test_declared_constants_are_not_violated_by_sampling(name):
    f, G = catalog_field(name, {})
    box = Box.cube(3.0, G.dim)
    diff = estimate_diffusion_constants(G, box, 2000, seed=1)
    assert diff.lipschitz_sq <= G.constants.lipschitz_sq + 1e-9
    assert diff.frobenius_sup <= G.constants.frobenius_sup + 1e-9
    if f is not None and f.constants.contraction_rate is not None:
        rep = estimate_one_sided_rate(f, box, 2000, seed=1)
        assert rep.global_rate_estimate <= -f.constants.contraction_rate + 1e-9


def test_generator_at_origin_is_d_omega_squared():
    d, omega = 3, 0.7
    f = linear_drift(np.diag([-1.0, 2.0, 0.5]))
    G = isotropic_diffusion(omega, d)
    val = eval_generator(f, G, TestFunction.squared_norm(), 0.0, np.zeros(d))
    assert val == pytest.approx(d * omega ** 2, rel=1e-14)


def test_generator_of_constant_is_zero():
    f, G = catalog_field("hopfield_global", {})
    assert eval_generator(f, G, TestFunction.constant(4.2), 0.0, np.array([0.3, -1.0])) == 0.0


def test_generator_linear_ou_value():
    f, G = catalog_field("ou_linear", {"c": 0.5, "d": 2, "omega": 0.4})
    val = eval_generator(f, G, TestFunction.squared_norm(), 0.0, np.array([1.0, 0.0]))
    assert val == pytest.approx(-0.68, abs=1e-14)


def test_generator_dimension_mismatch():
    f, G = catalog_field("ou_linear", {"d": 3})
    with pytest.raises(FieldError):
        eval_generator(f, G, TestFunction.squared_norm(), 0.0, np.zeros(2))


def test_finite_difference_hessian_matches_analytic():
    h_fd = TestFunction(lambda t, x: float(np.sin(x[0]) * x[1] ** 2),
                        lambda t, x: np.array([np.cos(x[0]) * x[1] ** 2, 2 * np.sin(x[0]) * x[1]]))
    x = np.array([0.4, -1.3])
    exact = np.array([[-np.sin(0.4) * 1.69, 2 * np.cos(0.4) * -1.3],
                      [2 * np.cos(0.4) * -1.3, 2 * np.sin(0.4)]])
    assert np.allclose(h_fd.hess(0.0, x), exact, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(x=vec2, alpha=st.floats(-3, 3))
def test_generator_is_linear_in_h(x, alpha):
    f, G = catalog_field("hopfield_global", {})
    h1 = TestFunction.squared_norm()
    h2 = TestFunction(lambda t, y: float(np.sin(y[0]) + y[1] ** 3),
                      lambda t, y: np.array([np.cos(y[0]), 3 * y[1] ** 2]),
                      lambda t, y: np.diag([-np.sin(y[0]), 6 * y[1]]))
    combo = TestFunction(lambda t, y: h1(t, y) + alpha * h2(t, y),
                         lambda t, y: h1.grad(t, y) + alpha * h2.grad(t, y),
                         lambda t, y: h1.hess(t, y) + alpha * h2.hess(t, y))
    lhs = eval_generator(f, G, combo, 0.0, x)
    rhs = eval_generator(f, G, h1, 0.0, x) + alpha * eval_generator(f, G, h2, 0.0, x)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(x=vec2, z=vec2)
def test_difference_process_generator_identity(x, z):
    f, G = catalog_field("hopfield_global", {})
    F, GG = coupled_fields(f, G)
    h = difference_test_function(2)
    val = eval_generator(F, GG, h, 0.0, np.concatenate([x, z]))
    expect = 2 * float((f(0, x) - f(0, z)) @ (x - z)) + float(np.sum((G(0, x) - G(0, z)) ** 2))
    assert val == pytest.approx(expect, rel=1e-10, abs=1e-12)


def test_double_well_gradient_and_metric():
    well = DoubleWell(2, tilt=0.2, stiffness=1.5)
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (20, 2))
    h = 1e-6
    fd = np.stack([(well.energy(x + h * e) - well.energy(x - h * e)) / (2 * h)
                   for e in np.eye(2)], axis=-1)
    assert np.allclose(well.energy_gradient(x), fd, atol=1e-7)
    assert np.array_equal(well.metric_diagonal(x), np.ones_like(x))
    assert np.allclose(well.drift_field()(0.0, x), -well.energy_gradient(x))


def test_double_well_rejects_bad_axis():
    with pytest.raises(FieldError):
        DoubleWell(2, axis=(1.0, 1.0))
