import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispersedflow import linalg, transport
from dispersedflow.fem import Field, Space, gauss_rule, interpolate, norm
from dispersedflow.mesh import build_disk, build_rectangle

TIGHT = linalg.SolverSettings(rtol=1e-13)


@pytest.fixture(scope="module")
def disk():
    return build_disk(2, 4)


def _solenoidal(mesh, degree=2, s=1.0):
    # stream function psi = s (1 - r^2)^2 / 4 vanishes with its gradient on the unit circle
    def u(x, y):
        q = 1 - x**2 - y**2
        return -s * q * y, s * q * x

    return interpolate(Space(mesh, degree, 2), u)


# -- configuration and variable maps ----------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError, match="chi"):
        transport.TransportConfig(chi=2)
    with pytest.raises(ValueError, match="formulation"):
        transport.TransportConfig("log")
    with pytest.raises(ValueError):
        transport.TransportConfig(degree=3)


def test_sqrt_map():
    assert np.allclose(transport.alpha_of_values("sqrt_variable", 0.5), 0.25)


def test_bounded_map_and_inverse():
    assert np.isclose(transport.alpha_of_values("bounded_variable", 1.0), 0.25)
    assert np.isclose(transport.variable_of_values("bounded_variable", 0.25), 1.0)
    with pytest.raises(ValueError):
        transport.variable_of_values("bounded_variable", 1.0)


def test_raw_map_passes_through():
    v = np.array([0.1, 0.7])
    assert np.array_equal(transport.alpha_of_values("raw", v), v)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.999), st.sampled_from(transport.FORMULATIONS))
def test_round_trip(alpha, formulation):
    v = transport.variable_of_values(formulation, alpha)
    assert np.isclose(transport.alpha_of_values(formulation, v), alpha, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e6, 1e6))
def test_bounded_image_in_unit_interval(phi):
    a = transport.alpha_of_values("bounded_variable", phi)
    assert 0.0 <= a < 1.0


def test_alpha_at_matches_nodal_map_for_sqrt(disk):
    Z = Space(disk, 1)
    phi = interpolate(Z, lambda x, y: 0.5 + 0.1 * x)
    rule = gauss_rule(4)
    a, ga = transport.alpha_at("sqrt_variable", phi, rule)
    v, g = phi.at(rule)
    assert np.allclose(a, v**2)
    assert np.allclose(ga, 2 * v[..., None] * g)


# -- steps ---------------------------------------------------------------------------------------


@pytest.mark.parametrize("formulation", transport.FORMULATIONS)
@pytest.mark.parametrize("chi", [0, 1])
def test_zero_velocity_is_identity(disk, formulation, chi):
    var = interpolate(Space(disk, 1), lambda x, y: 0.3 + 0.2 * x * y)
    u = Field(Space(disk, 2, 2))
    out = transport.step(formulation, var, u, 0.1, chi=chi, settings=TIGHT)
    assert np.allclose(out.values, var.values, rtol=0, atol=1e-12)


@pytest.mark.parametrize("tau", [0.01, 0.3, 10.0])
def test_least_squares_conservation_equality(disk, tau):
    rule = gauss_rule(6)
    phi = interpolate(Space(disk, 1), lambda x, y: 0.6 + 0.3 * x - 0.2 * y**2)
    u = _solenoidal(disk, s=2.0)
    new = transport.step_sqrt(phi, u, tau, chi=1, rule=rule, settings=TIGHT)
    a, b, c = transport.conservation_terms(phi, new, u, tau, 1, rule)
    old = norm(phi, quad_order=6) ** 2
    assert abs(a + b + c - old) <= 1e-9 * old
    assert a <= old


@pytest.mark.parametrize("chi", [0, 1])
def test_rigid_rotation_keeps_radial_profile(chi):
    # straight-sided elements represent the radial quadratic exactly
    m = build_rectangle(4, 4, (-1, 1), (-1, 1))
    phi = interpolate(Space(m, 2), lambda x, y: 0.8 - 0.3 * (x**2 + y**2))
    u = interpolate(Space(m, 1, 2), lambda x, y: (-y, x))
    new = transport.step_sqrt(phi, u, 0.2, chi=chi, settings=TIGHT)
    assert np.allclose(new.values, phi.values, atol=1e-10)


def test_bounded_single_element_scalar_update():
    m = build_rectangle(1, 1, (-1, 1), (-1, 1))
    D, tau, phi0 = -0.8, 0.5, 2.0
    phi = interpolate(Space(m, 1), lambda x, y: np.full_like(x, phi0))
    u = interpolate(Space(m, 1, 2), lambda x, y: (0.5 * D * x, 0.5 * D * y))
    expected = phi0 / (1 + tau * 0.5 * D * (1 + abs(phi0)))
    for chi in (0, 1):
        new = transport.step_bounded(phi, u, tau, chi=chi, settings=TIGHT)
        assert np.allclose(new.values, expected, atol=1e-10)


def test_bounded_stays_in_unit_interval_under_compression():
    m = build_disk(2, 4)
    Z = Space(m, 2)
    phi = transport.variable_of(
        "bounded_variable", interpolate(Z, lambda x, y: 0.5 + 0.45 * np.tanh(5 * x)))
    u = interpolate(Space(m, 2, 2), lambda x, y: (-(1 - x**2 - y**2) * x * 3, -(1 - x**2 - y**2) * y * 3))
    for _ in range(10):
        phi = transport.step_bounded(phi, u, 0.2, chi=1)
        a = transport.alpha_of("bounded_variable", phi).values
        assert a.min() >= 0.0 and a.max() < 1.0


def test_divergence_free_raw_step_does_not_grow(disk):
    alpha = interpolate(Space(disk, 1), lambda x, y: 0.5 + 0.2 * x)
    u = _solenoidal(disk)
    new = transport.step_raw(alpha, u, 0.2, chi=1, settings=TIGHT)
    assert norm(new, quad_order=6) <= norm(alpha, quad_order=6)


def test_compressive_raw_step_grows(disk):
    alpha = interpolate(Space(disk, 1), lambda x, y: np.full_like(x, 0.4))
    u = interpolate(Space(disk, 2, 2), lambda x, y: (-(1 - x**2 - y**2) * x, -(1 - x**2 - y**2) * y))
    prev = norm(alpha)
    for _ in range(5):
        alpha = transport.step_raw(alpha, u, 0.1)
        cur = norm(alpha)
        assert cur > prev
        prev = cur


def test_step_rejects_bad_arguments(disk):
    var = Field(Space(disk, 1))
    u = Field(Space(disk, 2, 2))
    with pytest.raises(ValueError):
        transport.step_sqrt(var, u, 0.0)
    with pytest.raises(ValueError):
        transport.step_sqrt(var, u, 0.1, chi=2)
    with pytest.raises(ValueError):
        transport.step("log", var, u, 0.1)
