import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import exact_fields
from mfgasym.diagnostics import (
    displacement_convexity_check,
    energy_density,
    energy_rate_check,
    free_boundary_rates,
    geometric_times,
    gradient_rate_check,
    hamiltonian_conservation,
    loglog_fit,
    power_integral,
    smoothing_check,
)
from mfgasym.lagrangian import extract_free_boundary
from mfgasym.profiles import (
    DomainError,
    Params,
    eval_self_similar,
    make_profile,
    self_similar_cell_averages,
)
from mfgasym.solver import Field, Grid


@pytest.fixture(scope="module", params=[1.0, 2.0, 4.0])
def closed_form(request):
    th = request.param
    prof, g, u, m = exact_fields(th, 1.0, 100.0, 4096, 400, clamp_u=True)
    return prof, Params(theta=th, horizon=99.0), g, u, m


def test_geometric_times():
    ts = geometric_times(1.0, 16.0)
    assert len(ts) == 17 and ts[0] == 1.0 and ts[-1] == pytest.approx(16.0)
    np.testing.assert_allclose(ts[1:] / ts[:-1], 2.0**0.25)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_loglog_fit_exact_power(k, c):
    t = geometric_times(1.0, 100.0)
    if abs(k) < 1e-3:
        return
    f = loglog_fit(t, c * t**k, "q", k, (1, 100))
    assert f.exponent_fit == pytest.approx(k, abs=1e-9)
    assert f.r_squared == pytest.approx(1.0, abs=1e-9)
    assert f.error < 1e-9


def test_loglog_fit_rejects_constant_and_short():
    t = geometric_times(1.0, 100.0)
    with pytest.raises(DomainError, match="zero variance"):
        loglog_fit(t, np.full_like(t, 3.0), "q", 0.0, (1, 100))
    with pytest.raises(DomainError):
        loglog_fit(t[:2], t[:2], "q", 1.0, (1, 2))
    with pytest.raises(DomainError):
        loglog_fit(t, -t, "q", 1.0, (1, 100))


def test_rate_fit_to_dict_is_plain():
    f = loglog_fit(geometric_times(1, 10), geometric_times(1, 10) ** -0.5, "q", -0.5, (1, 10),
                   {"flag": np.bool_(True)})
    d = f.to_dict()
    assert d["flag"] is True and isinstance(d["exponent_fit"], float)


def test_smoothing_rate_on_closed_form(closed_form):
    prof, P, g, u, m = closed_form
    f = smoothing_check(m, P, (1, 100))
    assert abs(f.exponent_fit + prof.alpha) < 1e-3
    assert f.extras["sup_scaled_peak"] < 2.0


def test_gradient_rate_on_closed_form(closed_form):
    prof, P, g, u, m = closed_form
    f = gradient_rate_check(u, P, (1, 100), m)
    assert abs(f.exponent_fit - (prof.alpha - 1.0)) < 1e-2
    assert abs(f.extras["u_t_exponent_fit"] - 2.0 * (prof.alpha - 1.0)) < 2e-2


def test_free_boundary_rates_on_closed_form(closed_form):
    prof, P, g, u, m = closed_form
    fb = extract_free_boundary(m, P.theta)
    for r in free_boundary_rates(fb, P, (2, 50)):
        assert r.error < 5e-3, r


def test_checks_do_not_modify_inputs(closed_form):
    prof, P, g, u, m = closed_form
    before_u, before_m = u.values.copy(), m.values.copy()
    smoothing_check(m, P, (1, 100))
    gradient_rate_check(u, P, (1, 100), m)
    displacement_convexity_check(m, 2.0, theta=P.theta)
    hamiltonian_conservation(u, m, P.theta)
    np.testing.assert_array_equal(u.values, before_u)
    np.testing.assert_array_equal(m.values, before_m)


def test_window_validation(closed_form):
    _, P, g, _, m = closed_form
    with pytest.raises(DomainError, match="decade"):
        smoothing_check(m, P, (10, 20))
    with pytest.raises(DomainError):
        smoothing_check(m, P, (0.5, 50))


def _energy_oracle(theta, eps, t):
    # pressure P = B (h^2 - x^2) on (-h, h); integrand 4 r^2 B^(2r) x^2 ((h - x)(h + x))^(2r - 2)
    prof = make_profile(1.0, theta)
    a = prof.alpha
    B = 0.5 * a * (1.0 - a) * t ** (-2.0 * a) * t ** (-a * theta)
    h = float(prof.edge(t))
    r = 0.5 * (theta + eps) / theta
    val, _ = integrate.quad(lambda x: 4 * r * r * B ** (2 * r) * x * x, -h, h,
                            weight="alg", wvar=(2 * r - 2, 2 * r - 2))
    return val


@pytest.mark.parametrize("theta,eps", [(1.0, 0.5), (2.0, 0.5), (2.0, 0.25), (4.0, 0.75)])
def test_energy_density_against_quadrature(theta, eps):
    prof = make_profile(1.0, theta)
    t = 3.0
    L = 3.0 * (1 + t**prof.alpha)
    g = Grid(-L, L, 4096, 0.0, 1.0, 1)
    m = self_similar_cell_averages(g.edges, t, prof)
    assert energy_density(m, g.x, g.dx, theta, eps) == pytest.approx(
        _energy_oracle(theta, eps, t), rel=1e-2)


def test_energy_density_narrow_support():
    x = np.linspace(-1, 1, 21)
    m = np.zeros(21)
    m[10] = 1.0
    with pytest.raises(DomainError):
        energy_density(m, x, 0.1, 2.0, 0.5)
    assert energy_density(np.zeros(21), x, 0.1, 2.0, 0.5) == 0.0


@pytest.mark.parametrize("theta,p", [(1.0, 2.0), (2.0, 0.5), (2.0, 3.0)])
def test_power_integral_against_quadrature(theta, p):
    prof = make_profile(1.0, theta)
    g = Grid(-4, 4, 2048, 0.0, 1.0, 1)
    m = self_similar_cell_averages(g.edges, 2.0, prof)
    h = float(prof.edge(2.0))
    exact, _ = integrate.quad(lambda x: eval_self_similar(x, 2.0, prof)[0] ** p, -h, h,
                              epsabs=0, epsrel=1e-12, limit=200)
    assert power_integral(m, g.x, g.dx, theta, p) == pytest.approx(exact, rel=2e-3)


def test_energy_rate_on_closed_form(closed_form):
    prof, P, g, u, m = closed_form
    for eps in (0.25, 0.5, 0.75):
        f = energy_rate_check(m, P, eps, (4, 25))
        assert f.error < 5e-3, f


def test_energy_rate_validation(closed_form):
    _, P, g, _, m = closed_form
    with pytest.raises(DomainError):
        energy_rate_check(m, P, 1.5)
    with pytest.raises(DomainError, match="blocks"):
        energy_rate_check(m, P, 0.5, (1, 60))


def test_convexity_on_closed_form(closed_form):
    prof, P, g, u, m = closed_form
    for p in (0.5, 2.0):
        rep = displacement_convexity_check(m, p, theta=P.theta)
        assert rep.convex, rep.min_second_difference


def test_convexity_stationary_is_flat():
    g = Grid(-2, 2, 200, 0.0, 1.0, 20)
    row = np.maximum(1 - Grid(-2, 2, 200, 0, 1, 1).x ** 2, 0.0)
    m = Field(np.tile(row, (21, 1)), g, "density")
    rep = displacement_convexity_check(m, 2.0, all_levels=True)
    assert np.max(np.abs(rep.second_differences)) < 1e-10
    assert rep.convex


def test_convexity_detects_concave_phi():
    # m = lam f(lam x) gives int m^2 = lam int f^2, concave when lam is
    g = Grid(-4, 4, 400, 0.0, 2.0, 40)
    lam = 2.0 - (g.times - 1.0) ** 2
    f = lambda y: np.maximum(1 - y**2, 0.0)  # noqa: E731
    m = Field(np.array([lv * f(lv * g.x) for lv in lam]), g, "density")
    assert not displacement_convexity_check(m, 2.0, all_levels=True).convex


def test_convexity_rejects_p_one(closed_form):
    *_, m = closed_form
    with pytest.raises(DomainError):
        displacement_convexity_check(m, 1.0)


def test_hamiltonian_zero_density():
    g = Grid(-1, 1, 50, 0.0, 1.0, 10)
    z = np.zeros((11, 50))
    rep = hamiltonian_conservation(Field(z, g, "value"), Field(z, g, "density"), 2.0)
    assert rep.drift == 0.0 and np.all(rep.H == 0.0)


def test_hamiltonian_vanishes_on_self_similar(closed_form):
    # H scales like t^(2 alpha - 2) and is conserved, so it vanishes
    prof, P, g, u, m = closed_form
    rep = hamiltonian_conservation(u, m, P.theta)
    ux = np.gradient(u.values, g.dx, axis=1)
    kinetic = np.sum(0.5 * m.values * ux**2, axis=1) * g.dx
    assert np.max(np.abs(rep.H) / kinetic) < 5e-3
