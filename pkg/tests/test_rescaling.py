import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scipy import integrate

from conftest import exact_fields
from mfgasym.profiles import (
    DomainError,
    Params,
    eval_stationary_profile,
    make_profile,
    self_similar_cell_averages,
)
from mfgasym.rescaling import (
    LyapunovTrace,
    convergence_metrics,
    critical_functional,
    entropy_gap,
    fit_exponential_rate,
    lyapunov,
    rescale,
    value_offset,
)


def _state(theta, shift, n=60, t0=10.0, t1=100.0, eta_points=2001):
    prof, g, u, m = exact_fields(theta, t0, t1, 4096, n, shift=shift)
    P = Params(theta=theta, horizon=t1 - t0)
    eta = np.linspace(-1.5, 1.5, eta_points) * prof.support_half_width
    return prof, P, g, u, m, rescale(u, m, P, np.log(g.times), eta)


@pytest.fixture(scope="module", params=[1.0, 2.0, 4.0])
def stationary(request):
    return _state(request.param, 0.0)


def test_rescaled_density_is_profile(stationary):
    prof, _, _, _, _, st_ = stationary
    eta = st_.eta_grid
    mid = 0.5 * (eta[1:] + eta[:-1])
    edges = np.concatenate([[2 * eta[0] - mid[0]], mid, [2 * eta[-1] - mid[-1]]])
    # mu is an eta-cell average, so compare with cell averages of the profile;
    # the x-cells are coarser than the eta-cells late in the run, hence L1
    Mc = self_similar_cell_averages(edges, 1.0, prof)
    assert np.max(np.sum(np.abs(st_.mu - Mc) * np.diff(edges), axis=1)) < 5e-3
    np.testing.assert_allclose(integrate.trapezoid(st_.mu, eta, axis=1), 1.0, atol=1e-3)


def test_stationary_state_has_zero_lyapunov(stationary):
    prof, *_, st_ = stationary
    tr = lyapunov(st_, prof)
    assert np.max(np.abs(tr.E)) < 1e-7
    assert np.max(np.abs(tr.dE_numeric)) < 1e-6
    inside = st_.mu > 1e-3
    assert np.max(np.abs(st_.w_eta[inside])) < 1e-6


def test_rescaled_arrays_read_only(stationary):
    *_, st_ = stationary
    with pytest.raises(ValueError):
        st_.mu[0, 0] = 1.0


@pytest.mark.parametrize("theta", [1.0, 4.0])
def test_lyapunov_derivative_identity(theta):
    # the time-shifted solution is a genuine solution, so dE/dtau = (theta-2)/(theta+2) kinetic
    prof, *_, st_ = _state(theta, 0.5)
    tr = lyapunov(st_, prof)
    err = np.median(np.abs(tr.dE_numeric - tr.dE_formula)[2:-2])
    assert err < 0.1 * np.median(np.abs(tr.dE_formula))
    assert np.all(np.sign(tr.dE_formula) == np.sign(theta - 2.0))


def test_shifted_theta1_decays_like_time_shift_mode():
    # the time-shift mode gives E ~ exp(-2 tau), i.e. k = 1
    prof, *_, st_ = _state(1.0, 0.5)
    tr = lyapunov(st_, prof)
    k, r2 = fit_exponential_rate(tr, (np.log(10.0), np.log(100.0)))
    assert k == pytest.approx(1.0, abs=0.02) and r2 > 0.999


def test_critical_functional_derivative():
    prof, *_, st_ = _state(2.0, 0.5, n=120)
    f, df = critical_functional(st_, prof)
    num = np.gradient(f, st_.tau_samples)
    mid = slice(5, -5)
    np.testing.assert_allclose(num[mid], df[mid], rtol=2e-2)


def test_critical_functional_needs_theta2(stationary):
    prof, *_, st_ = stationary
    if prof.theta == 2.0:
        assert lyapunov(st_, prof).f_critical is not None
    else:
        with pytest.raises(DomainError):
            critical_functional(st_, prof)


def test_profile_mismatch_rejected(stationary):
    prof, *_, st_ = stationary
    with pytest.raises(DomainError, match="mass"):
        lyapunov(st_, make_profile(2.0, prof.theta))
    with pytest.raises(DomainError, match="theta"):
        lyapunov(st_, make_profile(1.0, prof.theta + 1.0))


def test_rescale_outside_window(stationary):
    _, P, g, u, m, st_ = stationary
    with pytest.raises(DomainError):
        rescale(u, m, P, [np.log(g.t1) + 0.1], st_.eta_grid)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 5.0), st.lists(st.floats(0.0, 3.0), min_size=5, max_size=5))
def test_entropy_gap_nonnegative(theta, mus):
    prof = make_profile(1.0, theta)
    eta = np.linspace(-2, 2, 5) * prof.support_half_width
    assert np.all(entropy_gap(np.array(mus), eta, prof) >= -1e-12)


def test_entropy_gap_vanishes_at_profile():
    prof = make_profile(1.0, 2.0)
    eta = np.linspace(-2, 2, 101)
    M, _ = eval_stationary_profile(eta, prof)
    np.testing.assert_allclose(entropy_gap(M, eta, prof), 0.0, atol=1e-15)


def test_convergence_metrics_zero_on_exact(stationary):
    prof, _, g, u, m, _ = stationary
    for p in (1.0, np.inf):
        tab = convergence_metrics(m, u, prof, p, [g.times[0], g.times[-1]])
        assert np.max(tab.D1) < 1e-12
        assert np.max(tab.D2) < 1e-6
        assert np.max(tab.D3) < 1e-4
        assert len(list(tab.rows())) == 2


def test_convergence_metrics_validation(stationary):
    prof, _, g, u, m, _ = stationary
    with pytest.raises(DomainError):
        convergence_metrics(m, u, prof, 0.5, [g.times[0]])
    with pytest.raises(DomainError):
        convergence_metrics(m, u, prof, 1.0, [g.t1 + 1.0])


def _trace(E, theta=1.0):
    tau = np.linspace(0, 3, len(E))
    z = np.zeros_like(tau)
    return LyapunovTrace(tau, np.asarray(E, dtype=float), z, z, theta)


def test_exponential_fit_exact():
    tau = np.linspace(0, 3, 31)
    k, r2 = fit_exponential_rate(_trace(2.0 * np.exp(-2 * 0.3 * tau)), (0, 3))
    assert k == pytest.approx(0.3, abs=1e-12) and r2 == pytest.approx(1.0)


def test_exponential_fit_guards():
    tau = np.linspace(0, 3, 31)
    with pytest.raises(DomainError):
        fit_exponential_rate(_trace(np.exp(-tau), theta=2.0), (0, 3))
    with pytest.raises(DomainError):
        fit_exponential_rate(_trace(-np.exp(-tau)), (0, 3))
    with pytest.raises(DomainError):
        fit_exponential_rate(_trace(np.exp(-tau)), (0, 0.1))
    noisy = np.exp(-tau) * (1 + 0.9 * np.sin(40 * tau))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        fit_exponential_rate(_trace(noisy), (0, 3))
    assert any("r^2" in str(x.message) for x in w)


def test_value_offset_rules(stationary):
    _, P, g, u, m, _ = stationary
    off = value_offset(u, P)
    if P.theta > 2:
        assert off == 0.0
    else:
        assert off == pytest.approx(np.interp(0.0, g.x, u.at(g.t0)))
    plan = Params(theta=P.theta, horizon=P.horizon, variant="planning")
    assert value_offset(u, plan) == 0.0
