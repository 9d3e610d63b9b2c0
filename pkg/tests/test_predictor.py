import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from owcsim import predictor as pr
from owcsim import traffic
from owcsim.errors import EpsilonUnreachable, LengthMismatch

VIDEO = traffic.ServiceClass("video", 1e9, 600.0, 4.0)
VOICE = traffic.ServiceClass("voice", 1e7, 180.0, 1.0)


def brute_pmf(n, p, lam, kmax=60):
    """Independent oracle: direct double sum over binomial and Poisson terms."""
    from math import comb, exp, factorial
    out = np.zeros(kmax + n + 1)
    for i in range(n + 1):
        b = comb(n, i) * p ** i * (1 - p) ** (n - i)
        for j in range(kmax + 1):
            out[i + j] += b * exp(-lam) * lam ** j / factorial(j)
    return out


def test_worked_pmf_example():
    pmf = pr.transient_pmf(2, 0.5, 1.0)
    assert pmf[:3] == pytest.approx([0.0920, 0.2759, 0.3219], abs=1e-4)
    oracle = brute_pmf(2, 0.5, 1.0)
    assert np.allclose(pmf, oracle[:len(pmf)], atol=1e-12)
    assert pr.forecast_quantile(pmf, 0.05) == 4
    cdf = np.cumsum(oracle)
    assert cdf[3] < 0.95 <= cdf[4]


def test_pmf_point_mass_and_mean():
    assert np.array_equal(pr.transient_pmf(0, 0.3, 0.0), [1.0])
    pmf = pr.transient_pmf(7, 0.3, 2.5)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.arange(len(pmf)) @ pmf == pytest.approx(7 * 0.3 + 2.5, abs=1e-9)


def test_pmf_matches_monte_carlo_small():
    rng = np.random.default_rng(0)
    x = rng.binomial(5, 0.5, 200_000) + rng.poisson(1.0, 200_000)
    emp = np.bincount(x) / x.size
    pmf = pr.transient_pmf(5, 0.5, 1.0)
    n = max(len(emp), len(pmf))
    tv = 0.5 * np.abs(np.pad(emp, (0, n - len(emp))) - np.pad(pmf, (0, n - len(pmf)))).sum()
    assert tv < 0.01


def test_quantile_rules():
    pmf = pr.transient_pmf(2, 0.5, 1.0)
    assert pr.forecast_quantile(pmf, 1.0) == 0
    assert pr.forecast_quantile(np.array([0, 0, 0, 1.0]), 0.05) == 3
    with pytest.raises(EpsilonUnreachable):
        pr.forecast_quantile(np.array([0.5, 0.3]), 0.05)


@given(st.integers(0, 30), st.floats(0, 1), st.floats(0, 20), st.floats(0, 1), st.floats(0, 1))
def test_quantile_monotone_in_epsilon(n, p, lam, e1, e2):
    pmf = pr.transient_pmf(n, p, lam)
    lo, hi = sorted((e1, e2))
    assert pr.forecast_quantile(pmf, lo) >= pr.forecast_quantile(pmf, hi)


def test_persistence_examples():
    assert pr.persistence_prob(0.0, 120.0, 600.0, 4.0) == pytest.approx(1.0, abs=1e-15)
    E = traffic.mean_holding_time(120.0, 180.0, 1.0)
    assert pr.persistence_prob(E, 120.0, 180.0, 1.0) == pytest.approx(np.exp(-1), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 600), st.floats(5, 1000), st.floats(5, 1000), st.floats(1, 8))
def test_persistence_matches_quadrature(tau, Tr, Td, omega):
    def survival(s):
        cdf, _ = integrate.quad(traffic.holding_time_pdf, 0, s, args=(Tr, Td, omega), epsabs=0, epsrel=1e-12)
        return 1.0 - cdf
    E = traffic.mean_holding_time(Tr, Td, omega)
    tail, _ = integrate.quad(lambda s: traffic.holding_time_survival(s, Tr, Td, omega), tau, np.inf,
                             epsabs=0, epsrel=1e-12)
    assert pr.persistence_prob(tau, Tr, Td, omega) == pytest.approx(tail / E, rel=1e-8, abs=1e-14)
    assert survival(min(tau, 50.0)) == pytest.approx(traffic.holding_time_survival(min(tau, 50.0), Tr, Td, omega),
                                                     abs=1e-9)


@given(st.floats(0.01, 600), st.floats(5, 1000), st.floats(5, 1000), st.floats(1, 8), st.floats(0, 100))
def test_p_nonincreasing_and_q_in_unit_interval(tau, Tr, Td, omega, dtau):
    p1 = pr.persistence_prob(tau, Tr, Td, omega)
    p2 = pr.persistence_prob(tau + dtau, Tr, Td, omega)
    assert p2 <= p1 + 1e-15
    q = pr.arrival_persistence_prob(tau, traffic.mean_holding_time(Tr, Td, omega), p1)
    assert -1e-12 <= q <= 1 + 1e-12


def test_q_limits():
    E = traffic.mean_holding_time(120.0, 600.0, 4.0)
    tau = 1e-6 * E
    p = pr.persistence_prob(tau, 120.0, 600.0, 4.0)
    assert pr.arrival_persistence_prob(tau, E, p) == pytest.approx(1.0, abs=1e-5)
    tau = 1e6
    p = pr.persistence_prob(tau, 120.0, 600.0, 4.0)
    assert pr.arrival_persistence_prob(tau, E, p) == pytest.approx(E / tau, rel=1e-9)


def test_arrival_rate_estimate():
    w = pr.ObservationWindow(0, 0, [0.0], [0], 0, 300.0)
    assert pr.estimate_arrival_rate(w) == 0.0
    w = pr.ObservationWindow(0, 0, [0.0], [0], 6, 300.0)
    assert pr.estimate_arrival_rate(w) == pytest.approx(0.02)
    rng = np.random.default_rng(1)
    mu, slot = 0.05, 30.0
    seen = rng.poisson(mu * slot, 10_000).sum()
    w = pr.ObservationWindow(0, 0, [0.0], [0], int(seen), 10_000 * slot)
    assert pr.estimate_arrival_rate(w) == pytest.approx(mu, rel=0.05)


def test_window_validation():
    with pytest.raises(ValueError):
        pr.ObservationWindow(0, 0, [1.0, 1.0], [0, 0])
    with pytest.raises(ValueError):
        pr.ObservationWindow(0, 0, [0.0], [-1])


def test_empty_room_forecasts_zero():
    w = pr.ObservationWindow(0, 0, [0.0, 1.0], [0, 0], 0, 300.0)
    for eps in (0.0, 0.05, 0.5, 1.0):
        f = pr.predict_slot(w, pr.PredictorParams(epsilon=eps), VIDEO, 120.0)
        assert f.n_tilde == 0


def coverage(rate, cls, tau, eps, slots, seed):
    rng = np.random.default_rng(seed)
    times = np.arange(slots + 1) * tau
    counts = pr.simulate_stationary_counts(rate, cls, 120.0, times, rng)
    params = pr.PredictorParams(epsilon=eps, horizon_tau=tau)
    viol = []
    for j in range(slots):
        w = pr.ObservationWindow(0, 0, [times[j]], [int(counts[j])], 0, 1.0)
        f = pr.predict_slot(w, params, cls, 120.0, mu_hat=rate)
        viol.append(counts[j + 1] > f.n_tilde)
    return np.mean(viol)


@pytest.mark.parametrize("eps", [0.05, 0.1])
def test_quantile_coverage(eps):
    assert coverage(0.1, VIDEO, 30.0, eps, 10_000, 3) <= eps + 0.02


def test_prediction_loss():
    a = np.array([1, 2, 3, 0])
    assert pr.prediction_loss(a, a) == (0.0, 0.0)
    assert pr.prediction_loss(a + 1, a).mae == 1.0
    assert pr.prediction_loss(a - 1, a).violation_rate == 1.0
    with pytest.raises(LengthMismatch):
        pr.prediction_loss([1, 2], [1])


def test_loss_grows_with_horizon():
    rng = np.random.default_rng(4)
    times = np.arange(0, 3e5, 30.0)
    counts = pr.simulate_stationary_counts(0.1, VIDEO, 120.0, times, rng)
    losses = []
    for step in (1, 2):
        params = pr.PredictorParams(epsilon=0.05, horizon_tau=30.0 * step)
        f = [pr.predict_slot(pr.ObservationWindow(0, 0, [0.0], [int(c)], 0, 1.0), params, VIDEO, 120.0,
                             mu_hat=0.1).n_tilde for c in counts[:-step]]
        losses.append(pr.prediction_loss(f, counts[step:]).mae)
    assert losses[1] >= losses[0]
