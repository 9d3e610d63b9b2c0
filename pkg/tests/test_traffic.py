import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from owcsim import traffic

VIDEO = traffic.ServiceClass("video", 1e9, 60.0, 4.0)
VOICE = traffic.ServiceClass("voice", 1e7, 60.0, 1.0)
M = traffic.MobilityConfig()


def test_class_validation():
    with pytest.raises(ValueError):
        traffic.ServiceClass("x", 1e6, 10.0, 0.5)
    with pytest.raises(ValueError):
        traffic.ServiceClass("x", 1e6, 10.0, 1.0, p_min=2.0, p_max=1.0)
    with pytest.raises(ValueError):
        traffic.ServiceClass("x", 0.0, 10.0)


def test_session_mean_omega_one():
    x = traffic.sample_session_duration(VOICE, np.random.default_rng(0), 1_000_000)
    assert x.mean() == pytest.approx(60.0, rel=0.01)


def test_session_mean_omega_four():
    x = traffic.sample_session_duration(VIDEO, np.random.default_rng(1), 1_000_000)
    analytic = 4 / 5 * 60 / 4 + 1 / 5 * 4 * 60
    assert traffic.mean_session(60.0, 4.0) == pytest.approx(analytic)
    assert x.mean() == pytest.approx(analytic, rel=0.01)


def chi2_against(samples, cdf, bins=40):
    edges = np.quantile(samples, np.linspace(0, 1, bins + 1))
    edges[0], edges[-1] = 0.0, np.inf
    observed, _ = np.histogram(samples, edges)
    expected = np.diff(cdf(edges)) * len(samples)
    return stats.chisquare(observed, expected).pvalue


def test_session_histogram_goodness_of_fit():
    x = traffic.sample_session_duration(VIDEO, np.random.default_rng(2), 200_000)

    def cdf(t):
        t = np.minimum(t, 1e12)
        w = 0.8
        return 1 - w * np.exp(-4 * t / 60) - (1 - w) * np.exp(-t / 240)

    grid = np.linspace(0, 2000, 20001)
    assert integrate.trapezoid(traffic.session_pdf(grid, 60.0, 4.0), grid) == pytest.approx(1.0, abs=1e-3)
    assert chi2_against(x, cdf) > 0.01


def test_holding_pdf_omega_one_is_exponential():
    t = np.linspace(0, 500, 50)
    rate = 1 / 120 + 1 / 60
    assert np.allclose(traffic.holding_time_pdf(t, 120.0, 60.0, 1.0), rate * np.exp(-rate * t), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 1000.0), st.floats(1.0, 1000.0), st.floats(1.0, 10.0))
def test_holding_pdf_integrates_and_mean_matches_quadrature(Tr, Td, omega):
    total, _ = integrate.quad(traffic.holding_time_pdf, 0, np.inf, args=(Tr, Td, omega), epsabs=1e-12, epsrel=1e-10)
    assert total == pytest.approx(1.0, abs=1e-6)
    mean, _ = integrate.quad(lambda t: t * traffic.holding_time_pdf(t, Tr, Td, omega), 0, np.inf,
                             epsabs=0, epsrel=1e-10)
    assert traffic.mean_holding_time(Tr, Td, omega) == pytest.approx(mean, rel=1e-6)


def test_holding_pdf_is_exact_min_law():
    # the mixture density equals the law of min(hyper-exponential, exponential) for every omega
    rng = np.random.default_rng(4)
    for omega in (1.0, 2.0, 4.0):
        c = traffic.ServiceClass("c", 1e6, 60.0, omega)
        n = 200_000
        h = np.minimum(traffic.sample_session_duration(c, rng, n), rng.exponential(120.0, n))
        cdf = lambda t: 1 - traffic.holding_time_survival(np.minimum(t, 1e12), 120.0, 60.0, omega)
        assert chi2_against(h, cdf) > 0.01
        assert h.mean() == pytest.approx(traffic.mean_holding_time(120.0, 60.0, omega), rel=0.01)


def test_mean_holding_examples():
    assert traffic.mean_holding_time(60.0, 60.0, 1.0) == pytest.approx(30.0)
    assert traffic.mean_holding_time(1e9, 60.0, 4.0) == pytest.approx(traffic.mean_session(60.0, 4.0), rel=1e-6)


def test_omega_one_ks_exponential():
    rng = np.random.default_rng(5)
    x = traffic.sample_session_duration(VOICE, rng, 100_000)
    assert stats.kstest(x, "expon", args=(0, 60.0)).pvalue > 0.01


def test_spawn_counts():
    assert traffic.spawn_arrivals(VOICE, 10.0, np.random.default_rng(0), rate=0.0) == []
    rng = np.random.default_rng(6)
    counts = rng.poisson(5.0, 100_000)   # the count draw used by spawn_arrivals
    assert counts.mean() == pytest.approx(5.0, rel=0.01)
    n = [len(traffic.spawn_arrivals(VOICE, 1.0, rng, rate=5.0)) for _ in range(20_000)]
    assert np.mean(n) == pytest.approx(5.0, rel=0.02)
    a = traffic.spawn_arrivals(VOICE, 3.0, np.random.default_rng(7), rate=2.0)
    b = traffic.spawn_arrivals(VOICE, 3.0, np.random.default_rng(7), rate=2.0)
    assert [(u.position.tolist(), u.session_remaining) for u in a] == \
        [(u.position.tolist(), u.session_remaining) for u in b]


def test_thinning_nests_arrivals():
    classes = traffic.default_classes()
    lo = traffic.spawn_thinned(classes, [0.01] * 3, 0.05, 1.0, 3, 17, M, 0, 0.0)
    hi = traffic.spawn_thinned(classes, [0.04] * 3, 0.05, 1.0, 3, 17, M, 0, 0.0)
    key = lambda u: (u.class_k, tuple(u.position))
    assert {key(u) for u in lo} <= {key(u) for u in hi}
    total = sum(len(traffic.spawn_thinned(classes, [0.02] * 3, 0.05, 1.0, 8, s, M, 0, 0.0)) for s in range(20_000))
    assert total / 20_000 == pytest.approx(0.06, rel=0.05)


def test_advance_tiny_dt_keeps_position():
    users = traffic.spawn_arrivals(VOICE, 50.0, np.random.default_rng(8), rate=1.0)
    before = [u.position.copy() for u in users]
    users = traffic.advance(users, 1e-9, M)
    assert all(np.allclose(u.position, p, atol=1e-6) for u, p in zip(users, before))


def test_advance_removes_expiring_user():
    u = traffic.make_user(0, VOICE, M, np.random.default_rng(0))
    u.session_remaining = 0.5
    gone = []
    assert traffic.advance([u], 1.0, M, gone) == [] and gone == [u]


def test_positions_stay_in_room():
    m = traffic.MobilityConfig(speed_range=(0.5, 2.0), pause_range=(0.0, 2.0))
    users = traffic.spawn_arrivals(VOICE, 100.0, np.random.default_rng(9), m, rate=1.0)
    for u in users:
        u.session_remaining = u.residence_remaining = 1e9
    for _ in range(200):
        users = traffic.advance(users, 1.0, m)
        xy = np.array([u.position for u in users])
        assert np.all(xy[:, :2] >= -1e-12) and np.all(xy[:, 0] <= 5 + 1e-12) and np.all(xy[:, 1] <= 5 + 1e-12)
        assert np.all(xy[:, 2] == 1.0)


def test_long_run_holding_time():
    m = traffic.MobilityConfig(mean_residence=120.0)
    rng = np.random.default_rng(10)
    users = [traffic.make_user(i, VIDEO, m, rng) for i in range(100_000)]
    t = 0.0
    left = {}
    while users:
        dep = []
        users = traffic.advance(users, 10.0, m, dep)
        for u in dep:
            left[u.id] = t + u.holding_remaining
        t += 10.0
    assert np.mean(list(left.values())) == pytest.approx(traffic.mean_holding_time(120.0, 60.0, 4.0), rel=0.02)
