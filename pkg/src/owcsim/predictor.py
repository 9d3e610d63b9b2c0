"""Per-(AP, class) demand forecasting from the transient law of an M/G/inf system."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import EpsilonUnreachable, LengthMismatch
from .traffic import holding_mixture, mean_holding_time, sample_session_duration

QUANTILE_TOL = 1e-12


@dataclass(frozen=True)
class PredictorParams:
    epsilon: float = 0.05
    horizon_tau: float = 30.0
    pmf_tail_cutoff: float = 1e-12
    obs_interval: float = 1.0
    rate_window_slots: int = 10

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.horizon_tau > 0:
            raise ValueError("horizon_tau must be positive")
        if not 0 < self.pmf_tail_cutoff < 1:
            raise ValueError("pmf_tail_cutoff must lie in (0, 1)")
        if not self.obs_interval > 0:
            raise ValueError("obs_interval must be positive")
        if self.rate_window_slots < 1:
            raise ValueError("rate_window_slots must be >= 1")


@dataclass
class ObservationWindow:
    ap: int
    class_k: int
    timestamps: list
    counts: list
    arrivals_seen: int = 0
    window_span: float = 0.0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        if len(self.timestamps) != len(self.counts):
            raise LengthMismatch("timestamps and counts differ in length")


@dataclass(frozen=True)
class DemandForecast:
    ap: int
    class_k: int
    n_tilde: int
    pmf: np.ndarray
    p_tau: float
    q_tau: float
    basis_count: int
    mu_hat: float
    epsilon: float


class LossReport(NamedTuple):
    mae: float
    violation_rate: float


def persistence_prob(tau, Tr, Td, omega):
    """Probability that a user present now is still present after ``tau``.

    The integral of the holding-time survival over [tau, inf) is taken
    term by term over the two exponential components.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    w, r = holding_mixture(Tr, Td, omega)
    tail = w[0] / r[0] * np.exp(-r[0] * tau) + w[1] / r[1] * np.exp(-r[1] * tau)
    return float(tail / mean_holding_time(Tr, Td, omega))


def arrival_persistence_prob(tau, mean_th, p_tau):
    """Probability that a user arriving uniformly in (0, tau) is still present at tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return mean_th / tau * (1.0 - p_tau)


def transient_pmf(n_now, p_tau, poisson_mean, tail_cutoff=1e-12):
    """PMF of Binomial(n_now, p_tau) + Poisson(poisson_mean), truncated and renormalized."""
    if n_now < 0 or not 0 <= p_tau <= 1 or poisson_mean < 0:
        raise ValueError("invalid transient pmf parameters")
    binom = stats.binom.pmf(np.arange(n_now + 1), n_now, p_tau)
    if poisson_mean > 0:
        kmax = int(stats.poisson.isf(tail_cutoff, poisson_mean)) + 1
        pois = stats.poisson.pmf(np.arange(kmax + 1), poisson_mean)
    else:
        pois = np.ones(1)
    pmf = np.convolve(binom, pois)
    return pmf / pmf.sum()


def forecast_quantile(pmf, epsilon, tol=QUANTILE_TOL):
    """Smallest N with CDF(N) >= 1 - epsilon."""
    cdf = np.cumsum(pmf)
    hit = np.nonzero(cdf >= 1.0 - epsilon - tol)[0]
    if hit.size == 0:
        raise EpsilonUnreachable(f"retained mass {cdf[-1]:.15g} below 1 - epsilon = {1 - epsilon:.15g}")
    return int(hit[0])


def estimate_arrival_rate(w):
    if not w.window_span > 0:
        raise ValueError("window_span must be positive")
    return w.arrivals_seen / w.window_span


def predict_slot(w, params, cls, Tr, mu_hat=None):
    """Forecast the (AP, class) count one horizon ahead from the latest observation."""
    if not w.counts:
        raise ValueError("at least one observation is required")
    tau = params.horizon_tau
    n_now = int(w.counts[-1])
    if mu_hat is None:
        mu_hat = estimate_arrival_rate(w)
    p = persistence_prob(tau, Tr, cls.mean_session, cls.omega)
    q = arrival_persistence_prob(tau, mean_holding_time(Tr, cls.mean_session, cls.omega), p)
    pmf = transient_pmf(n_now, p, mu_hat * tau * q, params.pmf_tail_cutoff)
    n_tilde = forecast_quantile(pmf, params.epsilon)
    return DemandForecast(w.ap, w.class_k, n_tilde, pmf, p, q, n_now, mu_hat, params.epsilon)


def prediction_loss(forecasts, actuals):
    """Mean absolute forecast error and the fraction of under-forecasts."""
    f = np.asarray(forecasts, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if f.shape != a.shape:
        raise LengthMismatch(f"{f.shape} forecasts vs {a.shape} actuals")
    if f.size == 0:
        return LossReport(0.0, 0.0)
    return LossReport(float(np.mean(np.abs(f - a))), float(np.mean(a > f)))


def simulate_stationary_counts(rate, cls, Tr, times, rng, burn_in=None):
    """Exact counts of a stationary M/G/inf system with min(session, residence) holding.

    Returns the counts at ``times`` (seconds, after burn-in) so that forecast
    coverage can be audited against a ground truth.
    """
    times = np.asarray(times, dtype=float)
    burn = burn_in if burn_in is not None else 50 * mean_holding_time(Tr, cls.mean_session, cls.omega)
    horizon = times.max() + burn
    n = rng.poisson(rate * horizon)
    arrive = np.sort(rng.uniform(0, horizon, n))
    hold = np.minimum(sample_session_duration(cls, rng, n), rng.exponential(Tr, n))
    depart = np.sort(arrive + hold)
    t = times + burn
    return np.searchsorted(arrive, t, side="right") - np.searchsorted(depart, t, side="right")
