"""User association and per-AP energy-efficiency power allocation.

The per-AP problem maximizes sum(ln C_n) / sum(P_n) over floor <= P <= P_max
and sum(P) <= budget, with C_n = xi B log2(1 + kappa_n P_n). The ratio is
handled by a Dinkelbach outer loop; each parametric subproblem is solved
exactly from its Lagrangian stationarity condition.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import lambertw

from .errors import EmptyNetwork, InfeasibleFloor, ZeroRate
from .phy import E_OVER_2PI

LN2 = np.log(2.0)


def utility(rate):
    """Per-user utility; natural log with rates floored at 1 bit/s."""
    return np.log(np.maximum(rate, 1.0))


# ---------------------------------------------------------------------------
# Association
# ---------------------------------------------------------------------------

@dataclass
class AssociationMatrix:
    serving: np.ndarray          # (N,) AP index, -1 when unassociated
    classes: np.ndarray          # (N,) class index
    n_aps: int
    n_classes: int

    def matrix(self):
        S = np.zeros((self.n_aps, self.n_classes, len(self.serving)), dtype=np.int8)
        for n, (a, k) in enumerate(zip(self.serving, self.classes)):
            if a >= 0:
                S[a, k, n] = 1
        return S

    def users_of(self, a):
        return np.nonzero(self.serving == a)[0]

    @property
    def unassociated(self):
        return int(np.count_nonzero(self.serving < 0))


def associate_distance(user_pos, ap_pos):
    """Nearest AP by Euclidean distance; ``argmin`` keeps the lowest index on ties."""
    user_pos = np.atleast_2d(user_pos)
    ap_pos = np.atleast_2d(ap_pos)
    if len(ap_pos) == 0:
        raise ValueError("at least one AP is required")
    if len(user_pos) == 0:
        return np.zeros(0, dtype=int)
    d = np.linalg.norm(user_pos[:, None, :] - ap_pos[None, :, :], axis=-1)
    return np.argmin(d, axis=1)


def associate_pdp(gains, floors, priority, ap_budgets):
    """Greedy association in class-priority order.

    ``floors[n, a]`` is the power user n would need from AP a (``inf`` when
    infeasible). Each user, taken in decreasing ``priority`` (ties broken by
    stronger best gain, then index), joins the highest-gain AP whose
    remaining budget covers its floor there.
    """
    gains = np.atleast_2d(gains)
    N, A = gains.shape
    remaining = np.array(ap_budgets, dtype=float).copy()
    serving = np.full(N, -1, dtype=int)
    if N == 0:
        return serving, remaining
    order = np.lexsort((np.arange(N), -gains.max(axis=1), -np.asarray(priority, dtype=float)))
    for n in order:
        for a in np.argsort(-gains[n], kind="stable"):
            if gains[n, a] <= 0:
                break
            if floors[n, a] <= remaining[a]:
                serving[n] = a
                remaining[a] -= floors[n, a]
                break
    return serving, remaining


def audit_pdp_association(serving, gains, floors, priority, ap_budgets):
    """Replay the greedy order and check each admitted user got the best AP with room left.

    Returns the list of violating user indices (empty when the post-condition holds).
    """
    gains = np.atleast_2d(gains)
    N = len(serving)
    remaining = np.array(ap_budgets, dtype=float).copy()
    order = np.lexsort((np.arange(N), -gains.max(axis=1), -np.asarray(priority, dtype=float)))
    bad = []
    for n in order:
        ok = (floors[n] <= remaining) & (gains[n] > 0)
        a = serving[n]
        if a < 0:
            if ok.any():
                bad.append(int(n))
            continue
        if not ok[a] or gains[n, a] < gains[n][ok].max():
            bad.append(int(n))
        remaining[a] -= floors[n, a]
    return bad


def forecast_reserve(n_tilde, current, ref_floor):
    """Power held back per AP for users forecast to arrive, shape ``(A,)``.

    ``n_tilde`` and ``current`` are ``(A, K)`` counts, ``ref_floor`` is ``(K,)``.
    """
    extra = np.maximum(np.asarray(n_tilde) - np.asarray(current), 0)
    return extra @ np.asarray(ref_floor, dtype=float), extra


# ---------------------------------------------------------------------------
# Floors, gradients and duals
# ---------------------------------------------------------------------------

def required_power(c_min, H, interference, link):
    """Power at which the achievable rate equals ``c_min``."""
    if not H > 0:
        return np.inf
    growth = np.exp2(c_min / (link.xi * link.bandwidth)) - 1.0
    return link.gamma * (link.noise_floor + interference) * growth / (E_OVER_2PI * (link.responsivity * H) ** 2)


def min_power_floor(interference, cls, H, link):
    """QoS floor max(P_min, P_req); raises ``InfeasibleFloor`` above the class P_max."""
    if not H > 0:
        raise InfeasibleFloor(np.inf, cls.p_max, "zero channel gain")
    floor = max(cls.p_min, required_power(cls.min_rate, H, interference, link))
    if floor > cls.p_max:
        raise InfeasibleFloor(floor, cls.p_max)
    return floor


def linearize_utility(P_current, H, interference, link):
    """Slope dU/dP of U = ln C at ``P_current``."""
    C = link.rate(P_current, H, interference)
    if not C > 0:
        raise ZeroRate("rate is zero at the linearization point")
    kappa = link.kappa(H, interference)
    dC = link.xi * link.bandwidth * kappa / ((1.0 + kappa * P_current) * LN2)
    return dC / C


@dataclass(frozen=True)
class DualState:
    lam: np.ndarray
    mu: float
    step_alpha1: float = 0.1
    step_alpha2: float = 0.1


def dual_update(d, P, floors, p_max_total):
    """One projected subgradient step on the floor and budget multipliers."""
    P = np.asarray(P, dtype=float)
    lam = np.maximum(0.0, d.lam + d.step_alpha1 * (np.asarray(floors) - P))
    mu = max(0.0, d.mu + d.step_alpha2 * (P.sum() - p_max_total))
    return DualState(lam, mu, d.step_alpha1, d.step_alpha2)


# ---------------------------------------------------------------------------
# Per-AP energy-efficiency allocation
# ---------------------------------------------------------------------------

@dataclass
class EEResult:
    powers: np.ndarray
    floors: np.ndarray
    lam: np.ndarray
    mu: float
    ee_value: float
    iterations: int
    dual_iters: int
    converged: bool
    trace: list = field(default_factory=list)
    price: float = 0.0           # Dinkelbach parameter at which ``powers`` is stationary

    def kkt_residuals(self, kappa, budget, p_max):
        return kkt_residuals(self.powers, kappa, self.floors, p_max, budget, self.price, self.lam, self.mu)


def marginal_utility(P, kappa):
    """d/dP of ln(log2(1 + kappa P)); independent of the xi B scale."""
    x = kappa * P
    return kappa / ((1.0 + x) * np.log1p(x))


def stationary_power(kappa, price):
    """Unconstrained P solving marginal_utility(P) = price.

    With y = 1 + kappa P the condition is y ln y = kappa / price, whose root
    is y = c / W(c) for the principal Lambert branch.
    """
    c = np.asarray(kappa / price, dtype=float)
    w = lambertw(c).real
    x = np.where(c > 1e-8, c / np.where(w > 0, w, 1.0) - 1.0, c)
    return x / kappa


def _box_solution(kappa, price, lo, hi):
    return np.clip(stationary_power(kappa, price), lo, hi)


def _solve_parametric(kappa, t, lo, hi, budget, tol=1e-13, max_bisect=200):
    """argmax sum ln C - t sum P over the box and budget; returns (P, mu, bisection steps)."""
    P = _box_solution(kappa, t, lo, hi)
    if P.sum() <= budget:
        return P, 0.0, 0
    mu_lo, mu_hi = 0.0, max(float(np.max(marginal_utility(lo, kappa))) - t, 0.0)
    steps = 0
    while steps < max_bisect and mu_hi - mu_lo > tol * max(1.0, mu_hi):
        mid = 0.5 * (mu_lo + mu_hi)
        if _box_solution(kappa, t + mid, lo, hi).sum() > budget:
            mu_lo = mid
        else:
            mu_hi = mid
        steps += 1
    return _box_solution(kappa, t + mu_hi, lo, hi), mu_hi, steps


def _gradient_solve(kappa, t, lo, hi, budget, alpha, iters):
    """Primal recovery from projected dual subgradient steps (floor and budget prices)."""
    d = DualState(np.zeros_like(kappa), 0.0, alpha, alpha)
    for i in range(1, iters + 1):
        price = np.maximum(t + d.mu - d.lam, 1e-300)
        P = np.clip(stationary_power(kappa, price), 0.0, hi)
        d = dual_update(DualState(d.lam, d.mu, alpha / i, alpha / i), P, lo, budget)
    P = np.clip(P, lo, hi)
    if P.sum() > budget:
        # shrink the slack above the floors proportionally
        slack = P - lo
        P = lo + slack * max(0.0, (budget - lo.sum()) / slack.sum())
    return P, d.mu, iters


def kkt_residuals(P, kappa, floors, p_max, budget, t, lam, mu):
    """Relative stationarity residual and the two complementary-slackness products."""
    g = marginal_utility(P, kappa)
    upper = np.maximum(0.0, g - t - mu + lam) * (P >= p_max)
    stat = g - t - mu + lam - upper
    scale = max(t + mu, 1e-300)
    return {
        "stationarity": float(np.max(np.abs(stat)) / scale) if len(P) else 0.0,
        "slack_floor": float(np.max(np.abs(lam * (floors - P)))) if len(P) else 0.0,
        "slack_budget": float(abs(mu * (P.sum() - budget))),
    }


def optimize_ap(kappa, floors, p_max, budget, rate_scale, tol=1e-6, max_iter=500,
                warm_start=None, method="exact", alpha=0.1, dual_iters=200):
    """Maximize sum(ln C)/sum(P) for one AP.

    ``kappa`` is the effective SINR per watt of each served user and
    ``rate_scale`` is xi B, so C = rate_scale * log2(1 + kappa P).
    """
    kappa = np.asarray(kappa, dtype=float)
    lo = np.asarray(floors, dtype=float)
    hi = np.broadcast_to(np.asarray(p_max, dtype=float), kappa.shape).astype(float)
    n = len(kappa)
    if n == 0:
        return EEResult(np.zeros(0), lo, np.zeros(0), 0.0, 0.0, 0, 0, True)
    if np.any(lo > hi) or not np.all(np.isfinite(lo)):
        bad = int(np.argmax(lo - hi))
        raise InfeasibleFloor(float(lo[bad]), float(hi[bad]))
    if lo.sum() > budget * (1 + 1e-12):
        raise InfeasibleFloor(float(lo.sum()), float(budget), "floors exceed the AP budget")

    def ee_of(P):
        return float(utility(rate_scale * np.log2(1.0 + kappa * P)).sum() / P.sum())

    P = lo.copy() if warm_start is None else np.clip(warm_start, lo, hi)
    if P.sum() > budget:
        P = lo.copy()
    t = ee_of(P)
    trace = [(t, 0.0, 0.0)]
    price, mu, total_dual = t, 0.0, 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if method == "exact":
            P_new, mu_new, steps = _solve_parametric(kappa, t, lo, hi, budget)
        else:
            P_new, mu_new, steps = _gradient_solve(kappa, t, lo, hi, budget, alpha, dual_iters)
        total_dual += steps
        t_new = ee_of(P_new)
        primal = max(0.0, P_new.sum() - budget, float(np.max(lo - P_new)))
        done = abs(t_new - t) <= tol * max(1.0, abs(t))
        if t_new < t:
            # the parametric optimum can only improve the ratio; a drop is round-off, keep the incumbent
            converged = done
            break
        trace.append((t_new, primal, abs(t_new - t)))
        P, price, mu, t = P_new, t, mu_new, t_new
        if done:
            converged = True
            break
    g = marginal_utility(P, kappa)
    # stationarity of the Lagrangian: dU/dP - price + lam - mu = 0 at a floor-bound user
    lam = np.where(P <= lo * (1 + 1e-12), np.maximum(0.0, price + mu - g), 0.0)
    return EEResult(P, lo, lam, mu, t, it, total_dual, converged, trace, price)


def uniform_power(serving, n_aps, ap_budget, p_max, extra=None):
    """Equal split of each AP budget over its served users (plus ``extra`` reserved slots), capped."""
    serving = np.asarray(serving)
    P = np.zeros(len(serving))
    counts = np.bincount(serving[serving >= 0], minlength=n_aps).astype(float)
    if extra is not None:
        counts = counts + np.asarray(extra, dtype=float)
    budgets = np.broadcast_to(np.asarray(ap_budget, dtype=float), (n_aps,))
    cap = np.broadcast_to(np.asarray(p_max, dtype=float), P.shape)
    for n, a in enumerate(serving):
        if a >= 0:
            P[n] = min(budgets[a] / counts[a], cap[n])
    return P


def network_cf(serving, P, rates):
    """(sum ln C / sum P, 10 log10(sum C / sum P)) over served users.

    Like the utility, the delivered rate is floored at 1 bit/s inside the dB
    figure so a served user whose beam has been lost keeps both finite.
    """
    served = np.asarray(serving) >= 0
    if not served.any():
        raise EmptyNetwork("no user is served")
    P = np.asarray(P, dtype=float)[served]
    C = np.asarray(rates, dtype=float)[served]
    return float(utility(C).sum() / P.sum()), float(10 * np.log10(max(C.sum(), 1.0) / P.sum()))
