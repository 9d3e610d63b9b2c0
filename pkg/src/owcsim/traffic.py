"""Service classes, session and residence statistics, arrivals and random-waypoint mobility."""
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod


@dataclass(frozen=True)
class ServiceClass:
    name: str
    min_rate: float            # bit/s
    mean_session: float        # s
    omega: float = 1.0
    arrival_share: float = 1.0 / 3
    p_min: float = 1e-3        # W
    p_max: float = 1.25        # W
    id: int = 0

    def __post_init__(self):
        if self.omega < 1:
            raise ValueError("omega must be >= 1")
        if not self.min_rate > 0:
            raise ValueError("min_rate must be positive")
        if not self.mean_session > 0:
            raise ValueError("mean_session must be positive")
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError("need 0 <= p_min <= p_max")
        if self.arrival_share < 0:
            raise ValueError("arrival_share must be non-negative")


def default_classes():
    return [
        ServiceClass("video", 1e9, 600.0, 4.0, 1 / 3, 5e-3, 1.25, 0),
        ServiceClass("web", 100e6, 120.0, 2.0, 1 / 3, 2e-3, 1.25, 1),
        ServiceClass("voice", 10e6, 180.0, 1.0, 1 / 3, 1e-3, 1.25, 2),
    ]


@dataclass(frozen=True)
class MobilityConfig:
    room_dims: tuple = (5.0, 5.0, 3.0)
    rx_height: float = 1.0
    speed_range: tuple = (0.1, 0.5)
    pause_range: tuple = (5.0, 60.0)
    mean_residence: float = 120.0

    def __post_init__(self):
        if any(d <= 0 for d in self.room_dims):
            raise ValueError("room dimensions must be positive")
        if not 0 <= self.rx_height < self.room_dims[2]:
            raise ValueError("receiver height must lie inside the room")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ValueError("bad speed_range")
        lo, hi = self.pause_range
        if not 0 <= lo <= hi:
            raise ValueError("bad pause_range")
        if not self.mean_residence > 0:
            raise ValueError("mean_residence must be positive")


@dataclass
class UserState:
    id: int
    class_k: int
    position: np.ndarray
    waypoint: np.ndarray
    speed: float
    pause_remaining: float
    session_remaining: float
    residence_remaining: float
    rng: np.random.Generator = field(repr=False, compare=False)
    serving_ap: int = -1
    allocated_power: float = 0.0
    arrived_at: float = 0.0

    @property
    def holding_remaining(self):
        return min(self.session_remaining, self.residence_remaining)


# ---------------------------------------------------------------------------
# Holding-time statistics
# ---------------------------------------------------------------------------

def holding_mixture(Tr, Td, omega):
    """Weights and rates of the two exponential components of the holding time."""
    w = np.array([omega / (omega + 1.0), 1.0 / (omega + 1.0)])
    r = np.array([1.0 / Tr + omega / Td, 1.0 / Tr + 1.0 / (omega * Td)])
    return w, r


def session_pdf(t, Td, omega):
    t = np.asarray(t, dtype=float)
    w = omega / (omega + 1.0)
    return (w * omega / Td * np.exp(-omega * t / Td)
            + (1 - w) / (omega * Td) * np.exp(-t / (omega * Td)))


def mean_session(Td, omega):
    return omega / (omega + 1.0) * Td / omega + 1.0 / (omega + 1.0) * omega * Td


def holding_time_pdf(t, Tr, Td, omega):
    w, r = holding_mixture(Tr, Td, omega)
    t = np.asarray(t, dtype=float)
    return w[0] * r[0] * np.exp(-r[0] * t) + w[1] * r[1] * np.exp(-r[1] * t)


def holding_time_survival(t, Tr, Td, omega):
    w, r = holding_mixture(Tr, Td, omega)
    t = np.asarray(t, dtype=float)
    return w[0] * np.exp(-r[0] * t) + w[1] * np.exp(-r[1] * t)


def mean_holding_time(Tr, Td, omega):
    w, r = holding_mixture(Tr, Td, omega)
    return float(w[0] / r[0] + w[1] / r[1])


def sample_session_duration(c, rng, size=None):
    omega, Td = c.omega, c.mean_session
    short = rng.random(size) < omega / (omega + 1.0)
    mean = np.where(short, Td / omega, omega * Td)
    out = rng.exponential(1.0, size) * mean
    return float(out) if size is None else out


# ---------------------------------------------------------------------------
# Users
# ---------------------------------------------------------------------------

def _random_point(m, rng):
    return np.array([rng.uniform(0, m.room_dims[0]), rng.uniform(0, m.room_dims[1])])


def make_user(uid, c, m, rng, now=0.0):
    """Create a user with uniform position, fresh waypoint leg and sampled clocks."""
    xy = _random_point(m, rng)
    return UserState(
        id=uid,
        class_k=c.id,
        position=np.array([xy[0], xy[1], m.rx_height]),
        waypoint=_random_point(m, rng),
        speed=float(rng.uniform(*m.speed_range)),
        pause_remaining=0.0,
        session_remaining=sample_session_duration(c, rng),
        residence_remaining=float(rng.exponential(m.mean_residence)),
        rng=rng,
        arrived_at=now,
    )


def spawn_arrivals(c, duration, rng, m=None, rate=None, first_id=0, now=0.0):
    """Poisson(rate * duration) new users of class ``c``; ``rate`` is users/s."""
    m = m or MobilityConfig()
    if rate is None:
        raise ValueError("an arrival rate is required")
    n = int(rng.poisson(rate * duration)) if rate > 0 else 0
    return [make_user(first_id + i, c, m, rng, now) for i in range(n)]


def spawn_thinned(classes, rates, ceiling, dt, seed, step, m, first_id, now):
    """Arrivals in one step by thinning a ceiling-rate Poisson stream.

    Candidates, their acceptance draws and their attributes depend only on
    (seed, step, class, candidate index), so runs at different rates below
    the same ceiling see nested arrival sets.
    """
    out = []
    uid = first_id
    for c, rate in zip(classes, rates):
        if rate <= 0:
            continue
        if rate > ceiling * (1 + 1e-12):
            raise ValueError("arrival rate exceeds the thinning ceiling")
        g = rngmod.stream(seed, "arrivals", step, c.id)
        n = g.poisson(ceiling * dt)
        accept = g.random(n) < rate / ceiling
        for j in np.nonzero(accept)[0]:
            ug = rngmod.stream(seed, f"user:{c.id}", step, int(j))
            out.append(make_user(uid, c, m, ug, now))
            uid += 1
    return out


def _move(u, dt, m):
    left = dt
    while left > 0:
        if u.pause_remaining > 0:
            used = min(left, u.pause_remaining)
            u.pause_remaining -= used
            left -= used
            continue
        delta = u.waypoint - u.position[:2]
        dist = float(np.hypot(*delta))
        if u.speed <= 0:
            return
        if dist <= u.speed * left:
            u.position[:2] = u.waypoint
            left -= dist / u.speed
            u.pause_remaining = float(u.rng.uniform(*m.pause_range))
            u.waypoint = _random_point(m, u.rng)
            u.speed = float(u.rng.uniform(*m.speed_range))
            if u.pause_remaining == 0 and u.speed == 0:
                return
        else:
            u.position[:2] += delta / dist * u.speed * left
            left = 0.0


def advance(users, dt, m, departed=None):
    """Move users for ``dt`` seconds and drop those whose holding time ends.

    A departure happens at min(session, residence) expiry. Departed users
    are appended to ``departed`` (if given) with their clocks set to the
    exact residual at which they left.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    alive = []
    for u in users:
        if u.holding_remaining <= dt:
            if departed is not None:
                departed.append(u)
            continue
        u.session_remaining -= dt
        u.residence_remaining -= dt
        _move(u, dt, m)
        alive.append(u)
    return alive
