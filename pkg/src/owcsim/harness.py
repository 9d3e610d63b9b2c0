"""Discrete-time slot loop, scheme comparison, sweeps and CSV artifacts."""
import csv
import io
import time
from collections import deque
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from . import __version__
from . import optics, phy, optimizer as opt, predictor as pred, rng as rngmod, traffic
from .config import class_rates_per_second
from .errors import ConfigInvalid, EtaUnderflow, InfeasibleFloor

METRIC_FIELDS = ("ee", "network_cf_db", "sum_rate", "mean_ber_bound", "prediction_loss", "violation",
                 "unserved_users", "optimizer_iters", "dual_iters", "users", "served")


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    cfg: object
    aps: list
    ap_xy: np.ndarray
    beam: object
    rx: object
    link: object
    ofdm: object
    classes: list
    mobility: object
    p_ap: float
    ref_floor: np.ndarray
    predictor: object

    @property
    def n_aps(self):
        return len(self.aps)

    @property
    def n_classes(self):
        return len(self.classes)


def ap_positions(dims, grid):
    nx, ny = grid
    xs = (np.arange(nx) + 0.5) * dims[0] / nx
    ys = (np.arange(ny) + 0.5) * dims[1] / ny
    return np.array([[x, y, dims[2]] for y in ys for x in xs])


def build_scenario(cfg):
    """Geometry, optics, PHY link and classes; runs the load-time safety and coverage checks."""
    o, r, p = cfg.optics, cfg.room, cfg.phy
    problems = []
    v = optics.VcselParams(o.beam_waist_w0, o.wavelength, o.medium_index, o.per_vcsel_power)
    beam = optics.lens_transform(v, optics.LensParams(o.focal_length, o.vcsel_to_lens_d1))
    mhp = o.mhp_distance if o.mhp_distance > 0 else beam.waist_location_d2
    try:
        p_safe = optics.eye_safe_power(optics.EyeSafetyParams(o.mpe, o.pupil_radius, mhp), v)
        if o.per_vcsel_power > p_safe:
            problems.append(("optics.per_vcsel_power", f"{o.per_vcsel_power} W exceeds the eye-safe cap {p_safe:.4g} W"))
    except EtaUnderflow as exc:
        problems.append(("optics.mhp_distance", str(exc)))
    pos = ap_positions(r.dims, r.ap_grid)
    aps = [optics.ApGeometry.grid(x, o.array_side, o.pitch, o.per_vcsel_power) for x in pos]
    rx = optics.ReceiverGeometry(
        np.zeros(3), optics.adr_orientations(o.pd_count, np.deg2rad(o.adr_tilt_deg)), o.active_area,
        optics.cpc_gain(o.receiver_index, np.deg2rad(o.fov_deg)), np.deg2rad(o.fov_deg), o.responsivity)
    g = np.linspace(0, 1, r.coverage_grid)
    floor_pts = np.array([[x * r.dims[0], y * r.dims[1], r.rx_height] for x in g for y in g])
    best = optics.gain_matrix(aps, floor_pts, rx, beam).max(axis=1)
    if np.any(best <= 0):
        problems.append(("room.ap_grid", f"{int(np.sum(best <= 0))} floor points have no line of sight to any AP"))
    if problems:
        raise ConfigInvalid(problems)
    p_ap = aps[0].total_power
    h_ref = optics.aggregate_gain(aps[0], rx.moved_to(np.array([pos[0, 0], pos[0, 1], r.rx_height])), beam)
    ofdm = phy.OfdmParams(p.fft_size, p.bandwidth, None, p.bias_sigmas)
    psd = p.noise_psd if p.noise_psd > 0 else phy.default_noise_psd(
        o.responsivity, h_ref, p_ap, p.rin_db_per_hz, p.noise_figure_db, p.temperature, p.load_resistance)
    link = phy.Link.build(ofdm, phy.NoiseModel(psd, p.bandwidth), phy.QamLink(p.target_ber), o.responsivity)
    classes = [traffic.ServiceClass(c.name, c.min_rate, c.mean_session, c.omega, c.arrival_share,
                                    c.p_min, c.p_max, i) for i, c in enumerate(cfg.classes)]
    t = cfg.traffic
    mobility = traffic.MobilityConfig(tuple(r.dims), r.rx_height, tuple(t.speed_range), tuple(t.pause_range),
                                      t.mean_residence)
    h_med = float(np.median(best))
    ref_floor = np.array([max(c.p_min, opt.required_power(c.min_rate, h_med, 0.0, link)) for c in classes])
    s = cfg.scenario
    params = pred.PredictorParams(s.epsilon, s.slot_tau, cfg.predictor.pmf_tail_cutoff,
                                  cfg.predictor.obs_interval, cfg.predictor.rate_window_slots)
    return Scenario(cfg, aps, pos[:, :2], beam, rx, link, ofdm, classes, mobility, p_ap, ref_floor, params)


# ---------------------------------------------------------------------------
# Run state
# ---------------------------------------------------------------------------

@dataclass
class SlotMetrics:
    slot: int
    time: float
    ee: float = 0.0
    network_cf_db: float = 0.0
    sum_rate: float = 0.0
    mean_ber_bound: float = 0.0
    prediction_loss: float = 0.0
    violation: float = 0.0
    unserved_users: float = 0.0
    optimizer_iters: float = 0.0
    dual_iters: float = 0.0
    users: float = 0.0
    served: float = 0.0
    per_ap_ee: list = field(default_factory=list)
    per_class_ee: list = field(default_factory=list)
    max_ap_power: float = 0.0


@dataclass
class RunState:
    sc: Scenario
    scheme: str
    seed: int
    users: list = field(default_factory=list)
    t: float = 0.0
    step: int = 0
    slot: int = 0
    next_uid: int = 0
    arrived: int = 0
    departed: int = 0
    power: dict = field(default_factory=dict)        # uid -> (ap, watts)
    n_tilde: np.ndarray | None = None
    arrivals_hist: deque = field(default_factory=deque)
    slot_arrivals: np.ndarray | None = None
    slot_counts: list = field(default_factory=list)
    zones: dict = field(default_factory=dict)        # uid -> zone AP
    reserve: np.ndarray | None = None
    extra_slots: np.ndarray | None = None
    upa_share: np.ndarray | None = None
    last_iters: tuple = (0.0, 0.0)
    audit: list = field(default_factory=list)
    alloc_rows: list = field(default_factory=list)
    forecast_rows: list = field(default_factory=list)
    record: bool = False


def _zones(sc, users):
    if not users:
        return np.zeros(0, dtype=int)
    xy = np.array([u.position[:2] for u in users])
    return opt.associate_distance(xy, sc.ap_xy)


def _counts(sc, users):
    c = np.zeros((sc.n_aps, sc.n_classes), dtype=int)
    for z, u in zip(_zones(sc, users), users):
        c[z, u.class_k] += 1
    return c


def init_state(sc, scheme, seed, record=False):
    st = RunState(sc, scheme, seed, record=record)
    g = rngmod.stream(seed, "initial")
    shares = np.array([c.arrival_share for c in sc.classes], dtype=float)
    shares = shares / shares.sum() if shares.sum() > 0 else np.full(len(shares), 1 / len(shares))
    for i in range(sc.cfg.scenario.initial_users):
        k = int(g.choice(sc.n_classes, p=shares))
        ug = rngmod.stream(seed, "initial-user", 0, i)
        st.users.append(traffic.make_user(i, sc.classes[k], sc.mobility, ug, 0.0))
    st.next_uid = len(st.users)
    st.arrived = len(st.users)
    st.slot_arrivals = np.zeros((sc.n_aps, sc.n_classes), dtype=int)
    st.zones = {u.id: z for u, z in zip(st.users, _zones(sc, st.users))}
    st.reserve = np.zeros(sc.n_aps)
    st.extra_slots = np.zeros((sc.n_aps, sc.n_classes), dtype=int)
    st.upa_share = np.zeros(sc.n_aps)
    return st


# ---------------------------------------------------------------------------
# Interference and rates
# ---------------------------------------------------------------------------

def _interference(sc, users, serving, P, gains):
    """Interference term per user for the configured model."""
    N = len(users)
    out = np.zeros(N)
    if N == 0:
        return out
    cls = np.array([u.class_k for u in users])
    served = serving >= 0
    if sc.cfg.phy.interference_model == "literal":
        tot = np.zeros((sc.n_aps, sc.n_classes))
        np.add.at(tot, (serving[served], cls[served]), P[served])
        for n in range(N):
            k = cls[n]
            out[n] = tot[:, k].sum() - (tot[serving[n], k] if served[n] else 0.0)
    else:
        per_ap = np.bincount(serving[served], weights=P[served], minlength=sc.n_aps)
        rh2 = (sc.link.responsivity * gains) ** 2
        for n in range(N):
            mask = np.ones(sc.n_aps, dtype=bool)
            if served[n]:
                mask[serving[n]] = False
            out[n] = rh2[n, mask] @ per_ap[mask]
    return out


def _floor_matrix(sc, users, gains, interference):
    """QoS floor of each user at each AP (inf when infeasible)."""
    F = np.full(gains.shape, np.inf)
    for n, u in enumerate(users):
        c = sc.classes[u.class_k]
        for a in range(sc.n_aps):
            if gains[n, a] > 0:
                f = max(c.p_min, opt.required_power(c.min_rate, gains[n, a], interference[n], sc.link))
                if f <= c.p_max:
                    F[n, a] = f
    return F


# ---------------------------------------------------------------------------
# Slot boundary: forecast, associate, allocate
# ---------------------------------------------------------------------------

def _forecast(st):
    sc = st.sc
    s = sc.cfg.scenario
    counts_now = _counts(sc, st.users)
    loss = (0.0, 0.0)
    if st.n_tilde is not None:
        loss = pred.prediction_loss(st.n_tilde.ravel(), counts_now.ravel())
    st.arrivals_hist.append(st.slot_arrivals)
    while len(st.arrivals_hist) > sc.predictor.rate_window_slots:
        st.arrivals_hist.popleft()
    seen = np.sum(st.arrivals_hist, axis=0)
    span = len(st.arrivals_hist) * s.slot_tau
    n_tilde = np.zeros_like(counts_now)
    times = [t for t, _ in st.slot_counts] or [st.t]
    for a in range(sc.n_aps):
        for k, c in enumerate(sc.classes):
            series = [int(cnt[a, k]) for _, cnt in st.slot_counts] or [int(counts_now[a, k])]
            series[-1] = int(counts_now[a, k])
            w = pred.ObservationWindow(a, k, times, series, int(seen[a, k]), span)
            f = pred.predict_slot(w, sc.predictor, c, sc.mobility.mean_residence)
            n_tilde[a, k] = f.n_tilde
            if st.record:
                prev = st.n_tilde[a, k] if st.n_tilde is not None else ""
                st.forecast_rows.append((st.slot, a, c.name, f.basis_count, f.p_tau, f.q_tau, f.mu_hat,
                                         f.n_tilde, int(counts_now[a, k]) if st.n_tilde is not None else "",
                                         abs(prev - counts_now[a, k]) if st.n_tilde is not None else ""))
    st.n_tilde = n_tilde
    st.slot_arrivals = np.zeros_like(counts_now)
    st.slot_counts = []
    return counts_now, loss


def _allocate_opa(st, users, gains, serving, interference, budgets):
    """Per-AP EE allocation; users whose floor cannot be met run at P_min and are flagged."""
    sc = st.sc
    o = sc.cfg.optimizer
    P = np.zeros(len(users))
    missed = np.zeros(len(users), dtype=bool)
    iters, duals, solves = 0, 0, 0
    F = _floor_matrix(sc, users, gains, interference)
    for a in range(sc.n_aps):
        idx = np.nonzero(serving == a)[0]
        if idx.size == 0:
            continue
        floors = np.array([F[n, a] for n in idx])
        pmin = np.array([sc.classes[users[n].class_k].p_min for n in idx])
        pmax = np.array([sc.classes[users[n].class_k].p_max for n in idx])
        bad = ~np.isfinite(floors)
        prio = np.array([sc.classes[users[n].class_k].min_rate for n in idx])
        # drop lowest-priority users from the optimized set until the floors fit the budget
        order = np.lexsort((-idx, prio))
        budget = budgets[a]
        while (floors[~bad].sum() + pmin[bad].sum()) > budget and (~bad).any():
            for j in order:
                if not bad[j]:
                    bad[j] = True
                    break
        P[idx[bad]] = pmin[bad]
        missed[idx[bad]] = True
        good = ~bad
        if good.any():
            kappa = np.array([sc.link.kappa(gains[n, a], interference[n]) for n in idx[good]])
            res = opt.optimize_ap(kappa, floors[good], pmax[good], max(budget - pmin[bad].sum(), floors[good].sum()),
                                  sc.link.xi * sc.link.bandwidth, o.tol, o.max_iter, method=o.method,
                                  alpha=o.alpha, dual_iters=o.dual_iters)
            P[idx[good]] = res.powers
            iters += res.iterations
            duals += res.dual_iters
            solves += 1
            if st.record:
                for j, n in enumerate(idx[good]):
                    st.alloc_rows.append([st.slot, a, users[n].id, sc.classes[users[n].class_k].name,
                                          floors[good][j], res.powers[j],
                                          sc.link.xi * sc.link.bandwidth * np.log2(1 + kappa[j] * res.powers[j]),
                                          res.lam[j], res.mu,
                                          res.ee_value, int(res.converged), res.iterations])
    return P, missed, (iters, duals, solves)


def _boundary(st):
    sc = st.sc
    users = st.users
    counts_now, loss = _forecast(st)
    N = len(users)
    st.power = {}
    st.reserve = np.zeros(sc.n_aps)
    st.extra_slots = np.zeros((sc.n_aps, sc.n_classes), dtype=int)
    st.upa_share = np.zeros(sc.n_aps)
    st.last_iters = (0.0, 0.0)
    if N == 0:
        if st.scheme != "baseline":
            _set_reserve(st, counts_now, np.zeros(sc.n_aps, dtype=int))
        return loss, np.zeros(0, dtype=bool)
    pos = np.array([u.position for u in users])
    gains = optics.gain_matrix(sc.aps, pos, sc.rx, sc.beam)
    cls_pmax = np.array([sc.classes[u.class_k].p_max for u in users])
    missed = np.zeros(N, dtype=bool)
    if st.scheme == "baseline":
        serving = opt.associate_distance(pos, np.column_stack([sc.ap_xy, np.full(sc.n_aps, sc.cfg.room.dims[2])]))
        P = opt.uniform_power(serving, sc.n_aps, sc.p_ap, cls_pmax)
    else:
        reserve, extra = opt.forecast_reserve(st.n_tilde, counts_now, sc.ref_floor)
        budgets = np.maximum(sc.p_ap - reserve, 0.0)
        # previous allocation (all zero at start) is the frozen interference estimate
        serving = np.full(N, -1)
        P = np.zeros(N)
        prev = _previous_allocation(st, users)
        interference = _interference(sc, users, prev[0], prev[1], gains)
        sweeps = sc.cfg.optimizer.interference_sweeps if st.scheme == "pdp-opa" else 1
        alt = sc.cfg.optimizer.alternations
        tot = (0, 0, 0)
        for _ in range(alt):
            F = _floor_matrix(sc, users, gains, interference)
            prio = np.array([sc.classes[u.class_k].min_rate for u in users])
            serving, _ = opt.associate_pdp(gains, F, prio, budgets)
            if st.record:
                st.audit.append(opt.audit_pdp_association(serving, gains, F, prio, budgets))
            if st.scheme == "pdp-upa":
                counts = np.bincount(serving[serving >= 0], minlength=sc.n_aps)
                P = opt.uniform_power(serving, sc.n_aps, sc.p_ap, cls_pmax, extra=extra.sum(axis=1))
                st.upa_share = sc.p_ap / np.maximum(counts + extra.sum(axis=1), 1)
            else:
                for _ in range(sweeps):
                    P, missed, it = _allocate_opa(st, users, gains, serving, interference, budgets)
                    tot = (tot[0] + it[0], tot[1] + it[1], tot[2] + it[2])
                    interference = _interference(sc, users, serving, P, gains)
            interference = _interference(sc, users, serving, P, gains)
        if tot[2]:
            st.last_iters = (tot[0] / tot[2], tot[1] / tot[2])
        used = np.bincount(serving[serving >= 0], weights=P[serving >= 0], minlength=sc.n_aps)
        st.reserve = np.maximum(sc.p_ap - used, 0.0) if st.scheme == "pdp-opa" else reserve.copy()
        st.extra_slots = extra.copy()
    for u, a, p in zip(users, serving, P):
        u.serving_ap = int(a)
        u.allocated_power = float(p) if a >= 0 else 0.0
        if a >= 0:
            st.power[u.id] = (int(a), float(p))
    return loss, missed


def _set_reserve(st, counts_now, served_counts):
    sc = st.sc
    reserve, extra = opt.forecast_reserve(st.n_tilde, counts_now, sc.ref_floor)
    st.reserve = np.minimum(reserve, sc.p_ap) if st.scheme == "pdp-upa" else np.full(sc.n_aps, sc.p_ap)
    st.extra_slots = extra.copy()
    st.upa_share = sc.p_ap / np.maximum(served_counts + extra.sum(axis=1), 1)


def _previous_allocation(st, users):
    serving = np.array([u.serving_ap if u.id in st.power else -1 for u in users], dtype=int)
    P = np.array([st.power[u.id][1] if u.id in st.power else 0.0 for u in users])
    return serving, P


# ---------------------------------------------------------------------------
# Within the slot
# ---------------------------------------------------------------------------

def _admit(st, u):
    """Serve a mid-slot arrival from the forecast reserve (predictive schemes only)."""
    sc = st.sc
    if st.scheme == "baseline":
        return
    g = optics.gain_matrix(sc.aps, u.position[None, :], sc.rx, sc.beam)[0]
    c = sc.classes[u.class_k]
    serving, P = _previous_allocation(st, st.users)
    users = st.users
    interference = 0.0
    if users:
        probe = users + [u]
        gains = optics.gain_matrix(sc.aps, np.array([x.position for x in probe]), sc.rx, sc.beam)
        interference = _interference(sc, probe, np.append(serving, -1), np.append(P, 0.0), gains)[-1]
    for a in np.argsort(-g, kind="stable"):
        if g[a] <= 0:
            break
        if st.scheme == "pdp-upa":
            if st.extra_slots[a].sum() > 0 and st.reserve[a] > 0:
                p = min(st.upa_share[a], st.reserve[a], c.p_max)
                k = int(np.argmax(st.extra_slots[a]))
                st.extra_slots[a, k] -= 1
            else:
                continue
        else:
            p = max(c.p_min, opt.required_power(c.min_rate, g[a], interference, sc.link))
            if p > min(c.p_max, st.reserve[a]):
                continue
        st.reserve[a] -= p
        u.serving_ap = int(a)
        u.allocated_power = float(p)
        st.power[u.id] = (int(a), float(p))
        return


def _evaluate(st):
    """Instantaneous metrics for the current users and allocation."""
    sc = st.sc
    users = st.users
    K, A = sc.n_classes, sc.n_aps
    out = dict(ee=0.0, cf=0.0, sum_rate=0.0, ber=0.0, unserved=0, per_ap=np.zeros(A), per_class=np.zeros(K),
               users=len(users), served=0, ap_power=np.zeros(A))
    if not users:
        return out
    serving, P = _previous_allocation(st, users)
    pos = np.array([u.position for u in users])
    gains = optics.gain_matrix(sc.aps, pos, sc.rx, sc.beam)
    I = _interference(sc, users, serving, P, gains)
    served = serving >= 0
    H = np.where(served, gains[np.arange(len(users)), np.maximum(serving, 0)], 0.0)
    C = np.where(served, sc.link.rate(P, H, I), 0.0)
    cmin = np.array([sc.classes[u.class_k].min_rate for u in users])
    out["unserved"] = int(np.count_nonzero(~served | (C < cmin * (1 - 1e-9))))
    out["served"] = int(np.count_nonzero(served))
    if not served.any():
        return out
    cls = np.array([u.class_k for u in users])
    U = opt.utility(C)
    out["ee"], out["cf"] = opt.network_cf(serving, P, C)
    out["sum_rate"] = float(C[served].sum())
    sinr = sc.link.sinr(P[served], H[served], I[served])
    F = np.array([phy.max_constellation(s, sc.link.gamma).order for s in sinr])
    out["ber"] = float(np.mean(phy.ber_upper_bound(sinr, F)))
    for a in range(A):
        m = served & (serving == a)
        out["ap_power"][a] = P[m].sum()
        if m.any():
            out["per_ap"][a] = U[m].sum() / P[m].sum()
    for k in range(K):
        m = served & (cls == k)
        if m.any():
            out["per_class"][k] = U[m].sum() / P[m].sum()
    return out


def run_slot(st):
    """Advance one slot: boundary decisions, then stepping, arrivals and metric sampling."""
    sc = st.sc
    s = sc.cfg.scenario
    loss, _ = _boundary(st)
    steps = int(round(s.slot_tau / s.step))
    eval_every = max(1, int(round(s.eval_interval / s.step)))
    obs_every = max(1, int(round(sc.predictor.obs_interval / s.step)))
    rates = class_rates_per_second(sc.cfg)
    ceiling = s.arrival_ceiling * sc.n_aps / 60.0
    samples = []
    slot_start = st.t
    for i in range(1, steps + 1):
        gone = []
        st.users = traffic.advance(st.users, s.step, sc.mobility, gone)
        for u in gone:
            st.power.pop(u.id, None)
            st.zones.pop(u.id, None)
        st.departed += len(gone)
        new = traffic.spawn_thinned(sc.classes, rates, ceiling, s.step, st.seed, st.step, sc.mobility,
                                    st.next_uid, st.t + s.step)
        st.step += 1
        st.t = slot_start + i * s.step
        st.next_uid += len(new)
        st.arrived += len(new)
        for u in new:
            _admit(st, u)
            st.users.append(u)
        zones = _zones(sc, st.users)
        for u, z in zip(st.users, zones):
            if st.zones.get(u.id) != z:
                st.slot_arrivals[z, u.class_k] += 1       # new arrival or handoff into zone z
                st.zones[u.id] = int(z)
        if i % obs_every == 0:
            c = np.zeros((sc.n_aps, sc.n_classes), dtype=int)
            for u, z in zip(st.users, zones):
                c[z, u.class_k] += 1
            st.slot_counts.append((st.t, c))
        if i % eval_every == 0:
            samples.append(_evaluate(st))
    m = SlotMetrics(st.slot, st.t)
    m.prediction_loss, m.violation = loss
    m.optimizer_iters, m.dual_iters = st.last_iters
    if samples:
        m.ee = float(np.mean([x["ee"] for x in samples]))
        m.network_cf_db = float(np.mean([x["cf"] for x in samples]))
        m.sum_rate = float(np.mean([x["sum_rate"] for x in samples]))
        m.mean_ber_bound = float(np.mean([x["ber"] for x in samples]))
        m.unserved_users = float(np.mean([x["unserved"] for x in samples]))
        m.users = float(np.mean([x["users"] for x in samples]))
        m.served = float(np.mean([x["served"] for x in samples]))
        m.per_ap_ee = list(np.mean([x["per_ap"] for x in samples], axis=0))
        m.per_class_ee = list(np.mean([x["per_class"] for x in samples], axis=0))
        m.max_ap_power = float(np.max([x["ap_power"].max() for x in samples]))
    else:
        m.per_ap_ee = [0.0] * sc.n_aps
        m.per_class_ee = [0.0] * sc.n_classes
    st.slot += 1
    return st, m


# ---------------------------------------------------------------------------
# Runs, aggregates and sweeps
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config_digest: str
    scheme: str
    seed: int
    slot_tau: float
    arrival_rate: float
    metrics: list
    aggregates: dict
    wall_clock: float
    arrived: int = 0
    departed: int = 0
    alive: int = 0
    class_names: tuple = ()
    audit_failures: int = 0
    alloc_rows: list = field(default_factory=list)
    forecast_rows: list = field(default_factory=list)


def aggregate(metrics, warmup, class_names):
    kept = metrics[warmup:]
    out = {}
    for name in METRIC_FIELDS:
        vals = np.array([getattr(m, name) for m in kept], dtype=float)
        out[f"{name}_mean"] = float(vals.mean()) if vals.size else 0.0
        out[f"{name}_std"] = float(vals.std()) if vals.size else 0.0
    for k, cname in enumerate(class_names):
        vals = np.array([m.per_class_ee[k] for m in kept], dtype=float)
        out[f"ee_{cname}_mean"] = float(vals.mean()) if vals.size else 0.0
    return out


def run_scenario(cfg, record=False):
    """Run ``slots_total`` slots of the configured scheme and aggregate post-warm-up metrics."""
    t0 = time.perf_counter()
    sc = build_scenario(cfg)
    s = cfg.scenario
    st = init_state(sc, s.scheme, s.seed, record)
    metrics = []
    for _ in range(s.slots_total):
        st, m = run_slot(st)
        metrics.append(m)
    names = tuple(c.name for c in sc.classes)
    return RunResult(cfg.digest(), s.scheme, s.seed, s.slot_tau, s.arrival_rate, metrics,
                     aggregate(metrics, s.warmup_slots, names), time.perf_counter() - t0,
                     st.arrived, st.departed, len(st.users), names,
                     sum(1 for a in st.audit if a), st.alloc_rows, st.forecast_rows)


def _sweep_point(args):
    cfg, axis, value, scheme, seed = args
    return (axis, value, scheme, seed), run_scenario(apply_axis(cfg, axis, value, scheme, seed))


def apply_axis(cfg, axis, value, scheme, seed):
    cfg = cfg.replace("scenario", scheme=scheme, seed=seed)
    if axis == "mu":
        return cfg.replace("scenario", arrival_rate=float(value),
                           arrival_ceiling=max(cfg.scenario.arrival_ceiling, float(value)))
    if axis == "tau":
        return cfg.replace("scenario", slot_tau=float(value))
    if axis == "class":
        import dataclasses
        classes = [dataclasses.replace(c, arrival_share=1.0 if c.name == value else 0.0) for c in cfg.classes]
        return dataclasses.replace(cfg, classes=classes)
    if axis == "snr":
        return cfg
    raise ConfigInvalid([("axis", f"unknown sweep axis {axis!r}")])


def sweep(cfg, axis, values, schemes=None, seeds=None, jobs=1):
    """One run per (value, scheme, seed); merged by key so serial and parallel tables match."""
    if not values:
        raise ValueError("sweep needs at least one value")
    schemes = list(schemes or cfg.sweep.schemes)
    seeds = list(seeds or [cfg.scenario.seed])
    tasks = [(cfg, axis, v, sch, sd) for v in values for sch in schemes for sd in seeds]
    if jobs > 1 and len(tasks) > 1:
        with Pool(jobs) as pool:
            results = pool.map(_sweep_point, tasks)
    else:
        results = [_sweep_point(t) for t in tasks]
    order = {(axis, v, sch, sd): i for i, (_, axis, v, sch, sd) in enumerate(tasks)}
    return sorted(results, key=lambda kv: order[kv[0]])


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

def header_line(cfg, seed):
    return f"# owcsim {__version__} config={cfg.digest()} seed={seed}\n"


def _fmt(x):
    if x is None or x == "":
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".10g")
    return str(x)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def metrics_csv(cfg, res):
    head = ["slot", "time", *METRIC_FIELDS, "max_ap_power"]
    head += [f"ee_ap{a}" for a in range(len(res.metrics[0].per_ap_ee))] if res.metrics else []
    head += [f"ee_{c}" for c in res.class_names]
    rows = [[m.slot, m.time, *[getattr(m, f) for f in METRIC_FIELDS], m.max_ap_power, *m.per_ap_ee,
             *m.per_class_ee] for m in res.metrics]
    return header_line(cfg, res.seed) + _csv(head, rows)


def _aggregate_row(res):
    return [res.scheme, res.seed, res.slot_tau, res.arrival_rate, len(res.metrics),
            *[res.aggregates[k] for k in sorted(res.aggregates)]]


def aggregate_csv(cfg, results):
    keys = sorted(results[0].aggregates) if results else []
    head = ["scheme", "seed", "slot_tau", "arrival_rate", "slots", *keys]
    return header_line(cfg, cfg.scenario.seed) + _csv(head, [_aggregate_row(r) for r in results])


def sweep_csv(cfg, axis, results):
    keys = sorted(results[0][1].aggregates) if results else []
    head = ["axis", "value", "scheme", "seed", *keys]
    rows = [[axis, v, sch, sd, *[r.aggregates[k] for k in keys]] for (axis, v, sch, sd), r in results]
    return header_line(cfg, cfg.scenario.seed) + _csv(head, rows)


def allocations_csv(cfg, res):
    head = ["slot", "ap", "user", "class", "rho", "power", "rate", "lambda", "mu", "ee_ap", "converged", "iters"]
    return header_line(cfg, res.seed) + _csv(head, res.alloc_rows)


def forecasts_csv(cfg, res):
    head = ["slot", "ap", "class", "basis", "p_tau", "q_tau", "mu_hat", "n_tilde", "actual", "loss"]
    return header_line(cfg, res.seed) + _csv(head, res.forecast_rows)


def ber_csv(cfg, rows):
    head = ["scheme", "F", "snr_db", "ber", "frames", "seed"]
    return header_line(cfg, cfg.scenario.seed) + _csv(head, rows)


def ber_curves(cfg, schemes=None, frames=None, slots=20):
    """BER versus SNR for 4- and 16-QAM using each scheme's end-of-run allocation.

    Every user's SNR is the grid value scaled by its received electrical
    power relative to a common reference (on-axis gain at an even split of
    the AP budget over the initial users), so schemes that give users more
    received power sit to the left.
    """
    schemes = schemes or cfg.sweep.schemes
    frames = frames or cfg.sweep.ber_frames
    rows = []
    sc = build_scenario(cfg)
    pos0 = np.array([sc.ap_xy[0, 0], sc.ap_xy[0, 1], cfg.room.rx_height])
    h_ref = optics.aggregate_gain(sc.aps[0], sc.rx.moved_to(pos0), sc.beam)
    reference = h_ref ** 2 * sc.p_ap / max(cfg.scenario.initial_users, 1)
    for scheme in schemes:
        c = cfg.replace("scenario", scheme=scheme, slots_total=slots, warmup_slots=0)
        st = init_state(build_scenario(c), scheme, c.scenario.seed)
        for _ in range(slots):
            st, _ = run_slot(st)
        users = [u for u in st.users if u.id in st.power]
        if users:
            pos = np.array([u.position for u in users])
            g = optics.gain_matrix(sc.aps, pos, sc.rx, sc.beam)
            H = np.array([g[i, st.power[u.id][0]] for i, u in enumerate(users)])
            P = np.array([st.power[u.id][1] for u in users])
        else:
            H, P = np.array([np.sqrt(reference)]), np.array([1.0])
        for F in (4, 16):
            pts = phy.simulate_ber_curve(P, H, F, cfg.sweep.snr_grid, frames, cfg.scenario.seed, sc.ofdm,
                                         reference, scheme)
            rows += [(scheme, F, p.snr_db, p.ber, p.frames, cfg.scenario.seed) for p in pts]
    return rows
