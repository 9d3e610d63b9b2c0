"""Scenario configuration: TOML sections per module, strict keys, full defaults."""
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigInvalid

SCHEMES = ("baseline", "pdp-upa", "pdp-opa")
INTERFERENCE_MODELS = ("literal", "gain_weighted")


@dataclass(frozen=True)
class ScenarioSection:
    seed: int = 1
    scheme: str = "pdp-opa"
    slots_total: int = 200
    slot_tau: float = 30.0            # s; slot length equals the prediction horizon
    warmup_slots: int = 10
    epsilon: float = 0.05
    arrival_rate: float = 1.4         # users per minute per AP, split over classes by share
    arrival_ceiling: float = 2.0      # thinning ceiling in the same unit; keeps streams nested
    initial_users: int = 12
    step: float = 1.0                 # s, mobility and observation step
    eval_interval: float = 5.0        # s, metric sampling inside a slot


@dataclass(frozen=True)
class RoomSection:
    dims: list = field(default_factory=lambda: [5.0, 5.0, 3.0])
    ap_grid: list = field(default_factory=lambda: [4, 2])
    rx_height: float = 1.0
    coverage_grid: int = 26


@dataclass(frozen=True)
class OpticsSection:
    beam_waist_w0: float = 5e-6
    wavelength: float = 1550e-9
    medium_index: float = 1.0
    focal_length: float = 50e-6
    vcsel_to_lens_d1: float = 300e-6
    lens_index: float = 1.55
    array_side: int = 5
    pitch: float = 300e-6
    per_vcsel_power: float = 50e-3
    mpe: float = 1000.0
    pupil_radius: float = 7e-3
    mhp_distance: float = 0.0         # 0 selects the post-lens waist location
    pd_count: int = 5
    adr_tilt_deg: float = 40.0
    fov_deg: float = 30.0
    receiver_index: float = 1.77
    active_area: float = 1.0
    responsivity: float = 0.7


@dataclass(frozen=True)
class PhySection:
    fft_size: int = 64
    bandwidth: float = 1.5e9
    target_ber: float = 1e-3
    bias_sigmas: float = 3.0
    rin_db_per_hz: float = -155.0
    noise_figure_db: float = 5.0
    temperature: float = 300.0
    load_resistance: float = 50.0
    noise_psd: float = 0.0            # 0 derives thermal + RIN from the geometry
    interference_model: str = "literal"


@dataclass(frozen=True)
class TrafficSection:
    speed_range: list = field(default_factory=lambda: [0.1, 0.5])
    pause_range: list = field(default_factory=lambda: [5.0, 60.0])
    mean_residence: float = 120.0


@dataclass(frozen=True)
class PredictorSection:
    obs_interval: float = 1.0
    rate_window_slots: int = 10
    pmf_tail_cutoff: float = 1e-12


@dataclass(frozen=True)
class OptimizerSection:
    tol: float = 1e-6
    max_iter: int = 500
    method: str = "exact"
    alpha: float = 0.1
    dual_iters: int = 200
    interference_sweeps: int = 2
    warm_start: bool = False
    alternations: int = 1


@dataclass(frozen=True)
class SweepSection:
    mu_grid: list = field(default_factory=lambda: [0.6, 1.0, 1.4])
    tau_grid: list = field(default_factory=lambda: [30.0, 60.0])
    snr_grid: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0])
    ber_frames: int = 16130
    schemes: list = field(default_factory=lambda: list(SCHEMES))


@dataclass(frozen=True)
class ClassSection:
    name: str
    min_rate: float
    mean_session: float
    omega: float = 1.0
    arrival_share: float = 1.0 / 3
    p_min: float = 1e-3
    p_max: float = 1.25


def default_class_sections():
    return [
        ClassSection("video", 1e9, 600.0, 4.0, 1 / 3, 5e-3, 1.25),
        ClassSection("web", 100e6, 120.0, 2.0, 1 / 3, 2e-3, 1.25),
        ClassSection("voice", 10e6, 180.0, 1.0, 1 / 3, 1e-3, 1.25),
    ]


SECTIONS = {
    "scenario": ScenarioSection,
    "room": RoomSection,
    "optics": OpticsSection,
    "phy": PhySection,
    "traffic": TrafficSection,
    "predictor": PredictorSection,
    "optimizer": OptimizerSection,
    "sweep": SweepSection,
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    room: RoomSection = field(default_factory=RoomSection)
    optics: OpticsSection = field(default_factory=OpticsSection)
    phy: PhySection = field(default_factory=PhySection)
    traffic: TrafficSection = field(default_factory=TrafficSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    classes: list = field(default_factory=default_class_sections)

    def to_dict(self):
        out = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        out["classes"] = [dataclasses.asdict(c) for c in self.classes]
        return out

    def dumps(self):
        return tomli_w.dumps(self.to_dict())

    def digest(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def replace(self, section, **changes):
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


def _coerce(value, default, name, problems):
    """Coerce a TOML value to the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append((name, f"expected a boolean, got {value!r}"))
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append((name, f"expected an integer, got {value!r}"))
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append((name, f"expected a number, got {value!r}"))
            return value
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            problems.append((name, f"expected a string, got {value!r}"))
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            problems.append((name, f"expected a list, got {value!r}"))
        return value
    return value


def _build(cls, raw, prefix, problems):
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            problems.append((f"{prefix}.{key}", "unknown key"))
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            continue
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = raw[name]
        kwargs[name] = _coerce(raw[name], default, f"{prefix}.{name}", problems)
    missing = [n for n, f in known.items()
               if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING and n not in raw]
    for n in missing:
        problems.append((f"{prefix}.{n}", "required"))
    if missing:
        return None
    return cls(**kwargs)


def _check(cfg, problems):
    s, r, o, p, t, pr, op, sw = (cfg.scenario, cfg.room, cfg.optics, cfg.phy, cfg.traffic,
                                 cfg.predictor, cfg.optimizer, cfg.sweep)

    def need(cond, name, msg):
        if not cond:
            problems.append((name, msg))

    need(s.scheme in SCHEMES, "scenario.scheme", f"must be one of {SCHEMES}")
    need(s.slots_total >= 0, "scenario.slots_total", "must be >= 0")
    need(s.slot_tau > 0, "scenario.slot_tau", "must be > 0")
    need(s.warmup_slots >= 0, "scenario.warmup_slots", "must be >= 0")
    need(0 <= s.epsilon <= 1, "scenario.epsilon", "must lie in [0, 1]")
    need(s.arrival_rate >= 0, "scenario.arrival_rate", "must be >= 0")
    need(s.arrival_ceiling >= s.arrival_rate, "scenario.arrival_ceiling", "must be >= arrival_rate")
    need(s.initial_users >= 0, "scenario.initial_users", "must be >= 0")
    need(s.step > 0, "scenario.step", "must be > 0")
    need(s.eval_interval > 0, "scenario.eval_interval", "must be > 0")
    if s.step > 0 and s.slot_tau > 0:
        need(abs(s.slot_tau / s.step - round(s.slot_tau / s.step)) < 1e-9, "scenario.slot_tau",
             "must be a whole number of steps")
    need(len(r.dims) == 3 and all(isinstance(d, (int, float)) and d > 0 for d in r.dims),
         "room.dims", "must be three positive lengths")
    need(len(r.ap_grid) == 2 and all(isinstance(d, int) and d > 0 for d in r.ap_grid),
         "room.ap_grid", "must be two positive counts")
    if len(r.dims) == 3:
        need(0 <= r.rx_height < r.dims[2], "room.rx_height", "must lie below the ceiling")
    need(r.coverage_grid >= 2, "room.coverage_grid", "must be >= 2")
    for name in ("beam_waist_w0", "wavelength", "medium_index", "focal_length", "pitch",
                 "per_vcsel_power", "mpe", "responsivity", "lens_index", "receiver_index"):
        need(getattr(o, name) > 0, f"optics.{name}", "must be > 0")
    need(o.vcsel_to_lens_d1 >= 0, "optics.vcsel_to_lens_d1", "must be >= 0")
    need(o.array_side >= 1, "optics.array_side", "must be >= 1")
    need(1e-3 <= o.pupil_radius <= 7e-3, "optics.pupil_radius", "must lie in [1e-3, 7e-3] m")
    need(o.mhp_distance >= 0, "optics.mhp_distance", "must be >= 0")
    need(o.pd_count >= 1, "optics.pd_count", "must be >= 1")
    need(0 < o.fov_deg <= 90, "optics.fov_deg", "must lie in (0, 90]")
    need(0 < o.active_area <= 1, "optics.active_area", "must lie in (0, 1]")
    need(p.fft_size >= 4 and p.fft_size & (p.fft_size - 1) == 0, "phy.fft_size", "must be a power of two >= 4")
    need(p.bandwidth > 0, "phy.bandwidth", "must be > 0")
    need(0 < p.target_ber < 0.2, "phy.target_ber", "must lie in (0, 0.2)")
    need(p.bias_sigmas > 0, "phy.bias_sigmas", "must be > 0")
    need(p.noise_psd >= 0, "phy.noise_psd", "must be >= 0")
    need(p.interference_model in INTERFERENCE_MODELS, "phy.interference_model",
         f"must be one of {INTERFERENCE_MODELS}")
    need(len(t.speed_range) == 2 and 0 <= t.speed_range[0] <= t.speed_range[1], "traffic.speed_range",
         "must be [lo, hi] with 0 <= lo <= hi")
    need(len(t.pause_range) == 2 and 0 <= t.pause_range[0] <= t.pause_range[1], "traffic.pause_range",
         "must be [lo, hi] with 0 <= lo <= hi")
    need(t.mean_residence > 0, "traffic.mean_residence", "must be > 0")
    need(pr.obs_interval > 0, "predictor.obs_interval", "must be > 0")
    need(pr.rate_window_slots >= 1, "predictor.rate_window_slots", "must be >= 1")
    need(0 < pr.pmf_tail_cutoff < 1, "predictor.pmf_tail_cutoff", "must lie in (0, 1)")
    need(op.tol > 0, "optimizer.tol", "must be > 0")
    need(op.max_iter >= 1, "optimizer.max_iter", "must be >= 1")
    need(op.method in ("exact", "gradient"), "optimizer.method", "must be 'exact' or 'gradient'")
    need(op.alpha >= 0, "optimizer.alpha", "must be >= 0")
    need(op.interference_sweeps >= 1, "optimizer.interference_sweeps", "must be >= 1")
    need(op.alternations >= 1, "optimizer.alternations", "must be >= 1")
    need(all(v >= 0 for v in sw.mu_grid), "sweep.mu_grid", "rates must be >= 0")
    need(all(v > 0 for v in sw.tau_grid), "sweep.tau_grid", "horizons must be > 0")
    need(sw.ber_frames >= 1000, "sweep.ber_frames", "must be >= 1000")
    need(all(x in SCHEMES for x in sw.schemes), "sweep.schemes", f"entries must be in {SCHEMES}")
    need(len(cfg.classes) >= 1, "classes", "at least one class is required")
    names = [c.name for c in cfg.classes]
    need(len(set(names)) == len(names), "classes", "class names must be unique")
    for i, c in enumerate(cfg.classes):
        need(c.omega >= 1, f"classes[{i}].omega", "must be >= 1")
        need(c.min_rate > 0, f"classes[{i}].min_rate", "must be > 0")
        need(c.mean_session > 0, f"classes[{i}].mean_session", "must be > 0")
        need(c.arrival_share >= 0, f"classes[{i}].arrival_share", "must be >= 0")
        need(0 <= c.p_min <= c.p_max, f"classes[{i}].p_min", "need 0 <= p_min <= p_max")


def from_dict(raw):
    problems = []
    if not isinstance(raw, dict):
        raise ConfigInvalid([("<root>", "expected a table")])
    for key in raw:
        if key not in SECTIONS and key != "classes":
            problems.append((key, "unknown section"))
    parts = {}
    for name, cls in SECTIONS.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            problems.append((name, "expected a table"))
            continue
        parts[name] = _build(cls, sec, name, problems)
    if "classes" in raw:
        if not isinstance(raw["classes"], list):
            problems.append(("classes", "expected an array of tables"))
        else:
            built = [_build(ClassSection, c, f"classes[{i}]", problems) if isinstance(c, dict) else None
                     for i, c in enumerate(raw["classes"])]
            parts["classes"] = built
    if problems:
        raise ConfigInvalid(problems)
    cfg = ScenarioConfig(**parts)
    _check(cfg, problems)
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def loads(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid([("<toml>", str(exc))]) from exc
    return from_dict(raw)


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigInvalid([("<file>", f"{path}: not UTF-8")]) from exc
    return loads(text)


def parse_and_validate(path=None):
    """Load and validate a scenario file; ``None`` yields the defaults."""
    cfg = ScenarioConfig() if path is None else load(path)
    problems = []
    _check(cfg, problems)
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def class_rates_per_second(cfg, mu=None):
    """Network arrival rate of each class in users/s."""
    mu = cfg.scenario.arrival_rate if mu is None else mu
    n_aps = int(np.prod(cfg.room.ap_grid))
    shares = np.array([c.arrival_share for c in cfg.classes], dtype=float)
    total = shares.sum()
    shares = shares / total if total > 0 else shares
    return mu * n_aps / 60.0 * shares
