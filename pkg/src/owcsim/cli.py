"""Command-line entry point: run, sweep, validate, ber-curve and predict-demo."""
import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod, harness, predictor as pred, traffic
from .errors import ConfigInvalid, OwcError
from .rng import stream

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser():
    ap = argparse.ArgumentParser(prog="owcsim", description="OWC VCSEL network simulator")
    ap.add_argument("verb", choices=["run", "sweep", "validate", "ber-curve", "predict-demo"])
    ap.add_argument("--config", type=Path, default=None, help="scenario TOML file (defaults when omitted)")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--scheme", choices=cfgmod.SCHEMES, default=None)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--axis", choices=["mu", "tau", "snr", "class"], default="mu")
    ap.add_argument("--values", default=None, help="comma-separated sweep values (axis grid from config if omitted)")
    ap.add_argument("--record", action="store_true", help="also write allocations.csv and forecasts.csv")
    return ap


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def summary(res):
    a = res.aggregates
    return (f"{res.scheme} seed={res.seed} slots={len(res.metrics)} cf_db={a['network_cf_db_mean']:.3f} "
            f"sum_rate={a['sum_rate_mean']:.4g} loss={a['prediction_loss_mean']:.3f}")


def _load(args):
    if args.config is not None and not args.config.is_file():
        raise ConfigInvalid([("--config", f"{args.config}: no such file")])
    cfg = cfgmod.parse_and_validate(args.config)
    if args.seed is not None:
        cfg = cfg.replace("scenario", seed=args.seed)
    if args.scheme is not None:
        cfg = cfg.replace("scenario", scheme=args.scheme)
    return cfg


def _sweep_values(cfg, axis, raw):
    if raw is not None:
        vals = [v.strip() for v in raw.split(",") if v.strip()]
        return vals if axis == "class" else [float(v) for v in vals]
    return {"mu": cfg.sweep.mu_grid, "tau": cfg.sweep.tau_grid, "snr": cfg.sweep.snr_grid,
            "class": [c.name for c in cfg.classes]}[axis]


def cmd_run(cfg, args):
    res = harness.run_scenario(cfg, record=args.record)
    _write(args.out / "metrics.csv", harness.metrics_csv(cfg, res))
    _write(args.out / "aggregate.csv", harness.aggregate_csv(cfg, [res]))
    if args.record:
        _write(args.out / "allocations.csv", harness.allocations_csv(cfg, res))
        _write(args.out / "forecasts.csv", harness.forecasts_csv(cfg, res))
    print(summary(res))


def cmd_sweep(cfg, args):
    values = _sweep_values(cfg, args.axis, args.values)
    if args.axis == "snr":
        rows = harness.ber_curves(cfg.replace("sweep", snr_grid=[float(v) for v in values]),
                                  [cfg.scenario.scheme] if args.scheme else None)
        _write(args.out / "ber.csv", harness.ber_csv(cfg, rows))
        print(f"ber points={len(rows)}")
        return
    if args.axis == "class":
        names = {c.name for c in cfg.classes}
        unknown = [v for v in values if v not in names]
        if unknown:
            raise ConfigInvalid([("--values", f"unknown classes {unknown}")])
    schemes = [cfg.scenario.scheme] if args.scheme else None
    results = harness.sweep(cfg, args.axis, values, schemes=schemes, jobs=max(1, args.jobs))
    _write(args.out / "sweep.csv", harness.sweep_csv(cfg, args.axis, results))
    _write(args.out / "aggregate.csv", harness.aggregate_csv(cfg, [r for _, r in results]))
    for (axis, v, _, _), r in results:
        print(f"{axis}={v} " + summary(r))


def cmd_ber(cfg, args):
    rows = harness.ber_curves(cfg, [cfg.scenario.scheme] if args.scheme else None)
    _write(args.out / "ber.csv", harness.ber_csv(cfg, rows))
    print(f"ber points={len(rows)}")


def cmd_predict_demo(cfg, args):
    """Forecast coverage on a stationary single-(AP, class) system with a known rate."""
    s = cfg.scenario
    params = pred.PredictorParams(s.epsilon, s.slot_tau, cfg.predictor.pmf_tail_cutoff)
    rate = float(cfgmod.class_rates_per_second(cfg)[0]) / int(np.prod(cfg.room.ap_grid))
    c = cfg.classes[0]
    cls = traffic.ServiceClass(c.name, c.min_rate, c.mean_session, c.omega, c.arrival_share, c.p_min, c.p_max)
    Tr = cfg.traffic.mean_residence
    times = np.arange(0, 2000) * s.slot_tau
    counts = pred.simulate_stationary_counts(rate, cls, Tr, times, stream(s.seed, "predict-demo"))
    rows, forecasts = [], []
    for j in range(len(times) - 1):
        w = pred.ObservationWindow(0, 0, [times[j]], [int(counts[j])])
        f = pred.predict_slot(w, params, cls, Tr, mu_hat=rate)
        forecasts.append(f.n_tilde)
        rows.append((j, 0, c.name, f.basis_count, f.p_tau, f.q_tau, f.mu_hat, f.n_tilde, int(counts[j + 1]),
                     abs(f.n_tilde - int(counts[j + 1]))))
    rep = pred.prediction_loss(forecasts, counts[1:])
    text = harness.header_line(cfg, s.seed) + harness._csv(
        ["slot", "ap", "class", "basis", "p_tau", "q_tau", "mu_hat", "n_tilde", "actual", "loss"], rows)
    _write(args.out / "forecasts.csv", text)
    print(f"predict-demo class={c.name} epsilon={s.epsilon} mae={rep.mae:.3f} violation={rep.violation_rate:.4f}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.verb == "validate":
            harness.build_scenario(cfg)
            print(f"config ok sha256={cfg.digest()}")
            return EXIT_OK
        {"run": cmd_run, "sweep": cmd_sweep, "ber-curve": cmd_ber, "predict-demo": cmd_predict_demo}[args.verb](cfg, args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, OwcError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
