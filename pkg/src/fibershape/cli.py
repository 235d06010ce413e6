"""Command-line entry point for reproducible training, sweep and
calibration runs.

Every command reads one flat key-value config file, applies flag
overrides, and writes its artifacts plus a JSON run manifest into the
output directory.  The manifest (command line, config snapshot, seed,
code version, artifact list) is written before a long computation starts
and finalized with the wall clock afterwards, so an interrupted run still
leaves a record of what was attempted.

Exit codes: 0 success, 1 domain error (divergence, missing calibration,
rank-deficient fit), 2 usage error (bad flags or config values).
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import constellation as cst
from .channel import (
    ChannelModel,
    ase_variance,
    calibrate_nlin,
    effective_snr,
    load_coefficients,
    save_coefficients,
    total_noise_variance,
)
from .config import (
    apply_overrides,
    build_link_config,
    build_ssf_config,
    parse_batch_schedule,
    parse_config,
    parse_power_range,
)
from .errors import ConfigError, FibershapeError, TrainingDiverged
from .metrics import mi_gaussian_auxiliary
from .report import (
    SweepRow,
    render_constellation_figure,
    render_sweep_figures,
    render_trace_figure,
    write_sweep_csv,
    write_trace_csv,
)
from .ssf import calibration_matrix, run_transmission
from .trainer import TrainConfig, train


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    code_version: str
    output_paths: list
    started_utc: str
    status: str = "running"
    wall_clock_seconds: float = None
    results: dict = field(default_factory=dict)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _utcnow():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _command_line(argv):
    return "fibershape " + " ".join(argv)


def _load_kappa(cfg):
    path = cfg.get("train.kappa_path")
    if not path:
        raise FibershapeError(
            "no NLIN coefficients configured: set train.kappa_path and run "
            "'fibershape calibrate-nlin <config> --out <kappa.json>' to produce it"
        )
    if not os.path.exists(path):
        raise FibershapeError(
            f"NLIN coefficients file {path!r} not found: run "
            f"'fibershape calibrate-nlin <config> --out {path}' first"
        )
    return load_coefficients(path)


def _build_channel(cfg, kind):
    link = build_link_config(cfg)
    return ChannelModel(
        kind=kind,
        sigma2_ase_mw=ase_variance(link),
        coeffs=_load_kappa(cfg),
        launch_power_dbm=cfg.get("train.launch_power_dbm", 0.0),
        tx_awgn_snr_db=cfg.get("link.tx_awgn_snr_db"),
    )


def _build_train_config(cfg, channel, joint_power):
    return TrainConfig(
        channel=channel,
        m=cfg.get("train.m", 64),
        hidden_layers=cfg.get("train.hidden_layers", 1),
        hidden_units=cfg.get("train.hidden_units", 32),
        learning_rate=cfg.get("train.learning_rate", 0.001),
        batch_schedule=parse_batch_schedule(cfg.get("train.batch_schedule", "0:8,100:2048")),
        max_iterations=cfg.get("train.max_iterations", 10000),
        seed=cfg.get("train.seed", 0),
        train_launch_power=joint_power,
        power_learning_rate=cfg.get("train.power_learning_rate", 0.02),
        early_stop_window=cfg.get("train.early_stop_window", 1000),
        early_stop_rel_change=cfg.get("train.early_stop_rel_change", 1e-3),
    )


# -- train --------------------------------------------------------------------


def cmd_train(args, argv):
    cfg = apply_overrides(
        parse_config(args.config),
        {"train.m": args.m, "train.launch_power_dbm": args.power_dbm},
    )
    channel = _build_channel(cfg, args.model)
    train_cfg = _build_train_config(cfg, channel, args.joint_power)

    os.makedirs(args.out, exist_ok=True)
    paths = {
        name: os.path.join(args.out, name)
        for name in ("constellation.json", "trace.csv", "constellation.png",
                     "training_trace.png")
    }
    manifest_path = os.path.join(args.out, "manifest.json")
    manifest = RunManifest(
        command=_command_line(argv),
        config=cfg,
        seed=train_cfg.seed,
        code_version=__version__,
        output_paths=sorted(paths.values()),
        started_utc=_utcnow(),
    )
    manifest.write(manifest_path)

    t0 = time.monotonic()
    try:
        result = train(train_cfg)
    except TrainingDiverged as e:
        manifest.status = "diverged"
        manifest.wall_clock_seconds = time.monotonic() - t0
        manifest.results = {
            "iteration": e.iteration,
            "last_finite_loss": e.last_finite_loss,
        }
        manifest.write(manifest_path)
        raise

    cst.save(result.constellation, paths["constellation.json"])
    write_trace_csv(result.trace, paths["trace.csv"])
    title = f"{args.model} M={train_cfg.m} @ {result.final_launch_power_dbm:.2f} dBm"
    render_constellation_figure(result.constellation, paths["constellation.png"], title)
    render_trace_figure(result.trace, paths["training_trace.png"])

    mom = cst.moments(result.constellation)
    manifest.status = "completed"
    manifest.wall_clock_seconds = time.monotonic() - t0
    manifest.results = {
        "final_loss_nats": result.final_loss,
        "iterations_run": result.iterations_run,
        "stopped_early": result.stopped_early,
        "mu4": mom.mu4,
        "mu6": mom.mu6,
        "converged_power_dbm": result.final_launch_power_dbm,
    }
    manifest.write(manifest_path)
    print(
        f"trained {args.model} M={train_cfg.m}: loss {result.final_loss:.4f} nats, "
        f"mu4 {mom.mu4:.4f}, mu6 {mom.mu6:.4f}, "
        f"power {result.final_launch_power_dbm:+.2f} dBm "
        f"({result.iterations_run} iterations)"
    )
    print(f"wrote {args.out}")
    return 0


# -- sweep --------------------------------------------------------------------


def _model_point(name, points, power_dbm, channel, n_samples, seed):
    c = cst.Constellation(points)
    mom = cst.moments(c)
    ch = channel.with_power(power_dbm)
    snr_db = effective_snr(ch, mom.mu4, mom.mu6)
    sigma2 = total_noise_variance(ch, mom.mu4, mom.mu6) / ch.launch_power_mw
    est = mi_gaussian_auxiliary(
        c, sigma2=sigma2, mode="sampling", n_samples=n_samples,
        rng=np.random.default_rng(seed),
    )
    return SweepRow(
        constellation=name, power_dbm=power_dbm, snr_eff_db=snr_db,
        mi_bit_4d=est.mi_bits_per_4d, mu4=mom.mu4, mu6=mom.mu6, source="model",
    )


def _ssf_point(name, points, power_dbm, ssf_cfg, n_spans, seed):
    c = cst.Constellation(points)
    mom = cst.moments(c)
    res = run_transmission(c, ssf_cfg, n_spans, power_dbm, seed=seed)
    return SweepRow(
        constellation=name, power_dbm=power_dbm, snr_eff_db=res.snr_eff_db,
        mi_bit_4d=res.mi_bits_per_4d, mu4=mom.mu4, mu6=mom.mu6, source="ssf",
    )


def _sweep_worker(task):
    kind, name, points, power, payload, seed = task
    try:
        if kind == "model":
            channel, n_samples = payload
            return _model_point(name, points, power, channel, n_samples, seed)
        ssf_cfg, n_spans = payload
        return _ssf_point(name, points, power, ssf_cfg, n_spans, seed)
    except Exception as e:  # recorded per row, sweep continues
        return SweepRow(
            constellation=name, power_dbm=power, source=kind,
            error=f"{type(e).__name__}: {e}",
        )


def cmd_sweep(args, argv):
    cfg = parse_config(args.config)
    powers = parse_power_range(args.powers)
    loaded = []
    for path in args.constellations:
        try:
            c = cst.load(path)
        except OSError as e:
            raise FibershapeError(f"cannot load constellation: {e}")
        name = os.path.splitext(os.path.basename(path))[0]
        loaded.append((name, c))

    if args.eval == "model":
        channel = _build_channel(cfg, "nlin")
        payload = (channel, cfg.get("train.mi_samples", 2**16))
        base_seed = cfg.get("train.seed", 0)
    else:
        ssf_cfg = build_ssf_config(cfg)
        payload = (ssf_cfg, cfg.get("link.n_spans", 1))
        base_seed = ssf_cfg.seed

    tasks = []
    for name, c in sorted(loaded, key=lambda kv: kv[0]):
        for p in powers:
            tasks.append((args.eval, name, c.points, p, payload, (base_seed, len(tasks))))

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    fig_paths = [os.path.join(args.out, n) for n in ("snr_vs_power.png", "mi_vs_power.png")]
    manifest_path = os.path.join(args.out, "manifest.json")
    manifest = RunManifest(
        command=_command_line(argv),
        config=cfg,
        seed=base_seed,
        code_version=__version__,
        output_paths=sorted([csv_path] + fig_paths),
        started_utc=_utcnow(),
    )
    manifest.write(manifest_path)

    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    t0 = time.monotonic()
    if jobs == 1 or len(tasks) == 1:
        rows = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, tasks))

    rows.sort(key=lambda r: (r.constellation, r.power_dbm, r.source))
    write_sweep_csv(rows, csv_path)
    render_sweep_figures(rows, args.out)

    n_failed = sum(r.failed for r in rows)
    manifest.status = "completed"
    manifest.wall_clock_seconds = time.monotonic() - t0
    manifest.results = {"rows": len(rows), "failed_rows": n_failed}
    manifest.write(manifest_path)
    print(f"swept {len(loaded)} constellation(s) x {len(powers)} power(s) "
          f"[{args.eval}]: {len(rows)} rows, {n_failed} failed")
    print(f"wrote {csv_path}")
    return 0


# -- calibrate ----------------------------------------------------------------


def cmd_calibrate_nlin(args, argv):
    cfg = parse_config(args.config)
    ssf_cfg = build_ssf_config(cfg)
    n_spans = cfg.get("link.n_spans", 1)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = args.out + ".manifest.json"
    manifest = RunManifest(
        command=_command_line(argv),
        config=cfg,
        seed=ssf_cfg.seed,
        code_version=__version__,
        output_paths=[args.out],
        started_utc=_utcnow(),
    )
    manifest.write(manifest_path)

    t0 = time.monotonic()
    points = calibration_matrix(ssf_cfg, n_spans)
    coeffs = calibrate_nlin(points)
    save_coefficients(coeffs, args.out)

    manifest.status = "completed"
    manifest.wall_clock_seconds = time.monotonic() - t0
    manifest.results = {
        "kappa0": coeffs.kappa0,
        "kappa1": coeffs.kappa1,
        "kappa2": coeffs.kappa2,
        "fit_residual": coeffs.fit_residual,
        "n_points": len(points),
    }
    manifest.write(manifest_path)
    print(
        f"calibrated over {len(points)} points ({n_spans} span(s)): "
        f"kappa0={coeffs.kappa0:.4e} kappa1={coeffs.kappa1:.4e} "
        f"kappa2={coeffs.kappa2:.4e} residual={coeffs.fit_residual:.2e}"
    )
    print(f"wrote {args.out}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fibershape",
        description="constellation shaping over fiber channel models",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_train = sub.add_parser("train", help="train a constellation end to end")
    p_train.add_argument("config")
    p_train.add_argument("--model", choices=("gn", "nlin"), default="gn")
    p_train.add_argument("--power-dbm", type=float, default=None, dest="power_dbm")
    p_train.add_argument("--M", type=int, default=None, dest="m")
    p_train.add_argument("--joint-power", action="store_true")
    p_train.add_argument("--out", default="train_out")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="evaluate constellations over launch powers")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--powers", required=True,
                         help="start:step:stop (inclusive) or comma list, dBm")
    p_sweep.add_argument("--constellations", nargs="+", required=True,
                         metavar="FILE")
    p_sweep.add_argument("--eval", choices=("model", "ssf"), default="model")
    p_sweep.add_argument("--jobs", type=int, default=None)
    p_sweep.add_argument("--out", default="sweep_out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser("calibrate-nlin", help="fit NLIN coefficients from transmissions")
    p_cal.add_argument("config")
    p_cal.add_argument("--out", default="kappa.json")
    p_cal.set_defaults(func=cmd_calibrate_nlin)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    # argparse reads "-6.5:1:9.5" as a flag, not a value; fold such power
    # ranges into --powers= form so negative starts survive
    for i in range(len(argv) - 1):
        if argv[i] == "--powers" and argv[i + 1].startswith("-"):
            argv[i : i + 2] = ["--powers=" + argv[i + 1]]
            break
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except FibershapeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
