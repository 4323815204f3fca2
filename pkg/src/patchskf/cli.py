"""Command-line driver: ``simulate``, ``filter`` and ``bench`` subcommands.

Any flag can also come from a JSON object passed with ``--config``; keys are
the long flag names with dashes or underscores. Flags given on the command
line win over the config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import EstimatorSpec, ExperimentSpec, checks, format_report, plot_series, run_benchmark
from .estimators import KINDS, EstimatorConfig, run_estimator
from .frames import FrameSequence, read_frames, write_frames
from .lds import MeasurementModel
from .simulation import SimConfig, fit_mode_covariances, generate, mse
from .skf import ModeLibrary


class CLIError(Exception):
    pass


def _velocities(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("at least one value is required")
    return values


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with flag values; flags win")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes")


def _add_sim(p: argparse.ArgumentParser, frames_default=100) -> None:
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--frames", type=int, default=frames_default)
    p.add_argument("--snr-db", type=float, default=SimConfig.snr_db)
    p.add_argument("--switch-prob", type=float, default=SimConfig.switch_prob)
    p.add_argument("--velocities", type=_velocities, default=SimConfig.velocities,
                   help="mode velocities in pixels per frame, e.g. 0.01,0.94")
    p.add_argument("--blobs", type=int, default=SimConfig.blobs_per_region,
                   help="blobs per region")
    p.add_argument("--blob-width", type=float, default=SimConfig.blob_width)


def _add_filter_geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=_positive_int, default=8, help="wskf window side")
    p.add_argument("--r", type=int, default=3, help="swskf locality radius")
    p.add_argument("--alpha", type=_positive_int, default=2, help="swskf center side")
    p.add_argument("--p-stay", type=float, default=0.95)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchskf", description="Patch-based switching Kalman filtering of image sequences."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate truth, measurements and true modes")
    _add_shared(sim)
    _add_sim(sim)

    flt = sub.add_parser("filter", help="run one estimator on a measurement file")
    _add_shared(flt)
    flt.add_argument("--estimator", choices=KINDS, default="wskf")
    flt.add_argument("--measurements", type=Path, required=False)
    flt.add_argument("--truth", type=Path, help="truth frames for the MSE report")
    _add_filter_geometry(flt)
    flt.add_argument("--velocities", type=_velocities, default=SimConfig.velocities,
                     help="mode velocities used to fit the filter models")
    flt.add_argument("--blobs", type=int, default=SimConfig.blobs_per_region)
    flt.add_argument("--blob-width", type=float, default=SimConfig.blob_width)
    flt.add_argument("--q", type=_velocities, help="per-mode process variances; skips fitting")
    noise = flt.add_mutually_exclusive_group()
    noise.add_argument("--noise-var", type=float, help="measurement noise variance")
    noise.add_argument("--snr-db", type=float, help="infer the noise variance from this SNR")

    bench = sub.add_parser("bench", help="compare estimators over many realizations")
    _add_shared(bench)
    _add_sim(bench)
    _add_filter_geometry(bench)
    bench.add_argument("--realizations", type=_positive_int, default=20)
    bench.add_argument("--estimators", default="full,wskf,swskf",
                       help="comma-separated estimator kinds")
    bench.add_argument("--check", action="store_true", help="exit nonzero when a check fails")
    bench.add_argument("--plot", action="store_true", help="also write mse.png (needs matplotlib)")
    parser.set_defaults(_subparsers={"simulate": sim, "filter": flt, "bench": bench})
    return parser


def _load_config(sub: argparse.ArgumentParser, path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        raise CLIError(f"config {path} must hold a JSON object")
    known = {a.dest: a for a in sub._actions}
    values = {}
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("config", "help", "_subparsers"):
            raise CLIError(f"unknown config key {key!r}")
        action = known[dest]
        if action.type is not None and not isinstance(value, (list, tuple)):
            value = action.type(str(value))
        elif isinstance(value, list):
            value = tuple(value)
        values[dest] = value
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is not None:
        sub = args._subparsers[args.command]
        sub.set_defaults(**_load_config(sub, args.config))
        args = parser.parse_args(argv)
    return args


def _sim_config(args) -> SimConfig:
    return SimConfig(
        side=args.side, frames=args.frames, snr_db=args.snr_db, switch_prob=args.switch_prob,
        velocities=args.velocities, blobs_per_region=args.blobs, blob_width=args.blob_width,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    out = generate(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_frames(args.out / "truth.f32", out.truth)
    write_frames(args.out / "measurements.f32", out.measurements)
    with open(args.out / "modes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "region", "mode"])
        for n, row in enumerate(out.true_modes):
            for k, mode in enumerate(row):
                w.writerow([n, k, int(mode)])
    meta = {
        "side": cfg.side, "frames": cfg.frames, "snr_db": cfg.snr_db, "seed": cfg.seed,
        "velocities": list(cfg.velocities), "switch_prob": cfg.switch_prob,
        "noise_variance": out.noise_variance,
    }
    (args.out / "simulation.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {cfg.frames} frames of {cfg.side}x{cfg.side} to {args.out} "
          f"(realized SNR {out.realized_snr_db:.2f} dB)")
    return 0


def _noise_variance(args, ys: FrameSequence) -> float:
    if args.noise_var is not None:
        if args.noise_var <= 0:
            raise CLIError("--noise-var must be positive")
        return args.noise_var
    meta = args.measurements.parent / "simulation.json"
    if args.snr_db is None and meta.exists():
        value = json.loads(meta.read_text()).get("noise_variance")
        if value:
            return float(value)
    snr = SimConfig.snr_db if args.snr_db is None else args.snr_db
    if math.isinf(snr):
        raise CLIError("noise-free measurements need an explicit --noise-var")
    # E[y^2] = S + N with S = N * 10^(snr/10)
    return float(np.mean(ys.data**2)) / (1.0 + 10.0 ** (snr / 10.0))


def _filter_library(args, dims) -> ModeLibrary:
    d = dims[0] * dims[1]
    if args.q is not None:
        return ModeLibrary.random_walks(d, args.q)
    if dims[0] != dims[1]:
        raise CLIError("fitting models needs square frames; pass --q for other shapes")
    side = dims[0]
    grid = (2, 2) if side % 2 == 0 else (1, 1)
    cfg = SimConfig(side=side, velocities=args.velocities, region_grid=grid,
                    blobs_per_region=args.blobs, blob_width=args.blob_width, seed=args.seed)
    return fit_mode_covariances(cfg)


def cmd_filter(args) -> int:
    if args.measurements is None:
        raise CLIError("--measurements is required")
    ys = read_frames(args.measurements)
    truth = read_frames(args.truth) if args.truth else None
    if truth is not None and truth.data.shape != ys.data.shape:
        raise CLIError(f"truth shape {truth.data.shape} differs from measurements {ys.data.shape}")
    d = ys.height * ys.width
    library = _filter_library(args, ys.dims)
    measurement = MeasurementModel.identity(d, _noise_variance(args, ys))
    try:
        config = EstimatorConfig(
            kind=args.estimator, library=library, measurement=measurement, p_stay=args.p_stay,
            window_side=args.window, r=args.r, alpha=args.alpha,
        )
        result = run_estimator(ys, config)
    except ValueError as exc:
        raise CLIError(str(exc))
    args.out.mkdir(parents=True, exist_ok=True)
    write_frames(args.out / "estimates.f32", FrameSequence(result.estimates.data))
    name = args.estimator
    if truth is not None:
        errors = mse(result.estimates, truth)
        with open(args.out / "mse.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "realization", "frame", "mse"])
            for n, value in enumerate(errors):
                w.writerow([name, 0, n, repr(float(value))])
    with open(args.out / "mode_posteriors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "unit", "mode", "probability"])
        T, units, l = result.mode_posteriors.shape
        for n in range(T):
            for u in range(units):
                for j in range(l):
                    w.writerow([n, u, j, repr(float(result.mode_posteriors[n, u, j]))])
    with open(args.out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "realization", "seconds"])
        w.writerow([name, 0, repr(result.total_seconds)])
    msg = f"{name}: {len(ys)} frames in {result.total_seconds:.2f} s"
    if truth is not None:
        msg += f", mean MSE {errors.mean():.5f}"
    print(msg)
    return 0


def cmd_bench(args) -> int:
    kinds = [k.strip() for k in args.estimators.split(",") if k.strip()]
    try:
        estimators = tuple(
            EstimatorSpec(k, window_side=args.window, r=args.r, alpha=args.alpha, p_stay=args.p_stay)
            for k in kinds
        )
        spec = ExperimentSpec(_sim_config(args), estimators, args.realizations, args.out)
    except ValueError as exc:
        raise CLIError(str(exc))

    def progress(i, res):
        done = ", ".join(f"{k} {v:.1f}s" for k, v in res["seconds"].items())
        print(f"realization {i + 1}/{spec.realizations}: {done}", file=sys.stderr, flush=True)

    table = run_benchmark(spec, jobs=args.jobs, progress=progress)
    results = checks(table)
    report = format_report(table, spec, results)
    (args.out / "report.txt").write_text(report)
    if args.plot and not plot_series(table, args.out / "mse.png"):
        print("matplotlib is not installed; skipping plot", file=sys.stderr)
    print(report, end="")
    if table.errors:
        return 1
    if args.check and not all(c.passed for c in results):
        return 1
    return 0


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except (CLIError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
