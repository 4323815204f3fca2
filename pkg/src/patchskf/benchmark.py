"""Multi-realization comparison of the estimators on simulated sequences.

Every realization draws one simulated sequence and runs each configured
estimator on the same measurements. Per-frame MSE, per-frame-loop wall-clock
time and mode-detection accuracy are collected into a :class:`MetricsTable`,
which can be written to and read back from CSV.
"""

from __future__ import annotations

import csv
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .estimators import KINDS, EstimatorConfig, EstimationResult, run_estimator
from .simulation import SimConfig, fit_mode_covariances, generate, mse
from .skf import ModeLibrary

#: Seed offset of the noise-free runs used to fit the filter models.
FIT_SEED_OFFSET = 1_000_003

#: Frames excluded from mode-detection scoring while filters converge.
BURN_IN = 10


@dataclass(frozen=True)
class EstimatorSpec:
    """Data-independent part of an :class:`EstimatorConfig`.

    The library and measurement model are only known once the data has been
    simulated, so the experiment stores these templates instead.
    """

    kind: str
    window_side: int = 8
    r: int = 3
    alpha: int = 2
    p_stay: float = 0.95

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")

    @property
    def name(self) -> str:
        return self.kind

    def config(self, library: ModeLibrary, measurement) -> EstimatorConfig:
        return EstimatorConfig(
            kind=self.kind, library=library, measurement=measurement, p_stay=self.p_stay,
            window_side=self.window_side, r=self.r, alpha=self.alpha,
        )


DEFAULT_ESTIMATORS = (EstimatorSpec("full"), EstimatorSpec("wskf"), EstimatorSpec("swskf"))


@dataclass(frozen=True)
class ExperimentSpec:
    sim: SimConfig = field(default_factory=SimConfig)
    estimators: tuple[EstimatorSpec, ...] = DEFAULT_ESTIMATORS
    realizations: int = 20
    out_dir: Path | None = None

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError("realization count must be at least 1")
        if not self.estimators:
            raise ValueError("estimator list is empty")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate estimators in {names}")

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.estimators]

    def realization_seed(self, i: int) -> int:
        return self.sim.seed + i

    def fit_library(self) -> ModeLibrary:
        return fit_mode_covariances(self.sim, seed=self.sim.seed + FIT_SEED_OFFSET)


@dataclass
class MetricsTable:
    """Metrics for every (estimator, realization[, frame]) cell.

    ``mse`` has shape ``(estimators, realizations, frames)``; ``seconds`` and
    ``mode_accuracy`` have shape ``(estimators, realizations)``. Failed cells
    hold NaN and are listed in ``errors``.
    """

    estimators: list[str]
    mse: np.ndarray
    seconds: np.ndarray
    mode_accuracy: np.ndarray
    errors: dict = field(default_factory=dict)
    elapsed: float = math.nan

    @property
    def realizations(self) -> int:
        return self.mse.shape[1]

    @property
    def frames(self) -> int:
        return self.mse.shape[2]

    def index(self, name: str) -> int:
        return self.estimators.index(name)

    def mean_mse(self, name: str) -> float:
        return float(self.mse[self.index(name)].mean())

    def mean_seconds(self, name: str) -> float:
        return float(self.seconds[self.index(name)].mean())

    def series(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Per-frame mean MSE across realizations and its standard error."""
        values = self.mse[self.index(name)]
        return values.mean(axis=0), _stderr(values, axis=0)

    def aggregate(self) -> list[dict]:
        rows = []
        for e, name in enumerate(self.estimators):
            per_run = self.mse[e].mean(axis=1)
            rows.append({
                "estimator": name,
                "mean_mse": float(per_run.mean()),
                "stderr_mse": float(_stderr(per_run)),
                "mean_seconds": float(self.seconds[e].mean()),
                "stderr_seconds": float(_stderr(self.seconds[e])),
                "mode_accuracy": float(self.mode_accuracy[e].mean()),
            })
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "mse.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "realization", "frame", "mse"])
            for e, name in enumerate(self.estimators):
                for i in range(self.realizations):
                    for n in range(self.frames):
                        w.writerow([name, i, n, repr(float(self.mse[e, i, n]))])
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "realization", "seconds"])
            for e, name in enumerate(self.estimators):
                for i in range(self.realizations):
                    w.writerow([name, i, repr(float(self.seconds[e, i]))])
        with open(out / "modes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "realization", "accuracy"])
            for e, name in enumerate(self.estimators):
                for i in range(self.realizations):
                    w.writerow([name, i, repr(float(self.mode_accuracy[e, i]))])
        rows = self.aggregate()
        with open(out / "aggregate.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: v if isinstance(v, str) else repr(v) for k, v in row.items()})
        with open(out / "series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "frame", "mean_mse", "stderr_mse"])
            for name in self.estimators:
                mean, se = self.series(name)
                for n in range(self.frames):
                    w.writerow([name, n, repr(float(mean[n])), repr(float(se[n]))])

    @classmethod
    def read(cls, out_dir) -> "MetricsTable":
        """Rebuild a table from the ``mse.csv``, ``timing.csv`` and ``modes.csv`` files."""
        out = Path(out_dir)
        with open(out / "mse.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        names = list(dict.fromkeys(r["estimator"] for r in rows))
        R = 1 + max(int(r["realization"]) for r in rows)
        T = 1 + max(int(r["frame"]) for r in rows)
        values = np.full((len(names), R, T), np.nan)
        for r in rows:
            values[names.index(r["estimator"]), int(r["realization"]), int(r["frame"])] = float(r["mse"])
        seconds = np.full((len(names), R), np.nan)
        with open(out / "timing.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                seconds[names.index(r["estimator"]), int(r["realization"])] = float(r["seconds"])
        accuracy = np.full((len(names), R), np.nan)
        with open(out / "modes.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                accuracy[names.index(r["estimator"]), int(r["realization"])] = float(r["accuracy"])
        return cls(names, values, seconds, accuracy)


def _stderr(values: np.ndarray, axis=None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.size if axis is None else values.shape[axis]
    if n < 2:
        return np.zeros_like(np.mean(values, axis=axis))
    return np.std(values, axis=axis, ddof=1) / math.sqrt(n)


def unit_regions(result: EstimationResult, sim: SimConfig) -> np.ndarray:
    """Region index of each estimator unit, taken from its owned pixels.

    Returns -1 for units whose owned pixels span several regions.
    """
    region_of = np.empty(sim.side * sim.side, dtype=int)
    for k, idx in enumerate(sim.regions()):
        region_of[idx] = k
    layout = result.extra.get("layout")
    if layout is None:
        units = result.mode_posteriors.shape[1]
        if units == sim.n_regions:
            return np.arange(units)
        return np.full(units, -1)
    out = []
    for p in layout.patches:
        owned = np.unique(region_of[p.center_indices])
        out.append(owned[0] if len(owned) == 1 else -1)
    return np.asarray(out)


def mode_accuracy(result: EstimationResult, true_modes: np.ndarray, sim: SimConfig,
                  burn_in: int = BURN_IN) -> float:
    """Fraction of (frame, unit) pairs whose argmax mode equals the true region mode.

    A single global unit is scored against every region. Frames before
    ``burn_in`` are skipped, or the first half of runs shorter than that.
    """
    burn_in = min(burn_in, len(true_modes) // 2)
    maps = result.mode_map[burn_in:]
    truth = true_modes[burn_in:]
    if maps.shape[1] == 1:
        return float((truth == maps).mean())
    regions = unit_regions(result, sim)
    keep = regions >= 0
    return float((maps[:, keep] == truth[:, regions[keep]]).mean())


def run_realization(spec: ExperimentSpec, i: int, library: ModeLibrary | None = None) -> dict:
    """Simulate realization ``i`` and run every estimator on it.

    Returns a dict with per-estimator ``mse``, ``seconds`` and ``accuracy``
    entries, plus ``errors`` for estimators that raised.
    """
    if library is None:
        library = spec.fit_library()
    sim = generate(replace(spec.sim, seed=spec.realization_seed(i)))
    measurement = sim.measurement_model()
    out = {"mse": {}, "seconds": {}, "accuracy": {}, "errors": {}}
    for est in spec.estimators:
        try:
            result = run_estimator(sim.measurements, est.config(library, measurement))
        except Exception as exc:  # recorded per cell so the remaining cells still run
            out["errors"][est.name] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            continue
        out["mse"][est.name] = mse(result.estimates, sim.truth)
        out["seconds"][est.name] = result.total_seconds
        out["accuracy"][est.name] = mode_accuracy(result, sim.true_modes, spec.sim)
    return out


def _worker(args):
    spec, i, library = args
    return run_realization(spec, i, library)


def run_benchmark(spec: ExperimentSpec, jobs: int = 1, progress=None) -> MetricsTable:
    """Run all realizations, in parallel when ``jobs > 1``.

    Timings measured under parallel execution share the CPU with other
    workers, so runtime comparisons are only meaningful with ``jobs=1`` or
    when ``jobs`` does not exceed the number of idle cores.
    """
    t0 = time.perf_counter()
    library = spec.fit_library()
    names = spec.names
    E, R, T = len(names), spec.realizations, spec.sim.frames
    table = MetricsTable(
        names, np.full((E, R, T), np.nan), np.full((E, R), np.nan), np.full((E, R), np.nan)
    )
    tasks = [(spec, i, library) for i in range(R)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1, R)) as pool:
            results = pool.map(_worker, tasks)
            _collect(table, results, progress)
    else:
        _collect(table, map(_worker, tasks), progress)
    table.elapsed = time.perf_counter() - t0
    if spec.out_dir is not None:
        table.write(spec.out_dir)
    return table


def _collect(table: MetricsTable, results, progress) -> None:
    for i, res in enumerate(results):
        for e, name in enumerate(table.estimators):
            if name in res["errors"]:
                table.errors[name, i] = res["errors"][name]
                continue
            table.mse[e, i] = res["mse"][name]
            table.seconds[e, i] = res["seconds"][name]
            table.mode_accuracy[e, i] = res["accuracy"][name]
        if progress is not None:
            progress(i, res)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def checks(table: MetricsTable, max_seconds: float = 600.0) -> list[Check]:
    """Accuracy, runtime and mode-detection orderings for the default comparison."""
    out = []
    have = set(table.estimators)
    if table.errors:
        out.append(Check("no estimator failures", False, f"{len(table.errors)} failed cells"))
    if {"full", "wskf"} <= have:
        full, w = table.mean_mse("full"), table.mean_mse("wskf")
        out.append(Check("mse wskf < 0.7 full", w < 0.7 * full, f"ratio {w / full:.3f}"))
        series, _ = table.series("full")
        if table.frames >= 100:
            out.append(Check("full mse frame 100 > frame 10", series[99] > series[9],
                             f"{series[99]:.5f} vs {series[9]:.5f}"))
    if {"wskf", "swskf"} <= have:
        w, sw = table.mean_mse("wskf"), table.mean_mse("swskf")
        out.append(Check("mse swskf <= wskf", sw <= w, f"{sw:.5f} vs {w:.5f}"))
    if {"full", "wskf", "swskf"} <= have:
        tf, tw, ts = (table.mean_seconds(k) for k in ("full", "wskf", "swskf"))
        out.append(Check("time wskf < swskf < full", tw < ts < tf,
                         f"{tw:.2f} s, {ts:.2f} s, {tf:.2f} s"))
        out.append(Check("time full / wskf >= 10", tf >= 10 * tw, f"ratio {tf / tw:.1f}"))
    if "wskf" in have:
        acc = float(table.mode_accuracy[table.index("wskf")].mean())
        out.append(Check("wskf mode accuracy >= 0.8", acc >= 0.8, f"{acc:.3f}"))
    if math.isfinite(table.elapsed):
        out.append(Check(f"benchmark wall time < {max_seconds:.0f} s", table.elapsed < max_seconds,
                         f"{table.elapsed:.1f} s"))
    return out


def format_report(table: MetricsTable, spec: ExperimentSpec | None = None,
                  results: list[Check] | None = None, series_step: int = 10) -> str:
    lines = []
    if spec is not None:
        s = spec.sim
        lines.append(
            f"{spec.realizations} realizations, {s.side}x{s.side} pixels, {s.frames} frames, "
            f"SNR {s.snr_db} dB, velocities {s.velocities}, switch prob {s.switch_prob}"
        )
        lines.append("")
    lines.append(f"{'estimator':<10}{'mean MSE':>12}{'stderr':>11}{'seconds':>10}{'mode acc':>10}")
    for row in table.aggregate():
        lines.append(
            f"{row['estimator']:<10}{row['mean_mse']:>12.5f}{row['stderr_mse']:>11.5f}"
            f"{row['mean_seconds']:>10.2f}{row['mode_accuracy']:>10.3f}"
        )
    lines.append("")
    lines.append("mean MSE by frame")
    lines.append("frame " + "".join(f"{name:>10}" for name in table.estimators))
    frames = sorted(set(range(0, table.frames, series_step)) | {table.frames - 1})
    means = {name: table.series(name)[0] for name in table.estimators}
    for n in frames:
        lines.append(f"{n + 1:>5} " + "".join(f"{means[name][n]:>10.5f}" for name in table.estimators))
    if table.errors:
        lines.append("")
        lines.append("failures")
        for (name, i), msg in sorted(table.errors.items()):
            lines.append(f"  {name} realization {i}: {msg}")
    if results:
        lines.append("")
        lines.append("checks")
        for c in results:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    if math.isfinite(table.elapsed):
        lines.append("")
        lines.append(f"total wall time {table.elapsed:.1f} s")
    return "\n".join(lines) + "\n"


def plot_series(table: MetricsTable, path) -> bool:
    """Write an MSE-vs-frame figure; returns False when matplotlib is unavailable."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in table.estimators:
        mean, _ = table.series(name)
        ax.plot(np.arange(1, table.frames + 1), mean, label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel("MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return True
