"""Synthetic switching cloud-like image sequences and error metrics.

The image is split into a grid of regions (quarters by default). Each region
holds a few Gaussian intensity blobs. Every frame each blob takes a step of
fixed length in a uniformly random direction, the length being the velocity
of the region's current mode; blobs reflect off the region border. Region
modes follow independent Markov chains. A pixel only ever shows the blobs of
its own region, so pixel dynamics are governed by that region's mode alone.

Blobs are rendered analytically at their sub-pixel centers rather than by
resampling the previous frame, so repeated moves do not blur the texture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .frames import FrameSequence
from .lds import MeasurementModel
from .patching import grid_regions
from .skf import ModeLibrary


@dataclass(frozen=True)
class SimConfig:
    """Generator settings. ``snr_db=math.inf`` disables measurement noise.

    ``initial_mode`` is the mode every region starts in; ``None`` draws it
    uniformly per region.
    """

    side: int = 32
    frames: int = 100
    region_grid: tuple[int, int] = (2, 2)
    velocities: tuple[float, ...] = (0.01, 0.94)
    switch_prob: float = 0.05
    blobs_per_region: int = 6
    blob_width: float = 1.0
    blob_amplitude: float = 1.0
    snr_db: float = 11.0
    initial_mode: int | None = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "velocities", tuple(float(v) for v in self.velocities))
        object.__setattr__(self, "region_grid", tuple(int(g) for g in self.region_grid))
        if self.side < 1 or self.frames < 1:
            raise ValueError("side and frames must be positive")
        if not self.velocities:
            raise ValueError("at least one mode velocity is required")
        if any(v < 0 or not math.isfinite(v) for v in self.velocities):
            raise ValueError("velocities must be finite and nonnegative")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ValueError("switch_prob must lie in [0, 1]")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be a number or +inf")
        gr, gc = self.region_grid
        if gr < 1 or gc < 1 or self.side % gr or self.side % gc:
            raise ValueError(f"side {self.side} not divisible by region grid {self.region_grid}")
        if self.blob_width <= 0:
            raise ValueError("blob_width must be positive")
        if self.initial_mode is not None and not 0 <= self.initial_mode < len(self.velocities):
            raise ValueError("initial_mode out of range")

    @property
    def dims(self) -> tuple[int, int]:
        return self.side, self.side

    @property
    def n_regions(self) -> int:
        return self.region_grid[0] * self.region_grid[1]

    @property
    def mode_count(self) -> int:
        return len(self.velocities)

    def regions(self) -> list[np.ndarray]:
        return grid_regions(self.dims, self.region_grid)


@dataclass(frozen=True)
class SimOutput:
    truth: FrameSequence
    measurements: FrameSequence
    true_modes: np.ndarray  # (frames, regions), mode governing the move into each frame
    noise_variance: float

    @property
    def realized_snr_db(self) -> float:
        noise = np.mean((self.measurements.data - self.truth.data) ** 2)
        if noise == 0.0:
            return math.inf
        return 10.0 * math.log10(np.mean(self.truth.data**2) / noise)

    def measurement_model(self) -> MeasurementModel:
        d = self.truth.height * self.truth.width
        return MeasurementModel.identity(d, self.noise_variance)


def _reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    u = np.mod(x - lo, 2.0 * span)
    return lo + np.where(u > span, 2.0 * span - u, u)


def _mode_chains(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    T, K, l = config.frames, config.n_regions, config.mode_count
    modes = np.empty((T, K), dtype=int)
    if config.initial_mode is None:
        modes[0] = rng.integers(0, l, size=K)
    else:
        modes[0] = config.initial_mode
    switches = rng.random((T, K)) < config.switch_prob
    jumps = rng.integers(1, max(l, 2), size=(T, K))
    for n in range(1, T):
        nxt = (modes[n - 1] + jumps[n]) % l if l > 1 else modes[n - 1]
        modes[n] = np.where(switches[n], nxt, modes[n - 1])
    return modes


def render_blobs(rows, cols, cy, cx, amplitude: float, width: float) -> np.ndarray:
    """Sum of isotropic Gaussian blobs evaluated at pixel centers ``(rows, cols)``."""
    rows = np.asarray(rows, dtype=float).reshape(-1, 1)
    cols = np.asarray(cols, dtype=float).reshape(-1, 1)
    dist2 = (rows - np.asarray(cy)) ** 2 + (cols - np.asarray(cx)) ** 2
    return amplitude * np.exp(-dist2 / (2.0 * width**2)).sum(axis=1)


def _render_truth(config: SimConfig, modes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    side, T = config.side, config.frames
    gr, gc = config.region_grid
    sh, sw = side // gr, side // gc
    B = config.blobs_per_region
    velocities = np.asarray(config.velocities)
    frames = np.zeros((T, side, side))

    for k in range(config.n_regions):
        i, j = divmod(k, gc)
        r_lo, r_hi = i * sh - 0.5, (i + 1) * sh - 0.5
        c_lo, c_hi = j * sw - 0.5, (j + 1) * sw - 0.5
        pr, pc = np.meshgrid(np.arange(i * sh, (i + 1) * sh), np.arange(j * sw, (j + 1) * sw),
                             indexing="ij")
        cy = rng.uniform(r_lo, r_hi, size=B)
        cx = rng.uniform(c_lo, c_hi, size=B)
        angles = rng.uniform(0.0, 2.0 * np.pi, size=(T, B))
        for n in range(T):
            step = velocities[modes[n, k]]
            cy = _reflect(cy + step * np.sin(angles[n]), r_lo, r_hi)
            cx = _reflect(cx + step * np.cos(angles[n]), c_lo, c_hi)
            values = render_blobs(pr, pc, cy, cx, config.blob_amplitude, config.blob_width)
            frames[n, i * sh:(i + 1) * sh, j * sw:(j + 1) * sw] = values.reshape(sh, sw)
    return frames


def generate(config: SimConfig) -> SimOutput:
    """Simulate truth frames, noisy measurements and the true region modes."""
    rng = np.random.default_rng(config.seed)
    modes = _mode_chains(config, rng)
    truth = _render_truth(config, modes, rng)
    if math.isinf(config.snr_db):
        return SimOutput(FrameSequence(truth), FrameSequence(truth.copy()), modes, 0.0)
    power = float(np.mean(truth**2))
    if power <= 0.0:
        raise ValueError("signal power is zero; SNR target cannot be met")
    noise_variance = power / 10.0 ** (config.snr_db / 10.0)
    noisy = truth + rng.normal(0.0, math.sqrt(noise_variance), size=truth.shape)
    return SimOutput(FrameSequence(truth), FrameSequence(noisy), modes, noise_variance)


def mse(estimates, truth) -> np.ndarray:
    """Per-frame mean squared error over pixels."""
    est = estimates.data if isinstance(estimates, FrameSequence) else np.asarray(estimates, float)
    ref = truth.data if isinstance(truth, FrameSequence) else np.asarray(truth, float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return ((est - ref) ** 2).reshape(est.shape[0], -1).mean(axis=1)


def increment_variance(config: SimConfig, mode: int, transitions: int = 500,
                       seed: int | None = None) -> float:
    """Mean squared one-step pixel increment of a noise-free run held in ``mode``."""
    run = replace(
        config,
        frames=transitions + 1,
        switch_prob=0.0,
        initial_mode=mode,
        snr_db=math.inf,
        seed=config.seed if seed is None else seed,
    )
    truth = generate(run).truth.data
    return float(np.mean(np.diff(truth, axis=0) ** 2))


def fit_mode_covariances(config: SimConfig, transitions: int = 500,
                         seed: int | None = None) -> ModeLibrary:
    """Random-walk filter models ``A = I``, ``Q_j = q_j I`` fitted per mode.

    ``q_j`` is the empirical per-pixel increment variance under constant mode
    ``j``, estimated from ``transitions`` noise-free steps.
    """
    if transitions < 500:
        raise ValueError("at least 500 transitions are needed for a stable fit")
    if len(set(config.velocities)) != len(config.velocities):
        raise ValueError("mode velocities must be distinct to fit separate models")
    qs = [increment_variance(config, j, transitions, seed) for j in range(config.mode_count)]
    if not all(math.isfinite(q) for q in qs) or max(qs) <= 0.0:
        raise ValueError(f"degenerate increment variances {qs}; no motion to model")
    d = config.side * config.side
    return ModeLibrary.random_walks(d, qs)
