"""Full-image, perfect-knowledge and patch-based switching filters.

All estimators consume a :class:`FrameSequence` of measurements and an
:class:`EstimatorConfig` holding image-level models: the mode library and
measurement model are defined over the whole image (``d = h * w``). Patch
estimators restrict them to each window.

Patch estimators advance every window from the previous frame's merged
estimate, so windows within a frame are independent of processing order.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .frames import FrameSequence
from .lds import GaussianBelief, LinearEvolution, MeasurementModel
from .patching import (
    PatchLayout,
    build_localizer,
    coupling_columns,
    grid_regions,
    merge_estimates,
    partition_windows,
    sliding_layout,
)
from .skf import ModeLibrary, ModeTransition, SwitchingBelief, skf_step

KINDS = ("full", "perfect", "wskf", "swskf")

#: Largest number of joint hypotheses the perfect-knowledge filter will enumerate.
MAX_JOINT_MODES = 256


@dataclass(frozen=True)
class EstimatorConfig:
    """Everything an estimator needs besides the measurements.

    Parameters
    ----------
    kind : {"full", "perfect", "wskf", "swskf"}
    library : ModeLibrary
        Image-level evolution models, one per mode.
    measurement : MeasurementModel
        Image-level ``H`` and ``R``.
    transition : ModeTransition, optional
        Mode prior; defaults to a sticky chain with ``p_stay``. For the
        perfect filter this is the per-region transition.
    window_side : int
        Window side for ``wskf``.
    r, alpha : int
        Locality radius and center size for ``swskf``.
    regions : list of index arrays, optional
        Mode regions for ``perfect``; defaults to image quarters.
    prior_mean, prior_variance
        Initial belief ``N(prior_mean, prior_variance * I)``.
    q_inflation : float
        Added to the diagonal of each window's ``Q`` to absorb the error of
        treating neighbor estimates as exact inputs.
    per_mode_input : bool
        Compute the neighbor input separately under each mode's coupling
        blocks instead of sharing mode 0's.
    """

    kind: str
    library: ModeLibrary
    measurement: MeasurementModel
    transition: ModeTransition | None = None
    p_stay: float = 0.95
    window_side: int | None = None
    r: int | None = None
    alpha: int | None = None
    regions: tuple | None = None
    prior_mean: float = 0.0
    prior_variance: float = 10.0
    q_inflation: float = 0.0
    per_mode_input: bool = False
    form: str = "joseph"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "wskf" and self.window_side is None:
            raise ValueError("wskf needs window_side")
        if self.kind == "swskf" and (self.r is None or self.alpha is None):
            raise ValueError("swskf needs r and alpha")
        if self.library.dim != self.measurement.state_dim:
            raise ValueError("library and measurement model disagree on state dimension")
        if self.transition is not None and self.transition.mode_count != self.library.mode_count:
            raise ValueError("transition size does not match the mode library")

    def mode_transition(self) -> ModeTransition:
        if self.transition is not None:
            return self.transition
        return ModeTransition.sticky(self.library.mode_count, self.p_stay)

    def prior(self, dim: int) -> GaussianBelief:
        return GaussianBelief.isotropic(dim, self.prior_variance, self.prior_mean)

    def layout(self, dims) -> PatchLayout:
        if self.kind == "wskf":
            return partition_windows(dims, self.window_side)
        if self.kind == "swskf":
            return sliding_layout(dims, self.r, self.alpha)
        raise ValueError(f"{self.kind} estimator has no patch layout")


@dataclass
class EstimationResult:
    """Estimated frames plus per-frame diagnostics.

    ``mode_posteriors`` has shape ``(frames, units, modes)`` where units are
    windows (patch estimators), regions (perfect filter) or 1 (full filter).
    """

    estimates: FrameSequence
    mode_posteriors: np.ndarray
    frame_seconds: np.ndarray
    log_likelihoods: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return float(self.frame_seconds.sum())

    @property
    def mode_map(self) -> np.ndarray:
        return self.mode_posteriors.argmax(axis=-1)


def _check_measurements(measurements: FrameSequence, config: EstimatorConfig) -> np.ndarray:
    ys = measurements.vectors()
    if ys.shape[1] != config.measurement.measurement_dim:
        raise ValueError(
            f"frames have {ys.shape[1]} pixels, measurement model expects "
            f"{config.measurement.measurement_dim}"
        )
    return ys


def _run_global(ys, dims, library, transition, measurement, config, initial_weights=None):
    l = library.mode_count
    state = SwitchingBelief.initial(config.prior(library.dim), l, initial_weights)
    T = len(ys)
    est = np.empty((T, library.dim))
    weights = np.empty((T, l))
    seconds = np.empty(T)
    loglik = np.empty(T)
    for n, y in enumerate(ys):
        t0 = time.perf_counter()
        state = skf_step(state, library, transition, measurement, y, form=config.form, step=n)
        seconds[n] = time.perf_counter() - t0
        est[n] = state.belief.mean
        weights[n] = state.weights
        loglik[n] = state.log_likelihood
    return FrameSequence.from_vectors(est, dims), weights, seconds, loglik


def run_full_skf(measurements: FrameSequence, config: EstimatorConfig) -> EstimationResult:
    """One switching filter over the whole image with ``l`` global modes."""
    ys = _check_measurements(measurements, config)
    est, weights, seconds, loglik = _run_global(
        ys, measurements.dims, config.library, config.mode_transition(),
        config.measurement, config,
    )
    return EstimationResult(est, weights[:, None, :], seconds, loglik)


def joint_library(library: ModeLibrary, regions) -> tuple[ModeLibrary, list[tuple[int, ...]]]:
    """Block-diagonal evolutions for every combination of per-region modes.

    Joint hypothesis ``(s_1, ..., s_K)`` uses ``A_{s_k}[R_k, R_k]`` and
    ``Q_{s_k}[R_k, R_k]`` on region ``k``; cross-region blocks are zero.
    Hypotheses are enumerated in lexicographic order, matching
    :meth:`ModeTransition.kron`.
    """
    d = library.dim
    combos = list(itertools.product(range(library.mode_count), repeat=len(regions)))
    evolutions = []
    for combo in combos:
        A = np.zeros((d, d))
        Q = np.zeros((d, d))
        for s, idx in zip(combo, regions):
            ix = np.ix_(idx, idx)
            A[ix] = library[s].A[ix]
            Q[ix] = library[s].Q[ix]
        evolutions.append(LinearEvolution(A, Q))
    return ModeLibrary(tuple(evolutions)), combos


def run_perfect_skf(measurements: FrameSequence, config: EstimatorConfig,
                    regions=None) -> EstimationResult:
    """Switching filter that knows the mode regions and tracks their joint mode.

    Each region switches independently between the ``l`` library modes, giving
    ``l**K`` joint hypotheses. Reported mode posteriors are per-region marginals.
    """
    ys = _check_measurements(measurements, config)
    if regions is None:
        regions = config.regions if config.regions is not None else grid_regions(measurements.dims)
    regions = [np.asarray(r, dtype=int) for r in regions]
    cover = np.zeros(config.library.dim, dtype=int)
    for idx in regions:
        np.add.at(cover, idx, 1)
    if (cover != 1).any():
        raise ValueError("regions must partition the image")
    l, K = config.library.mode_count, len(regions)
    if l**K > MAX_JOINT_MODES:
        raise ValueError(
            f"{l}**{K} = {l**K} joint modes exceeds the limit of {MAX_JOINT_MODES}; "
            "use the windowed filter (wskf) instead"
        )
    library, combos = joint_library(config.library, regions)
    per_region = config.mode_transition()
    transition = per_region
    for _ in range(K - 1):
        transition = transition.kron(per_region)
    est, weights, seconds, loglik = _run_global(
        ys, measurements.dims, library, transition, config.measurement, config
    )
    combos = np.asarray(combos)
    marginals = np.zeros((len(ys), K, l))
    for k in range(K):
        for s in range(l):
            marginals[:, k, s] = weights[:, combos[:, k] == s].sum(axis=1)
    return EstimationResult(est, marginals, seconds, loglik, {"joint_weights": weights})


class _Window:
    """Per-window models and state for the patch estimators."""

    def __init__(self, patch, layout, config: EstimatorConfig, transition):
        self.patch = patch
        self.localizer = build_localizer(config.measurement, patch)
        self.measurement = self.localizer.measurement_model()
        idx = patch.pixel_indices
        self.library = config.library.restrict(idx, config.q_inflation)
        self.transition = transition
        cols = coupling_columns(patch, layout)
        blocks = [ev.A[np.ix_(idx, cols)] for ev in config.library.evolutions]
        if not config.per_mode_input:
            blocks = blocks[:1]
        self.cols = cols
        self.blocks = [b for b in blocks] if any(b.any() for b in blocks) else None
        self.per_mode = config.per_mode_input
        prior = config.prior(config.library.dim)
        self.state = SwitchingBelief.initial(
            GaussianBelief(prior.mean[idx], prior.cov[np.ix_(idx, idx)]),
            config.library.mode_count,
        )

    def input(self, prev: np.ndarray):
        if self.blocks is None:
            return None
        x = prev[self.cols]
        if self.per_mode:
            return np.stack([b @ x for b in self.blocks])
        return self.blocks[0] @ x

    def step(self, y: np.ndarray, prev: np.ndarray, n: int, form: str) -> SwitchingBelief:
        self.state = skf_step(
            self.state, self.library, self.transition, self.measurement,
            self.localizer.localize(y), self.input(prev), form=form, step=n,
        )
        return self.state


def _run_patches(measurements: FrameSequence, config: EstimatorConfig) -> EstimationResult:
    ys = _check_measurements(measurements, config)
    layout = config.layout(measurements.dims)
    transition = config.mode_transition()
    windows = [_Window(p, layout, config, transition) for p in layout.patches]
    T, l = len(ys), config.library.mode_count
    est = np.empty((T, layout.n_pixels))
    weights = np.empty((T, len(windows), l))
    seconds = np.empty(T)
    loglik = np.empty(T)
    prev = config.prior(layout.n_pixels).mean
    for n, y in enumerate(ys):
        t0 = time.perf_counter()
        states = [w.step(y, prev, n, config.form) for w in windows]
        prev = merge_estimates([s.belief.mean for s in states], layout)
        seconds[n] = time.perf_counter() - t0
        est[n] = prev
        weights[n] = [s.weights for s in states]
        loglik[n] = sum(s.log_likelihood for s in states)
    return EstimationResult(
        FrameSequence.from_vectors(est, measurements.dims), weights, seconds, loglik,
        {"layout": layout},
    )


def run_wskf(measurements: FrameSequence, config: EstimatorConfig) -> EstimationResult:
    """Windowed SKF: one switching filter per disjoint window."""
    if config.kind != "wskf":
        raise ValueError(f"run_wskf needs kind 'wskf', got {config.kind!r}")
    return _run_patches(measurements, config)


def run_swskf(measurements: FrameSequence, config: EstimatorConfig) -> EstimationResult:
    """Sliding-window SKF: overlapping windows, each reporting its center."""
    if config.kind != "swskf":
        raise ValueError(f"run_swskf needs kind 'swskf', got {config.kind!r}")
    return _run_patches(measurements, config)


def run_estimator(measurements: FrameSequence, config: EstimatorConfig) -> EstimationResult:
    runner = {
        "full": run_full_skf,
        "perfect": run_perfect_skf,
        "wskf": run_wskf,
        "swskf": run_swskf,
    }[config.kind]
    return runner(measurements, config)


def flop_estimate(kind: str, d: int, K: int = 1, l: int = 1, r_w: int | None = None,
                  K_prime: int | None = None) -> float:
    """Dominant per-frame cost term of each estimator.

    ``d`` is the image pixel count, ``K`` the number of mode regions (perfect)
    or disjoint windows (wskf), ``l`` the modes per region, ``r_w`` the pixels
    per window and ``K_prime`` the number of sliding windows. The perfect
    filter enumerates ``l**K`` joint modes.
    """
    for name, value in (("d", d), ("K", K), ("l", l)):
        if value < 1:
            raise ValueError(f"{name} must be a positive integer")
    if kind == "perfect":
        return float(l**K) * float(d) ** 3
    if kind == "full":
        return float(l) * float(d) ** 3
    if kind == "wskf":
        if r_w is None:
            raise ValueError("wskf cost needs r_w")
        return float(K) * l * float(r_w) ** 3
    if kind == "swskf":
        if r_w is None or K_prime is None:
            raise ValueError("swskf cost needs r_w and K_prime")
        return float(K_prime) * l * float(r_w) ** 3
    raise ValueError(f"unknown estimator kind {kind!r}")
