"""Switching Kalman filter with first-order GPB collapsing.

Each step branches the current (single Gaussian) belief into one Kalman
update per mode, reweights the modes with their innovation likelihoods, and
moment-matches the mixture back to one Gaussian. Memory per filter is
therefore independent of the mode count, and the cost per step is ``l`` Kalman
steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lds import (
    DimensionError,
    GaussianBelief,
    LinearEvolution,
    MeasurementModel,
    measurement_update,
    symmetrize,
    time_update,
)


def logsumexp(a: np.ndarray) -> float:
    top = a.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(a - top).sum()))


class ModeDegeneracyError(ValueError):
    """Every mode hypothesis has zero posterior probability."""

    def __init__(self, step: int | None):
        self.step = step
        where = "" if step is None else f" at frame {step}"
        super().__init__(f"all mode likelihoods are zero{where}")


@dataclass(frozen=True)
class ModeLibrary:
    """Ordered evolution models, one per switching mode."""

    evolutions: tuple[LinearEvolution, ...]

    def __post_init__(self):
        evolutions = tuple(self.evolutions)
        if not evolutions:
            raise ValueError("a mode library needs at least one mode")
        dims = {ev.dim for ev in evolutions}
        if len(dims) != 1:
            raise DimensionError("evolutions", "one shared state dimension", sorted(dims))
        object.__setattr__(self, "evolutions", evolutions)

    @property
    def mode_count(self) -> int:
        return len(self.evolutions)

    @property
    def dim(self) -> int:
        return self.evolutions[0].dim

    def __len__(self) -> int:
        return self.mode_count

    def __getitem__(self, j: int) -> LinearEvolution:
        return self.evolutions[j]

    @classmethod
    def random_walks(cls, dim: int, variances: Sequence[float]) -> "ModeLibrary":
        """``A = I``, ``Q_j = q_j I`` for each variance ``q_j``."""
        return cls(tuple(LinearEvolution.random_walk(dim, q) for q in variances))

    def restrict(self, indices, q_inflation: float = 0.0) -> "ModeLibrary":
        """Self-coupling blocks ``A[U, U]``, ``Q[U, U]`` for a pixel subset ``U``."""
        ix = np.ix_(indices, indices)
        extra = q_inflation * np.eye(len(indices))
        return ModeLibrary(
            tuple(LinearEvolution(ev.A[ix], ev.Q[ix] + extra) for ev in self.evolutions)
        )

    def permuted(self, order: Sequence[int]) -> "ModeLibrary":
        return ModeLibrary(tuple(self.evolutions[j] for j in order))


@dataclass(frozen=True)
class ModeTransition:
    """Row-stochastic mode transition matrix, ``matrix[i, j] = P(j | i)``."""

    matrix: np.ndarray

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise DimensionError("transition", "(l, l)", T.shape)
        if (T < 0).any() or (T > 1).any():
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.abs(T.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")
        object.__setattr__(self, "matrix", T)

    @property
    def mode_count(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def sticky(cls, mode_count: int, p_stay: float = 0.95) -> "ModeTransition":
        """Stay with probability ``p_stay``, else move to any other mode uniformly."""
        if mode_count == 1:
            return cls(np.ones((1, 1)))
        if not 0.0 <= p_stay <= 1.0:
            raise ValueError(f"p_stay must lie in [0, 1], got {p_stay}")
        off = (1.0 - p_stay) / (mode_count - 1)
        T = np.full((mode_count, mode_count), off)
        np.fill_diagonal(T, p_stay)
        return cls(T)

    @classmethod
    def uniform(cls, mode_count: int) -> "ModeTransition":
        return cls(np.full((mode_count, mode_count), 1.0 / mode_count))

    def kron(self, other: "ModeTransition") -> "ModeTransition":
        """Transition of two independent chains, joint index ``i * l_other + j``."""
        return ModeTransition(np.kron(self.matrix, other.matrix))

    def permuted(self, order: Sequence[int]) -> "ModeTransition":
        order = np.asarray(order)
        return ModeTransition(self.matrix[np.ix_(order, order)])


@dataclass(frozen=True)
class SwitchingBelief:
    """State of one switching filter after a step.

    ``log_likelihood`` is the predictive log-density of the last measurement
    under the mode mixture (0 before the first step).
    """

    weights: np.ndarray
    belief: GaussianBelief
    last_mode_map: int = field(default=-1)
    log_likelihood: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mode weights must be a probability vector")
        object.__setattr__(self, "weights", w)
        if self.last_mode_map < 0:
            object.__setattr__(self, "last_mode_map", int(np.argmax(w)))

    @property
    def mode_count(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def initial(cls, belief: GaussianBelief, mode_count: int, weights=None) -> "SwitchingBelief":
        if weights is None:
            weights = np.full(mode_count, 1.0 / mode_count)
        return cls(np.asarray(weights, dtype=float), belief)


def mode_posterior(weights, transition: ModeTransition, log_likelihoods, *, step=None) -> np.ndarray:
    """Bayes update of mode probabilities, ``w'_j ∝ (T^T w)_j exp(λ_j)``.

    Normalization happens in the log domain, so very unequal likelihoods give
    tiny but nonzero weights instead of underflowing to zero.
    """
    w = np.asarray(weights, dtype=float)
    lam = np.asarray(log_likelihoods, dtype=float)
    l = transition.mode_count
    if w.shape != (l,):
        raise DimensionError("weights", (l,), w.shape)
    if lam.shape != (l,):
        raise DimensionError("log_likelihoods", (l,), lam.shape)
    with np.errstate(divide="ignore"):
        log_post = np.log(transition.matrix.T @ w) + lam
    norm = logsumexp(log_post)
    if not np.isfinite(norm):
        raise ModeDegeneracyError(step)
    post = np.exp(log_post - norm)
    return post / post.sum()


def collapse(weights, beliefs: Sequence[GaussianBelief]) -> GaussianBelief:
    """Moment-match a Gaussian mixture to a single Gaussian.

    ``mean = Σ w_j m_j``, ``cov = Σ w_j (P_j + (m_j - mean)(m_j - mean)^T)``.
    """
    w = np.asarray(weights, dtype=float)
    if len(beliefs) != w.shape[0]:
        raise DimensionError("beliefs", (w.shape[0],), (len(beliefs),))
    mean = sum(wj * b.mean for wj, b in zip(w, beliefs))
    cov = np.zeros_like(beliefs[0].cov)
    for wj, b in zip(w, beliefs):
        if wj == 0.0:
            continue
        delta = b.mean - mean
        cov += wj * (b.cov + np.outer(delta, delta))
    return GaussianBelief(mean, symmetrize(cov))


def skf_step(
    state: SwitchingBelief,
    library: ModeLibrary,
    transition: ModeTransition,
    measurement: MeasurementModel,
    y,
    input=None,
    *,
    form: str = "joseph",
    step: int | None = None,
) -> SwitchingBelief:
    """Advance a switching filter by one measurement.

    Parameters
    ----------
    state : SwitchingBelief
        Collapsed belief and mode weights after the previous step.
    library, transition : ModeLibrary, ModeTransition
        Candidate evolutions and the Markov prior over modes.
    measurement : MeasurementModel
        Shared by all modes.
    y : array_like
        Current measurement.
    input : array_like, optional
        Known additive offset to the predicted mean (neighbor coupling). A
        vector of length ``d`` is applied under every mode; an ``(l, d)`` array
        gives one offset per mode.
    """
    l = library.mode_count
    if transition.mode_count != l or state.mode_count != l:
        raise DimensionError("transition/state", (l,), (transition.mode_count, state.mode_count))
    d = state.belief.dim
    if input is not None:
        input = np.asarray(input, dtype=float)
        if input.shape not in ((d,), (l, d)):
            raise DimensionError("input", f"({d},) or ({l}, {d})", input.shape)

    posteriors, log_liks = [], np.empty(l)
    for j, evolution in enumerate(library.evolutions):
        pred = time_update(state.belief, evolution)
        if input is not None:
            shift = input if input.ndim == 1 else input[j]
            pred = GaussianBelief(pred.mean + shift, pred.cov)
        post, log_liks[j] = measurement_update(pred, measurement, y, form=form, step=step)
        posteriors.append(post)

    weights = mode_posterior(state.weights, transition, log_liks, step=step)
    with np.errstate(divide="ignore"):
        predictive = float(logsumexp(np.log(transition.matrix.T @ state.weights) + log_liks))
    belief = posteriors[0] if l == 1 else collapse(weights, posteriors)
    return SwitchingBelief(weights, belief, int(np.argmax(weights)), predictive)
