"""Linear-Gaussian state-space primitives.

Beliefs, evolution and measurement models, the two Kalman recursions and a
dense batch solver used as an independent check on the recursion.

Conventions
-----------
- States are 1-D arrays of length ``d``; covariances are ``(d, d)`` arrays.
- Scalars are accepted anywhere a vector/matrix is expected and promoted to
  length-1 arrays, which keeps scalar worked examples short.
- Every returned covariance is symmetrized: ``P <- 0.5 * (P + P^T)``.
- SPD solves always go through a Cholesky factor, with one jitter retry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

LOG_2PI = float(np.log(2.0 * np.pi))

#: Relative diagonal jitter added once when a Cholesky factorization fails.
JITTER = 1e-10


class DimensionError(ValueError):
    """Raised when operand shapes do not line up."""

    def __init__(self, operand: str, expected, got):
        self.operand = operand
        self.expected = expected
        self.got = got
        super().__init__(f"{operand}: expected shape {expected}, got {got}")


class SingularInnovationError(np.linalg.LinAlgError):
    """The innovation covariance could not be factorized, even with jitter."""

    def __init__(self, step: int | None, condition: float):
        self.step = step
        self.condition = condition
        where = "at unknown step" if step is None else f"at frame {step}"
        super().__init__(
            f"innovation covariance is numerically singular {where} "
            f"(condition estimate {condition:.3e})"
        )


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(name, "(d,)", arr.shape)
    return arr


def _as_matrix(value, name: str, square: bool = True) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or (square and arr.shape[0] != arr.shape[1]):
        raise DimensionError(name, "(d, d)" if square else "(m, d)", arr.shape)
    return arr


def _is_diagonal(matrix: np.ndarray) -> bool:
    off = matrix.copy()
    np.fill_diagonal(off, 0.0)
    return not off.any()


def _is_identity(matrix: np.ndarray) -> bool:
    return matrix.shape[0] == matrix.shape[1] and np.array_equal(
        matrix, np.eye(matrix.shape[0])
    )


def _min_eigenvalue(matrix: np.ndarray) -> float:
    if _is_diagonal(matrix):
        return float(np.diagonal(matrix).min())
    return float(np.linalg.eigvalsh(matrix)[0])


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian state estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = _as_matrix(self.cov, "cov")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionError("cov", (mean.shape[0], mean.shape[0]), cov.shape)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def isotropic(cls, dim: int, variance: float = 10.0, mean=0.0) -> "GaussianBelief":
        """Belief with a constant (or given) mean and ``variance * I`` covariance.

        The defaults (zero mean, ``10 I``) are the prior used when none is given.
        """
        m = np.broadcast_to(np.asarray(mean, dtype=float), (dim,)).copy()
        return cls(m, variance * np.eye(dim))

    def check(self, sym_tol: float = 1e-10, psd_tol: float = 1e-8) -> None:
        """Raise ``ValueError`` if the covariance is asymmetric or indefinite.

        Not run on construction: an eigen-decomposition per step would
        dominate the cost of large filters.
        """
        asym = np.abs(self.cov - self.cov.T).max(initial=0.0)
        if asym > sym_tol:
            raise ValueError(f"covariance asymmetric by {asym:.3e}")
        eig = np.linalg.eigvalsh(self.cov)
        if eig[0] < -psd_tol * max(eig[-1], 0.0) - 1e-300:
            raise ValueError(f"covariance not PSD (min eigenvalue {eig[0]:.3e})")


@dataclass(frozen=True)
class LinearEvolution:
    """State evolution ``x_n = A x_{n-1} + v``, ``v ~ N(0, Q)``."""

    A: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        Q = _as_matrix(self.Q, "Q")
        if Q.shape != A.shape:
            raise DimensionError("Q", A.shape, Q.shape)
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise ValueError("Q must be symmetric")
        if _min_eigenvalue(Q) < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be positive semidefinite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @cached_property
    def a_is_identity(self) -> bool:
        return _is_identity(self.A)

    @classmethod
    def random_walk(cls, dim: int, variance: float) -> "LinearEvolution":
        return cls(np.eye(dim), variance * np.eye(dim))


@dataclass(frozen=True)
class MeasurementModel:
    """Measurement ``y = H x + w``, ``w ~ N(0, R)`` with ``R`` strictly PD."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = _as_matrix(self.H, "H", square=False)
        R = _as_matrix(self.R, "R")
        if R.shape[0] != H.shape[0]:
            raise DimensionError("R", (H.shape[0], H.shape[0]), R.shape)
        if not np.allclose(R, R.T, rtol=0.0, atol=1e-12 * np.abs(R).max()):
            raise ValueError("R must be symmetric")
        if _min_eigenvalue(R) <= 0.0:
            raise ValueError("R must be strictly positive definite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    @property
    def state_dim(self) -> int:
        return self.H.shape[1]

    @property
    def measurement_dim(self) -> int:
        return self.H.shape[0]

    @cached_property
    def h_is_identity(self) -> bool:
        return _is_identity(self.H)

    @cached_property
    def r_is_diagonal(self) -> bool:
        return _is_diagonal(self.R)

    @cached_property
    def h_condition(self) -> float:
        if self.h_is_identity:
            return 1.0
        if self.H.shape[0] != self.H.shape[1]:
            return float("inf")
        return float(np.linalg.cond(self.H))

    @cached_property
    def h_inverse(self) -> np.ndarray:
        if self.h_is_identity:
            return self.H
        return np.linalg.inv(self.H)

    @classmethod
    def identity(cls, dim: int, noise_variance: float) -> "MeasurementModel":
        return cls(np.eye(dim), noise_variance * np.eye(dim))


def cholesky_factor(B: np.ndarray, step: int | None = None) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    On failure adds ``JITTER * trace(B)/d * I`` once and retries; a second
    failure raises :class:`SingularInnovationError`.
    """
    if not np.isfinite(B).all():
        raise SingularInnovationError(step, float("inf"))
    L, info = lapack.dpotrf(B, lower=1, clean=1)
    if info == 0:
        return L
    d = B.shape[0]
    jitter = JITTER * abs(np.trace(B)) / d
    L, info = lapack.dpotrf(B + jitter * np.eye(d), lower=1, clean=1)
    if info == 0:
        return L
    raise SingularInnovationError(step, float(np.linalg.cond(B)))


def cholesky_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``B x = rhs`` given the lower Cholesky factor ``L`` of ``B``."""
    x, info = lapack.dpotrs(L, rhs, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotrs failed with info={info}")
    return x


def gaussian_log_density(e: np.ndarray, L: np.ndarray) -> float:
    """``log N(e; 0, B)`` given the lower Cholesky factor ``L`` of ``B``."""
    alpha = cholesky_solve(L, e)
    log_det = 2.0 * np.log(np.diagonal(L)).sum()
    return -0.5 * (float(e @ alpha) + log_det + e.shape[0] * LOG_2PI)


def time_update(belief: GaussianBelief, model: LinearEvolution) -> GaussianBelief:
    """Predict one step ahead: ``(A x, A P A^T + Q)``."""
    if model.dim != belief.dim:
        raise DimensionError("evolution.A", (belief.dim, belief.dim), model.A.shape)
    if model.a_is_identity:
        return GaussianBelief(belief.mean.copy(), symmetrize(belief.cov + model.Q))
    A = model.A
    return GaussianBelief(A @ belief.mean, symmetrize(A @ belief.cov @ A.T + model.Q))


def measurement_update(
    pred: GaussianBelief,
    model: MeasurementModel,
    y,
    *,
    form: str = "joseph",
    step: int | None = None,
) -> tuple[GaussianBelief, float]:
    """Condition a predicted belief on one measurement.

    Parameters
    ----------
    pred : GaussianBelief
        Predicted belief ``(x_{n|n-1}, P_{n|n-1})``.
    model : MeasurementModel
        ``H`` and ``R``.
    y : array_like
        Measurement vector.
    form : {"joseph", "standard"}
        Posterior covariance formula. ``"standard"`` is ``(I - K H) P`` and
        exists for comparison only.
    step : int, optional
        Frame index, reported if the innovation covariance is singular.

    Returns
    -------
    posterior : GaussianBelief
    log_likelihood : float
        ``log N(e; 0, B)`` for innovation ``e`` and its covariance ``B``.
    """
    y = _as_vector(y, "y")
    if model.state_dim != pred.dim:
        raise DimensionError("measurement.H", (model.measurement_dim, pred.dim), model.H.shape)
    if y.shape[0] != model.measurement_dim:
        raise DimensionError("y", (model.measurement_dim,), y.shape)

    x, P, H, R = pred.mean, pred.cov, model.H, model.R
    if model.h_is_identity:
        e = y - x
        HP = P
        B = P + R
    else:
        e = y - H @ x
        HP = H @ P
        B = HP @ H.T + R
    L = cholesky_factor(symmetrize(B), step)
    # K^T = B^{-1} H P, since B and P are symmetric
    K = cholesky_solve(L, HP).T
    mean = x + K @ e

    d = pred.dim
    if form == "joseph":
        M = np.eye(d) - (K if model.h_is_identity else K @ H)
        if model.r_is_diagonal:
            KRK = (K * np.diagonal(R)) @ K.T
        else:
            KRK = K @ R @ K.T
        cov = M @ P @ M.T + KRK
    elif form == "standard":
        cov = P - K @ HP
    else:
        raise ValueError(f"unknown covariance form {form!r}")

    return GaussianBelief(mean, symmetrize(cov)), gaussian_log_density(e, L)


def kf_step(
    belief: GaussianBelief,
    evolution: LinearEvolution,
    measurement: MeasurementModel,
    y,
    *,
    form: str = "joseph",
    step: int | None = None,
) -> tuple[GaussianBelief, float]:
    """One Kalman filter step: time update followed by measurement update."""
    return measurement_update(
        time_update(belief, evolution), measurement, y, form=form, step=step
    )


def batch_map_oracle(
    x0: GaussianBelief,
    evolutions: Sequence[LinearEvolution] | LinearEvolution,
    measurement: MeasurementModel,
    ys: Sequence,
) -> list[np.ndarray]:
    """Filtered means computed without recursion, for small problems only.

    For every prefix ``y_1..y_n`` the joint MAP of ``x_0..x_n`` is found by
    whitening all prior, process and measurement residuals into one stacked
    least-squares system and solving its normal equations. The ``x_n`` block of
    that solution is the filtered mean at step ``n``.

    ``evolutions`` is either one model used at every step or one per step.
    Process covariances must be nonsingular.
    """
    ys = [_as_vector(y, "y") for y in ys]
    T = len(ys)
    if isinstance(evolutions, LinearEvolution):
        evolutions = [evolutions] * T
    if len(evolutions) != T:
        raise DimensionError("evolutions", (T,), (len(evolutions),))
    d = x0.dim

    def whitener(cov, name):
        try:
            return sla.solve_triangular(
                np.linalg.cholesky(cov), np.eye(cov.shape[0]), lower=True
            )
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"{name} is singular; cannot whiten") from None

    W0 = whitener(x0.cov, "prior covariance")
    WR = whitener(measurement.R, "R")
    WQ = [whitener(ev.Q, f"Q[{k}]") for k, ev in enumerate(evolutions)]

    means = []
    for n in range(1, T + 1):
        dim = (n + 1) * d
        rows, rhs = [], []
        block = np.zeros((d, dim))
        block[:, :d] = W0
        rows.append(block)
        rhs.append(W0 @ x0.mean)
        for k in range(1, n + 1):
            ev = evolutions[k - 1]
            block = np.zeros((d, dim))
            block[:, k * d:(k + 1) * d] = WQ[k - 1]
            block[:, (k - 1) * d:k * d] = -WQ[k - 1] @ ev.A
            rows.append(block)
            rhs.append(np.zeros(d))
            block = np.zeros((measurement.measurement_dim, dim))
            block[:, k * d:(k + 1) * d] = WR @ measurement.H
            rows.append(block)
            rhs.append(WR @ ys[k - 1])
        J = np.vstack(rows)
        b = np.concatenate(rhs)
        try:
            c = sla.cho_factor(J.T @ J, lower=True)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("normal equations are singular") from None
        z = sla.cho_solve(c, J.T @ b)
        means.append(z[n * d:])
    return means
