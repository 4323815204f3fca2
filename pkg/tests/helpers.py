"""Shared generators and brute-force oracles for the test suite."""

import numpy as np
from scipy.stats import multivariate_normal

from patchskf.lds import GaussianBelief, LinearEvolution, MeasurementModel


def random_spd(rng, d, floor=0.1):
    X = rng.normal(size=(d, d))
    return X @ X.T / d + floor * np.eye(d)


def random_lds(rng, d, m, T):
    """Random well-conditioned LDS plus a sampled measurement sequence."""
    A = rng.normal(size=(d, d))
    A *= 0.95 / max(1.0, np.abs(np.linalg.eigvals(A)).max())
    evolution = LinearEvolution(A, random_spd(rng, d))
    measurement = MeasurementModel(rng.normal(size=(m, d)), random_spd(rng, m))
    x0 = GaussianBelief(rng.normal(size=d), random_spd(rng, d, floor=0.5))
    x = rng.multivariate_normal(x0.mean, x0.cov)
    ys = []
    for _ in range(T):
        x = A @ x + rng.multivariate_normal(np.zeros(d), evolution.Q)
        ys.append(measurement.H @ x + rng.multivariate_normal(np.zeros(m), measurement.R))
    return x0, evolution, measurement, ys


def joint_log_likelihood(x0, evolution, measurement, ys):
    """log p(y_1..y_T) from the explicit joint Gaussian of all measurements."""
    T, d = len(ys), x0.dim
    A, Q, H, R = evolution.A, evolution.Q, measurement.H, measurement.R
    # x_n = A^n x_0 + sum_k A^{n-k} v_k, so cov(x_i, x_j) is built term by term
    powers = [np.linalg.matrix_power(A, k) for k in range(T + 1)]
    means, covx = [], {}
    for i in range(1, T + 1):
        means.append(H @ powers[i] @ x0.mean)
        for j in range(1, T + 1):
            c = powers[i] @ x0.cov @ powers[j].T
            for k in range(1, min(i, j) + 1):
                c = c + powers[i - k] @ Q @ powers[j - k].T
            covx[i, j] = c
    m = H.shape[0]
    S = np.zeros((T * m, T * m))
    for i in range(1, T + 1):
        for j in range(1, T + 1):
            blk = H @ covx[i, j] @ H.T
            if i == j:
                blk = blk + R
            S[(i - 1) * m:i * m, (j - 1) * m:j * m] = blk
    return float(multivariate_normal(np.concatenate(means), S).logpdf(np.concatenate(ys)))
