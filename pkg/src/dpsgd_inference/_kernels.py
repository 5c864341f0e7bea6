"""Compiled inner loops for the stochastic-gradient recurrences.

The kernel advances theta^(t) = theta^(t-1) - eta_t * (g_t + noise_t) and
maintains the streaming aggregates needed for averaging and for the
partial-sum scaling matrix:

  S_t  = sum_{s<=t} theta^(s)         (Kahan-compensated)
  G1   = sum_t S_t S_t'               (Kahan-compensated)
  g2   = sum_t t * S_t                (Kahan-compensated)
  g3   = sum_t t^2                    (exact, int64)

Compensated summation keeps the aggregates accurate across T ~ n^2 steps;
fastmath stays off so the compensation terms are not optimized away.
"""

import numpy as np
from numba import njit

MODEL_MEAN = 0
MODEL_LINEAR = 1
MODEL_LOGISTIC = 2

STATUS_OK = 0
STATUS_DIVERGED = 1


@njit(cache=True)
def dpsgd_loop(kind, X, y, idx, noise, eta, alpha, sigma1, tau, theta0, guard_sq):
    """Run T steps; returns (status, bad_step, theta_last, S, G1, g2, g3).

    ``idx`` is the (T, m) matrix of batch indices, ``noise`` the (T, p)
    standard-normal draws (unused rows allowed when sigma1 == 0), ``tau`` the
    per-record clip threshold (0 disables clipping), ``guard_sq`` the squared
    divergence bound on ||theta||.
    """
    T, m = idx.shape
    p = theta0.shape[0]
    theta = theta0.copy()
    g = np.zeros(p)
    grad_i = np.zeros(p)
    S = np.zeros(p)
    cS = np.zeros(p)
    G1 = np.zeros((p, p))
    cG1 = np.zeros((p, p))
    g2 = np.zeros(p)
    cg2 = np.zeros(p)
    g3 = np.int64(0)
    inv_m = 1.0 / m

    for t in range(1, T + 1):
        eta_t = eta * t ** (-alpha)
        for j in range(p):
            g[j] = 0.0
        for b in range(m):
            i = idx[t - 1, b]
            if kind == MODEL_MEAN:
                for j in range(p):
                    grad_i[j] = 2.0 * (theta[j] - X[i, j])
            elif kind == MODEL_LINEAR:
                dot = 0.0
                for j in range(p):
                    dot += X[i, j] * theta[j]
                r = y[i] - dot
                for j in range(p):
                    grad_i[j] = -r * X[i, j]
            else:
                dot = 0.0
                for j in range(p):
                    dot += X[i, j] * theta[j]
                s = 1.0 / (1.0 + np.exp(-dot))
                for j in range(p):
                    grad_i[j] = (s - y[i]) * X[i, j]
            if tau > 0.0:
                nrm = 0.0
                for j in range(p):
                    nrm += grad_i[j] * grad_i[j]
                nrm = np.sqrt(nrm)
                if nrm > tau:
                    scale = tau / nrm
                    for j in range(p):
                        grad_i[j] *= scale
            for j in range(p):
                g[j] += grad_i[j]

        for j in range(p):
            step = g[j] * inv_m
            if sigma1 > 0.0:
                step += sigma1 * noise[t - 1, j]
            theta[j] -= eta_t * step

        norm_sq = 0.0
        for j in range(p):
            norm_sq += theta[j] * theta[j]
        if not np.isfinite(norm_sq) or norm_sq > guard_sq:
            return STATUS_DIVERGED, t, theta, S, G1, g2, g3

        for j in range(p):
            yk = theta[j] - cS[j]
            tk = S[j] + yk
            cS[j] = (tk - S[j]) - yk
            S[j] = tk
        for a in range(p):
            Sa = S[a]
            for b2 in range(p):
                v = Sa * S[b2]
                yk = v - cG1[a, b2]
                tk = G1[a, b2] + yk
                cG1[a, b2] = (tk - G1[a, b2]) - yk
                G1[a, b2] = tk
            v = t * Sa
            yk = v - cg2[a]
            tk = g2[a] + yk
            cg2[a] = (tk - g2[a]) - yk
            g2[a] = tk
        g3 += t * t

    return STATUS_OK, T, theta, S, G1, g2, g3
