"""Brute-force reference computations, independent of the library internals.

Everything here is written with plain Python loops and explicit formulas so
it can serve as an oracle for the vectorized, log-space implementation.
"""

import math

import numpy as np


def brute_entry_probs(gamma, delta):
    gd = [g * d for g, d in zip(gamma, delta)]
    total = sum(gd)
    beta1 = math.exp(-total)
    if total == 0:
        return [beta1] + [0.0] * len(gd)
    return [beta1] + [(1 - beta1) * x / total for x in gd]


def _hazard(lam, sig, dist, effort, j, k, l, m):
    return lam[j, k] * math.exp(-dist[j, m] ** 2 / (2 * sig[j, k] ** 2)) * effort[j, k, l]


def _occasion_prob(omega_i, lam, sig, effort, dist, k, l, m):
    """Probability of the observed outcome in one secondary, alive case."""
    J = effort.shape[0]
    E = sum(_hazard(lam, sig, dist, effort, j, k, l, m) for j in range(J))
    j_obs = omega_i[k, l]
    if j_obs < 0:
        return math.exp(-E)
    if E == 0.0:
        return 0.0
    e_j = _hazard(lam, sig, dist, effort, int(j_obs), k, l, m)
    return -math.expm1(-E) * e_j / E


def brute_history_prob(omega_i, lam, sig, effort, dist, beta, phi_pow, m):
    """Pr(history | activity center m) by enumerating entry and exit paths."""
    K, L = omega_i.shape
    if K == 1:
        prob = 1.0
        for l in range(L):
            prob *= _occasion_prob(omega_i, lam, sig, effort, dist, 0, l, m)
        return prob
    total = 0.0
    for entry in range(K):
        for last in range(entry, K):
            weight = beta[entry]
            for k in range(entry, last):
                weight *= phi_pow[k]
            if last < K - 1:
                weight *= 1.0 - phi_pow[last]
            emission = 1.0
            valid = True
            for k in range(K):
                alive = entry <= k <= last
                for l in range(L):
                    if alive:
                        emission *= _occasion_prob(omega_i, lam, sig, effort, dist, k, l, m)
                    elif omega_i[k, l] >= 0:
                        valid = False
                        break
                if not valid:
                    break
            if valid:
                total += weight * emission
    return total


def brute_fields(theta, J, K, M):
    """Intercept-only natural fields from a 5- (or 3-) element working vector."""
    lam = np.full((J, K), math.exp(theta[0]))
    sig = np.full((J, K), math.exp(theta[1]))
    if K > 1:
        gamma = np.full(K - 1, math.exp(theta[2]))
        phi = np.full(K - 1, 1.0 / (1.0 + math.exp(-theta[3])))
        D = np.full(M, math.exp(theta[4]))
    else:
        gamma = np.zeros(0)
        phi = np.zeros(0)
        D = np.full(M, math.exp(theta[2]))
    return lam, sig, gamma, phi, D


def brute_total_loglik(data, theta):
    """Poisson SCR log-likelihood with plain loops, intercept-only models."""
    J = data.traps.n_traps
    K = data.design.n_primaries
    L = data.design.max_secondaries
    M = data.mesh.n_points
    lam, sig, gamma, phi, D = brute_fields(theta, J, K, M)
    delta = data.design.delta
    if K > 1:
        beta = brute_entry_probs(gamma, delta)
        phi_pow = [phi[k] ** delta[k] for k in range(K - 1)]
    else:
        beta, phi_pow = [1.0], []
    effort = data.traps.effort
    dist = data.distances
    areas = data.mesh.areas

    empty = np.full((K, L), -1, dtype=int)
    ll = 0.0
    for m in range(M):
        p_never = brute_history_prob(empty, lam, sig, effort, dist, beta, phi_pow, m)
        ll -= areas[m] * D[m] * (1.0 - p_never)
    for i in range(data.histories.n_individuals):
        inner = 0.0
        for m in range(M):
            inner += areas[m] * D[m] * brute_history_prob(
                data.histories.omega[i], lam, sig, effort, dist, beta, phi_pow, m)
        ll += math.log(inner)
    return ll
