"""Open-population spatial capture-recapture log-likelihood.

Detection is hazard half-normal with competing-hazards allocation across
traps; availability follows a three-state process (before / during / after
detection availability) whose entry probabilities come from continuous-time
entry rates over irregular gaps; activity centers follow an inhomogeneous
Poisson process over the mesh.  Histories are marginalized over activity
centers and hidden states with a log-space forward recursion.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .dataset import SCRData
from .design import ModelSpec, ParamMap, build_param_map, expand_params
from .errors import NumericalError, ValidationError

_NEG_INF = -np.inf


@dataclass(frozen=True)
class DetectionField:
    """Detection parameters and geometry shared by every history.

    ``lam`` and ``sigma`` are (traps, primaries); ``effort`` is (traps,
    primaries, secondaries) survey counts; ``distances`` is (traps, mesh
    points) in meters, matching ``sigma``'s units.
    """

    lam: np.ndarray
    sigma: np.ndarray
    effort: np.ndarray
    distances: np.ndarray

    @property
    def shape(self):
        J, K, L = self.effort.shape
        return J, K, L, self.distances.shape[1]


@dataclass(frozen=True)
class StateModel:
    """Population dynamics over primary occasions.

    ``gamma`` (entry rates per year), ``phi`` (per-year survival
    probabilities, boundary values allowed), and ``delta`` (gap lengths in
    years) all have length K - 1.
    """

    gamma: np.ndarray
    phi: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        g, p, d = map(np.asarray, (self.gamma, self.phi, self.delta))
        if not (g.shape == p.shape == d.shape):
            raise ValidationError("gamma, phi, delta must have equal length K-1")
        if np.any(g < 0):
            raise ValidationError("entry rates must be nonnegative")
        if np.any((p < 0) | (p > 1)):
            raise ValidationError("survival probabilities must lie in [0, 1]")
        if np.any(d <= 0):
            raise ValidationError("gap durations must be positive")

    @property
    def n_primaries(self) -> int:
        return len(np.asarray(self.delta)) + 1

    @cached_property
    def beta(self) -> np.ndarray:
        return entry_probs(self.gamma, self.delta)

    @cached_property
    def phi_pow(self) -> np.ndarray:
        """Survival over each gap: per-year survival raised to the gap length."""
        return np.asarray(self.phi, dtype=float) ** np.asarray(self.delta, dtype=float)


@dataclass(frozen=True)
class DensitySurface:
    """Activity-center intensity (per km²) with per-point cell areas (km²)."""

    D: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        if self.D.shape != self.areas.shape:
            raise ValidationError("density and areas must align")
        if np.any(self.D < 0):
            raise ValidationError("density must be nonnegative")

    @property
    def expected_total(self) -> float:
        """Expected activity centers of ever-present individuals."""
        return float(np.sum(self.D * self.areas))


def encounter_rate(lam, sigma, r):
    """Hazard half-normal first-encounter rate ``lam * exp(-r²/(2 sigma²))``."""
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r = np.asarray(r, dtype=float)
    return lam * np.exp(-(r**2) / (2.0 * sigma**2))


def occasion_detection(m: int, k: int, l: int, det: DetectionField):
    """Detection probability and trap allocation for one mesh point/occasion.

    Returns ``(p, alloc)`` where ``p`` is the probability of being sighted at
    all during secondary ``(k, l)`` given an activity center at mesh point
    ``m``, and ``alloc[j]`` the conditional probability the sighting fell on
    trap ``j``.  With zero effort ``p`` is 0 and ``alloc`` is all zeros.
    """
    hazard = encounter_rate(det.lam[:, k], det.sigma[:, k], det.distances[:, m])
    weighted = hazard * det.effort[:, k, l]
    total = weighted.sum()
    p = -np.expm1(-total)
    alloc = weighted / total if total > 0 else np.zeros_like(weighted)
    return p, alloc


def entry_probs(gamma, delta) -> np.ndarray:
    """Per-primary entry probabilities from entry rates over irregular gaps.

    ``beta[0] = exp(-sum_k gamma[k] * delta[k])`` and the remaining mass is
    split across later primaries proportionally to ``gamma[k] * delta[k]`` for
    the preceding gap.  With all rates zero the split is defined as zero, so
    all mass stays on the first primary.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if gamma.shape != delta.shape:
        raise ValidationError("gamma and delta must have equal length")
    if np.any(gamma < 0) or np.any(delta <= 0):
        raise ValidationError("need gamma >= 0 and delta > 0")
    gd = gamma * delta
    total = gd.sum()
    beta1 = np.exp(-total)
    if total == 0.0:
        rest = np.zeros_like(gd)
    else:
        rest = (1.0 - beta1) * gd / total
    return np.concatenate([[beta1], rest])


def conditional_entries(beta: np.ndarray) -> np.ndarray:
    """Probability of entering at primary k+1 given not yet entered by k."""
    K = len(beta)
    remaining = 1.0 - np.cumsum(beta)[: K - 1]
    out = np.zeros(K - 1)
    for k in range(K - 1):
        if beta[k + 1] == 0.0:
            continue
        if remaining[k] < beta[k + 1] - 1e-9:
            raise NumericalError("entry probabilities exceed remaining mass")
        out[k] = min(beta[k + 1] / max(remaining[k], beta[k + 1]), 1.0)
    return out


def state_transitions(state: StateModel):
    """Initial distribution and per-gap transition matrices over (B, D, A).

    B = before availability, D = during (detectable), A = after.  Rows of
    each matrix sum to one.
    """
    beta = state.beta
    b = conditional_entries(beta)
    init = np.array([1.0 - beta[0], beta[0], 0.0])
    trans = np.zeros((state.n_primaries - 1, 3, 3))
    for k in range(state.n_primaries - 1):
        sp = state.phi_pow[k]
        trans[k] = [[1.0 - b[k], b[k], 0.0],
                    [0.0, sp, 1.0 - sp],
                    [0.0, 0.0, 1.0]]
    return init, trans


def _detection_cache(det: DetectionField):
    """Per-secondary total hazards and the no-detection emission baseline.

    Returns ``(E, base)`` where ``E[k, l]`` is the (M,) summed hazard and
    ``base[k]`` the (M,) log-probability of no detection during primary k.
    Padded secondaries have zero effort and drop out automatically.
    """
    J, K, L, M = det.shape
    E = np.zeros((K, L, M))
    for k in range(K):
        hazard = encounter_rate(det.lam[:, k, None], det.sigma[:, k, None], det.distances)
        for l in range(L):
            u = det.effort[:, k, l]
            if u.any():
                E[k, l] = u @ hazard
    base = -E.sum(axis=1)  # log prod_l exp(-E_kl)
    return E, base


def _log_first_sighting(det: DetectionField, E_kl: np.ndarray, k: int, l: int, j: int):
    """Log probability of a first sighting on trap j, all mesh points at once."""
    with np.errstate(divide="ignore", invalid="ignore"):
        log_e = np.log(det.lam[j, k]) - det.distances[j] ** 2 / (2.0 * det.sigma[j, k] ** 2)
        # log((1 - exp(-E)) / E), extended continuously by 0 at E = 0
        ratio = np.where(E_kl > 0, np.log(-np.expm1(-E_kl)) - np.log(E_kl), 0.0)
        return log_e + np.log(det.effort[j, k, l]) + ratio


def history_log_likelihood(omega: np.ndarray, det: DetectionField, state: StateModel | None,
                           cache=None) -> np.ndarray:
    """Log Pr(history | activity center) for a batch of capture histories.

    Parameters
    ----------
    omega : int array (n, K, L)
        Trap index per secondary occasion, -1 where not detected.
    det : DetectionField
    state : StateModel or None
        ``None`` is allowed only for a single primary occasion.
    cache : optional
        Result of a previous ``_detection_cache(det)`` to reuse.

    Returns
    -------
    (n, M) array of log probabilities, marginal over the hidden states.
    """
    n, K, L = omega.shape
    J, Kd, Ld, M = det.shape
    if (Kd, Ld) != (K, L):
        raise ValidationError("history shape does not match the detection field")
    E, base = cache if cache is not None else _detection_cache(det)

    # Emission of the "during" state: log of the product over secondaries of
    # first-sighting or no-sighting probabilities.
    em = np.broadcast_to(base, (n, K, M)).copy()
    for i, k, l in zip(*np.nonzero(omega >= 0)):
        j = omega[i, k, l]
        if det.effort[j, k, l] == 0:
            raise ValidationError(f"detection at trap {j} with zero effort in ({k}, {l})")
        em[i, k] += E[k, l] + _log_first_sighting(det, E[k, l], k, l, int(j))
    has_det = (omega >= 0).any(axis=2)

    if K == 1:
        return em[:, 0, :]
    if state is None:
        raise ValidationError("a state model is required with more than one primary")

    beta = state.beta
    b = conditional_entries(beta)
    with np.errstate(divide="ignore"):
        log_stay_b = np.log1p(-b)
        log_enter = np.log(b)
        log_surv = state.delta * np.log(state.phi)
        log_die = np.log1p(-np.exp(log_surv))
        log_init_b = np.log1p(-beta[0]) if beta[0] < 1.0 else _NEG_INF
        log_init_d = np.log(beta[0])

    # Forward pass over primaries; states B, D, A per (history, mesh point).
    aB = np.full((n, M), log_init_b)
    aB[has_det[:, 0]] = _NEG_INF  # B emits only "no detection"
    aD = log_init_d + em[:, 0, :]
    aA = np.full((n, M), _NEG_INF)
    for k in range(1, K):
        t = k - 1
        nB = aB + log_stay_b[t]
        nD = np.logaddexp(aB + log_enter[t], aD + log_surv[t]) + em[:, k, :]
        nA = np.logaddexp(aD + log_die[t], aA)
        blocked = has_det[:, k]
        nB[blocked] = _NEG_INF
        nA[blocked] = _NEG_INF
        aB, aD, aA = nB, nD, nA
    return np.logaddexp(np.logaddexp(aB, aD), aA)


def individual_loglik(omega_i: np.ndarray, m: int, det: DetectionField,
                      state: StateModel | None) -> float:
    """Probability of one individual's history given its activity center."""
    omega_i = np.asarray(omega_i)[None, :, :]
    logp = history_log_likelihood(omega_i, det, state)
    return float(np.exp(logp[0, m]))


def primary_weights(state: StateModel | None, n_primaries: int | None = None) -> np.ndarray:
    """Fraction of ever-present activity centers present in each primary.

    ``w[0] = beta[0]`` and ``w[k] = phi_pow[k-1] * w[k-1] + beta[k]``; the
    per-primary density surface is ``w[k] * D`` and with certain survival
    ``w[K-1]`` reaches 1.
    """
    if state is None:
        if n_primaries not in (None, 1):
            raise ValidationError("a state model is required with more than one primary")
        return np.array([1.0])
    beta = state.beta
    w = np.empty(state.n_primaries)
    w[0] = beta[0]
    for k in range(1, state.n_primaries):
        w[k] = state.phi_pow[k - 1] * w[k - 1] + beta[k]
    return w


def derived_density(state: StateModel | None, density: DensitySurface,
                    marked_fraction: float = 1.0):
    """Per-primary density surfaces and whole-population abundances.

    Returns ``(Dk, Nk)`` where ``Dk[k]`` is the density surface during
    primary ``k`` on the same scale as ``density.D`` (the marked population
    when D was fitted to marked histories) and ``Nk[k]`` the abundance
    ``sum(a * Dk)`` scaled by ``1 / marked_fraction``.
    """
    if not 0 < marked_fraction <= 1:
        raise ValidationError("marked_fraction must be in (0, 1]")
    w = primary_weights(state)
    Dk = w[:, None] * density.D[None, :]
    Nk = w * density.expected_total / marked_fraction
    return Dk, Nk


class Likelihood:
    """Evaluator binding a model specification to a formatted dataset.

    Collapses duplicate capture histories, precomputes trap-mesh distances,
    and exposes ``loglik(theta)`` for the optimizer.  The same instance maps
    working vectors to natural-scale fields via :meth:`expand`.
    """

    def __init__(self, spec: ModelSpec, data: SCRData):
        data.validate()
        self.spec = spec
        self.data = data
        self.pmap: ParamMap = build_param_map(spec, data.design_tables())
        om = data.histories.omega
        n = om.shape[0]
        K = data.design.n_primaries
        L = data.design.max_secondaries
        if n:
            flat = om.reshape(n, K * L)
            uniq, first_idx, counts = np.unique(flat, axis=0, return_index=True,
                                                return_counts=True)
            self._omega_u = uniq.reshape(-1, K, L)
            self._counts = counts.astype(float)
            self._rep_ids = tuple(data.histories.ids[i] for i in first_idx)
        else:
            self._omega_u = np.empty((0, K, L), dtype=om.dtype)
            self._counts = np.zeros(0)
            self._rep_ids = ()
        self._empty = np.full((1, K, L), -1, dtype=np.int64)

    @property
    def n_params(self) -> int:
        return self.pmap.n_params

    def expand(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return expand_params(theta, self.pmap)

    def detection(self, fields: dict[str, np.ndarray]) -> DetectionField:
        return DetectionField(lam=fields["lambda"], sigma=fields["sigma"],
                              effort=self.data.traps.effort, distances=self.data.distances)

    def state(self, fields: dict[str, np.ndarray]) -> StateModel | None:
        if self.data.design.n_primaries == 1:
            return None
        return StateModel(gamma=fields["gamma"], phi=fields["phi"],
                          delta=self.data.design.delta)

    def density(self, fields: dict[str, np.ndarray]) -> DensitySurface:
        return DensitySurface(D=fields["D"], areas=self.data.mesh.areas)

    def loglik(self, theta: np.ndarray) -> float:
        """Poisson point-process log-likelihood of the observed histories.

        The additive constant ``-log n!`` is omitted.  Raises
        :class:`NumericalError` when a detected individual's history has zero
        probability everywhere on the mesh.
        """
        fields = self.expand(theta)
        det = self.detection(fields)
        state = self.state(fields)
        density = self.density(fields)

        cache = _detection_cache(det)
        log_nodet = history_log_likelihood(self._empty, det, state, cache=cache)[0]
        p_dot = -np.expm1(log_nodet)
        a_d = density.areas * density.D
        ll = -float(np.dot(a_d, p_dot))

        if len(self._counts):
            logp = history_log_likelihood(self._omega_u, det, state, cache=cache)
            with np.errstate(divide="ignore"):
                inner = logsumexp(np.log(a_d)[None, :] + logp, axis=1)
            bad = ~np.isfinite(inner)
            if np.any(bad):
                who = self._rep_ids[int(np.flatnonzero(bad)[0])]
                raise NumericalError(
                    f"history of individual {who!r} has zero likelihood on the whole mesh"
                )
            ll += float(np.dot(self._counts, inner))
        return ll
