"""Simulation-based goodness-of-fit: replicate surveys and randomization tests.

Replicate datasets are simulated under the observed detector effort from
parameters drawn out of the bootstrap sample (or a fixed set), and three
statistics compare simulations with the observed histories: the number of
individuals first seen on each primary (recruitment), the mean number of
primaries between first and last sighting (survival), and the number of
individuals ever detected on each trap (density).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bootstrap import BootstrapDraws, draw_rng
from .dataset import SCRData
from .errors import ValidationError
from .likelihood import DetectionField, StateModel, _detection_cache
from .survey import CaptureHistories, RobustDesign, TrapArray


@dataclass(frozen=True)
class GofStatistics:
    """Summary statistics of one (observed or simulated) set of histories."""

    new_individuals: np.ndarray  # (K,) first detections per primary
    time_between: float  # mean primaries between first and last sighting
    trap_counts: np.ndarray  # (J,) distinct individuals ever seen per trap


@dataclass(frozen=True)
class GofTest:
    name: str
    labels: tuple[str, ...]
    observed: np.ndarray
    sims: np.ndarray  # (n_sims, d)
    p_values: np.ndarray  # (d,)
    lo: np.ndarray  # simultaneous 95% envelope, lower
    hi: np.ndarray

    @property
    def inside_envelope(self) -> bool:
        return bool(np.all((self.observed >= self.lo) & (self.observed <= self.hi)))


@dataclass(frozen=True)
class GofReport:
    tests: dict[str, GofTest]
    n_sims: int
    seed: int
    resampled_draws: bool


def simulate_dataset(params: dict[str, np.ndarray], traps: TrapArray,
                     design: RobustDesign, mesh, seed=None,
                     rng: np.random.Generator | None = None) -> CaptureHistories:
    """Simulate capture histories under the observed effort (marked scale).

    ``params`` holds natural-scale fields as produced by parameter expansion:
    ``lambda``/``sigma`` (traps x primaries), ``gamma``/``phi`` (gaps), and
    ``D`` (mesh points, per km²).  The realized number of activity centers is
    Poisson with mean ``sum(area * D)``; only detected individuals are
    returned.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    K = design.n_primaries
    L = design.max_secondaries
    J = traps.n_traps
    areas = mesh.areas

    state = None
    if K > 1:
        state = StateModel(gamma=params["gamma"], phi=np.clip(params["phi"], 0.0, 1.0),
                           delta=design.delta)
    beta = state.beta if state is not None else np.array([1.0])
    phi_pow = state.phi_pow if state is not None else np.zeros(0)

    weights = areas * params["D"]
    total = weights.sum()
    n_super = int(rng.poisson(total))
    if n_super == 0 or total <= 0:
        return CaptureHistories(ids=(), omega=np.empty((0, K, L), dtype=np.int64))

    centers = rng.choice(len(weights), size=n_super, p=weights / total)
    entry = rng.choice(K, size=n_super, p=beta)
    alive = np.zeros((n_super, K), dtype=bool)
    alive[np.arange(n_super), entry] = True
    if K > 1:
        survive = rng.random((n_super, K - 1)) < phi_pow[None, :]
        for k in range(1, K):
            alive[:, k] |= alive[:, k - 1] & survive[:, k - 1]

    det = DetectionField(lam=params["lambda"], sigma=params["sigma"],
                         effort=traps.effort,
                         distances=np.linalg.norm(
                             traps.xy[:, None, :] - mesh.xy[None, :, :], axis=2))
    E, _ = _detection_cache(det)
    p_det = -np.expm1(-E)  # (K, L, M)

    omega = np.full((n_super, K, L), -1, dtype=np.int64)
    for k in range(K):
        hazard = params["lambda"][:, k, None] * np.exp(
            -det.distances**2 / (2.0 * params["sigma"][:, k, None] ** 2))
        for l in range(L):
            u_draw = rng.random(n_super)
            if not traps.effort[:, k, l].any():
                continue
            weighted = hazard * traps.effort[:, k, l][:, None]  # (J, M)
            with np.errstate(invalid="ignore"):
                alloc = np.where(E[k, l] > 0, weighted / E[k, l], 0.0)
            hit = alive[:, k] & (u_draw < p_det[k, l][centers])
            for i in np.flatnonzero(hit):
                omega[i, k, l] = rng.choice(J, p=alloc[:, centers[i]])

    detected = (omega >= 0).any(axis=(1, 2))
    omega = omega[detected]
    width = max(len(str(n_super)), 1)
    ids = tuple(f"sim{idx:0{width}d}" for idx in np.flatnonzero(detected))
    return CaptureHistories(ids=ids, omega=omega)


def test_statistics(histories: CaptureHistories, design: RobustDesign,
                    traps: TrapArray) -> GofStatistics:
    """The three randomization-test statistics for one set of histories."""
    K = design.n_primaries
    J = traps.n_traps
    om = histories.omega
    if histories.n_individuals == 0:
        return GofStatistics(new_individuals=np.zeros(K, dtype=np.int64),
                             time_between=0.0,
                             trap_counts=np.zeros(J, dtype=np.int64))
    seen = (om >= 0).any(axis=2)  # (n, K)
    first = seen.argmax(axis=1)
    last = K - 1 - seen[:, ::-1].argmax(axis=1)
    new = np.bincount(first, minlength=K)
    t_between = float(np.mean(last - first))
    counts = np.zeros(J, dtype=np.int64)
    for i in range(om.shape[0]):
        for j in np.unique(om[i][om[i] >= 0]):
            counts[j] += 1
    return GofStatistics(new_individuals=new, time_between=t_between, trap_counts=counts)


def _mid_rank_p(observed: float, sims: np.ndarray) -> float:
    """Two-sided simulation p-value with mid-rank handling of ties."""
    n = len(sims)
    r = (np.sum(sims < observed) + 0.5 * np.sum(sims == observed) + 0.5) / (n + 1)
    return float(min(1.0, 2.0 * min(r, 1.0 - r)))


def _make_test(name, labels, observed, sims, alpha: float = 0.05) -> GofTest:
    observed = np.atleast_1d(np.asarray(observed, dtype=float))
    sims = np.asarray(sims, dtype=float)
    d = observed.shape[0]
    p = np.array([_mid_rank_p(observed[c], sims[:, c]) for c in range(d)])
    # simultaneous (Bonferroni) envelope across the d components
    a = alpha / d
    lo = np.quantile(sims, a / 2, axis=0)
    hi = np.quantile(sims, 1 - a / 2, axis=0)
    return GofTest(name=name, labels=tuple(labels), observed=observed, sims=sims,
                   p_values=p, lo=lo, hi=hi)


def run_gof(draws: BootstrapDraws | None, data: SCRData, n_sims: int, seed: int,
            fields: dict[str, np.ndarray] | None = None, threads: int = 1) -> GofReport:
    """Simulate replicate datasets and compare the three test statistics.

    By default each replicate re-samples a bootstrap draw (propagating
    parameter uncertainty); passing ``fields`` fixes the parameters instead.
    Simulation ``s`` uses the stream keyed by ``(seed, s)``.
    """
    if n_sims < 1:
        raise ValidationError("n_sims must be at least 1")
    if draws is None and fields is None:
        raise ValidationError("either bootstrap draws or fixed fields are required")
    K = data.design.n_primaries
    J = data.traps.n_traps
    observed = test_statistics(data.histories, data.design, data.traps)

    sims_new = np.empty((n_sims, K))
    sims_t = np.empty((n_sims, 1))
    sims_traps = np.empty((n_sims, J))

    def one_sim(s: int) -> None:
        rng = draw_rng(seed, s)
        use = fields
        if use is None:
            use = draws.fields_for(int(rng.integers(draws.n_draws)))
        sim = simulate_dataset(use, data.traps, data.design, data.mesh, rng=rng)
        stats = test_statistics(sim, data.design, data.traps)
        sims_new[s] = stats.new_individuals
        sims_t[s, 0] = stats.time_between
        sims_traps[s] = stats.trap_counts

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one_sim, range(n_sims)))
    else:
        for s in range(n_sims):
            one_sim(s)

    tests = {
        "new_individuals": _make_test(
            "new_individuals", [f"primary_{k + 1}" for k in range(K)],
            observed.new_individuals, sims_new),
        "time_between": _make_test(
            "time_between", ["mean_primaries"], observed.time_between, sims_t),
        "trap_counts": _make_test(
            "trap_counts", [f"trap_{j}" for j in range(J)],
            observed.trap_counts, sims_traps),
    }
    return GofReport(tests=tests, n_sims=n_sims, seed=seed,
                     resampled_draws=fields is None)
