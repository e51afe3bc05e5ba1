"""Model-averaged parametric bootstrap and derived-quantity summaries.

Draws sample a candidate model by its Akaike weight, then a working-scale
parameter vector from the asymptotic normal distribution of that model's
MLEs, and transform to the natural scale.  Point estimates are means over
draws and intervals are the 2.5% / 97.5% quantiles.  The region of inference
keeps mesh points whose interquartile dispersion (interquartile range over
median) of density stays below a threshold.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dataset import SCRData
from .design import expand_params
from .errors import NumericalError, ValidationError
from .fit import CandidateSet
from .likelihood import StateModel, primary_weights

logger = logging.getLogger(__name__)

CI_LO, CI_HI = 0.025, 0.975


def draw_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one draw: independent of evaluation order."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


@dataclass(frozen=True)
class BootstrapDraws:
    """Natural-scale draws and per-draw derived quantities (marked scale)."""

    seed: int
    model_index: np.ndarray  # (R,)
    theta: tuple  # per-draw working vectors, ragged across models
    lam: np.ndarray = field(repr=False)  # (R, J, K)
    sigma: np.ndarray = field(repr=False)  # (R, J, K)
    gamma: np.ndarray = field(repr=False)  # (R, K-1)
    phi: np.ndarray = field(repr=False)  # (R, K-1)
    beta: np.ndarray = field(repr=False)  # (R, K)
    occupancy: np.ndarray = field(repr=False)  # (R, K) fraction present per primary
    D: np.ndarray = field(repr=False)  # (R, M)
    n_marked: np.ndarray = field(repr=False)  # (R, K) abundance per primary

    @property
    def n_draws(self) -> int:
        return len(self.model_index)

    def fields_for(self, r: int) -> dict[str, np.ndarray]:
        """Natural parameter fields of draw ``r`` (marked scale)."""
        return {"lambda": self.lam[r], "sigma": self.sigma[r],
                "gamma": self.gamma[r], "phi": self.phi[r], "D": self.D[r]}


@dataclass(frozen=True)
class RegionOfInference:
    """IQD per mesh point and the keep mask at the chosen threshold."""

    iqd: np.ndarray
    keep: np.ndarray
    threshold: float


def repair_psd(vcov: np.ndarray, trace_tol: float = 0.01):
    """Eigenvalue-floor repair of a covariance; reject large distortions.

    Returns a factor ``F`` with ``F @ F.T`` equal to the repaired matrix.
    """
    vcov = 0.5 * (vcov + vcov.T)
    w, V = np.linalg.eigh(vcov)
    if w.min() < 0:
        floored = np.maximum(w, 0.0)
        trace = w.sum()
        if trace <= 0 or (floored.sum() - trace) > trace_tol * trace:
            raise NumericalError(
                "covariance is not positive semidefinite and the eigenvalue-floor "
                f"repair would distort the trace by more than {trace_tol:.0%}"
            )
        logger.warning("floored %d negative covariance eigenvalue(s)", int((w < 0).sum()))
        w = floored
    return V * np.sqrt(w)


def model_average_bootstrap(candidates: CandidateSet, data: SCRData, n_draws: int,
                            seed: int, threads: int = 1) -> BootstrapDraws:
    """Simulate parameters from the model-averaged asymptotic distribution.

    Each draw picks model ``m`` with probability proportional to its AIC
    weight, samples the working vector from N(theta_hat_m, vcov_m), and
    stores the natural-scale fields and derived per-primary quantities.
    Draw ``r`` uses its own random stream keyed by ``(seed, r)``, so results
    do not depend on the thread count.
    """
    if n_draws < 1:
        raise ValidationError("n_draws must be at least 1")
    for f in candidates.fits:
        if f.vcov is None:
            raise NumericalError("candidate without covariance cannot be bootstrapped")
    factors = [repair_psd(f.vcov) for f in candidates.fits]
    cumw = np.cumsum(candidates.weights)
    cumw[-1] = 1.0

    J = data.traps.n_traps
    K = data.design.n_primaries
    M = data.mesh.n_points
    delta = data.design.delta
    areas = data.mesh.areas

    model_index = np.empty(n_draws, dtype=np.int64)
    thetas: list[np.ndarray] = [None] * n_draws
    lam = np.empty((n_draws, J, K))
    sigma = np.empty((n_draws, J, K))
    gamma = np.empty((n_draws, K - 1))
    phi = np.empty((n_draws, K - 1))
    beta = np.empty((n_draws, K))
    occupancy = np.empty((n_draws, K))
    D = np.empty((n_draws, M))
    n_marked = np.empty((n_draws, K))

    def one_draw(r: int) -> None:
        rng = draw_rng(seed, r)
        m = int(np.searchsorted(cumw, rng.random(), side="right"))
        m = min(m, len(factors) - 1)
        fit = candidates.fits[m]
        theta = fit.theta + factors[m] @ rng.standard_normal(fit.n_params)
        fields = expand_params(theta, fit.pmap)
        model_index[r] = m
        thetas[r] = theta
        lam[r] = fields["lambda"]
        sigma[r] = fields["sigma"]
        gamma[r] = fields["gamma"]
        phi[r] = np.clip(fields["phi"], 0.0, 1.0)
        if K > 1:
            state = StateModel(gamma=gamma[r], phi=phi[r], delta=delta)
            beta[r] = state.beta
            occupancy[r] = primary_weights(state)
        else:
            beta[r] = 1.0
            occupancy[r] = 1.0
        D[r] = fields["D"]
        n_marked[r] = occupancy[r] * float(areas @ fields["D"])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one_draw, range(n_draws)))
    else:
        for r in range(n_draws):
            one_draw(r)

    return BootstrapDraws(seed=seed, model_index=model_index, theta=tuple(thetas),
                          lam=lam, sigma=sigma, gamma=gamma, phi=phi, beta=beta,
                          occupancy=occupancy, D=D, n_marked=n_marked)


def save_draws(draws: BootstrapDraws, path) -> None:
    """Persist the draw arrays (working vectors are not kept)."""
    np.savez_compressed(path, seed=draws.seed, model_index=draws.model_index,
                        lam=draws.lam, sigma=draws.sigma, gamma=draws.gamma,
                        phi=draws.phi, beta=draws.beta, occupancy=draws.occupancy,
                        D=draws.D, n_marked=draws.n_marked)


def load_draws(path) -> BootstrapDraws:
    with np.load(path) as z:
        return BootstrapDraws(seed=int(z["seed"]), model_index=z["model_index"],
                              theta=(), lam=z["lam"], sigma=z["sigma"],
                              gamma=z["gamma"], phi=z["phi"], beta=z["beta"],
                              occupancy=z["occupancy"], D=z["D"],
                              n_marked=z["n_marked"])


def iqd_region(draws: BootstrapDraws, threshold: float) -> RegionOfInference:
    """Interquartile dispersion of density per point, and the keep mask.

    IQD = (Q3 - Q1) / median over the bootstrap draws of density, with
    linear-interpolation quantiles; a zero median yields infinite IQD and the
    point is excluded.  Scale-free, so marked/whole population is irrelevant.
    """
    if draws.n_draws < 2:
        raise ValidationError("need at least 2 draws to form quartiles")
    q1, med, q3 = np.quantile(draws.D, [0.25, 0.5, 0.75], axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        iqd = np.where(med > 0, (q3 - q1) / med, np.inf)
    return RegionOfInference(iqd=iqd, keep=iqd < threshold, threshold=float(threshold))


def summarize_density(draws: BootstrapDraws, data: SCRData,
                      region: RegionOfInference | None = None):
    """Whole-population density map and per-primary abundance series.

    Returns ``(density, abundance)`` data frames.  Density rows carry the
    point estimate (mean over draws), the 2.5%/97.5% quantiles, the IQD, and
    the keep flag; abundance is summed over the kept mesh points only.
    """
    scale = 1.0 / data.marked_fraction
    Dw = draws.D * scale
    mean = Dw.mean(axis=0)
    lo, hi = np.quantile(Dw, [CI_LO, CI_HI], axis=0)
    if region is None:
        region = iqd_region(draws, np.inf)
    density = pd.DataFrame({
        "x": data.mesh.xy[:, 0], "y": data.mesh.xy[:, 1],
        "mean": mean, "lcl": lo, "ucl": hi,
        "iqd": region.iqd, "kept": region.keep.astype(int),
    })

    areas = data.mesh.areas
    kept_aD = (draws.D[:, region.keep] * areas[region.keep][None, :]).sum(axis=1)
    n_draws_k = draws.occupancy * kept_aD[:, None] * scale  # (R, K)
    dates = data.design.midpoints.astype("datetime64[D]").astype(str)
    abundance = pd.DataFrame({
        "primary": np.arange(1, data.design.n_primaries + 1),
        "date": dates,
        "N": n_draws_k.mean(axis=0),
        "lcl": np.quantile(n_draws_k, CI_LO, axis=0),
        "ucl": np.quantile(n_draws_k, CI_HI, axis=0),
    })
    return density, abundance


def salinity_bands(draws: BootstrapDraws, data: SCRData, band_width: float = 1.0,
                   region: RegionOfInference | None = None,
                   column: str = "avg_salinity") -> pd.DataFrame:
    """Per-band density and abundance (with CIs) for each primary occasion.

    A band labeled ``x`` holds the mesh points with salinity in
    ``[x - width/2, x + width/2)``.  Bands partition the (kept) mesh, so band
    areas sum to the kept area.
    """
    if column not in data.mesh.covariates.columns:
        raise ValidationError(f"mesh has no {column!r} covariate")
    sal = data.mesh.covariates[column].to_numpy(dtype=float)
    keep = region.keep if region is not None else np.ones(len(sal), dtype=bool)
    labels = np.floor(sal / band_width + 0.5) * band_width
    scale = 1.0 / data.marked_fraction
    areas = data.mesh.areas

    rows = []
    present = np.unique(labels[keep])
    lo_b, hi_b = present.min(), present.max()
    expected = np.arange(lo_b, hi_b + band_width / 2, band_width)
    if len(expected) != len(present):
        logger.info("salinity bands with no mesh points omitted: %d of %d",
                    len(expected) - len(present), len(expected))
    for band in present:
        sel = keep & (labels == band)
        band_area = float(areas[sel].sum())
        aD = (draws.D[:, sel] * areas[sel][None, :]).sum(axis=1)  # (R,)
        for k in range(data.design.n_primaries):
            ab = draws.occupancy[:, k] * aD * scale
            dens = ab / band_area
            rows.append({
                "band": float(band), "primary": k + 1, "area_km2": band_area,
                "density": dens.mean(), "density_lcl": np.quantile(dens, CI_LO),
                "density_ucl": np.quantile(dens, CI_HI),
                "abundance": ab.mean(), "abundance_lcl": np.quantile(ab, CI_LO),
                "abundance_ucl": np.quantile(ab, CI_HI),
            })
    return pd.DataFrame(rows)


def survival_table(draws: BootstrapDraws, data: SCRData) -> pd.DataFrame:
    """Survival per gap with CIs, dated at the preceding primary's mid-point."""
    K = data.design.n_primaries
    dates = data.design.midpoints.astype("datetime64[D]").astype(str)
    rows = []
    for k in range(K - 1):
        ph = draws.phi[:, k]
        rows.append({
            "date": dates[k], "interval": f"{k + 1}--{k + 2}",
            "phi": ph.mean(), "lcl": np.quantile(ph, CI_LO),
            "ucl": np.quantile(ph, CI_HI),
        })
    return pd.DataFrame(rows)


def recruitment_table(draws: BootstrapDraws, data: SCRData) -> pd.DataFrame:
    """Whole-population recruits per year entering at each primary after the first.

    The number entering at primary k+1 is ``beta[k+1] * Nbar``; dividing by
    the gap length gives a per-year rate dated like the survival table.
    """
    K = data.design.n_primaries
    scale = 1.0 / data.marked_fraction
    nbar = draws.D @ data.mesh.areas  # expected ever-present activity centers
    dates = data.design.midpoints.astype("datetime64[D]").astype(str)
    rows = []
    for k in range(K - 1):
        per_year = draws.beta[:, k + 1] * nbar * scale / data.design.delta[k]
        rows.append({
            "date": dates[k], "interval": f"{k + 1}--{k + 2}",
            "recruits_per_year": per_year.mean(),
            "lcl": np.quantile(per_year, CI_LO),
            "ucl": np.quantile(per_year, CI_HI),
        })
    return pd.DataFrame(rows)
