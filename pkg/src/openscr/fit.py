"""Maximum likelihood fitting, AIC, and sequential model selection.

The optimizer is quasi-Newton (BFGS with an L-BFGS-B fallback) on the
log-likelihood with central-difference gradients; the covariance of the
estimates is the inverse of the central-difference Hessian of the negative
log-likelihood at the optimum.  Model selection proceeds in stages (detection
factors, then dynamics smooths, then density smooths), optimizing spline
degrees of freedom by steepest descent on AIC and retaining every smoothing
set within the AIC window as a candidate for model averaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from .dataset import SCRData
from .design import ModelSpec, ParamMap, SmoothTerm, parse_formula
from .errors import NumericalError, ValidationError
from .likelihood import Likelihood

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitControls:
    gtol: float = 1e-4  # infinity norm of the gradient at convergence
    ftol_rel: float = 1e-9  # relative log-likelihood change at convergence
    max_iter: int = 500
    grad_rel_step: float = float(np.cbrt(np.finfo(float).eps))
    hess_rel_step: float = float(np.finfo(float).eps ** 0.25)


@dataclass(frozen=True)
class FitResult:
    """A fitted model: working-scale MLE, covariance, and fit summaries."""

    spec: ModelSpec
    theta: np.ndarray
    vcov: np.ndarray | None
    loglik: float
    aic: float
    converged: bool
    iterations: int
    names: tuple[str, ...]
    pmap: ParamMap = field(repr=False, default=None)

    @property
    def n_params(self) -> int:
        return len(self.theta)

    def se(self) -> np.ndarray | None:
        if self.vcov is None:
            return None
        return np.sqrt(np.diag(self.vcov))


def aic_score(loglik: float, n_params: int) -> float:
    """Akaike's information criterion with fully counted fixed-df smooths."""
    return -2.0 * loglik + 2.0 * n_params


def akaike_weights(aics) -> np.ndarray:
    """Normalized relative likelihoods exp(-dAIC/2)."""
    aics = np.asarray(aics, dtype=float)
    rel = np.exp(-(aics - aics.min()) / 2.0)
    return rel / rel.sum()


def _steps(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * np.maximum(1.0, np.abs(x))


def central_gradient(fun, x: np.ndarray, rel_step: float | None = None) -> np.ndarray:
    """Central-difference gradient with a one-sided fallback at bad points."""
    rel = rel_step if rel_step is not None else float(np.cbrt(np.finfo(float).eps))
    h = _steps(x, rel)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h[i]
        fp, fm = fun(x + e), fun(x - e)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * h[i])
        else:
            f0 = fun(x)
            if np.isfinite(fp):
                g[i] = (fp - f0) / h[i]
            elif np.isfinite(fm):
                g[i] = (f0 - fm) / h[i]
            else:
                g[i] = np.nan
    return g


def central_hessian(fun, x: np.ndarray, rel_step: float | None = None) -> np.ndarray:
    """Symmetric central-difference Hessian."""
    rel = rel_step if rel_step is not None else float(np.finfo(float).eps ** 0.25)
    h = _steps(x, rel)
    n = len(x)
    H = np.empty((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (fun(x + ei) - 2 * f0 + fun(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4 * h[i] * h[j])
    return 0.5 * (H + H.T)


def maximize_loglik(fun, theta0: np.ndarray, controls: FitControls | None = None):
    """Maximize a log-likelihood function; generic core used by :func:`maximize`.

    Returns ``(theta, vcov, loglik, converged, iterations)``.  ``vcov`` is the
    inverse Hessian of the negative log-likelihood, or ``None`` when that
    matrix is singular or not positive definite.
    """
    controls = controls or FitControls()
    theta0 = np.asarray(theta0, dtype=float)

    def neg(th):
        value = fun(th)
        return -value if np.isfinite(value) else np.inf

    def neg_grad(th):
        return central_gradient(neg, th, controls.grad_rel_step)

    if not np.isfinite(neg(theta0)):
        raise NumericalError("log-likelihood is not finite at the starting point")

    res = minimize(neg, theta0, jac=neg_grad, method="BFGS",
                   options={"gtol": controls.gtol, "maxiter": controls.max_iter})
    iterations = int(res.nit)
    theta = res.x
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    converged = bool(res.success) or grad_norm < controls.gtol
    if not converged:
        res2 = minimize(neg, theta, jac=neg_grad, method="L-BFGS-B",
                        options={"maxiter": controls.max_iter,
                                 "ftol": controls.ftol_rel,
                                 "gtol": controls.gtol})
        if res2.fun <= res.fun:
            theta = res2.x
        iterations += int(res2.nit)
        grad_norm = float(np.max(np.abs(central_gradient(neg, theta, controls.grad_rel_step))))
        converged = bool(res2.success) or grad_norm < controls.gtol

    loglik = -neg(theta)
    vcov = None
    if np.isfinite(loglik):
        H = central_hessian(neg, theta, controls.hess_rel_step)
        vcov = _invert_information(H)
        if vcov is None:
            logger.warning("singular or indefinite Hessian; covariance unavailable")
    return theta, vcov, float(loglik), converged, iterations


def _invert_information(H: np.ndarray) -> np.ndarray | None:
    if not np.all(np.isfinite(H)):
        return None
    try:
        eigvals = np.linalg.eigvalsh(H)
    except np.linalg.LinAlgError:
        return None
    if eigvals.min() <= 0 or eigvals.min() < 1e-12 * eigvals.max():
        return None
    vcov = np.linalg.inv(H)
    return 0.5 * (vcov + vcov.T)


def default_theta0(lik: Likelihood) -> np.ndarray:
    """Data-driven starting intercepts; all other coefficients zero.

    Encounter rate starts at the detections-per-survey-pass rate, encounter
    range at half the trap-extent diagonal, survival at 0.9, entry rate at
    K / span, and density at the count over area deflated by a crude 0.5
    detection guess.
    """
    data = lik.data
    theta = np.zeros(lik.n_params)
    total_effort = max(float(data.traps.effort.sum()), 1.0)
    n_det = max(float((data.histories.omega >= 0).sum()), 0.5)
    n_ind = max(data.histories.n_individuals, 1)
    extent = data.traps.xy.max(axis=0) - data.traps.xy.min(axis=0)
    diag = float(np.hypot(*extent))
    sigma0 = max(diag / 2.0, data.traps.cell_size)
    K = data.design.n_primaries
    span = float(data.design.times[-1]) if K > 1 else 1.0
    area = data.mesh.total_area

    starts = {
        "lambda": np.log(n_det / total_effort),
        "sigma": np.log(sigma0),
        "gamma": np.log(K / max(span, 1e-6)) if K > 1 else None,
        "phi": np.log(0.9 / 0.1) if K > 1 else None,
        "D": np.log(n_ind / (area * 0.5)),
    }
    for param, value in starts.items():
        sl = lik.pmap.slices[param]
        if value is not None and sl.stop > sl.start:
            theta[sl.start] = value
    return theta


def warm_start(lik: Likelihood, previous: FitResult | None) -> np.ndarray:
    """Default start, then copy estimates for coefficients shared by name."""
    theta = default_theta0(lik)
    if previous is not None:
        lookup = {name: previous.theta[i] for i, name in enumerate(previous.names)}
        for i, name in enumerate(lik.pmap.names):
            if name in lookup:
                theta[i] = lookup[name]
    return theta


def maximize(spec: ModelSpec, data: SCRData, theta0: np.ndarray | None = None,
             controls: FitControls | None = None,
             warm_from: FitResult | None = None) -> FitResult:
    """Fit one model by maximum likelihood."""
    lik = Likelihood(spec, data)
    if theta0 is None:
        theta0 = warm_start(lik, warm_from)
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (lik.n_params,):
        raise ValidationError(f"theta0 has shape {theta0.shape}, expected ({lik.n_params},)")
    if not np.all(np.isfinite(theta0)):
        raise ValidationError("theta0 must be finite")
    theta, vcov, ll, converged, iters = maximize_loglik(lik.loglik, theta0, controls)
    return FitResult(spec=spec, theta=theta, vcov=vcov, loglik=ll,
                     aic=aic_score(ll, lik.n_params), converged=converged,
                     iterations=iters, names=lik.pmap.names, pmap=lik.pmap)


# ---------------------------------------------------------------------------
# Sequential model selection


@dataclass(frozen=True)
class SmoothCandidate:
    """One smooth term whose degrees of freedom are selected by AIC."""

    param: str
    variables: tuple[str, ...]
    df_min: int
    df_max: int
    df_start: int | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.param, f"s({','.join(self.variables)})")

    def label(self) -> str:
        return f"{self.param}:s({','.join(self.variables)})"


@dataclass(frozen=True)
class SelectionStage:
    """A selection stage: factor terms tried by forward addition, then smooth
    terms whose df vector is optimized by steepest descent."""

    name: str
    factors: tuple[tuple[str, str], ...] = ()
    smooths: tuple[SmoothCandidate, ...] = ()


@dataclass(frozen=True)
class CandidateSet:
    """Final models differing only in smoothing parameters, with AIC weights."""

    fits: tuple[FitResult, ...]
    weights: np.ndarray

    def __post_init__(self):
        if len(self.fits) != len(self.weights):
            raise ValidationError("fits and weights differ in length")

    @property
    def best(self) -> FitResult:
        return self.fits[int(np.argmax(self.weights))]


@dataclass(frozen=True)
class SelectionResult:
    candidates: CandidateSet
    best_spec: ModelSpec
    stage_tables: dict[str, pd.DataFrame]
    history: pd.DataFrame


def default_stages(detection_params=("lambda", "sigma"),
                   detection_factors=("stratum", "openness", "primary"),
                   dynamics_df_max: int = 10, xy_df_max: int = 20,
                   salinity_df_max: int = 10, with_salinity: bool = True):
    """The three-stage menu: detection factors, dynamics smooths, density smooths."""
    density = [SmoothCandidate("D", ("x", "y"), 3, xy_df_max)]
    if with_salinity:
        density.append(SmoothCandidate("D", ("avg_salinity",), 2, salinity_df_max))
    return [
        SelectionStage("detection", factors=tuple(
            (p, f) for p in detection_params for f in detection_factors)),
        SelectionStage("dynamics", smooths=(
            SmoothCandidate("gamma", ("time",), 2, dynamics_df_max),
            SmoothCandidate("phi", ("time",), 2, dynamics_df_max),
        )),
        SelectionStage("density", smooths=tuple(density)),
    ]


def _add_factor(spec: ModelSpec, param: str, covariate: str) -> ModelSpec:
    attr = {"lambda": "lam", "sigma": "sigma", "gamma": "gamma", "phi": "phi", "D": "D"}[param]
    current = spec.formulas[param]
    formula = covariate if current.strip() in ("", "1") else f"{current} + {covariate}"
    return replace(spec, **{attr: formula})


def _with_smooths(spec: ModelSpec, smooths, dfs) -> ModelSpec:
    out = spec
    for cand, df in zip(smooths, dfs):
        term = SmoothTerm(variables=cand.variables, df=int(df))
        out = _add_factor(out, cand.param, term.label())
    return out


def _distinct_points(data: SCRData, cand: SmoothCandidate) -> int:
    tables = data.design_tables()
    table, _ = tables[cand.param]
    if any(v not in table.columns for v in cand.variables):
        return 0
    return len(np.unique(table[list(cand.variables)].to_numpy(dtype=float), axis=0))


class _Search:
    """Bookkeeping for one stepwise selection run."""

    def __init__(self, data, controls, delta_window):
        self.data = data
        self.controls = controls
        self.delta_window = delta_window
        self.rows = []
        self.cache: dict[str, FitResult] = {}

    def fit(self, spec: ModelSpec, stage: str, note: str,
            warm: FitResult | None) -> FitResult | None:
        key = spec.describe()
        if key in self.cache:
            return self.cache[key]
        try:
            result = maximize(spec, self.data, controls=self.controls, warm_from=warm)
        except (NumericalError, ValidationError) as err:
            logger.warning("fit failed in stage %s (%s): %s", stage, note, err)
            self.rows.append({"stage": stage, "model": key, "note": note,
                              "loglik": np.nan, "n_params": np.nan, "aic": np.nan,
                              "converged": False})
            return None
        self.cache[key] = result
        self.rows.append({"stage": stage, "model": key, "note": note,
                          "loglik": result.loglik, "n_params": result.n_params,
                          "aic": result.aic, "converged": result.converged})
        if not result.converged:
            logger.warning("fit did not converge in stage %s (%s)", stage, note)
        return result


def stepwise_select(data: SCRData, stages, base_spec: ModelSpec | None = None,
                    controls: FitControls | None = None,
                    delta_window: float = 2.0) -> SelectionResult:
    """Sequential AIC selection over the staged term menus.

    Within each stage, factor terms are added greedily while they lower AIC;
    smooth degrees of freedom are then optimized jointly by steepest descent
    (one df up or down per term, ties to the smaller df).  Each stage retains
    every smoothing-parameter set within ``delta_window`` AIC units of the
    stage optimum; the final formula is refit under each retained set and the
    refits form the candidate set with Akaike weights.
    """
    search = _Search(data, controls, delta_window)
    spec = base_spec or ModelSpec()
    incumbent = search.fit(spec, "base", "intercepts", None)
    if incumbent is None:
        raise NumericalError("the base model did not fit; check the data")

    retained: list[dict] = []
    stage_tables: dict[str, pd.DataFrame] = {}

    for stage in stages:
        spec, incumbent = _run_factor_moves(search, stage, spec, incumbent)
        if stage.smooths:
            spec, incumbent, table, stage_retained = _run_smooth_descent(
                search, stage, spec, incumbent)
            stage_tables[stage.name] = table
            retained.extend(stage_retained)

    final_df = spec.smooth_df()
    assignments = [final_df]
    for partial in retained:
        merged = dict(final_df)
        merged.update({k: v for k, v in partial.items() if k in final_df})
        if merged not in assignments:
            assignments.append(merged)

    fits = []
    for assignment in assignments:
        candidate_spec = spec.with_smooth_df(assignment)
        result = search.fit(candidate_spec, "final", "candidate refit", incumbent)
        if result is not None and result.vcov is not None:
            fits.append(result)
    if not fits:
        raise NumericalError("no candidate model produced a usable covariance")

    aics = np.array([f.aic for f in fits])
    keep = aics < aics.min() + delta_window
    fits = [f for f, k in zip(fits, keep) if k]
    weights = akaike_weights([f.aic for f in fits])
    order = np.argsort([f.aic for f in fits], kind="stable")
    fits = tuple(fits[i] for i in order)
    weights = weights[order]

    history = pd.DataFrame(search.rows)
    return SelectionResult(candidates=CandidateSet(fits=fits, weights=weights),
                           best_spec=spec, stage_tables=stage_tables, history=history)


def _run_factor_moves(search: _Search, stage: SelectionStage, spec, incumbent):
    available = list(stage.factors)
    while available:
        results = []
        for move in available:
            param, cov = move
            try:
                cand_spec = _add_factor(spec, param, cov)
                parse_formula(cand_spec.formulas[param])
            except ValidationError:
                continue
            result = search.fit(cand_spec, stage.name, f"+{param}:{cov}", incumbent)
            if result is not None and result.converged:
                results.append((move, cand_spec, result))
        if stage.factors and not results and available:
            raise NumericalError(f"stage {stage.name!r}: no candidate fit converged")
        if not results:
            break
        move, best_spec, best = min(results, key=lambda r: (r[2].aic, r[0]))
        if best.aic < incumbent.aic:
            spec, incumbent = best_spec, best
            available.remove(move)
        else:
            break
    return spec, incumbent


def _run_smooth_descent(search: _Search, stage: SelectionStage, spec, incumbent):
    smooths = []
    bounds = []
    for cand in stage.smooths:
        null_dim = len(cand.variables) + 1
        distinct = _distinct_points(search.data, cand)
        lo = max(cand.df_min, null_dim)
        hi = min(cand.df_max, distinct)
        if hi < lo:
            logger.warning("stage %s: smooth %s infeasible (only %d distinct points)",
                           stage.name, cand.label(), distinct)
            continue
        smooths.append(cand)
        bounds.append((lo, hi))
    if not smooths:
        return spec, incumbent, pd.DataFrame(), []

    evaluated: dict[tuple, FitResult] = {}

    def fit_at(dfs: tuple) -> FitResult | None:
        if dfs in evaluated:
            return evaluated[dfs]
        result = search.fit(_with_smooths(spec, smooths, dfs), stage.name,
                            "df=" + ",".join(map(str, dfs)), incumbent)
        if result is not None and result.converged:
            evaluated[dfs] = result
        return evaluated.get(dfs)

    current = tuple(c.df_start if c.df_start is not None else lo
                    for c, (lo, hi) in zip(smooths, bounds))
    current = tuple(int(np.clip(c, lo, hi)) for c, (lo, hi) in zip(current, bounds))
    if fit_at(current) is None:
        raise NumericalError(f"stage {stage.name!r}: starting smooth fit failed")

    while True:
        neighbors = []
        for i, (lo, hi) in enumerate(bounds):
            for step in (-1, +1):
                trial = list(current)
                trial[i] += step
                if lo <= trial[i] <= hi:
                    neighbors.append(tuple(trial))
        for nb in sorted(neighbors):
            fit_at(nb)
        options = [(dfs, evaluated[dfs]) for dfs in sorted(evaluated)
                   if dfs == current or dfs in neighbors]
        best_dfs, best = min(options, key=lambda o: (o[1].aic, o[0]))
        if best_dfs == current or best.aic >= evaluated[current].aic:
            break
        current = best_dfs
    if not evaluated:
        raise NumericalError(f"stage {stage.name!r}: zero converged fits")

    best_dfs, best = min(evaluated.items(), key=lambda o: (o[1].aic, o[0]))
    table = pd.DataFrame([
        {**{s.label(): d for s, d in zip(smooths, dfs)},
         "loglik": f.loglik, "aic": f.aic}
        for dfs, f in sorted(evaluated.items())
    ])
    table["delta_aic"] = table["aic"] - best.aic
    table = table.sort_values(["delta_aic"] + [s.label() for s in smooths],
                              kind="stable").reset_index(drop=True)

    stage_retained = []
    if best.aic < incumbent.aic:
        for dfs, f in sorted(evaluated.items()):
            if f.aic < best.aic + search.delta_window:
                stage_retained.append({s.key: d for s, d in zip(smooths, dfs)})
        return (_with_smooths(spec, smooths, best_dfs), best, table, stage_retained)
    return spec, incumbent, table, []
