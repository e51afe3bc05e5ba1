"""Model formulas: link functions, linear predictors, and parameter mapping.

Each model parameter (``lambda``, ``sigma``, ``gamma``, ``phi``, ``D``) gets a
formula over covariates, e.g. ``"stratum + openness + primary"`` or
``"s(x, y, 20) + s(avg_salinity, 5)"``.  Formulas are expanded into design
matrices over the parameter's evaluation table (traps x primaries for the
detection parameters, primary-gap mid-points for the dynamics parameters,
mesh points for density), and a flat working-scale vector ``theta`` maps
through the inverse links onto the natural-scale fields.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import expit, logit as _logit

from .errors import NumericalError, ValidationError
from .splines import SplineBasis, tprs_basis

PARAMS = ("lambda", "sigma", "gamma", "phi", "D")
LINKS = {"lambda": "log", "sigma": "log", "gamma": "log", "phi": "logit", "D": "log"}


def link(name: str, value):
    """Map natural-scale values to the working scale."""
    value = np.asarray(value, dtype=float)
    if name == "log":
        return np.log(value)
    if name == "logit":
        return _logit(value)
    raise ValidationError(f"unknown link {name!r}")


def invlink(name: str, eta):
    """Map working-scale linear predictors to the natural scale."""
    eta = np.asarray(eta, dtype=float)
    if name == "log":
        with np.errstate(over="ignore"):
            return np.exp(eta)
    if name == "logit":
        return expit(eta)
    raise ValidationError(f"unknown link {name!r}")


@dataclass(frozen=True)
class SmoothTerm:
    variables: tuple[str, ...]
    df: int

    @property
    def key(self) -> str:
        return f"s({','.join(self.variables)})"

    def label(self) -> str:
        return f"s({','.join(self.variables)},df={self.df})"


@dataclass(frozen=True)
class VarTerm:
    name: str

    def label(self) -> str:
        return self.name


_SMOOTH_RE = re.compile(
    r"^s\(\s*([A-Za-z_]\w*)\s*(?:,\s*([A-Za-z_]\w*)\s*)?,\s*(?:df\s*=\s*)?(\d+)\s*\)$"
)


def parse_formula(formula: str):
    """Parse a formula string into a list of terms (intercept is implicit)."""
    terms = []
    seen = set()
    for raw in str(formula).split("+"):
        token = raw.strip()
        if token in ("", "1"):
            continue
        m = _SMOOTH_RE.match(token)
        if m:
            names = tuple(v for v in m.group(1, 2) if v is not None)
            term = SmoothTerm(variables=names, df=int(m.group(3)))
            key = term.key
        elif re.fullmatch(r"[A-Za-z_]\w*", token):
            term = VarTerm(name=token)
            key = token
        else:
            raise ValidationError(f"cannot parse formula term {token!r}")
        if key in seen:
            raise ValidationError(f"term {key!r} appears twice in formula {formula!r}")
        seen.add(key)
        terms.append(term)
    return terms


@dataclass(frozen=True)
class ModelSpec:
    """Formula per model parameter; links are fixed by the parameter."""

    lam: str = "1"
    sigma: str = "1"
    gamma: str = "1"
    phi: str = "1"
    D: str = "1"

    @property
    def formulas(self) -> dict[str, str]:
        return {"lambda": self.lam, "sigma": self.sigma, "gamma": self.gamma,
                "phi": self.phi, "D": self.D}

    def terms(self, param: str):
        return parse_formula(self.formulas[param])

    def smooth_df(self) -> dict[tuple[str, str], int]:
        """Smoothing parameters: (param, smooth key) -> degrees of freedom."""
        out = {}
        for param in PARAMS:
            for term in self.terms(param):
                if isinstance(term, SmoothTerm):
                    out[(param, term.key)] = term.df
        return out

    def with_smooth_df(self, df_by_term: dict[tuple[str, str], int]) -> "ModelSpec":
        """Return a copy with the given smooth terms' df replaced."""
        updates = {}
        attr = {"lambda": "lam", "sigma": "sigma", "gamma": "gamma", "phi": "phi", "D": "D"}
        for param in PARAMS:
            parts = []
            for term in self.terms(param):
                if isinstance(term, SmoothTerm) and (param, term.key) in df_by_term:
                    term = replace(term, df=df_by_term[(param, term.key)])
                parts.append(term.label())
            updates[attr[param]] = " + ".join(parts) if parts else "1"
        return ModelSpec(**updates)

    def describe(self) -> str:
        return "; ".join(f"{p} ~ {f}" for p, f in self.formulas.items())


@dataclass(frozen=True)
class TermBlock:
    term: object
    columns: slice
    names: tuple[str, ...]
    basis: SplineBasis | None = None
    center: np.ndarray | None = None


@dataclass(frozen=True)
class ParamDesign:
    param: str
    X: np.ndarray = field(repr=False)
    terms: tuple[TermBlock, ...]
    link: str
    field_shape: tuple[int, ...]

    @property
    def n_coefs(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ParamMap:
    """Bookkeeping between the flat working vector and per-parameter fields."""

    designs: dict[str, ParamDesign]
    slices: dict[str, slice]
    names: tuple[str, ...]

    @property
    def n_params(self) -> int:
        return len(self.names)

    def split(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        """Slice the working vector into per-parameter coefficient blocks."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValidationError(f"theta has length {theta.shape}, expected ({self.n_params},)")
        return {p: theta[sl] for p, sl in self.slices.items()}

    def join(self, blocks: dict[str, np.ndarray]) -> np.ndarray:
        """Inverse of :meth:`split`."""
        theta = np.empty(self.n_params)
        for p, sl in self.slices.items():
            theta[sl] = blocks[p]
        return theta


def _encode_categorical(series: pd.Series, name: str):
    """Treatment-coded dummies; the first level is the baseline.

    Categorical columns keep their declared level order (restricted to the
    observed levels); anything else is coerced to strings and sorted.
    """
    if isinstance(series.dtype, pd.CategoricalDtype):
        observed = set(series.dropna().unique())
        levels = [lev for lev in series.cat.categories if lev in observed]
        values = series
    else:
        values = series.astype(str)
        levels = sorted(values.unique())
    if len(levels) < 2:
        raise ValidationError(f"categorical term {name!r} has a single level {levels!r}")
    cols = [(values == lev).to_numpy(dtype=float) for lev in levels[1:]]
    names = [f"{name}[{lev}]" for lev in levels[1:]]
    return np.column_stack(cols), names


def _term_matrix(term, table: pd.DataFrame):
    """Design columns, names, and metadata for one parsed term."""
    if isinstance(term, VarTerm):
        if term.name not in table.columns:
            raise ValidationError(f"covariate {term.name!r} not available")
        col = table[term.name]
        if isinstance(col.dtype, pd.CategoricalDtype) or col.dtype == object or col.dtype == bool:
            X, names = _encode_categorical(col, term.name)
            return X, names, None, None
        x = col.to_numpy(dtype=float)
        if np.ptp(x) == 0:
            raise ValidationError(f"covariate {term.name!r} is constant")
        return x[:, None], [term.name], None, None
    if isinstance(term, SmoothTerm):
        for v in term.variables:
            if v not in table.columns:
                raise ValidationError(f"covariate {v!r} not available")
        pts = table[list(term.variables)].to_numpy(dtype=float)
        if pts.shape[1] == 1:
            pts = pts[:, 0]
        basis = tprs_basis(pts, term.df, variables=term.variables)
        # Absorb the constant column into the formula intercept and center
        # the rest over the evaluation points.
        block = basis.matrix[:, 1:]
        center = block.mean(axis=0)
        block = block - center
        names = [f"{term.label()}.{i + 1}" for i in range(block.shape[1])]
        return block, names, basis, center
    raise ValidationError(f"unknown term type {term!r}")


def build_param_design(param: str, formula: str, table: pd.DataFrame,
                       field_shape: tuple[int, ...]) -> ParamDesign:
    """Expand one parameter's formula over its evaluation table."""
    rows = len(table)
    if int(np.prod(field_shape)) != rows:
        raise ValidationError(f"{param}: table has {rows} rows, field shape {field_shape}")
    blocks = [np.ones((rows, 1))]
    term_blocks = [TermBlock(term="intercept", columns=slice(0, 1), names=("intercept",))]
    pos = 1
    for term in parse_formula(formula):
        X, term_names, basis, center = _term_matrix(term, table)
        blocks.append(X)
        term_blocks.append(TermBlock(term=term, columns=slice(pos, pos + X.shape[1]),
                                     names=tuple(term_names), basis=basis, center=center))
        pos += X.shape[1]
    X = np.hstack(blocks)
    rank = np.linalg.matrix_rank(X) if rows else X.shape[1]
    if rows and rank < X.shape[1]:
        raise ValidationError(
            f"{param}: design matrix is rank deficient ({rank} < {X.shape[1]}); "
            "remove redundant terms"
        )
    return ParamDesign(param=param, X=X, terms=tuple(term_blocks), link=LINKS[param],
                       field_shape=field_shape)


def build_param_map(spec: ModelSpec, tables: dict[str, tuple[pd.DataFrame, tuple[int, ...]]]
                    ) -> ParamMap:
    """Build designs for all parameters and lay out the working vector.

    ``tables[param] = (evaluation table, natural field shape)``.  A parameter
    whose field has zero rows (e.g. dynamics with a single primary occasion)
    contributes no working parameters.
    """
    designs = {}
    slices = {}
    names: list[str] = []
    pos = 0
    for param in PARAMS:
        table, shape = tables[param]
        if len(table) == 0:
            designs[param] = ParamDesign(param=param, X=np.zeros((0, 0)), terms=(),
                                         link=LINKS[param], field_shape=shape)
            slices[param] = slice(pos, pos)
            continue
        design = build_param_design(param, spec.formulas[param], table, shape)
        designs[param] = design
        slices[param] = slice(pos, pos + design.n_coefs)
        names.extend(f"{param}:{t}" for b in design.terms for t in b.names)
        pos += design.n_coefs
    return ParamMap(designs=designs, slices=slices, names=tuple(names))


def expand_params(theta: np.ndarray, pmap: ParamMap) -> dict[str, np.ndarray]:
    """Map the working vector to natural-scale parameter fields.

    Returns arrays shaped per parameter: ``lambda``/``sigma`` as (traps,
    primaries), ``gamma``/``phi`` as (primaries - 1,), ``D`` as (mesh points,).
    Raises :class:`NumericalError` if any linear predictor or natural value is
    non-finite.
    """
    blocks = pmap.split(theta)
    fields = {}
    for param, design in pmap.designs.items():
        if design.n_coefs == 0:
            fields[param] = np.zeros(design.field_shape)
            continue
        eta = design.X @ blocks[param]
        if not np.all(np.isfinite(eta)):
            raise NumericalError(f"non-finite linear predictor for {param!r}")
        value = invlink(design.link, eta)
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite natural value for {param!r} (overflowing link)")
        fields[param] = value.reshape(design.field_shape)
    return fields
