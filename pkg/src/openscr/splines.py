"""Reduced-rank thin plate regression spline bases with fixed degrees of freedom.

A basis over ``n`` evaluation points in 1 or 2 dimensions consists of the
polynomial null space (constant and linear terms) plus the leading
eigenvectors of the radial kernel matrix, truncated so the total column count
equals the requested degrees of freedom.  Points are centered and scaled
isotropically before the kernel is evaluated, which makes 2-D bases exactly
invariant to rigid rotations of the input coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ValidationError

#: Relative eigenvalue cutoff below which kernel directions are unusable.
EIG_RTOL = 1e-10


@dataclass(frozen=True)
class SplineBasis:
    """Evaluated spline basis: one column per degree of freedom.

    Column 0 is the constant; columns ``1..d`` are the (standardized) linear
    terms; the remainder are kernel eigenvectors.  Callers that carry their
    own intercept should drop column 0 and center the rest.
    """

    matrix: np.ndarray  # (n, df)
    df: int
    variables: tuple[str, ...]

    @property
    def dimension(self) -> int:
        return len(self.variables)

    @property
    def null_dim(self) -> int:
        return self.dimension + 1


def tprs_basis(values: np.ndarray, df: int, variables: tuple[str, ...] = ("x",)) -> SplineBasis:
    """Construct a thin plate regression spline basis at the given points.

    Parameters
    ----------
    values : array
        Shape (n,) for a 1-D smooth or (n, 2) for a 2-D smooth.
    df : int
        Total number of basis columns, at least the null-space dimension
        (2 in 1-D, 3 in 2-D) and at most the number of distinct points.
    variables : tuple of str
        Names of the covariates the basis was built over (metadata only).

    Notes
    -----
    The radial kernel is ``r**3`` in 1-D and ``r**2 * log(r)`` in 2-D.  The
    top ``df - null_dim`` eigenvectors of the kernel matrix (largest absolute
    eigenvalue) are retained.
    """
    pts = np.asarray(values, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if d not in (1, 2):
        raise ValidationError(f"thin plate basis supports 1 or 2 dimensions, got {d}")
    if len(variables) != d:
        raise ValidationError("variable names do not match basis dimension")
    null_dim = d + 1
    if df < null_dim:
        raise ValidationError(f"df={df} below the null-space dimension {null_dim}")
    n_distinct = len(np.unique(pts, axis=0))
    if df > n_distinct:
        raise ValidationError(f"df={df} exceeds the {n_distinct} distinct evaluation points")

    # Center; scale by RMS distance so the preprocessing is rotation-invariant.
    z = pts - pts.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum(z**2, axis=1)))
    if scale > 0:
        z = z / scale

    cols = [np.ones(n)] + [z[:, i] for i in range(d)]
    k = df - null_dim
    if k > 0:
        r = cdist(z, z)
        if d == 1:
            E = r**3
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                E = np.where(r > 0, r**2 * np.log(r), 0.0)
        w, U = np.linalg.eigh(E)
        order = np.argsort(-np.abs(w), kind="stable")
        usable = np.abs(w[order]) > EIG_RTOL * np.abs(w[order[0]])
        if usable[:k].sum() < k:
            raise ValidationError(
                f"kernel matrix rank-deficient: only {int(usable.sum())} usable "
                f"directions for df={df} (duplicate or collinear points?)"
            )
        cols.extend(U[:, order[i]] for i in range(k))
    matrix = np.column_stack(cols)
    return SplineBasis(matrix=matrix, df=df, variables=tuple(variables))
