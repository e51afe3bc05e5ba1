"""Spatial domain of integration: grid construction and covariate attachment.

The mesh is the discrete set of candidate activity-center locations.  It is
built as a square grid clipped to a (buffered) boundary with land removed,
and carries per-point covariates used by density and detection formulas.
Coordinates are projected meters; areas and the ``x``/``y`` covariate columns
are in kilometers to keep density per km².
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import shapely
from scipy.spatial.distance import cdist
from shapely.ops import unary_union

from .errors import ValidationError
from .survey import TrapArray

logger = logging.getLogger(__name__)

KM = 1000.0  # meters


@dataclass(frozen=True)
class Mesh:
    """Grid of candidate activity-center locations with covariates.

    ``xy`` is in meters; ``cell_area`` in km².  ``covariates`` always carries
    ``x`` and ``y`` columns in kilometers; attachment helpers add categorical
    and continuous columns.
    """

    xy: np.ndarray  # (M, 2) meters
    cell_area: float  # km²
    covariates: pd.DataFrame = field(repr=False)

    @property
    def n_points(self) -> int:
        return self.xy.shape[0]

    @property
    def areas(self) -> np.ndarray:
        """Per-point cell areas in km²."""
        return np.full(self.n_points, self.cell_area)

    @property
    def total_area(self) -> float:
        return self.cell_area * self.n_points


@dataclass(frozen=True)
class RasterCovariate:
    """Point raster of a continuous field: cell centers and values."""

    xy: np.ndarray  # (N, 2) meters
    values: np.ndarray  # (N,)

    def __post_init__(self):
        if self.xy.shape[0] != self.values.shape[0]:
            raise ValidationError("raster coordinates and values differ in length")


def build_mesh(boundary, land=None, buffer_km: float = 0.0, spacing_km: float = 1.0) -> Mesh:
    """Lay a grid of cell centers over the buffered boundary, excluding land.

    Parameters
    ----------
    boundary, land : shapely geometry or iterable of geometries
        Polygons in projected meters.  ``land`` may be ``None``.
    buffer_km : float
        Outward buffer applied to the boundary before gridding.
    spacing_km : float
        Grid spacing; the cell area is ``spacing_km ** 2``.
    """
    if spacing_km <= 0:
        raise ValidationError("spacing must be positive")
    domain = _as_geometry(boundary)
    if buffer_km > 0:
        domain = domain.buffer(buffer_km * KM)
    h = spacing_km * KM
    minx, miny, maxx, maxy = domain.bounds
    nx = max(int(np.ceil((maxx - minx) / h)), 1)
    ny = max(int(np.ceil((maxy - miny) / h)), 1)
    cx = minx + (np.arange(nx) + 0.5) * h
    cy = miny + (np.arange(ny) + 0.5) * h
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])

    points = shapely.points(pts)
    keep = shapely.covers(domain, points)
    if land is not None:
        keep &= ~shapely.intersects(_as_geometry(land), points)
    pts = pts[keep]
    if len(pts) == 0:
        raise ValidationError("mesh is empty: boundary, buffer, and land leave no cells")
    cov = pd.DataFrame({"x": pts[:, 0] / KM, "y": pts[:, 1] / KM})
    return Mesh(xy=pts, cell_area=float(spacing_km) ** 2, covariates=cov)


def _as_geometry(geoms):
    if isinstance(geoms, shapely.Geometry):
        return geoms
    return unary_union(list(geoms))


def label_points(xy: np.ndarray, labeled: list[tuple[str, object]], name: str) -> np.ndarray:
    """Assign each point the label of the first polygon covering it.

    Trying polygons in list order makes boundary points deterministic; a
    point covered by no polygon is an error.
    """
    points = shapely.points(xy)
    n = len(points)
    values = np.array([None] * n, dtype=object)
    unassigned = np.ones(n, dtype=bool)
    for label, geom in labeled:
        hit = unassigned & shapely.covers(_as_geometry(geom), points)
        values[hit] = label
        unassigned &= ~hit
    if unassigned.any():
        bad = np.flatnonzero(unassigned)[:10]
        raise ValidationError(
            f"covariate {name!r}: {int(unassigned.sum())} point(s) not covered "
            f"by any polygon (first indices {bad.tolist()})"
        )
    return values.astype(str)


def attach_categorical(mesh: Mesh, name: str, labeled: list[tuple[str, object]]) -> Mesh:
    """Attach a categorical covariate defined by labeled polygons."""
    cov = mesh.covariates.copy()
    cov[name] = pd.Categorical(label_points(mesh.xy, labeled, name))
    return replace(mesh, covariates=cov)


def attach_salinity(mesh: Mesh, raster: RasterCovariate, radius_km: float,
                    name: str = "avg_salinity") -> Mesh:
    """Attach the mean raster value within ``radius_km`` of each mesh point.

    The raster must already be time-averaged; this only performs the spatial
    average.  Points with no raster cell within the radius are an error.
    """
    if radius_km <= 0:
        raise ValidationError("radius must be positive")
    if not np.all(np.isfinite(raster.values)):
        raise ValidationError("raster contains non-finite values")
    d = cdist(mesh.xy, raster.xy)
    within = d <= radius_km * KM
    hits = within.sum(axis=1)
    if np.any(hits == 0):
        bad = np.flatnonzero(hits == 0)[:10]
        raise ValidationError(
            f"{int((hits == 0).sum())} mesh point(s) have no raster coverage within "
            f"{radius_km} km (first indices {bad.tolist()})"
        )
    sums = within @ raster.values
    cov = mesh.covariates.copy()
    cov[name] = sums / hits
    return replace(mesh, covariates=cov)


def distance_matrix(traps: TrapArray, mesh: Mesh) -> np.ndarray:
    """Euclidean distances in meters between each trap and each mesh point."""
    if traps.n_traps == 0 or mesh.n_points == 0:
        raise ValidationError("distance matrix needs nonempty traps and mesh")
    return cdist(traps.xy, mesh.xy)
