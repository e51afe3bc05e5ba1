"""Format raw survey records into robust-design capture-recapture data.

Boat surveys are grouped into secondary and primary occasions, GPS tracklines
are rasterized onto a square grid to obtain per-cell effort counts, and
sightings are reduced to at most one first-sighting trap per individual per
secondary occasion.

Input records are plain pandas DataFrames:

* surveys:   ``survey_id``, ``start``, ``end`` (timestamps)
* grouping:  ``survey_id``, ``primary``, ``secondary`` (1-based integers)
* tracks:    ``survey_id``, ``timestamp``, ``x``, ``y`` (projected meters)
* sightings: ``individual_id``, ``timestamp``, ``x``, ``y``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .errors import ValidationError

logger = logging.getLogger(__name__)

#: Days per year used to express occasion gaps in years.
DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class Secondary:
    """One secondary occasion: a set of surveys with its covering time span."""

    survey_ids: tuple[str, ...]
    start: np.datetime64
    end: np.datetime64


@dataclass(frozen=True)
class RobustDesign:
    """Nested occasion structure with gaps between primary occasions.

    ``primaries[k]`` is the ordered tuple of :class:`Secondary` occasions in
    primary ``k``; ``delta[k]`` is the time in years between the mid-points of
    primaries ``k`` and ``k + 1``.
    """

    primaries: tuple[tuple[Secondary, ...], ...]
    delta: np.ndarray = field(repr=False)

    @property
    def n_primaries(self) -> int:
        return len(self.primaries)

    @property
    def n_secondaries(self) -> tuple[int, ...]:
        """Number of secondary occasions in each primary."""
        return tuple(len(p) for p in self.primaries)

    @property
    def max_secondaries(self) -> int:
        return max(self.n_secondaries)

    @property
    def midpoints(self) -> np.ndarray:
        """Mid-point timestamp of each primary occasion."""
        mids = []
        for prim in self.primaries:
            start = min(s.start for s in prim)
            end = max(s.end for s in prim)
            mids.append(start + (end - start) / 2)
        return np.array(mids, dtype="datetime64[ns]")

    @property
    def times(self) -> np.ndarray:
        """Primary mid-points in years since the first primary's mid-point."""
        mids = self.midpoints
        return (mids - mids[0]) / np.timedelta64(1, "D") / DAYS_PER_YEAR

    def occasions(self):
        """Iterate over real (primary, secondary) index pairs, 0-based."""
        for k, prim in enumerate(self.primaries):
            for l in range(len(prim)):
                yield k, l

    def secondary_of_survey(self) -> dict[str, tuple[int, int]]:
        """Map each survey id to its 0-based (primary, secondary) pair."""
        out: dict[str, tuple[int, int]] = {}
        for k, prim in enumerate(self.primaries):
            for l, sec in enumerate(prim):
                for sid in sec.survey_ids:
                    out[sid] = (k, l)
        return out


@dataclass(frozen=True)
class TrapArray:
    """Grid cells with nonzero survey effort, acting as proximity detectors.

    ``effort[j, k, l]`` counts the distinct surveys that traversed cell ``j``
    during secondary occasion ``l`` of primary ``k``.  Primaries with fewer
    secondaries than the widest one are zero-padded.
    """

    xy: np.ndarray  # (J, 2) cell-center coordinates, meters
    cell_size: float  # meters
    effort: np.ndarray  # (J, K, L) nonnegative int
    ij: np.ndarray | None = None  # (J, 2) integer cell indices, for audit

    @property
    def n_traps(self) -> int:
        return self.xy.shape[0]

    def validate(self) -> None:
        if np.any(self.effort < 0):
            raise ValidationError("negative effort counts")
        if np.any(self.effort.sum(axis=(1, 2)) == 0):
            raise ValidationError("trap with zero total effort")


@dataclass(frozen=True)
class CaptureHistories:
    """First-sighting trap indices per individual and secondary occasion.

    ``omega[i, k, l]`` is the 0-based trap index of individual ``i``'s first
    sighting in secondary ``(k, l)``, or ``-1`` when the individual was not
    seen then.
    """

    ids: tuple[str, ...]
    omega: np.ndarray  # (n, K, L) int, -1 = not detected

    @property
    def n_individuals(self) -> int:
        return len(self.ids)

    def detections(self):
        """Yield (individual, primary, secondary, trap) for every detection."""
        for i, k, l in zip(*np.nonzero(self.omega >= 0)):
            yield int(i), int(k), int(l), int(self.omega[i, k, l])


def build_design(surveys: pd.DataFrame, grouping: pd.DataFrame) -> RobustDesign:
    """Group surveys into a robust design and compute primary-gap durations.

    Parameters
    ----------
    surveys : DataFrame
        Columns ``survey_id``, ``start``, ``end``.
    grouping : DataFrame
        Columns ``survey_id``, ``primary``, ``secondary`` with 1-based,
        contiguous occasion labels.

    Returns
    -------
    RobustDesign
        With ``delta[k]`` = years between mid-points of primaries k, k+1,
        where a primary's mid-point is the mean of its first survey start
        and last survey end.
    """
    spans = _survey_spans(surveys)

    dup = grouping["survey_id"][grouping["survey_id"].duplicated()]
    if len(dup):
        raise ValidationError(f"survey assigned to more than one occasion: {dup.iloc[0]!r}")
    missing = set(grouping["survey_id"]) - set(spans)
    if missing:
        raise ValidationError(f"grouping references unknown surveys: {sorted(missing)}")

    primaries = sorted(grouping["primary"].unique())
    if primaries != list(range(1, len(primaries) + 1)):
        raise ValidationError(f"primary labels must be contiguous from 1, got {primaries}")

    built: list[tuple[Secondary, ...]] = []
    for k in primaries:
        rows = grouping[grouping["primary"] == k]
        secondaries = sorted(rows["secondary"].unique())
        if secondaries != list(range(1, len(secondaries) + 1)):
            raise ValidationError(
                f"secondary labels in primary {k} must be contiguous from 1, got {secondaries}"
            )
        secs = []
        for l in secondaries:
            sids = tuple(sorted(rows.loc[rows["secondary"] == l, "survey_id"]))
            start = min(spans[s][0] for s in sids)
            end = max(spans[s][1] for s in sids)
            secs.append(Secondary(survey_ids=sids, start=start, end=end))
        built.append(tuple(secs))

    _check_ordering(built)
    mids = []
    for prim in built:
        start = min(s.start for s in prim)
        end = max(s.end for s in prim)
        mids.append(start + (end - start) / 2)
    delta = np.array(
        [(mids[k + 1] - mids[k]) / np.timedelta64(1, "D") / DAYS_PER_YEAR
         for k in range(len(mids) - 1)]
    )
    if np.any(delta <= 0):
        raise ValidationError("primary mid-points are not strictly increasing")
    return RobustDesign(primaries=tuple(built), delta=delta)


def _survey_spans(surveys: pd.DataFrame) -> dict[str, tuple[np.datetime64, np.datetime64]]:
    spans = {}
    for row in surveys.itertuples(index=False):
        start = pd.Timestamp(row.start).to_datetime64()
        end = pd.Timestamp(row.end).to_datetime64()
        if end < start:
            raise ValidationError(f"survey {row.survey_id!r} ends before it starts")
        if row.survey_id in spans:
            raise ValidationError(f"duplicate survey metadata for {row.survey_id!r}")
        spans[row.survey_id] = (start, end)
    return spans


def _check_ordering(primaries) -> None:
    prev_end = None
    for k, prim in enumerate(primaries):
        for l, sec in enumerate(prim):
            if prev_end is not None and sec.start <= prev_end:
                raise ValidationError(
                    f"secondary ({k + 1},{l + 1}) overlaps or precedes the previous occasion"
                )
            prev_end = sec.end


def rasterize_effort(
    tracks: pd.DataFrame,
    design: RobustDesign,
    cell_size: float,
    origin: tuple[float, float],
) -> TrapArray:
    """Count, per grid cell and secondary occasion, the surveys that crossed it.

    Track points are linearly interpolated between fixes; a survey contributes
    at most 1 to each cell it traverses, regardless of re-entries.  Cells are
    addressed by ``floor((coord - origin) / cell_size)`` and a traversal that
    only touches a cell corner does not count.

    Returns a :class:`TrapArray` whose traps are the cells with nonzero total
    effort, ordered by integer cell index.
    """
    if cell_size <= 0:
        raise ValidationError("cell_size must be positive")
    sec_of = design.secondary_of_survey()
    K = design.n_primaries
    L = design.max_secondaries

    counts: dict[tuple[int, int], np.ndarray] = {}
    skipped = []
    for sid, grp in tracks.groupby("survey_id", sort=True):
        if sid not in sec_of:
            logger.warning("track survey %r not in the robust design; skipped", sid)
            continue
        grp = grp.sort_values("timestamp", kind="stable")
        ts = grp["timestamp"].to_numpy()
        if len(ts) > 1 and np.any(ts[1:] <= ts[:-1]):
            raise ValidationError(f"track points of survey {sid!r} are not strictly time-ordered")
        if len(grp) < 2:
            skipped.append(sid)
            continue
        xy = grp[["x", "y"]].to_numpy(dtype=float)
        cells = _traversed_cells(xy, origin, cell_size)
        k, l = sec_of[sid]
        for cell in cells:
            slot = counts.setdefault(cell, np.zeros((K, L), dtype=np.int64))
            slot[k, l] += 1
    if skipped:
        logger.warning("%d survey(s) with fewer than 2 track points skipped: %s",
                       len(skipped), skipped)
    if not counts:
        raise ValidationError("no effort: every survey was skipped or without tracks")

    cells_sorted = sorted(counts)
    ij = np.array(cells_sorted, dtype=np.int64)
    xy = (ij + 0.5) * cell_size + np.asarray(origin, dtype=float)
    effort = np.stack([counts[c] for c in cells_sorted], axis=0)
    traps = TrapArray(xy=xy, cell_size=float(cell_size), effort=effort, ij=ij)
    traps.validate()
    return traps


def _traversed_cells(xy: np.ndarray, origin, cell_size: float) -> set[tuple[int, int]]:
    """Cells crossed by the piecewise-linear path through ``xy``."""
    ox, oy = origin
    cells: set[tuple[int, int]] = set()
    for (x0, y0), (x1, y1) in zip(xy[:-1], xy[1:]):
        cells.update(_segment_cells(x0, y0, x1, y1, ox, oy, cell_size))
    return cells


def _segment_cells(x0, y0, x1, y1, ox, oy, h) -> list[tuple[int, int]]:
    """Cells whose interior a single segment passes through.

    Crossing parameters with the grid lines split the segment into pieces;
    each piece's mid-point identifies one traversed cell.  Corner contact
    produces a zero-length piece and is dropped.
    """
    ts = [0.0, 1.0]
    dx, dy = x1 - x0, y1 - y0
    for d, p0, o in ((dx, x0, ox), (dy, y0, oy)):
        if d == 0.0:
            continue
        lo = (min(p0, p0 + d) - o) / h
        hi = (max(p0, p0 + d) - o) / h
        first = int(np.floor(lo)) + 1
        last = int(np.floor(hi))
        for i in range(first, last + 1):
            g = o + i * h
            ts.append((g - p0) / d)
    ts = np.unique(np.clip(ts, 0.0, 1.0))
    out = []
    for ta, tb in zip(ts[:-1], ts[1:]):
        if tb - ta <= 1e-12:
            continue
        tm = 0.5 * (ta + tb)
        cx = int(np.floor((x0 + tm * dx - ox) / h))
        cy = int(np.floor((y0 + tm * dy - oy) / h))
        out.append((cx, cy))
    if not out:  # zero-length segment: the containing cell
        out.append((int(np.floor((x0 - ox) / h)), int(np.floor((y0 - oy) / h))))
    return out


def build_histories(
    sightings: pd.DataFrame,
    traps: TrapArray,
    design: RobustDesign,
) -> CaptureHistories:
    """Reduce sightings to one first-sighting trap per individual and secondary.

    Sightings are assigned to the secondary occasion whose time span contains
    their timestamp (off-effort sightings are dropped with a logged count) and
    to the nearest trap by Euclidean distance, ties broken toward the lowest
    trap index.  Sightings whose nearest trap has zero effort in their
    secondary are rejected with a warning; of the surviving sightings of an
    individual within a secondary, the earliest is kept.
    """
    if len(sightings) == 0:
        K = design.n_primaries
        return CaptureHistories(ids=(), omega=np.empty((0, K, design.max_secondaries), dtype=np.int64))

    xy = sightings[["x", "y"]].to_numpy(dtype=float)
    if not np.all(np.isfinite(xy)):
        raise ValidationError("sighting coordinates must be finite")

    spans = [(sec.start, sec.end, k, l)
             for k, prim in enumerate(design.primaries)
             for l, sec in enumerate(prim)]

    when = pd.to_datetime(sightings["timestamp"]).to_numpy()
    dist = cdist(xy, traps.xy)
    nearest = dist.argmin(axis=1)
    n_ties = int(np.sum((dist == dist[np.arange(len(xy)), nearest][:, None]).sum(axis=1) > 1))
    if n_ties:
        logger.info("%d sighting(s) equidistant to several traps; lowest index kept", n_ties)

    off_effort = 0
    no_effort = 0
    kept: dict[tuple[str, int, int], tuple] = {}
    order = np.argsort(when, kind="stable")
    for idx in order:
        t = when[idx]
        slot = next(((k, l) for s, e, k, l in spans if s <= t <= e), None)
        if slot is None:
            off_effort += 1
            continue
        k, l = slot
        j = int(nearest[idx])
        if traps.effort[j, k, l] == 0:
            no_effort += 1
            continue
        key = (str(sightings["individual_id"].iloc[idx]), k, l)
        cand = (t, j)
        if key not in kept or cand < kept[key]:
            kept[key] = cand
    if off_effort:
        logger.warning("%d sighting(s) outside every survey span discarded", off_effort)
    if no_effort:
        logger.warning("%d sighting(s) rejected: nearest trap had no effort in their secondary",
                       no_effort)

    ids = tuple(sorted({key[0] for key in kept}))
    index = {ind: i for i, ind in enumerate(ids)}
    omega = np.full((len(ids), design.n_primaries, design.max_secondaries), -1, dtype=np.int64)
    for (ind, k, l), (_, j) in kept.items():
        omega[index[ind], k, l] = j
    return CaptureHistories(ids=ids, omega=omega)
