"""Readers and writers for survey inputs and workflow artifacts.

Input tables are CSV, spatial layers are GeoJSON, and every artifact written
by the pipeline is a CSV or JSON file with a fixed column order and 15
significant digits, so identical runs produce byte-identical files.  A
manifest records input hashes, seeds, and the package version per stage.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import shape as geojson_shape

from . import __version__
from .dataset import SCRData
from .errors import ValidationError
from .mesh import Mesh, RasterCovariate
from .survey import CaptureHistories, RobustDesign, Secondary, TrapArray

FLOAT_FORMAT = "%.15g"


# ---------------------------------------------------------------------------
# Generic helpers


def write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def require_columns(frame: pd.DataFrame, columns, path) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing column(s) {missing}")


# ---------------------------------------------------------------------------
# Survey inputs


def read_sightings(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    require_columns(frame, ["individual_id", "timestamp", "x", "y"], path)
    frame["timestamp"] = pd.to_datetime(frame["timestamp"])
    return frame


def read_tracks(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    require_columns(frame, ["survey_id", "timestamp", "x", "y"], path)
    frame["timestamp"] = pd.to_datetime(frame["timestamp"])
    return frame


def read_occasions(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    require_columns(frame, ["survey_id", "primary", "secondary"], path)
    return frame


def surveys_from_tracks(tracks: pd.DataFrame) -> pd.DataFrame:
    """Survey time spans taken from each survey's first and last GPS fix."""
    grouped = tracks.groupby("survey_id")["timestamp"]
    return pd.DataFrame({
        "survey_id": grouped.min().index,
        "start": grouped.min().to_numpy(),
        "end": grouped.max().to_numpy(),
    })


def read_polygons(path):
    """Labeled geometries from a GeoJSON file.

    Returns a list of ``(label, geometry)`` pairs in feature order; features
    without a ``label`` property get their ordinal as label.
    """
    data = read_json(path)
    out = []
    if data.get("type") == "FeatureCollection":
        for i, feature in enumerate(data["features"]):
            props = feature.get("properties") or {}
            out.append((str(props.get("label", i)), geojson_shape(feature["geometry"])))
    elif data.get("type") == "Feature":
        label = (data.get("properties") or {}).get("label", "0")
        out.append((str(label), geojson_shape(data["geometry"])))
    else:
        out.append(("0", geojson_shape(data)))
    return out


def read_raster_csv(path) -> RasterCovariate:
    frame = pd.read_csv(path)
    require_columns(frame, ["x", "y", "value"], path)
    return RasterCovariate(xy=frame[["x", "y"]].to_numpy(dtype=float),
                           values=frame["value"].to_numpy(dtype=float))


# ---------------------------------------------------------------------------
# Robust design round trip


def design_to_dict(design: RobustDesign) -> dict:
    return {
        "primaries": [
            [{"survey_ids": list(sec.survey_ids),
              "start": str(np.datetime64(sec.start, "ns")),
              "end": str(np.datetime64(sec.end, "ns"))}
             for sec in primary]
            for primary in design.primaries
        ],
        "delta_years": design.delta.tolist(),
    }


def design_from_dict(data: dict) -> RobustDesign:
    primaries = tuple(
        tuple(Secondary(survey_ids=tuple(sec["survey_ids"]),
                        start=np.datetime64(sec["start"]),
                        end=np.datetime64(sec["end"]))
              for sec in primary)
        for primary in data["primaries"]
    )
    return RobustDesign(primaries=primaries, delta=np.asarray(data["delta_years"]))


# ---------------------------------------------------------------------------
# Trap, history, and mesh artifacts


def traps_to_frames(traps: TrapArray):
    trap_rows = pd.DataFrame({
        "trap": np.arange(traps.n_traps),
        "x": traps.xy[:, 0],
        "y": traps.xy[:, 1],
    })
    if traps.ij is not None:
        trap_rows["ix"] = traps.ij[:, 0]
        trap_rows["iy"] = traps.ij[:, 1]
    j, k, l = np.nonzero(traps.effort)
    effort_rows = pd.DataFrame({
        "trap": j, "primary": k + 1, "secondary": l + 1,
        "effort": traps.effort[j, k, l],
    })
    return trap_rows, effort_rows


def _check_range(frame: pd.DataFrame, column: str, lo: int, hi: int, what: str) -> None:
    bad = frame.index[(frame[column] < lo) | (frame[column] > hi)]
    if len(bad):
        # +2 converts the 0-based data row to the CSV line (header is line 1)
        raise ValidationError(
            f"{what} line {int(bad[0]) + 2}: {column}={frame[column].iloc[bad[0]]} "
            f"outside [{lo}, {hi}]")


def traps_from_frames(trap_rows: pd.DataFrame, effort_rows: pd.DataFrame,
                      cell_size: float, n_primaries: int, max_secondaries: int) -> TrapArray:
    xy = trap_rows[["x", "y"]].to_numpy(dtype=float)
    ij = None
    if {"ix", "iy"}.issubset(trap_rows.columns):
        ij = trap_rows[["ix", "iy"]].to_numpy(dtype=np.int64)
    _check_range(effort_rows, "trap", 0, len(xy) - 1, "effort.csv")
    _check_range(effort_rows, "primary", 1, n_primaries, "effort.csv")
    _check_range(effort_rows, "secondary", 1, max_secondaries, "effort.csv")
    effort = np.zeros((len(xy), n_primaries, max_secondaries), dtype=np.int64)
    effort[effort_rows["trap"], effort_rows["primary"] - 1,
           effort_rows["secondary"] - 1] = effort_rows["effort"]
    return TrapArray(xy=xy, cell_size=cell_size, effort=effort, ij=ij)


def histories_to_frame(histories: CaptureHistories) -> pd.DataFrame:
    rows = [(histories.ids[i], k + 1, l + 1, j)
            for i, k, l, j in histories.detections()]
    return pd.DataFrame(rows, columns=["individual_id", "primary", "secondary", "trap"])


def histories_from_frame(frame: pd.DataFrame, n_primaries: int,
                         max_secondaries: int) -> CaptureHistories:
    if len(frame):
        _check_range(frame, "primary", 1, n_primaries, "histories.csv")
        _check_range(frame, "secondary", 1, max_secondaries, "histories.csv")
        _check_range(frame, "trap", 0, np.iinfo(np.int64).max, "histories.csv")
    ids = tuple(sorted(map(str, frame["individual_id"].unique())))
    index = {v: i for i, v in enumerate(ids)}
    omega = np.full((len(ids), n_primaries, max_secondaries), -1, dtype=np.int64)
    for row in frame.itertuples(index=False):
        omega[index[str(row.individual_id)], row.primary - 1, row.secondary - 1] = row.trap
    return CaptureHistories(ids=ids, omega=omega)


def mesh_to_frame(mesh: Mesh) -> pd.DataFrame:
    out = pd.DataFrame({"x": mesh.xy[:, 0], "y": mesh.xy[:, 1],
                        "area": np.full(mesh.n_points, mesh.cell_area)})
    for col in mesh.covariates.columns:
        if col in ("x", "y"):
            continue
        out[col] = mesh.covariates[col].to_numpy()
    return out


def mesh_from_frame(frame: pd.DataFrame) -> Mesh:
    xy = frame[["x", "y"]].to_numpy(dtype=float)
    area = float(frame["area"].iloc[0])
    cov = pd.DataFrame({"x": xy[:, 0] / 1000.0, "y": xy[:, 1] / 1000.0})
    for col in frame.columns:
        if col in ("x", "y", "area"):
            continue
        values = frame[col]
        if values.dtype == object:
            cov[col] = pd.Categorical(values.astype(str))
        else:
            cov[col] = values.to_numpy()
    return Mesh(xy=xy, cell_area=area, covariates=cov)


# ---------------------------------------------------------------------------
# Assembled dataset artifacts


def save_data_artifacts(out_dir: Path, design: RobustDesign, traps: TrapArray,
                        histories: CaptureHistories) -> None:
    write_json(design_to_dict(design), out_dir / "design.json")
    trap_rows, effort_rows = traps_to_frames(traps)
    trap_rows_meta = {"cell_size_m": traps.cell_size}
    write_csv(trap_rows, out_dir / "traps.csv")
    write_csv(effort_rows, out_dir / "effort.csv")
    write_json(trap_rows_meta, out_dir / "traps_meta.json")
    write_csv(histories_to_frame(histories), out_dir / "histories.csv")


def load_data_artifacts(out_dir: Path):
    design = design_from_dict(read_json(out_dir / "design.json"))
    meta = read_json(out_dir / "traps_meta.json")
    traps = traps_from_frames(pd.read_csv(out_dir / "traps.csv"),
                              pd.read_csv(out_dir / "effort.csv"),
                              cell_size=float(meta["cell_size_m"]),
                              n_primaries=design.n_primaries,
                              max_secondaries=design.max_secondaries)
    hist_frame = pd.read_csv(out_dir / "histories.csv")
    histories = histories_from_frame(hist_frame, design.n_primaries,
                                     design.max_secondaries)
    return design, traps, histories


def load_scr_data(out_dir: Path, marked_fraction: float = 1.0) -> SCRData:
    """Assemble an :class:`SCRData` from the ingest and mesh artifacts."""
    design, traps, histories = load_data_artifacts(out_dir)
    mesh_path = out_dir / "mesh.csv"
    if not mesh_path.exists():
        raise ValidationError(f"missing artifact {mesh_path}; run the mesh stage first")
    mesh = mesh_from_frame(pd.read_csv(mesh_path))
    trap_cov = None
    cov_path = out_dir / "trap_covariates.csv"
    if cov_path.exists():
        trap_cov = pd.read_csv(cov_path)
        for col in trap_cov.columns:
            if trap_cov[col].dtype == object:
                trap_cov[col] = pd.Categorical(trap_cov[col].astype(str))
    data = SCRData(design=design, traps=traps, mesh=mesh, histories=histories,
                   trap_covariates=trap_cov, marked_fraction=marked_fraction)
    data.validate()
    return data


# ---------------------------------------------------------------------------
# Manifest


def update_manifest(out_dir: Path, stage: str, inputs: dict[str, Path],
                    seeds: dict | None = None, extra: dict | None = None) -> None:
    path = out_dir / "manifest.json"
    manifest = read_json(path) if path.exists() else {}
    entry = {
        "version": __version__,
        "inputs": {str(name): sha256_file(p) for name, p in sorted(inputs.items())
                   if Path(p).exists()},
    }
    if seeds:
        entry["seeds"] = seeds
    if extra:
        entry.update(extra)
    manifest[stage] = entry
    write_json(manifest, path)
