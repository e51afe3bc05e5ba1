"""Shared builders for small synthetic datasets used across the test suite."""

from __future__ import annotations

import numpy as np
import pandas as pd
import shapely

from openscr.dataset import SCRData
from openscr.mesh import Mesh, build_mesh
from openscr.survey import CaptureHistories, RobustDesign, TrapArray, build_design


def make_design(K: int, L: int = 2, gap_years: float = 0.5,
                start: str = "2015-01-01") -> RobustDesign:
    """Robust design with K primaries of L single-survey secondaries each."""
    t0 = pd.Timestamp(start)
    rows = []
    grouping = []
    for k in range(K):
        for l in range(L):
            sid = f"s{k + 1}_{l + 1}"
            day = t0 + pd.Timedelta(days=k * gap_years * 365.25 + l)
            rows.append({"survey_id": sid, "start": day, "end": day + pd.Timedelta(hours=6)})
            grouping.append({"survey_id": sid, "primary": k + 1, "secondary": l + 1})
    return build_design(pd.DataFrame(rows), pd.DataFrame(grouping))


def grid_traps(nx: int, ny: int, K: int, L: int = 2, cell: float = 1000.0,
               origin=(0.0, 0.0), effort: int | np.ndarray = 1) -> TrapArray:
    """Trap grid of nx*ny cells with constant (or supplied) effort counts."""
    ij = np.array([(i, j) for i in range(nx) for j in range(ny)])
    xy = (ij + 0.5) * cell + np.asarray(origin, dtype=float)
    J = len(ij)
    if np.isscalar(effort):
        u = np.full((J, K, L), int(effort), dtype=np.int64)
    else:
        u = np.asarray(effort, dtype=np.int64)
    return TrapArray(xy=xy, cell_size=cell, effort=u, ij=ij)


def grid_mesh(nx: int, ny: int, spacing_km: float = 1.0, origin=(0.0, 0.0)) -> Mesh:
    """Rectangular mesh of nx*ny points built through the public constructor."""
    ox, oy = origin
    h = spacing_km * 1000.0
    box = shapely.box(ox, oy, ox + nx * h, oy + ny * h)
    mesh = build_mesh(box, land=None, buffer_km=0.0, spacing_km=spacing_km)
    assert mesh.n_points == nx * ny
    return mesh


def histories_from_records(records, K: int, L: int) -> CaptureHistories:
    """Build histories from (individual, primary, secondary, trap) tuples."""
    ids = tuple(sorted({r[0] for r in records}))
    index = {i: n for n, i in enumerate(ids)}
    omega = np.full((len(ids), K, L), -1, dtype=np.int64)
    for ind, k, l, j in records:
        omega[index[ind], k, l] = j
    return CaptureHistories(ids=ids, omega=omega)


def toy_data(K: int = 2, L: int = 1, nx_traps: int = 2, ny_traps: int = 1,
             nx_mesh: int = 2, ny_mesh: int = 2, records=(), effort: int | np.ndarray = 1,
             gap_years: float = 0.5, marked_fraction: float = 1.0,
             trap_covariates: pd.DataFrame | None = None) -> SCRData:
    design = make_design(K, L, gap_years=gap_years)
    traps = grid_traps(nx_traps, ny_traps, K, L, effort=effort)
    mesh = grid_mesh(nx_mesh, ny_mesh)
    hist = histories_from_records(records, K, L)
    return SCRData(design=design, traps=traps, mesh=mesh, histories=hist,
                   trap_covariates=trap_covariates, marked_fraction=marked_fraction)


def write_pipeline_inputs(dest, seed: int = 2015, K: int = 4, L: int = 2,
                          nx: int = 6, ny: int = 4, density: float = 3.0,
                          n_draws: int = 300, n_sims: int = 100,
                          with_selection: bool = True, threads: int = 1):
    """Write a complete synthetic input tree plus config for the CLI pipeline.

    Surveys traverse every cell of an ``nx`` x ``ny`` km grid, so effort is 1
    for each trap and secondary.  Sightings are simulated from known
    intercept-only parameters and placed near their trap centers at times
    inside the right secondary occasion, so ingestion reproduces the
    simulated histories exactly.  Returns the config path.
    """
    import json
    from pathlib import Path

    from openscr.gof import simulate_dataset

    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    cell = 1000.0
    design = make_design(K, L, gap_years=0.5)
    sec_surveys = {}
    for k, prim in enumerate(design.primaries):
        for l, sec in enumerate(prim):
            sec_surveys[(k, l)] = sec

    # occasions + serpentine tracks through all cell centers
    occ_rows = []
    track_rows = []
    for k, prim in enumerate(design.primaries):
        for l, sec in enumerate(prim):
            sid = sec.survey_ids[0]
            occ_rows.append({"survey_id": sid, "primary": k + 1, "secondary": l + 1})
            t = pd.Timestamp(sec.start)
            step = pd.Timedelta(minutes=2)
            i = 0
            for cx in range(nx):
                ys = range(ny) if cx % 2 == 0 else range(ny - 1, -1, -1)
                for cy in ys:
                    track_rows.append({
                        "survey_id": sid,
                        "timestamp": t + i * step,
                        "x": (cx + 0.5) * cell,
                        "y": (cy + 0.5) * cell,
                    })
                    i += 1
    pd.DataFrame(occ_rows).to_csv(dest / "occasions.csv", index=False)
    pd.DataFrame(track_rows).to_csv(dest / "tracks.csv", index=False)

    traps = grid_traps(nx, ny, K, L, cell=cell, effort=1)
    mesh = grid_mesh(nx + 2, ny + 2, origin=(-1000.0, -1000.0))
    J, M = traps.n_traps, mesh.n_points
    params = {
        "lambda": np.full((J, K), 0.5),
        "sigma": np.full((J, K), 1200.0),
        "gamma": np.full(K - 1, 0.6),
        "phi": np.full(K - 1, 0.85),
        "D": np.full(M, density),
    }
    hist = simulate_dataset(params, traps, design, mesh, seed=seed)

    rng = np.random.default_rng(seed + 1)
    srows = []
    for i, k, l, j in hist.detections():
        sec = sec_surveys[(k, l)]
        jitter = rng.uniform(-300.0, 300.0, size=2)
        srows.append({
            "individual_id": hist.ids[i],
            "timestamp": pd.Timestamp(sec.start) + pd.Timedelta(minutes=int(rng.integers(5, 300))),
            "x": traps.xy[j, 0] + jitter[0],
            "y": traps.xy[j, 1] + jitter[1],
        })
    pd.DataFrame(srows, columns=["individual_id", "timestamp", "x", "y"]).to_csv(
        dest / "sightings.csv", index=False)

    def box_coords(x0, y0, x1, y1):
        return [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]

    def feature(label, coords):
        return {"type": "Feature", "properties": {"label": label},
                "geometry": {"type": "Polygon", "coordinates": coords}}

    def fc(features):
        return {"type": "FeatureCollection", "features": features}

    W, H = nx * cell, ny * cell
    (dest / "boundary.geojson").write_text(json.dumps(fc(
        [feature("bay", box_coords(0, 0, W, H))])))
    (dest / "strata.geojson").write_text(json.dumps(fc([
        feature("west", box_coords(-2000, -2000, W / 2, H + 2000)),
        feature("east", box_coords(W / 2, -2000, W + 2000, H + 2000)),
    ])))
    (dest / "openness.geojson").write_text(json.dumps(fc([
        feature("sheltered", box_coords(-2000, -2000, W + 2000, H / 2)),
        feature("open", box_coords(-2000, H / 2, W + 2000, H + 2000)),
    ])))
    sal_pts = []
    for sx in np.arange(-1500.0, W + 2000.0, 500.0):
        for sy in np.arange(-1500.0, H + 2000.0, 500.0):
            sal_pts.append({"x": sx, "y": sy, "value": 10.0 + 2.0 * sx / 1000.0})
    pd.DataFrame(sal_pts).to_csv(dest / "salinity.csv", index=False)

    config = {
        "paths": {
            "sightings": "sightings.csv",
            "tracks": "tracks.csv",
            "occasions": "occasions.csv",
            "boundary": "boundary.geojson",
            "strata": "strata.geojson",
            "openness": "openness.geojson",
            "salinity": "salinity.csv",
            "output_dir": "out",
        },
        "grid": {"origin": [0.0, 0.0], "cell_size_m": cell},
        "mesh": {"buffer_km": 1.0, "spacing_km": 1.0, "salinity_radius_km": 1.0},
        "population": {"marked_fraction": 0.8},
        "model": {"lambda": "1", "sigma": "1", "gamma": "1", "phi": "1", "D": "1"},
        "selection": {
            "delta_aic_window": 2.0,
            "stages": ([
                {"name": "dynamics", "smooths": [
                    {"param": "gamma", "vars": ["time"], "df_min": 2, "df_max": 3},
                    {"param": "phi", "vars": ["time"], "df_min": 2, "df_max": 3},
                ]},
            ] if with_selection else []),
        },
        "bootstrap": {"n_draws": n_draws, "seed": 20100618},
        "gof": {"n_sims": n_sims, "seed": 19820409, "resample_draws": True},
        "region": {"iqd_threshold": 0.95},
        "run": {"threads": threads},
    }
    config_path = dest / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path


def random_instance(rng: np.random.Generator, max_K: int = 3, max_L: int = 2,
                    max_J: int = 3, max_M: int = 4, max_n: int = 5):
    """Random small instance (data plus intercept-only working vector).

    Effort has random zeros; histories are random but valid (detections only
    in secondaries where the chosen trap has effort, at most one per
    secondary, no empty individuals).
    """
    K = int(rng.integers(1, max_K + 1))
    L = int(rng.integers(1, max_L + 1))
    J = int(rng.integers(1, max_J + 1))
    M = int(rng.integers(1, max_M + 1))

    design = make_design(K, L, gap_years=float(rng.uniform(0.2, 1.5)))
    effort = rng.integers(0, 3, size=(J, K, L))
    for j in range(J):  # every trap needs some effort
        if effort[j].sum() == 0:
            effort[j, rng.integers(K), rng.integers(L)] = 1
    traps = grid_traps(J, 1, K, L, cell=1000.0, effort=effort)
    mesh = grid_mesh(max(1, M // 2 + M % 2), 2 if M > 1 else 1)
    # trim mesh to exactly M points
    mesh = Mesh(xy=mesh.xy[:M], cell_area=mesh.cell_area,
                covariates=mesh.covariates.iloc[:M].reset_index(drop=True))

    n = int(rng.integers(0, max_n + 1))
    records = []
    for i in range(n):
        got = False
        for k in range(K):
            for l in range(L):
                if rng.random() < 0.4:
                    live = np.flatnonzero(effort[:, k, l] > 0)
                    if len(live):
                        records.append((f"a{i}", k, l, int(rng.choice(live))))
                        got = True
        if not got:
            k, l = next(((k, l) for k in range(K) for l in range(L)
                         if effort[:, k, l].sum() > 0))
            live = np.flatnonzero(effort[:, k, l] > 0)
            records.append((f"a{i}", k, l, int(rng.choice(live))))
    hist = histories_from_records(records, K, L)
    data = SCRData(design=design, traps=traps, mesh=mesh, histories=hist)

    theta = np.concatenate([
        [np.log(rng.uniform(0.2, 1.5))],                       # lambda
        [np.log(rng.uniform(800.0, 2500.0))],                  # sigma (m)
        [np.log(rng.uniform(0.1, 1.2))] if K > 1 else [],      # gamma
        [np.log(rng.uniform(0.6, 0.95) / (1 - rng.uniform(0.6, 0.95)))] if K > 1 else [],
        [np.log(rng.uniform(0.5, 4.0))],                       # D per km²
    ])
    return data, theta
