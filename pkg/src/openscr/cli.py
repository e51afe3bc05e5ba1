"""Command-line workflow: ingest -> mesh -> fit -> select -> boot -> gof -> report.

Every stage reads a single TOML or JSON config file, consumes the artifacts
of earlier stages from the output directory, writes its own versioned
artifacts plus a manifest entry, and is deterministic given the configured
seeds (including across thread counts).

Exit codes: 0 success, 2 validation/configuration problems, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, io
from .bootstrap import (
    iqd_region,
    load_draws,
    model_average_bootstrap,
    recruitment_table,
    salinity_bands,
    save_draws,
    summarize_density,
    survival_table,
)
from .dataset import SCRData
from .design import ModelSpec, expand_params
from .errors import NumericalError, OpenSCRError, ValidationError
from .fit import (
    CandidateSet,
    FitResult,
    SelectionStage,
    SmoothCandidate,
    aic_score,
    maximize,
    stepwise_select,
)
from .gof import run_gof
from .likelihood import Likelihood
from .mesh import attach_categorical, attach_salinity, build_mesh, label_points
from .survey import build_design, build_histories, rasterize_effort
from shapely.ops import unary_union

logger = logging.getLogger(__name__)

COMMANDS = ("ingest", "mesh", "fit", "select", "boot", "gof", "report", "all")
PIPELINE = ("ingest", "mesh", "fit", "select", "boot", "gof", "report")


@dataclass
class RunConfig:
    root: Path
    out_dir: Path
    paths: dict
    grid_origin: tuple[float, float]
    cell_size_m: float
    buffer_km: float
    spacing_km: float
    salinity_radius_km: float
    marked_fraction: float
    model: dict
    selection_stages: list
    delta_aic_window: float
    boot_n_draws: int
    boot_seed: int
    gof_n_sims: int
    gof_seed: int
    gof_resample: bool
    iqd_threshold: float
    threads: int

    def path(self, name: str, required_by: str | None = None) -> Path | None:
        p = self.paths.get(name)
        if p is None and required_by:
            raise ValidationError(f"config: paths.{name} is required by stage {required_by!r}")
        return p

    def artifact(self, name: str, stage: str) -> Path:
        p = self.out_dir / name
        if not p.exists():
            raise ValidationError(
                f"missing artifact {name!r}; run the {stage!r} stage first")
        return p


def _load_raw_config(path: Path) -> dict:
    text = path.read_bytes()
    if path.suffix.lower() in (".toml", ".tml"):
        try:
            import tomllib  # python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    return json.loads(text.decode())


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    raw = _load_raw_config(path)
    root = path.parent

    def section(name):
        return raw.get(name, {}) or {}

    paths = {}
    for key, value in section("paths").items():
        if key == "output_dir":
            continue
        p = root / value
        if not p.exists():
            raise ValidationError(f"config: paths.{key} = {value!r} does not exist")
        paths[key] = p
    out_dir = root / section("paths").get("output_dir", "out")
    out_dir.mkdir(parents=True, exist_ok=True)

    grid = section("grid")
    mesh = section("mesh")
    pop = section("population")
    model = {k: str(v) for k, v in section("model").items()}
    sel = section("selection")
    boot = section("bootstrap")
    gof = section("gof")
    region = section("region")
    run = section("run")

    marked = float(pop.get("marked_fraction", 1.0))
    if not 0 < marked <= 1:
        raise ValidationError("config: population.marked_fraction must be in (0, 1]")
    cfg = RunConfig(
        root=root,
        out_dir=out_dir,
        paths=paths,
        grid_origin=tuple(grid.get("origin", (0.0, 0.0))),
        cell_size_m=float(grid.get("cell_size_m", 1000.0)),
        buffer_km=float(mesh.get("buffer_km", 1.0)),
        spacing_km=float(mesh.get("spacing_km", 1.0)),
        salinity_radius_km=float(mesh.get("salinity_radius_km", 1.0)),
        marked_fraction=marked,
        model=model,
        selection_stages=_parse_stages(sel.get("stages", [])),
        delta_aic_window=float(sel.get("delta_aic_window", 2.0)),
        boot_n_draws=int(boot.get("n_draws", 1000)),
        boot_seed=int(boot.get("seed", 1)),
        gof_n_sims=int(gof.get("n_sims", 200)),
        gof_seed=int(gof.get("seed", 2)),
        gof_resample=bool(gof.get("resample_draws", True)),
        iqd_threshold=float(region.get("iqd_threshold", 0.95)),
        threads=int(run.get("threads", 1)),
    )
    for name, value in (("cell_size_m", cfg.cell_size_m), ("spacing_km", cfg.spacing_km),
                        ("iqd_threshold", cfg.iqd_threshold)):
        if value <= 0:
            raise ValidationError(f"config: {name} must be positive")
    if cfg.boot_n_draws < 1 or cfg.gof_n_sims < 1:
        raise ValidationError("config: bootstrap.n_draws and gof.n_sims must be >= 1")
    return cfg


def _parse_stages(items) -> list[SelectionStage]:
    stages = []
    for item in items:
        factors = []
        for token in item.get("factors", []):
            param, _, cov = str(token).partition(":")
            if not cov:
                raise ValidationError(f"config: factor {token!r} must look like 'param:covariate'")
            factors.append((param.strip(), cov.strip()))
        smooths = []
        for sm in item.get("smooths", []):
            smooths.append(SmoothCandidate(
                param=str(sm["param"]),
                variables=tuple(sm["vars"]),
                df_min=int(sm.get("df_min", 2)),
                df_max=int(sm["df_max"]),
                df_start=int(sm["df_start"]) if "df_start" in sm else None,
            ))
        stages.append(SelectionStage(name=str(item.get("name", f"stage{len(stages)}")),
                                     factors=tuple(factors), smooths=tuple(smooths)))
    return stages


def _model_spec(cfg: RunConfig) -> ModelSpec:
    known = {"lambda": "lam", "sigma": "sigma", "gamma": "gamma", "phi": "phi", "D": "D"}
    kwargs = {}
    for key, value in cfg.model.items():
        if key not in known:
            raise ValidationError(f"config: unknown model parameter {key!r}")
        kwargs[known[key]] = value
    return ModelSpec(**kwargs)


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(cfg: RunConfig) -> None:
    tracks = io.read_tracks(cfg.path("tracks", "ingest"))
    occasions = io.read_occasions(cfg.path("occasions", "ingest"))
    sightings = io.read_sightings(cfg.path("sightings", "ingest"))
    design = build_design(io.surveys_from_tracks(tracks), occasions)
    traps = rasterize_effort(tracks, design, cfg.cell_size_m, cfg.grid_origin)
    histories = build_histories(sightings, traps, design)
    io.save_data_artifacts(cfg.out_dir, design, traps, histories)
    io.update_manifest(cfg.out_dir, "ingest",
                       {k: cfg.paths[k] for k in ("tracks", "occasions", "sightings")},
                       extra={"n_traps": traps.n_traps,
                              "n_individuals": histories.n_individuals,
                              "n_primaries": design.n_primaries})


def stage_mesh(cfg: RunConfig) -> None:
    cfg.artifact("traps.csv", "ingest")
    boundary_path = cfg.path("boundary", "mesh")
    boundary = unary_union([g for _, g in io.read_polygons(boundary_path)])
    land = None
    if cfg.path("land") is not None:
        land = unary_union([g for _, g in io.read_polygons(cfg.path("land"))])
    mesh = build_mesh(boundary, land, buffer_km=cfg.buffer_km, spacing_km=cfg.spacing_km)

    trap_rows = pd.read_csv(cfg.out_dir / "traps.csv")
    trap_xy = trap_rows[["x", "y"]].to_numpy(dtype=float)
    trap_cov = pd.DataFrame(index=range(len(trap_xy)))
    inputs = {"boundary": boundary_path}
    for name in ("stratum", "openness"):
        key = {"stratum": "strata", "openness": "openness"}[name]
        if cfg.path(key) is None:
            continue
        labeled = io.read_polygons(cfg.path(key))
        mesh = attach_categorical(mesh, name, labeled)
        trap_cov[name] = label_points(trap_xy, labeled, name)
        inputs[key] = cfg.paths[key]
    if cfg.path("salinity") is not None:
        raster = io.read_raster_csv(cfg.path("salinity"))
        mesh = attach_salinity(mesh, raster, cfg.salinity_radius_km)
        inputs["salinity"] = cfg.paths["salinity"]
    if cfg.path("land") is not None:
        inputs["land"] = cfg.paths["land"]

    io.write_csv(io.mesh_to_frame(mesh), cfg.out_dir / "mesh.csv")
    if len(trap_cov.columns):
        io.write_csv(trap_cov, cfg.out_dir / "trap_covariates.csv")
    io.update_manifest(cfg.out_dir, "mesh", inputs,
                       extra={"n_mesh_points": mesh.n_points})


def _fit_payload(fit: FitResult) -> dict:
    return {
        "formulas": fit.spec.formulas,
        "names": list(fit.names),
        "theta": fit.theta.tolist(),
        "vcov": fit.vcov.tolist() if fit.vcov is not None else None,
        "loglik": fit.loglik,
        "aic": fit.aic,
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
    }


def _fit_from_payload(payload: dict, data: SCRData) -> FitResult:
    spec = ModelSpec(lam=payload["formulas"]["lambda"], sigma=payload["formulas"]["sigma"],
                     gamma=payload["formulas"]["gamma"], phi=payload["formulas"]["phi"],
                     D=payload["formulas"]["D"])
    lik = Likelihood(spec, data)
    vcov = payload["vcov"]
    return FitResult(spec=spec, theta=np.asarray(payload["theta"]),
                     vcov=None if vcov is None else np.asarray(vcov),
                     loglik=float(payload["loglik"]), aic=float(payload["aic"]),
                     converged=bool(payload["converged"]),
                     iterations=int(payload["iterations"]),
                     names=lik.pmap.names, pmap=lik.pmap)


def _load_data(cfg: RunConfig) -> SCRData:
    cfg.artifact("design.json", "ingest")
    cfg.artifact("mesh.csv", "mesh")
    return io.load_scr_data(cfg.out_dir, cfg.marked_fraction)


def stage_fit(cfg: RunConfig) -> None:
    data = _load_data(cfg)
    fit = maximize(_model_spec(cfg), data)
    io.write_json(_fit_payload(fit), cfg.out_dir / "fit.json")
    io.update_manifest(cfg.out_dir, "fit", {}, extra={"aic": fit.aic,
                                                      "converged": bool(fit.converged)})
    if not fit.converged:
        logger.warning("fit did not converge; result flagged in fit.json")


def stage_select(cfg: RunConfig) -> None:
    data = _load_data(cfg)
    result = stepwise_select(data, cfg.selection_stages, base_spec=_model_spec(cfg),
                             delta_window=cfg.delta_aic_window)
    payload = {
        "best_formulas": result.best_spec.formulas,
        "weights": result.candidates.weights.tolist(),
        "fits": [_fit_payload(f) for f in result.candidates.fits],
    }
    io.write_json(payload, cfg.out_dir / "candidates.json")
    io.write_csv(result.history, cfg.out_dir / "selection_history.csv")
    stacked = []
    for name, table in result.stage_tables.items():
        io.write_csv(table, cfg.out_dir / f"selection_{name}.csv")
        stacked.append(table.assign(stage=name))
    if stacked:
        combined = pd.concat(stacked, ignore_index=True)
        cols = ["stage"] + [c for c in combined.columns if c != "stage"]
        io.write_csv(combined[cols], cfg.out_dir / "selection_table.csv")
    else:
        io.write_csv(pd.DataFrame(columns=["stage", "loglik", "aic", "delta_aic"]),
                     cfg.out_dir / "selection_table.csv")
    io.update_manifest(cfg.out_dir, "select", {},
                       extra={"n_candidates": len(result.candidates.fits)})


def _load_candidates(cfg: RunConfig, data: SCRData) -> CandidateSet:
    path = cfg.artifact("candidates.json", "select")
    payload = io.read_json(path)
    fits = tuple(_fit_from_payload(p, data) for p in payload["fits"])
    weights = np.asarray(payload["weights"], dtype=float)
    return CandidateSet(fits=fits, weights=weights / weights.sum())


def stage_boot(cfg: RunConfig) -> None:
    data = _load_data(cfg)
    candidates = _load_candidates(cfg, data)
    draws = model_average_bootstrap(candidates, data, cfg.boot_n_draws,
                                    cfg.boot_seed, threads=cfg.threads)
    save_draws(draws, cfg.out_dir / "draws.npz")
    region = iqd_region(draws, cfg.iqd_threshold)
    density, abundance = summarize_density(draws, data, region)
    io.write_csv(density, cfg.out_dir / "density_mean.csv")
    io.write_csv(abundance, cfg.out_dir / "abundance.csv")
    if data.design.n_primaries > 1:
        io.write_csv(survival_table(draws, data), cfg.out_dir / "survival.csv")
        io.write_csv(recruitment_table(draws, data), cfg.out_dir / "recruitment.csv")
    if "avg_salinity" in data.mesh.covariates.columns:
        io.write_csv(salinity_bands(draws, data, region=region),
                     cfg.out_dir / "salinity_bands.csv")
    io.update_manifest(cfg.out_dir, "boot", {}, seeds={"bootstrap": cfg.boot_seed},
                       extra={"n_draws": cfg.boot_n_draws,
                              "kept_points": int(region.keep.sum())})


def stage_gof(cfg: RunConfig) -> None:
    data = _load_data(cfg)
    draws = load_draws(cfg.artifact("draws.npz", "boot"))
    fields = None
    if not cfg.gof_resample:
        candidates = _load_candidates(cfg, data)
        best = candidates.best
        fields = expand_params(best.theta, best.pmap)
    report = run_gof(draws, data, cfg.gof_n_sims, cfg.gof_seed,
                     fields=fields, threads=cfg.threads)

    payload = {"n_sims": report.n_sims, "seed": report.seed,
               "resampled_draws": report.resampled_draws, "tests": {}}
    for name, test in report.tests.items():
        payload["tests"][name] = {
            "labels": list(test.labels),
            "observed": test.observed.tolist(),
            "p_values": test.p_values.tolist(),
            "envelope_lo": test.lo.tolist(),
            "envelope_hi": test.hi.tolist(),
            "inside_envelope": test.inside_envelope,
        }
    io.write_json(payload, cfg.out_dir / "gof.json")

    new = report.tests["new_individuals"]
    io.write_csv(pd.DataFrame({
        "primary": np.arange(1, len(new.observed) + 1),
        "observed": new.observed, "sim_mean": new.sims.mean(axis=0),
        "lo": new.lo, "hi": new.hi, "p": new.p_values,
    }), cfg.out_dir / "gof_new_individuals.csv")

    tb = report.tests["time_between"]
    io.write_csv(pd.DataFrame({
        "observed": tb.observed, "sim_mean": tb.sims.mean(axis=0),
        "lo": tb.lo, "hi": tb.hi, "p": tb.p_values,
    }), cfg.out_dir / "gof_time_between.csv")

    traps_frame = pd.read_csv(cfg.out_dir / "traps.csv")
    tc = report.tests["trap_counts"]
    trap_table = pd.DataFrame({
        "trap": np.arange(len(tc.observed)),
        "x": traps_frame["x"], "y": traps_frame["y"],
        "observed": tc.observed, "sim_mean": tc.sims.mean(axis=0),
        "lo": tc.lo, "hi": tc.hi, "p": tc.p_values,
    })
    io.write_csv(trap_table, cfg.out_dir / "gof_trap_counts.csv")

    cov_path = cfg.out_dir / "trap_covariates.csv"
    if cov_path.exists():
        cov = pd.read_csv(cov_path)
        if "stratum" in cov.columns:
            rows = []
            for stratum, idx in cov.groupby("stratum").groups.items():
                sel = np.asarray(list(idx), dtype=int)
                sims_mean = tc.sims[:, sel].mean(axis=1)
                obs = float(tc.observed[sel].mean())
                rows.append({
                    "stratum": stratum, "observed_mean_per_trap": obs,
                    "sim_mean": sims_mean.mean(),
                    "lo": np.quantile(sims_mean, 0.025),
                    "hi": np.quantile(sims_mean, 0.975),
                })
            io.write_csv(pd.DataFrame(rows), cfg.out_dir / "gof_trap_strata.csv")
    io.update_manifest(cfg.out_dir, "gof", {}, seeds={"gof": cfg.gof_seed},
                       extra={"n_sims": cfg.gof_n_sims})


def stage_report(cfg: RunConfig) -> None:
    report_dir = cfg.out_dir / "report"
    report_dir.mkdir(exist_ok=True)

    design = io.design_from_dict(io.read_json(cfg.artifact("design.json", "ingest")))
    intervals = pd.DataFrame({
        "Interval": [f"{k + 1}--{k + 2}" for k in range(design.n_primaries - 1)],
        "Duration": np.round(design.delta, 1),
    })
    io.write_csv(intervals, report_dir / "intervals.csv")

    for table in sorted(cfg.out_dir.glob("selection_*.csv")):
        if table.name == "selection_history.csv":
            continue
        frame = pd.read_csv(table)
        cols = [c for c in frame.columns if c not in ("loglik", "aic", "delta_aic")]
        out = frame.sort_values("delta_aic", kind="stable").head(10)
        out = out[cols + ["delta_aic"]].rename(columns={"delta_aic": "dAIC"})
        io.write_csv(out, report_dir / table.name)

    surv_path = cfg.out_dir / "survival.csv"
    if surv_path.exists():
        surv = pd.read_csv(surv_path)
        out = surv.rename(columns={"date": "Date", "phi": "phi",
                                   "lcl": "LCL", "ucl": "UCL"})
        io.write_csv(out[["Date", "phi", "LCL", "UCL"]], report_dir / "survival.csv")
        rec = pd.read_csv(cfg.out_dir / "recruitment.csv")
        io.write_csv(rec.rename(columns={"date": "Date", "lcl": "LCL", "ucl": "UCL"})[
            ["Date", "recruits_per_year", "LCL", "UCL"]], report_dir / "recruitment.csv")

    abundance = pd.read_csv(cfg.artifact("abundance.csv", "boot"))
    io.write_csv(abundance[["primary", "date", "N", "lcl", "ucl"]],
                 report_dir / "abundance.csv")
    density = pd.read_csv(cfg.artifact("density_mean.csv", "boot"))
    io.write_csv(density[["x", "y", "mean", "lcl", "ucl", "iqd", "kept"]],
                 report_dir / "density_mean.csv")
    bands_path = cfg.out_dir / "salinity_bands.csv"
    if bands_path.exists():
        io.write_csv(pd.read_csv(bands_path), report_dir / "salinity_bands.csv")
    for name in ("gof_new_individuals.csv", "gof_time_between.csv",
                 "gof_trap_counts.csv", "gof_trap_strata.csv"):
        p = cfg.out_dir / name
        if p.exists():
            io.write_csv(pd.read_csv(p), report_dir / name)
    io.update_manifest(cfg.out_dir, "report", {})


STAGES = {
    "ingest": stage_ingest,
    "mesh": stage_mesh,
    "fit": stage_fit,
    "select": stage_select,
    "boot": stage_boot,
    "gof": stage_gof,
    "report": stage_report,
}


def run(command: str, cfg: RunConfig) -> None:
    """Run one stage (or the whole pipeline for ``all``)."""
    if command == "all":
        for name in PIPELINE:
            logger.info("stage %s", name)
            STAGES[name](cfg)
    else:
        STAGES[command](cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="openscr",
        description="Open-population spatial capture-recapture workflow")
    parser.add_argument("command", nargs="?", choices=COMMANDS,
                        help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="TOML or JSON config file")
    parser.add_argument("--stage", choices=COMMANDS, dest="stage",
                        help="alternative to the positional command")
    parser.add_argument("--threads", type=int, default=None,
                        help="override run.threads from the config")
    parser.add_argument("--seed-override", type=int, default=None,
                        help="replace the bootstrap and gof seeds")
    parser.add_argument("--version", action="version", version=__version__)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    command = args.command or args.stage
    if command is None:
        parser.error("a command (or --stage) is required")
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            cfg.threads = int(args.threads)
        if args.seed_override is not None:
            cfg.boot_seed = int(args.seed_override)
            cfg.gof_seed = int(args.seed_override)
        run(command, cfg)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except pd.errors.ParserError as err:
        # pandas includes the offending line number in its message
        print(f"error: malformed input table: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except OpenSCRError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
