"""Command-line pipeline: simulate, build, estimate, and report.

Every command reads only its declared inputs, writes only into the
output directory, and finishes by writing a manifest with content
digests of inputs and outputs plus the config hash, so identical runs
are byte-identical and verifiable.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, io, met, raster
from .config import RunConfig, validate_config
from .errors import ExposureIVError
from .estimator import balance_test, lives_saved, naive_fixed_effects, post_lasso_2sls
from .exposure import build_instrument_matrix, policy_columns
from .panel import PanelData, assemble, filter_subsample, summarize
from .synth import RNG_ALGORITHM, DgpConfig, counties_frame, generate

READ_COMMANDS = {"build-exposure", "build-panel", "estimate", "balance-test", "summarize"}

SUMMARY_VARIABLES = [
    "mortality_per_1000",
    "so2_du",
    "pm25",
    "prim_gdp_pc",
    "sec_gdp_pc",
    "hospital_beds_per_10k",
]


class _Run:
    """Tracks files written by one command; removes them all on failure."""

    def __init__(self, cfg: RunConfig, command: str, config_path: str):
        self.cfg = cfg
        self.command = command
        self.out_dir = io.ensure_dir(cfg.output_dir)
        self.config_digest = io.sha256_file(config_path)
        self.outputs: list[Path] = []
        self.inputs: dict[str, str] = {}

    def out_path(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(path)
        return path

    def declare_input(self, path) -> str:
        path = str(path)
        self.inputs[path] = io.sha256_file(path)
        return path

    def abort(self) -> None:
        for path in self.outputs:
            Path(path).unlink(missing_ok=True)

    def finish(self) -> Path:
        manifest = {
            "command": self.command,
            "package_version": __version__,
            "rng_algorithm": RNG_ALGORITHM,
            "seed": self.cfg.seed,
            "config_sha256": self.config_digest,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {
                str(p): io.sha256_file(p) for p in sorted(self.outputs, key=str) if Path(p).exists()
            },
        }
        path = self.out_dir / f"manifest_{self.command.replace('-', '_')}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _instrument_matrix_path(cfg: RunConfig) -> str:
    return cfg.inputs.get("instruments", str(Path(cfg.output_dir) / "instrument_matrix.csv"))


def cmd_simulate(run: _Run) -> None:
    cfg = run.cfg
    sim = cfg.simulate
    dgp = DgpConfig(
        seed=cfg.seed,
        n_counties=int(sim["n_counties"]),
        n_years=int(sim["n_years"]),
        n_plants=int(sim["n_plants"]),
        true_theta_so2=float(sim["true_theta_so2"]),
        true_theta_pm=float(sim["true_theta_pm"]),
        instrument_strength=float(sim["instrument_strength"]),
        confounder_strength=float(sim["confounder_strength"]),
        noise_sd_pollution=float(sim["noise_sd_pollution"]),
        noise_sd_mortality=float(sim["noise_sd_mortality"]),
    )
    bundle = generate(dgp)

    io.write_plants(bundle.plants, run.out_path("plants.csv"))
    io.write_counties(bundle.counties, run.out_path("counties.csv"))
    io.write_frame(bundle.mortality, run.out_path("mortality.csv"), io.MORTALITY_HEADER)
    io.write_frame(bundle.weather, run.out_path("weather.csv"), io.WEATHER_HEADER)
    io.write_frame(bundle.grid, run.out_path("grid.csv"), io.GRID_HEADER)
    io.write_frame(bundle.socio, run.out_path("socio.csv"), io.SOCIO_HEADER)

    truth = {
        "rng_algorithm": RNG_ALGORITHM,
        "seed": dgp.seed,
        "theta_so2": dgp.true_theta_so2,
        "theta_pm": dgp.true_theta_pm,
        "instrument_strength": dgp.instrument_strength,
        "confounder_strength": dgp.confounder_strength,
        "so2_signal_columns": bundle.truth["so2_signal_columns"],
        "pm_signal_columns": bundle.truth["pm_signal_columns"],
        "clipped": bundle.truth["clipped"],
        "mortality_clipped": bundle.truth["mortality_clipped"],
    }
    run.out_path("truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    # ready-to-run config pointing at the bundle, with the region map filled in
    echo = run.cfg.to_dict()
    echo["inputs"] = {
        "plants": str(run.out_dir / "plants.csv"),
        "counties": str(run.out_dir / "counties.csv"),
        "mortality": str(run.out_dir / "mortality.csv"),
        "weather": str(run.out_dir / "weather.csv"),
        "grid": str(run.out_dir / "grid.csv"),
        "socio": str(run.out_dir / "socio.csv"),
    }
    echo["regions"] = {k: dict(v) for k, v in sorted(bundle.region_map.items())}
    echo["panel_years"] = [bundle.panel_years[0], bundle.panel_years[-1]]
    import yaml

    run.out_path("simulated_config.yaml").write_text(
        yaml.safe_dump(echo, sort_keys=True), encoding="utf-8"
    )


def cmd_build_exposure(run: _Run) -> None:
    cfg = run.cfg
    plants = io.read_plants(run.declare_input(cfg.inputs["plants"]))
    counties = io.read_counties(run.declare_input(cfg.inputs["counties"]))
    weather = io.read_weather(run.declare_input(cfg.inputs["weather"]))
    years = list(range(cfg.panel_years[0], cfg.panel_years[1] + 1))
    study = weather[(weather["year"] >= years[0]) & (weather["year"] <= years[-1])]
    matrix = build_instrument_matrix(plants, counties, study, years, cfg.exposure_specs())
    io.write_matrix(matrix, run.out_path("instrument_matrix.csv"))


def cmd_build_panel(run: _Run) -> None:
    cfg = run.cfg
    counties = io.read_counties(run.declare_input(cfg.inputs["counties"]))
    weather = io.read_weather(run.declare_input(cfg.inputs["weather"]))
    mortality = io.read_mortality(run.declare_input(cfg.inputs["mortality"]))
    socio = io.read_socio(run.declare_input(cfg.inputs["socio"]))
    grid = io.read_grid(run.declare_input(cfg.inputs["grid"]))
    matrix = io.read_matrix(run.declare_input(_instrument_matrix_path(cfg)))

    lo, hi = cfg.baseline_years
    baseline = met.baseline_frame(
        weather[(weather["year"] >= lo) & (weather["year"] <= hi)],
        min_years=cfg.baseline_min_years,
    )
    years = list(range(cfg.panel_years[0], cfg.panel_years[1] + 1))
    study = weather[(weather["year"] >= years[0]) & (weather["year"] <= years[-1])]
    zscores = met.standardize_frame(study, baseline)
    io.write_frame(zscores, run.out_path("standardized_weather.csv"))

    cells = grid[["cell_lat", "cell_lon"]].drop_duplicates().sort_values(["cell_lat", "cell_lon"])
    from .geo import GeoPoint

    points = [GeoPoint(la, lo_) for la, lo_ in cells.itertuples(index=False)]
    membership = raster.assign_cells(points, counties)
    means = raster.county_means(grid, membership)
    io.write_frame(means, run.out_path("county_pollutants.csv"))

    panel = assemble(
        mortality=mortality,
        pollutants=raster.annual_table(means),
        socio=socio,
        weather_z=zscores,
        counties=counties_frame(counties),
        instruments=matrix,
    )
    io.write_panel(panel.rows, run.out_path("panel.csv"))


def _load_panel(run: _Run) -> PanelData:
    cfg = run.cfg
    rows = io.read_panel(run.declare_input(str(Path(cfg.output_dir) / "panel.csv")))
    matrix = io.read_matrix(run.declare_input(_instrument_matrix_path(cfg)))
    keys = rows[["county_id", "year"]].copy()
    inst_df = matrix.to_frame()
    merged = keys.merge(inst_df, on=["county_id", "year"], how="left", validate="one_to_one")
    from .exposure import InstrumentMatrix

    aligned = InstrumentMatrix(
        county_ids=rows["county_id"].to_numpy(dtype=object),
        years=rows["year"].to_numpy(dtype=np.int64),
        columns=list(matrix.columns),
        values=merged[matrix.columns].to_numpy(dtype=float),
    )
    return PanelData(rows=rows, instruments=aligned)


def _apply_subsample(panel: PanelData, tag: str | None, cfg: RunConfig) -> PanelData:
    if tag is None:
        return panel
    kept = filter_subsample(panel.rows, tag, cfg.regions)
    keep_keys = set(zip(kept["county_id"], kept["year"]))
    mask = np.array(
        [(c, y) in keep_keys for c, y in zip(panel.rows["county_id"], panel.rows["year"])]
    )
    return panel.subset(mask)


def cmd_estimate(run: _Run) -> None:
    cfg = run.cfg
    panel = _apply_subsample(_load_panel(run), cfg.subsample, cfg)
    label = cfg.subsample or "full"
    report = post_lasso_2sls(
        panel, plan=cfg.fixed_effects, cfg=cfg.lasso, subsample_label=label
    )
    baseline = naive_fixed_effects(panel, plan=cfg.fixed_effects, subsample_label=label)

    run.out_path("report.txt").write_text(
        report.to_text() + "\nBaseline within-OLS (no instruments)\n" + baseline.to_text(),
        encoding="utf-8",
    )
    flat = report.to_flat_dict()
    for name, coef, se in zip(baseline.coef_names, baseline.coefficients, baseline.std_errors):
        flat[f"baseline.coef.{name}"] = float(coef)
        flat[f"baseline.se.{name}"] = float(se)
    run.out_path("report.json").write_text(
        json.dumps(flat, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    rows = []
    for endog, fs in report.first_stages.items():
        for inst in fs.selected_instruments:
            rows.append(
                {"endogenous": endog, "instrument": inst, "coefficient": fs.coefficients[inst]}
            )
        rows += [
            {"endogenous": endog, "instrument": "<n_selected>", "coefficient": len(fs.selected_instruments)},
            {"endogenous": endog, "instrument": "<f_stat_excluded>", "coefficient": fs.f_stat_excluded},
            {"endogenous": endog, "instrument": "<adj_r2>", "coefficient": fs.adj_r2},
            {"endogenous": endog, "instrument": "<n>", "coefficient": fs.n},
        ]
    io.write_frame(pd.DataFrame.from_records(rows), run.out_path("first_stage.csv"))


def cmd_balance_test(run: _Run) -> None:
    cfg = run.cfg
    panel = _apply_subsample(_load_panel(run), cfg.subsample, cfg)
    rows = panel.rows.sort_values(["county_id", "year"])
    growth = {}
    for var, col in (("prim_gdp_pc", "dlog_prim_gdp_pc"), ("sec_gdp_pc", "dlog_sec_gdp_pc")):
        logged = np.log(rows[var].to_numpy(dtype=float))
        by_county = rows["county_id"].to_numpy()
        dlog = np.full(len(rows), np.nan)
        same_county = by_county[1:] == by_county[:-1]
        dlog[1:][same_county] = (logged[1:] - logged[:-1])[same_county]
        growth[col] = dlog
    growth_df = pd.DataFrame(growth)

    weighted_cols = [c for c in panel.instruments.columns if c.startswith("retired_w_")]
    inst_df = pd.DataFrame(
        panel.instruments.values[:, [panel.instruments.columns.index(c) for c in weighted_cols]],
        columns=weighted_cols,
    )
    result = balance_test(inst_df, growth_df)
    io.write_frame(result, run.out_path("balance.csv"))


def cmd_summarize(run: _Run) -> None:
    panel = _load_panel(run)
    inst = panel.instruments
    policy = policy_columns(inst.columns)
    table = panel.rows.copy()
    for col in policy:
        table[col] = inst.values[:, inst.columns.index(col)]
    result = summarize(table, SUMMARY_VARIABLES + policy, by="year")
    io.write_frame(result, run.out_path("summary.csv"))


def cmd_lives_saved(run: _Run) -> None:
    cfg = run.cfg
    spec = dict(cfg.lives_saved)
    theta_so2, theta_pm = spec["theta_so2"], spec["theta_pm"]
    if theta_so2 is None or theta_pm is None:
        report_path = run.declare_input(str(Path(cfg.output_dir) / "report.json"))
        report = json.loads(Path(report_path).read_text(encoding="utf-8"))
        theta_so2 = report["coef.so2_du"] if theta_so2 is None else theta_so2
        theta_pm = report["coef.pm25"] if theta_pm is None else theta_pm
    value = lives_saved(
        float(theta_so2),
        float(theta_pm),
        float(spec["delta_so2"]),
        float(spec["delta_pm"]),
        float(spec["population_u5"]),
    )
    out = {
        "theta_so2": float(theta_so2),
        "theta_pm": float(theta_pm),
        "delta_so2": float(spec["delta_so2"]),
        "delta_pm": float(spec["delta_pm"]),
        "population_u5": float(spec["population_u5"]),
        "lives_saved": value,
    }
    reference = spec.get("reference_value")
    if reference:
        out["reference_value"] = float(reference)
        out["relative_difference"] = value / float(reference) - 1.0
    run.out_path("lives_saved.json").write_text(
        json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "build-exposure": cmd_build_exposure,
    "build-panel": cmd_build_panel,
    "estimate": cmd_estimate,
    "balance-test": cmd_balance_test,
    "summarize": cmd_summarize,
    "lives-saved": cmd_lives_saved,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exposureiv",
        description="Policy-exposure instruments and post-selection IV for county panels",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the YAML run configuration")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--subsample", help="override the subsample tag")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--jobs", type=int, help="override the worker count")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = validate_config(args.config, require_inputs=args.command in READ_COMMANDS)
        if args.out:
            cfg = dataclasses.replace(cfg, output_dir=args.out)
        if args.subsample:
            tag = None if args.subsample == "none" else args.subsample
            cfg = dataclasses.replace(cfg, subsample=tag)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.jobs is not None:
            cfg = dataclasses.replace(cfg, jobs=args.jobs)

        run = _Run(cfg, args.command, args.config)
        try:
            COMMANDS[args.command](run)
        except BaseException:
            run.abort()
            raise
        manifest = run.finish()
        print(f"{args.command}: ok ({manifest})")
        return 0
    except ExposureIVError as err:
        payload = {"command": args.command, "error": type(err).__name__, "detail": str(err)}
        print(json.dumps(payload, indent=2, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
