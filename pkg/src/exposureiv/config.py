"""Run configuration: a single YAML file with nested sections.

Validation aggregates every problem (never fail-on-first) and each
message names the offending path. Environment variables override only
the output directory (EXPOSUREIV_OUT) and worker count (EXPOSUREIV_JOBS).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .exposure import MAX_LAG_YEARS, ExposureSpec, RadiusBand
from .lasso import LassoConfig
from .panel import FE_EFFECTS, POLICY_ZONES, REGIONS, FixedEffectsPlan

INPUT_KEYS = ("plants", "counties", "mortality", "weather", "grid", "socio")

DEFAULT_EXPOSURE = {
    "bands": [[0, 25], [0, 50], [0, 100], [25, 100], [50, 100]],
    "lags": [0, 1, 2, 3],
    "capacity_caps_mw": [None, 50],
    "weighting": ["unweighted", "weighted"],
}

DEFAULT_SIMULATE = {
    "n_counties": 60,
    "n_years": 10,
    "n_plants": 150,
    "true_theta_so2": 0.00134,
    "true_theta_pm": 0.176,
    "instrument_strength": 1.0,
    "confounder_strength": 1.0,
    "noise_sd_pollution": 1.0,
    "noise_sd_mortality": 1.0,
}

DEFAULT_LIVES = {
    "theta_so2": None,  # None reads the estimate from the report
    "theta_pm": None,
    "delta_so2": 0.1,
    "delta_pm": 3.9,
    "population_u5": 68_978_374,
}


@dataclass
class RunConfig:
    """Validated view of one configuration file."""

    inputs: dict[str, str]
    output_dir: str
    seed: int
    panel_years: tuple[int, int] = (2001, 2010)
    baseline_years: tuple[int, int] = (1950, 1999)
    baseline_min_years: int = 30
    exposure: dict = field(default_factory=lambda: dict(DEFAULT_EXPOSURE))
    fixed_effects: FixedEffectsPlan = field(default_factory=FixedEffectsPlan)
    lasso: LassoConfig = field(default_factory=LassoConfig)
    subsample: str | None = None
    regions: dict[str, dict] = field(default_factory=dict)
    simulate: dict = field(default_factory=lambda: dict(DEFAULT_SIMULATE))
    lives_saved: dict = field(default_factory=lambda: dict(DEFAULT_LIVES))
    jobs: int = 1

    def exposure_specs(self) -> list[ExposureSpec]:
        specs = []
        for band in self.exposure["bands"]:
            inner, outer = float(band[0]), float(band[1])
            for cap in self.exposure["capacity_caps_mw"]:
                for weighting in self.exposure["weighting"]:
                    for lag in self.exposure["lags"]:
                        specs.append(
                            ExposureSpec(
                                band=RadiusBand(inner, outer),
                                lag_years=int(lag),
                                capacity_cap_mw=None if cap is None else float(cap),
                                weighted=(weighting == "weighted"),
                            )
                        )
        return specs

    def to_dict(self) -> dict:
        return {
            "inputs": dict(self.inputs),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "panel_years": list(self.panel_years),
            "baseline_years": list(self.baseline_years),
            "baseline_min_years": self.baseline_min_years,
            "exposure": {
                "bands": [list(b) for b in self.exposure["bands"]],
                "lags": list(self.exposure["lags"]),
                "capacity_caps_mw": list(self.exposure["capacity_caps_mw"]),
                "weighting": list(self.exposure["weighting"]),
            },
            "fixed_effects": {
                "effects": list(self.fixed_effects.effects),
                "cluster_by": self.fixed_effects.cluster_by,
            },
            "lasso": {
                "penalty_constant_c": self.lasso.penalty_constant_c,
                "confidence_gamma": self.lasso.confidence_gamma,
                "max_iter": self.lasso.max_iter,
                "tol": self.lasso.tol,
                "standardize": self.lasso.standardize,
            },
            "subsample": self.subsample,
            "regions": {k: dict(v) for k, v in sorted(self.regions.items())},
            "simulate": dict(self.simulate),
            "lives_saved": dict(self.lives_saved),
            "jobs": self.jobs,
        }

    def canonical_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from parsed YAML, collecting every problem."""
    problems: list[str] = []
    base = Path(base_dir) if base_dir is not None else Path(".")

    def problem(path, reason):
        problems.append(f"{path}: {reason}")

    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])

    inputs = {}
    raw_inputs = raw.get("inputs")
    if not isinstance(raw_inputs, dict):
        problem("inputs", "missing section")
        raw_inputs = {}
    for key in INPUT_KEYS:
        value = raw_inputs.get(key)
        if not value:
            problem(f"inputs.{key}", "missing path")
        else:
            inputs[key] = str((base / value).resolve()) if not Path(value).is_absolute() else value
    for key in raw_inputs:
        if key not in INPUT_KEYS and key != "instruments":
            problem(f"inputs.{key}", "unknown input")
    if "instruments" in raw_inputs and raw_inputs["instruments"]:
        value = raw_inputs["instruments"]
        inputs["instruments"] = (
            str((base / value).resolve()) if not Path(value).is_absolute() else value
        )

    output_dir = raw.get("output_dir")
    if not output_dir:
        problem("output_dir", "missing path")
        output_dir = "."
    output_dir = os.environ.get("EXPOSUREIV_OUT", str(output_dir))

    seed = raw.get("seed")
    if not isinstance(seed, int):
        problem("seed", f"expected an integer, got {seed!r}")
        seed = 0

    panel_years = tuple(raw.get("panel_years", (2001, 2010)))
    if len(panel_years) != 2 or panel_years[0] > panel_years[1]:
        problem("panel_years", f"expected [first, last], got {list(panel_years)}")
        panel_years = (2001, 2010)
    baseline_years = tuple(raw.get("baseline_years", (1950, 1999)))
    if len(baseline_years) != 2 or baseline_years[0] > baseline_years[1]:
        problem("baseline_years", f"expected [first, last], got {list(baseline_years)}")
        baseline_years = (1950, 1999)

    exposure = {**DEFAULT_EXPOSURE, **raw.get("exposure", {})}
    for i, band in enumerate(exposure["bands"]):
        if len(band) != 2 or not float(band[0]) < float(band[1]):
            problem(f"exposure.bands[{i}]", f"invalid band {band}")
    for i, lag in enumerate(exposure["lags"]):
        if not (isinstance(lag, int) and 0 <= lag <= MAX_LAG_YEARS):
            problem(f"exposure.lags[{i}]", f"lag {lag} outside allowed [0, {MAX_LAG_YEARS}]")
    for i, w in enumerate(exposure["weighting"]):
        if w not in ("weighted", "unweighted"):
            problem(f"exposure.weighting[{i}]", f"expected weighted/unweighted, got {w!r}")

    fe_raw = raw.get("fixed_effects", {})
    effects = tuple(fe_raw.get("effects", ("county", "year")))
    for e in effects:
        if e not in FE_EFFECTS:
            problem("fixed_effects.effects", f"unknown effect {e!r}")
    cluster_by = fe_raw.get("cluster_by", "province")
    try:
        plan = FixedEffectsPlan(effects=effects, cluster_by=cluster_by)
    except ValueError as err:
        problem("fixed_effects", str(err))
        plan = FixedEffectsPlan()

    lasso_raw = raw.get("lasso", {})
    try:
        lasso = LassoConfig(
            penalty_constant_c=float(lasso_raw.get("penalty_constant_c", 1.1)),
            confidence_gamma=lasso_raw.get("confidence_gamma"),
            max_iter=int(lasso_raw.get("max_iter", 10000)),
            tol=float(lasso_raw.get("tol", 1e-7)),
            standardize=bool(lasso_raw.get("standardize", True)),
        )
    except (TypeError, ValueError) as err:
        problem("lasso", str(err))
        lasso = LassoConfig()

    subsample = raw.get("subsample")
    if subsample is not None and subsample not in REGIONS + POLICY_ZONES + ("none",):
        problem(
            "subsample",
            f"unknown tag {subsample!r}; allowed: {sorted(REGIONS + POLICY_ZONES)}",
        )

    regions = raw.get("regions", {}) or {}
    for prov, info in regions.items():
        if not isinstance(info, dict):
            problem(f"regions.{prov}", "expected a mapping")
            continue
        for r in info.get("regions", []):
            if r not in REGIONS:
                problem(f"regions.{prov}.regions", f"unknown region {r!r}")
        zone = info.get("policy_zone")
        if zone not in POLICY_ZONES:
            problem(f"regions.{prov}.policy_zone", f"expected one of {list(POLICY_ZONES)}")

    simulate = {**DEFAULT_SIMULATE, **(raw.get("simulate", {}) or {})}
    lives = {**DEFAULT_LIVES, **(raw.get("lives_saved", {}) or {})}

    jobs = raw.get("jobs", 1)
    jobs = int(os.environ.get("EXPOSUREIV_JOBS", jobs))
    if jobs < 1:
        problem("jobs", f"expected >= 1, got {jobs}")
        jobs = 1

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        inputs=inputs,
        output_dir=str(output_dir),
        seed=seed,
        panel_years=(int(panel_years[0]), int(panel_years[1])),
        baseline_years=(int(baseline_years[0]), int(baseline_years[1])),
        baseline_min_years=int(raw.get("baseline_min_years", 30)),
        exposure=exposure,
        fixed_effects=plan,
        lasso=lasso,
        subsample=None if subsample == "none" else subsample,
        regions=regions,
        simulate=simulate,
        lives_saved=lives,
        jobs=jobs,
    )


def validate_config(path, require_inputs: bool = False) -> RunConfig:
    """Parse and validate a config file.

    With ``require_inputs`` every input path must already exist; commands
    that only write (like the simulator) skip that check.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    cfg = parse_config(raw, base_dir=path.parent)
    if require_inputs:
        missing = [
            f"inputs.{k}: path does not exist: {v}"
            for k, v in cfg.inputs.items()
            if not Path(v).exists()
        ]
        if missing:
            raise ConfigError(missing)
    return cfg
