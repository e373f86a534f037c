"""Spatial policy-exposure instruments and post-Lasso 2SLS for county panels."""

__version__ = "0.1.0"

from . import errors  # noqa: F401
from .estimator import (  # noqa: F401
    EstimationReport,
    FirstStageResult,
    balance_test,
    cluster_robust_vcov,
    lives_saved,
    naive_fixed_effects,
    post_lasso_2sls,
    two_stage_least_squares,
)
from .exposure import (  # noqa: F401
    CountyWind,
    ExposureSpec,
    InstrumentMatrix,
    PlantUnit,
    RadiusBand,
    build_instrument_matrix,
    default_spec_grid,
    fgd_exposures,
    upwind_cosine,
    weighted_sum,
)
from .geo import (  # noqa: F401
    CountyGeometry,
    GeoPoint,
    Polygon,
    direction_unit_vector,
    haversine_km,
    initial_bearing_deg,
    point_in_polygon,
)
from .lasso import LassoConfig, LassoResult, lasso_select, plug_in_lambda, soft_threshold  # noqa: F401
from .met import (  # noqa: F401
    Baseline,
    MonthlyWeather,
    build_baseline,
    relative_humidity,
    standardize,
    wind_speed_dir,
)
from .panel import (  # noqa: F401
    FixedEffectsPlan,
    PanelData,
    assemble,
    demean,
    filter_subsample,
    summarize,
)
from .raster import CountyPollutant, GridObservation, assign_cells, county_means  # noqa: F401
from .synth import DgpConfig, McResult, SynthBundle, generate, monte_carlo  # noqa: F401
