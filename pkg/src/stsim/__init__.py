"""Space-time simulation and verification toolkit for a mobile Boolean
detection model: multi-scale tessellations, Brownian node clouds,
indistinguishability couplings, indicator-field percolation, and
detection/evasion certificates."""

from .bounds import (
    chernoff_suite,
    confinement_bound,
    gaussian_tail_bound,
    poisson_cdf,
    poisson_lower_tail_bound,
    poisson_sf,
    poisson_upper_tail_bound,
    wilson_interval,
)
from .coupling import (
    CouplingParams,
    CouplingResult,
    conditioned_density_floor,
    couple,
    couple_grid_experiment,
    indistinguishable_subdensity,
    subdensity_mass,
    verify_indistinguishable,
)
from .errors import (
    ConfigError,
    GeometryError,
    HorizonError,
    ParamError,
    RangeError,
    RejectionError,
    StsimError,
    WindowError,
)
from .evasion import (
    EvasionCertificate,
    SliceField,
    detection_certificate,
    evasion_certificate,
    evasion_params,
    replay_witness,
    rho_bracket,
    rho_scan,
    simulate_game,
    static_detection,
)
from .geometry import Box, Cell, SpaceTimeRegion, TimeInterval
from .indicators import (
    FieldConfig,
    IndicatorGrid,
    escape_probability,
    plan_simulation,
)
from .mobility import (
    SpatialIndex,
    TrajectorySet,
    conditioned_increment,
    conditioned_increments,
    sample_ppp,
    simulate,
)
from .tessellation import (
    IndexWindow,
    ScaleParams,
    adjacent,
    count_support_adjacent,
    cube_ancestor,
    cube_side,
    interval_ancestor,
    interval_length,
    region,
    scale_tables,
    scale_weight,
    scale_weight_integer,
    support,
    support_adjacent,
    time_region,
    verify_geometry,
    verify_weights,
    weight_ratio_exact,
    well_separated,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
