"""Cluster-expansion Monte Carlo and phase-boundary tracking for binary alloys."""
from .atat_io import (
    ParseError,
    format_table,
    parse_clusters,
    parse_eci,
    parse_lattice,
    parse_structures,
    parse_table,
    parse_teci,
    write_snapshot,
)
from .drivers import (
    BoundaryPlan,
    BoundaryPoint,
    ScanPlan,
    anneal_ground_state,
    predict_mu_step,
    scan,
    solve_boundary_mu_lte,
    track_boundary,
)
from .lattice import build_supercell, expand_orbit, generate_clusters, point_symmetries, spin_config_from_structure
from .mc import PointStats, RunControls, Walker, integrate_phi, metropolis_sweep, run_point
from .model import ClusterExpansion, SpinConfig, correlations, delta_grand, eci_at_temperature, energy_per_site
from .thermo import (
    boundary_mus,
    exact_thermo,
    ground_states,
    hte_phi,
    input_mu_to_physical,
    lte_phi,
    mean_field_tmisc,
    physical_mu_to_input,
)

__version__ = "0.1.0"
