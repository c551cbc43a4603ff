"""Renormalization analysis for two-type branching diffusions on the quadrant.

Equilibrium Monte Carlo for the single-colony SDE, pointwise and grid-based
evaluation of the renormalization map with exact polynomial algebra, the
scale chain and its size-biased transform, a depth-truncated hierarchical
lattice simulator, and the `renormflow` experiment CLI.
"""

from .chain import (
    ChainPath,
    TrapReport,
    TrapThresholds,
    anchor_probabilities,
    phi,
    phi_inv,
    run_homogeneous_chain,
    run_interaction_chain,
    run_size_biased_chain,
    step_chain,
    trapping_probabilities,
)
from .diffusions import (
    BoundaryProperty,
    DiffusionPair,
    EffectiveBoundary,
    GrowthCertificate,
    InfinitySlopes,
    PolynomialDiffusion,
    check_growth,
    effective_boundary,
    make_fixed_point,
    make_perturbed_fixed_point,
    make_polynomial,
    spot_check,
)
from .errors import (
    BlowUpError,
    ConfigError,
    DegeneratePairError,
    DivergenceError,
    ForbiddenStartError,
    InfinityAnchorError,
    MalformedFunctionError,
    OperatorDomainError,
    RenormflowError,
)
from .lattice import (
    HierarchicalSite,
    LatticeConfig,
    LatticeState,
    block_average,
    distance,
    mckean_vlasov_check,
    migration_rate,
    simulate_lattice,
    step_lattice,
    uniform_state,
)
from .renorm import (
    ClosedFormIteration,
    CoefficientSequence,
    GridFunction,
    McParams,
    MomentReport,
    blow_up_index,
    closed_form,
    compactify,
    expand,
    fixed_point_residual,
    grid_from_pair,
    iterate_closed_form,
    iterate_grid,
    mixture_limit,
    renormalize_at,
    renormalize_grid,
    validate_moments,
)
from .rng import RngStream
from .sde import (
    EmpiricalMeasure,
    SdeParams,
    batch_means_se,
    default_burn_in,
    default_thin,
    sample_equilibrium,
    simulate_path,
    step,
)

__version__ = "0.1.0"
