"""Measurement-conditioned purification and singlet pairing of spin baths."""

from .errors import CapacityError, ConfigError, ExtinctionError
from .spin_core import (
    CouplingSet,
    PropagatorPair,
    SpinGeometry,
    chain_geometry,
    dimer_chain_geometry,
    dipolar_couplings,
    effective_coupling,
    optimal_params,
    plane_geometry,
    single_spin_propagators,
)
from .dynamics_dense import (
    ProtocolConfig,
    Trajectory,
    apply_projection,
    build_V,
    dephase,
    maximally_mixed,
    pair_rdm,
    purity,
    run_protocol,
)
from .dynamics_factored import (
    BranchEnsemble,
    extend,
    from_product_state,
    mixed_state_monte_carlo,
    reduced_density_matrix,
    run_factored,
    success_probability,
)
from .analysis import (
    PairAssignment,
    best_phase,
    classical_steady_state_check,
    concurrence,
    detect_pairing,
    pair_fidelity,
    phased_singlet,
    singlet_state,
)
from .protocols import (
    SpeciesBath,
    SpeciesGroup,
    coherence_trace,
    resolves_side_features,
    spectroscopy_scan,
    verification_scan,
)

__version__ = "0.1.0"
