"""Simulation and analysis of hybrid-entangled vector photons.

A polarized trigger photon heralds a partner whose polarization varies
across its transverse profile. The package builds such two-photon states,
simulates heralded coincidence images, reconstructs local polarization and
tests local polarization entanglement region by region.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    DarkPixelError,
    DegenerateInputError,
    HeraldImpossibleError,
    IncompleteTomographyError,
    InsufficientDataError,
    InsufficientResolutionError,
    StageError,
    UnpolarizedRegionError,
    VectorPhotonError,
)
from .modes import ComplexField, GridSpec, ModeLabel, make_custom, make_hg, make_lg, make_mode, mode_overlap  # noqa: E402
from .state import (  # noqa: E402
    HybridBiphotonState,
    JonesVector,
    LocalTwoQubitState,
    VectorPhotonField,
    build_state,
    concurrence_map,
    conditional_field,
    conditional_stokes,
    correlation_tensor,
    joint_probability,
    local_concurrence,
    local_two_qubit,
    theoretical_correlation,
)
from .imaging import (  # noqa: E402
    CoincidenceImage,
    CoincidenceImageStack,
    DetectorModel,
    acquire_stack,
    expected_counts,
    load_stack,
    sample_image,
    save_stack,
)
from .tomography import (  # noqa: E402
    EllipseMap,
    RegionGrid,
    SingularitySet,
    StokesMap,
    ellipse_map,
    ellipse_params,
    find_singularities,
    render_pattern,
    stokes_reconstruct,
)
from .entanglement import (  # noqa: E402
    CorrelationEstimate,
    CriterionMap,
    MeasurementPlan,
    chsh_eval,
    chsh_plan_from_angles,
    correlation,
    criterion_map,
    default_plan,
    oracle_criterion_map,
    oracle_frame_field,
    rotate_frame,
    steering_eval,
    witness_eval,
)
from .config import SceneConfig, load_config, validate_config  # noqa: E402
from .pipeline import RunManifest, compare_to_oracle, run_pipeline  # noqa: E402
