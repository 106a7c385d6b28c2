"""Time-varying massive MIMO channel tracking with spatial-temporal expansions."""

from .basis import (
    BemCoefficients,
    BemConfig,
    SsiSet,
    basis_matrix,
    cebem_fit,
    dft_beamspace,
    inverse_beamspace,
    ssi_from_angles,
    stbem_reconstruct,
)
from .channel import (
    ChannelBlock,
    RayParams,
    SpatialState,
    channel_from_rays,
    generate_block,
    steering_vector,
    theoretical_correlation,
    uplink_received,
)
from .config import ConfigError, ExperimentSpec, SystemConfig, load_config
from .dynamics import (
    EmResult,
    NoSignalError,
    ObservationVector,
    TrackerModel,
    em_iterate,
    em_learn,
    markov_step,
    observe_central_ssi,
)
from .grouping import GroupingConfig, GroupPlan, circular_distance, group_users
from .kernels import BACKEND as KERNEL_BACKEND
from .pilots import (
    DownlinkMap,
    PilotBook,
    design_pilots,
    downlink_train_estimate,
    extract_user_gamma,
    ls_estimate_gamma,
    reciprocity_map,
)
from .sim import MetricRow, run_experiment, score_mse
from .tracking import (
    FilterState,
    GainBundle,
    NoiseParams,
    SmoothedTrajectory,
    UtConfig,
    sigma_points,
    ukf_step,
    urtss_pass,
)

__version__ = "0.1.0"
