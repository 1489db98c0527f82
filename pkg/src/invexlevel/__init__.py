"""Invex neural surrogates with exact level-set extraction.

A property map F = g(f(h(x))) built from an exactly invertible
autoregressive flow h, a strictly convex network f, and a strictly
increasing head g has a single minimum and connected, compact level sets.
This package trains such models under a VAE objective, extracts whole
level sets through a hyperspherical parameterisation around the latent
minimum, and ships brute-force oracles that check every claim.
"""

from .diffnet import (
    AutoregressiveFlow,
    GradResult,
    Icnn,
    Mlp,
    MonotoneHead,
    Tensor,
    backward,
    flow_forward,
    flow_inverse,
    icnn_forward,
    monotone_forward,
    reparam_positive,
    reparam_positive_inverse,
)
from .levelset import (
    ConvergenceError,
    EndpointOffLevel,
    LevelBeyondRange,
    LevelNotReachable,
    LevelSetPath,
    LevelSetPoints,
    LevelSetQuery,
    Reachability,
    SphericalPoint,
    SubspaceBox,
    cart_to_sph,
    find_minimum,
    find_minimum_box,
    level_reachable,
    levelset_interpolate,
    levelset_sample,
    radius_search,
    sph_to_cart,
)
from .model import (
    CycleVae,
    InvexModel,
    LabelledDataset,
    TrainConfig,
    TrainReport,
    TrainResult,
    TrainingDiverged,
    build_model,
    cycle_loss,
    encode_sample,
    invex_property,
    total_loss,
    train,
    vae_loss,
)
from .store import (
    ArchiveError,
    MalformedArchiveError,
    MissingFieldError,
    VersionMismatchError,
    export_curve,
    load_model,
    read_curve,
    save_load_roundtrip,
    save_model,
)
from .targets import (
    GaussianMixtureTarget,
    GridSpec,
    RosenbrockTarget,
    gauss2_eval,
    grid_dataset,
    make_target,
    rosenbrock_eval,
)
from .verify import (
    OracleCurve,
    StationaryReport,
    convexity_probe,
    fd_grad_check,
    hausdorff,
    multistart_stationary,
    oracle_level_points,
    run_probes,
)

__version__ = "0.1.0"
