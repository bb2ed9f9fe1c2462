"""Camera-LiDAR extrinsic calibration toolkit."""

__version__ = "0.1.0"

from .exceptions import (
    AngleNearPi,
    CalibrationError,
    ConfigError,
    EmptyInput,
    GimbalLock,
    ParseError,
    ShapeMismatch,
    TooFewPoints,
)
from .attention import (
    AttentionOutput,
    AttentionParams,
    cross_attend,
    cross_attend_grad,
    dual_branch,
    init_attention_params,
    load_checkpoint,
    save_checkpoint,
)
from .config import (
    RunConfig,
    format_run_config,
    load_run_config,
    parse_run_config,
    save_run_config,
)
from .embedding import HarmonicConfig, TokenSequence, assemble_tokens, harmonic_embed
from .estimators import (
    ExtrinsicCalibrator,
    HarmonicCoordinateEncoder,
    PointGroupFeaturizer,
)
from .evaluation import (
    CalibrationSample,
    MetricsReport,
    RefineResult,
    SampleMetrics,
    SceneConfig,
    contraction_oracle,
    error_transform,
    evaluate,
    perfect_oracle,
    refine,
    sample_metrics,
    save_metrics_json,
    synth_scene,
    synth_suite,
)
from .geometry import (
    PerturbRange,
    RigidTransform,
    Se3Tangent,
    compose,
    euler_zyx,
    exp_se3,
    invert,
    load_transform,
    log_se3,
    rotation_from_euler_zyx,
    sample_perturbation,
    save_transform,
)
from .grouping import (
    EncoderParams,
    PointGroups,
    downsample,
    encode_groups,
    fps,
    init_encoder_params,
    knn_group,
)
from .pipeline import (
    CalibrationNetwork,
    NetworkConfig,
    NetworkParams,
    init_network_params,
)
from .projection import (
    Intrinsics,
    NormalizedCoords,
    align_coords,
    load_point_cloud,
    patch_grid_coords,
    project,
    render_depth_map,
    save_point_cloud,
    transform_points,
)
from .regressor import (
    HeadParams,
    init_head_params,
    load_head_params,
    regress,
    save_head_params,
)
from .seeding import (
    STREAM_DOWNSAMPLE,
    STREAM_PERTURB,
    STREAM_SCENE,
    STREAM_TOKENS,
    STREAM_WEIGHTS,
    as_rng,
    derive_rng,
)
