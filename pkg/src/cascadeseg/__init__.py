"""Coarse-to-fine cascaded 3D fully convolutional segmentation for CT volumes.

A small numpy/scipy engine: volume grid and morphology primitives, a
from-scratch differentiable 3D U-Net, weighted cross-entropy training with
elastic augmentation, tiled sliding-window inference with probability fusion,
and a two-stage coarse-to-fine cascade that restricts the second stage to a
dilated candidate region predicted by the first.
"""

from .augment import (
    AugmentConfig,
    DeformationField,
    RigidTransform,
    apply_transform,
    sample_deformation,
    sample_rigid,
    sample_subvolume,
)
from .cascade import (
    CandidateRegion,
    CascadeConfig,
    body_mask,
    candidate_from_prediction,
    radius_curve,
    recall_fpr,
)
from .errors import (
    CheckpointError,
    ClassAbsent,
    DegenerateVolume,
    DivergedError,
    EmptyRegion,
    EngineError,
    FormatError,
    GeometryError,
    InvalidMode,
    NoForeground,
    PadTooLarge,
    ShapeError,
)
from .cascade import curve_text
from .gradcheck import OPS, GradcheckResult, gradcheck_op
from .loss import ClassStats, class_stats, class_weights, softmax, weighted_ce
from .metrics import DiceReport, dice, dice_table, sensitivity_fpr
from .mhd import read_volume, write_volume
from .network import (
    NetworkConfig,
    UNet,
    build,
    load_checkpoint,
    output_shape,
    param_count,
    remap_head,
    save_checkpoint,
)
from .phantom import PhantomSpec, generate, generate_dataset
from .runconfig import RunConfig, load_config, parse_config
from .tiler import (
    MODES,
    FusionAccumulator,
    TilePlan,
    coverage_counts,
    plan_tiles,
    predict_volume,
    two_stage_predict,
)
from .trainer import (
    Dataset,
    TrainCase,
    TrainConfig,
    TrainResult,
    finetune,
    sgd_step,
    split_dataset,
    stage1_cases,
    stage2_cases,
    train,
    validate,
)
from .volume import (
    BinaryMask,
    LabelVolume,
    Volume3,
    dilate_ball,
    fill_holes_3d,
    largest_component,
    mirror_pad,
    resample_down2,
    threshold,
    upsample,
)

__all__ = [
    "OPS",
    "MODES",
    "AugmentConfig",
    "BinaryMask",
    "CandidateRegion",
    "CascadeConfig",
    "CheckpointError",
    "ClassAbsent",
    "ClassStats",
    "Dataset",
    "DeformationField",
    "DegenerateVolume",
    "DiceReport",
    "DivergedError",
    "EmptyRegion",
    "EngineError",
    "FormatError",
    "FusionAccumulator",
    "GeometryError",
    "GradcheckResult",
    "InvalidMode",
    "LabelVolume",
    "NetworkConfig",
    "NoForeground",
    "PadTooLarge",
    "PhantomSpec",
    "RigidTransform",
    "RunConfig",
    "ShapeError",
    "TilePlan",
    "TrainCase",
    "TrainConfig",
    "TrainResult",
    "UNet",
    "Volume3",
    "apply_transform",
    "body_mask",
    "build",
    "candidate_from_prediction",
    "class_stats",
    "class_weights",
    "coverage_counts",
    "curve_text",
    "dice",
    "dice_table",
    "dilate_ball",
    "fill_holes_3d",
    "finetune",
    "gradcheck_op",
    "generate",
    "generate_dataset",
    "largest_component",
    "load_checkpoint",
    "load_config",
    "mirror_pad",
    "output_shape",
    "param_count",
    "parse_config",
    "plan_tiles",
    "predict_volume",
    "radius_curve",
    "read_volume",
    "recall_fpr",
    "remap_head",
    "resample_down2",
    "sample_deformation",
    "sample_rigid",
    "sample_subvolume",
    "save_checkpoint",
    "sensitivity_fpr",
    "sgd_step",
    "softmax",
    "split_dataset",
    "stage1_cases",
    "stage2_cases",
    "threshold",
    "train",
    "two_stage_predict",
    "upsample",
    "validate",
    "weighted_ce",
    "write_volume",
]

__version__ = "0.1.0"
