"""Neural normalcy scorer: numpy tensor graph, optimizer, and data plumbing.

Tensors are plain float64 numpy arrays in (batch, channels, height, width)
layout; the graph machinery checks finiteness after every op.
"""

from .augment import AugmentPolicy, augment, policy_rng, sample_transform
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    GraphConfig,
    Profile,
    PROFILES,
    TrainConfig,
    desk_profile,
    full_profile,
    read_config_file,
    resolve_profile,
)
from .graph import (
    GraphBuilder,
    Parameter,
    TensorGraph,
    backward,
    build_backbones,
    build_pyramid_graph,
    forward,
    pyramid_shape_report,
)
from .imageio import load_image, read_pgm, read_sidecar, save_image, write_pgm
from .ops import (
    DilatedBlockParams,
    bce_with_logits,
    conv2d,
    dense,
    dilated_block,
    group_norm,
    maxpool2x2,
    normalize_intensity,
    relu,
    second_order_pool,
    sigmoid,
    spatial_dropout,
    upsample2x,
)
from .optim import NadamConfig, OptimState, init_state, nadam_step
from .train import (
    holdout_auc,
    load_model,
    predict_scores,
    save_model,
    train_toy,
    training_log_csv,
)

__all__ = [
    "AugmentPolicy",
    "DilatedBlockParams",
    "GraphBuilder",
    "GraphConfig",
    "NadamConfig",
    "OptimState",
    "PROFILES",
    "Parameter",
    "Profile",
    "TensorGraph",
    "TrainConfig",
    "augment",
    "backward",
    "bce_with_logits",
    "build_backbones",
    "build_pyramid_graph",
    "conv2d",
    "dense",
    "desk_profile",
    "dilated_block",
    "forward",
    "full_profile",
    "group_norm",
    "holdout_auc",
    "init_state",
    "load_checkpoint",
    "load_image",
    "load_model",
    "maxpool2x2",
    "nadam_step",
    "normalize_intensity",
    "policy_rng",
    "predict_scores",
    "pyramid_shape_report",
    "read_config_file",
    "read_pgm",
    "read_sidecar",
    "relu",
    "resolve_profile",
    "sample_transform",
    "save_checkpoint",
    "save_image",
    "save_model",
    "second_order_pool",
    "sigmoid",
    "spatial_dropout",
    "train_toy",
    "training_log_csv",
    "upsample2x",
    "write_pgm",
]
