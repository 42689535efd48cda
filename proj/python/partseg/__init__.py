"""Unsupervised part segmentation toolkit."""
import torch  # noqa: F401  -- the extension links libtorch shipped with this package

from ._partseg import (  # noqa: F401
    ConfigError,
    Model,
    NumericError,
    Trainer,
    adversary_objective,
    calibrate,
    entropy_reg,
    evaluate_iou,
    gaussian_kl,
    gmrf_kl,
    normalize_segmentation,
    generate_hue_pair,
    generate_sprite_pair,
    mix_seed,
    render_sprite,
    shuffle_marginals,
)

__all__ = [
    "ConfigError",
    "Model",
    "NumericError",
    "Trainer",
    "adversary_objective",
    "calibrate",
    "entropy_reg",
    "evaluate_iou",
    "gaussian_kl",
    "gmrf_kl",
    "normalize_segmentation",
    "generate_hue_pair",
    "generate_sprite_pair",
    "mix_seed",
    "render_sprite",
    "shuffle_marginals",
]
