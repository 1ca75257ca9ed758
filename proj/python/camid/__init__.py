"""Camera-model identification from image processing traces."""

from ._camid import (
    CamidError,
    Model,
    apply_op,
    center_crop,
    cross_entropy,
    d4_apply,
    d4_compose,
    d4_elements,
    default_config,
    evaluate,
    gradient_suite,
    jpeg_decode,
    jpeg_encode,
    jpeg_quality,
    make_synthetic_dataset,
    read_image,
    run_cli,
    train,
    weighted_accuracy,
    write_png,
)

__all__ = [
    "CamidError",
    "Model",
    "apply_op",
    "center_crop",
    "cross_entropy",
    "d4_apply",
    "d4_compose",
    "d4_elements",
    "default_config",
    "evaluate",
    "gradient_suite",
    "jpeg_decode",
    "jpeg_encode",
    "jpeg_quality",
    "make_synthetic_dataset",
    "read_image",
    "run_cli",
    "train",
    "weighted_accuracy",
    "write_png",
]
