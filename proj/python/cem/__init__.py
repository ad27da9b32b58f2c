"""Causal effect maps for image restoration models."""

from ._cem import (
    ROI_SENTINEL,
    BackendError,
    CausalEffectMap,
    CemError,
    DimensionError,
    FormatError,
    InvalidArgument,
    IoError,
    Library,
    classify_effects,
    compute_cem,
    degrade,
    inference_count,
    psnr,
    read_image,
    render_heatmap,
    resize_bicubic,
    similarity_score,
    write_image,
)

__version__ = "0.1.0"
