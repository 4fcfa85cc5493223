"""Generative inpainting benchmark for grayscale radiograph patches.

Three inpainting estimators (context encoder, DCGAN latent inversion,
contextual attention) with a shared fit/transform API, hole-region PSNR
evaluation, subtraction-map reports, and a 2AFC observer-study service.
"""

from .imaging import (
    GrayImage,
    MaskSpec,
    PatchSpec,
    SubtractionMap,
    apply_mask,
    center_mask,
    compose,
    crop,
    paste_patch,
    psnr,
    subtraction_map,
)

__version__ = "0.1.0"

__all__ = [
    "GrayImage",
    "MaskSpec",
    "PatchSpec",
    "SubtractionMap",
    "apply_mask",
    "center_mask",
    "compose",
    "crop",
    "paste_patch",
    "psnr",
    "subtraction_map",
    "__version__",
]
