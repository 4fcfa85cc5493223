"""Input validation helpers shared by the estimators.

Modeled on sklearn's check_array: normalize whatever the caller passed
into the canonical representation, or raise with a message that names
the offending dimension.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_patch_array(X, patch_size=None, name="X") -> np.ndarray:
    """Coerce X to a (n, size, size) uint8 stack of square patches.

    Accepts a single 2-D patch (promoted to a stack of one) or a 3-D
    stack. Float inputs are rejected: callers must quantize explicitly
    so every model is scored on the same 8-bit scale.
    """
    a = np.asarray(X)
    if a.ndim == 2:
        a = a[None, ...]
    if a.ndim != 3:
        raise ShapeError(f"{name} must be (n, size, size), got shape {a.shape}")
    if a.dtype != np.uint8:
        raise ShapeError(f"{name} must be uint8 patches, got dtype {a.dtype}")
    n, h, w = a.shape
    if h != w:
        raise ShapeError(f"{name} patches must be square, got {h}x{w}")
    if patch_size is not None and h != patch_size:
        raise ShapeError(f"{name} patches are {h}x{w}, expected {patch_size}x{patch_size}")
    return a


def check_seed(seed, name="seed") -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"{name} must be an integer, got {seed!r}")
    return int(seed)


def check_positive_int(value, name) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
