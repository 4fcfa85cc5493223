"""Lung masks: load externally supplied ones, or fall back to a crude
intensity-based segmenter.

The fallback exists so the pipeline can run end to end without an
external segmentation model. It is deliberately simple (lungs are the
dark side of an Otsu split) and its use is flagged in provenance
metadata wherever masks enter an artifact; supplied masks always win.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from ..errors import DataError, ShapeError
from ..imaging import load_gray_png

MASK_SUFFIX = "_mask.png"


def load_lung_mask(mask_dir, image_id: str, shape=None) -> np.ndarray | None:
    """Read <image_id>_mask.png (nonzero == lung); None if absent."""
    if mask_dir is None:
        return None
    path = Path(mask_dir) / f"{image_id}{MASK_SUFFIX}"
    if not path.is_file():
        return None
    mask = load_gray_png(path).pixels > 0
    if shape is not None and mask.shape != tuple(shape):
        raise ShapeError(f"mask {path.name} has shape {mask.shape}, image is {tuple(shape)}")
    return mask


def heuristic_lung_mask(image: np.ndarray) -> np.ndarray:
    """Threshold dark regions, keep the two largest blobs, fill holes."""
    img = np.asarray(image)
    if img.min() == img.max():
        raise DataError("constant image: no lung structure to segment")
    thr = threshold_otsu(img)
    dark = img < thr
    if not dark.any():  # threshold_otsu guarantees a nonempty dark side, but be explicit
        raise DataError("no pixels below the Otsu threshold")
    labels, n = ndimage.label(dark)
    if n == 0:
        raise DataError("no connected dark component found")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
    keep = np.argsort(sizes)[::-1][:2] + 1
    mask = np.isin(labels, keep)
    return ndimage.binary_fill_holes(mask)
