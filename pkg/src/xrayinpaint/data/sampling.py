"""Patch sampling against lung masks, and nodule patch extraction."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BoundsError, ParseError, SamplingError
from ..imaging import GrayImage, MaskSpec, PatchSpec, center_mask, crop

MAX_REJECTIONS = 10_000

NODULE_BOX = 64  # annotation boxes are fixed 64x64
NODULE_CONTEXT = 32  # pixels added on each side of the box


def sample_patch_specs(
    image: np.ndarray | GrayImage,
    lung: np.ndarray,
    count: int,
    patch_size: int,
    rng_seed: int,
    min_lung_pixels: int = 1,
) -> list[PatchSpec]:
    """Draw `count` windows uniformly, keeping those that overlap the lung.

    Rejection sampling over uniform window positions; a window qualifies
    when it contains at least min_lung_pixels mask pixels. Windows may
    overlap each other. Raises after MAX_REJECTIONS consecutive misses.
    """
    if isinstance(image, GrayImage):
        image_id, shape = image.id, image.pixels.shape
    else:
        image_id, shape = "", np.asarray(image).shape
    lung = np.asarray(lung).astype(bool)
    if lung.shape != shape:
        raise SamplingError(f"lung mask shape {lung.shape} does not match image {shape}")
    if not lung.any():
        raise SamplingError(f"lung mask for {image_id or 'image'} is empty")
    h, w = shape
    if patch_size > w or patch_size > h:
        raise SamplingError(f"patch size {patch_size} exceeds image dimensions {w}x{h}")

    rng = np.random.default_rng(rng_seed)
    specs = []
    misses = 0
    while len(specs) < count:
        x0 = int(rng.integers(0, w - patch_size + 1))
        y0 = int(rng.integers(0, h - patch_size + 1))
        window = lung[y0 : y0 + patch_size, x0 : x0 + patch_size]
        if int(np.count_nonzero(window)) >= min_lung_pixels:
            specs.append(PatchSpec(x0=x0, y0=y0, size=patch_size, image_id=image_id))
            misses = 0
        else:
            misses += 1
            if misses >= MAX_REJECTIONS:
                raise SamplingError(
                    f"no lung-overlapping {patch_size}x{patch_size} window found in "
                    f"{MAX_REJECTIONS} consecutive draws for {image_id or 'image'}"
                )
    return specs


@dataclass(frozen=True)
class NoduleAnnotation:
    """A 64x64 bounding box around a nodule, top-left corner (x0, y0)."""

    image_id: str
    x0: int
    y0: int


def load_nodule_annotations(csv_path) -> list[NoduleAnnotation]:
    """CSV columns: image_id, x0, y0."""
    out = []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                out.append(
                    NoduleAnnotation(
                        image_id=row["image_id"].strip(),
                        x0=int(row["x0"]),
                        y0=int(row["y0"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad nodule row {row!r}: {exc}", line=reader.line_num)
    return out


def extract_nodule_patch(image: np.ndarray, ann: NoduleAnnotation):
    """Grow the 64x64 box by 32 pixels per side and cut the 128x128 patch.

    Returns (patch, mask) where the mask is the centered 64x64 hole, so
    the patch center is exactly the annotated box content. Boxes within
    32 pixels of the border are rejected rather than padded.
    """
    img = np.asarray(image)
    x0 = ann.x0 - NODULE_CONTEXT
    y0 = ann.y0 - NODULE_CONTEXT
    size = NODULE_BOX + 2 * NODULE_CONTEXT
    if x0 < 0 or y0 < 0:
        raise BoundsError(
            f"nodule box at ({ann.x0},{ann.y0}) is within {NODULE_CONTEXT} pixels of the border"
        )
    spec = PatchSpec(x0=x0, y0=y0, size=size, image_id=ann.image_id)
    patch = crop(img, spec)  # raises BoundsError on right/bottom overflow
    return patch, center_mask(size, NODULE_BOX)
