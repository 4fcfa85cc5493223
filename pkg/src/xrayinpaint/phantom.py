"""Synthetic radiograph-style phantoms.

Two families:

* patch phantoms: small squares with a global intensity ramp, a rib-like
  sinusoidal band, and a soft blob. The structure inside any centered
  hole is predictable from the surrounding context, which is exactly
  what the inpainting models are supposed to exploit. Desk-scale
  training and evaluation run on these.

* full-image phantoms: a torso-like background with two dark elliptical
  lung fields, faint ribs, and optionally a planted bright disc standing
  in for a nodule. Used to exercise the manifest/split/sampling pipeline
  and the observer-study pair builder without any real data.

All generators are driven by an explicit numpy Generator so corpora are
reproducible byte-for-byte.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .imaging import save_gray_png

__all__ = [
    "phantom_patch",
    "phantom_patches",
    "phantom_image",
    "write_phantom_dataset",
]


def _unit_grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy / size, xx / size


def phantom_patch(rng: np.random.Generator, size: int = 32, disc: bool = False) -> np.ndarray:
    """One patch phantom as uint8 (size, size).

    With disc=True a bright disc is planted at the patch center, the
    stand-in for a nodule that the models (trained on clean phantoms
    only) should fail to reproduce.
    """
    yy, xx = _unit_grid(size)
    img = rng.uniform(100.0, 155.0) * np.ones((size, size))
    gx = rng.uniform(-50.0, 50.0)
    gy = rng.uniform(-50.0, 50.0)
    img += gx * (xx - 0.5) + gy * (yy - 0.5)

    # rib-like band, roughly horizontal
    amp = rng.uniform(15.0, 40.0)
    wavelength = rng.uniform(0.35, 0.7)
    theta = rng.uniform(-0.4, 0.4)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.cos(theta) * yy + np.sin(theta) * xx
    img += amp * np.sin(2.0 * np.pi * t / wavelength + phase)

    # soft blob
    bx = rng.uniform(0.25, 0.75)
    by = rng.uniform(0.25, 0.75)
    bamp = rng.uniform(-20.0, 20.0)
    bw = rng.uniform(0.2, 0.45)
    img += bamp * np.exp(-(((xx - bx) ** 2 + (yy - by) ** 2) / (2.0 * bw * bw)))

    if disc:
        r = rng.uniform(0.10, 0.16) * size
        cx = size / 2.0 + rng.uniform(-0.05, 0.05) * size
        cy = size / 2.0 + rng.uniform(-0.05, 0.05) * size
        dist = np.sqrt((xx * size - cx) ** 2 + (yy * size - cy) ** 2)
        img += 70.0 / (1.0 + np.exp((dist - r) / 1.0))

    img += rng.normal(0.0, 1.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def phantom_patches(
    n: int, size: int = 32, seed: int = 0, disc_fraction: float = 0.0
) -> np.ndarray:
    """A corpus of patch phantoms as uint8 (n, size, size)."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        out[i] = phantom_patch(rng, size=size, disc=rng.uniform() < disc_fraction)
    return out


def _ellipse(yy, xx, cx, cy, rx, ry, softness):
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return 1.0 / (1.0 + np.exp((d - 1.0) / softness))


def phantom_image(rng: np.random.Generator, size: int = 256, nodule: bool = False):
    """A full radiograph-like phantom.

    Returns (pixels uint8, lung_mask bool, nodule_center or None). The
    lung mask is the exact interior of the two dark ellipses, so it can
    serve as ground truth for the heuristic segmenter. The nodule, when
    planted, sits inside a lung with its center at least size/4 from the
    borders so a context-expanded patch around it always fits.
    """
    yy, xx = _unit_grid(size)
    img = 175.0 + 20.0 * (xx - 0.5) * rng.uniform(-1, 1) + 20.0 * (yy - 0.5) * rng.uniform(-1, 1)
    img -= 25.0 * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2)  # vignette

    lungs = []
    for cx in (0.32 + rng.uniform(-0.02, 0.02), 0.68 + rng.uniform(-0.02, 0.02)):
        cy = 0.45 + rng.uniform(-0.02, 0.02)
        rx = 0.13 + rng.uniform(-0.01, 0.01)
        ry = 0.25 + rng.uniform(-0.02, 0.02)
        lungs.append((cx, cy, rx, ry))
        img -= 70.0 * _ellipse(yy, xx, cx, cy, rx, ry, softness=0.02)

    mask = np.zeros((size, size), dtype=bool)
    for cx, cy, rx, ry in lungs:
        mask |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0

    # faint ribs, kept weak so they never bridge the lung fields
    img += 8.0 * np.sin(2.0 * np.pi * yy * rng.uniform(6.0, 9.0) + rng.uniform(0, 6.28))
    # bright mediastinum column
    img += 12.0 * np.exp(-(((xx - 0.5) / 0.08) ** 2))

    center = None
    if nodule:
        side = int(rng.integers(0, 2))
        cx, cy, rx, ry = lungs[side]
        margin = 0.26  # keeps the 64x64 bbox plus 32px context inside at size>=256
        ncx = float(np.clip(cx + rng.uniform(-0.4, 0.4) * rx, margin, 1 - margin))
        ncy = float(np.clip(cy + rng.uniform(-0.4, 0.4) * ry, margin, 1 - margin))
        r = rng.uniform(0.035, 0.055) * size
        dist = np.sqrt((xx * size - ncx * size) ** 2 + (yy * size - ncy * size) ** 2)
        img += 60.0 / (1.0 + np.exp((dist - r) / 1.5))
        center = (int(round(ncx * size)), int(round(ncy * size)))

    img += rng.normal(0.0, 2.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8), mask, center


def write_phantom_dataset(
    out_dir,
    n_images: int = 40,
    size: int = 256,
    seed: int = 0,
    abnormal_fraction: float = 0.3,
    images_per_patient: int = 2,
    write_masks: bool = True,
):
    """Materialize a phantom dataset in the on-disk layout the pipeline ingests.

    Layout under out_dir:
      images/<image_id>.png
      labels.csv              (Image Index / Finding Labels / Patient ID)
      masks/<image_id>_mask.png   (optional, nonzero == lung)
      nodules.csv             (image_id,x0,y0 for 64x64 nodule boxes)

    Returns the paths as a dict.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    mask_dir = out_dir / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    if write_masks:
        mask_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    rows = []
    nodule_rows = []
    for i in range(n_images):
        image_id = f"phantom_{i:05d}"
        patient_id = f"P{i // images_per_patient:04d}"
        abnormal = rng.uniform() < abnormal_fraction
        pixels, lung, center = phantom_image(rng, size=size, nodule=abnormal)
        save_gray_png(pixels, image_dir / f"{image_id}.png")
        if write_masks:
            save_gray_png(lung.astype(np.uint8) * 255, mask_dir / f"{image_id}_mask.png")
        rows.append((f"{image_id}.png", "Nodule" if abnormal else "No Finding", patient_id))
        if abnormal and center is not None:
            nodule_rows.append((image_id, center[0] - 32, center[1] - 32))

    labels_csv = out_dir / "labels.csv"
    with open(labels_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Image Index", "Finding Labels", "Patient ID"])
        w.writerows(rows)

    nodules_csv = out_dir / "nodules.csv"
    with open(nodules_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "x0", "y0"])
        w.writerows(nodule_rows)

    return {
        "image_dir": image_dir,
        "labels_csv": labels_csv,
        "mask_dir": mask_dir if write_masks else None,
        "nodules_csv": nodules_csv,
    }
