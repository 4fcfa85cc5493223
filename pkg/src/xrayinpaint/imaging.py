"""Bit-exact raster primitives for 8-bit grayscale patches.

Everything downstream (training data, model scoring, study pair
construction) is built from the handful of operations in this module, so
they are all pure functions on immutable inputs: input arrays are never
mutated, outputs are freshly allocated. All pixel data is 2-D uint8,
row-major, with (x, y) meaning (column, row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BoundsError, ShapeError

PEAK = 255  # fixed 8-bit peak used for every PSNR in the project

__all__ = [
    "GrayImage",
    "PatchSpec",
    "MaskSpec",
    "SubtractionMap",
    "center_mask",
    "crop",
    "apply_mask",
    "compose",
    "paste_patch",
    "psnr",
    "subtraction_map",
    "normalize",
    "denormalize",
    "quantize_u8",
    "load_gray_png",
    "save_gray_png",
]


def _as_u8(arr, name="image"):
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.dtype != np.uint8:
        raise ShapeError(f"{name} must be uint8, got {a.dtype}")
    return a


@dataclass(frozen=True)
class GrayImage:
    """An 8-bit grayscale raster with an opaque id (usually the file stem)."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_u8(self.pixels, "pixels"))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PatchSpec:
    """A square window in source-image coordinates."""

    x0: int
    y0: int
    size: int
    image_id: str = ""

    def check_within(self, width: int, height: int) -> None:
        if self.size <= 0:
            raise BoundsError(f"patch size must be positive, got {self.size}")
        if self.x0 < 0 or self.y0 < 0:
            raise BoundsError(f"patch corner ({self.x0},{self.y0}) is negative")
        if self.x0 + self.size > width:
            raise BoundsError(
                f"patch right edge x0+size={self.x0 + self.size} exceeds image width {width}"
            )
        if self.y0 + self.size > height:
            raise BoundsError(
                f"patch bottom edge y0+size={self.y0 + self.size} exceeds image height {height}"
            )


@dataclass(frozen=True)
class MaskSpec:
    """A rectangular hole inside a patch, in patch coordinates."""

    hx: int
    hy: int
    hw: int
    hh: int

    def check_within(self, patch_w: int, patch_h: int) -> None:
        if self.hw < 0 or self.hh < 0:
            raise BoundsError(f"hole extent ({self.hw}x{self.hh}) is negative")
        if self.hx < 0 or self.hy < 0:
            raise BoundsError(f"hole corner ({self.hx},{self.hy}) is negative")
        if self.hx + self.hw > patch_w:
            raise BoundsError(
                f"hole right edge hx+hw={self.hx + self.hw} exceeds patch width {patch_w}"
            )
        if self.hy + self.hh > patch_h:
            raise BoundsError(
                f"hole bottom edge hy+hh={self.hy + self.hh} exceeds patch height {patch_h}"
            )

    @property
    def area(self) -> int:
        return self.hw * self.hh

    def slices(self):
        """(row, col) slices selecting the hole."""
        return slice(self.hy, self.hy + self.hh), slice(self.hx, self.hx + self.hw)

    def bool_mask(self, patch_h: int, patch_w: int) -> np.ndarray:
        """Boolean raster, True inside the hole."""
        self.check_within(patch_w, patch_h)
        m = np.zeros((patch_h, patch_w), dtype=bool)
        m[self.slices()] = True
        return m


def center_mask(patch_size: int, hole_size: int) -> MaskSpec:
    """The centered hole used throughout: e.g. (32,32,64,64) for 128/64."""
    off = (patch_size - hole_size) // 2
    return MaskSpec(off, off, hole_size, hole_size)


@dataclass(frozen=True)
class SubtractionMap:
    """Signed per-pixel differences original - inpainted, in [-255, 255]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.dtype != np.int16:
            raise ShapeError(f"subtraction values must be 2-D int16, got {v.dtype} {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def display(self) -> np.ndarray:
        """8-bit rendering: zero difference maps to mid-gray 128."""
        return np.clip(self.values.astype(np.int32) + 128, 0, 255).astype(np.uint8)


def crop(image: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Cut the window described by `spec` out of `image`, no resampling."""
    img = _as_u8(image)
    spec.check_within(img.shape[1], img.shape[0])
    out = img[spec.y0 : spec.y0 + spec.size, spec.x0 : spec.x0 + spec.size]
    return out.copy()


def apply_mask(patch: np.ndarray, mask: MaskSpec, fill: int) -> np.ndarray:
    """Overwrite the hole with a constant fill value; context untouched."""
    p = _as_u8(patch, "patch")
    mask.check_within(p.shape[1], p.shape[0])
    if not 0 <= fill <= 255:
        raise ValueError(f"fill must be an 8-bit value, got {fill}")
    out = p.copy()
    out[mask.slices()] = fill
    return out


def compose(context: np.ndarray, generated_hole: np.ndarray, mask: MaskSpec) -> np.ndarray:
    """Paste generated hole content into the context patch.

    The context outside the hole is taken bit-for-bit from `context`;
    models never get to modify it.
    """
    ctx = _as_u8(context, "context")
    hole = _as_u8(generated_hole, "generated_hole")
    mask.check_within(ctx.shape[1], ctx.shape[0])
    if hole.shape != (mask.hh, mask.hw):
        raise ShapeError(
            f"generated hole shape {hole.shape} does not match mask extent ({mask.hh},{mask.hw})"
        )
    out = ctx.copy()
    out[mask.slices()] = hole
    return out


def paste_patch(image: np.ndarray, patch: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Replace the window described by `spec` with `patch`."""
    img = _as_u8(image)
    p = _as_u8(patch, "patch")
    spec.check_within(img.shape[1], img.shape[0])
    if p.shape != (spec.size, spec.size):
        raise ShapeError(f"patch shape {p.shape} does not match spec size {spec.size}")
    out = img.copy()
    out[spec.y0 : spec.y0 + spec.size, spec.x0 : spec.x0 + spec.size] = p
    return out


def psnr(a: np.ndarray, b: np.ndarray, region: MaskSpec) -> float:
    """Peak signal-to-noise ratio over `region` only, in dB.

    10*log10(255^2 / MSE) with integer-exact MSE accumulation. Identical
    regions return math.inf; callers aggregating scores must exclude the
    sentinel rather than cap it.
    """
    aa = _as_u8(a, "a")
    bb = _as_u8(b, "b")
    if aa.shape != bb.shape:
        raise ShapeError(f"images differ in shape: {aa.shape} vs {bb.shape}")
    region.check_within(aa.shape[1], aa.shape[0])
    if region.area == 0:
        raise ValueError("PSNR region is empty")
    sl = region.slices()
    diff = aa[sl].astype(np.int64) - bb[sl].astype(np.int64)
    sq_sum = int(np.sum(diff * diff))
    if sq_sum == 0:
        return math.inf
    mse = sq_sum / region.area
    return 10.0 * math.log10(PEAK * PEAK / mse)


def subtraction_map(original: np.ndarray, inpainted: np.ndarray) -> SubtractionMap:
    """Exact signed difference original - inpainted."""
    o = _as_u8(original, "original")
    i = _as_u8(inpainted, "inpainted")
    if o.shape != i.shape:
        raise ShapeError(f"images differ in shape: {o.shape} vs {i.shape}")
    values = o.astype(np.int16) - i.astype(np.int16)
    return SubtractionMap(values=values)


def normalize(patch: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float32 [-1,1]."""
    p = _as_u8(patch, "patch")
    return (p.astype(np.float32) / 127.5) - 1.0


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round floats in [0,255] to uint8, half away from zero, with clipping."""
    v = np.asarray(values, dtype=np.float64)
    rounded = np.floor(np.abs(v) + 0.5) * np.sign(v)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def denormalize(values: np.ndarray) -> np.ndarray:
    """float [-1,1] -> uint8, rounding half away from zero.

    Every model output round-trips through this before scoring so that
    all reported PSNR values share the 8-bit scale.
    """
    v = np.asarray(values, dtype=np.float64)
    return quantize_u8((v + 1.0) * 127.5)


def load_gray_png(path) -> GrayImage:
    """Read an 8-bit grayscale PNG; the file stem becomes the image id."""
    path = Path(path)
    with Image.open(path) as im:
        gray = im.convert("L")
        pixels = np.asarray(gray, dtype=np.uint8)
    return GrayImage(pixels=pixels, id=path.stem)


def save_gray_png(pixels: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_as_u8(pixels), mode="L").save(path, format="PNG")
    return path
