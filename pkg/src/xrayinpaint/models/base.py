"""Shared estimator machinery: the fit/transform surface, checkpoint IO,
and the mean-fill baseline every model must beat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from ..errors import ConfigError, StoreError
from ..imaging import MaskSpec, apply_mask, center_mask, compose, denormalize, normalize, psnr, quantize_u8
from ..validation import check_patch_array
from . import checkpoint as ckpt_io


@dataclass(frozen=True)
class InpaintResult:
    """One inpainted patch: the generated hole plus the composed output.

    Context pixels of `patch` are taken from the input, never from the
    network, so they are bit-equal to the original by construction.
    """

    model_id: str
    checkpoint_hash: str
    patch: np.ndarray
    hole: np.ndarray
    mask: MaskSpec


def batches(n: int, batch_size: int, order=None):
    idx = np.arange(n) if order is None else np.asarray(order)
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


class BaseInpainter(TransformerMixin, BaseEstimator):
    """Common surface of the inpainting estimators.

    fit(X) trains on uint8 patches (an (n, size, size) array or a
    PatchStore); transform(X) masks the configured hole in each input
    patch, regenerates it, and returns composed uint8 patches. score(X)
    is the mean finite hole-region PSNR, so estimators drop into
    model-selection tooling directly.
    """

    model_type = "base"
    loss_columns: list = []

    # subclasses implement:
    #   _validate_params() -> None
    #   _fit(patches, resume_from, checkpoint_dir) -> None
    #   _generate_holes(masked normalized batch tensor) -> hole batch tensor
    # ... and declare their fitted attributes.

    def _mask(self) -> MaskSpec:
        return center_mask(self.patch_size, self.hole_size)

    def _as_patches(self, X) -> np.ndarray:
        if hasattr(X, "as_array"):  # PatchStore
            X = X.as_array()
        return check_patch_array(X, patch_size=self.patch_size)

    def _masked_input(self, patches: np.ndarray) -> torch.Tensor:
        mask = self._mask()
        masked = np.stack([apply_mask(p, mask, self.fill_value) for p in patches])
        return torch.from_numpy(np.stack([normalize(m) for m in masked]))[:, None]

    def fit(self, X, y=None, resume_from=None, checkpoint_dir=None):
        self._validate_params()
        patches = self._as_patches(X)
        if len(patches) == 0:
            raise ValueError("cannot fit on an empty patch set")
        self._fit(patches, resume_from=resume_from, checkpoint_dir=checkpoint_dir)
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        patches = self._as_patches(X)
        mask = self._mask()
        holes = self.generate_holes(patches)
        return np.stack([compose(p, h, mask) for p, h in zip(patches, holes)])

    def generate_holes(self, patches: np.ndarray) -> np.ndarray:
        """uint8 patches in, uint8 generated hole contents out."""
        self._check_fitted()
        patches = self._as_patches(patches)
        with torch.no_grad():
            holes = self._generate_holes(self._masked_input(patches))
        return np.stack([denormalize(h.squeeze(0).cpu().numpy()) for h in holes])

    def inpaint(self, patch: np.ndarray, mask: MaskSpec | None = None) -> InpaintResult:
        """Single-patch convenience wrapper returning full provenance."""
        self._check_fitted()
        expected = self._mask()
        if mask is not None and mask != expected:
            raise ConfigError(
                f"mask {mask} does not match the trained hole geometry {expected}"
            )
        patch = self._as_patches(patch)[0]
        hole = self.generate_holes(patch[None])[0]
        return InpaintResult(
            model_id=self.model_type,
            checkpoint_hash=self.checkpoint_hash_,
            patch=compose(patch, hole, expected),
            hole=hole,
            mask=expected,
        )

    def score(self, X, y=None) -> float:
        """Mean hole-region PSNR over X, identical cases excluded."""
        patches = self._as_patches(X)
        out = self.transform(patches)
        mask = self._mask()
        vals = [psnr(a, b, mask) for a, b in zip(patches, out)]
        finite = [v for v in vals if math.isfinite(v)]
        return float(np.mean(finite)) if finite else math.inf

    def _check_fitted(self):
        if not getattr(self, "fitted_", False):
            raise StoreError(f"{type(self).__name__} is not fitted; call fit() or load()")

    # --- checkpoint handling -------------------------------------------------

    def _module_states(self) -> dict:
        raise NotImplementedError

    def _optimizer_states(self) -> dict:
        return {}

    def save(self, path) -> Path:
        self._check_fitted()
        return ckpt_io.save_checkpoint(
            path,
            model_type=self.model_type,
            params=self.get_params(),
            epoch=self.epoch_,
            loss_history=self.loss_history_,
            loss_columns=self.loss_columns,
            module_states=self._module_states(),
            optimizer_states=self._optimizer_states(),
            rng_state=getattr(self, "rng_state_", None),
            seed=self.seed,
        )

    @classmethod
    def from_checkpoint(cls, path) -> "BaseInpainter":
        payload = ckpt_io.load_checkpoint(path)
        if payload["model_type"] != cls.model_type:
            raise StoreError(
                f"checkpoint holds a {payload['model_type']!r} model, expected {cls.model_type!r}"
            )
        est = cls(**payload["params"])
        est._validate_params()
        est._restore(payload)
        return est

    def export_loss_history(self, path) -> Path:
        self._check_fitted()
        return ckpt_io.export_loss_history(self.loss_history_, self.loss_columns, path)


class MeanFillInpainter(BaseInpainter):
    """Baseline: fill the hole with the mean of the surrounding context.

    No training, no network; this is the floor any generative model has
    to clear to be worth its parameters.
    """

    model_type = "meanfill"

    def __init__(self, patch_size=128, hole_size=64, fill_value=128, seed=0):
        self.patch_size = patch_size
        self.hole_size = hole_size
        self.fill_value = fill_value
        self.seed = seed

    def _validate_params(self):
        if self.hole_size > self.patch_size:
            raise ConfigError(
                f"hole {self.hole_size} larger than patch {self.patch_size}"
            )

    def fit(self, X=None, y=None, **kwargs):
        self._validate_params()
        self.fitted_ = True
        self.epoch_ = 0
        self.loss_history_ = []
        self.checkpoint_hash_ = ckpt_io.checkpoint_hash(self.get_params(), {})
        return self

    def generate_holes(self, patches: np.ndarray) -> np.ndarray:
        self._check_fitted()
        patches = self._as_patches(patches)
        mask = self._mask()
        hole = mask.bool_mask(self.patch_size, self.patch_size)
        out = np.empty((len(patches), mask.hh, mask.hw), dtype=np.uint8)
        for i, p in enumerate(patches):
            context_mean = float(p[~hole].mean())
            out[i] = quantize_u8(np.full((mask.hh, mask.hw), context_mean))
        return out

    def _module_states(self):
        return {}

    def _restore(self, payload):
        self.fitted_ = True
        self.epoch_ = payload["epoch"]
        self.loss_history_ = payload["loss_history"]
        self.checkpoint_hash_ = payload["content_hash"]
