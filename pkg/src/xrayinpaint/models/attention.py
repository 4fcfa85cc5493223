"""Contextual attention: reconstruct hole features from background patches.

The core operates on explicit patch-vector matrices so its properties
(row-stochastic attention, exact-match argmax, permutation equivariance)
can be checked in isolation; the feature-map wrapper handles extraction
and overlap-normalized reassembly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import AttentionError

NORM_EPS = 1e-8


def softmax_rows(scores: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax with an order-canonical denominator.

    The exp terms are sorted before summation, so the normalizer (and
    hence every attention entry) is bit-identical under any permutation
    of the candidates. This is what makes permutation equivariance exact
    rather than merely approximate.
    """
    m = scores.max(dim=1, keepdim=True).values
    e = torch.exp(scores - m)
    denom = torch.sort(e, dim=1).values.sum(dim=1, keepdim=True)
    return e / denom


def attention_distributions(
    fg_vectors: torch.Tensor, bg_vectors: torch.Tensor, scale: float
) -> torch.Tensor:
    """Cosine-similarity attention of each foreground vector over background vectors.

    fg_vectors: (nf, d), bg_vectors: (nb, d). Returns (nf, nb) rows
    summing to one.
    """
    if bg_vectors.shape[0] == 0:
        raise AttentionError("no background patches to attend over")
    fgn = fg_vectors / fg_vectors.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)
    bgn = bg_vectors / bg_vectors.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)
    return softmax_rows(scale * (fgn @ bgn.T))


@dataclass
class AttentionMap:
    """Per-hole-location distributions over background locations.

    probs[i, j] is how much hole location fg_locations[i] draws from the
    background patch centered at bg_locations[j].
    """

    probs: np.ndarray
    fg_locations: np.ndarray  # (nf, 2) as (row, col)
    bg_locations: np.ndarray  # (nb, 2) as (row, col)

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            probs=self.probs,
            fg_locations=self.fg_locations,
            bg_locations=self.bg_locations,
        )

    @classmethod
    def load(cls, path) -> "AttentionMap":
        with np.load(path) as z:
            return cls(
                probs=z["probs"],
                fg_locations=z["fg_locations"],
                bg_locations=z["bg_locations"],
            )


def contextual_attention(
    fg_features: torch.Tensor,
    bg_features: torch.Tensor,
    hole_mask: torch.Tensor,
    patch: int = 3,
    scale: float = 10.0,
):
    """Rebuild hole features as attention-weighted sums of background patches.

    fg_features / bg_features: (C, H, W) feature maps spatially aligned
    with hole_mask (H, W boolean, True inside the hole). Foreground
    locations are the hole pixels; background candidates are the centers
    whose patch window lies fully inside the map and contains no hole
    pixel. Overlapping reconstructed patches are averaged uniformly.
    Non-hole output locations pass fg_features through unchanged.

    Returns (attended (C, H, W), AttentionMap).
    """
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"attention patch must be odd and >= 1, got {patch}")
    if fg_features.dim() != 3 or bg_features.dim() != 3:
        raise ValueError("feature maps must be (C, H, W)")
    if fg_features.shape != bg_features.shape:
        raise ValueError(
            f"foreground {tuple(fg_features.shape)} and background "
            f"{tuple(bg_features.shape)} features must align"
        )
    c, h, w = fg_features.shape
    hole = torch.as_tensor(hole_mask, dtype=torch.bool)
    if hole.shape != (h, w):
        raise ValueError(f"mask {tuple(hole.shape)} does not match features ({h},{w})")
    if not hole.any():
        raise AttentionError("mask has no hole pixels to attend for")
    half = patch // 2

    # foreground vectors: zero-padded windows around every hole pixel
    fg_cols = F.unfold(fg_features[None].float(), kernel_size=patch, padding=half)[0]  # (c*k*k, h*w)
    hole_flat = hole.reshape(-1)
    fg_idx = torch.nonzero(hole_flat, as_tuple=False).squeeze(1)
    fg_vectors = fg_cols[:, fg_idx].T  # (nf, d)

    # background candidates: fully in-bounds windows containing no hole pixel
    bg_cols = F.unfold(bg_features[None].float(), kernel_size=patch)[0]  # (c*k*k, (h-2*half)*(w-2*half))
    hole_counts = F.unfold(hole[None, None].float(), kernel_size=patch)[0].sum(dim=0)
    bg_keep = torch.nonzero(hole_counts == 0, as_tuple=False).squeeze(1)
    if bg_keep.numel() == 0:
        raise AttentionError("mask leaves no complete background patch")
    bg_vectors = bg_cols[:, bg_keep].T  # (nb, d)

    attn = attention_distributions(fg_vectors, bg_vectors, scale)

    # overlap-accumulated reconstruction, pasted back at hole locations only
    rec_vectors = attn @ bg_vectors  # (nf, d)
    col_buffer = torch.zeros(c * patch * patch, h * w, dtype=rec_vectors.dtype)
    col_buffer[:, fg_idx] = rec_vectors.T
    summed = F.fold(col_buffer[None], output_size=(h, w), kernel_size=patch, padding=half)[0]
    ones = torch.zeros(1, patch * patch, h * w)
    ones[0, :, fg_idx] = 1.0
    counts = F.fold(ones, output_size=(h, w), kernel_size=patch, padding=half)[0, 0]
    attended = fg_features.clone().to(rec_vectors.dtype)
    covered = counts > 0
    blended = summed / counts.clamp_min(1.0)
    attended[:, hole & covered] = blended[:, hole & covered]

    inner_h, inner_w = h - 2 * half, w - 2 * half
    bg_rows = bg_keep.div(inner_w, rounding_mode="floor") + half
    bg_cols_idx = bg_keep.remainder(inner_w) + half
    fg_locations = torch.stack(
        [fg_idx.div(w, rounding_mode="floor"), fg_idx.remainder(w)], dim=1
    )
    bg_locations = torch.stack([bg_rows, bg_cols_idx], dim=1)
    amap = AttentionMap(
        probs=attn.detach().cpu().numpy(),
        fg_locations=fg_locations.cpu().numpy(),
        bg_locations=bg_locations.cpu().numpy(),
    )
    return attended, amap
