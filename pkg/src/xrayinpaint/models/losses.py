"""Loss terms shared by the model estimators.

All losses are torch expressions so the same code path serves training
and the finite-difference gradient checks (which run in float64).
"""

from __future__ import annotations

import numpy as np
import torch

from ..imaging import MaskSpec

SCORE_EPS = 1e-7  # keeps discriminator scores strictly inside (0,1)


def reconstruction_mse(generated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the generated region."""
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(target.shape)}")
    diff = generated - target
    return (diff * diff).mean()


def score_log_loss(disc_score: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective -log(score) for score in (0,1).

    Also serves as the realism prior during latent inversion; both are
    the same penalty on the discriminator doubting the sample.
    """
    score = torch.as_tensor(disc_score)
    if (score <= 0).any() or (score >= 1).any():
        raise ValueError(f"discriminator score must lie strictly in (0,1), got {score}")
    return -torch.log(score).mean()


def generator_loss(
    generated: torch.Tensor,
    target: torch.Tensor,
    disc_score: torch.Tensor,
    lambda_rec: float = 0.998,
    lambda_adv: float = 0.002,
) -> torch.Tensor:
    """Weighted sum lambda_rec * MSE + lambda_adv * (-log score)."""
    return lambda_rec * reconstruction_mse(generated, target) + lambda_adv * score_log_loss(
        disc_score
    )


def context_weights(mask: MaskSpec, patch_size: int, window: int = 7) -> np.ndarray:
    """Per-pixel weights for the context loss.

    A known pixel's weight is the fraction of its window x window
    neighborhood covered by the hole (neighborhoods truncated at the
    patch border count missing pixels as known); hole pixels get zero.
    Pixels near the hole therefore weigh more than distant ones, which
    never exceed zero once the hole leaves their neighborhood entirely.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    mask.check_within(patch_size, patch_size)
    hole = mask.bool_mask(patch_size, patch_size).astype(np.int64)
    half = window // 2
    padded = np.pad(hole, half, mode="constant")
    # sliding-window sum via 2-D cumulative sums, exact in integers
    cum = padded.cumsum(axis=0).cumsum(axis=1)
    cum = np.pad(cum, ((1, 0), (1, 0)), mode="constant")
    counts = (
        cum[window:, window:]
        - cum[:-window, window:]
        - cum[window:, :-window]
        + cum[:-window, :-window]
    )
    weights = counts.astype(np.float64) / float(window * window)
    weights[hole.astype(bool)] = 0.0
    return weights


def weighted_l1_loss(
    generated: torch.Tensor, original: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Sum_i W_i * |generated_i - original_i| over the patch."""
    if generated.shape != original.shape:
        raise ValueError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(original.shape)}")
    if weights.shape != generated.shape[-2:]:
        raise ValueError(
            f"weight map {tuple(weights.shape)} does not match patch {tuple(generated.shape[-2:])}"
        )
    return (weights * (generated - original).abs()).sum()
