from .attention import AttentionMap, attention_distributions, contextual_attention, softmax_rows
from .base import BaseInpainter, InpaintResult, MeanFillInpainter
from .checkpoint import export_loss_history, load_checkpoint, save_checkpoint
from .context_encoder import ContextEncoderInpainter
from .coarse_to_fine import ContextualAttentionInpainter
from .losses import (
    context_weights,
    generator_loss,
    reconstruction_mse,
    score_log_loss,
    weighted_l1_loss,
)
from .semantic import (
    InversionTrace,
    SemanticInpainter,
    invert_latent,
    latent_context_losses,
    latent_prior_losses,
)

MODEL_TYPES = {
    "ce": ContextEncoderInpainter,
    "si": SemanticInpainter,
    "ca": ContextualAttentionInpainter,
    "meanfill": MeanFillInpainter,
}


def load_inpainter(path):
    """Load any estimator from its checkpoint, dispatching on model type."""
    payload = load_checkpoint(path)
    cls = MODEL_TYPES.get(payload.get("model_type"))
    if cls is None:
        from ..errors import StoreError

        raise StoreError(f"unknown model type {payload.get('model_type')!r} in {path}")
    return cls.from_checkpoint(path)


__all__ = [
    "AttentionMap",
    "attention_distributions",
    "contextual_attention",
    "softmax_rows",
    "BaseInpainter",
    "InpaintResult",
    "MeanFillInpainter",
    "ContextEncoderInpainter",
    "ContextualAttentionInpainter",
    "SemanticInpainter",
    "InversionTrace",
    "invert_latent",
    "latent_context_losses",
    "latent_prior_losses",
    "context_weights",
    "generator_loss",
    "reconstruction_mse",
    "score_log_loss",
    "weighted_l1_loss",
    "export_loss_history",
    "load_checkpoint",
    "save_checkpoint",
    "load_inpainter",
    "MODEL_TYPES",
]
