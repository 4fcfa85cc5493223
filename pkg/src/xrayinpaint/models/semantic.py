"""Semantic inpainting: train a DCGAN on whole patches, then recover each
test patch by gradient descent over the latent code.

The inversion objective is a weighted L1 context loss over known pixels
(weights favor pixels near the hole) plus a realism prior, the
discriminator's -log score on the generated image. Generator and
discriminator weights stay frozen during inversion; only z moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, TrainingError
from ..imaging import normalize
from ..data.store import derive_seed
from .base import BaseInpainter, batches
from .checkpoint import (
    capture_rng,
    checkpoint_hash,
    export_loss_history,
    load_checkpoint,
    restore_rng,
    save_checkpoint,
)
from .losses import context_weights, score_log_loss, weighted_l1_loss
from .nets import LatentGenerator, PatchDiscriminator

TRACE_COLUMNS = ["step", "context", "prior", "total", "step_size"]


@dataclass
class InversionTrace:
    """Per-step record of one latent inversion run."""

    item: int
    restart: int
    records: list = field(default_factory=list)

    def append(self, step: int, context: float, prior: float, lambda_prior: float, step_size: float):
        # total recomputed in float64 from the recorded components so the
        # decomposition identity holds exactly in the trace
        total = context + lambda_prior * prior
        self.records.append([step, context, prior, total, step_size])
        return total

    def totals(self) -> list:
        return [row[3] for row in self.records]

    def to_csv(self, path) -> Path:
        return export_loss_history(self.records, TRACE_COLUMNS, path)


def latent_context_losses(generator, z, original, weights) -> torch.Tensor:
    """Per-item weighted L1 between G(z) and the original known pixels."""
    out = generator(z)
    if out.shape != original.shape:
        raise ValueError(f"generator output {tuple(out.shape)} vs original {tuple(original.shape)}")
    per = (weights * (out - original).abs()).flatten(1).sum(dim=1)
    return per


def latent_prior_losses(generator, discriminator, z) -> torch.Tensor:
    """Per-item -log D(G(z)); positive because D scores live in (0,1)."""
    return -torch.log(discriminator(generator(z)))


def invert_latent(
    generator,
    discriminator,
    original: torch.Tensor,
    weights: torch.Tensor,
    z_dim: int,
    steps: int,
    lr: float,
    lambda_prior: float,
    seed: int,
    restarts: int = 1,
):
    """Best-so-far latent search for a batch of originals.

    original: (n, 1, H, W) normalized patches; weights broadcastable to
    the same shape with zeros inside the hole. Runs `restarts`
    independent z initializations and keeps, per item, the z with the
    lowest recorded total loss anywhere along any run (z0 included), so
    the result can only improve on the initialization.

    Returns (z_best (n, z_dim), traces) with one InversionTrace per
    (restart, item) pair.
    """
    if steps < 1:
        raise ConfigError(f"inversion needs >= 1 step, got {steps}")
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")
    n = original.shape[0]
    gen_rng = torch.Generator().manual_seed(seed % 2**63)
    best_z = torch.zeros(n, z_dim)
    best_total = torch.full((n,), math.inf, dtype=torch.float64)
    traces = []
    for restart in range(restarts):
        z = torch.randn(n, z_dim, generator=gen_rng, requires_grad=True)
        opt = torch.optim.Adam([z], lr=lr, betas=(0.9, 0.999))
        run_traces = [InversionTrace(item=i, restart=restart) for i in range(n)]
        for step in range(steps):
            ctx = latent_context_losses(generator, z, original, weights)
            prior = latent_prior_losses(generator, discriminator, z)
            loss = (ctx + lambda_prior * prior).sum()
            ctx_vals = ctx.detach().tolist()
            prior_vals = prior.detach().tolist()
            totals = []
            for i in range(n):
                total = run_traces[i].append(step, ctx_vals[i], prior_vals[i], lambda_prior, lr)
                totals.append(total)
            if not all(math.isfinite(t) for t in totals):
                err = TrainingError(f"non-finite inversion loss at step {step}")
                err.traces = traces + run_traces
                raise err
            totals_t = torch.tensor(totals, dtype=torch.float64)
            improved = totals_t < best_total
            if improved.any():
                best_total[improved] = totals_t[improved]
                best_z[improved] = z.detach()[improved]
            opt.zero_grad()
            loss.backward()
            opt.step()
        traces.extend(run_traces)
    return best_z, traces


class SemanticInpainter(BaseInpainter):
    """DCGAN training followed by per-patch latent inversion.

    Paper-scale defaults: 128px patches, 80 epochs. The inversion knobs
    (z_dim, steps, learning rate, prior weight, neighborhood window,
    restarts) are not stated in the source material and must be reported
    alongside any results; the defaults here are declared in get_params().
    """

    model_type = "si"
    loss_columns = ["step", "d_loss", "g_loss"]

    def __init__(
        self,
        patch_size=128,
        hole_size=64,
        z_dim=100,
        base_channels=64,
        epochs=80,
        learning_rate=2e-4,
        batch_size=64,
        inversion_steps=1000,
        inversion_lr=0.1,
        lambda_prior=0.003,
        window=7,
        restarts=1,
        fill_value=128,
        seed=0,
    ):
        self.patch_size = patch_size
        self.hole_size = hole_size
        self.z_dim = z_dim
        self.base_channels = base_channels
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.inversion_steps = inversion_steps
        self.inversion_lr = inversion_lr
        self.lambda_prior = lambda_prior
        self.window = window
        self.restarts = restarts
        self.fill_value = fill_value
        self.seed = seed

    def _validate_params(self):
        if self.z_dim < 1:
            raise ConfigError("z_dim must be >= 1")
        if self.inversion_steps < 1:
            raise ConfigError("inversion_steps must be >= 1")
        if self.lambda_prior < 0:
            raise ConfigError("lambda_prior must be >= 0")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        k = self.patch_size.bit_length() - 1
        if 2**k != self.patch_size or k < 3:
            raise ConfigError(f"patch_size must be a power of two >= 8, got {self.patch_size}")
        if self.hole_size > self.patch_size:
            raise ConfigError("hole larger than patch")

    def _build(self):
        torch.manual_seed(derive_seed(self.seed, "si-init"))
        self.generator_ = LatentGenerator(
            patch_size=self.patch_size, z_dim=self.z_dim, base_channels=self.base_channels
        )
        layers = self.patch_size.bit_length() - 2  # mirrors the generator depth
        self.discriminator_ = PatchDiscriminator(
            input_size=self.patch_size, base_channels=self.base_channels, layers=layers
        )

    def _fit(self, patches, resume_from=None, checkpoint_dir=None):
        self._build()
        opt_g = torch.optim.Adam(self.generator_.parameters(), lr=self.learning_rate, betas=(0.5, 0.999))
        opt_d = torch.optim.Adam(self.discriminator_.parameters(), lr=self.learning_rate, betas=(0.5, 0.999))
        rng = np.random.default_rng(derive_seed(self.seed, "si-shuffle"))
        zgen = torch.Generator().manual_seed(derive_seed(self.seed, "si-z") % 2**63)
        history = []
        start_epoch = 0
        if resume_from is not None:
            payload = load_checkpoint(resume_from)
            if payload["model_type"] != self.model_type or payload["params"] != self.get_params():
                raise ConfigError("checkpoint does not match this estimator")
            self.generator_.load_state_dict(payload["module_states"]["generator"])
            self.discriminator_.load_state_dict(payload["module_states"]["discriminator"])
            opt_g.load_state_dict(payload["optimizer_states"]["generator"])
            opt_d.load_state_dict(payload["optimizer_states"]["discriminator"])
            restore_rng(payload["rng_state"], rng, zgen)
            history = [list(r) for r in payload["loss_history"]]
            start_epoch = payload["epoch"]

        n = len(patches)
        step = len(history)
        self.generator_.train()
        self.discriminator_.train()
        for epoch in range(start_epoch, self.epochs):
            order = rng.permutation(n)
            for idx in batches(n, self.batch_size, order):
                real = torch.from_numpy(np.stack([normalize(p) for p in patches[idx]]))[:, None]
                z = torch.randn(len(idx), self.z_dim, generator=zgen)
                fake = self.generator_(z)

                d_real = self.discriminator_(real)
                d_fake = self.discriminator_(fake.detach())
                d_loss = -(torch.log(d_real) + torch.log(1.0 - d_fake)).mean()
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

                g_loss = score_log_loss(self.discriminator_(fake))
                opt_g.zero_grad()
                g_loss.backward()
                opt_g.step()

                history.append([step, d_loss.item(), g_loss.item()])
                step += 1
                if not math.isfinite(history[-1][1]) or not math.isfinite(history[-1][2]):
                    self._finalize(history, epoch, rng, zgen)
                    target = Path(".") / f"{self.model_type}-diverged.pt"
                    self.save(target)
                    raise TrainingError(
                        f"non-finite GAN loss at step {step - 1}; diagnostic checkpoint at {target}"
                    )
            self._finalize(history, epoch + 1, rng, zgen)
            if checkpoint_dir is not None:
                save_checkpoint(
                    Path(checkpoint_dir) / f"{self.model_type}-epoch{epoch + 1:04d}.pt",
                    model_type=self.model_type,
                    params=self.get_params(),
                    epoch=epoch + 1,
                    loss_history=history,
                    loss_columns=self.loss_columns,
                    module_states=self._module_states(),
                    optimizer_states={
                        "generator": opt_g.state_dict(),
                        "discriminator": opt_d.state_dict(),
                    },
                    rng_state=self.rng_state_,
                    seed=self.seed,
                )
        if self.epochs <= start_epoch:
            self._finalize(history, start_epoch, rng, zgen)

    def _finalize(self, history, epoch, rng, zgen):
        self.fitted_ = True
        self.epoch_ = epoch
        self.loss_history_ = history
        self.rng_state_ = capture_rng(rng, zgen)
        self.checkpoint_hash_ = checkpoint_hash(self.get_params(), self._module_states())

    def sample(self, z: np.ndarray | torch.Tensor) -> np.ndarray:
        """Generator output for given latents, as float arrays in [-1,1]."""
        self._check_fitted()
        z = torch.as_tensor(np.asarray(z, dtype=np.float32))
        self.generator_.eval()
        with torch.no_grad():
            return self.generator_(z).squeeze(1).numpy()

    def invert(self, patches: np.ndarray, seed: int | None = None):
        """Latent inversion for uint8 patches; context comes from outside
        the configured hole. Returns (z (n, z_dim), traces)."""
        self._check_fitted()
        patches = self._as_patches(patches)
        mask = self._mask()
        weights = torch.from_numpy(
            context_weights(mask, self.patch_size, self.window).astype(np.float32)
        )
        original = torch.from_numpy(np.stack([normalize(p) for p in patches]))[:, None]
        self.generator_.eval()
        self.discriminator_.eval()
        z, traces = invert_latent(
            self.generator_,
            self.discriminator_,
            original,
            weights,
            z_dim=self.z_dim,
            steps=self.inversion_steps,
            lr=self.inversion_lr,
            lambda_prior=self.lambda_prior,
            seed=derive_seed(self.seed if seed is None else seed, "si-invert"),
            restarts=self.restarts,
        )
        return z.numpy(), traces

    def _generate_holes(self, masked: torch.Tensor) -> torch.Tensor:
        # the weighted context loss ignores hole pixels, so the masked
        # patch serves directly as the inversion target
        mask = self._mask()
        weights = torch.from_numpy(
            context_weights(mask, self.patch_size, self.window).astype(np.float32)
        )
        self.generator_.eval()
        self.discriminator_.eval()
        with torch.enable_grad():
            z, _ = invert_latent(
                self.generator_,
                self.discriminator_,
                masked,
                weights,
                z_dim=self.z_dim,
                steps=self.inversion_steps,
                lr=self.inversion_lr,
                lambda_prior=self.lambda_prior,
                seed=derive_seed(self.seed, "si-invert"),
                restarts=self.restarts,
            )
        with torch.no_grad():
            full = self.generator_(torch.as_tensor(z))
        return full[:, :, mask.hy : mask.hy + mask.hh, mask.hx : mask.hx + mask.hw]

    def _module_states(self):
        return {
            "generator": self.generator_.state_dict(),
            "discriminator": self.discriminator_.state_dict(),
        }

    def _restore(self, payload):
        self._build()
        self.generator_.load_state_dict(payload["module_states"]["generator"])
        self.discriminator_.load_state_dict(payload["module_states"]["discriminator"])
        self.generator_.eval()
        self.discriminator_.eval()
        self.fitted_ = True
        self.epoch_ = payload["epoch"]
        self.loss_history_ = payload["loss_history"]
        self.rng_state_ = payload.get("rng_state")
        self.checkpoint_hash_ = payload["content_hash"]
