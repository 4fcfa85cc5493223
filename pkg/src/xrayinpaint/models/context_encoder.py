"""Context encoder: encoder-decoder generator predicting hole content from
the masked patch, trained with a combined reconstruction + adversarial
loss (0.998 / 0.002 by default) against a hole discriminator.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, TrainingError
from ..imaging import apply_mask, normalize
from .base import BaseInpainter, batches
from .checkpoint import capture_rng, restore_rng, save_checkpoint, checkpoint_hash
from .losses import generator_loss, reconstruction_mse, score_log_loss
from .nets import HoleGenerator, PatchDiscriminator
from ..data.store import derive_seed


class ContextEncoderInpainter(BaseInpainter):
    """Predicts the hole from its surroundings in a single forward pass.

    Defaults follow the paper-scale setup: 128px patches with 64px
    centered holes, 128 base channels, 6 encoder / 5 decoder / 5
    discriminator layers, loss weights 0.998 / 0.002, 70 epochs, Adam
    with lr 2e-4 and betas (0.5, 0.999). The discriminator judges the
    hole region by default; set discriminator_on="patch" to let it see
    the full composed patch instead.
    """

    model_type = "ce"
    loss_columns = ["step", "l_rec", "l_adv", "total"]

    def __init__(
        self,
        patch_size=128,
        hole_size=64,
        base_channels=128,
        encoder_layers=6,
        decoder_layers=5,
        discriminator_layers=5,
        lambda_rec=0.998,
        lambda_adv=0.002,
        epochs=70,
        learning_rate=2e-4,
        batch_size=64,
        fill_value=128,
        discriminator_on="hole",
        seed=0,
    ):
        self.patch_size = patch_size
        self.hole_size = hole_size
        self.base_channels = base_channels
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.discriminator_layers = discriminator_layers
        self.lambda_rec = lambda_rec
        self.lambda_adv = lambda_adv
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.fill_value = fill_value
        self.discriminator_on = discriminator_on
        self.seed = seed

    def _validate_params(self):
        if abs(self.lambda_rec + self.lambda_adv - 1.0) > 1e-9:
            raise ConfigError(
                f"loss weights must sum to 1: {self.lambda_rec} + {self.lambda_adv}"
            )
        for name in ("encoder_layers", "decoder_layers", "discriminator_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.discriminator_on not in ("hole", "patch"):
            raise ConfigError(f"discriminator_on must be 'hole' or 'patch', got {self.discriminator_on!r}")
        bottleneck, rem = divmod(self.patch_size, 2**self.encoder_layers)
        if rem or bottleneck < 1:
            raise ConfigError(
                f"{self.encoder_layers} encoder layers cannot halve a "
                f"{self.patch_size}px patch cleanly"
            )
        if bottleneck * 2**self.decoder_layers != self.hole_size:
            raise ConfigError(
                f"decoder grows the {bottleneck}px bottleneck to "
                f"{bottleneck * 2 ** self.decoder_layers}px but the hole is {self.hole_size}px"
            )
        disc_input = self.hole_size if self.discriminator_on == "hole" else self.patch_size
        final = disc_input // 2 ** (self.discriminator_layers - 1)
        if final < 1 or final * 2 ** (self.discriminator_layers - 1) != disc_input:
            raise ConfigError(
                f"{self.discriminator_layers} discriminator layers cannot reduce a "
                f"{disc_input}px input to a scalar"
            )

    def _build(self):
        torch.manual_seed(derive_seed(self.seed, "ce-init"))
        self.generator_ = HoleGenerator(
            patch_size=self.patch_size,
            hole_size=self.hole_size,
            base_channels=self.base_channels,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
        )
        disc_input = self.hole_size if self.discriminator_on == "hole" else self.patch_size
        self.discriminator_ = PatchDiscriminator(
            input_size=disc_input,
            base_channels=self.base_channels,
            layers=self.discriminator_layers,
        )

    def _disc_input(self, holes, masked):
        if self.discriminator_on == "hole":
            return holes
        mask = self._mask()
        filled = masked.clone()
        filled[:, :, mask.hy : mask.hy + mask.hh, mask.hx : mask.hx + mask.hw] = holes
        return filled

    def _fit(self, patches, resume_from=None, checkpoint_dir=None):
        mask = self._mask()
        self._build()
        opt_g = torch.optim.Adam(self.generator_.parameters(), lr=self.learning_rate, betas=(0.5, 0.999))
        opt_d = torch.optim.Adam(self.discriminator_.parameters(), lr=self.learning_rate, betas=(0.5, 0.999))
        rng = np.random.default_rng(derive_seed(self.seed, "ce-shuffle"))
        history = []
        start_epoch = 0
        if resume_from is not None:
            payload = self._load_payload(resume_from)
            self.generator_.load_state_dict(payload["module_states"]["generator"])
            self.discriminator_.load_state_dict(payload["module_states"]["discriminator"])
            opt_g.load_state_dict(payload["optimizer_states"]["generator"])
            opt_d.load_state_dict(payload["optimizer_states"]["discriminator"])
            restore_rng(payload["rng_state"], rng)
            history = [list(row) for row in payload["loss_history"]]
            start_epoch = payload["epoch"]

        n = len(patches)
        step = len(history)
        self.generator_.train()
        self.discriminator_.train()
        for epoch in range(start_epoch, self.epochs):
            order = rng.permutation(n)
            for idx in batches(n, self.batch_size, order):
                batch = patches[idx]
                masked = self._masked_input(batch)
                target = torch.from_numpy(
                    np.stack([normalize(p) for p in batch])
                )[:, None, mask.hy : mask.hy + mask.hh, mask.hx : mask.hx + mask.hw]

                fake = self.generator_(masked)
                real_in = self._disc_input(target, masked)
                fake_in = self._disc_input(fake, masked)

                d_real = self.discriminator_(real_in)
                d_fake = self.discriminator_(fake_in.detach())
                d_loss = -(torch.log(d_real) + torch.log(1.0 - d_fake)).mean()
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

                d_score = self.discriminator_(fake_in)
                l_rec = reconstruction_mse(fake, target)
                l_adv = score_log_loss(d_score)
                total = self.lambda_rec * l_rec + self.lambda_adv * l_adv
                opt_g.zero_grad()
                total.backward()
                opt_g.step()

                history.append([step, l_rec.item(), l_adv.item(), total.item()])
                step += 1
                if not math.isfinite(history[-1][3]) or not math.isfinite(d_loss.item()):
                    self._abort_diverged(history, epoch, opt_g, opt_d, rng, checkpoint_dir)
            self._finalize(history, epoch + 1, rng)
            if checkpoint_dir is not None:
                self._save_epoch(checkpoint_dir, epoch + 1, opt_g, opt_d)
        if self.epochs <= start_epoch:  # epochs=0 or resume at/after the final epoch
            self._finalize(history, start_epoch, rng)

    def _finalize(self, history, epoch, rng):
        self.fitted_ = True
        self.epoch_ = epoch
        self.loss_history_ = history
        self.rng_state_ = capture_rng(rng)
        self.checkpoint_hash_ = checkpoint_hash(self.get_params(), self._module_states())

    def _save_epoch(self, checkpoint_dir, epoch, opt_g, opt_d):
        save_checkpoint(
            Path(checkpoint_dir) / f"{self.model_type}-epoch{epoch:04d}.pt",
            model_type=self.model_type,
            params=self.get_params(),
            epoch=epoch,
            loss_history=self.loss_history_,
            loss_columns=self.loss_columns,
            module_states=self._module_states(),
            optimizer_states={"generator": opt_g.state_dict(), "discriminator": opt_d.state_dict()},
            rng_state=self.rng_state_,
            seed=self.seed,
        )

    def _abort_diverged(self, history, epoch, opt_g, opt_d, rng, checkpoint_dir):
        self._finalize(history, epoch, rng)
        target = Path(checkpoint_dir or ".") / f"{self.model_type}-diverged.pt"
        save_checkpoint(
            target,
            model_type=self.model_type,
            params=self.get_params(),
            epoch=epoch,
            loss_history=self.loss_history_,
            loss_columns=self.loss_columns,
            module_states=self._module_states(),
            optimizer_states={"generator": opt_g.state_dict(), "discriminator": opt_d.state_dict()},
            rng_state=self.rng_state_,
            seed=self.seed,
        )
        raise TrainingError(
            f"non-finite loss at step {len(history) - 1}; diagnostic checkpoint at {target}"
        )

    def _load_payload(self, path):
        from .checkpoint import load_checkpoint

        payload = load_checkpoint(path)
        if payload["model_type"] != self.model_type:
            raise ConfigError(
                f"cannot resume a {self.model_type!r} model from a "
                f"{payload['model_type']!r} checkpoint"
            )
        if payload["params"] != self.get_params():
            raise ConfigError("checkpoint parameters differ from this estimator's")
        return payload

    def _generate_holes(self, masked: torch.Tensor) -> torch.Tensor:
        self.generator_.eval()
        return self.generator_(masked)

    def discriminator_score(self, holes_u8: np.ndarray) -> np.ndarray:
        """Realness scores in (0,1) for uint8 hole crops, eval mode."""
        self._check_fitted()
        holes = np.asarray(holes_u8)
        if holes.ndim == 2:
            holes = holes[None]
        t = torch.from_numpy(np.stack([normalize(h) for h in holes]))[:, None]
        self.discriminator_.eval()
        with torch.no_grad():
            return self.discriminator_(t).numpy()

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
