"""Network building blocks for the three inpainting models.

All generators end in tanh (outputs live in [-1,1]) and all
discriminators end in a sigmoid squeezed away from 0 and 1 so the log
losses stay finite. Spatial geometry is parameterized: the paper-scale
configuration is 128-pixel patches with 64-pixel holes, and the test
suite runs the same code at 32/16.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .losses import SCORE_EPS


def _log2_exact(n: int, what: str) -> int:
    k = n.bit_length() - 1
    if n <= 0 or 2**k != n:
        raise ValueError(f"{what} must be a power of two, got {n}")
    return k


def channel_schedule(base: int, n: int, cap: int = 8) -> list[int]:
    return [min(base * 2**i, base * cap) for i in range(n)]


def init_dcgan_weights(module: nn.Module) -> None:
    """N(0, 0.02) conv weights, N(1, 0.02) batchnorm scales."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


class HoleGenerator(nn.Module):
    """Encoder-decoder that predicts hole content from a masked patch.

    encoder_layers stride-2 4x4 convolutions halve the input down to a
    small bottleneck; decoder_layers mirrored transposed convolutions
    grow it back to the hole size.
    """

    def __init__(
        self,
        patch_size: int = 128,
        hole_size: int = 64,
        base_channels: int = 128,
        encoder_layers: int = 6,
        decoder_layers: int = 5,
    ):
        super().__init__()
        bottleneck = patch_size // 2**encoder_layers
        if bottleneck < 1 or patch_size != bottleneck * 2**encoder_layers:
            raise ValueError(
                f"{encoder_layers} encoder layers cannot halve a {patch_size}px patch cleanly"
            )
        if bottleneck * 2**decoder_layers != hole_size:
            raise ValueError(
                f"{decoder_layers} decoder layers grow a {bottleneck}px bottleneck to "
                f"{bottleneck * 2 ** decoder_layers}px, hole is {hole_size}px"
            )
        self.patch_size = patch_size
        self.hole_size = hole_size

        enc_ch = channel_schedule(base_channels, encoder_layers)
        layers = []
        prev = 1
        for i, ch in enumerate(enc_ch):
            layers.append(nn.Conv2d(prev, ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            prev = ch
        self.encoder = nn.Sequential(*layers)

        dec_ch = list(reversed(channel_schedule(base_channels, decoder_layers - 1))) if (
            decoder_layers > 1
        ) else []
        layers = []
        for ch in dec_ch:
            layers.append(nn.ConvTranspose2d(prev, ch, 4, stride=2, padding=1))
            layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.ReLU(inplace=True))
            prev = ch
        layers.append(nn.ConvTranspose2d(prev, 1, 4, stride=2, padding=1))
        layers.append(nn.Tanh())
        self.decoder = nn.Sequential(*layers)
        init_dcgan_weights(self)

    def forward(self, masked: torch.Tensor) -> torch.Tensor:
        if masked.dim() != 4 or masked.shape[1] != 1 or masked.shape[2:] != (
            self.patch_size,
            self.patch_size,
        ):
            raise ValueError(
                f"expected (n, 1, {self.patch_size}, {self.patch_size}), got {tuple(masked.shape)}"
            )
        return self.decoder(self.encoder(masked))


class PatchDiscriminator(nn.Module):
    """Stride-2 conv stack ending in a single realness score in (0,1)."""

    def __init__(self, input_size: int = 64, base_channels: int = 128, layers: int = 5):
        super().__init__()
        if layers < 2:
            raise ValueError(f"discriminator needs >= 2 layers, got {layers}")
        final_size = input_size // 2 ** (layers - 1)
        if final_size < 1 or final_size * 2 ** (layers - 1) != input_size:
            raise ValueError(
                f"{layers} layers cannot reduce a {input_size}px input to a scalar cleanly"
            )
        self.input_size = input_size
        chans = channel_schedule(base_channels, layers - 1)
        seq = []
        prev = 1
        for i, ch in enumerate(chans):
            seq.append(nn.Conv2d(prev, ch, 4, stride=2, padding=1))
            if i > 0:
                seq.append(nn.BatchNorm2d(ch))
            seq.append(nn.LeakyReLU(0.2, inplace=True))
            prev = ch
        seq.append(nn.Conv2d(prev, 1, final_size, stride=1, padding=0))
        self.net = nn.Sequential(*seq)
        init_dcgan_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"expected (n, 1, {self.input_size}, {self.input_size}), got {tuple(x.shape)}"
            )
        logits = self.net(x).reshape(x.shape[0])
        return torch.sigmoid(logits).clamp(SCORE_EPS, 1.0 - SCORE_EPS)


class LatentGenerator(nn.Module):
    """DCGAN generator: latent vector to a full patch in [-1,1]."""

    def __init__(self, patch_size: int = 128, z_dim: int = 100, base_channels: int = 64):
        super().__init__()
        ups = _log2_exact(patch_size, "patch_size") - 2
        if ups < 1:
            raise ValueError(f"patch_size {patch_size} too small for a DCGAN generator")
        self.patch_size = patch_size
        self.z_dim = z_dim
        chans = list(reversed(channel_schedule(base_channels, ups)))
        seq = [
            nn.ConvTranspose2d(z_dim, chans[0], 4, stride=1, padding=0),
            nn.BatchNorm2d(chans[0]),
            nn.ReLU(inplace=True),
        ]
        prev = chans[0]
        for ch in chans[1:]:
            seq += [
                nn.ConvTranspose2d(prev, ch, 4, stride=2, padding=1),
                nn.BatchNorm2d(ch),
                nn.ReLU(inplace=True),
            ]
            prev = ch
        seq += [nn.ConvTranspose2d(prev, 1, 4, stride=2, padding=1), nn.Tanh()]
        self.net = nn.Sequential(*seq)
        init_dcgan_weights(self)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() == 2:
            z = z[:, :, None, None]
        if z.dim() != 4 or z.shape[1] != self.z_dim:
            raise ValueError(f"expected (n, {self.z_dim}) latents, got {tuple(z.shape)}")
        return self.net(z)


def _elu_conv(in_ch, out_ch, stride=1, dilation=1):
    pad = dilation  # 3x3 kernels keep spatial size at stride 1
    if stride == 2:
        pad = 1
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=pad, dilation=dilation),
        nn.ELU(inplace=True),
    )


class DilatedTrunk(nn.Module):
    """Downsample to quarter resolution, widen the view with dilations."""

    def __init__(self, in_channels: int, base_channels: int, dilation_schedule):
        super().__init__()
        c = base_channels
        self.down = nn.Sequential(
            _elu_conv(in_channels, c),
            _elu_conv(c, 2 * c, stride=2),
            _elu_conv(2 * c, 4 * c, stride=2),
        )
        self.dilated = nn.Sequential(
            *[_elu_conv(4 * c, 4 * c, dilation=int(r)) for r in dilation_schedule]
        )
        self.out_channels = 4 * c

    def forward(self, x):
        return self.dilated(self.down(x))


class QuarterDecoder(nn.Module):
    """Quarter-resolution features back to a full-size 1-channel map."""

    def __init__(self, in_channels: int, base_channels: int):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            _elu_conv(in_channels, 2 * c),
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1),
            nn.ELU(inplace=True),
            nn.ConvTranspose2d(c, c, 4, stride=2, padding=1),
            nn.ELU(inplace=True),
            nn.Conv2d(c, 1, 3, padding=1),
            nn.Tanh(),
        )

    def forward(self, x):
        return self.net(x)


class CoarseNet(nn.Module):
    """Stage one: dilated-convolution coarse prediction of the full patch.

    Input is the masked image plus a hole-indicator channel.
    """

    def __init__(self, patch_size: int, base_channels: int = 32, dilation_schedule=(2, 4, 8, 16)):
        super().__init__()
        if patch_size % 4 != 0:
            raise ValueError(f"patch_size must be divisible by 4, got {patch_size}")
        self.patch_size = patch_size
        self.trunk = DilatedTrunk(2, base_channels, dilation_schedule)
        self.decoder = QuarterDecoder(self.trunk.out_channels, base_channels)

    def forward(self, masked: torch.Tensor, hole: torch.Tensor) -> torch.Tensor:
        x = torch.cat([masked, hole.expand_as(masked)], dim=1)
        return self.decoder(self.trunk(x))


class RefineNet(nn.Module):
    """Stage two: dilated branch plus contextual-attention branch.

    Both branches read the coarse-filled patch; their quarter-resolution
    features are concatenated and decoded to the refined prediction. The
    attention branch can be switched off (zeroed features) to measure
    its contribution.
    """

    def __init__(
        self,
        patch_size: int,
        base_channels: int = 32,
        dilation_schedule=(2, 4, 8, 16),
        attention_patch: int = 3,
        softmax_scale: float = 10.0,
    ):
        super().__init__()
        from .attention import contextual_attention  # local import to avoid cycle

        self._attend = contextual_attention
        self.patch_size = patch_size
        self.attention_patch = attention_patch
        self.softmax_scale = softmax_scale
        self.dilated_branch = DilatedTrunk(2, base_channels, dilation_schedule)
        self.attention_branch = DilatedTrunk(2, base_channels, dilation_schedule=())
        c = self.dilated_branch.out_channels
        self.post_attention = _elu_conv(c, c)
        self.decoder = QuarterDecoder(2 * c, base_channels)

    def forward(
        self,
        coarse_filled: torch.Tensor,
        hole: torch.Tensor,
        use_attention: bool = True,
        collect_maps: bool = False,
    ):
        x = torch.cat([coarse_filled, hole.expand_as(coarse_filled)], dim=1)
        dil = self.dilated_branch(x)
        att_feats = self.attention_branch(x)
        maps = []
        if use_attention:
            quarter = hole[:, 0, ::4, ::4].bool()
            attended = []
            for i in range(att_feats.shape[0]):
                out, amap = self._attend(
                    att_feats[i],
                    att_feats[i],
                    quarter[i],
                    patch=self.attention_patch,
                    scale=self.softmax_scale,
                )
                attended.append(out)
                if collect_maps:
                    maps.append(amap)
            att = torch.stack(attended)
        else:
            att = torch.zeros_like(att_feats)
        att = self.post_attention(att)
        refined = self.decoder(torch.cat([dil, att], dim=1))
        return (refined, maps) if collect_maps else (refined, None)
