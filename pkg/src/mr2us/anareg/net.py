"""Registration network: shared encoder, twin decoders, cross-scale guidance.

The diffusion decoder predicts a denoising score for the noise-perturbed
fixed image; its per-scale features gate into the registration decoder
(attention-weighted injection), which predicts the deformation field. The
field head is zero-initialized so an untrained net performs the identity
warp.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ValidationError


class _ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, 3, padding=1),
            nn.GroupNorm(min(4, out_ch), out_ch),
            nn.LeakyReLU(0.1),
            nn.Conv3d(out_ch, out_ch, 3, padding=1),
            nn.GroupNorm(min(4, out_ch), out_ch),
            nn.LeakyReLU(0.1),
        )

    def forward(self, x):
        return self.block(x)


class _Decoder(nn.Module):
    """Upsample + skip-concat decoder; exposes per-scale features."""

    def __init__(self, chans, bott):
        super().__init__()
        self.blocks = nn.ModuleList()
        prev = bott
        for c in reversed(chans):
            self.blocks.append(_ConvBlock(prev + c, c))
            prev = c

    def forward(self, h, skips):
        feats = []
        for block, skip in zip(self.blocks, reversed(skips)):
            h = nn.functional.interpolate(h, scale_factor=2, mode="trilinear",
                                          align_corners=False)
            h = block(torch.cat([h, skip], dim=1))
            feats.append(h)
        return h, feats


class RegNet(nn.Module):
    def __init__(self, base=8, levels=3, guidance=True):
        super().__init__()
        self.guidance = guidance
        chans = [base * 2**i for i in range(levels)]
        self.enc = nn.ModuleList()
        prev = 3  # moving_t, fixed_t, noisy_fixed
        for c in chans:
            self.enc.append(_ConvBlock(prev, c))
            prev = c
        self.pool = nn.AvgPool3d(2)
        bott = prev * 2
        self.bottleneck = _ConvBlock(prev, bott)
        self.dec_diff = _Decoder(chans, bott)
        self.dec_reg = _Decoder(chans, bott)
        # attention-weighted injection from diffusion to registration decoder
        self.gate = nn.ModuleList(
            nn.Conv3d(c, c, 1) for c in reversed(chans))
        self.inject = nn.ModuleList(
            nn.Conv3d(c, c, 1) for c in reversed(chans))
        self.head_diff = nn.Conv3d(chans[0], 1, 1)
        self.head_reg = nn.Conv3d(chans[0], 3, 1)
        nn.init.zeros_(self.head_reg.weight)
        nn.init.zeros_(self.head_reg.bias)

    def forward(self, moving_t, fixed_t, noisy_fixed):
        """-> (phi (B, 3, X, Y, Z), score (B, 1, X, Y, Z))."""
        if not moving_t.shape == fixed_t.shape == noisy_fixed.shape:
            raise ValidationError("registration inputs must share dims")
        x = torch.cat([moving_t, fixed_t, noisy_fixed], dim=1)
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h)

        _, diff_feats = self.dec_diff(h, skips)
        # registration decoder with per-scale guidance from the diffusion path
        hr = h
        feats_iter = zip(self.dec_reg.blocks, reversed(skips), diff_feats,
                         self.gate, self.inject)
        for block, skip, dfeat, gate, inject in feats_iter:
            hr = nn.functional.interpolate(hr, scale_factor=2, mode="trilinear",
                                           align_corners=False)
            hr = block(torch.cat([hr, skip], dim=1))
            if self.guidance:
                hr = hr + torch.sigmoid(gate(dfeat)) * inject(dfeat)
        phi = self.head_reg(hr)
        score = self.head_diff(diff_feats[-1])
        return phi, score
