"""Time-conditioned U-Net translator with shallow/deep feature taps.

The same class serves 2D slice batches (ndim=2, the default) and tiny full
3D volumes (ndim=3). The shallow tap is the first encoder stage output, the
deep tap is the bottleneck; tap levels are configurable. The shared learned
projections proj7 (7x7, shallow/texture path) and proj3 (3x3, deep/boundary
path) live on the net so both modalities are compared through the same
kernels.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from ..errors import ValidationError


def _conv(ndim):
    return nn.Conv2d if ndim == 2 else nn.Conv3d


def _sinusoidal_embedding(t, dim):
    """(B,) times in [0,1] -> (B, dim) sinusoidal embedding."""
    half = dim // 2
    freqs = torch.exp(torch.arange(half, dtype=torch.float32, device=t.device)
                      * (-math.log(1000.0) / max(half - 1, 1)))
    ang = t[:, None] * freqs[None, :] * 2 * math.pi
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class _Block(nn.Module):
    """Two convolutions with group norm and an additive time bias."""

    def __init__(self, ndim, in_ch, out_ch, time_dim):
        super().__init__()
        Conv = _conv(ndim)
        self.conv1 = Conv(in_ch, out_ch, 3, padding=1)
        self.conv2 = Conv(out_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(4, out_ch), out_ch)
        self.norm2 = nn.GroupNorm(min(4, out_ch), out_ch)
        self.time = nn.Linear(time_dim, out_ch)
        self.act = nn.SiLU()
        self.ndim = ndim

    def forward(self, x, temb):
        h = self.act(self.norm1(self.conv1(x)))
        bias = self.time(temb)
        bias = bias.reshape(bias.shape + (1,) * self.ndim)
        h = h + bias
        return self.act(self.norm2(self.conv2(h)))


class TranslatorNet(nn.Module):
    """Maps a bridge state x_t (plus time t) to the predicted terminal x1.

    The prediction is residual (x + head(features)) with a zero-initialized
    head, so an untrained net is the identity map.
    """

    def __init__(self, ndim=2, base=16, levels=3, time_dim=32,
                 shallow_level=0, deep_level=None):
        super().__init__()
        if ndim not in (2, 3):
            raise ValidationError("ndim must be 2 or 3")
        self.ndim = ndim
        self.levels = levels
        self.shallow_level = shallow_level
        self.deep_level = levels if deep_level is None else deep_level
        self.time_dim = time_dim
        Conv = _conv(ndim)
        chans = [base * 2**i for i in range(levels)]
        self.chans = chans

        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.enc = nn.ModuleList()
        prev = 1
        for c in chans:
            self.enc.append(_Block(ndim, prev, c, time_dim))
            prev = c
        self.pool = (nn.AvgPool2d(2) if ndim == 2 else nn.AvgPool3d(2))
        self.bottleneck = _Block(ndim, prev, prev * 2, time_dim)
        bott = prev * 2
        self.dec = nn.ModuleList()
        prev = bott
        for c in reversed(chans):
            self.dec.append(_Block(ndim, prev + c, c, time_dim))
            prev = c
        self.head = Conv(prev, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

        shallow_ch = self._tap_channels(self.shallow_level)
        deep_ch = self._tap_channels(self.deep_level)
        self.proj7 = Conv(shallow_ch, shallow_ch, 7, padding=3)
        self.proj3 = Conv(deep_ch, deep_ch, 3, padding=1)

    def _tap_channels(self, level):
        if level < self.levels:
            return self.chans[level]
        return self.chans[-1] * 2

    def config(self):
        return {
            "ndim": self.ndim,
            "base": self.chans[0],
            "levels": self.levels,
            "time_dim": self.time_dim,
            "shallow_level": self.shallow_level,
            "deep_level": self.deep_level,
        }

    def _run(self, x, t):
        if x.ndim != self.ndim + 2:
            raise ValidationError(
                f"expected {self.ndim + 2}D input for ndim={self.ndim}, got {x.ndim}D"
            )
        if np.isscalar(t) or (torch.is_tensor(t) and t.ndim == 0):
            t = torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)
        temb = self.time_mlp(_sinusoidal_embedding(t, self.time_dim).to(x.dtype))
        taps = {}
        h = x
        skips = []
        for lvl, block in enumerate(self.enc):
            h = block(h, temb)
            if lvl == self.shallow_level:
                taps["shallow"] = h
            if lvl == self.deep_level:
                taps["deep"] = h
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h, temb)
        if self.deep_level >= self.levels:
            taps["deep"] = h
        if self.shallow_level >= self.levels:
            taps["shallow"] = h
        for block, skip in zip(self.dec, reversed(skips)):
            h = nn.functional.interpolate(
                h, scale_factor=2,
                mode="bilinear" if self.ndim == 2 else "trilinear",
                align_corners=False)
            h = block(torch.cat([h, skip], dim=1), temb)
        out = x + self.head(h)
        return out, taps

    def forward(self, x, t):
        out, _ = self._run(x, t)
        return out

    def features(self, x, t):
        """(shallow, deep) feature taps for input x at time t."""
        _, taps = self._run(x, t)
        return taps["shallow"], taps["deep"]

    def predict_np(self, x, t):
        """Numpy-facing terminal prediction used by the bridge rollout.

        Accepts (H, W), (B, H, W) for ndim=2 or (X, Y, Z) for ndim=3;
        returns the same shape. No gradients are recorded.
        """
        arr = np.asarray(x, dtype=np.float32)
        shape = arr.shape
        spatial = self.ndim
        if arr.ndim == spatial:
            batch = arr[None]
        elif arr.ndim == spatial + 1:
            batch = arr
        else:
            raise ValidationError(f"bad input shape {shape} for ndim={self.ndim}")
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                tt = torch.from_numpy(np.ascontiguousarray(batch))[:, None]
                out = self(tt, t)[:, 0].numpy()
        finally:
            self.train(was_training)
        return out.reshape(shape)
