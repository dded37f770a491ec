"""Spectral synthesis: coarse frame decoder and a diffusion refiner.

The decoder consumes the frame-rate conditioning sequence plus an embedding of
the rendered pitch (F0 track and per-frame voicing) and regresses a coarse
spectral envelope under an L1 loss. Because regression to the mean blurs
harmonic detail, a second Gaussian diffusion model then refines the result: it
treats the ground-truth spectrogram as the clean signal and the coarse
prediction as conditioning, so at synthesis time it can hallucinate plausible
texture on top of the smooth estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .diffusion import (Denoiser, DenoiserConfig, DiffusionSchedule,
                        gaussian_forward, gdiff_loss, sample_gaussian)
from .encoders import FFTBlock, sinusoidal_codes
from .tensor import DTYPE, Parameters, RngState, ShapeError, Tensor


@dataclass
class MelStackConfig:
    hidden: int = 64
    spectral_dim: int = 16
    fft_blocks: int = 2
    attn_heads: int = 2
    conv_kernel: int = 5
    uv_categories: int = 2
    postnet_channels: int = 64
    postnet_layers: int = 6
    postnet_kernel: int = 3
    postnet_dilation_cycle: int = 4

    def validate(self) -> "MelStackConfig":
        if min(self.hidden, self.spectral_dim, self.fft_blocks, self.attn_heads,
               self.conv_kernel, self.postnet_channels, self.postnet_layers) < 1:
            raise ShapeError("spectral stack dimensions must be positive")
        if self.uv_categories < 2:
            raise ShapeError(f"uv_categories must be >= 2, got {self.uv_categories}")
        return self


class PitchEmbedding:
    """Project a rendered pitch track into frame features.

    F0 arrives standardized (zero mean, unit variance over the corpus) and
    voicing as one-hot rows; both are data, not graph nodes, so gradients flow
    only into the projection weights.
    """

    def __init__(self, params: Parameters, prefix: str, config: MelStackConfig,
                 rng: RngState, dtype=DTYPE):
        h = config.hidden
        self.dtype = dtype
        self.f0_w = params.add(f"{prefix}.f0.w",
                               tt.glorot(rng.child(0), (1, h), 1, h, dtype))
        self.f0_b = params.add(f"{prefix}.f0.b", np.zeros(h, dtype=dtype))
        self.uv_w = params.add(f"{prefix}.uv.w",
                               tt.normal_init(rng.child(1), (config.uv_categories, h),
                                              std=0.3, dtype=dtype))

    def __call__(self, f0: np.ndarray, uv_one_hot: np.ndarray) -> Tensor:
        f0 = np.asarray(f0, dtype=self.dtype).reshape(-1, 1)
        uv = np.asarray(uv_one_hot, dtype=self.dtype)
        if uv.ndim != 2 or uv.shape != (len(f0), self.uv_w.shape[0]):
            raise ShapeError(f"pitch embedding: voicing must be "
                             f"[{len(f0)}, {self.uv_w.shape[0]}], got {uv.shape}")
        return (tt.const(f0, dtype=None) @ self.f0_w + self.f0_b
                + tt.const(uv, dtype=None) @ self.uv_w)


class MelDecoder:
    """Frame conditioning + pitch embedding -> coarse spectral frames."""

    def __init__(self, params: Parameters, prefix: str, config: MelStackConfig,
                 rng: RngState, dtype=DTYPE):
        self.config = config.validate()
        self.dtype = dtype
        self.blocks = [FFTBlock(params, f"{prefix}.block{i}", config.hidden,
                                config.attn_heads, config.conv_kernel,
                                rng.child(i), dtype)
                       for i in range(config.fft_blocks)]
        self.out_w = params.add(f"{prefix}.out.w",
                                tt.glorot(rng.child(100), (config.hidden, config.spectral_dim),
                                          config.hidden, config.spectral_dim, dtype))
        self.out_b = params.add(f"{prefix}.out.b",
                                np.zeros(config.spectral_dim, dtype=dtype))

    def __call__(self, condition: Tensor, pitch_emb: Tensor) -> Tensor:
        if condition.shape != pitch_emb.shape:
            raise ShapeError(f"mel decoder: condition {condition.shape} vs "
                             f"pitch embedding {pitch_emb.shape}")
        frames = condition.shape[0]
        x = condition + pitch_emb
        x = x + tt.const(sinusoidal_codes(np.arange(frames),
                                          self.config.hidden, self.dtype), dtype=None)
        for block in self.blocks:
            x = block(x)
        return x @ self.out_w + self.out_b


def mel_loss(target: np.ndarray, predicted: Tensor) -> Tensor:
    """Mean absolute error over all frames and channels."""
    target = np.asarray(target)
    if target.shape != predicted.shape:
        raise ShapeError(f"mel_loss: shape mismatch {target.shape} vs {predicted.shape}")
    diff = predicted - tt.const(target.astype(predicted.data.dtype), dtype=None)
    return tt.absolute(diff).mean()


class PostNet:
    """Gaussian diffusion over spectral frames conditioned on a coarse estimate."""

    def __init__(self, params: Parameters, prefix: str, config: MelStackConfig,
                 rng: RngState, dtype=DTYPE):
        config.validate()
        self.dtype = dtype
        self.dim = config.spectral_dim
        self.denoiser = Denoiser(
            params, prefix,
            DenoiserConfig(in_dim=config.spectral_dim, cond_dim=config.spectral_dim,
                           residual_channels=config.postnet_channels,
                           conv_layers=config.postnet_layers,
                           kernel=config.postnet_kernel,
                           dilation_cycle=config.postnet_dilation_cycle,
                           uv_categories=0),
            rng, dtype)

    def _cond(self, coarse) -> Tensor:
        if isinstance(coarse, Tensor):
            return coarse
        return tt.const(np.asarray(coarse, dtype=self.dtype), dtype=None)

    def loss(self, fine: np.ndarray, coarse, t: int, schedule: DiffusionSchedule,
             rng: RngState) -> Tensor:
        """Noise the clean frames to step t and score the noise estimate."""
        fine = np.asarray(fine)
        cond = self._cond(coarse)
        if fine.shape != cond.shape or fine.shape[1] != self.dim:
            raise ShapeError(f"refiner: fine {fine.shape} vs coarse {cond.shape}, "
                             f"spectral dim {self.dim}")
        x_t, eps = gaussian_forward(fine, t, schedule, rng)
        eps_hat, _ = self.denoiser(x_t, None, t, cond)
        return gdiff_loss(eps.astype(eps_hat.data.dtype), eps_hat)

    def sample(self, coarse, schedule: DiffusionSchedule, rng: RngState) -> np.ndarray:
        cond = self._cond(coarse)

        def denoise_fn(x_t, t):
            eps_hat, _ = self.denoiser(x_t, None, t, cond)
            return eps_hat.data.astype(np.float64)

        return sample_gaussian(denoise_fn, cond.shape, schedule, rng)
