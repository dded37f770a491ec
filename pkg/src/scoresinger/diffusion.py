"""Denoising diffusion machinery for pitch and spectra.

One schedule type serves both generative stacks. The pitch model diffuses a
continuous F0 track (Gaussian noise) and a per-frame voicing category
(uniform-resampling multinomial noise) jointly: a single dilated-convolution
denoiser reads the noisy pair plus a conditioning sequence and emits both a
noise estimate for F0 and logits over the clean voicing categories. The
spectral refiner reuses the Gaussian half with multichannel frames.

Losses: unweighted epsilon-MSE for the Gaussian branch; for the categorical
branch the KL between the true and predicted one-step posteriors for t > 1
and the categorical log-likelihood at t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as tt
from .encoders import sinusoidal_codes
from .tensor import (DTYPE, NonFiniteError, Parameters, RngState, ShapeError,
                     Tensor)


@dataclass
class DiffusionSchedule:
    """Linear beta schedule with cached alpha products (1-based steps)."""

    betas: np.ndarray       # [T_steps] float64
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def t_steps(self) -> int:
        return len(self.betas)

    def check_t(self, t: int) -> int:
        if not 1 <= t <= self.t_steps:
            raise ShapeError(f"diffusion step t={t} outside [1, {self.t_steps}]")
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_t(t) - 1])

    def alpha_bar_prev(self, t: int) -> float:
        self.check_t(t)
        return float(self.alpha_bars[t - 2]) if t > 1 else 1.0

    def posterior_variance(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0)."""
        return (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar(t)) * self.beta(t)


def make_schedule(t_steps: int = 100, beta_start: float = 1e-4,
                  beta_end: float = 0.06) -> DiffusionSchedule:
    if t_steps < 1:
        raise ShapeError(f"t_steps must be >= 1, got {t_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ShapeError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, t_steps, dtype=np.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas,
                             alpha_bars=np.cumprod(alphas))


# -- forward processes -----------------------------------------------------------


def gaussian_forward(x0: np.ndarray, t: int, schedule: DiffusionSchedule,
                     rng: RngState) -> tuple[np.ndarray, np.ndarray]:
    """Noise x0 to step t in closed form; returns (x_t, the exact eps drawn)."""
    ab = schedule.alpha_bar(t)
    eps = rng.normal(x0.shape)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x_t, eps


def _check_one_hot(y: np.ndarray, what: str) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 2 or not np.isin(y, (0.0, 1.0)).all() or not (y.sum(axis=1) == 1.0).all():
        raise ShapeError(f"{what}: rows must be exactly one-hot")
    return y


def multinomial_marginal(y0: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form q(y_t | y0) row distributions: ab*y0 + (1-ab)/K."""
    y0 = _check_one_hot(y0, "multinomial_marginal")
    ab = schedule.alpha_bar(t)
    k = y0.shape[1]
    return ab * y0 + (1.0 - ab) / k


def multinomial_forward(y0: np.ndarray, t: int, schedule: DiffusionSchedule,
                        rng: RngState) -> np.ndarray:
    """Sample y_t one-hot from the closed-form marginal."""
    probs = multinomial_marginal(y0, t, schedule)
    ids = rng.categorical(probs)
    out = np.zeros_like(probs)
    out[np.arange(len(ids)), ids] = 1.0
    return out


def multinomial_posterior(y_t: np.ndarray, y0_probs: np.ndarray, t: int,
                          schedule: DiffusionSchedule) -> np.ndarray:
    """theta_post rows of q(y_{t-1} | y_t, y0) with y0 given as probabilities."""
    y_t = _check_one_hot(y_t, "multinomial_posterior")
    y0_probs = np.asarray(y0_probs, dtype=np.float64)
    if y0_probs.shape != y_t.shape:
        raise ShapeError(f"multinomial_posterior: shape mismatch "
                         f"{y0_probs.shape} vs {y_t.shape}")
    if np.abs(y0_probs.sum(axis=1) - 1.0).max() > 1e-4:
        raise ShapeError("multinomial_posterior: y0 rows must sum to 1")
    schedule.check_t(t)
    k = y_t.shape[1]
    a = schedule.alpha(t)
    abp = schedule.alpha_bar_prev(t)
    theta = (a * y_t + (1.0 - a) / k) * (abp * y0_probs + (1.0 - abp) / k)
    return theta / theta.sum(axis=1, keepdims=True)


def multinomial_posterior_tensor(y_t: np.ndarray, y0_probs: Tensor, t: int,
                                 schedule: DiffusionSchedule) -> Tensor:
    """Differentiable posterior for the loss path (y0_probs carries gradients)."""
    y_t = _check_one_hot(y_t, "multinomial_posterior")
    schedule.check_t(t)
    k = y_t.shape[1]
    a = schedule.alpha(t)
    abp = schedule.alpha_bar_prev(t)
    left = tt.const((a * y_t + (1.0 - a) / k).astype(y0_probs.data.dtype), dtype=None)
    theta = left * (y0_probs * abp + (1.0 - abp) / k)
    return theta / theta.sum(axis=-1, keepdims=True)


# -- denoiser ----------------------------------------------------------------------


@dataclass
class DenoiserConfig:
    in_dim: int = 1                 # channels of the continuous track; 0 disables it
    cond_dim: int = 64              # conditioning feature width
    residual_channels: int = 64
    conv_layers: int = 6
    kernel: int = 3
    dilation_cycle: int = 4
    uv_categories: int = 2          # 0 disables the categorical channel/head

    def validate(self) -> "DenoiserConfig":
        if self.conv_layers < 1:
            raise ShapeError(f"conv_layers must be >= 1, got {self.conv_layers}")
        if self.uv_categories == 1 or self.uv_categories < 0:
            raise ShapeError(f"uv_categories must be 0 or >= 2, got {self.uv_categories}")
        if self.in_dim < 0:
            raise ShapeError(f"in_dim must be >= 0, got {self.in_dim}")
        if self.in_dim == 0 and self.uv_categories == 0:
            raise ShapeError("denoiser needs a continuous channel, a categorical "
                             "channel, or both")
        if min(self.cond_dim, self.residual_channels,
               self.kernel, self.dilation_cycle) < 1:
            raise ShapeError("denoiser dimensions must be positive")
        return self


class Denoiser:
    """Non-causal gated dilated-convolution denoiser with two output heads."""

    def __init__(self, params: Parameters, prefix: str, config: DenoiserConfig,
                 rng: RngState, dtype=DTYPE):
        self.config = config.validate()
        self.dtype = dtype
        c = config
        r = c.residual_channels
        if c.in_dim:
            self.wx = params.add(f"{prefix}.in.w", tt.glorot(rng.child(0), (c.in_dim, r), c.in_dim, r, dtype))
            self.bx = params.add(f"{prefix}.in.b", np.zeros(r, dtype=dtype))
        if c.uv_categories:
            self.uv_emb = params.add(f"{prefix}.uv_emb",
                                     tt.normal_init(rng.child(1), (c.uv_categories, r), 0.3, dtype))
        self.wt = params.add(f"{prefix}.time.w", tt.glorot(rng.child(2), (r, r), r, r, dtype))
        self.bt = params.add(f"{prefix}.time.b", np.zeros(r, dtype=dtype))
        self.wc = params.add(f"{prefix}.cond.w", tt.glorot(rng.child(3), (c.cond_dim, r), c.cond_dim, r, dtype))
        self.bc = params.add(f"{prefix}.cond.b", np.zeros(r, dtype=dtype))
        self.layers = []
        for i in range(c.conv_layers):
            lr = rng.child(10 + i)
            last = i == c.conv_layers - 1
            self.layers.append((
                params.add(f"{prefix}.layer{i}.conv.w",
                           tt.glorot(lr.child(0), (c.kernel, r, 2 * r), c.kernel * r, 2 * r, dtype)),
                params.add(f"{prefix}.layer{i}.conv.b", np.zeros(2 * r, dtype=dtype)),
                # the last residual branch would feed nothing: only skips
                # reach the heads
                None if last else params.add(f"{prefix}.layer{i}.res.w",
                                             tt.glorot(lr.child(1), (r, r), r, r, dtype)),
                None if last else params.add(f"{prefix}.layer{i}.res.b",
                                             np.zeros(r, dtype=dtype)),
                params.add(f"{prefix}.layer{i}.skip.w", tt.glorot(lr.child(2), (r, r), r, r, dtype)),
                params.add(f"{prefix}.layer{i}.skip.b", np.zeros(r, dtype=dtype)),
            ))
        self.wo = params.add(f"{prefix}.out.w", tt.glorot(rng.child(4), (r, r), r, r, dtype))
        self.bo = params.add(f"{prefix}.out.b", np.zeros(r, dtype=dtype))
        if c.in_dim:
            self.we = params.add(f"{prefix}.eps.w", tt.glorot(rng.child(5), (r, c.in_dim), r, c.in_dim, dtype))
            self.be = params.add(f"{prefix}.eps.b", np.zeros(c.in_dim, dtype=dtype))
        if c.uv_categories:
            self.wl = params.add(f"{prefix}.logits.w",
                                 tt.glorot(rng.child(6), (r, c.uv_categories), r, c.uv_categories, dtype))
            self.bl = params.add(f"{prefix}.logits.b", np.zeros(c.uv_categories, dtype=dtype))

    def __call__(self, x_t, y_t, t: int, condition: Tensor):
        """Returns (eps_hat [T, in_dim] or None, y0 logits [T, K] or None)."""
        c = self.config
        if t < 1:
            raise ShapeError(f"timestep must be >= 1, got {t}")
        h = None
        frames = None
        if c.in_dim:
            x = x_t if isinstance(x_t, Tensor) else tt.const(np.asarray(x_t, dtype=self.dtype), dtype=None)
            if x.ndim != 2 or x.shape[1] != c.in_dim:
                raise ShapeError(f"denoiser: x_t must be [T, {c.in_dim}], got {x.shape}")
            frames = x.shape[0]
            h = x @ self.wx + self.bx
        elif x_t is not None:
            raise ShapeError("denoiser has no continuous channel; pass x_t=None")
        if c.uv_categories:
            y = _check_one_hot(np.asarray(y_t, dtype=self.dtype), "denoiser y_t")
            if frames is None:
                frames = y.shape[0]
            if y.shape != (frames, c.uv_categories):
                raise ShapeError(f"denoiser: y_t must be [{frames}, {c.uv_categories}], "
                                 f"got {y.shape}")
            emb = tt.const(y, dtype=None) @ self.uv_emb
            h = emb if h is None else h + emb
        if condition.shape != (frames, c.cond_dim):
            raise ShapeError(f"denoiser: condition must be [{frames}, {c.cond_dim}], "
                             f"got {condition.shape}")
        temb = tt.const(sinusoidal_codes([t], self.wt.shape[0], self.dtype), dtype=None)
        h = h + (temb @ self.wt + self.bt)
        h = h + (condition @ self.wc + self.bc)

        r = c.residual_channels
        skips = None
        for i, (cw, cb, rw, rb, sw, sb) in enumerate(self.layers):
            z = tt.conv1d(h, cw, cb, dilation=2 ** (i % c.dilation_cycle))
            gate = tt.tanh(tt.narrow(z, 1, 0, r)) * tt.sigmoid(tt.narrow(z, 1, r, r))
            if rw is not None:
                h = h + (gate @ rw + rb)
            s = gate @ sw + sb
            skips = s if skips is None else skips + s
        o = tt.relu(skips @ self.wo + self.bo)
        eps_hat = (o @ self.we + self.be) if c.in_dim else None
        logits = (o @ self.wl + self.bl) if c.uv_categories else None
        return eps_hat, logits


# -- losses -------------------------------------------------------------------------


def gdiff_loss(eps: np.ndarray, eps_hat: Tensor) -> Tensor:
    """Unweighted mean squared error between drawn and predicted noise."""
    eps = np.asarray(eps)
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"gdiff_loss: shape mismatch {eps.shape} vs {eps_hat.shape}")
    d = eps_hat - tt.const(eps.astype(eps_hat.data.dtype), dtype=None)
    return (d * d).mean()


def mdiff_loss(y0: np.ndarray, y_t: np.ndarray, y0_logits: Tensor, t: int,
               schedule: DiffusionSchedule) -> Tensor:
    """KL(q(y_{t-1}|y_t,y0) || p(y_{t-1}|y_t)) for t > 1, NLL of y0 at t = 1."""
    schedule.check_t(t)
    y0 = _check_one_hot(y0, "mdiff_loss y0")
    if t == 1:
        logp = tt.log_softmax(y0_logits, axis=-1)
        picked = (logp * tt.const(y0.astype(logp.data.dtype), dtype=None)).sum(axis=-1)
        return -picked.mean()
    y0_hat = tt.softmax(y0_logits, axis=-1)
    q = multinomial_posterior(y_t, y0, t, schedule)
    p = multinomial_posterior_tensor(y_t, y0_hat, t, schedule)
    qc = tt.const(q.astype(p.data.dtype), dtype=None)
    kl = (qc * (tt.const(np.log(q).astype(p.data.dtype), dtype=None) - tt.log(p))).sum(axis=-1)
    return kl.mean()


# -- sampling ------------------------------------------------------------------------


def np_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _gaussian_reverse_step(x: np.ndarray, eps_hat: np.ndarray, t: int,
                           schedule: DiffusionSchedule,
                           rng: Optional[RngState]) -> np.ndarray:
    b = schedule.beta(t)
    mu = (x - b / np.sqrt(1.0 - schedule.alpha_bar(t)) * eps_hat) / np.sqrt(schedule.alpha(t))
    if t > 1:
        return mu + np.sqrt(schedule.posterior_variance(t)) * rng.normal(x.shape)
    return mu


def sample_joint(denoise_fn: Callable, n_frames: int, schedule: DiffusionSchedule,
                 rng: RngState, k: int = 2, sample_final_uv: bool = False):
    """Ancestral reverse loop over the (continuous, categorical) pair.

    `denoise_fn(x_t [T,1], y_t one-hot [T,k], t) -> (eps_hat, y0_logits)` as
    numpy arrays. Returns (x0 [T,1], uv ids [T], final y0 probabilities).
    """
    x = rng.normal((n_frames, 1))
    ids = rng.integers(0, k, n_frames)
    y = np.zeros((n_frames, k))
    y[np.arange(n_frames), ids] = 1.0
    y0_hat = None
    for t in range(schedule.t_steps, 0, -1):
        eps_hat, logits = denoise_fn(x, y, t)
        if not (np.isfinite(eps_hat).all() and np.isfinite(logits).all()):
            raise NonFiniteError(f"denoiser produced non-finite output at step {t} "
                                 f"(untrained or diverged parameters)")
        x = _gaussian_reverse_step(x, eps_hat, t, schedule, rng)
        y0_hat = np_softmax(logits)
        if t > 1:
            theta = multinomial_posterior(y, y0_hat, t, schedule)
            ids = rng.categorical(theta)
        elif sample_final_uv:
            ids = rng.categorical(y0_hat)
        else:
            ids = y0_hat.argmax(axis=1)
        y = np.zeros((n_frames, k))
        y[np.arange(n_frames), ids] = 1.0
    return x, ids, y0_hat


def sample_multinomial(denoise_fn: Callable, n_frames: int, schedule: DiffusionSchedule,
                       rng: RngState, k: int = 2, sample_final_uv: bool = False):
    """Reverse loop for a purely categorical track.

    `denoise_fn(y_t one-hot [T,k], t) -> y0_logits` as numpy arrays.
    Returns (category ids [T], final y0 probabilities).
    """
    ids = rng.integers(0, k, n_frames)
    y = np.zeros((n_frames, k))
    y[np.arange(n_frames), ids] = 1.0
    y0_hat = None
    for t in range(schedule.t_steps, 0, -1):
        logits = denoise_fn(y, t)
        if not np.isfinite(logits).all():
            raise NonFiniteError(f"denoiser produced non-finite output at step {t} "
                                 f"(untrained or diverged parameters)")
        y0_hat = np_softmax(logits)
        if t > 1:
            ids = rng.categorical(multinomial_posterior(y, y0_hat, t, schedule))
        elif sample_final_uv:
            ids = rng.categorical(y0_hat)
        else:
            ids = y0_hat.argmax(axis=1)
        y = np.zeros((n_frames, k))
        y[np.arange(n_frames), ids] = 1.0
    return ids, y0_hat


def sample_gaussian(denoise_fn: Callable, shape: tuple, schedule: DiffusionSchedule,
                    rng: RngState) -> np.ndarray:
    """Reverse loop for a purely continuous track (e.g. spectral refinement).

    `denoise_fn(x_t, t) -> eps_hat` as numpy arrays.
    """
    x = rng.normal(shape)
    for t in range(schedule.t_steps, 0, -1):
        eps_hat = denoise_fn(x, t)
        if not np.isfinite(eps_hat).all():
            raise NonFiniteError(f"denoiser produced non-finite output at step {t} "
                                 f"(untrained or diverged parameters)")
        x = _gaussian_reverse_step(x, eps_hat, t, schedule, rng)
    return x
