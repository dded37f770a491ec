"""Word-level learned Gaussian upsampler.

A small convolutional predictor maps augmented note features to nonnegative
per-note frame lengths l. Cumulative sums inside each word give note end
positions e_n and centers c_n = e_n - l_n/2. Each output frame t (indexed
locally from the start of its word's span) then attends over its own word's
notes with softmax-normalized Gaussian kernels centered at the c_n, and the
expanded feature is the weighted sum of note features. The word duration
loss pulls each word's total predicted length toward the ground-truth
duration; during training the frame spans themselves come from ground truth,
at inference from the rounded predicted sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import DTYPE, Parameters, RngState, ShapeError, Tensor

MASK_BIAS = -1e9


@dataclass
class AlignmentPlan:
    l: Tensor        # [N, 1] predicted note lengths, frames
    e: Tensor        # [N, 1] per-word cumulative ends
    c: Tensor        # [N, 1] note centers in word-local frame coordinates
    weights: Tensor  # [T, N] row-stochastic, zero across words
    sigma: float


def _check_groups(group_of: np.ndarray, n_groups: int, what: str) -> None:
    if n_groups < 1 or not np.array_equal(np.unique(group_of), np.arange(n_groups)):
        raise ShapeError(f"{what}: every word needs at least one entry "
                         f"(got ids {np.unique(np.asarray(group_of))} for {n_groups} words)")


def word_sum_matrix(note_word: np.ndarray, n_words: int, dtype=DTYPE) -> np.ndarray:
    """[W, N] matrix summing note values within each word."""
    note_word = np.asarray(note_word)
    _check_groups(note_word, n_words, "word groups")
    m = np.zeros((n_words, len(note_word)), dtype=dtype)
    m[note_word, np.arange(len(note_word))] = 1.0
    return m


def word_cumsum_matrix(note_word: np.ndarray, dtype=DTYPE) -> np.ndarray:
    """[N, N] lower-triangular prefix-sum matrix restricted to each word."""
    note_word = np.asarray(note_word)
    n = len(note_word)
    same = note_word[:, None] == note_word[None, :]
    lower = np.tril(np.ones((n, n), dtype=bool))
    return (same & lower).astype(dtype)


def local_frame_positions(word_frame_spans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(word index per frame, frame position relative to its word's start)."""
    spans = np.asarray(word_frame_spans)
    if len(spans) == 0 or (spans < 1).any():
        raise ShapeError(f"word frame spans must all be >= 1, got {spans}")
    frame_word = np.repeat(np.arange(len(spans)), spans)
    t_local = np.concatenate([np.arange(s) for s in spans])
    return frame_word, t_local


class GaussianUpsampler:
    """Length predictor plus kernel-weight construction and expansion."""

    def __init__(self, params: Parameters, prefix: str, hidden: int,
                 rng: RngState, conv_layers: int = 3, kernel: int = 5,
                 sigma: float = 10.0, init_length: float = 20.0, dtype=DTYPE):
        if conv_layers < 1:
            raise ShapeError(f"conv_layers must be >= 1, got {conv_layers}")
        if sigma <= 0:
            raise ShapeError(f"sigma must be positive, got {sigma}")
        self.sigma = sigma
        self.convs = []
        for i in range(conv_layers):
            r = rng.child(i)
            self.convs.append((
                params.add(f"{prefix}.conv{i}.w",
                           tt.glorot(r.child(0), (kernel, hidden, hidden),
                                     kernel * hidden, hidden, dtype)),
                params.add(f"{prefix}.conv{i}.b", np.zeros(hidden, dtype=dtype)),
                params.add(f"{prefix}.ln{i}.g", np.ones(hidden, dtype=dtype)),
                params.add(f"{prefix}.ln{i}.b", np.zeros(hidden, dtype=dtype)),
            ))
        self.out_w = params.add(f"{prefix}.out.w",
                                tt.glorot(rng.child(conv_layers), (hidden, 1), hidden, 1, dtype))
        # positive bias so initial lengths start at a plausible frame count
        # instead of relu-clipping to zero
        self.out_b = params.add(f"{prefix}.out.b",
                                np.full(1, init_length, dtype=dtype))

    def predict_lengths(self, h_a: Tensor) -> Tensor:
        """Nonnegative per-note frame lengths, [N, 1]."""
        x = h_a
        for w, b, g, gb in self.convs:
            x = tt.layer_norm(tt.relu(tt.conv1d(x, w, b)), g, gb)
        return tt.relu(x @ self.out_w + self.out_b)

    def build_plan(self, l: Tensor, note_word, word_frame_spans) -> AlignmentPlan:
        note_word = np.asarray(note_word)
        spans = np.asarray(word_frame_spans)
        if l.shape != (len(note_word), 1):
            raise ShapeError(f"lengths must be [N, 1] matching note groups, "
                             f"got {l.shape} for N={len(note_word)}")
        _check_groups(note_word, len(spans), "alignment note groups")
        dtype = l.data.dtype
        e = tt.const(word_cumsum_matrix(note_word, dtype), dtype=None) @ l
        c = e - l * 0.5
        frame_word, t_local = local_frame_positions(spans)
        d = tt.const(t_local.reshape(-1, 1).astype(dtype), dtype=None) - c.T
        logits = d * d * (-1.0 / (2.0 * self.sigma ** 2))
        mask = np.where(frame_word[:, None] == note_word[None, :], 0.0, MASK_BIAS)
        weights = tt.softmax(logits + tt.const(mask.astype(dtype), dtype=None), axis=-1)
        return AlignmentPlan(l=l, e=e, c=c, weights=weights, sigma=self.sigma)

    @staticmethod
    def expand(h_n: Tensor, plan: AlignmentPlan) -> Tensor:
        """a_t = sum_n w_t^n H_n; [T, hidden]."""
        if h_n.shape[0] != plan.weights.shape[1]:
            raise ShapeError(f"expand: {plan.weights.shape[1]} weight columns for "
                             f"{h_n.shape[0]} note rows")
        return plan.weights @ h_n


def word_duration_loss(l: Tensor, note_word, gt_durations) -> Tensor:
    """Mean over words of |sum of note lengths - ground-truth duration|."""
    if gt_durations is None:
        raise ShapeError("word_duration_loss: ground-truth durations missing")
    note_word = np.asarray(note_word)
    dur = np.asarray(gt_durations, dtype=np.float64)
    n_words = len(dur)
    msum = word_sum_matrix(note_word, n_words, dtype=l.data.dtype)
    word_sums = tt.const(msum, dtype=None) @ l
    target = tt.const(dur.reshape(-1, 1).astype(l.data.dtype), dtype=None)
    return tt.absolute(word_sums - target).mean()


def predicted_word_durations(l: Tensor, note_word, n_words: int) -> np.ndarray:
    """Integer frames per word: round(sum of lengths), at least 1."""
    msum = word_sum_matrix(note_word, n_words, dtype=l.data.dtype)
    sums = msum @ l.data.reshape(-1)
    return np.maximum(1, np.floor(sums + 0.5).astype(np.int64))
