"""Word-level positional attention from phoneme features to frames.

Each frame queries the phonemes of its own word: queries are word-relative
sinusoidal frame position codes, keys are a linear projection of each
phoneme's feature concatenated with its word-relative position code, and
values are the raw phoneme features. Attention is masked across word
boundaries, so any frame's output is a convex combination of its own word's
phoneme rows. Because the expansion is driven purely by spans, predicted
durations at inference can never produce an alignment failure, only
different span lengths.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .align import MASK_BIAS, local_frame_positions
from .encoders import sinusoidal_codes
from .tensor import DTYPE, Parameters, RngState, ShapeError, Tensor


def word_relative_positions(group_of: np.ndarray) -> np.ndarray:
    """Position of each item within its group, resetting to 0 at boundaries.

    Groups must be contiguous and sorted (0,0,1,1,1,2,...).
    """
    group_of = np.asarray(group_of)
    if len(group_of) == 0:
        raise ShapeError("word_relative_positions: empty sequence")
    if (np.diff(group_of) < 0).any():
        raise ShapeError("word groups must be contiguous and in order")
    idx = np.arange(len(group_of))
    starts = np.zeros(len(group_of), dtype=np.int64)
    boundary = np.flatnonzero(np.diff(group_of)) + 1
    starts[boundary] = boundary
    return idx - np.maximum.accumulate(starts)


class WordAttention:
    def __init__(self, params: Parameters, prefix: str, hidden: int,
                 rng: RngState, dtype=DTYPE):
        self.hidden = hidden
        self.dtype = dtype
        self.w = params.add(f"{prefix}.w",
                            tt.glorot(rng.child(0), (2 * hidden, hidden),
                                      2 * hidden, hidden, dtype))

    def __call__(self, h: Tensor, phoneme_word, word_frame_spans) -> Tensor:
        """Expand phoneme features [P, hidden] to frame features [T, hidden]."""
        phoneme_word = np.asarray(phoneme_word)
        spans = np.asarray(word_frame_spans)
        if len(phoneme_word) != h.shape[0]:
            raise ShapeError(f"word attention: {len(phoneme_word)} phoneme spans for "
                             f"{h.shape[0]} feature rows")
        if not np.array_equal(np.unique(phoneme_word), np.arange(len(spans))):
            raise ShapeError(f"word attention: phoneme words {np.unique(phoneme_word)} "
                             f"do not match {len(spans)} frame spans")
        frame_word, _ = local_frame_positions(spans)

        p_ph = sinusoidal_codes(word_relative_positions(phoneme_word), self.hidden, self.dtype)
        p_m = sinusoidal_codes(word_relative_positions(frame_word), self.hidden, self.dtype)

        keys = tt.concat([h, tt.const(p_ph, dtype=None)], axis=1) @ self.w
        logits = (tt.const(p_m, dtype=None) @ keys.T) * (1.0 / np.sqrt(self.hidden))
        mask = np.where(frame_word[:, None] == phoneme_word[None, :], 0.0, MASK_BIAS)
        attn = tt.softmax(logits + tt.const(mask.astype(h.data.dtype), dtype=None), axis=-1)
        return attn @ h
