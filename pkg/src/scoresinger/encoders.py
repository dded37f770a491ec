"""Score-side encoders: phoneme sequence, per-word pooling, notes, singer.

The phoneme encoder is a stack of feed-forward transformer blocks
(self-attention followed by a two-layer convolutional feed-forward, both
with residual connections and layer norm). Word pooling averages phoneme
features within each word. The note encoder sums a pitch embedding, a
note-type embedding, and a linear projection of the note duration in
seconds. The singer embedding is a plain row lookup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import DTYPE, Parameters, RngState, ShapeError, Tensor


@dataclass
class EncoderConfig:
    hidden: int = 64
    fft_blocks: int = 2
    attn_heads: int = 2
    conv_kernel: int = 5
    phoneme_vocab: int = 32
    note_type_vocab: int = 4
    singer_count: int = 4

    def validate(self) -> "EncoderConfig":
        if self.hidden % self.attn_heads != 0:
            raise ShapeError(f"hidden ({self.hidden}) must be divisible by "
                             f"attn_heads ({self.attn_heads})")
        for name in ("hidden", "fft_blocks", "attn_heads", "conv_kernel",
                     "phoneme_vocab", "note_type_vocab", "singer_count"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")
        return self


def sinusoidal_codes(positions, dim: int, dtype=DTYPE) -> np.ndarray:
    """Classic transformer sin/cos codes for arbitrary integer positions."""
    if dim % 2 != 0:
        raise ShapeError(f"sinusoidal_codes: dim must be even, got {dim}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    ang = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.empty((pos.shape[0], dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out.astype(dtype)


def pooling_matrix(group_of: np.ndarray, n_groups: int, dtype=DTYPE) -> np.ndarray:
    """[n_groups, n_items] matrix averaging items within each group.

    `group_of` must be sorted and cover 0..n_groups-1 (a partition in order).
    """
    group_of = np.asarray(group_of)
    if len(group_of) == 0 or not np.array_equal(np.unique(group_of), np.arange(n_groups)):
        raise ShapeError(f"pooling groups must partition 0..{n_groups - 1}, "
                         f"got ids {np.unique(group_of)}")
    m = np.zeros((n_groups, len(group_of)), dtype=dtype)
    m[group_of, np.arange(len(group_of))] = 1.0
    return m / m.sum(axis=1, keepdims=True)


def gather_matrix(group_of: np.ndarray, n_groups: int, dtype=DTYPE) -> np.ndarray:
    """[n_items, n_groups] one-hot matrix repeating group rows per item."""
    group_of = np.asarray(group_of)
    m = np.zeros((len(group_of), n_groups), dtype=dtype)
    m[np.arange(len(group_of)), group_of] = 1.0
    return m


class SelfAttention:
    """Multi-head scaled dot-product self-attention over a [n, hidden] sequence."""

    def __init__(self, params: Parameters, prefix: str, hidden: int, heads: int,
                 rng: RngState, dtype=DTYPE):
        self.heads = heads
        self.head_dim = hidden // heads
        shape = (hidden, hidden)
        self.wq = params.add(f"{prefix}.wq", tt.glorot(rng.child(0), shape, hidden, hidden, dtype))
        self.wk = params.add(f"{prefix}.wk", tt.glorot(rng.child(1), shape, hidden, hidden, dtype))
        self.wv = params.add(f"{prefix}.wv", tt.glorot(rng.child(2), shape, hidden, hidden, dtype))
        self.wo = params.add(f"{prefix}.wo", tt.glorot(rng.child(3), shape, hidden, hidden, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = x @ self.wq, x @ self.wk, x @ self.wv
        scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for h in range(self.heads):
            lo = h * self.head_dim
            qh = tt.narrow(q, 1, lo, self.head_dim)
            kh = tt.narrow(k, 1, lo, self.head_dim)
            vh = tt.narrow(v, 1, lo, self.head_dim)
            att = tt.softmax((qh @ kh.T) * scale, axis=-1)
            outs.append(att @ vh)
        merged = outs[0] if len(outs) == 1 else tt.concat(outs, axis=1)
        return merged @ self.wo


class FFTBlock:
    """Self-attention and a conv feed-forward, each with residual + layer norm."""

    def __init__(self, params: Parameters, prefix: str, hidden: int, heads: int,
                 kernel: int, rng: RngState, dtype=DTYPE):
        self.attn = SelfAttention(params, f"{prefix}.attn", hidden, heads,
                                  rng.child(0), dtype)
        fan = kernel * hidden
        self.conv1_w = params.add(f"{prefix}.conv1.w",
                                  tt.glorot(rng.child(1), (kernel, hidden, hidden), fan, hidden, dtype))
        self.conv1_b = params.add(f"{prefix}.conv1.b", np.zeros(hidden, dtype=dtype))
        self.conv2_w = params.add(f"{prefix}.conv2.w",
                                  tt.glorot(rng.child(2), (kernel, hidden, hidden), fan, hidden, dtype))
        self.conv2_b = params.add(f"{prefix}.conv2.b", np.zeros(hidden, dtype=dtype))
        self.ln1_g = params.add(f"{prefix}.ln1.g", np.ones(hidden, dtype=dtype))
        self.ln1_b = params.add(f"{prefix}.ln1.b", np.zeros(hidden, dtype=dtype))
        self.ln2_g = params.add(f"{prefix}.ln2.g", np.ones(hidden, dtype=dtype))
        self.ln2_b = params.add(f"{prefix}.ln2.b", np.zeros(hidden, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        x = tt.layer_norm(x + self.attn(x), self.ln1_g, self.ln1_b)
        y = tt.conv1d(tt.relu(tt.conv1d(x, self.conv1_w, self.conv1_b)),
                      self.conv2_w, self.conv2_b)
        return tt.layer_norm(x + y, self.ln2_g, self.ln2_b)


class PhonemeEncoder:
    """Embedding + sinusoidal positions + FFT blocks; outputs H: [P, hidden]."""

    def __init__(self, params: Parameters, prefix: str, config: EncoderConfig,
                 rng: RngState, dtype=DTYPE):
        self.config = config
        self.dtype = dtype
        self.emb = params.add(f"{prefix}.emb",
                              tt.normal_init(rng.child(0), (config.phoneme_vocab, config.hidden),
                                             std=0.3, dtype=dtype))
        self.blocks = [FFTBlock(params, f"{prefix}.block{i}", config.hidden,
                                config.attn_heads, config.conv_kernel,
                                rng.child(1 + i), dtype)
                       for i in range(config.fft_blocks)]

    def __call__(self, phoneme_ids) -> Tensor:
        ids = np.asarray(phoneme_ids)
        if ids.size == 0:
            raise ShapeError("phoneme encoder: empty sequence")
        x = tt.embedding(self.emb, ids)
        x = x + tt.const(sinusoidal_codes(np.arange(len(ids)), self.config.hidden, self.dtype))
        for block in self.blocks:
            x = block(x)
        return x


def word_pool(h: Tensor, phoneme_word: np.ndarray, n_words: int) -> Tensor:
    """Mean of each word's phoneme feature rows: [P, hidden] -> [W, hidden]."""
    if len(phoneme_word) != h.shape[0]:
        raise ShapeError(f"word_pool: {len(phoneme_word)} span entries for "
                         f"{h.shape[0]} feature rows")
    m = pooling_matrix(phoneme_word, n_words, dtype=h.data.dtype)
    return tt.const(m, dtype=None) @ h


class NoteEncoder:
    """Pitch embedding + type embedding + projected duration; [N, hidden]."""

    def __init__(self, params: Parameters, prefix: str, config: EncoderConfig,
                 rng: RngState, dtype=DTYPE):
        self.dtype = dtype
        self.pitch_emb = params.add(f"{prefix}.pitch_emb",
                                    tt.normal_init(rng.child(0), (128, config.hidden),
                                                   std=0.3, dtype=dtype))
        self.type_emb = params.add(f"{prefix}.type_emb",
                                   tt.normal_init(rng.child(1), (config.note_type_vocab, config.hidden),
                                                  std=0.3, dtype=dtype))
        self.dur_w = params.add(f"{prefix}.dur.w",
                                tt.glorot(rng.child(2), (1, config.hidden), 1, config.hidden, dtype))
        self.dur_b = params.add(f"{prefix}.dur.b", np.zeros(config.hidden, dtype=dtype))

    def __call__(self, pitch_ids, type_ids, dur_seconds) -> Tensor:
        dur = np.asarray(dur_seconds, dtype=self.dtype).reshape(-1, 1)
        if not (len(pitch_ids) == len(type_ids) == len(dur)):
            raise ShapeError(f"note encoder: mismatched lengths "
                             f"{len(pitch_ids)}/{len(type_ids)}/{len(dur)}")
        if (dur <= 0).any():
            raise ShapeError("note encoder: durations must be positive")
        return (tt.embedding(self.pitch_emb, np.asarray(pitch_ids))
                + tt.embedding(self.type_emb, np.asarray(type_ids))
                + tt.const(dur, dtype=None) @ self.dur_w + self.dur_b)


class SingerEmbedding:
    def __init__(self, params: Parameters, prefix: str, config: EncoderConfig,
                 rng: RngState, dtype=DTYPE):
        self.table = params.add(f"{prefix}.table",
                                tt.normal_init(rng.child(0), (config.singer_count, config.hidden),
                                               std=0.3, dtype=dtype))

    def __call__(self, singer_id: int) -> Tensor:
        return tt.embedding(self.table, np.array([singer_id]))
