"""Full score-to-spectrogram model assembled over one parameter store.

Data flow (stage 1, teacher forcing):

    phonemes ----> encoder ----> word pool --+--> length predictor -> L_d
    notes -------> encoder ------------------+
    singer ------> embedding ----------------+

    frame conditioning = word-attention(phonemes) + kernel-expanded notes
                         + singer embedding                 [T, hidden]

    pitch: joint diffusion over (standardized F0, voicing)  -> L_gdiff, L_mdiff
    spectra: decoder(conditioning, embedded ground-truth pitch) -> L_mel

Stage 2 trains only the diffusion post-net on (ground truth, coarse decode)
pairs. Inference swaps ground-truth word durations and pitch for predicted
ones and runs the reverse diffusion loops.

Ablation toggles swap a diffusion branch for a deterministic head: voicing
falls back to a cross-entropy classifier, F0 to an L1 regressor, and the
post-net can be dropped entirely so the coarse decode is the final output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint as ckpt
from . import tensor as tt
from .align import GaussianUpsampler, predicted_word_durations, word_duration_loss
from .diffusion import (Denoiser, DenoiserConfig, gaussian_forward, gdiff_loss,
                        make_schedule, mdiff_loss, multinomial_forward,
                        sample_gaussian, sample_joint, sample_multinomial)
from .encoders import (EncoderConfig, NoteEncoder, PhonemeEncoder,
                       SingerEmbedding, gather_matrix, word_pool)
from .score import Score, flatten_score
from .spectral import MelDecoder, MelStackConfig, PitchEmbedding, PostNet, mel_loss
from .tensor import DTYPE, Parameters, RngState, ShapeError, Tensor
from .wordattn import WordAttention

LOSS_TERMS = ("gdiff", "mdiff", "dur", "mel")


@dataclass
class ModelConfig:
    hidden: int = 64
    fft_blocks: int = 2
    attn_heads: int = 2
    conv_kernel: int = 5
    phoneme_vocab: int = 32
    note_type_vocab: int = 4
    singer_count: int = 4
    spectral_dim: int = 16
    upsampler_layers: int = 3
    upsampler_kernel: int = 5
    upsampler_sigma: float = 10.0
    upsampler_init_length: float = 20.0
    pitch_channels: int = 64
    pitch_layers: int = 6
    pitch_kernel: int = 3
    pitch_dilation_cycle: int = 4
    decoder_fft_blocks: int = 2
    postnet_channels: int = 64
    postnet_layers: int = 8
    postnet_kernel: int = 3
    postnet_dilation_cycle: int = 4
    t_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.06
    # ablation toggles: a disabled diffusion branch is replaced by a
    # deterministic head; disabling the post-net skips stage 2
    f0_diffusion: bool = True
    uv_diffusion: bool = True
    postnet: bool = True
    # corpus F0 standardization, filled in before training
    f0_mean: float = 0.0
    f0_std: float = 1.0

    def validate(self) -> "ModelConfig":
        if self.hidden < 2 or self.hidden % 2:
            raise ShapeError(f"hidden must be even and >= 2, got {self.hidden}")
        if self.hidden % self.attn_heads:
            raise ShapeError(f"hidden {self.hidden} not divisible by "
                             f"{self.attn_heads} heads")
        if not (self.f0_diffusion or self.uv_diffusion):
            raise ShapeError("conflicting toggles: f0_diffusion and uv_diffusion "
                             "cannot both be off; the pitch module is built "
                             "around at least one diffusion branch")
        if self.f0_std <= 0:
            raise ShapeError(f"f0_std must be positive, got {self.f0_std}")
        if min(self.spectral_dim, self.singer_count, self.t_steps) < 1:
            raise ShapeError("model dimensions must be positive")
        return self


# the full-scale settings exist for fidelity runs on serious hardware; every
# test and bundled experiment uses the desk scale
PRESETS = {
    "desk": {},
    "paper": dict(hidden=256, fft_blocks=4, spectral_dim=80,
                  pitch_channels=192, pitch_layers=12,
                  decoder_fft_blocks=4, postnet_channels=256, postnet_layers=20),
}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ShapeError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    fields = dict(PRESETS[name])
    fields.update(overrides)
    return ModelConfig(**fields).validate()


class SingingModel:
    """Every module wired over a single named parameter store."""

    def __init__(self, config: ModelConfig, rng: RngState, dtype=DTYPE):
        self.config = config.validate()
        self.dtype = dtype
        self.params = Parameters()
        self.schedule = make_schedule(config.t_steps, config.beta_start,
                                      config.beta_end)
        enc_cfg = EncoderConfig(hidden=config.hidden, fft_blocks=config.fft_blocks,
                                attn_heads=config.attn_heads,
                                conv_kernel=config.conv_kernel,
                                phoneme_vocab=config.phoneme_vocab,
                                note_type_vocab=config.note_type_vocab,
                                singer_count=config.singer_count)
        p = self.params
        self.phoneme_encoder = PhonemeEncoder(p, "phoneme_enc", enc_cfg,
                                              rng.child(0), dtype)
        self.note_encoder = NoteEncoder(p, "note_enc", enc_cfg, rng.child(1), dtype)
        self.singer = SingerEmbedding(p, "singer", enc_cfg, rng.child(2), dtype)
        self.upsampler = GaussianUpsampler(p, "upsampler", config.hidden,
                                           rng.child(3),
                                           conv_layers=config.upsampler_layers,
                                           kernel=config.upsampler_kernel,
                                           sigma=config.upsampler_sigma,
                                           init_length=config.upsampler_init_length,
                                           dtype=dtype)
        self.word_attention = WordAttention(p, "word_attn", config.hidden,
                                            rng.child(4), dtype)
        self.pitch_denoiser = Denoiser(
            p, "pitch_denoiser",
            DenoiserConfig(in_dim=1 if config.f0_diffusion else 0,
                           cond_dim=config.hidden,
                           residual_channels=config.pitch_channels,
                           conv_layers=config.pitch_layers,
                           kernel=config.pitch_kernel,
                           dilation_cycle=config.pitch_dilation_cycle,
                           uv_categories=2 if config.uv_diffusion else 0),
            rng.child(5), dtype)
        mel_cfg = MelStackConfig(hidden=config.hidden,
                                 spectral_dim=config.spectral_dim,
                                 fft_blocks=config.decoder_fft_blocks,
                                 attn_heads=config.attn_heads,
                                 conv_kernel=config.conv_kernel,
                                 postnet_channels=config.postnet_channels,
                                 postnet_layers=config.postnet_layers,
                                 postnet_kernel=config.postnet_kernel,
                                 postnet_dilation_cycle=config.postnet_dilation_cycle)
        self.pitch_embedding = PitchEmbedding(p, "pitch_emb", mel_cfg,
                                              rng.child(6), dtype)
        self.mel_decoder = MelDecoder(p, "decoder", mel_cfg, rng.child(7), dtype)
        self.postnet = (PostNet(p, "postnet", mel_cfg, rng.child(8), dtype)
                        if config.postnet else None)
        h = config.hidden
        if not config.uv_diffusion:
            self.uv_head_w = p.add("uv_head.w", tt.glorot(rng.child(9), (h, 2), h, 2, dtype))
            self.uv_head_b = p.add("uv_head.b", np.zeros(2, dtype=dtype))
        if not config.f0_diffusion:
            self.f0_head_w = p.add("f0_head.w", tt.glorot(rng.child(10), (h, 1), h, 1, dtype))
            self.f0_head_b = p.add("f0_head.b", np.zeros(1, dtype=dtype))

    # -- shared forward pieces ------------------------------------------------

    def encode_score(self, flat: dict) -> dict:
        """Score-side encoders plus note length prediction.

        `flat` is the dict from `flatten_score`. The length predictor reads
        note features augmented with each note's pooled word phonemes and the
        singer embedding.
        """
        h = self.phoneme_encoder(flat["phoneme_ids"])
        h_w = word_pool(h, flat["phoneme_word"], flat["n_words"])
        h_n = self.note_encoder(flat["note_pitch"], flat["note_type"],
                                flat["note_dur_seconds"])
        s = self.singer(int(flat["singer_id"]))
        note_words = tt.const(gather_matrix(flat["note_word"], flat["n_words"],
                                            h_w.data.dtype), dtype=None)
        lengths = self.upsampler.predict_lengths(h_n + note_words @ h_w + s)
        return {"h": h, "h_w": h_w, "h_n": h_n, "s": s, "lengths": lengths}

    def frame_condition(self, enc: dict, flat: dict, word_spans) -> Tensor:
        """[T, hidden] conditioning: expanded lyrics + expanded notes + singer."""
        plan = self.upsampler.build_plan(enc["lengths"], flat["note_word"],
                                         word_spans)
        expanded_notes = self.upsampler.expand(enc["h_n"], plan)
        expanded_lyrics = self.word_attention(enc["h"], flat["phoneme_word"],
                                              word_spans)
        return expanded_lyrics + expanded_notes + enc["s"]

    def standardize_f0(self, f0: np.ndarray) -> np.ndarray:
        out = (np.asarray(f0, dtype=np.float64) - self.config.f0_mean) / self.config.f0_std
        return out.reshape(-1, 1)

    def destandardize_f0(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).reshape(-1) * self.config.f0_std + self.config.f0_mean

    # -- training losses --------------------------------------------------------

    def stage1_losses(self, song, rng: RngState) -> dict[str, Tensor]:
        """The four stage-1 terms for one song, teacher-forced throughout."""
        cfg = self.config
        flat = flatten_score(song.score)
        enc = self.encode_score(flat)
        gt_spans = song.word_durations
        dur = word_duration_loss(enc["lengths"], flat["note_word"], gt_spans)
        cond = self.frame_condition(enc, flat, gt_spans)

        f0n = self.standardize_f0(song.pitch.f0_semitones)
        uv1h = song.pitch.uv_one_hot().astype(np.float64)
        t = int(rng.integers(1, self.schedule.t_steps + 1))
        x_t = eps = y_t = None
        if cfg.f0_diffusion:
            x_t, eps = gaussian_forward(f0n, t, self.schedule, rng.child(1))
        if cfg.uv_diffusion:
            y_t = multinomial_forward(uv1h, t, self.schedule, rng.child(2))
        eps_hat, logits = self.pitch_denoiser(x_t, y_t, t, cond)

        if cfg.f0_diffusion:
            gdiff = gdiff_loss(eps, eps_hat)
        else:
            pred = cond @ self.f0_head_w + self.f0_head_b
            gdiff = tt.absolute(pred - tt.const(f0n.astype(pred.data.dtype), dtype=None)).mean()
        if cfg.uv_diffusion:
            mdiff = mdiff_loss(uv1h, y_t, logits, t, self.schedule)
        else:
            logp = tt.log_softmax(cond @ self.uv_head_w + self.uv_head_b, axis=-1)
            picked = (logp * tt.const(uv1h.astype(logp.data.dtype), dtype=None)).sum(axis=-1)
            mdiff = -picked.mean()

        pitch_emb = self.pitch_embedding(f0n, uv1h)
        mel = mel_loss(song.spectral.frames, self.mel_decoder(cond, pitch_emb))
        return {"gdiff": gdiff, "mdiff": mdiff, "dur": dur, "mel": mel}

    def coarse_spectral(self, song) -> np.ndarray:
        """Teacher-forced coarse decode as plain data (no gradient ties)."""
        flat = flatten_score(song.score)
        enc = self.encode_score(flat)
        cond = self.frame_condition(enc, flat, song.word_durations)
        pitch_emb = self.pitch_embedding(self.standardize_f0(song.pitch.f0_semitones),
                                         song.pitch.uv_one_hot())
        return self.mel_decoder(cond, pitch_emb).data.copy()

    def stage2_loss(self, song, rng: RngState, coarse: np.ndarray = None) -> Tensor:
        """Post-net noise-estimation loss; backward reaches only the post-net.

        Pass a precomputed `coarse` decode to skip the frozen forward pass.
        """
        if self.postnet is None:
            raise ShapeError("post-net disabled in this configuration")
        if coarse is None:
            coarse = self.coarse_spectral(song)
        t = int(rng.integers(1, self.schedule.t_steps + 1))
        return self.postnet.loss(song.spectral.frames, coarse, t, self.schedule,
                                 rng.child(1))

    # -- inference ----------------------------------------------------------------

    def infer(self, score: Score, rng: RngState, word_spans=None) -> dict:
        """Full synthesis path for one score.

        `word_spans` overrides the frame span of every word (used when
        evaluating against ground-truth durations); by default the predicted
        durations drive the expansion. Deterministic per rng state.
        """
        cfg = self.config
        flat = flatten_score(score)
        enc = self.encode_score(flat)
        predicted = predicted_word_durations(enc["lengths"], flat["note_word"],
                                             flat["n_words"])
        if word_spans is None:
            spans = predicted
        else:
            spans = np.asarray(word_spans, dtype=np.int64)
            if len(spans) != flat["n_words"] or (spans < 1).any():
                raise ShapeError(f"word_spans needs {flat['n_words']} positive "
                                 f"entries, got {spans}")
        cond = self.frame_condition(enc, flat, spans)
        frames = int(spans.sum())

        if cfg.f0_diffusion and cfg.uv_diffusion:
            def joint(x_t, y_t, t):
                e, lg = self.pitch_denoiser(x_t, y_t, t, cond)
                return e.data.astype(np.float64), lg.data.astype(np.float64)

            f0n, uv, _ = sample_joint(joint, frames, self.schedule, rng.child(0))
        elif cfg.f0_diffusion:
            def gauss(x_t, t):
                return self.pitch_denoiser(x_t, None, t, cond)[0].data.astype(np.float64)

            f0n = sample_gaussian(gauss, (frames, 1), self.schedule, rng.child(0))
            uv = (cond @ self.uv_head_w + self.uv_head_b).data.argmax(axis=1)
        else:
            def cat(y_t, t):
                return self.pitch_denoiser(None, y_t, t, cond)[1].data.astype(np.float64)

            uv, _ = sample_multinomial(cat, frames, self.schedule, rng.child(0))
            f0n = (cond @ self.f0_head_w + self.f0_head_b).data.astype(np.float64)

        uv = np.asarray(uv, dtype=np.int64)
        uv1h = np.zeros((frames, 2))
        uv1h[np.arange(frames), uv] = 1.0
        pitch_emb = self.pitch_embedding(f0n, uv1h)
        coarse = self.mel_decoder(cond, pitch_emb).data.copy()
        if self.postnet is not None:
            spectral = self.postnet.sample(coarse, self.schedule, rng.child(1))
        else:
            spectral = coarse.astype(np.float64)
        return {
            "f0": self.destandardize_f0(f0n),
            "uv": uv,
            "spectral": spectral,
            "coarse_spectral": coarse,
            "predicted_word_durations": predicted,
            "word_spans": spans,
        }


# -- persistence ------------------------------------------------------------------

CHECKPOINT_KIND = "scoresinger-model"


def save_model(model: SingingModel, path: str, extra_meta: dict = None) -> None:
    meta = {"kind": CHECKPOINT_KIND, "config": asdict(model.config)}
    if extra_meta:
        for k in extra_meta:
            if k in meta:
                raise ShapeError(f"extra_meta may not override {k!r}")
        meta.update(extra_meta)
    ckpt.save(path, model.params.arrays(), meta)


def load_model(path: str, dtype=DTYPE) -> tuple[SingingModel, dict]:
    arrays, meta = ckpt.load(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ckpt.CheckpointError(f"{path}: not a model checkpoint "
                                   f"(kind={meta.get('kind')!r})")
    model = SingingModel(ModelConfig(**meta["config"]), RngState(0), dtype)
    model.params.load_arrays(arrays)
    return model, meta
