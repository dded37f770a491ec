"""Synthetic singing corpus: scores plus ground-truth F0, voicing, spectra.

Real singers deviate from the written score, so the generator layers
controlled deviations onto each nominal song: word durations are scaled by
a lognormal factor (median 1), pitch gets cosine portamento ramps at note
boundaries, sinusoidal vibrato, and Gaussian jitter, and each word opens
with a consonant-dependent unvoiced gap. Rests are fully unvoiced. F0 lives
on the MIDI semitone scale throughout and is linearly interpolated through
unvoiced gaps so every frame carries a finite value.

The spectral target is a deterministic 16-dim stand-in for a mel frame:
a fixed per-phoneme template plus low-order harmonics of F0 on the first
four dimensions.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import checkpoint
from .score import (FPS, GRACE_BEATS, PHONEME_INVENTORY, PHONEME_TO_ID, SPECIALS,
                    UNVOICED_CONSONANTS, VOICED_CONSONANTS, VOWELS, Note, Score,
                    ScoreError, Word, effective_note_beats, parse_score,
                    score_note_spans, serialize_score, validate_score)
from .tensor import RngState

SPECTRAL_DIM = 16
N_HARMONICS = 4

VOICED, UNVOICED = 0, 1


class CorpusError(ValueError):
    """Config values that cannot produce a valid corpus."""


@dataclass
class CorpusConfig:
    n_songs: int = 200
    words_per_song: tuple = (6, 12)
    tempo_range: tuple = (70.0, 140.0)
    pitch_range: tuple = (52, 76)
    singer_count: int = 4
    fps: float = FPS
    rest_prob: float = 0.15
    slur_prob: float = 0.25
    grace_prob: float = 0.12
    duration_log_std: float = 0.1
    portamento_frames: int = 8
    vibrato_semitones: float = 0.3
    vibrato_hz: float = 6.0
    jitter_std: float = 0.05
    unvoiced_onset_frames: int = 6
    voiced_onset_frames: int = 3

    def validate(self) -> "CorpusConfig":
        lo, hi = self.words_per_song
        if self.n_songs < 1:
            raise CorpusError(f"n_songs must be >= 1, got {self.n_songs}")
        if lo < 1 or hi < lo:
            raise CorpusError(f"words_per_song range invalid: {self.words_per_song}")
        if not (0 < self.tempo_range[0] <= self.tempo_range[1]):
            raise CorpusError(f"tempo_range invalid: {self.tempo_range}")
        if not (1 <= self.pitch_range[0] < self.pitch_range[1] <= 127):
            raise CorpusError(f"pitch_range invalid: {self.pitch_range}")
        if self.singer_count < 1:
            raise CorpusError(f"singer_count must be >= 1, got {self.singer_count}")
        for name in ("rest_prob", "slur_prob", "grace_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CorpusError(f"{name} must be in [0, 1], got {v}")
        if self.duration_log_std < 0 or self.jitter_std < 0 or self.vibrato_semitones < 0:
            raise CorpusError("deviation magnitudes must be nonnegative")
        if self.fps <= 0:
            raise CorpusError(f"fps must be positive, got {self.fps}")
        return self


@dataclass
class PitchTrack:
    """Frame-level F0 (semitones, gaps filled) and voicing decisions."""

    f0_semitones: np.ndarray
    uv: np.ndarray  # int ids per frame: 0 voiced, 1 unvoiced

    @property
    def n_frames(self) -> int:
        return len(self.f0_semitones)

    def uv_one_hot(self) -> np.ndarray:
        out = np.zeros((self.n_frames, 2), dtype=np.float32)
        out[np.arange(self.n_frames), self.uv] = 1.0
        return out


@dataclass
class SpectralTrack:
    frames: np.ndarray  # [n_frames, SPECTRAL_DIM]

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass
class Song:
    score: Score
    pitch: PitchTrack
    spectral: SpectralTrack
    phoneme_per_frame: np.ndarray  # int phoneme id per frame

    @property
    def n_frames(self) -> int:
        return self.pitch.n_frames

    @property
    def word_durations(self) -> np.ndarray:
        return np.array([w.gt_duration_frames for w in self.score.words], dtype=np.int64)


# -- spectral stand-in ---------------------------------------------------------

_TEMPLATES: Optional[np.ndarray] = None


def phoneme_templates() -> np.ndarray:
    """Fixed per-phoneme spectral templates, identical across runs."""
    global _TEMPLATES
    if _TEMPLATES is None:
        rng = RngState(916191)
        rows = [rng.child(i).normal((SPECTRAL_DIM,)) * 0.5 for i in range(len(PHONEME_INVENTORY))]
        _TEMPLATES = np.stack(rows).astype(np.float32)
    return _TEMPLATES


def synth_spectral_target(phoneme_ids, f0_semitones) -> SpectralTrack:
    """Deterministic frame spectra from phoneme identity and F0.

    frame = template[phoneme] with sin(k*f0/12), k=1..N_HARMONICS, added on
    the first N_HARMONICS dims.
    """
    ids = np.asarray(phoneme_ids, dtype=np.int64)
    f0 = np.asarray(f0_semitones, dtype=np.float64)
    if ids.shape != f0.shape or ids.ndim != 1:
        raise ScoreError(f"synth_spectral_target: aligned 1-D inputs required, "
                         f"got {ids.shape} and {f0.shape}")
    frames = phoneme_templates()[ids].astype(np.float64)
    k = np.arange(1, N_HARMONICS + 1)
    frames[:, :N_HARMONICS] += np.sin(k[None, :] * f0[:, None] / 12.0)
    return SpectralTrack(frames.astype(np.float32))


# -- random score construction ---------------------------------------------------


def _draw_word(rng, prev_pitch: int, config: CorpusConfig) -> tuple[Word, int]:
    lo, hi = config.pitch_range
    pitch = int(np.clip(prev_pitch + rng.integers(-4, 5), lo, hi))

    r = rng.random()
    if r < 0.30:
        onset = None
    elif r < 0.65:
        onset = VOICED_CONSONANTS[int(rng.integers(0, len(VOICED_CONSONANTS)))]
    else:
        onset = UNVOICED_CONSONANTS[int(rng.integers(0, len(UNVOICED_CONSONANTS)))]
    vowel = VOWELS[int(rng.integers(0, len(VOWELS)))]
    coda = None
    if rng.random() < 0.2:
        pool = VOICED_CONSONANTS + UNVOICED_CONSONANTS
        coda = pool[int(rng.integers(0, len(pool)))]
    phonemes = [p for p in (onset, vowel, coda) if p is not None]

    notes = []
    if rng.random() < config.grace_prob:
        offs = (-2, -1, 1, 2)
        gp = int(np.clip(pitch + offs[int(rng.integers(0, 4))], lo, hi))
        notes.append(Note(midi_pitch=gp, dur_beats=GRACE_BEATS, note_type="grace"))
    main_beats = 0.25 * int(rng.integers(2, 7))
    notes.append(Note(midi_pitch=pitch, dur_beats=main_beats, note_type="regular"))
    last = pitch
    while len(notes) < 4 and rng.random() < config.slur_prob:
        step_pool = (-3, -2, -1, 1, 2, 3)
        last = int(np.clip(last + step_pool[int(rng.integers(0, 6))], lo, hi))
        notes.append(Note(midi_pitch=last, dur_beats=0.25 * int(rng.integers(1, 5)),
                          note_type="slur"))
    return Word(text="".join(phonemes), phonemes=phonemes, notes=notes), last


def _draw_rest_word(rng) -> Word:
    marker = SPECIALS[int(rng.integers(0, 2))]
    dur = 0.25 * int(rng.integers(2, 9))
    return Word(text=marker, phonemes=[marker],
                notes=[Note(midi_pitch=0, dur_beats=dur, note_type="rest")])


def generate_score(config: CorpusConfig, rng: RngState) -> Score:
    lo, hi = config.words_per_song
    n_words = int(rng.integers(lo, hi + 1))
    tempo = float(rng.uniform(*config.tempo_range))
    singer = int(rng.integers(0, config.singer_count))
    mid = (config.pitch_range[0] + config.pitch_range[1]) // 2
    prev = mid
    words = []
    for _ in range(n_words):
        if rng.random() < config.rest_prob:
            words.append(_draw_rest_word(rng))
        else:
            w, prev = _draw_word(rng, prev, config)
            words.append(w)
    if all(w.is_rest for w in words):
        w, prev = _draw_word(rng, mid, config)
        words[0] = w
    return validate_score(Score(tempo_bpm=tempo, singer_id=singer, words=words))


# -- ground-truth rendering -------------------------------------------------------


def word_onset_gap(word: Word, config: CorpusConfig) -> int:
    """Unvoiced frames at the start of a melodic word, set by its first phoneme."""
    first = word.phonemes[0]
    if first in UNVOICED_CONSONANTS:
        return config.unvoiced_onset_frames
    if first in VOICED_CONSONANTS:
        return config.voiced_onset_frames
    return 0


def _split_frames(total: int, weights: np.ndarray) -> np.ndarray:
    """Partition `total` frames proportionally to `weights` without drift."""
    cum = np.cumsum(weights, dtype=np.float64)
    cum = cum / cum[-1] * total
    bounds = np.floor(cum + 0.5).astype(np.int64)
    return np.diff(np.concatenate([[0], bounds]))


def render_tracks(score: Score, config: CorpusConfig, rng: RngState) -> Song:
    """Attach ground-truth word durations to the score and render its tracks."""
    nominal = [int(s.sum()) for s in score_note_spans(score, config.fps)]
    factors = np.exp(rng.normal(len(nominal)) * config.duration_log_std)
    durations = np.maximum(2, np.floor(np.asarray(nominal) * factors + 0.5).astype(np.int64))
    for w, d in zip(score.words, durations):
        w.gt_duration_frames = int(d)

    n_frames = int(durations.sum())
    f0 = np.full(n_frames, np.nan)
    uv = np.full(n_frames, UNVOICED, dtype=np.int64)
    ph = np.zeros(n_frames, dtype=np.int64)
    vib_phase = float(rng.uniform(0.0, 2.0 * np.pi))

    start = 0
    for w, dur in zip(score.words, durations):
        end = start + int(dur)
        if w.is_rest:
            ph[start:end] = PHONEME_TO_ID[w.phonemes[0]]
            start = end
            continue

        gap = min(word_onset_gap(w, config), int(dur) - 1)
        uv[start + gap:end] = VOICED

        # note pitches over the word's ground-truth span
        eff = np.asarray(effective_note_beats(w))
        spans = _split_frames(int(dur), eff)
        pitches = np.repeat([n.midi_pitch for n in w.notes], spans).astype(np.float64)

        # cosine portamento into each later note
        at = int(spans[0])
        for j in range(1, len(spans)):
            if spans[j] > 0 and at > 0:
                ramp = min(config.portamento_frames, int(spans[j]))
                prev_p = pitches[at - 1]
                target = w.notes[j].midi_pitch
                t = np.arange(1, ramp + 1)
                pitches[at:at + ramp] = prev_p + (target - prev_p) * (1 - np.cos(np.pi * t / ramp)) / 2
            at += int(spans[j])
        f0[start:end] = pitches

        # frame-level phoneme labels: onset consonant over the gap, the rest
        # split between vowel and any coda
        labels = list(w.phonemes)
        if labels[0] in VOICED_CONSONANTS + UNVOICED_CONSONANTS and gap > 0:
            ph[start:start + gap] = PHONEME_TO_ID[labels[0]]
            labels = labels[1:]
            body_start = start + gap
        else:
            body_start = start
        body = end - body_start
        wts = np.array([0.8, 0.2]) if len(labels) == 2 else np.ones(len(labels))
        parts = _split_frames(body, wts[:len(labels)])
        at = body_start
        for lab, p_len in zip(labels, parts):
            ph[at:at + p_len] = PHONEME_TO_ID[lab]
            at += int(p_len)
        start = end

    voiced_idx = np.flatnonzero(uv == VOICED)
    frames_t = np.arange(n_frames)
    if config.vibrato_semitones > 0:
        f0[voiced_idx] += config.vibrato_semitones * np.sin(
            2 * np.pi * config.vibrato_hz * frames_t[voiced_idx] / config.fps + vib_phase)
    if config.jitter_std > 0:
        f0[voiced_idx] += rng.normal(len(voiced_idx)) * config.jitter_std

    f0 = np.interp(frames_t, voiced_idx, f0[voiced_idx])
    spectral = synth_spectral_target(ph, f0)
    pitch = PitchTrack(f0_semitones=f0.astype(np.float32), uv=uv)
    return Song(score=score, pitch=pitch, spectral=spectral, phoneme_per_frame=ph)


def generate_corpus(config: CorpusConfig, rng: RngState) -> list[Song]:
    """Songs with ground truth; bit-identical for a given config and seed."""
    config.validate()
    songs = []
    for i in range(config.n_songs):
        song_rng = rng.child(i)
        score = generate_score(config, song_rng.child(0))
        songs.append(render_tracks(score, config, song_rng.child(1)))
    return songs


def f0_statistics(songs: list[Song]) -> tuple[float, float]:
    """Mean and std of F0 over all frames of a song collection."""
    allf0 = np.concatenate([s.pitch.f0_semitones for s in songs]).astype(np.float64)
    return float(allf0.mean()), float(max(allf0.std(), 1e-6))


# -- disk layout -------------------------------------------------------------------


def save_corpus(root, splits: dict, config: CorpusConfig) -> None:
    """Write one directory per split: score JSON plus a track container per song."""
    os.makedirs(root, exist_ok=True)
    manifest = {"fps": config.fps, "config": asdict(config),
                "splits": {k: len(v) for k, v in splits.items()}}
    with open(os.path.join(root, "corpus.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
    for split, songs in splits.items():
        d = os.path.join(root, split)
        os.makedirs(d, exist_ok=True)
        for i, song in enumerate(songs):
            stem = os.path.join(d, f"song_{i:05d}")
            with open(stem + ".score.json", "w") as f:
                f.write(serialize_score(song.score))
            checkpoint.save(stem + ".tracks.ckpt", {
                "f0": song.pitch.f0_semitones,
                "uv": song.pitch.uv.astype(np.float32),
                "spectral": song.spectral.frames,
                "phoneme_per_frame": song.phoneme_per_frame.astype(np.float32),
                "word_durations": song.word_durations.astype(np.float32),
            }, meta={"fps": config.fps, "n_frames": song.n_frames})


def load_corpus(root, split: str) -> list[Song]:
    d = os.path.join(root, split)
    if not os.path.isdir(d):
        raise CorpusError(f"no such corpus split: {d}")
    songs = []
    for name in sorted(os.listdir(d)):
        if not name.endswith(".score.json"):
            continue
        stem = os.path.join(d, name[:-len(".score.json")])
        with open(stem + ".score.json") as f:
            score = parse_score(f.read())
        arrays, _ = checkpoint.load(stem + ".tracks.ckpt")
        durations = arrays["word_durations"].astype(np.int64)
        for w, dur in zip(score.words, durations):
            if w.gt_duration_frames is None:
                w.gt_duration_frames = int(dur)
            elif w.gt_duration_frames != int(dur):
                raise CorpusError(f"{stem}: score and track word durations disagree")
        songs.append(Song(
            score=score,
            pitch=PitchTrack(f0_semitones=arrays["f0"],
                             uv=arrays["uv"].astype(np.int64)),
            spectral=SpectralTrack(arrays["spectral"]),
            phoneme_per_frame=arrays["phoneme_per_frame"].astype(np.int64),
        ))
    if not songs:
        raise CorpusError(f"corpus split is empty: {d}")
    return songs
