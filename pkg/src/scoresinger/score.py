"""Music score types, JSON parsing, and beat-to-frame conversion.

A score is a tempo, a singer id, and an ordered list of words; each word
carries phonemes from a fixed inventory and one or more notes. Note types
cover the realistic-score vocabulary: regular pitched notes, rests, slurs
(a pitch change continuing the previous syllable), and grace notes (short
ornaments stealing time ahead of their main note).

Frame conversion uses cumulative rounding: each note's span is the
difference of its rounded cumulative boundaries, so the per-note spans of a
song always sum to the rounded total and never drift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FPS = 187.5  # frames per second: 24 kHz audio at a hop of 128 samples

SPECIALS = ("SP", "AP")  # silence and aspirate rest markers
VOWELS = ("a", "e", "i", "o", "u")
VOICED_CONSONANTS = ("m", "n", "l", "r", "v", "z", "w", "y")
UNVOICED_CONSONANTS = ("p", "t", "k", "s", "f", "h")

PHONEME_INVENTORY = SPECIALS + VOWELS + VOICED_CONSONANTS + UNVOICED_CONSONANTS
PHONEME_TO_ID = {p: i for i, p in enumerate(PHONEME_INVENTORY)}

NOTE_TYPES = ("regular", "rest", "slur", "grace")
NOTE_TYPE_TO_ID = {t: i for i, t in enumerate(NOTE_TYPES)}

GRACE_BEATS = 0.25  # time a grace note occupies ahead of its main note


class ScoreError(ValueError):
    """Schema violation or invariant failure, located by a JSON-style path."""


@dataclass
class Note:
    midi_pitch: int
    dur_beats: float
    note_type: str


@dataclass
class Word:
    text: str
    phonemes: list[str]
    notes: list[Note]
    gt_duration_frames: Optional[int] = None

    @property
    def is_rest(self) -> bool:
        return len(self.notes) == 1 and self.notes[0].note_type == "rest"


@dataclass
class Score:
    tempo_bpm: float
    singer_id: int
    words: list[Word] = field(default_factory=list)

    @property
    def total_beats(self) -> float:
        return sum(n.dur_beats for w in self.words for n in w.notes)


def _fail(path: str, msg: str):
    raise ScoreError(f"{path}: {msg}")


def _validate_note(note: Note, path: str) -> None:
    if not isinstance(note.midi_pitch, int) or not 0 <= note.midi_pitch <= 127:
        _fail(f"{path}.midi", f"midi pitch must be an integer in [0, 127], got {note.midi_pitch!r}")
    if not note.dur_beats > 0:
        _fail(f"{path}.dur_beats", f"duration must be positive, got {note.dur_beats!r}")
    if note.note_type not in NOTE_TYPES:
        _fail(f"{path}.type", f"unknown note type {note.note_type!r}; expected one of {NOTE_TYPES}")
    if (note.note_type == "rest") != (note.midi_pitch == 0):
        _fail(f"{path}", f"rest type and midi 0 must coincide "
                         f"(type={note.note_type!r}, midi={note.midi_pitch})")


def _validate_word(word: Word, path: str) -> None:
    if not word.phonemes:
        _fail(f"{path}.phonemes", "word needs at least one phoneme")
    for j, p in enumerate(word.phonemes):
        if p not in PHONEME_TO_ID:
            _fail(f"{path}.phonemes[{j}]", f"unknown phoneme {p!r}")
    if not word.notes:
        _fail(f"{path}.notes", "word needs at least one note")
    for j, n in enumerate(word.notes):
        _validate_note(n, f"{path}.notes[{j}]")
    if word.notes[0].note_type == "slur":
        _fail(f"{path}.notes[0]", "slur cannot begin a word (it continues a previous pitch)")
    has_rest = any(n.note_type == "rest" for n in word.notes)
    if has_rest:
        if len(word.notes) != 1:
            _fail(f"{path}.notes", "a rest word must hold exactly one note")
        if len(word.phonemes) != 1 or word.phonemes[0] not in SPECIALS:
            _fail(f"{path}.phonemes", f"a rest word must carry exactly one of {SPECIALS}")
    else:
        if any(p in SPECIALS for p in word.phonemes):
            _fail(f"{path}.phonemes", "rest markers are only valid in rest words")
    if word.gt_duration_frames is not None and word.gt_duration_frames < 1:
        _fail(f"{path}.gt_duration_frames", f"must be >= 1, got {word.gt_duration_frames}")


def validate_score(score: Score) -> Score:
    if not score.tempo_bpm > 0:
        _fail("tempo_bpm", f"must be positive, got {score.tempo_bpm!r}")
    if not isinstance(score.singer_id, int) or score.singer_id < 0:
        _fail("singer_id", f"must be a nonnegative integer, got {score.singer_id!r}")
    if not score.words:
        _fail("words", "score needs at least one word")
    for i, w in enumerate(score.words):
        _validate_word(w, f"words[{i}]")
    return score


def parse_score(document) -> Score:
    """Parse and validate a score from a JSON string/bytes or a parsed dict."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ScoreError(f"invalid JSON: {e}") from None
    if not isinstance(document, dict):
        _fail("$", f"expected a JSON object, got {type(document).__name__}")

    def need(obj, key, path):
        if key not in obj:
            _fail(f"{path}.{key}" if path else key, "missing required field")
        return obj[key]

    words = []
    raw_words = need(document, "words", "")
    if not isinstance(raw_words, list):
        _fail("words", "must be a list")
    for i, rw in enumerate(raw_words):
        wpath = f"words[{i}]"
        if not isinstance(rw, dict):
            _fail(wpath, "must be an object")
        notes = []
        raw_notes = need(rw, "notes", wpath)
        if not isinstance(raw_notes, list):
            _fail(f"{wpath}.notes", "must be a list")
        for j, rn in enumerate(raw_notes):
            npath = f"{wpath}.notes[{j}]"
            if not isinstance(rn, dict):
                _fail(npath, "must be an object")
            notes.append(Note(midi_pitch=need(rn, "midi", npath),
                              dur_beats=need(rn, "dur_beats", npath),
                              note_type=need(rn, "type", npath)))
        words.append(Word(text=need(rw, "text", wpath),
                          phonemes=need(rw, "phonemes", wpath),
                          notes=notes,
                          gt_duration_frames=rw.get("gt_duration_frames")))
    score = Score(tempo_bpm=need(document, "tempo_bpm", ""),
                  singer_id=need(document, "singer_id", ""),
                  words=words)
    return validate_score(score)


def serialize_score(score: Score) -> str:
    """Canonical JSON for a Score; parse_score(serialize_score(s)) == s."""
    doc = {
        "tempo_bpm": score.tempo_bpm,
        "singer_id": score.singer_id,
        "words": [],
    }
    for w in score.words:
        rw = {
            "text": w.text,
            "phonemes": list(w.phonemes),
            "notes": [{"midi": n.midi_pitch, "dur_beats": n.dur_beats, "type": n.note_type}
                      for n in w.notes],
        }
        if w.gt_duration_frames is not None:
            rw["gt_duration_frames"] = int(w.gt_duration_frames)
        doc["words"].append(rw)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# -- frame conversion ----------------------------------------------------------


def _round_half_up(x: np.ndarray | float):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def beats_to_frames(dur_beats: float, tempo_bpm: float, fps: float = FPS) -> int:
    """Frame count of a single duration, rounding half up."""
    if not (dur_beats > 0 and tempo_bpm > 0 and fps > 0):
        raise ScoreError(f"beats_to_frames: all arguments must be positive "
                         f"(got {dur_beats}, {tempo_bpm}, {fps})")
    return int(_round_half_up(dur_beats * 60.0 / tempo_bpm * fps))


def spans_from_beats(beats: list[float], tempo_bpm: float, fps: float = FPS) -> np.ndarray:
    """Frame span per duration via cumulative rounding; spans sum exactly to
    the rounded total, so long scores never accumulate drift."""
    if any(b <= 0 for b in beats):
        raise ScoreError("spans_from_beats: durations must be positive")
    cum = np.cumsum([0.0] + list(beats)) * 60.0 / tempo_bpm * fps
    bounds = _round_half_up(cum)
    return np.diff(bounds)


def effective_note_beats(word: Word) -> list[float]:
    """Sung duration of each note: grace notes take a fixed short slot ahead
    of their main note, which gives the time up; written durations otherwise."""
    beats = [n.dur_beats for n in word.notes]
    for j, n in enumerate(word.notes):
        if n.note_type == "grace" and j + 1 < len(word.notes):
            steal = min(GRACE_BEATS, beats[j + 1] / 2.0)
            beats[j] = steal
            beats[j + 1] = beats[j + 1] + n.dur_beats - steal
    return beats


def score_note_spans(score: Score, fps: float = FPS) -> list[np.ndarray]:
    """Nominal frame spans per word (one array of per-note spans each),
    computed over the whole song's cumulative effective-beat timeline."""
    beats = []
    counts = []
    for w in score.words:
        eff = effective_note_beats(w)
        beats.extend(eff)
        counts.append(len(eff))
    flat = spans_from_beats(beats, score.tempo_bpm, fps)
    out = []
    at = 0
    for c in counts:
        out.append(flat[at:at + c])
        at += c
    return out


def score_word_spans(score: Score, fps: float = FPS) -> np.ndarray:
    """Nominal frame span per word from the score alone (no ground truth)."""
    return np.array([int(s.sum()) for s in score_note_spans(score, fps)], dtype=np.int64)


def flatten_score(score: Score) -> dict:
    """Arrays the encoders consume, flattened over the whole score.

    Note durations are expressed in seconds so tempo is part of the input;
    a duration in beats alone would leave frame targets unpredictable.
    """
    ph_ids, ph_word = [], []
    note_pitch, note_type, note_dur, note_word = [], [], [], []
    for i, w in enumerate(score.words):
        for p in w.phonemes:
            ph_ids.append(PHONEME_TO_ID[p])
            ph_word.append(i)
        for n in w.notes:
            note_pitch.append(n.midi_pitch)
            note_type.append(NOTE_TYPE_TO_ID[n.note_type])
            note_dur.append(n.dur_beats * 60.0 / score.tempo_bpm)
            note_word.append(i)
    return {
        "phoneme_ids": np.array(ph_ids, dtype=np.int64),
        "phoneme_word": np.array(ph_word, dtype=np.int64),
        "note_pitch": np.array(note_pitch, dtype=np.int64),
        "note_type": np.array(note_type, dtype=np.int64),
        "note_dur_seconds": np.array(note_dur, dtype=np.float64),
        "note_word": np.array(note_word, dtype=np.int64),
        "n_words": len(score.words),
        "singer_id": score.singer_id,
    }
