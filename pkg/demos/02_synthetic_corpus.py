"""Generate a tiny synthetic corpus and look at what is inside a song.

Each song pairs a word-level score (phonemes, notes, tempo, singer) with
rendered frame tracks: an expressive f0 curve in semitones (portamento,
vibrato, jitter), a per-frame voiced/unvoiced decision, and deterministic
16-dimensional spectral frames. The script also writes one song to an SVG
so you can see the tracks.
"""

import numpy as np

from scoresinger import CorpusConfig, RngState, generate_corpus, serialize_score
from scoresinger.corpus import VOICED
from scoresinger.plot import render_tracks_svg

config = CorpusConfig(n_songs=4, words_per_song=(3, 5), tempo_range=(120, 160))
songs = generate_corpus(config, RngState(7))

song = songs[0]
print(f"{len(songs)} songs; first: {len(song.score.words)} words, "
      f"{song.n_frames} frames, tempo {song.score.tempo_bpm:.0f} bpm, "
      f"singer {song.score.singer_id}")
for w in song.score.words[:4]:
    kind = "rest" if w.is_rest else f"notes {[n.midi_pitch for n in w.notes]}"
    print(f"  word {w.phonemes or '(rest)'} -> {w.gt_duration_frames} frames, {kind}")

voiced = song.pitch.uv == VOICED
print(f"voiced fraction {voiced.mean():.2f}; "
      f"f0 range {song.pitch.f0_semitones.min():.1f}.."
      f"{song.pitch.f0_semitones.max():.1f} semitones; "
      f"spectral shape {song.spectral.frames.shape}")

# scores serialize to JSON and parse back identically
text = serialize_score(song.score)
print(f"score JSON: {len(text)} bytes")

svg = render_tracks_svg({"f0": song.pitch.f0_semitones, "uv": song.pitch.uv,
                         "spectral": song.spectral.frames},
                        title="synthetic song 0")
with open("demo_song.svg", "w") as f:
    f.write(svg)
print("wrote demo_song.svg")
