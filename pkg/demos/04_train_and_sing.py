"""Train the full model briefly on a small corpus, then synthesize a song.

This is the whole pipeline end to end at toy settings: corpus generation,
stage-1 training (alignment, pitch diffusion, coarse spectral decoding),
stage-2 post-net refinement on the frozen base, inference from the score
alone, and objective evaluation against the rendered ground truth. A few
hundred steps are nowhere near convergence; the point is the moving parts,
not the numbers. Takes a minute or two on a laptop CPU.
"""

import numpy as np

from scoresinger import (CorpusConfig, RngState, TrainConfig, baseline_reports,
                         evaluate_model, generate_corpus, train_stage1,
                         train_stage2)
from scoresinger.plot import render_tracks_svg

corpus_cfg = CorpusConfig(n_songs=24, words_per_song=(3, 4),
                          tempo_range=(170, 200))
songs = generate_corpus(corpus_cfg, RngState(42))
train, held_out = songs[:20], songs[20:]
print(f"corpus: {len(train)} training songs, {len(held_out)} held out")

cfg = TrainConfig(steps=400, batch_size=2, learning_rate=5e-4, seed=0)
model, history = train_stage1(cfg, songs=train)
first, last = history[0], history[-1]
for key in ("gdiff", "mdiff", "dur", "mel"):
    print(f"  {key}: {first[key]:8.4f} -> {last[key]:8.4f}")

model, post_history = train_stage2(
    TrainConfig(stage=2, steps=200, batch_size=2, learning_rate=5e-4, seed=0),
    model, songs=train)
print(f"  post: {post_history[0]['post']:8.4f} -> "
      f"{post_history[-1]['post']:8.4f} (base frozen bit-exactly)")

report = evaluate_model(model, held_out, seed=1)
base = baseline_reports(held_out)
print(f"\nheld-out: vde {report.vde:.3f} (always-voiced baseline "
      f"{base['always_voiced_vde']:.3f}); f0rmse {report.f0rmse:.2f} st "
      f"(score-pitch baseline {base['score_pitch_f0rmse']:.2f}); "
      f"duration mae {report.word_duration_mae_pct:.0f}%")

song = held_out[0]
out = model.infer(song.score, RngState(99))
print(f"\ninference from score alone: {len(out['f0'])} frames "
      f"(ground truth {song.n_frames}), "
      f"word durations {out['predicted_word_durations'].tolist()} "
      f"vs {song.word_durations.tolist()}")
svg = render_tracks_svg({"f0": out["f0"], "uv": out["uv"],
                         "spectral": out["spectral"]}, title="synthesized")
with open("demo_synthesized.svg", "w") as f:
    f.write(svg)
print("wrote demo_synthesized.svg")
