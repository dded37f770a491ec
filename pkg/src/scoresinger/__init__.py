"""Singing synthesis from word-level music scores, on a numpy autodiff core.

The package turns a score (words, phonemes, notes) plus a singer id into a
frame-level fundamental-frequency curve, a voiced/unvoiced decision per frame,
and a low-dimensional spectral envelope. Alignment between score words and
output frames is learned, pitch is generated by a denoising diffusion model
with a categorical channel for voicing, and the spectral envelope is decoded
coarsely then refined by a second diffusion stage.
"""

__version__ = "0.1.0"

from .corpus import (CorpusConfig, CorpusError, Song, generate_corpus,
                     load_corpus, save_corpus)
from .model import (ModelConfig, SingingModel, load_model, preset_config,
                    save_model)
from .pipeline import (EvalReport, TrainConfig, baseline_reports, build_corpus,
                       evaluate_model, evaluate_tracks, run_ablation,
                       run_inference, train_stage1, train_stage2)
from .plot import render_tracks_svg
from .score import Score, ScoreError, parse_score, serialize_score, validate_score
from .tensor import (Adam, NonFiniteError, Parameters, RngState, ShapeError,
                     Tensor, finite_difference_check, set_finite_checks)

__all__ = [
    "Adam",
    "CorpusConfig",
    "CorpusError",
    "EvalReport",
    "ModelConfig",
    "NonFiniteError",
    "Parameters",
    "RngState",
    "Score",
    "ScoreError",
    "ShapeError",
    "SingingModel",
    "Song",
    "Tensor",
    "TrainConfig",
    "baseline_reports",
    "build_corpus",
    "evaluate_model",
    "evaluate_tracks",
    "finite_difference_check",
    "generate_corpus",
    "load_corpus",
    "load_model",
    "parse_score",
    "preset_config",
    "render_tracks_svg",
    "run_ablation",
    "run_inference",
    "save_corpus",
    "save_model",
    "serialize_score",
    "set_finite_checks",
    "train_stage1",
    "train_stage2",
    "validate_score",
    "__version__",
]
