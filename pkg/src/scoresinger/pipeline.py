"""Training orchestration, objective metrics, baselines, and ablations.

Stage 1 optimizes everything except the post-net with the unweighted sum of
the four losses (gdiff, mdiff, dur, mel). Stage 2 loads a stage-1 checkpoint,
freezes it, and trains only the post-net; the freeze is enforced bit-exactly.
Evaluation pools frames and words over a whole split so short songs do not
dominate, and reports F0 error only over frames both tracks consider voiced.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional, Union

import numpy as np

from .corpus import (CorpusConfig, Song, UNVOICED, VOICED, _split_frames,
                     f0_statistics, generate_corpus, load_corpus, save_corpus)
from .model import (LOSS_TERMS, ModelConfig, SingingModel, load_model,
                    preset_config, save_model)
from .score import Score, effective_note_beats, parse_score
from .tensor import Adam, NonFiniteError, RngState, ShapeError

# fixed substream keys so the different consumers of one training seed can
# never collide
_KEY_INIT = 0
_KEY_STAGE1 = 1
_KEY_STAGE2 = 3
_KEY_EVAL = 5


@dataclass
class TrainConfig:
    stage: int = 1
    steps: int = 200
    batch_size: int = 2
    learning_rate: float = 2e-4
    seed: int = 0
    preset: str = "desk"
    corpus_root: str = "corpus"
    train_split: str = "train"
    uv_diffusion: bool = True
    f0_diffusion: bool = True
    postnet: bool = True

    def validate(self) -> "TrainConfig":
        if self.stage not in (1, 2):
            raise ShapeError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 0:
            raise ShapeError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ShapeError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ShapeError(f"learning_rate must be positive, got {self.learning_rate}")
        return self

    def model_config(self, f0_mean: float, f0_std: float) -> ModelConfig:
        return preset_config(self.preset, uv_diffusion=self.uv_diffusion,
                             f0_diffusion=self.f0_diffusion, postnet=self.postnet,
                             f0_mean=f0_mean, f0_std=f0_std)


def _check_finite(value: float, step: int) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"training aborted: non-finite loss at step {step}")
    return value


def train_stage1(config: TrainConfig, checkpoint_path: Optional[str] = None,
                 songs: Optional[list[Song]] = None):
    """Optimize all modules except the post-net; returns (model, history).

    Every history entry carries the step index and the four loss terms
    averaged over the batch. `songs` overrides corpus loading for callers
    that already hold the split in memory.
    """
    config.validate()
    if songs is None:
        songs = load_corpus(config.corpus_root, config.train_split)
    mean, std = f0_statistics(songs)
    model = SingingModel(config.model_config(mean, std),
                         RngState(config.seed).child(_KEY_INIT))
    opt = Adam([(n, p) for n, p in model.params.items()
                if not n.startswith("postnet.")], lr=config.learning_rate)
    root = RngState(config.seed)
    history = []
    scale = 1.0 / config.batch_size
    for step in range(config.steps):
        srng = root.child(_KEY_STAGE1, step)
        picks = srng.integers(0, len(songs), config.batch_size)
        model.params.zero_grad()
        entry = {"step": step, **{k: 0.0 for k in LOSS_TERMS}}
        for j, i in enumerate(picks):
            losses = model.stage1_losses(songs[int(i)], srng.child(j))
            total = (losses["gdiff"] + losses["mdiff"]
                     + losses["dur"] + losses["mel"]) * scale
            _check_finite(total.item(), step)
            for k in LOSS_TERMS:
                entry[k] += losses[k].item() * scale
            total.backward()
        opt.step()
        history.append(entry)
    if checkpoint_path is not None:
        save_model(model, checkpoint_path,
                   {"stage": 1, "train_config": asdict(config)})
    return model, history


def train_stage2(config: TrainConfig, stage1: Union[str, SingingModel],
                 checkpoint_path: Optional[str] = None,
                 songs: Optional[list[Song]] = None):
    """Train only the post-net on top of a frozen stage-1 model.

    `stage1` is a checkpoint path or an in-memory model. The frozen part is
    verified bit-exactly after the run. Returns (model, history); history
    entries carry the post-net noise loss under "post".
    """
    config.validate()
    if isinstance(stage1, SingingModel):
        model = stage1
    else:
        model, _ = load_model(stage1)
    if model.postnet is None:
        raise ShapeError("stage-2 training needs a model built with the post-net "
                         "enabled")
    if songs is None:
        songs = load_corpus(config.corpus_root, config.train_split)
    frozen = {n: a.copy() for n, a in model.params.arrays().items()
              if not n.startswith("postnet.")}
    # the conditioning stack is frozen, so each song's coarse decode is a
    # constant; compute it once
    coarse = [model.coarse_spectral(s) for s in songs]
    opt = Adam([(n, p) for n, p in model.params.items()
                if n.startswith("postnet.")], lr=config.learning_rate)
    root = RngState(config.seed)
    history = []
    scale = 1.0 / config.batch_size
    for step in range(config.steps):
        srng = root.child(_KEY_STAGE2, step)
        picks = srng.integers(0, len(songs), config.batch_size)
        model.params.zero_grad()
        entry = {"step": step, "post": 0.0}
        for j, i in enumerate(picks):
            loss = model.stage2_loss(songs[int(i)], srng.child(j),
                                     coarse=coarse[int(i)]) * scale
            _check_finite(loss.item(), step)
            entry["post"] += loss.item()
            loss.backward()
        opt.step()
        history.append(entry)
    for n, a in model.params.arrays().items():
        if not n.startswith("postnet.") and not np.array_equal(a, frozen[n]):
            raise ShapeError(f"freeze contract violated: {n} changed during stage 2")
    if checkpoint_path is not None:
        save_model(model, checkpoint_path,
                   {"stage": 2, "train_config": asdict(config)})
    return model, history


def run_inference(score: Union[Score, dict, str, bytes], checkpoint_path: str,
                  seed: int, word_spans=None) -> dict:
    """Load a checkpoint and synthesize one score; deterministic per seed."""
    model, _ = load_model(checkpoint_path)
    if not isinstance(score, Score):
        score = parse_score(score)
    return model.infer(score, RngState(seed), word_spans=word_spans)


# -- metrics -------------------------------------------------------------------------

MCD_SCALE = (10.0 / np.log(10.0)) * np.sqrt(2.0)


@dataclass
class EvalReport:
    f0rmse: Optional[float]       # semitones; None when no mutually voiced frames
    vde: float                    # fraction of frames with mismatched voicing
    mcd_lite: float               # scaled mean frame Euclidean spectral distance
    word_duration_mae_pct: float  # mean |predicted - gt| / gt over words, percent
    truncated_frames: int = 0     # frames dropped to equalize track lengths

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_tracks(predictions, references) -> EvalReport:
    """Pooled metrics for one prediction or a list of (prediction, Song) pairs.

    Predictions are dicts as returned by inference: f0 in semitones, uv ids,
    spectral frames, and predicted word durations. Tracks of unequal length
    are truncated to the shorter one and the dropped frames counted.
    """
    if isinstance(predictions, dict):
        predictions = [predictions]
        references = [references]
    if len(predictions) != len(references):
        raise ShapeError(f"evaluate_tracks: {len(predictions)} predictions for "
                         f"{len(references)} references")
    if not predictions:
        raise ShapeError("evaluate_tracks: nothing to evaluate")

    sq_f0, n_voiced = 0.0, 0
    uv_wrong, n_frames = 0, 0
    dist_sum = 0.0
    dur_err = []
    truncated = 0
    for pred, song in zip(predictions, references):
        f0 = np.asarray(pred["f0"], dtype=np.float64)
        uv = np.asarray(pred["uv"], dtype=np.int64)
        spec = np.asarray(pred["spectral"], dtype=np.float64)
        n = min(len(f0), song.n_frames)
        truncated += abs(len(f0) - song.n_frames)
        gt_f0 = song.pitch.f0_semitones[:n].astype(np.float64)
        gt_uv = song.pitch.uv[:n]
        both = (uv[:n] == VOICED) & (gt_uv == VOICED)
        sq_f0 += float(((f0[:n][both] - gt_f0[both]) ** 2).sum())
        n_voiced += int(both.sum())
        uv_wrong += int((uv[:n] != gt_uv).sum())
        n_frames += n
        gt_spec = song.spectral.frames[:n].astype(np.float64)
        dist_sum += float(np.linalg.norm(spec[:n] - gt_spec, axis=1).sum())
        gt_dur = song.word_durations.astype(np.float64)
        pd = np.asarray(pred["predicted_word_durations"], dtype=np.float64)
        if len(pd) != len(gt_dur):
            raise ShapeError(f"evaluate_tracks: {len(pd)} predicted durations for "
                             f"{len(gt_dur)} words")
        dur_err.extend(np.abs(pd - gt_dur) / gt_dur)

    if n_frames == 0:
        raise ShapeError("evaluate_tracks: zero overlapping frames")
    return EvalReport(
        f0rmse=float(np.sqrt(sq_f0 / n_voiced)) if n_voiced else None,
        vde=uv_wrong / n_frames,
        mcd_lite=float(MCD_SCALE * dist_sum / n_frames),
        word_duration_mae_pct=float(np.mean(dur_err) * 100.0),
        truncated_frames=int(truncated),
    )


def evaluate_model(model: SingingModel, songs: list[Song], seed: int,
                   use_gt_spans: bool = True) -> EvalReport:
    """Synthesize every song and score the results.

    With `use_gt_spans` the expansion runs over ground-truth word durations so
    frame-level metrics compare aligned tracks; duration error still reflects
    the predicted durations.
    """
    root = RngState(seed)
    preds = []
    for i, song in enumerate(songs):
        spans = song.word_durations if use_gt_spans else None
        preds.append(model.infer(song.score, root.child(_KEY_EVAL, i),
                                 word_spans=spans))
    return evaluate_tracks(preds, songs)


# -- baselines -------------------------------------------------------------------


def flat_score_pitch(song: Song) -> np.ndarray:
    """Per-frame nominal note pitch: what the score alone predicts.

    Notes are stretched over each word's ground-truth duration exactly the
    way the corpus renderer allocates them, but with no portamento, vibrato,
    or jitter. Rest frames carry 0; they are unvoiced and excluded by every
    F0 metric.
    """
    out = np.zeros(song.n_frames, dtype=np.float64)
    start = 0
    for w in song.score.words:
        dur = int(w.gt_duration_frames)
        if not w.is_rest:
            spans = _split_frames(dur, np.asarray(effective_note_beats(w)))
            out[start:start + dur] = np.repeat([n.midi_pitch for n in w.notes], spans)
        start += dur
    return out


def baseline_reports(songs: list[Song]) -> dict:
    """Reference points a trained model must beat.

    always_voiced_vde: VDE of predicting voiced everywhere (the unvoiced
    fraction of the data). score_pitch_f0rmse: RMSE over ground-truth voiced
    frames of the flat nominal pitch.
    """
    unvoiced = sum(int((s.pitch.uv == UNVOICED).sum()) for s in songs)
    frames = sum(s.n_frames for s in songs)
    sq, n = 0.0, 0
    for s in songs:
        mask = s.pitch.uv == VOICED
        diff = flat_score_pitch(s)[mask] - s.pitch.f0_semitones[mask].astype(np.float64)
        sq += float((diff ** 2).sum())
        n += int(mask.sum())
    return {
        "always_voiced_vde": unvoiced / frames,
        "score_pitch_f0rmse": float(np.sqrt(sq / n)),
    }


# -- stage-2 comparison -----------------------------------------------------------


def spectral_l2_comparison(model: SingingModel, songs: list[Song], seed: int) -> dict:
    """Held-out mean squared spectral error: coarse decode vs refined output.

    Both use teacher-forced pitch so the comparison isolates the spectral
    stack from pitch sampling noise.
    """
    if model.postnet is None:
        raise ShapeError("spectral comparison needs the post-net enabled")
    root = RngState(seed)
    sq_coarse, sq_refined, frames = 0.0, 0.0, 0
    for i, song in enumerate(songs):
        coarse = model.coarse_spectral(song)
        refined = model.postnet.sample(coarse, model.schedule, root.child(_KEY_EVAL, i))
        gt = song.spectral.frames.astype(np.float64)
        sq_coarse += float(((coarse - gt) ** 2).sum())
        sq_refined += float(((refined - gt) ** 2).sum())
        frames += song.n_frames
    dim = songs[0].spectral.frames.shape[1]
    return {"coarse_l2": sq_coarse / (frames * dim),
            "refined_l2": sq_refined / (frames * dim)}


# -- corpus orchestration -----------------------------------------------------------


def build_corpus(root: str, config: CorpusConfig, split_sizes: dict,
                 seed: int) -> dict:
    """Generate and write a corpus split as named subdirectories.

    `split_sizes` maps split name to song count; songs are drawn from one
    deterministic stream and dealt to splits in order.
    """
    sizes = {k: int(v) for k, v in split_sizes.items()}
    if not sizes or any(v < 1 for v in sizes.values()):
        raise ShapeError(f"split sizes must be positive, got {split_sizes}")
    total = sum(sizes.values())
    songs = generate_corpus(replace(config, n_songs=total), RngState(seed))
    splits, at = {}, 0
    for name, count in sizes.items():
        splits[name] = songs[at:at + count]
        at += count
    save_corpus(root, splits, replace(config, n_songs=total))
    return {"root": root, "splits": sizes, "seed": seed}


# -- ablation harness ------------------------------------------------------------

ABLATION_VARIANTS = {
    "full": {},
    "no_uv_diffusion": {"uv_diffusion": False},
    "no_f0_diffusion": {"f0_diffusion": False},
    "no_postnet": {"postnet": False},
}


def run_ablation(config: TrainConfig, seeds=(0, 1, 2), eval_split: str = "dev",
                 stage2_steps: Optional[int] = None,
                 songs: Optional[list[Song]] = None,
                 eval_songs: Optional[list[Song]] = None) -> dict:
    """Train every variant over every seed and tabulate held-out metrics.

    Each variant flips exactly one toggle against the shared base config;
    variants with the post-net enabled also get a stage-2 run (`stage2_steps`
    defaults to the stage-1 step count). Returns a table dict: variant ->
    per-seed metric lists plus their means.
    """
    config.validate()
    if not seeds:
        raise ShapeError("run_ablation: need at least one seed")
    if songs is None:
        songs = load_corpus(config.corpus_root, config.train_split)
    if eval_songs is None:
        eval_songs = load_corpus(config.corpus_root, eval_split)
    table = {"variants": {}, "seeds": list(seeds),
             "base_config": asdict(config)}
    for name, toggles in ABLATION_VARIANTS.items():
        rows = {"f0rmse": [], "vde": [], "mcd_lite": [],
                "word_duration_mae_pct": []}
        for seed in seeds:
            cfg = replace(config, seed=int(seed), **toggles)
            model, _ = train_stage1(cfg, songs=songs)
            if cfg.postnet:
                s2 = replace(cfg, stage=2,
                             steps=config.steps if stage2_steps is None else stage2_steps)
                model, _ = train_stage2(s2, model, songs=songs)
            report = evaluate_model(model, eval_songs, seed=int(seed))
            rows["f0rmse"].append(report.f0rmse)
            rows["vde"].append(report.vde)
            rows["mcd_lite"].append(report.mcd_lite)
            rows["word_duration_mae_pct"].append(report.word_duration_mae_pct)
        means = {k: (float(np.mean([x for x in v if x is not None]))
                     if any(x is not None for x in v) else None)
                 for k, v in rows.items()}
        table["variants"][name] = {"per_seed": rows, "mean": means}
    return table


def format_ablation_table(table: dict) -> str:
    """Fixed-width text rendering of a run_ablation result."""
    cols = ("f0rmse", "vde", "mcd_lite", "word_duration_mae_pct")
    header = f"{'variant':<18}" + "".join(f"{c:>24}" for c in cols)
    lines = [header, "-" * len(header)]
    for name, row in table["variants"].items():
        cells = []
        for c in cols:
            m = row["mean"][c]
            cells.append(f"{'n/a':>24}" if m is None else f"{m:>24.6f}")
        lines.append(f"{name:<18}" + "".join(cells))
    return "\n".join(lines)
