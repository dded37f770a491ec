"""Training orchestration, metric, baseline, and ablation-harness tests."""

import copy

import numpy as np
import pytest

from scoresinger.checkpoint import CheckpointError
from scoresinger.corpus import CorpusConfig, UNVOICED, VOICED, generate_corpus, load_corpus
from scoresinger.model import LOSS_TERMS, SingingModel, load_model
from scoresinger.pipeline import (ABLATION_VARIANTS, MCD_SCALE, EvalReport,
                                  TrainConfig, baseline_reports, build_corpus,
                                  evaluate_model, evaluate_tracks,
                                  flat_score_pitch, format_ablation_table,
                                  run_ablation, run_inference,
                                  spectral_l2_comparison, train_stage1,
                                  train_stage2)
from scoresinger.tensor import NonFiniteError, RngState, ShapeError

# fast tempi and few words keep these songs short enough for quick steps
CORPUS = CorpusConfig(n_songs=4, words_per_song=(2, 3), tempo_range=(170, 200))


@pytest.fixture(scope="module")
def songs():
    return generate_corpus(CORPUS, RngState(11))


@pytest.fixture(scope="module")
def trained(songs):
    return train_stage1(TrainConfig(steps=2, batch_size=2, seed=3), songs=songs)


def gt_prediction(song):
    """A prediction dict that reproduces the reference tracks exactly."""
    return {
        "f0": song.pitch.f0_semitones.astype(np.float64),
        "uv": song.pitch.uv.copy(),
        "spectral": song.spectral.frames.astype(np.float64),
        "predicted_word_durations": song.word_durations.copy(),
    }


@pytest.mark.parametrize("field,value", [
    ("stage", 0), ("stage", 3), ("steps", -1),
    ("batch_size", 0), ("learning_rate", 0.0), ("learning_rate", -1e-3),
])
def test_train_config_rejects(field, value):
    with pytest.raises(ShapeError):
        TrainConfig(**{field: value}).validate()


def test_unknown_preset_rejected(songs):
    with pytest.raises(ShapeError, match="preset"):
        train_stage1(TrainConfig(steps=0, preset="gpu"), songs=songs)


def test_zero_steps_is_fresh_init(songs):
    from scoresinger.corpus import f0_statistics

    cfg = TrainConfig(steps=0, seed=9)
    model, history = train_stage1(cfg, songs=songs)
    assert history == []
    mean, std = f0_statistics(songs)
    fresh = SingingModel(cfg.model_config(mean, std), RngState(9).child(0))
    got, want = model.params.arrays(), fresh.params.arrays()
    assert set(got) == set(want)
    for name in got:
        assert np.array_equal(got[name], want[name]), name


def test_history_has_exactly_the_named_terms(trained):
    _, history = trained
    assert len(history) == 2
    for i, entry in enumerate(history):
        assert set(entry) == {"step", *LOSS_TERMS}
        assert entry["step"] == i
        for term in LOSS_TERMS:
            assert np.isfinite(entry[term])


def test_stage1_determinism(songs):
    cfg = TrainConfig(steps=2, batch_size=2, seed=3)
    model_a, hist_a = train_stage1(cfg, songs=songs)
    model_b, hist_b = train_stage1(cfg, songs=songs)
    assert hist_a == hist_b
    arrays_a, arrays_b = model_a.params.arrays(), model_b.params.arrays()
    for name in arrays_a:
        assert np.array_equal(arrays_a[name], arrays_b[name]), name


def test_non_finite_loss_aborts_with_step(songs):
    poisoned = copy.deepcopy(songs[0])
    poisoned.spectral.frames[:] = np.nan
    with pytest.raises(NonFiniteError, match="step 0"):
        train_stage1(TrainConfig(steps=1, batch_size=1), songs=[poisoned])


def test_stage2_freezes_everything_but_postnet(songs):
    model, _ = train_stage1(TrainConfig(steps=1, batch_size=1, seed=4), songs=songs)
    before = {n: a.copy() for n, a in model.params.arrays().items()}
    model, history = train_stage2(TrainConfig(stage=2, steps=2, batch_size=2, seed=4),
                                  model, songs=songs)
    assert [set(e) for e in history] == [{"step", "post"}] * 2
    after = model.params.arrays()
    changed = [n for n in before if not np.array_equal(before[n], after[n])]
    assert changed and all(n.startswith("postnet.") for n in changed)


def test_stage2_zero_steps_changes_nothing(songs):
    model, _ = train_stage1(TrainConfig(steps=1, batch_size=1, seed=4), songs=songs)
    before = {n: a.copy() for n, a in model.params.arrays().items()}
    model, history = train_stage2(TrainConfig(stage=2, steps=0, seed=4),
                                  model, songs=songs)
    assert history == []
    for n, a in model.params.arrays().items():
        assert np.array_equal(a, before[n]), n


def test_stage2_requires_postnet(songs):
    model, _ = train_stage1(TrainConfig(steps=0, postnet=False), songs=songs)
    with pytest.raises(ShapeError, match="post-net"):
        train_stage2(TrainConfig(stage=2, steps=1), model, songs=songs)


def test_stage2_from_checkpoint_file(tmp_path, songs):
    path = str(tmp_path / "stage1.ckpt")
    train_stage1(TrainConfig(steps=1, batch_size=1, seed=5),
                 checkpoint_path=path, songs=songs)
    out = str(tmp_path / "stage2.ckpt")
    train_stage2(TrainConfig(stage=2, steps=1, batch_size=1, seed=5), path,
                 checkpoint_path=out, songs=songs)
    _, meta = load_model(out)
    assert meta["stage"] == 2
    assert meta["train_config"]["seed"] == 5


def test_stage2_missing_checkpoint_errors(songs):
    with pytest.raises(CheckpointError):
        train_stage2(TrainConfig(stage=2, steps=1), "/nonexistent/stage1.ckpt",
                     songs=songs)


# -- metrics ------------------------------------------------------------------------


def test_perfect_prediction_zeroes_every_metric(songs):
    report = evaluate_tracks([gt_prediction(s) for s in songs], songs)
    assert report.f0rmse == 0.0
    assert report.vde == 0.0
    assert report.mcd_lite == 0.0
    assert report.word_duration_mae_pct == 0.0
    assert report.truncated_frames == 0


def test_flipped_voicing_maxes_vde(songs):
    song = songs[0]
    pred = gt_prediction(song)
    pred["uv"] = VOICED + UNVOICED - pred["uv"]
    report = evaluate_tracks(pred, song)
    assert report.vde == 1.0
    assert report.f0rmse is None  # no frame is voiced in both tracks


def test_one_semitone_offset_gives_unit_rmse(songs):
    pred = gt_prediction(songs[0])
    pred["f0"] = pred["f0"] + 1.0
    report = evaluate_tracks(pred, songs[0])
    assert report.f0rmse == pytest.approx(1.0, abs=1e-9)


def test_constant_spectral_offset_scales_mcd(songs):
    pred = gt_prediction(songs[0])
    pred["spectral"] = pred["spectral"] + np.array([3.0] + [0.0] * 15)
    report = evaluate_tracks(pred, songs[0])
    assert report.mcd_lite == pytest.approx(MCD_SCALE * 3.0, rel=1e-9)


def test_duration_error_is_relative_percent(songs):
    pred = gt_prediction(songs[0])
    pred["predicted_word_durations"] = pred["predicted_word_durations"] * 2
    report = evaluate_tracks(pred, songs[0])
    assert report.word_duration_mae_pct == pytest.approx(100.0, abs=1e-9)


def test_truncation_is_counted_not_penalized(songs):
    song = songs[0]
    pred = gt_prediction(song)
    for key in ("f0", "uv", "spectral"):
        pred[key] = pred[key][:-5]
    report = evaluate_tracks(pred, song)
    assert report.truncated_frames == 5
    assert report.vde == 0.0 and report.mcd_lite == 0.0


def test_pooling_is_frame_weighted(songs):
    a, b = songs[0], songs[1]
    pred_a, pred_b = gt_prediction(a), gt_prediction(b)
    pred_b["uv"] = VOICED + UNVOICED - pred_b["uv"]
    report = evaluate_tracks([pred_a, pred_b], [a, b])
    assert report.vde == pytest.approx(b.n_frames / (a.n_frames + b.n_frames))


@pytest.mark.parametrize("mutate", ["empty", "count", "words"])
def test_evaluate_rejects_mismatches(songs, mutate):
    if mutate == "empty":
        with pytest.raises(ShapeError):
            evaluate_tracks([], [])
    elif mutate == "count":
        with pytest.raises(ShapeError):
            evaluate_tracks([gt_prediction(songs[0])], songs[:2])
    else:
        pred = gt_prediction(songs[0])
        pred["predicted_word_durations"] = pred["predicted_word_durations"][:-1]
        with pytest.raises(ShapeError, match="durations"):
            evaluate_tracks(pred, songs[0])


def test_report_serializes(songs):
    report = evaluate_tracks(gt_prediction(songs[0]), songs[0])
    d = report.to_dict()
    assert set(d) == {"f0rmse", "vde", "mcd_lite", "word_duration_mae_pct",
                      "truncated_frames"}
    assert isinstance(d["vde"], float)


# -- baselines ----------------------------------------------------------------------


def test_always_voiced_baseline_is_unvoiced_fraction(songs):
    got = baseline_reports(songs)["always_voiced_vde"]
    uv = np.concatenate([s.pitch.uv for s in songs])
    assert got == pytest.approx(float(np.mean(uv == UNVOICED)))


def test_flat_pitch_matches_clean_render():
    # with expressive effects disabled the renderer emits exactly the flat
    # nominal pitch on voiced frames, so the score baseline scores a zero
    clean = CorpusConfig(n_songs=2, words_per_song=(2, 3), tempo_range=(170, 200),
                         portamento_frames=0, vibrato_semitones=0.0, jitter_std=0.0)
    songs = generate_corpus(clean, RngState(5))
    assert baseline_reports(songs)["score_pitch_f0rmse"] == pytest.approx(0.0, abs=1e-5)
    for s in songs:
        mask = s.pitch.uv == VOICED
        np.testing.assert_allclose(flat_score_pitch(s)[mask],
                                   s.pitch.f0_semitones[mask], atol=1e-5)


def test_expressive_render_departs_from_flat_pitch(songs):
    assert baseline_reports(songs)["score_pitch_f0rmse"] > 0.05


# -- stage-2 comparison ---------------------------------------------------------


def test_spectral_comparison_reports_both_sides(trained, songs):
    model, _ = trained
    got = spectral_l2_comparison(model, songs[:2], seed=5)
    assert set(got) == {"coarse_l2", "refined_l2"}
    assert np.isfinite(got["coarse_l2"]) and np.isfinite(got["refined_l2"])
    again = spectral_l2_comparison(model, songs[:2], seed=5)
    assert got == again


def test_spectral_comparison_needs_postnet(songs):
    model, _ = train_stage1(TrainConfig(steps=0, postnet=False), songs=songs)
    with pytest.raises(ShapeError, match="post-net"):
        spectral_l2_comparison(model, songs[:1], seed=0)


# -- end-to-end helpers -------------------------------------------------------------


def test_evaluate_model_deterministic(trained, songs):
    model, _ = trained
    first = evaluate_model(model, songs[:2], seed=2)
    second = evaluate_model(model, songs[:2], seed=2)
    assert first == second
    assert isinstance(first, EvalReport)


def test_run_inference_from_checkpoint(tmp_path, songs):
    path = str(tmp_path / "model.ckpt")
    train_stage1(TrainConfig(steps=0, seed=1), checkpoint_path=path, songs=songs)
    out = run_inference(songs[0].score, path, seed=7)
    assert set(out) >= {"f0", "uv", "spectral", "predicted_word_durations"}
    again = run_inference(songs[0].score, path, seed=7)
    np.testing.assert_array_equal(out["f0"], again["f0"])
    with pytest.raises(CheckpointError):
        run_inference(songs[0].score, str(tmp_path / "missing.ckpt"), seed=7)


def test_build_corpus_roundtrip(tmp_path):
    root = str(tmp_path / "corpus")
    info = build_corpus(root, CORPUS, {"train": 3, "dev": 2}, seed=21)
    assert info["splits"] == {"train": 3, "dev": 2}
    train = load_corpus(root, "train")
    dev = load_corpus(root, "dev")
    assert len(train) == 3 and len(dev) == 2
    with pytest.raises(ShapeError):
        build_corpus(root, CORPUS, {"train": 0}, seed=21)


# -- ablation harness ------------------------------------------------------------


def test_ablation_table_structure_and_determinism(songs):
    cfg = TrainConfig(steps=1, batch_size=1, seed=0)
    kwargs = dict(seeds=(0,), songs=songs, eval_songs=songs[:1], stage2_steps=1)
    table = run_ablation(cfg, **kwargs)
    assert set(table["variants"]) == set(ABLATION_VARIANTS)
    for row in table["variants"].values():
        assert set(row["per_seed"]) == {"f0rmse", "vde", "mcd_lite",
                                        "word_duration_mae_pct"}
        assert all(len(v) == 1 for v in row["per_seed"].values())
        assert row["mean"]["vde"] is not None
    again = run_ablation(cfg, **kwargs)
    assert table == again
    text = format_ablation_table(table)
    assert "no_uv_diffusion" in text and "vde" in text


def test_ablation_needs_a_seed(songs):
    with pytest.raises(ShapeError, match="seed"):
        run_ablation(TrainConfig(steps=1), seeds=(), songs=songs,
                     eval_songs=songs[:1])
