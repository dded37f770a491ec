"""Command-line interface.

Subcommands: gen-corpus, train, infer, eval, ablate, plot. Each takes its
settings from a single JSON config file plus repeatable --set key=value
overrides (values parsed as JSON when possible, dotted keys descend nested
objects). Results go to stdout as JSON; failures print one JSON error object
to stderr and exit nonzero. Inference output and corpus songs share the same
array-container format, so `plot` renders either.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .checkpoint import CheckpointError
from .corpus import CorpusConfig, CorpusError, load_corpus
from .model import load_model
from .pipeline import (TrainConfig, baseline_reports, build_corpus,
                       evaluate_model, format_ablation_table, run_ablation,
                       run_inference, train_stage1, train_stage2)
from .plot import render_tracks_svg
from .score import Score, ScoreError, parse_score
from .tensor import NonFiniteError, ShapeError

TRACKS_KIND = "scoresinger-tracks"


class UsageError(ValueError):
    """Bad command line or config contents."""


class _Parser(argparse.ArgumentParser):
    # raise instead of printing usage + exiting, so errors become JSON
    def error(self, message):
        raise UsageError(message)


def _parse_set(expr: str) -> tuple[list[str], object]:
    if "=" not in expr:
        raise UsageError(f"--set expects key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    if not key:
        raise UsageError(f"--set expects a nonempty key in {expr!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _load_config(path: Optional[str], sets: list[str]) -> dict:
    if path is None:
        data = {}
    else:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise UsageError(f"{path}: config must be a JSON object")
    for expr in sets or []:
        keys, value = _parse_set(expr)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {expr}: {k} is not an object")
        node[keys[-1]] = value
    return data


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise UsageError(f"{where}: unknown keys {unknown}")
    # JSON has no tuples; restore them where the dataclass default is one
    coerced = dict(data)
    for f in dataclasses.fields(cls):
        if isinstance(f.default, tuple) and isinstance(coerced.get(f.name), list):
            coerced[f.name] = tuple(coerced[f.name])
    return cls(**coerced)


def _emit(obj) -> int:
    print(json.dumps(obj, sort_keys=True))
    return 0


def _read_score(path: str) -> Score:
    with open(path, "r", encoding="utf-8") as f:
        return parse_score(f.read())


# -- subcommands ---------------------------------------------------------------------


def _cmd_gen_corpus(args) -> int:
    data = _load_config(args.config, args.set)
    root = args.out or data.get("root")
    if not root:
        raise UsageError("gen-corpus needs --out or a 'root' config key")
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    corpus = _build(CorpusConfig, data.get("corpus", {}), "corpus config")
    splits = data.get("splits", {"train": corpus.n_songs})
    info = build_corpus(root, corpus, splits, seed=int(seed))
    return _emit(info)


def _cmd_train(args) -> int:
    data = _load_config(args.config, args.set)
    stage1_ckpt = data.pop("stage1_checkpoint", None)
    data["seed"] = args.seed
    cfg = _build(TrainConfig, data, "train config").validate()
    if cfg.stage == 1:
        _, history = train_stage1(cfg, checkpoint_path=args.out)
    else:
        if not stage1_ckpt:
            raise UsageError("stage 2 needs a 'stage1_checkpoint' config key")
        _, history = train_stage2(cfg, stage1_ckpt, checkpoint_path=args.out)
    return _emit({"checkpoint": args.out, "stage": cfg.stage, "steps": cfg.steps,
                  "final": history[-1] if history else None})


def _cmd_infer(args) -> int:
    score = _read_score(args.score)
    spans = None
    if args.use_gt_spans:
        gt = [w.gt_duration_frames for w in score.words]
        if any(d is None for d in gt):
            raise UsageError("--use-gt-spans: score carries no ground-truth "
                             "word durations")
        spans = np.asarray(gt, dtype=np.int64)
    out = run_inference(score, args.checkpoint, seed=args.seed, word_spans=spans)
    arrays = {
        "f0": out["f0"].astype(np.float32),
        "uv": out["uv"].astype(np.float32),
        "spectral": out["spectral"].astype(np.float32),
        "coarse_spectral": out["coarse_spectral"].astype(np.float32),
        "predicted_word_durations": out["predicted_word_durations"].astype(np.float32),
        "word_spans": out["word_spans"].astype(np.float32),
    }
    meta = {"kind": TRACKS_KIND, "seed": args.seed,
            "checkpoint": args.checkpoint, "gt_spans": bool(args.use_gt_spans)}
    ckpt.save(args.out, arrays, meta)
    return _emit({"tracks": args.out, "frames": int(len(out["f0"])),
                  "predicted_word_durations":
                      [int(d) for d in out["predicted_word_durations"]]})


def _cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    songs = load_corpus(args.corpus, args.split)
    report = evaluate_model(model, songs, seed=args.seed).to_dict()
    if args.baselines:
        report["baselines"] = baseline_reports(songs)
    return _emit(report)


def _cmd_ablate(args) -> int:
    data = _load_config(args.config, args.set)
    data.pop("stage1_checkpoint", None)
    cfg = _build(TrainConfig, data, "train config").validate()
    seeds = tuple(int(s) for s in args.seeds.split(",") if s != "")
    table = run_ablation(cfg, seeds=seeds, eval_split=args.eval_split,
                         stage2_steps=args.stage2_steps)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(table, f, sort_keys=True, indent=2)
    if args.text:
        sys.stderr.write(format_ablation_table(table) + "\n")
    return _emit(table)


def _cmd_plot(args) -> int:
    arrays, _ = ckpt.load(args.tracks)
    wanted = args.panels.split(",") if args.panels else ["f0", "uv", "spectral"]
    unknown = sorted(set(wanted) - {"f0", "uv", "spectral"})
    if unknown:
        raise UsageError(f"unknown panels {unknown}; choose from f0, uv, spectral")
    tracks = {}
    for name in wanted:
        if name in arrays:
            a = arrays[name]
            tracks[name] = a.astype(np.int64) if name == "uv" else a
    if not tracks:
        raise UsageError(f"{args.tracks} holds none of the requested tracks "
                         f"{wanted}")
    svg = render_tracks_svg(tracks, title=args.title)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(svg)
    return _emit({"svg": args.out, "panels": sorted(tracks),
                  "frames": int(len(next(iter(tracks.values()))))})


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scoresinger",
                description="Score-conditioned singing synthesis toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON config file")
            sp.add_argument("--set", action="append", default=[],
                            metavar="KEY=VALUE", help="override a config entry")

    sp = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    common(sp)
    sp.add_argument("--out", help="corpus root directory")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=_cmd_gen_corpus)

    sp = sub.add_parser("train", help="run one training stage")
    common(sp)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="checkpoint to write")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("infer", help="synthesize tracks for a score")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--score", required=True, help="score JSON file")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="tracks container to write")
    sp.add_argument("--use-gt-spans", action="store_true",
                    help="expand with ground-truth word durations")
    sp.set_defaults(func=_cmd_infer)

    sp = sub.add_parser("eval", help="score a checkpoint against a corpus split")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split", default="dev")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--baselines", action="store_true",
                    help="include reference baselines in the report")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("ablate", help="train and compare ablation variants")
    common(sp)
    sp.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    sp.add_argument("--eval-split", default="dev")
    sp.add_argument("--stage2-steps", type=int, default=None)
    sp.add_argument("--out", help="also write the table JSON here")
    sp.add_argument("--text", action="store_true",
                    help="print a readable table to stderr")
    sp.set_defaults(func=_cmd_ablate)

    sp = sub.add_parser("plot", help="render a tracks container to SVG")
    common(sp, config=False)
    sp.add_argument("--tracks", required=True, help="tracks or corpus song file")
    sp.add_argument("--out", required=True, help="SVG file to write")
    sp.add_argument("--panels", help="comma subset of f0,uv,spectral")
    sp.add_argument("--title")
    sp.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ShapeError, ScoreError, CorpusError, CheckpointError,
            NonFiniteError, FileNotFoundError, json.JSONDecodeError) as e:
        sys.stderr.write(json.dumps(
            {"error": type(e).__name__, "message": str(e)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
