"""``spp`` command line: dataset generation, training, evaluation and demos.

Stages talk to each other only through files under the run's output root::

    dataset/            manifest.json + videos/
    planner/planner.pt  planner/metrics.json
    ocr/ocr.pt
    predictors/<arch>/checkpoint.pt (+ embeddings for continuous conditioning)
    eval/<split>/report.json + plots
    demo/<WORD>.png
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import torch

from spp.config import RunConfig, dump_config, load_config
from spp.core import ExecutionError, high_level_text, instruction_to_text, replay, validate_word
from spp.datagen.dataset import (
    Video,
    build_splits,
    generate_videos,
    load_word_list,
    manifest_checksum,
    read_dataset,
    write_dataset,
)
from spp.datagen.render import render_frame
from spp.datagen.scene import Demonstration, generate_scene
from spp.errors import ArtifactMissing, ConfigError, VersionMismatch
from spp.eval.ablation import ARCHITECTURES, arch_name, rollout_video, run_ablation_suite, write_film_strips
from spp.eval.ocr import OcrModel, train_ocr
from spp.lang import build_dictionary, train_local_embeddings
from spp.model import (
    Conditioner,
    frames_tensor,
    load_checkpoint,
    save_checkpoint,
    save_sibling_table,
    train_predictor,
)
from spp.planner import (
    DecodeError,
    load_planner,
    oracle_plan,
    plan,
    planner_metrics,
    save_planner,
    train_planner,
)

EXIT_ERROR = 2
ARCH_SPECS = {
    "per_step+continuous": ("per_step", "continuous"),
    "per_step+onehot": ("per_step", "onehot"),
    "high_level_only": ("high_level_only", "continuous"),
    "none": ("none", "continuous"),
}


def log(event: str, **fields) -> None:
    fields = {"event": event, "time": round(time.time(), 3), **fields}
    print(json.dumps(fields, sort_keys=True, default=str), file=sys.stderr, flush=True)


# --------------------------------------------------------------------------- paths


def dataset_dir(cfg: RunConfig) -> Path:
    return cfg.root / "dataset"


def planner_path(cfg: RunConfig) -> Path:
    return cfg.root / "planner" / "planner.pt"


def ocr_path(cfg: RunConfig) -> Path:
    return cfg.root / "ocr" / "ocr.pt"


def predictor_dir(cfg: RunConfig, arch: str) -> Path:
    return cfg.root / "predictors" / arch


def require(path: Path) -> Path:
    if not path.exists():
        raise ArtifactMissing(f"required artifact {path} does not exist")
    return path


def _open_dataset(cfg: RunConfig, check_replay: bool = False):
    root = require(dataset_dir(cfg))
    require(root / "manifest.json")
    return read_dataset(root, replay_fraction=None if check_replay else 0.0, seed=cfg.seed)


def _run_echo(cfg: RunConfig, **extra) -> dict:
    return {"config": cfg.to_json(), **extra}


def _check_dataset_echo(blob_echo: dict, cfg: RunConfig, what: str) -> None:
    expected = blob_echo.get("dataset_checksum")
    if expected and expected != manifest_checksum(dataset_dir(cfg)):
        raise VersionMismatch(f"{what} was trained on a different dataset than {dataset_dir(cfg)}")


# --------------------------------------------------------------------------- subcommands


def cmd_datagen(cfg: RunConfig, args) -> dict:
    words = load_word_list(cfg.word_list)
    manifest = build_splits(words, cfg.split, cfg.seed, cfg.datagen)
    log("split", name=manifest.name, **manifest.counts)
    videos = generate_videos(manifest, cfg.seed, cfg.datagen, workers=cfg.workers)
    path = write_dataset(videos, manifest, dataset_dir(cfg), cfg.datagen, extra=_run_echo(cfg))
    return {"manifest": str(path), "checksum": manifest_checksum(dataset_dir(cfg)), "videos": len(videos)}


def cmd_train_planner(cfg: RunConfig, args) -> dict:
    ds = _open_dataset(cfg)
    pairs = [(v.demo.high_level, v.demo.low_level) for v in ds.split("train")]
    result = train_planner(pairs, cfg.planner, log=lambda row: log("planner_epoch", **row))
    out = planner_path(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    echo = _run_echo(cfg, dataset_checksum=manifest_checksum(ds.root), trace=result.trace)
    save_planner(result.model, out, echo)
    metrics = planner_metrics(result.model, list(ds.manifest.test_words), seed=cfg.seed)
    (out.parent / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return {"checkpoint": str(out), **{k: metrics[k] for k in ("action_rate", "task_rate")}}


def cmd_train_ocr(cfg: RunConfig, args) -> dict:
    model, stats = train_ocr(cfg.datagen, cfg.ocr, log=lambda row: log("ocr_epoch", **row))
    out = ocr_path(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.meta["run"] = _run_echo(cfg)
    model.save(out)
    return {"checkpoint": str(out), **stats}


def build_conditioner(mode: str, kind: str, train_demos: Sequence[Demonstration], cfg: RunConfig):
    corpus = [t for d in train_demos for t in d.low_level] + [d.high_level for d in train_demos]
    table = encoder = None
    if kind == "continuous" and mode != "none":
        table, encoder = train_local_embeddings(corpus, cfg.embedding_dims, cfg.embedding)
    dictionary = build_dictionary(corpus) if kind == "onehot" else None
    return Conditioner(mode, kind, dictionary, table), encoder


def cmd_train_predictor(cfg: RunConfig, args) -> dict:
    mode, kind = args.mode, args.embedding
    arch = arch_name(mode, kind)
    ds = _open_dataset(cfg)
    demos = [v.demo for v in ds.split("train")]
    cond, encoder = build_conditioner(mode, kind, demos, cfg)
    frames = torch.stack([frames_tensor(d.frames) for d in demos])
    lang = cond.batch([(d.high_level, d.low_level) for d in demos])
    out = predictor_dir(cfg, arch)
    out.mkdir(parents=True, exist_ok=True)
    if cond.table is not None:
        save_sibling_table(out, cond.table, encoder)
    echo = _run_echo(cfg, dataset_checksum=manifest_checksum(ds.root), architecture=arch)
    result = train_predictor(frames, lang, cond, cfg.predictor, cfg.train, out_dir=out, echo=echo,
                             log=lambda row: log("predictor_epoch", architecture=arch, **row))
    save_checkpoint(out / "checkpoint.pt", result.model, cond, cfg.train, None, cfg.train.epochs, echo)
    return {"checkpoint": str(out / "checkpoint.pt"), "final": result.trace[-1] if result.trace else None}


def _load_predictors(cfg: RunConfig, archs: Sequence[str]) -> dict:
    out = {}
    for arch in archs:
        model, cond, blob = load_checkpoint(require(predictor_dir(cfg, arch) / "checkpoint.pt"))
        _check_dataset_echo(blob.get("echo", {}), cfg, f"predictor {arch}")
        out[arch] = (model, cond)
    return out


def cmd_eval(cfg: RunConfig, args) -> dict:
    ocr = OcrModel.load(require(ocr_path(cfg)))
    ds = _open_dataset(cfg)
    archs = args.architectures or list(ARCHITECTURES)
    predictors = _load_predictors(cfg, archs)
    planner = None
    if cfg.eval.plan_source == "learned":
        planner = load_planner(require(planner_path(cfg)))
    videos = ds.split(args.split)
    split = ds.manifest.to_json()
    split = {"name": split["name"], "eval_split": args.split, "unseen_letters": split["unseen_letters"],
             "dataset_checksum": manifest_checksum(ds.root)}
    out = cfg.root / "eval" / args.split
    report = run_ablation_suite(predictors, videos, ocr, cfg.eval, planner=planner, split=split, out_dir=out,
                                log=lambda row: log(**row))
    summary = {a: r["final_frame"]["letter"] for a, r in report["architectures"].items()}
    return {"report": str(out / "report.json"), "final_frame_letter": summary}


def cmd_demo(cfg: RunConfig, args) -> dict:
    word = validate_word(args.word)
    archs = args.architectures or [a for a in ARCHITECTURES if (predictor_dir(cfg, a) / "checkpoint.pt").exists()]
    if not archs:
        raise ArtifactMissing(f"no predictor checkpoints under {cfg.root / 'predictors'}")
    predictors = _load_predictors(cfg, archs)
    scene = generate_scene(word, cfg.seed, cfg.datagen)
    if cfg.eval.plan_source == "learned":
        steps = plan(load_planner(require(planner_path(cfg))), high_level_text(word), cfg.seed)
    else:
        steps = oracle_plan(word, scene, cfg.seed)
    labels = [instruction_to_text(i) for i in steps]
    try:
        states = replay(scene.state0, steps)
    except ExecutionError:  # a language-only plan may name tiles the scene lacks
        states = [scene.state0] * (len(steps) + 1)
    demo = Demonstration(tuple(render_frame(s, cfg.datagen) for s in states), high_level_text(word),
                         tuple(labels), scene, tuple(states))
    video = Video(f"demo_{word}", "demo", demo)
    strips = {a: [rollout_video(m, c, video, labels, cfg.seed)] for a, (m, c) in predictors.items()}
    out = cfg.root / "demo" / f"{word}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_film_strips([video], strips, out)
    return {"image": str(out), "plan": labels, "rows": ["ground truth", *sorted(strips)]}


def cmd_pipeline(cfg: RunConfig, args) -> dict:
    results = {"datagen": cmd_datagen(cfg, args), "train-ocr": cmd_train_ocr(cfg, args),
               "train-planner": cmd_train_planner(cfg, args)}
    for arch in ARCHITECTURES:
        mode, kind = ARCH_SPECS[arch]
        sub = argparse.Namespace(mode=mode, embedding=kind)
        results[f"train-predictor {arch}"] = cmd_train_predictor(cfg, sub)
    for split in ("train", "test"):
        results[f"eval {split}"] = cmd_eval(cfg, argparse.Namespace(split=split, architectures=None))
    return results


COMMANDS = {
    "datagen": cmd_datagen,
    "train-planner": cmd_train_planner,
    "train-ocr": cmd_train_ocr,
    "train-predictor": cmd_train_predictor,
    "eval": cmd_eval,
    "demo": cmd_demo,
    "pipeline": cmd_pipeline,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spp", description="Language-guided keyframe prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output root (overrides config and environment)")
        p.add_argument("--dry-run", action="store_true", help="validate the configuration and exit")
        if name == "train-predictor":
            p.add_argument("--mode", choices=("per_step", "high_level_only", "none"), default="per_step")
            p.add_argument("--embedding", choices=("continuous", "onehot"), default="continuous")
        if name in ("eval", "demo"):
            p.add_argument("--architectures", nargs="*", choices=ARCHITECTURES, default=None)
        if name == "eval":
            p.add_argument("--split", choices=("train", "test"), default="test")
        if name == "demo":
            p.add_argument("--word", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "output_root": args.out})
        if args.dry_run:
            print(dump_config(cfg), end="")
            return 0
        torch.set_num_threads(max(1, cfg.workers))
        log("start", command=args.command, output_root=cfg.output_root, seed=cfg.seed)
        result = COMMANDS[args.command](cfg, args)
        log("done", command=args.command, **{"result": result})
        print(json.dumps(result, sort_keys=True, default=str))
        return 0
    except (ConfigError, ArtifactMissing, VersionMismatch, DecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
