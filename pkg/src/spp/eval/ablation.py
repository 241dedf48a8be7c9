"""Ablation runs: roll out every predictor configuration on a set of videos and report."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from spp.core import N_CELLS, parse_instruction
from spp.datagen.dataset import Video
from spp.eval.accuracy import KeyframeAccuracy, keyframe_accuracy, letters_correct
from spp.eval.metrics import finite_or, frame_metrics
from spp.eval.ocr import OcrModel
from spp.model import Conditioner, KeyframePredictor, frames_tensor, tensor_frames
from spp.planner import DecodeConfig, DecodeError, TokenModel, plan_texts

REPORT_VERSION = 1
ARCHITECTURES = ("per_step+continuous", "per_step+onehot", "high_level_only", "none")


def arch_name(mode: str, kind: str) -> str:
    return f"per_step+{kind}" if mode == "per_step" else mode


@dataclass(frozen=True)
class AblationConfig:
    seed: int = 0
    plan_source: str = "oracle"  # "oracle" uses the scene-aware labels, "learned" queries the planner
    psnr_cap: float = 100.0
    decimals: int = 6
    n_strips: int = 3


@dataclass
class _ArchAccumulator:
    pixel: dict = field(default_factory=lambda: {"mse": [], "psnr": [], "ssim": []})
    final_letters: list = field(default_factory=list)
    unseen: list = field(default_factory=list)
    keyframes: KeyframeAccuracy = field(default_factory=KeyframeAccuracy)
    failures: list = field(default_factory=list)
    n_videos: int = 0


def video_generator(seed: int, video_id: str) -> torch.Generator:
    digest = hashlib.sha256(f"{seed}:{video_id}".encode()).digest()
    return torch.Generator().manual_seed(int.from_bytes(digest[:8], "little") & (2 ** 63 - 1))


def _labels(video: Video, mode: str, planner: Optional[TokenModel], cfg: AblationConfig) -> list[str]:
    demo = video.demo
    if mode != "per_step" or cfg.plan_source == "oracle":
        return list(demo.low_level)
    if planner is None:
        raise ValueError("plan_source 'learned' needs a planner")
    texts = plan_texts(planner, demo.high_level, cfg.seed, DecodeConfig())
    if len(texts) != N_CELLS:
        raise DecodeError(f"planner produced {len(texts)} instructions for {demo.word}", texts)
    return texts


def rollout_video(model: KeyframePredictor, cond: Conditioner, video: Video, labels: Sequence[str],
                  seed: int) -> list[np.ndarray]:
    demo = video.demo
    lang = cond.encode(demo.high_level, labels)
    o0 = frames_tensor(demo.frames[:1])
    pred = model.rollout(o0, None if lang is None else lang[None], len(labels), video_generator(seed, video.id))
    return list(tensor_frames(pred[0]))


def _score(acc: _ArchAccumulator, video: Video, mode: str, labels: Sequence[str], frames: list[np.ndarray],
           ocr: OcrModel, unseen: set[str], cfg: AblationConfig) -> None:
    demo = video.demo
    pose = demo.scene.state0.board_pose
    per_frame = [frame_metrics(p, t, ("mse", "psnr", "ssim")) for p, t in zip(frames, demo.frames[1:])]
    for k in acc.pixel:
        vals = [finite_or(m[k], cfg.psnr_cap) if k == "psnr" else m[k] for m in per_frame]
        acc.pixel[k].append(float(np.mean(vals)))
    reads = ocr.read_boards(np.stack(frames[-1:]), [pose])[0]
    ok = letters_correct(reads, demo.word)
    acc.final_letters.extend(ok)
    acc.unseen.extend(o for o, ch in zip(ok, demo.word) if ch in unseen)
    if mode == "per_step":
        plan = tuple(parse_instruction(t) for t in labels)
        acc.keyframes = acc.keyframes.add(keyframe_accuracy(frames, plan, demo.scene, ocr, pose))
    acc.n_videos += 1


def _round(x, decimals: int):
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return None
        return round(x, decimals)
    if isinstance(x, dict):
        return {k: _round(v, decimals) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v, decimals) for v in x]
    return x


def _summary(acc: _ArchAccumulator, mode: str) -> dict:
    mean = lambda xs: float(np.mean(xs)) if len(xs) else None
    out = {
        "n_videos": acc.n_videos,
        "failures": acc.failures,
        "pixel": {k: mean(v) for k, v in acc.pixel.items()},
        "final_frame": {"letter": 100.0 * mean(acc.final_letters) if acc.final_letters else None,
                        "n_cells": len(acc.final_letters)},
    }
    if acc.unseen:
        out["final_frame"]["unseen_letter"] = 100.0 * mean(acc.unseen)
        out["final_frame"]["n_unseen_cells"] = len(acc.unseen)
    if mode == "per_step":
        curves = acc.keyframes.to_json()
        out["keyframes"] = curves
        last = curves[-1] if curves else None
        out["ocr"] = {k: (last[k] if last else None) for k in ("color", "letter", "letter_and_color")}
    else:
        # no plan, so no prescribed colors: only final-frame letters are scored
        out["ocr"] = {"color": None, "letter": out["final_frame"]["letter"], "letter_and_color": None}
    return out


def run_ablation_suite(predictors: dict[str, tuple[KeyframePredictor, Conditioner]], videos: Sequence[Video],
                       ocr: OcrModel, config: AblationConfig = AblationConfig(),
                       planner: Optional[TokenModel] = None, split: Optional[dict] = None,
                       out_dir: Optional[Path | str] = None, log=None) -> dict:
    """Evaluate each predictor on ``videos``; one failing video never aborts the run.

    ``predictors`` maps an architecture name (see :data:`ARCHITECTURES`) to a
    model and its conditioner. With ``out_dir``, ``report.json`` plus
    keyframe-curve and film-strip images are written there.
    """
    if config.plan_source not in ("oracle", "learned"):
        raise ValueError(f"unknown plan source {config.plan_source!r}")
    unseen = set((split or {}).get("unseen_letters", ()))
    accs: dict[str, _ArchAccumulator] = {}
    strips: dict[str, list[list[np.ndarray]]] = {}
    for name in sorted(predictors):
        model, cond = predictors[name]
        model.eval()
        acc = accs[name] = _ArchAccumulator()
        strips[name] = []
        for video in videos:
            try:
                labels = _labels(video, model.mode, planner, config)
                frames = rollout_video(model, cond, video, labels, config.seed)
                _score(acc, video, model.mode, labels, frames, ocr, unseen, config)
                if len(strips[name]) < config.n_strips:
                    strips[name].append(frames)
            except Exception as exc:  # isolate per-video failures
                acc.failures.append({"video": video.id, "error": f"{type(exc).__name__}: {exc}"})
                if log:
                    log({"event": "video_failed", "architecture": name, "video": video.id, "error": str(exc)})
    report = {
        "schema_version": REPORT_VERSION,
        "config": asdict(config),
        "split": split or {},
        "n_videos": len(videos),
        "architectures": {name: _summary(accs[name], predictors[name][0].mode) for name in sorted(accs)},
    }
    if planner is not None and config.plan_source == "learned":
        from spp.planner import planner_metrics

        words = sorted({v.demo.word for v in videos})
        report["planner"] = planner_metrics(planner, words, seed=config.seed)
    report = _round(report, config.decimals)
    if out_dir is not None:
        write_report(report, out_dir)
        plot_keyframe_curves(report, Path(out_dir) / "keyframe_accuracy.png")
        write_film_strips(videos[: config.n_strips], strips, Path(out_dir) / "film_strips.png")
    return report


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_report(report: dict, out_dir: Path | str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(report_bytes(report))
    return out / "report.json"


def plot_keyframe_curves(report: dict, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, key in zip(axes, ("color", "letter", "letter_and_color")):
        for name, row in sorted(report["architectures"].items()):
            curve = row.get("keyframes")
            if curve:
                ax.plot([c["index"] + 1 for c in curve], [c[key] for c in curve], marker="o", label=name)
        ax.set_title(key.replace("_", " & "))
        ax.set_xlabel("keyframe")
        ax.set_ylim(0, 100)
    axes[0].set_ylabel("%")
    axes[-1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_film_strips(videos: Sequence[Video], strips: dict[str, list[list[np.ndarray]]], path: Path) -> None:
    """One block per video: ground truth on top, then one row per architecture."""
    from PIL import Image

    rows = []
    for i, video in enumerate(videos):
        gt = list(video.demo.frames)
        rows.append(np.concatenate(gt, 1))
        for name in sorted(strips):
            if i < len(strips[name]):
                rows.append(np.concatenate([gt[0]] + strips[name][i], 1))
    if not rows:
        return
    width = max(r.shape[1] for r in rows)
    rows = [np.pad(r, ((0, 0), (0, width - r.shape[1]), (0, 0))) for r in rows]
    img = (np.clip(np.concatenate(rows, 0), 0, 1) * 255).round().astype(np.uint8)
    Image.fromarray(img).save(path)
