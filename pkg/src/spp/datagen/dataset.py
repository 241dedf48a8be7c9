"""Train/test splits and the on-disk dataset format.

Layout::

    root/manifest.json
    root/videos/{id}/frame_{0..4}.png
    root/videos/{id}/labels.json
    root/videos/{id}/scene.json
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from spp.core import LETTERS, state_from_json, state_to_json, validate_word
from spp.datagen.config import DatagenConfig
from spp.datagen.render import to_uint8
from spp.datagen.scene import Demonstration, InvalidWord, Scene, check_demonstration, generate_demonstration, rng_for

FORMAT_VERSION = 1
DESK_WORDS = Path(__file__).resolve().parent.parent / "data" / "desk_words.txt"


class InfeasibleSplit(ValueError):
    pass


class CorruptDataset(RuntimeError):
    pass


def load_word_list(path: Optional[Path | str] = None) -> list[str]:
    text = Path(path or DESK_WORDS).read_text(encoding="utf-8")
    words = []
    for line in text.splitlines():
        if line.strip():
            try:
                words.append(validate_word(line))
            except ValueError as exc:
                raise InvalidWord(str(exc)) from None
    return words


@dataclass(frozen=True)
class SplitManifest:
    name: str
    train_words: tuple[str, ...]
    test_words: tuple[str, ...]
    unseen_letters: tuple[str, ...] = ()
    counts: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "train_words": list(self.train_words),
            "test_words": list(self.test_words),
            "unseen_letters": list(self.unseen_letters),
            "counts": dict(self.counts),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SplitManifest":
        return cls(
            name=data["name"],
            train_words=tuple(data["train_words"]),
            test_words=tuple(data["test_words"]),
            unseen_letters=tuple(data["unseen_letters"]),
            counts=dict(data.get("counts", {})),
        )

    def check(self) -> None:
        if set(self.train_words) & set(self.test_words):
            raise AssertionError("train and test words overlap")
        if self.name == "seen_unseen":
            unseen = set(self.unseen_letters)
            for w in self.train_words:
                if set(w) & unseen:
                    raise AssertionError(f"train word {w} uses an unseen letter")
            for w in self.test_words:
                if not set(w) & unseen:
                    raise AssertionError(f"test word {w} uses only seen letters")


def _seen_unseen_partition(words: Sequence[str], unseen: set[str]) -> tuple[list[str], list[str]]:
    train = [w for w in words if not set(w) & unseen]
    test = [w for w in words if set(w) & unseen]
    return train, test


def build_splits(word_list: Sequence[str], mode: str, seed: int,
                 config: DatagenConfig = DatagenConfig()) -> SplitManifest:
    words = sorted({validate_word(w) for w in word_list})
    if mode == "random":
        rng = rng_for(seed, "split", "random")
        order = [words[i] for i in rng.permutation(len(words))]
        n_train = int(round(config.train_ratio * len(words)))
        train, test = sorted(order[:n_train]), sorted(order[n_train:])
        if not train or not test:
            raise InfeasibleSplit(f"ratio {config.train_ratio} leaves an empty side for {len(words)} words")
        return SplitManifest("random", tuple(train), tuple(test), (),
                             {"train_words": len(train), "test_words": len(test)})
    if mode != "seen_unseen":
        raise ValueError(f"unknown split mode {mode!r}")

    def feasible(unseen: set[str]) -> Optional[tuple[list[str], list[str]]]:
        train, test = _seen_unseen_partition(words, unseen)
        if len(train) < config.min_train_words or len(test) < config.min_test_words:
            return None
        return train, test

    if config.unseen_letters:
        unseen = {c.upper() for c in config.unseen_letters}
        parts = feasible(unseen)
        if parts is None:
            train, test = _seen_unseen_partition(words, unseen)
            raise InfeasibleSplit(
                f"unseen letters {sorted(unseen)} leave {len(train)} train / {len(test)} test words"
            )
    else:
        rng = rng_for(seed, "split", "unseen")
        combos = list(itertools.combinations(LETTERS, 4))
        for i in rng.permutation(len(combos))[:5000]:
            unseen = set(combos[int(i)])
            parts = feasible(unseen)
            if parts is not None:
                break
        else:
            raise InfeasibleSplit("no choice of 4 unseen letters satisfies the minimum word counts")
    train, test = parts
    return SplitManifest("seen_unseen", tuple(train), tuple(test), tuple(sorted(unseen)),
                         {"train_words": len(train), "test_words": len(test)})


# --------------------------------------------------------------------------- generation


@dataclass(frozen=True)
class Video:
    id: str
    split: str
    demo: Demonstration


def video_seed(seed: int, word: str, k: int) -> int:
    digest = hashlib.sha256(f"{seed}:{word}:{k}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _make(args: tuple) -> Video:
    vid, split, word, vseed, config = args
    return Video(vid, split, generate_demonstration(word, vseed, config))


def generate_videos(manifest: SplitManifest, seed: int, config: DatagenConfig = DatagenConfig(),
                    workers: int = 1) -> list[Video]:
    """All demonstrations for a split; a pure function of its arguments."""
    jobs = []
    seen_alphabet = "".join(c for c in config.alphabet if c not in set(manifest.unseen_letters))
    train_cfg = dataclasses.replace(config, alphabet=seen_alphabet) if manifest.unseen_letters else config
    for split, words, per_word, cfg in (
        ("train", manifest.train_words, config.videos_per_train_word, train_cfg),
        ("test", manifest.test_words, config.videos_per_test_word, config),
    ):
        for word in words:
            for k in range(per_word):
                jobs.append((f"{split}_{word}_{k}", split, word, video_seed(seed, word, k), cfg))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_make, jobs, chunksize=8))
    return [_make(j) for j in jobs]


# --------------------------------------------------------------------------- io


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _video_files(vdir: Path, n_frames: int) -> list[Path]:
    return [vdir / f"frame_{t}.png" for t in range(n_frames)] + [vdir / "labels.json", vdir / "scene.json"]


def _checksum(paths: Iterable[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_dataset(videos: Sequence[Video], manifest: SplitManifest, root: Path | str,
                  config: DatagenConfig = DatagenConfig(), extra: Optional[dict] = None) -> Path:
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    entries = []
    for v in videos:
        d = v.demo
        vdir = root / "videos" / v.id
        vdir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(d.frames):
            Image.fromarray(to_uint8(frame), "RGB").save(vdir / f"frame_{t}.png", optimize=False)
        (vdir / "labels.json").write_text(_dump({
            "high_level": d.high_level,
            "low_level": list(d.low_level),
            "word": d.word,
            "seed": d.scene.seed,
        }))
        (vdir / "scene.json").write_text(_dump({
            "board_pose": state_to_json(d.scene.state0)["board_pose"],
            "tiles": state_to_json(d.scene.state0)["staging"],
            "states": [state_to_json(s) for s in d.states],
        }))
        entries.append({
            "id": v.id,
            "split": v.split,
            "word": d.word,
            "seed": d.scene.seed,
            "n_frames": len(d.frames),
            "checksum": _checksum(_video_files(vdir, len(d.frames))),
        })
    counts = dict(manifest.counts)
    counts["train_videos"] = sum(e["split"] == "train" for e in entries)
    counts["test_videos"] = sum(e["split"] == "test" for e in entries)
    doc = {
        "format_version": FORMAT_VERSION,
        "split": dataclasses.replace(manifest, counts=counts).to_json(),
        "config": config.to_json(),
        "videos": entries,
    }
    if extra:
        doc["run"] = extra
    (root / "manifest.json").write_text(_dump(doc))
    return root / "manifest.json"


def manifest_checksum(root: Path | str) -> str:
    return hashlib.sha256((Path(root) / "manifest.json").read_bytes()).hexdigest()


@dataclass
class Dataset:
    root: Path
    manifest: SplitManifest
    config: DatagenConfig
    videos: list[Video]

    def split(self, name: str) -> list[Video]:
        return [v for v in self.videos if v.split == name]


def _load_frame(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def read_dataset(root: Path | str, replay_fraction: Optional[float] = None, seed: int = 0) -> Dataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise CorruptDataset(f"missing manifest {mpath}")
    doc = json.loads(mpath.read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise CorruptDataset(f"unsupported dataset format {doc.get('format_version')!r}")
    config = DatagenConfig.from_json(doc["config"])
    manifest = SplitManifest.from_json(doc["split"])
    frac = config.replay_check_fraction if replay_fraction is None else replay_fraction
    rng = rng_for(seed, "replay-sample")
    videos = []
    for entry in doc["videos"]:
        vid = entry["id"]
        vdir = root / "videos" / vid
        files = _video_files(vdir, entry["n_frames"])
        missing = [p.name for p in files if not p.exists()]
        if missing:
            raise CorruptDataset(f"video {vid}: missing {', '.join(missing)}")
        if _checksum(files) != entry["checksum"]:
            raise CorruptDataset(f"video {vid}: checksum mismatch")
        labels = json.loads((vdir / "labels.json").read_text())
        scene_doc = json.loads((vdir / "scene.json").read_text())
        states = tuple(state_from_json(s) for s in scene_doc["states"])
        demo = Demonstration(
            frames=tuple(_load_frame(p) for p in files[: entry["n_frames"]]),
            high_level=labels["high_level"],
            low_level=tuple(labels["low_level"]),
            scene=Scene(state0=states[0], word=labels["word"], seed=int(labels["seed"])),
            states=states,
        )
        if rng.random() < frac:
            try:
                check_demonstration(demo, config)
            except Exception as exc:  # any replay failure means the files lie
                raise CorruptDataset(f"video {vid}: replay check failed: {exc}") from None
        videos.append(Video(vid, entry["split"], demo))
    return Dataset(root, manifest, config, videos)
