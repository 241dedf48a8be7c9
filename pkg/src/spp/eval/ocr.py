"""Board OCR: a small CNN with a letter head and a color head over cell crops."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter
from torch import nn

from spp.core import COLORS, LETTERS, N_CELLS, BoardPose, SymbolicState
from spp.datagen.config import DatagenConfig
from spp.datagen.render import render_frame
from spp.datagen.scene import rng_for
from spp.errors import VersionMismatch

LETTER_CLASSES: tuple[str, ...] = LETTERS + ("empty",)
COLOR_CLASSES: tuple[str, ...] = tuple(c.value for c in COLORS) + ("none",)
CROP = 16
OCR_VERSION = 1


class GateFailure(RuntimeError):
    def __init__(self, message: str, confusion: dict[str, np.ndarray]):
        super().__init__(message)
        self.confusion = confusion


class PoseOutOfFrame(ValueError):
    pass


@dataclass(frozen=True)
class CellReading:
    letter: str
    letter_confidence: float
    color: str
    color_confidence: float

    @property
    def empty(self) -> bool:
        return self.letter == "empty"


@dataclass(frozen=True)
class OcrHyperparams:
    n_train: int = 12000
    n_holdout: int = 1000
    epochs: int = 12
    batch: int = 128
    lr: float = 2e-3
    p_empty: float = 0.15
    max_blur: float = 1.2
    noise: float = 0.04
    crop_jitter: float = 0.012
    seed: int = 0
    gate: float = 0.99


class OcrNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(),
            nn.Flatten(), nn.Linear(64 * 4 * 4, 128), nn.ReLU(),
        )
        self.letter = nn.Linear(128, len(LETTER_CLASSES))
        self.color = nn.Linear(128, len(COLOR_CLASSES))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.body(x)
        return self.letter(h), self.color(h)


def crop_cells(frames: torch.Tensor, poses: Sequence[BoardPose], jitter: Optional[torch.Tensor] = None) -> torch.Tensor:
    """(N, 3, H, W) frames -> (N, 4, 3, CROP, CROP) bilinear cell crops."""
    n = frames.shape[0]
    theta = torch.zeros(n, N_CELLS, 2, 3, dtype=frames.dtype)
    for i, pose in enumerate(poses):
        for k in range(N_CELLS):
            x0, y0, x1, y1 = pose.cell_box(k)
            theta[i, k, 0, 0] = x1 - x0
            theta[i, k, 0, 2] = x0 + x1 - 1
            theta[i, k, 1, 1] = y1 - y0
            theta[i, k, 1, 2] = y0 + y1 - 1
    if jitter is not None:
        theta[..., 2] += jitter
    grid = F.affine_grid(theta.view(-1, 2, 3), [n * N_CELLS, 3, CROP, CROP], align_corners=False)
    src = frames[:, None].expand(n, N_CELLS, *frames.shape[1:]).reshape(-1, *frames.shape[1:])
    crops = F.grid_sample(src, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return crops.view(n, N_CELLS, 3, CROP, CROP)


def check_pose(pose: BoardPose) -> None:
    x0, y0, _, _ = pose.cell_box(0)
    _, _, x1, y1 = pose.cell_box(N_CELLS - 1)
    if x0 < 0 or y0 < 0 or x1 > 1 or y1 > 1:
        raise PoseOutOfFrame(f"board box ({x0:.3f}, {y0:.3f}, {x1:.3f}, {y1:.3f}) leaves the frame")


def cell_corpus(n_crops: int, seed: int, config: DatagenConfig, hp: OcrHyperparams,
                clean: bool = False) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Rendered cell crops with letter/color labels, optionally augmented."""
    rng = rng_for(seed, "ocr-corpus", "clean" if clean else "aug")
    n_frames = -(-n_crops // N_CELLS)
    frames, poses, letters, colors = [], [], [], []
    for _ in range(n_frames):
        j = config.board_jitter
        pose = BoardPose(config.board_x + float(rng.uniform(-j, j)), config.board_y + float(rng.uniform(-j, j)),
                         config.board_width, config.board_height)
        cells = []
        used: set = set()
        for _ in range(N_CELLS):
            if rng.random() < hp.p_empty:
                cells.append(None)
                letters.append(len(LETTERS))
                colors.append(len(COLORS))
                continue
            while True:
                obj = (COLORS[int(rng.integers(len(COLORS)))], LETTERS[int(rng.integers(len(LETTERS)))])
                if obj not in used:
                    break
            used.add(obj)
            cells.append(obj)
            letters.append(LETTERS.index(obj[1]))
            colors.append(COLORS.index(obj[0]))
        frame = render_frame(SymbolicState(board_pose=pose, cells=tuple(cells)), config)
        if not clean:
            sigma = float(rng.uniform(0, hp.max_blur))
            if sigma > 0.1:
                frame = gaussian_filter(frame, sigma=(sigma, sigma, 0))
            frame = np.clip(frame + rng.normal(0, hp.noise * rng.random(), frame.shape), 0, 1)
        frames.append(frame.astype(np.float32))
        poses.append(pose)
    x = torch.from_numpy(np.stack(frames)).permute(0, 3, 1, 2)
    jitter = None
    if not clean:
        jitter = torch.from_numpy(rng.uniform(-hp.crop_jitter, hp.crop_jitter, (len(poses), N_CELLS, 2))).float() * 2
    crops = crop_cells(x, poses, jitter).reshape(-1, 3, CROP, CROP)
    return crops[:n_crops], torch.tensor(letters[:n_crops]), torch.tensor(colors[:n_crops])


class OcrModel:
    def __init__(self, net: Optional[OcrNet] = None, meta: Optional[dict] = None):
        self.net = net or OcrNet()
        self.net.eval()
        self.meta = meta or {}
        self.letter_classes = LETTER_CLASSES
        self.color_classes = COLOR_CLASSES

    @torch.no_grad()
    def classify(self, crops: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (letter_idx, letter_conf, color_idx, color_conf) for (M, 3, CROP, CROP)."""
        out = []
        for i in range(0, crops.shape[0], 512):
            lo, co = self.net(crops[i: i + 512].float())
            out.append((lo.softmax(-1), co.softmax(-1)))
        lp = torch.cat([o[0] for o in out])
        cp = torch.cat([o[1] for o in out])
        lc, li = lp.max(-1)
        cc, ci = cp.max(-1)
        return li, lc, ci, cc

    def read_boards(self, frames: np.ndarray | torch.Tensor, poses: Sequence[BoardPose]) -> list[list[CellReading]]:
        """Readings for a batch of (N, H, W, 3) frames."""
        for p in poses:
            check_pose(p)
        x = torch.as_tensor(np.asarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
        crops = crop_cells(x, poses).reshape(-1, 3, CROP, CROP)
        li, lc, ci, cc = self.classify(crops)
        readings = [
            CellReading(LETTER_CLASSES[int(a)], float(b), COLOR_CLASSES[int(c)], float(d))
            for a, b, c, d in zip(li, lc, ci, cc)
        ]
        return [readings[i: i + N_CELLS] for i in range(0, len(readings), N_CELLS)]

    def save(self, path: Path | str) -> None:
        torch.save({"format_version": OCR_VERSION, "letter_classes": list(LETTER_CLASSES),
                    "color_classes": list(COLOR_CLASSES), "params": self.net.state_dict(),
                    "meta": self.meta}, path)

    @classmethod
    def load(cls, path: Path | str) -> "OcrModel":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("format_version") != OCR_VERSION:
            raise VersionMismatch(f"{path}: unsupported OCR checkpoint")
        if tuple(blob["letter_classes"]) != LETTER_CLASSES or tuple(blob["color_classes"]) != COLOR_CLASSES:
            raise VersionMismatch(f"{path}: class order differs from this build")
        net = OcrNet()
        net.load_state_dict(blob["params"])
        return cls(net, blob["meta"])


def read_board(frame: np.ndarray, board_pose: BoardPose, ocr: OcrModel) -> list[CellReading]:
    return ocr.read_boards(np.asarray(frame)[None], [board_pose])[0]


def _confusion(pred: torch.Tensor, truth: torch.Tensor, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (truth.numpy(), pred.numpy()), 1)
    return m


def train_ocr(config: DatagenConfig = DatagenConfig(), hp: OcrHyperparams = OcrHyperparams(),
              log=None) -> tuple[OcrModel, dict]:
    """Train on augmented renders; gate on clean held-out crops."""
    torch.manual_seed(hp.seed)
    x, yl, yc = cell_corpus(hp.n_train, hp.seed, config, hp)
    net = OcrNet()
    opt = torch.optim.Adam(net.parameters(), lr=hp.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, hp.epochs)
    gen = torch.Generator().manual_seed(hp.seed)
    for epoch in range(hp.epochs):
        net.train()
        perm = torch.randperm(x.shape[0], generator=gen)
        total = 0.0
        for i in range(0, x.shape[0], hp.batch):
            idx = perm[i: i + hp.batch]
            lo, co = net(x[idx])
            loss = F.cross_entropy(lo, yl[idx]) + F.cross_entropy(co, yc[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        sched.step()
        if log:
            log({"epoch": epoch, "loss": total / x.shape[0]})
    model = OcrModel(net, {"hyperparams": asdict(hp), "config": config.to_json()})
    hx, hl, hc = cell_corpus(hp.n_holdout, hp.seed + 1, config, hp, clean=True)
    li, _, ci, _ = model.classify(hx)
    stats = {
        "letter_accuracy": float((li == hl).float().mean()),
        "color_accuracy": float((ci == hc).float().mean()),
        "n_holdout": int(hx.shape[0]),
    }
    model.meta["holdout"] = stats
    if stats["letter_accuracy"] < hp.gate or stats["color_accuracy"] < hp.gate:
        raise GateFailure(
            f"OCR below gate {hp.gate}: {stats}",
            {"letter": _confusion(li, hl, len(LETTER_CLASSES)), "color": _confusion(ci, hc, len(COLOR_CLASSES))},
        )
    return model, stats
