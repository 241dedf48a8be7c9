"""OCR-based semantic accuracy of generated keyframes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from spp.core import (
    N_CELLS,
    BoardPose,
    Cells,
    ExecutionError,
    Plan,
    SymbolicState,
    Tile,
    apply_instruction,
)
from spp.datagen.scene import Scene
from spp.eval.ocr import CellReading, OcrModel


def expected_boards(plan: Plan, state0: SymbolicState) -> list[Cells]:
    """Board contents expected after each instruction of ``plan``.

    Tiles the plan names but the scene lacks (a language-only planner may
    pick other colors) are granted; an instruction that cannot be executed
    leaves the board unchanged.
    """
    have = set(state0.objects())
    extra: dict = {}
    for instr in plan:
        if instr.object not in have:
            extra.setdefault(instr.object, Tile(letter=instr.object[1], color=instr.object[0], position=(0.0, 0.0)))
    state = SymbolicState(board_pose=state0.board_pose, cells=state0.cells,
                          staging=state0.staging + tuple(extra.values()))
    boards = []
    for instr in plan:
        try:
            state = apply_instruction(state, instr)
        except ExecutionError:
            pass
        boards.append(state.cells)
    return boards


@dataclass
class KeyframeAccuracy:
    """Per keyframe index: counts over expected-occupied cells."""

    n: list[int] = field(default_factory=list)
    color_ok: list[int] = field(default_factory=list)
    letter_ok: list[int] = field(default_factory=list)
    both_ok: list[int] = field(default_factory=list)

    @staticmethod
    def _pct(num: Sequence[int], den: Sequence[int]) -> list[float]:
        return [100.0 * a / b if b else 0.0 for a, b in zip(num, den)]

    @property
    def color(self) -> list[float]:
        return self._pct(self.color_ok, self.n)

    @property
    def letter(self) -> list[float]:
        return self._pct(self.letter_ok, self.n)

    @property
    def letter_and_color(self) -> list[float]:
        return self._pct(self.both_ok, self.n)

    def add(self, other: "KeyframeAccuracy") -> "KeyframeAccuracy":
        k = max(len(self.n), len(other.n))
        pad = lambda xs: list(xs) + [0] * (k - len(xs))
        return KeyframeAccuracy(
            [a + b for a, b in zip(pad(self.n), pad(other.n))],
            [a + b for a, b in zip(pad(self.color_ok), pad(other.color_ok))],
            [a + b for a, b in zip(pad(self.letter_ok), pad(other.letter_ok))],
            [a + b for a, b in zip(pad(self.both_ok), pad(other.both_ok))],
        )

    @classmethod
    def merge(cls, items: Sequence["KeyframeAccuracy"]) -> "KeyframeAccuracy":
        out = cls()
        for it in items:
            out = out.add(it)
        return out

    def to_json(self) -> list[dict]:
        return [
            {"index": t, "n": self.n[t], "color": c, "letter": l, "letter_and_color": lc}
            for t, (c, l, lc) in enumerate(zip(self.color, self.letter, self.letter_and_color))
        ]


def score_board(readings: Sequence[CellReading], expected: Cells) -> tuple[int, int, int, int]:
    """(n, color_ok, letter_ok, both_ok) over the expected-occupied cells."""
    n = c_ok = l_ok = b_ok = 0
    for r, e in zip(readings, expected):
        if e is None:
            continue
        n += 1
        c = r.color == e[0].value
        l = r.letter == e[1]
        c_ok += c
        l_ok += l
        b_ok += c and l
    return n, c_ok, l_ok, b_ok


def keyframe_accuracy(frames: Sequence[np.ndarray], plan: Plan, scene: Scene, ocr: OcrModel,
                      board_pose: Optional[BoardPose] = None) -> KeyframeAccuracy:
    """Compare OCR reads of each generated keyframe with the plan's symbolic replay."""
    if len(frames) != len(plan):
        raise ValueError(f"{len(frames)} frames for a {len(plan)}-step plan")
    pose = board_pose or scene.state0.board_pose
    acc = KeyframeAccuracy()
    if not frames:
        return acc
    reads = ocr.read_boards(np.stack(frames), [pose] * len(frames))
    for r, exp in zip(reads, expected_boards(plan, scene.state0)):
        n, c, l, b = score_board(r, exp)
        acc.n.append(n)
        acc.color_ok.append(c)
        acc.letter_ok.append(l)
        acc.both_ok.append(b)
    return acc


def letters_correct(readings: Sequence[CellReading], word: str) -> list[bool]:
    return [r.letter == ch for r, ch in zip(readings, word)]


def final_frame_accuracy(frame: np.ndarray, word: str, ocr: OcrModel, board_pose: BoardPose) -> float:
    """Fraction of the word's letters read in their own cells; colors ignored."""
    if len(word) != N_CELLS:
        raise ValueError(f"expected a {N_CELLS}-letter word")
    reads = ocr.read_boards(np.asarray(frame)[None], [board_pose])[0]
    return sum(letters_correct(reads, word)) / N_CELLS
