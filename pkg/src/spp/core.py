"""Domain vocabulary, instruction grammar and the symbolic pick-and-place executor.

Everything here is an immutable value and every operation is pure, so the
data generator, the plan validator and the evaluator can share it freely.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

LETTERS: tuple[str, ...] = tuple(string.ascii_uppercase)
N_CELLS = 4


class Color(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"
    PURPLE = "purple"
    ORANGE = "orange"

    @property
    def rgb(self) -> tuple[float, float, float]:
        return COLOR_RGB[self]


COLOR_RGB: dict[Color, tuple[float, float, float]] = {
    Color.RED: (0.90, 0.10, 0.10),
    Color.GREEN: (0.10, 0.70, 0.15),
    Color.BLUE: (0.15, 0.30, 0.95),
    Color.YELLOW: (0.95, 0.90, 0.10),
    Color.PURPLE: (0.60, 0.10, 0.80),
    Color.ORANGE: (1.00, 0.55, 0.00),
}
COLORS: tuple[Color, ...] = tuple(Color)

QUARTER_NAMES: tuple[str, ...] = ("leftmost", "second", "third", "rightmost")


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def offset(self) -> int:
        return -1 if self is Side.LEFT else 1


# (color, letter); the identity of a tile within a scene.
ObjectId = tuple[Color, str]


def object_text(obj: ObjectId) -> str:
    return f"{obj[0].value} {obj[1]}"


@dataclass(frozen=True)
class Quarter:
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < N_CELLS:
            raise ValueError(f"quarter index must be in 0..{N_CELLS - 1}, got {self.index}")

    @property
    def name(self) -> str:
        return QUARTER_NAMES[self.index]


@dataclass(frozen=True)
class RelativeTo:
    side: Side
    reference: ObjectId


Target = Union[Quarter, RelativeTo]


@dataclass(frozen=True)
class Instruction:
    """A single "pick and place" command; the grammar has no other verb."""

    object: ObjectId
    target: Target

    def __post_init__(self) -> None:
        color, letter = self.object
        if not isinstance(color, Color) or letter not in LETTERS:
            raise ValueError(f"malformed object {self.object!r}")
        if isinstance(self.target, RelativeTo) and self.target.reference == self.object:
            raise ValueError("an instruction cannot be placed relative to itself")

    @property
    def letter(self) -> str:
        return self.object[1]

    @property
    def color(self) -> Color:
        return self.object[0]

    def __str__(self) -> str:
        return instruction_to_text(self)


Plan = tuple[Instruction, ...]


@dataclass(frozen=True)
class Tile:
    letter: str
    color: Color
    position: tuple[float, float]  # (x, y), fraction of frame extent
    orientation: float = 0.0  # radians

    @property
    def object(self) -> ObjectId:
        return (self.color, self.letter)


@dataclass(frozen=True)
class BoardPose:
    """Board centre and extent, in fractions of the frame."""

    x: float
    y: float
    width: float
    height: float

    def cell_box(self, index: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of a cell in frame fractions."""
        cw = self.width / N_CELLS
        x0 = self.x - self.width / 2 + index * cw
        y0 = self.y - self.height / 2
        return (x0, y0, x0 + cw, y0 + self.height)

    def cell_center(self, index: int) -> tuple[float, float]:
        x0, y0, x1, y1 = self.cell_box(index)
        return ((x0 + x1) / 2, (y0 + y1) / 2)


Cells = tuple[Optional[ObjectId], ...]


@dataclass(frozen=True)
class SymbolicState:
    board_pose: BoardPose
    cells: Cells = (None,) * N_CELLS
    staging: tuple[Tile, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(self.cells) != N_CELLS:
            raise ValueError(f"expected {N_CELLS} cells, got {len(self.cells)}")
        seen = [c for c in self.cells if c is not None] + [t.object for t in self.staging]
        if len(seen) != len(set(seen)):
            raise ValueError("a (color, letter) pair appears in more than one place")

    def find_cell(self, obj: ObjectId) -> Optional[int]:
        for i, c in enumerate(self.cells):
            if c == obj:
                return i
        return None

    def staged(self, obj: ObjectId) -> Optional[Tile]:
        for t in self.staging:
            if t.object == obj:
                return t
        return None

    def objects(self) -> list[ObjectId]:
        return [c for c in self.cells if c is not None] + [t.object for t in self.staging]


# --------------------------------------------------------------------------- errors


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ExecutionError(ValueError):
    """Base for violated preconditions of :func:`apply_instruction`."""


class MissingObject(ExecutionError):
    pass


class OccupiedCell(ExecutionError):
    pass


class DanglingReference(ExecutionError):
    pass


class OffBoard(ExecutionError):
    pass


# --------------------------------------------------------------------------- grammar


def instruction_to_text(instr: Instruction) -> str:
    head = f"Pick and place the {object_text(instr.object)} on the "
    if isinstance(instr.target, Quarter):
        return head + f"{instr.target.name} quarter"
    return head + f"{instr.target.side.value} of the {object_text(instr.target.reference)}"


_COLOR_BY_NAME = {c.value: c for c in Color}
_SIDE_BY_NAME = {s.value: s for s in Side}


def _scan(text: str) -> list[tuple[str, int]]:
    """Whitespace tokens with their byte offsets."""
    out = []
    for m in re.finditer(r"\S+", text):
        out.append((m.group(0), len(text[: m.start()].encode("utf-8"))))
    return out


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _scan(text)
        self.i = 0

    def _offset(self) -> int:
        if self.i < len(self.tokens):
            return self.tokens[self.i][1]
        return len(self.text.encode("utf-8"))

    def take(self, what: str) -> str:
        if self.i >= len(self.tokens):
            raise ParseError(f"expected {what}, got end of text", self._offset())
        tok = self.tokens[self.i][0]
        self.i += 1
        return tok

    def expect(self, word: str) -> None:
        off = self._offset()
        tok = self.take(repr(word))
        if tok.lower() != word.lower():
            raise ParseError(f"expected {word!r}, got {tok!r}", off)

    def color(self) -> Color:
        off = self._offset()
        tok = self.take("a color").lower()
        if tok not in _COLOR_BY_NAME:
            raise ParseError(f"unknown color {tok!r}", off)
        return _COLOR_BY_NAME[tok]

    def letter(self) -> str:
        off = self._offset()
        tok = self.take("a letter").upper()
        if tok not in LETTERS:
            raise ParseError(f"expected a single letter, got {tok!r}", off)
        return tok

    def peek(self) -> Optional[str]:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def end(self) -> None:
        if self.i != len(self.tokens):
            raise ParseError(f"trailing text {self.tokens[self.i][0]!r}", self._offset())


def parse_instruction(text: str) -> Instruction:
    cur = _Cursor(text)
    for w in ("pick", "and", "place", "the"):
        cur.expect(w)
    obj = (cur.color(), cur.letter())
    cur.expect("on")
    cur.expect("the")
    off = cur._offset()
    tok = cur.take("a quarter or side").lower()
    if tok in QUARTER_NAMES:
        cur.expect("quarter")
        cur.end()
        return Instruction(obj, Quarter(QUARTER_NAMES.index(tok)))
    if tok in _SIDE_BY_NAME:
        cur.expect("of")
        cur.expect("the")
        ref_off = cur._offset()
        ref = (cur.color(), cur.letter())
        cur.end()
        if ref == obj:
            raise ParseError("instruction references its own object", ref_off)
        return Instruction(obj, RelativeTo(_SIDE_BY_NAME[tok], ref))
    raise ParseError(f"expected a quarter name or side, got {tok!r}", off)


def high_level_text(word: str) -> str:
    return f"Spell the word {word}"


def parse_high_level(text: str) -> str:
    """Return the target word of a "Spell the word W" task."""
    cur = _Cursor(text)
    for w in ("spell", "the", "word"):
        cur.expect(w)
    off = cur._offset()
    word = cur.take("a word").upper()
    cur.end()
    if len(word) != N_CELLS or any(ch not in LETTERS for ch in word):
        raise ParseError(f"expected a {N_CELLS}-letter word, got {word!r}", off)
    return word


# --------------------------------------------------------------------------- executor


def resolve_target(state: SymbolicState, instr: Instruction) -> int:
    """Cell index the instruction places into; raises on violated preconditions."""
    target = instr.target
    if isinstance(target, Quarter):
        idx = target.index
    else:
        ref = state.find_cell(target.reference)
        if ref is None:
            raise DanglingReference(
                f"reference {object_text(target.reference)} is not on the board"
            )
        idx = ref + target.side.offset
        if not 0 <= idx < N_CELLS:
            raise OffBoard(
                f"no cell {target.side.value} of {object_text(target.reference)} (cell {ref})"
            )
    if state.cells[idx] is not None:
        raise OccupiedCell(f"cell {idx} already holds {object_text(state.cells[idx])}")
    return idx


def apply_instruction(state: SymbolicState, instr: Instruction) -> SymbolicState:
    if state.staged(instr.object) is None:
        raise MissingObject(f"{object_text(instr.object)} is not in the staging area")
    idx = resolve_target(state, instr)
    cells = list(state.cells)
    cells[idx] = instr.object
    staging = tuple(t for t in state.staging if t.object != instr.object)
    return replace(state, cells=tuple(cells), staging=staging)


def spelled_word(state: SymbolicState) -> Optional[str]:
    if any(c is None for c in state.cells):
        return None
    return "".join(c[1] for c in state.cells)  # type: ignore[index]


def replay(state: SymbolicState, plan: Plan) -> list[SymbolicState]:
    """States after each instruction, starting with ``state`` itself."""
    states = [state]
    for instr in plan:
        states.append(apply_instruction(states[-1], instr))
    return states


def validate_word(word: str, alphabet: Optional[set[str]] = None) -> str:
    """Canonical upper-case form of a spellable word; raises ValueError otherwise."""
    w = word.strip().upper()
    if len(w) != N_CELLS:
        raise ValueError(f"word must have {N_CELLS} letters, got {word!r}")
    if any(ch not in LETTERS for ch in w):
        raise ValueError(f"word {word!r} contains non A-Z characters")
    if len(set(w)) != N_CELLS:
        raise ValueError(f"word {word!r} repeats a letter")
    if alphabet is not None and not set(w) <= set(alphabet):
        raise ValueError(f"word {word!r} uses letters outside the alphabet")
    return w


# --------------------------------------------------------------------------- json helpers


def object_to_json(obj: ObjectId) -> list[str]:
    return [obj[0].value, obj[1]]


def object_from_json(data) -> ObjectId:
    return (Color(data[0]), str(data[1]))


def state_to_json(state: SymbolicState) -> dict:
    p = state.board_pose
    return {
        "board_pose": {"x": p.x, "y": p.y, "width": p.width, "height": p.height},
        "cells": [None if c is None else object_to_json(c) for c in state.cells],
        "staging": [
            {
                "letter": t.letter,
                "color": t.color.value,
                "position": list(t.position),
                "orientation": t.orientation,
            }
            for t in state.staging
        ],
    }


def state_from_json(data: dict) -> SymbolicState:
    return SymbolicState(
        board_pose=BoardPose(**data["board_pose"]),
        cells=tuple(None if c is None else object_from_json(c) for c in data["cells"]),
        staging=tuple(
            Tile(
                letter=t["letter"],
                color=Color(t["color"]),
                position=(float(t["position"][0]), float(t["position"][1])),
                orientation=float(t["orientation"]),
            )
            for t in data["staging"]
        ),
    )
