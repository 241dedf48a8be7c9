"""Independent reference implementations used as test oracles.

Nothing here imports the executor logic under test: states are plain tuples
and instructions are plain tuples, so agreement with ``spp.core`` is real
evidence rather than a tautology.
"""

from __future__ import annotations

import itertools
from typing import Iterator, Optional

REDUCED_LETTERS = ("A", "B", "C", "D")
REDUCED_COLORS = ("red", "green")
QUARTERS = ("leftmost", "second", "third", "rightmost")

# plain instruction: (color, letter, ("quarter", k)) or (color, letter, ("left"|"right", (color, letter)))


def all_objects(letters=REDUCED_LETTERS, colors=REDUCED_COLORS) -> list[tuple[str, str]]:
    return [(c, l) for c in colors for l in letters]


def all_instructions(letters=REDUCED_LETTERS, colors=REDUCED_COLORS) -> list[tuple]:
    objs = all_objects(letters, colors)
    out = []
    for o in objs:
        for k in range(4):
            out.append((o[0], o[1], ("quarter", k)))
        for side in ("left", "right"):
            for r in objs:
                if r != o:
                    out.append((o[0], o[1], (side, r)))
    return out


def text_of(instr: tuple) -> str:
    color, letter, (kind, arg) = instr
    head = f"Pick and place the {color} {letter} on the "
    if kind == "quarter":
        return head + f"{QUARTERS[arg]} quarter"
    return head + f"{kind} of the {arg[0]} {arg[1]}"


def oracle_apply(cells: tuple, staging: frozenset, instr: tuple) -> tuple[Optional[tuple], Optional[str]]:
    """((cells, staging), None) on success or (None, error-name)."""
    color, letter, (kind, arg) = instr
    obj = (color, letter)
    if obj not in staging:
        return None, "MissingObject"
    if kind == "quarter":
        idx = arg
    else:
        if arg not in cells:
            return None, "DanglingReference"
        idx = cells.index(arg) + (-1 if kind == "left" else 1)
        if idx < 0 or idx > 3:
            return None, "OffBoard"
    if cells[idx] is not None:
        return None, "OccupiedCell"
    new = list(cells)
    new[idx] = obj
    return (tuple(new), staging - {obj}), None


def oracle_word(cells: tuple) -> Optional[str]:
    if any(c is None for c in cells):
        return None
    return "".join(c[1] for c in cells)


def enumerate_plans(staging: frozenset, instructions: list[tuple], max_steps: int = 4) -> Iterator[tuple]:
    """Every legal instruction sequence of length 1..max_steps from an empty board.

    Yields (plan, cells, staging) after each prefix, depth first.
    """
    def rec(cells, stag, prefix):
        if len(prefix) == max_steps:
            return
        for ins in instructions:
            nxt, err = oracle_apply(cells, stag, ins)
            if err is None:
                plan = prefix + (ins,)
                yield plan, nxt[0], nxt[1]
                yield from rec(nxt[0], nxt[1], plan)

    yield from rec((None,) * 4, staging, ())


def reduced_staging(n: int = 6) -> frozenset:
    return frozenset(all_objects()[:n])


def permutations_of(plan: tuple) -> Iterator[tuple]:
    return itertools.permutations(plan)


# --------------------------------------------------------------------------- cross-check driver


def exhaustive_core_check(max_steps: int = 4) -> dict:
    """Compare ``spp.core`` with the oracle on every reachable state of the reduced domain.

    Checks, for every state reachable in < max_steps legal steps and every
    instruction of the reduced grammar: text round-trip, outcome agreement
    (result or error class), conservation of objects, and that every legal
    ordering of the same instruction set spells the same word.
    """
    from spp import core

    instrs = all_instructions()
    texts = [text_of(i) for i in instrs]
    parsed = [core.parse_instruction(t) for t in texts]
    for t, p in zip(texts, parsed):
        assert core.instruction_to_text(p) == t, t
    pose = core.BoardPose(0.5, 0.8, 0.84, 0.22)
    staging0 = reduced_staging()
    tiles = {o: core.Tile(o[1], core.Color(o[0]), (0.1 * i, 0.2), 0.0) for i, o in enumerate(sorted(staging0))}

    def to_core(cells, staging):
        return core.SymbolicState(
            board_pose=pose,
            cells=tuple(None if c is None else (core.Color(c[0]), c[1]) for c in cells),
            staging=tuple(tiles[o] for o in sorted(staging)),
        )

    def from_core(state):
        cells = tuple(None if c is None else (c[0].value, c[1]) for c in state.cells)
        return cells, frozenset((t.color.value, t.letter) for t in state.staging)

    stats = {"states": 0, "pairs": 0, "complete_plans": 0, "instruction_sets": 0}
    words_by_set: dict[frozenset, set] = {}

    def visit(cells, staging, prefix):
        stats["states"] += 1
        state = to_core(cells, staging)
        before = sorted(state.objects(), key=lambda o: (o[0].value, o[1]))
        for ins, cins in zip(instrs, parsed):
            stats["pairs"] += 1
            expected, err = oracle_apply(cells, staging, ins)
            try:
                got = core.apply_instruction(state, cins)
            except core.ExecutionError as exc:
                assert type(exc).__name__ == err, (prefix, ins, type(exc).__name__, err)
                continue
            assert err is None, (prefix, ins, err)
            assert from_core(got) == expected, (prefix, ins)
            after = sorted(got.objects(), key=lambda o: (o[0].value, o[1]))
            assert after == before
            assert len([c for c in got.cells if c is not None]) + len(got.staging) == len(staging0)
            plan = prefix + (ins,)
            if len(plan) == 4:
                word = core.spelled_word(got)
                assert word == oracle_word(expected[0])
                words_by_set.setdefault(frozenset(plan), set()).add(word)
                stats["complete_plans"] += 1
            elif len(plan) < max_steps:
                visit(expected[0], expected[1], plan)

    visit((None,) * 4, staging0, ())
    stats["instruction_sets"] = len(words_by_set)
    for key, words in words_by_set.items():
        assert len(words) == 1, (key, words)
    return stats
