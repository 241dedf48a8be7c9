import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spp import core
from spp.core import (
    COLORS,
    LETTERS,
    Color,
    Instruction,
    Quarter,
    RelativeTo,
    Side,
    SymbolicState,
    Tile,
)
from spp.datagen.scene import plan_for_objects

import oracles

objects = st.tuples(st.sampled_from(COLORS), st.sampled_from(LETTERS))


@st.composite
def instructions(draw):
    obj = draw(objects)
    if draw(st.booleans()):
        return Instruction(obj, Quarter(draw(st.integers(0, 3))))
    ref = draw(objects.filter(lambda r: r != obj))
    return Instruction(obj, RelativeTo(draw(st.sampled_from(list(Side))), ref))


@given(instructions())
def test_text_round_trip_full_grammar(instr):
    text = core.instruction_to_text(instr)
    assert core.parse_instruction(text) == instr
    # case and whitespace do not matter to the parser
    assert core.parse_instruction("  " + text.upper().replace(" ", "   ")) == instr


def test_instruction_text_matches_template():
    i = Instruction((Color.BLUE, "Q"), Quarter(2))
    assert core.instruction_to_text(i) == "Pick and place the blue Q on the third quarter"
    j = Instruction((Color.RED, "A"), RelativeTo(Side.LEFT, (Color.GREEN, "B")))
    assert core.instruction_to_text(j) == "Pick and place the red A on the left of the green B"


@pytest.mark.parametrize("text", [
    "",
    "Pick and place the red A",
    "Pick and place the pink A on the leftmost quarter",
    "Pick and place the red AA on the leftmost quarter",
    "Pick and place the red A on the fifth quarter",
    "Pick and place the red A on the leftmost quarter please",
    "Pick and place the red A on the left of the red A",
    "Drop the red A on the leftmost quarter",
])
def test_parse_errors_carry_offset(text):
    with pytest.raises(core.ParseError) as info:
        core.parse_instruction(text)
    assert 0 <= info.value.offset <= len(text)


def test_high_level_round_trip():
    assert core.parse_high_level(core.high_level_text("WORD")) == "WORD"
    assert core.parse_high_level("spell the word cake") == "CAKE"
    with pytest.raises(core.ParseError):
        core.parse_high_level("Spell the word TOOLONG")


def test_validate_word():
    assert core.validate_word(" cake ") == "CAKE"
    for bad in ("CAK", "BOOK", "C4KE"):
        with pytest.raises(ValueError):
            core.validate_word(bad)
    with pytest.raises(ValueError):
        core.validate_word("CAKE", alphabet=set("ABCDE"))


def _state(pose, objs):
    tiles = tuple(Tile(l, c, (0.1 * i, 0.3)) for i, (c, l) in enumerate(objs))
    return SymbolicState(board_pose=pose, staging=tiles)


def test_executor_error_classes(pose):
    red_a, red_b, green_c = (Color.RED, "A"), (Color.RED, "B"), (Color.GREEN, "C")
    s0 = _state(pose, [red_a, red_b, green_c])
    s1 = core.apply_instruction(s0, Instruction(red_a, Quarter(0)))
    assert s1.cells[0] == red_a and s1.staged(red_a) is None
    with pytest.raises(core.MissingObject):
        core.apply_instruction(s1, Instruction(red_a, Quarter(1)))
    with pytest.raises(core.OccupiedCell):
        core.apply_instruction(s1, Instruction(red_b, Quarter(0)))
    with pytest.raises(core.OffBoard):
        core.apply_instruction(s1, Instruction(red_b, RelativeTo(Side.LEFT, red_a)))
    with pytest.raises(core.DanglingReference):
        core.apply_instruction(s1, Instruction(red_b, RelativeTo(Side.LEFT, green_c)))
    s2 = core.apply_instruction(s1, Instruction(red_b, RelativeTo(Side.RIGHT, red_a)))
    assert s2.cells[:2] == (red_a, red_b)
    # strict reference match: same letter, wrong color is dangling
    with pytest.raises(core.DanglingReference):
        core.apply_instruction(s2, Instruction(green_c, RelativeTo(Side.RIGHT, (Color.BLUE, "B"))))


def test_spelled_word_requires_full_board(pose):
    objs = [(Color.RED, ch) for ch in "CAKE"]
    plan = tuple(Instruction(o, Quarter(i)) for i, o in enumerate(objs))
    states = core.replay(_state(pose, objs), plan)
    assert [core.spelled_word(s) for s in states] == [None, None, None, None, "CAKE"]


def test_state_rejects_duplicate_objects(pose):
    with pytest.raises(ValueError):
        _state(pose, [(Color.RED, "A"), (Color.RED, "A")])


def test_state_json_round_trip(pose):
    s = _state(pose, [(Color.RED, "A"), (Color.BLUE, "Z")])
    s = core.apply_instruction(s, Instruction((Color.RED, "A"), Quarter(3)))
    doc = json.loads(json.dumps(core.state_to_json(s)))
    assert core.state_from_json(doc) == s


def test_cell_boxes_tile_the_board(pose):
    boxes = [pose.cell_box(i) for i in range(4)]
    assert boxes[0][0] == pytest.approx(pose.x - pose.width / 2)
    assert boxes[-1][2] == pytest.approx(pose.x + pose.width / 2)
    for a, b in zip(boxes, boxes[1:]):
        assert a[2] == pytest.approx(b[0])


@settings(max_examples=60, deadline=None)
@given(st.permutations(range(4)), st.randoms(use_true_random=False))
def test_any_visiting_order_spells_the_word(order, rnd):
    # conservation and permutation soundness on the full alphabet
    letters = rnd.sample(LETTERS, 6)
    objs = [(rnd.choice(COLORS), ch) for ch in letters]
    plan = plan_for_objects(objs[:4], order, np.random.default_rng(rnd.randrange(1 << 30)))
    s0 = _state(core.BoardPose(0.5, 0.8, 0.84, 0.22), objs)
    states = core.replay(s0, plan)
    assert core.spelled_word(states[-1]) == "".join(letters[:4])
    for s in states:
        assert sorted(s.objects()) == sorted(s0.objects())


def test_exhaustive_reduced_domain_matches_oracle():
    stats = oracles.exhaustive_core_check()
    # reduced grammar: 8 objects x (4 quarters + 2 sides x 7 references)
    assert len(oracles.all_instructions()) == 8 * (4 + 2 * 7)
    assert stats["pairs"] == stats["states"] * 144
    assert stats["complete_plans"] > 0 and stats["instruction_sets"] > 0
