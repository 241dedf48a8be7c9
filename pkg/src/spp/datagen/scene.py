"""Scenes, the scripted demonstration policy and labelled demonstrations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from spp.core import (
    COLORS,
    N_CELLS,
    BoardPose,
    Instruction,
    ObjectId,
    Plan,
    Quarter,
    RelativeTo,
    Side,
    SymbolicState,
    Tile,
    apply_instruction,
    high_level_text,
    instruction_to_text,
    parse_instruction,
    replay,
    spelled_word,
    validate_word,
)
from spp.datagen.config import DatagenConfig
from spp.datagen.render import render_frame


class InvalidWord(ValueError):
    pass


def rng_for(seed: int, *keys: str) -> np.random.Generator:
    """Generator keyed by an integer seed plus arbitrary strings (e.g. the word)."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        entropy.extend(key.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class Scene:
    state0: SymbolicState
    word: str
    seed: int

    def tile_for(self, letter: str) -> Tile:
        """Staging tile carrying a letter of the word (word letters are unique)."""
        word_tiles = self.state0.staging[:N_CELLS]
        for t in word_tiles:
            if t.letter == letter:
                return t
        raise KeyError(letter)


@dataclass(frozen=True)
class Demonstration:
    frames: tuple[np.ndarray, ...]
    high_level: str
    low_level: tuple[str, ...]
    scene: Scene
    states: tuple[SymbolicState, ...]

    @property
    def word(self) -> str:
        return self.scene.word

    @property
    def plan(self) -> Plan:
        return tuple(parse_instruction(t) for t in self.low_level)


def _sample_positions(rng: np.random.Generator, n: int, config: DatagenConfig) -> list[tuple[float, float]]:
    x0, y0, x1, y1 = config.staging_region
    for _ in range(200):
        pts: list[tuple[float, float]] = []
        for _ in range(2000):
            p = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
            if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= config.tile_min_distance ** 2 for q in pts):
                pts.append(p)
                if len(pts) == n:
                    return pts
    raise RuntimeError("staging region too small for the requested tile count")


def generate_scene(word: str, seed: int, config: DatagenConfig = DatagenConfig()) -> Scene:
    """Random scene holding the word's letters plus distractors.

    The first four staging tiles are the word's letters in word order; the
    remaining ones are distractors with (color, letter) pairs distinct from all
    other tiles.
    """
    try:
        word = validate_word(word, set(config.alphabet))
    except ValueError as exc:
        raise InvalidWord(str(exc)) from None
    rng = rng_for(seed, "scene", word)
    j = config.board_jitter
    pose = BoardPose(
        x=round(config.board_x + float(rng.uniform(-j, j)), 6),
        y=round(config.board_y + float(rng.uniform(-j, j)), 6),
        width=config.board_width,
        height=config.board_height,
    )
    objects = [(COLORS[int(rng.integers(len(COLORS)))], ch) for ch in word]
    while len(objects) < config.n_tiles:
        obj = (COLORS[int(rng.integers(len(COLORS)))], config.alphabet[int(rng.integers(len(config.alphabet)))])
        if obj not in objects:
            objects.append(obj)
    positions = _sample_positions(rng, len(objects), config)
    tiles = tuple(
        Tile(
            letter=letter,
            color=color,
            position=(round(p[0], 6), round(p[1], 6)),
            orientation=round(float(rng.uniform(-config.max_rotation, config.max_rotation)), 3),
        )
        for (color, letter), p in zip(objects, positions)
    )
    return Scene(state0=SymbolicState(board_pose=pose, staging=tiles), word=word, seed=int(seed))


def plan_for_objects(objects: Sequence[ObjectId], order: Sequence[int],
                     rng: Optional[np.random.Generator] = None) -> Plan:
    """Plan placing ``objects[pos]`` into cell ``pos``, visiting positions in ``order``.

    A letter adjacent to an already placed one is placed relative to it (a
    random neighbour when both sides are taken); otherwise it goes to its
    absolute quarter.
    """
    if sorted(order) != list(range(N_CELLS)) or len(objects) != N_CELLS:
        raise ValueError(f"order must be a permutation of 0..{N_CELLS - 1}")
    placed: dict[int, ObjectId] = {}
    plan = []
    for pos in order:
        obj = objects[pos]
        options = []
        if pos + 1 in placed:
            options.append(RelativeTo(Side.LEFT, placed[pos + 1]))
        if pos - 1 in placed:
            options.append(RelativeTo(Side.RIGHT, placed[pos - 1]))
        if not options:
            target = Quarter(pos)
        elif len(options) == 1 or rng is None:
            target = options[0]
        else:
            target = options[int(rng.integers(len(options)))]
        plan.append(Instruction(obj, target))
        placed[pos] = obj
    return tuple(plan)


def plan_for_order(scene: Scene, order: Sequence[int], rng: Optional[np.random.Generator] = None) -> Plan:
    return plan_for_objects([scene.tile_for(ch).object for ch in scene.word], order, rng)


def scripted_policy(scene: Scene, seed: int) -> Plan:
    rng = rng_for(seed, "policy", scene.word)
    order = [int(i) for i in rng.permutation(N_CELLS)]
    return plan_for_order(scene, order, rng)


def generate_demonstration(word: str, seed: int, config: DatagenConfig = DatagenConfig()) -> Demonstration:
    scene = generate_scene(word, seed, config)
    plan = scripted_policy(scene, seed)
    states = replay(scene.state0, plan)
    if spelled_word(states[-1]) != scene.word:
        raise AssertionError("scripted policy produced a plan that does not spell the word")
    return Demonstration(
        frames=tuple(render_frame(s, config) for s in states),
        high_level=high_level_text(scene.word),
        low_level=tuple(instruction_to_text(i) for i in plan),
        scene=scene,
        states=tuple(states),
    )


def replay_labels(demo: Demonstration) -> list[SymbolicState]:
    """Re-derive the symbolic states from the text labels alone."""
    states = [demo.scene.state0]
    for text in demo.low_level:
        states.append(apply_instruction(states[-1], parse_instruction(text)))
    return states


def check_demonstration(demo: Demonstration, config: DatagenConfig, rerender: bool = True) -> None:
    """Raise AssertionError unless labels, states and frames agree."""
    states = replay_labels(demo)
    if tuple(states) != demo.states:
        raise AssertionError("label replay disagrees with stored states")
    if spelled_word(states[-1]) != demo.scene.word:
        raise AssertionError("final state does not spell the word")
    if rerender:
        for t, (s, f) in enumerate(zip(states, demo.frames)):
            if not np.array_equal(render_frame(s, config), f):
                raise AssertionError(f"frame {t} does not match its re-rendered state")
