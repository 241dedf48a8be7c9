import dataclasses
import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spp.core import BoardPose, Color, SymbolicState, spelled_word
from spp.datagen.config import DatagenConfig
from spp.datagen.dataset import (
    CorruptDataset,
    InfeasibleSplit,
    build_splits,
    generate_videos,
    load_word_list,
    manifest_checksum,
    read_dataset,
    write_dataset,
)
from spp.datagen.render import render_frame, to_uint8
from spp.datagen.scene import (
    InvalidWord,
    check_demonstration,
    generate_demonstration,
    generate_scene,
)

CFG = DatagenConfig()
# frozen from a reviewed render of the nominal empty board
EMPTY_BOARD_SHA256 = "bf3eacbbdcffe2b788c9a077b5cc79d25f9c73c1b4033190638d64c02ece2016"


def nominal_pose():
    return BoardPose(CFG.board_x, CFG.board_y, CFG.board_width, CFG.board_height)


def test_golden_empty_board():
    frame = render_frame(SymbolicState(nominal_pose()), CFG)
    assert frame.shape == (64, 64, 3) and frame.dtype == np.float32
    assert hashlib.sha256(to_uint8(frame).tobytes()).hexdigest() == EMPTY_BOARD_SHA256


def test_empty_board_pixels():
    frame = to_uint8(render_frame(SymbolicState(nominal_pose()), CFG))
    assert tuple(frame[2, 2]) == CFG.background_rgb
    pose = nominal_pose()
    for k in range(4):
        x0, y0, x1, y1 = pose.cell_box(k)
        # a point inside the cell but away from the grid lines
        px, py = int((x0 + 0.3 * (x1 - x0)) * 64), int((y0 + 0.5 * (y1 - y0)) * 64)
        assert tuple(frame[py, px]) == CFG.board_rgb


def test_frames_are_8bit_exact():
    demo = generate_demonstration("CAKE", 3)
    for f in demo.frames:
        assert np.array_equal(to_uint8(f).astype(np.float32) / 255.0, f)


def test_each_step_changes_the_frame():
    demo = generate_demonstration("CAKE", 3)
    for prev, nxt in zip(demo.frames, demo.frames[1:]):
        assert not np.array_equal(prev, nxt)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(load_word_list()), st.integers(0, 2**31 - 1))
def test_demonstration_invariants(word, seed):
    demo = generate_demonstration(word, seed)
    assert len(demo.frames) == len(demo.low_level) + 1 == 5
    assert spelled_word(demo.states[-1]) == word
    assert len(demo.scene.state0.staging) == CFG.n_tiles
    objs = [t.object for t in demo.scene.state0.staging]
    assert len(set(objs)) == len(objs)
    pose = demo.scene.state0.board_pose
    assert abs(pose.x - CFG.board_x) <= CFG.board_jitter + 1e-9
    assert abs(pose.y - CFG.board_y) <= CFG.board_jitter + 1e-9
    check_demonstration(demo, CFG)


def test_generation_is_a_pure_function_of_seed():
    a, b = generate_demonstration("FISH", 11), generate_demonstration("FISH", 11)
    assert a.low_level == b.low_level and a.states == b.states
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    c = generate_demonstration("FISH", 12)
    assert c.states[0] != a.states[0]


def test_invalid_word_rejected():
    with pytest.raises(InvalidWord):
        generate_scene("BOOK", 0)
    with pytest.raises(InvalidWord):
        generate_scene("JAZZ", 0)


def test_config_validation():
    with pytest.raises(ValueError):
        DatagenConfig(board_jitter=0.2)
    with pytest.raises(ValueError):
        DatagenConfig(resolution=50)


@pytest.mark.parametrize("mode", ["random", "seen_unseen"])
def test_splits(mode):
    words = load_word_list()
    m = build_splits(words, mode, 0)
    m.check()
    assert set(m.train_words) | set(m.test_words) == set(words)
    assert not set(m.train_words) & set(m.test_words)
    if mode == "seen_unseen":
        unseen = set(m.unseen_letters)
        assert len(unseen) == 4
        assert all(not set(w) & unseen for w in m.train_words)
        assert all(set(w) & unseen for w in m.test_words)
    assert build_splits(words, mode, 0) == m


def test_infeasible_split():
    cfg = DatagenConfig(unseen_letters=("E", "A", "O", "I"))
    with pytest.raises(InfeasibleSplit):
        build_splits(load_word_list(), "seen_unseen", 0, cfg)


def test_seen_unseen_distractors_use_seen_letters():
    m = build_splits(load_word_list(), "seen_unseen", 0)
    vids = generate_videos(dataclasses.replace(m, train_words=m.train_words[:10]), 0,
                           DatagenConfig(videos_per_train_word=1, videos_per_test_word=0))
    unseen = set(m.unseen_letters)
    for v in vids:
        assert not {t.letter for t in v.demo.scene.state0.staging} & unseen


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    words = load_word_list()[:12]
    cfg = DatagenConfig(train_ratio=0.75)
    m = build_splits(words, "random", 0, cfg)
    root = tmp_path_factory.mktemp("ds")
    write_dataset(generate_videos(m, 0, cfg), m, root, cfg)
    return root, m, cfg


def test_dataset_round_trip(small_dataset):
    root, m, cfg = small_dataset
    ds = read_dataset(root)
    assert ds.manifest == m
    assert len(ds.split("train")) == 2 * len(m.train_words)
    assert len(ds.split("test")) == len(m.test_words)
    fresh = {v.id: v for v in generate_videos(m, 0, cfg)}
    for v in ds.videos:
        assert v.demo.low_level == fresh[v.id].demo.low_level
        assert all(np.array_equal(a, b) for a, b in zip(v.demo.frames, fresh[v.id].demo.frames))


def test_rewrite_gives_identical_manifest(small_dataset, tmp_path):
    root, m, cfg = small_dataset
    write_dataset(generate_videos(m, 0, cfg), m, tmp_path, cfg)
    assert manifest_checksum(tmp_path) == manifest_checksum(root)


def test_tampered_dataset_detected(small_dataset, tmp_path):
    root, m, cfg = small_dataset
    write_dataset(generate_videos(m, 0, cfg), m, tmp_path, cfg)
    vid = json.loads((tmp_path / "manifest.json").read_text())["videos"][0]["id"]
    labels = tmp_path / "videos" / vid / "labels.json"
    doc = json.loads(labels.read_text())
    doc["low_level"][0] = doc["low_level"][0].replace(doc["low_level"][0].split()[4], "red")
    labels.write_text(json.dumps(doc))
    with pytest.raises(CorruptDataset):
        read_dataset(tmp_path)
    (tmp_path / "manifest.json").unlink()
    with pytest.raises(CorruptDataset):
        read_dataset(tmp_path)


def test_color_palette_separation():
    # every pair of colors differs by at least 0.3 in some channel
    rgb = [np.array(c.rgb) for c in Color]
    for i in range(len(rgb)):
        for j in range(i + 1, len(rgb)):
            assert np.abs(rgb[i] - rgb[j]).max() >= 0.3
