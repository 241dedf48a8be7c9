import json
import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spp.core import Color, Instruction, Quarter, RelativeTo, Side, high_level_text, instruction_to_text
from spp.errors import ConfigError, VersionMismatch
from spp.lang import (
    DimensionMismatch,
    EmbeddingHyperparams,
    EmbeddingTable,
    GateParams,
    MissingEmbedding,
    build_dictionary,
    constituent_overlap,
    embed_text,
    encode_onehot,
    gate_from_embedding,
    hash_random_table,
    load_encoder,
    load_local_table,
    load_table,
    save_encoder,
    save_table,
    train_local_embeddings,
)

CORPUS = [
    "Pick and place the red A on the leftmost quarter",
    "Pick and place the blue B on the right of the red A",
    "Pick and place the green C on the third quarter",
    "Spell the word ABCD",
]


def test_dictionary_collects_constituents():
    d = build_dictionary(CORPUS)
    assert d.colors == ("blue", "green", "red")
    assert d.letters == tuple("ABCD")
    assert set(d.relations) == {"leftmost", "right", "third"}
    assert set(d.verbs) == {"pick and place", "spell"}
    assert len(d) == 2 + 3 + 4 + 3
    assert type(d).from_json(json.loads(json.dumps(d.to_json()))) == d


def test_onehot_bits():
    d = build_dictionary(CORPUS)
    v = encode_onehot(CORPUS[1], d)
    on = {d.concepts[i] for i in np.flatnonzero(v)}
    # the reference shares color and letter bits with the object
    assert on == {("verbs", "pick and place"), ("colors", "blue"), ("letters", "B"),
                  ("relations", "right"), ("colors", "red"), ("letters", "A")}
    assert v.dtype == np.float32 and set(np.unique(v)) <= {0.0, 1.0}


def test_onehot_unseen_concepts_are_zero_bits():
    d = build_dictionary(CORPUS)
    v = encode_onehot("Pick and place the purple Z on the second quarter", d)
    on = {d.concepts[i] for i in np.flatnonzero(v)}
    assert on == {("verbs", "pick and place")}
    w = encode_onehot(Instruction((Color.RED, "Q"), Quarter(0)), d)
    assert {d.concepts[i] for i in np.flatnonzero(w)} == {
        ("verbs", "pick and place"), ("colors", "red"), ("relations", "leftmost")}


def test_hash_table_is_deterministic_and_unit_norm():
    a = hash_random_table(64, seed=3)
    b = hash_random_table(64, seed=3)
    v = embed_text("Spell the word CAKE", a)
    assert np.array_equal(v, embed_text("Spell the word CAKE", b))
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)
    assert not np.array_equal(v, embed_text("Spell the word CAKE", hash_random_table(64, seed=4)))


def test_table_round_trip_and_tamper(tmp_path):
    t = EmbeddingTable(16, "trained-locally", dict(hash_random_table(16, texts=CORPUS).vectors))
    path = tmp_path / "emb.bin"
    checksum = save_table(t, path)
    loaded = load_table(path)
    assert loaded.checksum() == checksum == t.checksum()
    assert loaded.source_tag == "pretrained-import"
    for text in CORPUS:
        assert np.array_equal(loaded.vectors[text], t.vectors[text])
    # hash tables stay total after a round trip; other tables are frozen
    save_table(hash_random_table(16, texts=CORPUS), tmp_path / "h.bin")
    assert load_table(tmp_path / "h.bin").source_tag == "hash-random"
    with pytest.raises(MissingEmbedding):
        embed_text("Spell the word WXYZ", loaded)
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        load_table(path)


def test_table_version_mismatch(tmp_path):
    path = tmp_path / "emb.bin"
    save_table(hash_random_table(8, texts=CORPUS[:1]), path)
    raw = path.read_bytes()
    magic_len = raw.index(b"{") - 4
    (hlen,) = struct.unpack_from("<I", raw, magic_len)
    header = json.loads(raw[magic_len + 4: magic_len + 4 + hlen])
    header["format_version"] = 999
    new = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(raw[:magic_len] + struct.pack("<I", len(new)) + new + raw[magic_len + 4 + hlen:])
    with pytest.raises(VersionMismatch):
        load_table(path)


def test_table_rejects_bad_shapes_and_tags():
    with pytest.raises(DimensionMismatch):
        EmbeddingTable(4, "hash-random", {"x": np.zeros(3, np.float32)})
    with pytest.raises(ConfigError):
        EmbeddingTable(4, "made-up")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 1000))
def test_gate_matches_numpy_sigmoid(n, d_gate, seed):
    torch.manual_seed(seed)
    params = GateParams(8, d_gate)
    with torch.no_grad():
        params.bias.normal_()
    emb = torch.randn(n, 8)
    got = gate_from_embedding(emb, params).detach().numpy()
    x = emb.numpy().astype(np.float64) @ params.weight.detach().numpy() + params.bias.detach().numpy()
    want = 1.0 / (1.0 + np.exp(-x))
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)
    assert ((got >= 0) & (got <= 1)).all()


def test_gate_dimension_check():
    with pytest.raises(DimensionMismatch):
        gate_from_embedding(torch.zeros(2, 5), GateParams(8, 3))


def test_gate_init_spreads_activations():
    # on unit-norm inputs the default init must not collapse gates to 0.5
    torch.manual_seed(0)
    params = GateParams(512, 64, init_scale=5.0)
    table = hash_random_table(512, texts=CORPUS)
    emb = torch.from_numpy(np.stack([table.vectors[t] for t in CORPUS]))
    g = gate_from_embedding(emb, params).detach()
    assert float((g - 0.5).abs().mean()) > 0.3


def _corpus():
    texts = []
    for c in (Color.RED, Color.BLUE, Color.GREEN):
        for ch in "ABCDEF":
            texts.append(instruction_to_text(Instruction((c, ch), Quarter(ord(ch) % 4))))
            texts.append(instruction_to_text(Instruction((c, ch), RelativeTo(Side.LEFT, (Color.RED, "G")))))
    texts += [high_level_text(w) for w in ("ABCD", "BADE", "FACE")]
    return texts


@pytest.fixture(scope="module")
def local():
    return train_local_embeddings(_corpus(), dims=32, hyperparams=EmbeddingHyperparams(steps=300))


def test_local_embeddings_track_overlap(local):
    table, _ = local
    texts = sorted(table.vectors)
    e = np.stack([table.vectors[t] for t in texts])
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-5)
    sims, overlaps = [], []
    for i in range(len(texts)):
        for j in range(i + 1, len(texts)):
            sims.append(float(e[i] @ e[j]))
            overlaps.append(constituent_overlap(texts[i], texts[j]))
    # rank correlation between cosine similarity and shared constituents
    from scipy.stats import spearmanr

    assert spearmanr(sims, overlaps).correlation > 0.5


def test_local_table_extends_to_unseen_letters(local, tmp_path):
    table, enc = local
    text = "Pick and place the red Z on the leftmost quarter"
    v = embed_text(text, table)
    assert v.shape == (32,)
    save_table(table, tmp_path / "t.bin")
    save_encoder(enc, tmp_path / "e.pt")
    again = load_local_table(tmp_path / "t.bin", tmp_path / "e.pt")
    np.testing.assert_allclose(embed_text(text, again), v, atol=1e-6)
    assert load_encoder(tmp_path / "e.pt").out[1].out_features == 32


def test_local_embedding_config_errors():
    with pytest.raises(ConfigError):
        train_local_embeddings([], dims=8)
    with pytest.raises(ConfigError):
        train_local_embeddings(CORPUS, dims=8, hyperparams=EmbeddingHyperparams(lr=0.0))
