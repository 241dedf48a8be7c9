"""Language conditioning: one-hot concept bits and continuous text embeddings.

Two encoders feed the concept-slot gates of the predictor:

* a concept dictionary (verbs, colors, letters, relations) giving one bit per
  concept; concepts missing from the dictionary contribute no bits;
* an :class:`EmbeddingTable` of fixed-size vectors, either imported from a
  pretrained text encoder, trained locally with a compositional encoder, or
  derived from a seeded hash.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from spp.core import (
    LETTERS,
    Instruction,
    ParseError,
    Quarter,
    parse_high_level,
    parse_instruction,
)
from spp.errors import ConfigError, VersionMismatch

GROUPS = ("verbs", "colors", "letters", "relations")
VERB = "pick and place"
SPELL = "spell"
EMBEDDING_FORMAT_VERSION = 1
_MAGIC = b"SPPEMB\x00\x01"


class MissingEmbedding(KeyError):
    pass


class DimensionMismatch(ValueError):
    pass


# --------------------------------------------------------------------------- dictionary


@dataclass(frozen=True)
class ConceptDictionary:
    verbs: tuple[str, ...] = ()
    colors: tuple[str, ...] = ()
    letters: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()

    @property
    def concepts(self) -> tuple[tuple[str, str], ...]:
        return tuple((g, c) for g in GROUPS for c in getattr(self, g))

    def __len__(self) -> int:
        return len(self.concepts)

    def index(self, group: str, concept: str) -> Optional[int]:
        try:
            return self.concepts.index((group, concept))
        except ValueError:
            return None

    def to_json(self) -> dict:
        return {g: list(getattr(self, g)) for g in GROUPS}

    @classmethod
    def from_json(cls, data: dict) -> "ConceptDictionary":
        return cls(**{g: tuple(data.get(g, ())) for g in GROUPS})


def instruction_constituents(instr: Instruction) -> list[tuple[str, str]]:
    """(group, concept) for verb, color, letter, relation and any reference."""
    out = [("verbs", VERB), ("colors", instr.color.value), ("letters", instr.letter)]
    if isinstance(instr.target, Quarter):
        out.append(("relations", instr.target.name))
    else:
        ref_color, ref_letter = instr.target.reference
        out += [("relations", instr.target.side.value), ("colors", ref_color.value), ("letters", ref_letter)]
    return out


def text_constituents(text: str) -> list[tuple[str, str]]:
    """Constituents of an instruction or of a "Spell the word W" task."""
    try:
        return instruction_constituents(parse_instruction(text))
    except ParseError:
        word = parse_high_level(text)
        return [("verbs", SPELL)] + [("letters", ch) for ch in word]


def build_dictionary(label_corpus: Iterable[str]) -> ConceptDictionary:
    found: dict[str, set[str]] = {g: set() for g in GROUPS}
    for text in label_corpus:
        for group, concept in text_constituents(text):
            found[group].add(concept)
    return ConceptDictionary(**{g: tuple(sorted(found[g])) for g in GROUPS})


def encode_onehot(instr: Instruction | str, dictionary: ConceptDictionary) -> np.ndarray:
    """Bag of concept bits; constituents absent from the dictionary set nothing."""
    parts = text_constituents(instr) if isinstance(instr, str) else instruction_constituents(instr)
    bits = np.zeros(len(dictionary), dtype=np.float32)
    for group, concept in parts:
        i = dictionary.index(group, concept)
        if i is not None:
            bits[i] = 1.0
    return bits


# --------------------------------------------------------------------------- embedding tables


def _hash_vector(text: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint32))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def vectors_checksum(vectors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for text in sorted(vectors):
        h.update(text.encode("utf-8"))
        h.update(np.asarray(vectors[text], dtype="<f4").tobytes())
    return h.hexdigest()


@dataclass
class EmbeddingTable:
    """Text -> vector lookup with a provenance tag.

    ``encoder`` extends a locally trained table to texts it was not exported
    for; hash-random tables are total by construction.
    """

    d_emb: int
    source_tag: str
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    hash_seed: int = 0
    encoder: Optional[Callable[[Sequence[str]], np.ndarray]] = field(default=None, repr=False)

    SOURCES = ("pretrained-import", "trained-locally", "hash-random")

    def __post_init__(self) -> None:
        if self.source_tag not in self.SOURCES:
            raise ConfigError(f"unknown embedding source {self.source_tag!r}")
        for text, v in self.vectors.items():
            if np.shape(v) != (self.d_emb,):
                raise DimensionMismatch(f"vector for {text!r} has shape {np.shape(v)}, expected ({self.d_emb},)")

    def __contains__(self, text: str) -> bool:
        return text in self.vectors

    def checksum(self) -> str:
        return vectors_checksum(self.vectors)

    def extend(self, texts: Iterable[str]) -> None:
        """Materialise vectors for ``texts`` (no-op for imported tables)."""
        todo = [t for t in dict.fromkeys(texts) if t not in self.vectors]
        if not todo or self.source_tag == "pretrained-import":
            return
        if self.source_tag == "hash-random":
            for t in todo:
                self.vectors[t] = _hash_vector(t, self.d_emb, self.hash_seed)
            return
        if self.encoder is None:
            return
        for t, v in zip(todo, self.encoder(todo)):
            self.vectors[t] = np.asarray(v, dtype=np.float32)


def embed_text(text: str, table: EmbeddingTable) -> np.ndarray:
    if text not in table.vectors:
        table.extend([text])
    try:
        return table.vectors[text]
    except KeyError:
        raise MissingEmbedding(f"no {table.source_tag} embedding for {text!r}") from None


def hash_random_table(d_emb: int = 512, seed: int = 0, texts: Iterable[str] = ()) -> EmbeddingTable:
    table = EmbeddingTable(d_emb, "hash-random", hash_seed=seed)
    table.extend(texts)
    return table


def save_table(table: EmbeddingTable, path: Path | str) -> str:
    """Write the binary import format; returns the checksum stored in the header."""
    checksum = table.checksum()
    header = json.dumps({
        "format_version": EMBEDDING_FORMAT_VERSION,
        "d_emb": table.d_emb,
        "count": len(table.vectors),
        "source_tag": table.source_tag,
        "checksum": checksum,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for text in sorted(table.vectors):
            raw = text.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(table.vectors[text], dtype="<f4").tobytes())
    return checksum


def load_table(path: Path | str, source_tag: Optional[str] = None) -> EmbeddingTable:
    """Read the binary import format, verifying the checksum.

    Tables loaded from disk are frozen: texts outside the file raise
    :class:`MissingEmbedding` unless the tag is hash-random.
    """
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not an embedding file")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos: pos + hlen])
    pos += hlen
    if header["format_version"] != EMBEDDING_FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported format {header['format_version']}")
    d = int(header["d_emb"])
    vectors = {}
    for _ in range(header["count"]):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        text = data[pos: pos + n].decode("utf-8")
        pos += n
        vectors[text] = np.frombuffer(data, dtype="<f4", count=d, offset=pos).astype(np.float32)
        pos += 4 * d
    if vectors_checksum(vectors) != header["checksum"]:
        raise ValueError(f"{path}: checksum mismatch")
    tag = source_tag or header["source_tag"]
    return EmbeddingTable(d, tag if tag == "hash-random" else "pretrained-import", vectors)


# --------------------------------------------------------------------------- gate


class GateParams(nn.Module):
    """Learned linear projection from embedding space to gate space."""

    def __init__(self, d_emb: int, d_gate: int, init_scale: float = 2.0):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_emb, d_gate))
        self.bias = nn.Parameter(torch.zeros(d_gate))
        # embeddings are unit-norm, so this gives pre-activations of std init_scale;
        # a 1/sqrt(d) init would leave every gate near 0.5 for every text
        nn.init.normal_(self.weight, std=init_scale)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return gate_from_embedding(emb, self)


def gate_from_embedding(emb: torch.Tensor, params: GateParams) -> torch.Tensor:
    """sigmoid(emb @ W + b): per-slot activation probabilities in (0, 1)."""
    if emb.shape[-1] != params.weight.shape[0]:
        raise DimensionMismatch(f"embedding has {emb.shape[-1]} dims, gate expects {params.weight.shape[0]}")
    return torch.sigmoid(emb @ params.weight + params.bias)


# --------------------------------------------------------------------------- local embeddings

_ROLE_NAMES = ("verb", "color", "letter", "relation", "ref_color", "ref_letter",
               "word_0", "word_1", "word_2", "word_3")
_GLYPH = 8
_HASH_DIM = 32


def _roles(text: str) -> list[tuple[str, str]]:
    """(role, token) pairs; roles keep object and reference constituents apart."""
    try:
        instr = parse_instruction(text)
    except ParseError:
        word = parse_high_level(text)
        return [("verb", SPELL)] + [(f"word_{i}", ch) for i, ch in enumerate(word)]
    out = [("verb", VERB), ("color", instr.color.value), ("letter", instr.letter)]
    if isinstance(instr.target, Quarter):
        out.append(("relation", instr.target.name))
    else:
        out += [("relation", instr.target.side.value),
                ("ref_color", instr.target.reference[0].value),
                ("ref_letter", instr.target.reference[1])]
    return out


def _glyph_feature(token: str) -> np.ndarray:
    """Downsampled glyph bitmap for single letters; zeros for other tokens."""
    if token not in LETTERS:
        return np.zeros(_GLYPH * _GLYPH, dtype=np.float32)
    from spp.datagen.render import glyph_mask

    m = glyph_mask(token, 32, 0).astype(np.float32) / 255.0
    m = m.reshape(_GLYPH, 32 // _GLYPH, _GLYPH, 32 // _GLYPH).mean(axis=(1, 3)).ravel()
    return (m / (np.linalg.norm(m) + 1e-8)).astype(np.float32)


def token_features(token: str) -> np.ndarray:
    """Fixed (untrained) token featurisation: glyph bitmap + hashed identity."""
    return np.concatenate([_glyph_feature(token), _hash_vector(token.lower(), _HASH_DIM, 7)])


class CompositionalEncoder(nn.Module):
    """Sum of role-specific projections of token features, then an MLP."""

    def __init__(self, d_emb: int, d_hidden: int = 128):
        super().__init__()
        d_tok = _GLYPH * _GLYPH + _HASH_DIM
        self.role = nn.Parameter(torch.randn(len(_ROLE_NAMES), d_tok, d_hidden) * d_tok ** -0.5)
        self.out = nn.Sequential(nn.Tanh(), nn.Linear(d_hidden, d_emb))

    def featurise(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        feats = np.zeros((len(texts), len(_ROLE_NAMES), _GLYPH * _GLYPH + _HASH_DIM), dtype=np.float32)
        mask = np.zeros((len(texts), len(_ROLE_NAMES)), dtype=np.float32)
        for i, text in enumerate(texts):
            for role, tok in _roles(text):
                r = _ROLE_NAMES.index(role)
                feats[i, r] = token_features(tok)
                mask[i, r] = 1.0
        return torch.from_numpy(feats), torch.from_numpy(mask)

    def forward(self, feats: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = torch.einsum("nrd,rdh->nh", feats * mask[..., None], self.role)
        return nn.functional.normalize(self.out(h), dim=-1)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        with torch.no_grad():
            return self(*self.featurise(texts)).numpy()


def constituent_overlap(a: str, b: str) -> int:
    return len(set(_roles(a)) & set(_roles(b)))


@dataclass(frozen=True)
class EmbeddingHyperparams:
    d_hidden: int = 128
    steps: int = 400
    batch: int = 64
    lr: float = 3e-3
    margin: float = 0.2
    seed: int = 0


def train_local_embeddings(label_corpus: Sequence[str], dims: int = 512,
                           hyperparams: EmbeddingHyperparams = EmbeddingHyperparams()) -> tuple[EmbeddingTable, CompositionalEncoder]:
    """Fit a compositional encoder with a triplet objective on constituent overlap.

    For an anchor text, a positive sharing more role-tagged constituents than
    the negative must be closer by ``margin`` in cosine similarity. The
    returned table covers the corpus and extends itself through the encoder,
    so texts with unseen letters still get vectors.
    """
    corpus = sorted(set(label_corpus))
    if not corpus:
        raise ConfigError("embedding corpus is empty")
    if dims < 1 or hyperparams.steps < 1 or hyperparams.batch < 1 or hyperparams.lr <= 0:
        raise ConfigError(f"degenerate embedding hyperparameters: dims={dims}, {hyperparams}")
    torch.manual_seed(hyperparams.seed)
    rng = np.random.default_rng(hyperparams.seed)
    enc = CompositionalEncoder(dims, hyperparams.d_hidden)
    feats, mask = enc.featurise(corpus)
    role_sets = [set(_roles(t)) for t in corpus]
    opt = torch.optim.Adam(enc.parameters(), lr=hyperparams.lr)
    n = len(corpus)
    for _ in range(hyperparams.steps if n > 2 else 0):
        a = rng.integers(n, size=hyperparams.batch)
        b = rng.integers(n, size=hyperparams.batch)
        c = rng.integers(n, size=hyperparams.batch)
        ob = np.array([len(role_sets[i] & role_sets[j]) for i, j in zip(a, b)])
        oc = np.array([len(role_sets[i] & role_sets[j]) for i, j in zip(a, c)])
        keep = ob != oc
        if not keep.any():
            continue
        pos = np.where(ob > oc, b, c)[keep]
        neg = np.where(ob > oc, c, b)[keep]
        anc = a[keep]
        e = enc(feats, mask)
        sp = (e[anc] * e[pos]).sum(-1)
        sn = (e[anc] * e[neg]).sum(-1)
        loss = torch.relu(hyperparams.margin - sp + sn).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    enc.eval()
    table = EmbeddingTable(dims, "trained-locally", encoder=enc.encode)
    table.extend(corpus)
    return table, enc


def save_encoder(enc: CompositionalEncoder, path: Path | str) -> None:
    torch.save({"format_version": EMBEDDING_FORMAT_VERSION, "d_emb": enc.out[1].out_features,
                "d_hidden": enc.out[1].in_features, "params": enc.state_dict()}, path)


def load_encoder(path: Path | str) -> CompositionalEncoder:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != EMBEDDING_FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported encoder format")
    enc = CompositionalEncoder(blob["d_emb"], blob["d_hidden"])
    enc.load_state_dict(blob["params"])
    enc.eval()
    return enc


def load_local_table(table_path: Path | str, encoder_path: Path | str) -> EmbeddingTable:
    """A saved locally trained table that keeps extending itself through its encoder."""
    frozen = load_table(table_path)
    enc = load_encoder(encoder_path)
    return EmbeddingTable(frozen.d_emb, "trained-locally", dict(frozen.vectors), encoder=enc.encode)
