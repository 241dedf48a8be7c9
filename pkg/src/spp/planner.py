"""Language-only task planner.

A task ("Spell the word W") is serialized together with its plan as::

    <task>[SEP]<instr1>[CSEP]<instr2>[CSEP]<instr3>[CSEP]<instr4>[EOS]

and a small causal transformer is trained on these sequences.  Letters of the
target word can be copied through a pointer head, and each letter token is
tagged with its position in the target word, so the model learns plan
structure rather than word-specific letter statistics.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from spp.core import (
    COLORS,
    LETTERS,
    N_CELLS,
    QUARTER_NAMES,
    BoardPose,
    ExecutionError,
    Instruction,
    ParseError,
    Plan,
    Side,
    SymbolicState,
    Tile,
    apply_instruction,
    high_level_text,
    instruction_to_text,
    parse_high_level,
    parse_instruction,
    spelled_word,
)
from spp.datagen.scene import InvalidWord, Scene, plan_for_objects, rng_for
from spp.errors import ConfigError, VersionMismatch

PLANNER_VERSION = 1

SEP, CSEP, EOS, PAD = "[SEP]", "[CSEP]", "[EOS]", "[PAD]"
DELIMITERS = (SEP, CSEP, EOS)
TASK_WORDS = ("spell", "the", "word")
TEMPLATE_WORDS = ("pick", "and", "place", "the", "on", "quarter", "of")


class DecodeError(ValueError):
    """Model output that is not a well-formed 4-instruction plan."""

    def __init__(self, message: str, segments: Sequence[str] = ()):
        super().__init__(message)
        self.segments = list(segments)


class TokenizeError(ValueError):
    pass


# --------------------------------------------------------------------------- vocabulary


class PlannerVocabulary:
    def __init__(self, tokens: Optional[Sequence[str]] = None):
        if tokens is None:
            words = list(dict.fromkeys(TASK_WORDS + TEMPLATE_WORDS))
            tokens = (
                [PAD, *DELIMITERS]
                + words
                + [c.value for c in COLORS]
                + list(QUARTER_NAMES)
                + [s.value for s in Side]
                + list(LETTERS)
            )
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.letter_ids = torch.tensor([self.index[ch] for ch in LETTERS])

    def __len__(self) -> int:
        return len(self.tokens)

    def _lookup(self, word: str) -> str:
        if word in self.index:
            return word
        if word.lower() in self.index:
            return word.lower()
        raise TokenizeError(f"token {word!r} is not in the planner vocabulary")

    def tokenize_task(self, high_level: str) -> list[str]:
        word = parse_high_level(high_level)
        return list(TASK_WORDS) + list(word)

    def tokenize_instruction(self, text: str) -> list[str]:
        return [self._lookup(w) if w not in LETTERS else w for w in text.split()]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index[t] for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def _untokenize_instruction(tokens: Sequence[str]) -> str:
    text = " ".join(tokens)
    return text[:1].upper() + text[1:]


def serialize_example(high_level: str, plan: Plan | Sequence[str],
                      vocab: Optional[PlannerVocabulary] = None) -> list[str]:
    vocab = vocab or PlannerVocabulary()
    texts = [p if isinstance(p, str) else instruction_to_text(p) for p in plan]
    seq = vocab.tokenize_task(high_level) + [SEP]
    for i, t in enumerate(texts):
        if i:
            seq.append(CSEP)
        seq.extend(vocab.tokenize_instruction(t))
    seq.append(EOS)
    return seq


def split_segments(tokens: Sequence[str]) -> tuple[list[str], list[list[str]]]:
    """(task tokens, instruction token lists) of a serialized sequence."""
    tokens = list(tokens)
    if SEP not in tokens:
        raise DecodeError("no [SEP] delimiter")
    cut = tokens.index(SEP)
    task, rest = tokens[:cut], tokens[cut + 1:]
    if EOS in rest:
        rest = rest[: rest.index(EOS)]
    segments: list[list[str]] = [[]]
    for t in rest:
        if t == CSEP:
            segments.append([])
        else:
            segments[-1].append(t)
    if segments == [[]]:
        segments = []
    return task, segments


def deserialize_example(tokens: Sequence[str]) -> tuple[str, Plan]:
    task, segments = split_segments(tokens)
    if task[:3] != list(TASK_WORDS):
        raise DecodeError("sequence does not start with a spelling task")
    high_level = high_level_text("".join(task[3:]))
    texts = [_untokenize_instruction(s) for s in segments]
    try:
        plan = tuple(parse_instruction(t) for t in texts)
    except ParseError as exc:
        raise DecodeError(str(exc), texts) from None
    return high_level, plan


# --------------------------------------------------------------------------- oracle


def oracle_plan(word: str, scene: Scene, seed: int) -> Plan:
    """Scene-aware scripted plan: random order, colors read from the scene."""
    word = word.strip().upper()
    objects = []
    for ch in word:
        tiles = [t for t in scene.state0.staging if t.letter == ch]
        if not tiles:
            raise InvalidWord(f"scene has no tile with letter {ch}")
        objects.append(tiles[0].object)
    if len(set(word)) != len(word) or len(word) != N_CELLS:
        raise InvalidWord(f"cannot spell {word!r} on a {N_CELLS}-cell board")
    rng = rng_for(seed, "oracle", word)
    order = [int(i) for i in rng.permutation(N_CELLS)]
    return plan_for_objects(objects, order, rng)


def random_plan(word: str, seed: int) -> Plan:
    """Scripted plan with random tile colors, for language-only training data."""
    rng = rng_for(seed, "random-plan", word)
    objects = [(COLORS[int(rng.integers(len(COLORS)))], ch) for ch in word]
    order = [int(i) for i in rng.permutation(N_CELLS)]
    return plan_for_objects(objects, order, rng)


# --------------------------------------------------------------------------- validation


class FailureReason(str, Enum):
    UNPARSEABLE = "unparseable"
    ILLEGAL = "illegal"
    INCOMPLETE = "incomplete"
    TOO_LONG = "too_long"
    WRONG_WORD = "wrong_word"


@dataclass(frozen=True)
class ValidationResult:
    per_action: tuple[bool, ...]
    task_ok: bool
    failure_reason: Optional[FailureReason] = None


def _granting_state(plan: Sequence[Instruction]) -> SymbolicState:
    objs = list(dict.fromkeys(i.object for i in plan))
    staging = tuple(Tile(letter=o[1], color=o[0], position=(0.0, 0.0)) for o in objs)
    return SymbolicState(board_pose=BoardPose(0.5, 0.5, 1.0, 0.25), staging=staging)


def validate_plan(word: str, plan_text: Sequence[str]) -> ValidationResult:
    """Symbolic check of a plan, ignoring whether the scene holds its tiles."""
    parsed: list[Optional[Instruction]] = []
    for t in plan_text:
        try:
            parsed.append(parse_instruction(t))
        except ParseError:
            parsed.append(None)
    state = _granting_state([p for p in parsed if p is not None])
    per_action = []
    for instr in parsed:
        if instr is None:
            per_action.append(False)
            continue
        try:
            state = apply_instruction(state, instr)
            per_action.append(True)
        except ExecutionError:
            per_action.append(False)
    reason: Optional[FailureReason] = None
    if any(p is None for p in parsed):
        reason = FailureReason.UNPARSEABLE
    elif not all(per_action):
        reason = FailureReason.ILLEGAL
    elif len(parsed) < N_CELLS:
        reason = FailureReason.INCOMPLETE
    elif len(parsed) > N_CELLS:
        reason = FailureReason.TOO_LONG
    elif spelled_word(state) != word.strip().upper():
        reason = FailureReason.WRONG_WORD
    return ValidationResult(tuple(per_action), reason is None, reason)


# --------------------------------------------------------------------------- model


class TokenModel(Protocol):
    """Anything that maps a token-id prefix to a next-token distribution."""

    vocab: PlannerVocabulary
    max_len: int

    def next_token_probs(self, prefix: Sequence[int]) -> torch.Tensor: ...


@dataclass(frozen=True)
class PlannerHyperparams:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 72
    dropout: float = 0.1
    epochs: int = 60
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 0.01
    plans_per_word: int = 8
    seed: int = 0

    def check(self) -> None:
        if self.d_model <= 0 or self.n_layers <= 0 or self.n_heads <= 0 or self.d_model % self.n_heads:
            raise ConfigError(f"degenerate planner shape: d_model={self.d_model}, n_heads={self.n_heads}")
        if self.epochs <= 0 or self.batch_size <= 0 or not self.lr > 0 or self.plans_per_word < 0:
            raise ConfigError(f"degenerate planner training settings: {self}")
        if not 0 <= self.dropout < 1 or self.max_len < 8:
            raise ConfigError(f"degenerate planner settings: dropout={self.dropout}, max_len={self.max_len}")


def word_slots(ids: torch.Tensor, vocab: PlannerVocabulary) -> torch.Tensor:
    """Per token: 1 + index of that letter in the task word, 0 otherwise.

    ``ids`` is (B, T) and must start with the task tokens.
    """
    word = ids[:, len(TASK_WORDS): len(TASK_WORDS) + N_CELLS]  # (B, 4)
    match = ids[:, :, None] == word[:, None, :]  # (B, T, 4)
    is_letter = torch.isin(ids, vocab.letter_ids.to(ids.device))
    slot = (match.float().argmax(-1) + 1) * match.any(-1)
    return slot * is_letter


class PlannerModel(nn.Module):
    """Causal transformer with a copy head over the task word's letters."""

    def __init__(self, vocab: Optional[PlannerVocabulary] = None, hp: PlannerHyperparams = PlannerHyperparams()):
        super().__init__()
        hp.check()
        self.vocab = vocab or PlannerVocabulary()
        self.hp = hp
        self.max_len = hp.max_len
        d = hp.d_model
        self.tok = nn.Embedding(len(self.vocab), d)
        self.pos = nn.Embedding(hp.max_len, d)
        self.slot = nn.Embedding(N_CELLS + 1, d)
        layer = nn.TransformerEncoderLayer(d, hp.n_heads, 4 * d, hp.dropout, batch_first=True, norm_first=True)
        self.body = nn.TransformerEncoder(layer, hp.n_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, len(self.vocab))
        self.copy_q = nn.Linear(d, d)
        self.copy_k = nn.Linear(d, d)
        self.copy_gate = nn.Linear(d, 1)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, T) token ids -> (B, T, V) next-token log-probabilities."""
        b, t = ids.shape
        if t > self.max_len:
            raise ValueError(f"sequence of {t} tokens exceeds context {self.max_len}")
        pos = torch.arange(t, device=ids.device)
        x = self.tok(ids) + self.pos(pos)[None] + self.slot(word_slots(ids, self.vocab))
        mask = nn.Transformer.generate_square_subsequent_mask(t, device=ids.device)
        h = self.norm(self.body(x, mask=mask, is_causal=True))
        gen = self.head(h).log_softmax(-1)
        # pointer over the four task letters
        lo = len(TASK_WORDS)
        keys = self.copy_k(h[:, lo: lo + N_CELLS])  # (B, 4, d)
        scores = torch.einsum("btd,bkd->btk", self.copy_q(h), keys) / math.sqrt(h.shape[-1])
        attn = scores.softmax(-1)
        word = ids[:, lo: lo + N_CELLS]
        copy = torch.zeros(b, t, len(self.vocab), device=ids.device, dtype=h.dtype)
        copy.scatter_add_(2, word[:, None, :].expand(b, t, N_CELLS), attn)
        g = torch.sigmoid(self.copy_gate(h))
        mixed = (1 - g) * gen.exp() + g * copy
        return torch.log(mixed.clamp_min(1e-12))

    @torch.no_grad()
    def next_token_probs(self, prefix: Sequence[int]) -> torch.Tensor:
        ids = torch.tensor([list(prefix)])
        return self(ids)[0, -1].exp()


def _example_ids(high_level: str, plan, vocab: PlannerVocabulary) -> list[int]:
    return vocab.encode(serialize_example(high_level, plan, vocab))


def _pad(seqs: Sequence[Sequence[int]], pad: int) -> torch.Tensor:
    n = max(len(s) for s in seqs)
    out = torch.full((len(seqs), n), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s)
    return out


@dataclass
class PlannerTrainResult:
    model: PlannerModel
    trace: list[dict] = field(default_factory=list)


def training_pairs(pairs: Sequence[tuple[str, Plan | Sequence[str]]], plans_per_word: int,
                   seed: int) -> list[tuple[str, Plan | Sequence[str]]]:
    """Given pairs plus ``plans_per_word`` extra scripted plans per distinct word."""
    out = list(pairs)
    words = sorted({parse_high_level(h) for h, _ in pairs})
    for w in words:
        for k in range(plans_per_word):
            out.append((high_level_text(w), random_plan(w, seed * 1000 + k)))
    return out


def train_planner(pairs: Sequence[tuple[str, Plan | Sequence[str]]],
                  hp: PlannerHyperparams = PlannerHyperparams(), log=None) -> PlannerTrainResult:
    """Next-token cross-entropy on the plan part of serialized examples."""
    hp.check()
    if not pairs:
        raise ConfigError("planner training set is empty")
    torch.manual_seed(hp.seed)
    vocab = PlannerVocabulary()
    model = PlannerModel(vocab, hp)
    data = training_pairs(pairs, hp.plans_per_word, hp.seed)
    seqs = [_example_ids(h, p, vocab) for h, p in data]
    if max(len(s) for s in seqs) > hp.max_len:
        raise ConfigError(f"max_len {hp.max_len} shorter than the longest example")
    ids = _pad(seqs, vocab.index[PAD])
    sep = vocab.index[SEP]
    # targets: every token after [SEP]; the task itself is given, not predicted
    tgt = ids[:, 1:].clone()
    after_sep = (ids == sep).long().cumsum(1)[:, :-1] > 0
    tgt[~after_sep | (tgt == vocab.index[PAD])] = -100
    opt = torch.optim.AdamW(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=hp.lr, total_steps=hp.epochs * math.ceil(len(seqs) / hp.batch_size))
    rng = np.random.default_rng(hp.seed)
    trace = []
    for epoch in range(hp.epochs):
        model.train()
        perm = rng.permutation(len(seqs))
        total, count = 0.0, 0
        for i in range(0, len(perm), hp.batch_size):
            idx = torch.from_numpy(perm[i: i + hp.batch_size])
            logp = model(ids[idx, :-1])
            loss = F.nll_loss(logp.reshape(-1, logp.shape[-1]), tgt[idx].reshape(-1), ignore_index=-100)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "loss": total / count}
        trace.append(row)
        if log:
            log(row)
    model.eval()
    return PlannerTrainResult(model, trace)


# --------------------------------------------------------------------------- decoding


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "greedy"  # or "sample"
    temperature: float = 1.0


def generate(model: TokenModel, high_level: str, seed: int = 0,
             decoding: DecodeConfig = DecodeConfig()) -> list[str]:
    """Raw token continuation after ``<task>[SEP]`` up to [EOS] or the context limit."""
    vocab = model.vocab
    prefix = vocab.encode(vocab.tokenize_task(high_level) + [SEP])
    gen = torch.Generator().manual_seed(int(seed))
    out: list[str] = []
    if isinstance(model, nn.Module):
        model.eval()
    while len(prefix) < model.max_len:
        probs = model.next_token_probs(prefix)
        if decoding.strategy == "greedy":
            nxt = int(probs.argmax())
        elif decoding.strategy == "sample":
            logits = probs.clamp_min(1e-12).log() / decoding.temperature
            nxt = int(torch.multinomial(logits.softmax(-1), 1, generator=gen))
        else:
            raise ConfigError(f"unknown decoding strategy {decoding.strategy!r}")
        tok = vocab.tokens[nxt]
        out.append(tok)
        if tok == EOS:
            break
        prefix.append(nxt)
    return out


def plan_texts(model: TokenModel, high_level: str, seed: int = 0,
               decoding: DecodeConfig = DecodeConfig()) -> list[str]:
    """Instruction strings of a decoded plan, well-formed or not."""
    tokens = generate(model, high_level, seed, decoding)
    _, segments = split_segments([SEP] + tokens)
    return [_untokenize_instruction(s) for s in segments]


def plan(model: TokenModel, high_level: str, seed: int = 0, decoding: DecodeConfig = DecodeConfig()) -> Plan:
    parse_high_level(high_level)
    texts = plan_texts(model, high_level, seed, decoding)
    if len(texts) != N_CELLS:
        raise DecodeError(f"expected {N_CELLS} instructions, decoded {len(texts)}", texts)
    try:
        return tuple(parse_instruction(t) for t in texts)
    except ParseError as exc:
        raise DecodeError(f"malformed instruction: {exc}", texts) from None


# --------------------------------------------------------------------------- metrics

_Z95 = statistics.NormalDist().inv_cdf(0.975)


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the interval touches 0 (or 1) exactly when no (or every) trial succeeded
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return (lo, hi)


def planner_metrics(model: TokenModel, test_words: Sequence[str], n_samples: int = 1, seed: int = 0,
                    decoding: DecodeConfig = DecodeConfig()) -> dict:
    """Action- and task-level plan validity with Wilson 95% intervals.

    Missing instructions (fewer than four decoded) count as failed actions.
    """
    if not test_words:
        raise ValueError("test_words is empty")
    n_actions = ok_actions = n_tasks = ok_tasks = 0
    for word in test_words:
        for k in range(n_samples):
            texts = plan_texts(model, high_level_text(word), seed + k, decoding)
            res = validate_plan(word, texts)
            per = list(res.per_action) + [False] * max(0, N_CELLS - len(res.per_action))
            n_actions += len(per)
            ok_actions += sum(per)
            n_tasks += 1
            ok_tasks += res.task_ok
    return {
        "action_rate": ok_actions / n_actions,
        "task_rate": ok_tasks / n_tasks,
        "n_words": len(test_words),
        "n_actions": n_actions,
        "ci95": {
            "action_rate": list(wilson_interval(ok_actions, n_actions)),
            "task_rate": list(wilson_interval(ok_tasks, n_tasks)),
        },
    }


class FixedPlanModel:
    """Token model that always emits one serialized plan (a test and baseline helper)."""

    def __init__(self, high_level: str, plan: Plan | Sequence[str], vocab: Optional[PlannerVocabulary] = None):
        self.vocab = vocab or PlannerVocabulary()
        self.max_len = 128
        seq = serialize_example(high_level, plan, self.vocab)
        self._tail = self.vocab.encode(seq[seq.index(SEP) + 1:])

    def next_token_probs(self, prefix: Sequence[int]) -> torch.Tensor:
        sep = self.vocab.index[SEP]
        k = len(prefix) - 1 - list(prefix).index(sep)
        probs = torch.zeros(len(self.vocab))
        probs[self._tail[min(k, len(self._tail) - 1)]] = 1.0
        return probs


# --------------------------------------------------------------------------- checkpoints


def save_planner(model: PlannerModel, path: Path | str, extra: Optional[dict] = None) -> None:
    torch.save({
        "format_version": PLANNER_VERSION,
        "vocabulary": list(model.vocab.tokens),
        "hyperparams": asdict(model.hp),
        "params": model.state_dict(),
        "extra": extra or {},
    }, path)


def load_planner(path: Path | str) -> PlannerModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != PLANNER_VERSION:
        raise VersionMismatch(f"{path}: unsupported planner checkpoint version {blob.get('format_version')!r}")
    model = PlannerModel(PlannerVocabulary(blob["vocabulary"]), PlannerHyperparams(**blob["hyperparams"]))
    model.load_state_dict(blob["params"])
    model.eval()
    return model
