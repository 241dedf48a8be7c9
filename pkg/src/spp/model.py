"""Language-conditioned stochastic keyframe predictor.

One step maps the previous keyframe and an instruction to the next keyframe::

    o_t = D(P(C'(E(o_{t-1}) | L_t) | h_{t-1}), skips(o_{t-1}))

E/D are a DCGAN-style convolutional encoder/decoder with skip connections
from the conditioning frame. C' is the concept-slot module: K learned slot
heads read frame features, the language signal gates the slots, and a fusion
head produces the conditioning vector. P is an LSTM consuming the
conditioning vector and a latent sample from a learned recurrent prior
(training uses the posterior over the target keyframe).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from spp.errors import ArtifactMissing, VersionMismatch
from spp.lang import (
    ConceptDictionary,
    ConfigError,
    DimensionMismatch,
    EmbeddingTable,
    GateParams,
    embed_text,
    encode_onehot,
    gate_from_embedding,
    load_local_table,
    load_table,
    save_encoder,
    save_table,
)

CHECKPOINT_VERSION = 1
MODES = ("none", "high_level_only", "per_step")
KINDS = ("onehot", "continuous")


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    resolution: int = 64
    nf: int = 16
    d_feat: int = 128
    n_slots: int = 8
    d_slot: int = 8
    d_z: int = 16
    d_rnn: int = 128
    d_prior: int = 64
    d_emb: int = 512
    logvar_min: float = -10.0
    logvar_max: float = 5.0
    composite: bool = True
    n_broadcast: int = 16
    gate_init_scale: float = 5.0

    @property
    def d_gate(self) -> int:
        return self.n_slots * self.d_slot


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 2e-3
    beta: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0
    snapshot_every: int = 0
    grad_clip: float = 5.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.beta < 0:
            raise ConfigError(f"degenerate training config {self}")


# --------------------------------------------------------------------------- gaussians


@dataclass
class LatentGaussian:
    mean: torch.Tensor
    logvar: torch.Tensor

    def sample(self, noise: torch.Tensor) -> torch.Tensor:
        return self.mean + torch.exp(0.5 * self.logvar) * noise


def kl_diag_gaussians(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    return 0.5 * torch.sum(
        p.logvar - q.logvar + (torch.exp(q.logvar) + (q.mean - p.mean) ** 2) / torch.exp(p.logvar) - 1.0,
        dim=-1,
    )


def vae_loss(pred: torch.Tensor, target: torch.Tensor, q: LatentGaussian, p: LatentGaussian,
             beta: float) -> dict[str, torch.Tensor]:
    """Per-pixel MSE plus beta-weighted KL (summed over latent dims, averaged elsewhere)."""
    recon = torch.mean((pred - target) ** 2)
    kl = torch.mean(kl_diag_gaussians(q, p))
    return {"total": recon + beta * kl, "reconstruction": recon, "kl": kl}


# --------------------------------------------------------------------------- networks


class Encoder(nn.Module):
    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        nf = cfg.nf
        self.resolution = cfg.resolution
        chans = [3, nf, 2 * nf, 4 * nf, 8 * nf]
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.Conv2d(a, b, 4, 2, 1), nn.LeakyReLU(0.2)) for a, b in zip(chans, chans[1:])
        )
        side = cfg.resolution // 16
        self.out = nn.Sequential(nn.Conv2d(8 * nf, cfg.d_feat, side, 1, 0), nn.Tanh())

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if x.dim() != 4 or x.shape[1:] != (3, self.resolution, self.resolution):
            raise ShapeMismatch(f"expected (N, 3, {self.resolution}, {self.resolution}) frames, got {tuple(x.shape)}")
        skips = []
        h = x
        for block in self.blocks:
            h = block(h)
            skips.append(h)
        return self.out(h).flatten(1), skips


class Decoder(nn.Module):
    """Mirrors the encoder; optionally composites over the conditioning frame."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        nf = cfg.nf
        side = cfg.resolution // 16
        self.skip_chans = [nf, 2 * nf, 4 * nf, 8 * nf]
        self.side = side
        self.composite = cfg.composite
        self.inp = nn.Sequential(nn.ConvTranspose2d(cfg.d_feat, 8 * nf, side, 1, 0), nn.LeakyReLU(0.2))
        # the feature vector is also broadcast (with x/y coordinates) into every scale
        nb = cfg.n_broadcast
        self.broadcast = nn.ModuleList(nn.Linear(cfg.d_feat, nb) for _ in range(4))
        extra = nb + 2 if nb else 0
        ups = [(16 * nf + extra, 4 * nf), (8 * nf + extra, 2 * nf), (4 * nf + extra, nf)]
        self.ups = nn.ModuleList(
            nn.Sequential(nn.ConvTranspose2d(a, b, 4, 2, 1), nn.LeakyReLU(0.2)) for a, b in ups
        )
        self.final = nn.ConvTranspose2d(2 * nf + extra, 3, 4, 2, 1)
        self.n_broadcast = nb

    def _with_broadcast(self, h: torch.Tensor, feat: torch.Tensor, i: int) -> torch.Tensor:
        if not self.n_broadcast:
            return h
        n, _, hh, ww = h.shape
        b = self.broadcast[i](feat)[:, :, None, None].expand(n, -1, hh, ww)
        ys = torch.linspace(-1, 1, hh, dtype=h.dtype).view(1, 1, hh, 1).expand(n, 1, hh, ww)
        xs = torch.linspace(-1, 1, ww, dtype=h.dtype).view(1, 1, 1, ww).expand(n, 1, hh, ww)
        return torch.cat([h, b, xs, ys], 1)

    def forward(self, feat: torch.Tensor, skips: Optional[list[torch.Tensor]] = None,
                prev: Optional[torch.Tensor] = None) -> torch.Tensor:
        n = feat.shape[0]
        if skips is None:
            skips = [feat.new_zeros(n, c, self.side * 2 ** (3 - i), self.side * 2 ** (3 - i))
                     for i, c in enumerate(self.skip_chans)]
        h = self.inp(feat[:, :, None, None])
        for i, (up, skip) in enumerate(zip(self.ups, reversed(skips[1:]))):
            h = up(self._with_broadcast(torch.cat([h, skip], 1), feat, i))
        out = self.final(self._with_broadcast(torch.cat([h, skips[0]], 1), feat, 3))
        if self.composite and prev is not None:
            # residual in logit space: zero output means "unchanged"
            p = prev.clamp(1e-3, 1 - 1e-3)
            out = out + torch.log(p) - torch.log1p(-p)
        return torch.sigmoid(out)


class ConceptSlots(nn.Module):
    """Concept-slot conditioning: per-slot heads, language gates, fusion head."""

    def __init__(self, cfg: PredictorConfig, mode: str, kind: str, n_concepts: int = 0):
        super().__init__()
        self.mode, self.kind = mode, kind
        self.d_slot = cfg.d_slot
        if mode != "none" and kind == "onehot":
            if n_concepts < 1:
                raise ConfigError("one-hot conditioning needs a non-empty concept dictionary")
            self.n_slots = n_concepts
        else:
            self.n_slots = cfg.n_slots
        self.heads = nn.Linear(cfg.d_feat, self.n_slots * cfg.d_slot)
        self.fuse = nn.Sequential(nn.Linear(self.n_slots * cfg.d_slot, cfg.d_feat), nn.Tanh())
        self.gate = (GateParams(cfg.d_emb, cfg.d_gate, cfg.gate_init_scale)
                     if (mode != "none" and kind == "continuous") else None)

    @property
    def cond_dim(self) -> int:
        if self.mode == "none":
            return 0
        return self.n_slots if self.kind == "onehot" else self.gate.weight.shape[0]

    def gates(self, lang: torch.Tensor) -> torch.Tensor:
        n = lang.shape[0]
        if self.mode == "none":
            return lang.new_ones(n, self.n_slots, self.d_slot)
        if lang.shape[-1] != self.cond_dim:
            raise DimensionMismatch(f"conditioning has {lang.shape[-1]} dims, expected {self.cond_dim}")
        if self.kind == "onehot":
            return lang[:, :, None].expand(n, self.n_slots, self.d_slot)
        return gate_from_embedding(lang, self.gate).view(n, self.n_slots, self.d_slot)

    def forward(self, feat: torch.Tensor, lang: torch.Tensor) -> torch.Tensor:
        w = torch.tanh(self.heads(feat)).view(-1, self.n_slots, self.d_slot)
        return self.fuse((self.gates(lang) * w).flatten(1))


class GaussianLSTM(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_z: int, logvar_range: tuple[float, float]):
        super().__init__()
        self.cell = nn.LSTMCell(d_in, d_hidden)
        self.head = nn.Linear(d_hidden, 2 * d_z)
        self.d_hidden = d_hidden
        self.logvar_range = logvar_range

    def init_state(self, n: int, ref: torch.Tensor):
        z = ref.new_zeros(n, self.d_hidden)
        return (z, z.clone())

    def forward(self, x, state):
        h, c = self.cell(x, state)
        mean, logvar = self.head(h).chunk(2, -1)
        return LatentGaussian(mean, logvar.clamp(*self.logvar_range)), (h, c)


@dataclass
class PredictorState:
    """Recurrent state carried across keyframe steps."""

    predictor: tuple[torch.Tensor, torch.Tensor]
    prior: tuple[torch.Tensor, torch.Tensor]
    posterior: tuple[torch.Tensor, torch.Tensor]


class KeyframePredictor(nn.Module):
    def __init__(self, cfg: PredictorConfig = PredictorConfig(), mode: str = "per_step",
                 kind: str = "continuous", n_concepts: int = 0):
        super().__init__()
        if mode not in MODES or kind not in KINDS:
            raise ConfigError(f"unknown mode/kind {mode}/{kind}")
        self.cfg, self.mode = cfg, mode
        self.kind = kind if mode != "none" else "none"
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.slots = ConceptSlots(cfg, mode, kind, n_concepts)
        lv = (cfg.logvar_min, cfg.logvar_max)
        self.prior_net = GaussianLSTM(cfg.d_feat, cfg.d_prior, cfg.d_z, lv)
        self.posterior_net = GaussianLSTM(cfg.d_feat, cfg.d_prior, cfg.d_z, lv)
        self.cell = nn.LSTMCell(cfg.d_feat + cfg.d_z, cfg.d_rnn)
        self.out = nn.Sequential(nn.Linear(cfg.d_rnn, cfg.d_feat), nn.Tanh())

    @property
    def cond_dim(self) -> int:
        return self.slots.cond_dim

    # -- single operations -------------------------------------------------

    def encode(self, frames: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        return self.encoder(frames)

    def decode(self, feat: torch.Tensor, skips=None, prev=None) -> torch.Tensor:
        return self.decoder(feat, skips, prev)

    def condition(self, feat: torch.Tensor, lang: torch.Tensor) -> torch.Tensor:
        return self.slots(feat, lang)

    def init_state(self, n: int) -> PredictorState:
        ref = next(self.parameters())
        z = ref.new_zeros(n, self.cfg.d_rnn)
        return PredictorState((z, z.clone()), self.prior_net.init_state(n, ref),
                              self.posterior_net.init_state(n, ref))

    def prior(self, c: torch.Tensor, state: PredictorState) -> tuple[LatentGaussian, PredictorState]:
        dist, s = self.prior_net(c, state.prior)
        return dist, PredictorState(state.predictor, s, state.posterior)

    def posterior(self, target_feat: torch.Tensor, state: PredictorState) -> tuple[LatentGaussian, PredictorState]:
        dist, s = self.posterior_net(target_feat, state.posterior)
        return dist, PredictorState(state.predictor, state.prior, s)

    def predict_step(self, state: PredictorState, c: torch.Tensor, z: torch.Tensor) -> tuple[torch.Tensor, PredictorState]:
        h, cc = self.cell(torch.cat([c, z], -1), state.predictor)
        return self.out(h), PredictorState((h, cc), state.prior, state.posterior)

    # -- sequences ---------------------------------------------------------

    def _lang(self, lang: Optional[torch.Tensor], n: int, steps: int, ref: torch.Tensor) -> torch.Tensor:
        if self.mode == "none" or lang is None:
            return ref.new_zeros(n, steps, self.cond_dim)
        return lang

    def forward(self, frames: torch.Tensor, lang: Optional[torch.Tensor], noise: torch.Tensor):
        """Teacher-forced pass over (N, T+1, 3, H, W) keyframes.

        Returns predictions (N, T, 3, H, W) and the per-step posterior and
        prior Gaussians stacked along time.
        """
        n, t1 = frames.shape[:2]
        steps = t1 - 1
        feats, skips = self.encode(frames.flatten(0, 1))
        feats = feats.view(n, t1, -1)
        skips = [s.view(n, t1, *s.shape[1:]) for s in skips]
        lang = self._lang(lang, n, steps, frames)
        state = self.init_state(n)
        outs, qs, ps = [], [], []
        for t in range(steps):
            c = self.condition(feats[:, t], lang[:, t])
            q, state = self.posterior(feats[:, t + 1], state)
            p, state = self.prior(c, state)
            g, state = self.predict_step(state, c, q.sample(noise[:, t]))
            outs.append(g)
            qs.append(q)
            ps.append(p)
        g = torch.stack(outs, 1).flatten(0, 1)
        prev_skips = [s[:, :-1].flatten(0, 1) for s in skips]
        pred = self.decode(g, prev_skips, frames[:, :-1].flatten(0, 1)).view(n, steps, *frames.shape[2:])
        q = LatentGaussian(torch.stack([d.mean for d in qs], 1), torch.stack([d.logvar for d in qs], 1))
        p = LatentGaussian(torch.stack([d.mean for d in ps], 1), torch.stack([d.logvar for d in ps], 1))
        return pred, q, p

    def loss(self, frames: torch.Tensor, lang: Optional[torch.Tensor], beta: float,
             noise: Optional[torch.Tensor] = None, generator: Optional[torch.Generator] = None) -> dict:
        n, steps = frames.shape[0], frames.shape[1] - 1
        if noise is None:
            noise = torch.randn(n, steps, self.cfg.d_z, generator=generator, dtype=frames.dtype)
        pred, q, p = self(frames, lang, noise)
        return vae_loss(pred, frames[:, 1:], q, p, beta)

    @torch.no_grad()
    def rollout(self, o0: torch.Tensor, lang: Optional[torch.Tensor], n_steps: int,
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Autoregressive prediction from (N, 3, H, W) frames with prior samples."""
        n = o0.shape[0]
        lang = self._lang(lang, n, n_steps, o0)
        if lang.shape[1] < n_steps:
            raise ValueError(f"need {n_steps} conditioning steps, got {lang.shape[1]}")
        state = self.init_state(n)
        frame = o0
        out = []
        for t in range(n_steps):
            feat, skips = self.encode(frame)
            c = self.condition(feat, lang[:, t])
            p, state = self.prior(c, state)
            noise = torch.randn(n, self.cfg.d_z, generator=generator, dtype=o0.dtype)
            g, state = self.predict_step(state, c, p.sample(noise))
            frame = self.decode(g, skips, frame)
            out.append(frame)
        return torch.stack(out, 1)


# --------------------------------------------------------------------------- conditioning


@dataclass
class Conditioner:
    """Turns label texts into the tensors a predictor of a given mode/kind expects."""

    mode: str
    kind: str
    dictionary: Optional[ConceptDictionary] = None
    table: Optional[EmbeddingTable] = None

    def __post_init__(self) -> None:
        if self.mode != "none":
            if self.kind == "onehot" and self.dictionary is None:
                raise ConfigError("one-hot conditioning requires a concept dictionary")
            if self.kind == "continuous" and self.table is None:
                raise ConfigError("continuous conditioning requires an embedding table")

    @property
    def n_concepts(self) -> int:
        return len(self.dictionary) if self.dictionary is not None else 0

    def texts(self, high_level: str, low_level: Sequence[str]) -> list[str]:
        if self.mode == "high_level_only":
            return [high_level] * len(low_level)
        return list(low_level)

    def vector(self, text: str) -> np.ndarray:
        if self.kind == "onehot":
            return encode_onehot(text, self.dictionary)
        return embed_text(text, self.table)

    def encode(self, high_level: str, low_level: Sequence[str]) -> Optional[torch.Tensor]:
        """(T, dim) tensor, or None in mode none."""
        if self.mode == "none":
            return None
        return torch.from_numpy(np.stack([self.vector(t) for t in self.texts(high_level, low_level)]))

    def batch(self, pairs: Sequence[tuple[str, Sequence[str]]]) -> Optional[torch.Tensor]:
        if self.mode == "none":
            return None
        return torch.stack([self.encode(h, l) for h, l in pairs])


def build_predictor(cfg: PredictorConfig, conditioner: Conditioner) -> KeyframePredictor:
    kind = conditioner.kind if conditioner.mode != "none" else "continuous"
    return KeyframePredictor(cfg, conditioner.mode, kind, conditioner.n_concepts)


# --------------------------------------------------------------------------- training


def frames_tensor(frames: Sequence[np.ndarray]) -> torch.Tensor:
    """(T, H, W, 3) arrays -> (T, 3, H, W) float tensor."""
    return torch.from_numpy(np.stack(frames)).permute(0, 3, 1, 2).contiguous().float()


def tensor_frames(x: torch.Tensor) -> np.ndarray:
    return x.detach().permute(*range(x.dim() - 3), -2, -1, -3).cpu().numpy()


@dataclass
class TrainResult:
    model: KeyframePredictor
    trace: list[dict] = field(default_factory=list)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i: i + size]


def train_predictor(frames: torch.Tensor, lang: Optional[torch.Tensor], conditioner: Conditioner,
                    model_cfg: PredictorConfig = PredictorConfig(), train_cfg: TrainConfig = TrainConfig(),
                    out_dir: Optional[Path] = None, echo: Optional[dict] = None,
                    model: Optional[KeyframePredictor] = None, log=None) -> TrainResult:
    """Teacher-forced training on (N, T+1, 3, H, W) keyframes.

    ``lang`` is the (N, T, dim) conditioning from ``conditioner`` (None in
    mode none). With ``out_dir`` the loss trace is appended to
    ``trace.jsonl`` and checkpoints/snapshots are written periodically.
    """
    if frames.dim() != 5 or frames.shape[0] == 0:
        raise ConfigError(f"expected a non-empty (N, T+1, 3, H, W) tensor, got {tuple(frames.shape)}")
    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    model = model or build_predictor(model_cfg, conditioner)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    trace: list[dict] = []
    trace_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_fh = open(out_dir / "trace.jsonl", "w")
    start = time.perf_counter()
    try:
        for epoch in range(train_cfg.epochs):
            model.train()
            sums = {"total": 0.0, "reconstruction": 0.0, "kl": 0.0}
            count = 0
            for idx in _batches(frames.shape[0], train_cfg.batch_size, rng):
                idx_t = torch.from_numpy(idx)
                batch_lang = None if lang is None else lang[idx_t]
                losses = model.loss(frames[idx_t], batch_lang, train_cfg.beta, generator=gen)
                if not torch.isfinite(losses["total"]):
                    state = {k: float(v) for k, v in losses.items()}
                    if out_dir is not None:
                        torch.save({"model": model.state_dict(), "losses": state, "epoch": epoch,
                                    "batch": idx.tolist()}, out_dir / "nonfinite_dump.pt")
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: {state}")
                opt.zero_grad()
                losses["total"].backward()
                if train_cfg.grad_clip:
                    nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
                opt.step()
                for k in sums:
                    sums[k] += float(losses[k].detach()) * len(idx)
                count += len(idx)
            row = {
                "epoch": epoch,
                "recon": sums["reconstruction"] / count,
                "kl": sums["kl"] / count,
                "total": sums["total"] / count,
                "wall_time": round(time.perf_counter() - start, 3),
            }
            trace.append(row)
            if trace_fh:
                trace_fh.write(json.dumps(row) + "\n")
                trace_fh.flush()
            if log:
                log(row)
            last = epoch + 1 == train_cfg.epochs
            if out_dir is not None and train_cfg.checkpoint_every and ((epoch + 1) % train_cfg.checkpoint_every == 0 or last):
                save_checkpoint(out_dir / "checkpoint.pt", model, conditioner, train_cfg, opt, epoch + 1, echo, gen)
            if out_dir is not None and train_cfg.snapshot_every and ((epoch + 1) % train_cfg.snapshot_every == 0 or last):
                _snapshot(model, frames[0], None if lang is None else lang[0], out_dir / f"snapshot_{epoch + 1:04d}.png")
    finally:
        if trace_fh:
            trace_fh.close()
    model.eval()
    return TrainResult(model, trace)


def _snapshot(model: KeyframePredictor, video: torch.Tensor, lang: Optional[torch.Tensor], path: Path) -> None:
    from PIL import Image

    model.eval()
    pred = model.rollout(video[:1], None if lang is None else lang[None], video.shape[0] - 1,
                         torch.Generator().manual_seed(0))[0]
    top = torch.cat(list(video), -1)
    bottom = torch.cat([video[0]] + list(pred), -1)
    img = (torch.cat([top, bottom], -2).permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
    Image.fromarray(img).save(path)
    model.train()


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path: Path | str, model: KeyframePredictor, conditioner: Conditioner,
                    train_cfg: Optional[TrainConfig] = None, optimizer=None, epoch: int = 0,
                    echo: Optional[dict] = None, generator: Optional[torch.Generator] = None) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "train_config": asdict(train_cfg) if train_cfg else None,
        "mode": model.mode,
        "embedding_kind": conditioner.kind,
        "dictionary": conditioner.dictionary.to_json() if conditioner.dictionary else None,
        "embedding_checksum": conditioner.table.checksum() if conditioner.table is not None else None,
        "params": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "rng_state": generator.get_state() if generator is not None else None,
        "echo": echo or {},
    }, path)


def load_checkpoint(path: Path | str, table: Optional[EmbeddingTable] = None) -> tuple[KeyframePredictor, Conditioner, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: unsupported checkpoint format {blob.get('format_version')!r}")
    cfg = PredictorConfig(**blob["config"])
    dictionary = ConceptDictionary.from_json(blob["dictionary"]) if blob["dictionary"] else None
    kind = blob["embedding_kind"]
    if kind == "continuous" and blob["mode"] != "none" and table is None:
        table = load_sibling_table(Path(path).parent)
        if blob.get("embedding_checksum") and table.checksum() != blob["embedding_checksum"]:
            raise VersionMismatch(f"{path}: embedding table does not match the one used in training")
    cond = Conditioner(blob["mode"], kind, dictionary, table if kind == "continuous" else None)
    model = build_predictor(cfg, cond)
    model.load_state_dict(blob["params"])
    model.eval()
    return model, cond, blob


EMBEDDINGS_FILE = "embeddings.bin"
ENCODER_FILE = "embedding_encoder.pt"


def save_sibling_table(out_dir: Path | str, table: EmbeddingTable, encoder=None) -> None:
    """Store the conditioning table (and its encoder, if local) next to a checkpoint."""
    out_dir = Path(out_dir)
    save_table(table, out_dir / EMBEDDINGS_FILE)
    if encoder is not None:
        save_encoder(encoder, out_dir / ENCODER_FILE)


def load_sibling_table(out_dir: Path | str) -> EmbeddingTable:
    out_dir = Path(out_dir)
    if not (out_dir / EMBEDDINGS_FILE).exists():
        raise ArtifactMissing(f"{out_dir / EMBEDDINGS_FILE} is missing")
    if (out_dir / ENCODER_FILE).exists():
        return load_local_table(out_dir / EMBEDDINGS_FILE, out_dir / ENCODER_FILE)
    return load_table(out_dir / EMBEDDINGS_FILE)
