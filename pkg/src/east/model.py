"""Tubelet tokenizer, transformer encoder, forecasting decoders and classifier."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from os import PathLike

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from east.errors import CheckpointError, ConfigError

CHECKPOINT_FORMAT = "east-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    F: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    dec_variant: str = "direct"  # identity | direct | autoregressive
    dec_layers: int = 4
    dec_heads: int = 4
    p: int = 12
    d: int = 2
    T: int = 8
    H: int = 48
    W: int = 48
    C: int = 1
    num_classes: int = 9
    classifier_mode: str = "shared"  # shared | separate
    mlp_ratio: int = 4

    def validate(self) -> None:
        if self.F % self.enc_heads or (self.dec_variant != "identity" and self.F % self.dec_heads):
            raise ConfigError("F must be divisible by the head counts")
        if self.dec_variant not in ("identity", "direct", "autoregressive"):
            raise ConfigError(f"unknown decoder variant {self.dec_variant!r}")
        if self.dec_variant != "identity" and self.dec_layers < 1:
            raise ConfigError("a non-identity decoder needs at least one layer")
        if self.classifier_mode not in ("shared", "separate"):
            raise ConfigError(f"unknown classifier mode {self.classifier_mode!r}")
        if self.T % self.d or self.H % self.p or self.W % self.p:
            raise ConfigError("tubelet geometry must tile the clip")

    @property
    def steps(self) -> int:
        """Time steps per half-clip, T/d."""
        return self.T // self.d

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.T // self.d, self.H // self.p, self.W // self.p

    @property
    def num_tokens(self) -> int:
        return self.T * self.H * self.W // (self.p ** 2 * self.d)

    @property
    def tubelet_dim(self) -> int:
        return self.d * self.p * self.p * self.C


@dataclass
class TokenSequence:
    embeddings: Tensor  # (B, N, F)
    positions: Tensor   # (B, N, 3) long, (t, i, j)

    def select(self, hit) -> "TokenSequence":
        hit = torch.as_tensor(hit, dtype=torch.bool)
        B, N = hit.shape[0], int(hit[0].sum())
        return TokenSequence(self.embeddings[hit].reshape(B, N, -1),
                             self.positions[hit].reshape(B, N, 3))


@dataclass
class FeatureGrid:
    features: Tensor   # (B, N, F)
    positions: Tensor  # (B, N, 3)


def sincos_1d(x: Tensor, dim: int) -> Tensor:
    """Sin-cos encoding of (...,) positions into (..., dim)."""
    half = dim // 2
    if half == 0:
        return torch.zeros(*x.shape, dim, dtype=torch.float64)
    omega = 1.0 / 10000 ** (torch.arange(half, dtype=torch.float64) / half)
    angles = x.to(torch.float64)[..., None] * omega
    out = torch.cat([angles.sin(), angles.cos()], dim=-1)
    if dim % 2:
        out = F.pad(out, (0, 1))
    return out


def sincos_3d(positions: Tensor, dim: int) -> Tensor:
    """Concatenated temporal / vertical / horizontal sin-cos bands."""
    band = 2 * (dim // 6)
    return torch.cat([
        sincos_1d(positions[..., 0], dim - 2 * band),
        sincos_1d(positions[..., 1], band),
        sincos_1d(positions[..., 2], band),
    ], dim=-1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: Tensor, causal: bool = False) -> Tensor:
        B, N, D = x.shape
        q, k, v = self.qkv(x).reshape(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=causal)
        return self.proj(out.transpose(1, 2).reshape(B, N, D))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def forward(self, x: Tensor, causal: bool = False) -> Tensor:
        x = x + self.attn(self.norm1(x), causal=causal)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            Block(cfg.F, cfg.enc_heads, cfg.mlp_ratio) for _ in range(cfg.enc_layers))
        self.norm = nn.LayerNorm(cfg.F)

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


def pool_spatial(grid: FeatureGrid, steps: int) -> Tensor:
    """Mean token per time step, (B, N, F) -> (B, steps, F).

    A time step with no retained token falls back to the mean of all
    retained tokens of that clip.
    """
    feats = grid.features
    onehot = F.one_hot(grid.positions[..., 0], steps).to(feats.dtype)  # (B, N, steps)
    sums = onehot.transpose(1, 2) @ feats
    counts = onehot.sum(dim=1)[..., None]
    fallback = feats.mean(dim=1, keepdim=True).expand_as(sums)
    return torch.where(counts > 0, sums / counts.clamp(min=1), fallback)


class IdentityDecoder(nn.Module):
    def forward(self, present: Tensor) -> Tensor:
        return present


class DirectDecoder(nn.Module):
    """Present tokens plus learned [MASK] slots, one full-attention pass."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.F))
        self.blocks = nn.ModuleList(
            Block(cfg.F, cfg.dec_heads, cfg.mlp_ratio) for _ in range(cfg.dec_layers))
        self.norm = nn.LayerNorm(cfg.F)

    def forward(self, present: Tensor) -> Tensor:
        B, L, D = present.shape
        pe = sincos_1d(torch.arange(2 * L), D).to(present.dtype)
        x = torch.cat([present + pe[:L], self.mask_token.expand(B, L, D) + pe[L:]], dim=1)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)[:, L:]


class AutoregressiveDecoder(nn.Module):
    """Causal rollout: each generated token is appended and fed back as input."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            Block(cfg.F, cfg.dec_heads, cfg.mlp_ratio) for _ in range(cfg.dec_layers))
        self.norm = nn.LayerNorm(cfg.F)

    def run(self, seq: Tensor) -> Tensor:
        for blk in self.blocks:
            seq = blk(seq, causal=True)
        return self.norm(seq)

    def forward(self, present: Tensor) -> Tensor:
        L, D = present.shape[1], present.shape[2]
        pe = sincos_1d(torch.arange(2 * L), D).to(present.dtype)
        seq = present + pe[:L]
        generated = []
        for s in range(L):
            nxt = self.run(seq)[:, -1]
            generated.append(nxt)
            seq = torch.cat([seq, (nxt + pe[L + s])[:, None]], dim=1)
        return torch.stack(generated, dim=1)


DECODERS = {
    "identity": lambda cfg: IdentityDecoder(),
    "direct": DirectDecoder,
    "autoregressive": AutoregressiveDecoder,
}


class EASTModel(nn.Module):
    """Encoder, forecasting decoder and classifier.

    The model never sees an observation ratio: it receives a clip (and a
    retention grid) and returns logits.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.tubelet_dim, cfg.F)
        self.encoder = Encoder(cfg)
        self.decoder = DECODERS[cfg.dec_variant](cfg)
        if cfg.classifier_mode == "shared":
            self.head = nn.Linear(cfg.F, cfg.num_classes)
        else:
            self.head_pred = nn.Linear(cfg.F, cfg.num_classes)
            self.head_oracle = nn.Linear(cfg.F, cfg.num_classes)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for name, m in self.named_modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        for head in self.heads():
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        if isinstance(self.decoder, DirectDecoder):
            nn.init.zeros_(self.decoder.mask_token)

    def heads(self) -> list[nn.Linear]:
        if self.cfg.classifier_mode == "shared":
            return [self.head]
        return [self.head_pred, self.head_oracle]

    @property
    def dtype(self) -> torch.dtype:
        return self.embed.weight.dtype

    def tokenize(self, clips, keep=None, t_offset: int = 0) -> TokenSequence:
        """Embed tubelets of uint8 clips (B, T, H, W, C); ``keep`` is (B, T/d, H/p, W/p)."""
        cfg = self.cfg
        clips = torch.as_tensor(np.asarray(clips) if not isinstance(clips, Tensor) else clips)
        B, T, H, W, C = clips.shape
        if (T, H, W, C) != (cfg.T, cfg.H, cfg.W, cfg.C):
            raise ConfigError(f"clip {(T, H, W, C)} does not match model geometry "
                              f"{(cfg.T, cfg.H, cfg.W, cfg.C)}")
        d, p = cfg.d, cfg.p
        L, Hp, Wp = T // d, H // p, W // p
        x = (clips.to(self.dtype) / 255.0 - 0.5) / 0.5
        x = x.reshape(B, L, d, Hp, p, Wp, p, C).permute(0, 1, 3, 5, 2, 4, 6, 7)
        x = x.reshape(B, L * Hp * Wp, cfg.tubelet_dim)
        grid = torch.stack(torch.meshgrid(
            torch.arange(L), torch.arange(Hp), torch.arange(Wp), indexing="ij"), dim=-1)
        pos = grid.reshape(1, -1, 3).expand(B, -1, -1).clone()
        if keep is not None:
            hit = torch.as_tensor(np.asarray(keep), dtype=torch.bool).reshape(B, -1)
            n = int(hit[0].sum())
            x = x[hit].reshape(B, n, -1)
            pos = pos[hit].reshape(B, n, 3)
        pos[..., 0] += t_offset
        emb = self.embed(x) + sincos_3d(pos, cfg.F).to(self.dtype)
        return TokenSequence(emb, pos)

    def encode(self, tokens: TokenSequence) -> FeatureGrid:
        return FeatureGrid(self.encoder(tokens.embeddings), tokens.positions)

    def classify(self, tokens: Tensor, head: str = "pred") -> Tensor:
        """Temporal mean then affine map; ``head`` selects the pred or oracle classifier."""
        pooled = tokens.mean(dim=1)
        if self.cfg.classifier_mode == "shared":
            return self.head(pooled)
        return (self.head_pred if head == "pred" else self.head_oracle)(pooled)

    def present_features(self, clips, keep=None) -> Tensor:
        grid = self.encode(self.tokenize(clips, keep))
        return pool_spatial(grid, self.cfg.steps)

    def forecast(self, clips, keep=None) -> Tensor:
        return self.decoder(self.present_features(clips, keep))

    def forward_pred(self, clips, keep=None) -> Tensor:
        return self.classify(self.forecast(clips, keep), "pred")

    def oracle_features(self, clips_o, keep_o, clips_u, keep_u) -> Tensor:
        L = self.cfg.steps
        to = self.tokenize(clips_o, keep_o)
        tu = self.tokenize(clips_u, keep_u, t_offset=L)
        tokens = TokenSequence(torch.cat([to.embeddings, tu.embeddings], dim=1),
                               torch.cat([to.positions, tu.positions], dim=1))
        return pool_spatial(self.encode(tokens), 2 * L)

    def forward_oracle(self, clips_o, keep_o, clips_u, keep_u) -> Tensor:
        return self.classify(self.oracle_features(clips_o, keep_o, clips_u, keep_u), "oracle")

    def forward(self, clips, keep=None) -> Tensor:
        return self.forward_pred(clips, keep)


def save_checkpoint(path: str | PathLike, model: EASTModel, run_config: dict | None = None,
                    step: int = 0) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "run_config": run_config or {},
        "step": step,
        "state_dict": model.state_dict(),
    }, path)


def load_checkpoint(path: str | PathLike) -> tuple[EASTModel, dict]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no checkpoint file at {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a grab bag of types for bad files
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an EAST checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')}")
    known = {f.name for f in fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in blob["model_config"].items() if k in known})
    model = EASTModel(cfg)
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint parameters do not match its config: {exc}") from exc
    model.eval()
    return model, blob
