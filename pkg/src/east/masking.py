"""Tubelet extraction, temporal-difference ranking and per-position token masking.

All functions here operate on a single raw uint8 clip of shape (T, H, W, C).
A mask is a boolean ``keep`` grid of shape (T/d, H/p, W/p); every spatial
column (i, j) keeps the same number of tubelets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from east.errors import ConfigError, ContractError


@dataclass
class MaskConfig:
    p: int = 4
    d: int = 2
    k: float = 0.5

    def validate(self, clip_shape: tuple[int, ...] | None = None) -> None:
        if not 0 <= self.k < 1:
            raise ConfigError(f"masked fraction k must lie in [0, 1), got {self.k}")
        if self.p < 1 or self.d < 1:
            raise ConfigError("p and d must be positive")
        if clip_shape is not None:
            T, H, W = clip_shape[:3]
            if T % self.d or H % self.p or W % self.p:
                raise ConfigError(
                    f"clip {T}x{H}x{W} is not tiled by d={self.d}, p={self.p}")

    def grid_shape(self, T: int, H: int, W: int) -> tuple[int, int, int]:
        return T // self.d, H // self.p, W // self.p

    def kept_per_column(self, T: int) -> int:
        """round((1 - k) * T/d), halves rounded up."""
        return math.floor((1 - self.k) * (T // self.d) + 0.5 + 1e-9)


@dataclass
class MaskSelection:
    keep: np.ndarray  # (T/d, H/p, W/p) bool

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return tuple(self.keep.shape)

    @property
    def retained_per_column(self) -> np.ndarray:
        return self.keep.sum(axis=0)

    @property
    def n_retained(self) -> int:
        return int(self.keep.sum())


def full_selection(grid_shape: tuple[int, int, int]) -> MaskSelection:
    return MaskSelection(np.ones(grid_shape, dtype=bool))


def extract_tubelets(clip: np.ndarray, cfg: MaskConfig) -> np.ndarray:
    """Split a clip into (T/d, H/p, W/p, d*p*p*C) vectorized tubelets.

    Each tubelet is flattened in (frame, row, col, channel) order.
    """
    cfg.validate(clip.shape)
    T, H, W, C = clip.shape
    d, p = cfg.d, cfg.p
    x = clip.reshape(T // d, d, H // p, p, W // p, p, C)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    return x.reshape(T // d, H // p, W // p, d * p * p * C)


def assemble_tubelets(tubelets: np.ndarray, cfg: MaskConfig, C: int) -> np.ndarray:
    """Inverse of :func:`extract_tubelets`."""
    L, Hp, Wp, _ = tubelets.shape
    d, p = cfg.d, cfg.p
    x = tubelets.reshape(L, Hp, Wp, d, p, p, C).transpose(0, 3, 1, 4, 2, 5, 6)
    return x.reshape(L * d, Hp * p, Wp * p, C)


def rank_tubelets(clip: np.ndarray, cfg: MaskConfig) -> np.ndarray:
    """L1 pixel distance between a tubelet's first frame and the next tubelet's last frame.

    The final tubelet has no successor and is ranked by the distance between
    its own first and last frame. Distances use raw integer pixel values.
    """
    cfg.validate(clip.shape)
    T, H, W, C = clip.shape
    d, p = cfg.d, cfg.p
    x = clip.astype(np.int64)
    first = x[0::d]
    last = np.concatenate([x[2 * d - 1::d], x[T - 1:T]])
    diff = np.abs(first - last).reshape(T // d, H // p, p, W // p, p, C)
    return diff.sum(axis=(2, 4, 5))


def _top_per_column(score: np.ndarray, n_keep: int) -> np.ndarray:
    # descending by (score, t); t breaks ties toward later tubelets
    L = score.shape[0]
    t = np.arange(L).reshape(L, 1, 1)
    key = score.astype(np.int64) * L + t
    order = np.argsort(-key, axis=0, kind="stable")
    keep = np.zeros(score.shape, dtype=bool)
    np.put_along_axis(keep, order[:n_keep], True, axis=0)
    return keep


def difference_mask(clip: np.ndarray, cfg: MaskConfig) -> MaskSelection:
    ranks = rank_tubelets(clip, cfg)
    return MaskSelection(_top_per_column(ranks, cfg.kept_per_column(clip.shape[0])))


def random_mask(clip: np.ndarray, cfg: MaskConfig, rng: np.random.Generator) -> MaskSelection:
    cfg.validate(clip.shape)
    shape = cfg.grid_shape(*clip.shape[:3])
    n_keep = cfg.kept_per_column(clip.shape[0])
    order = np.argsort(rng.random(shape), axis=0)
    keep = np.zeros(shape, dtype=bool)
    np.put_along_axis(keep, order[:n_keep], True, axis=0)
    return MaskSelection(keep)


def make_mask(kind: str, clip: np.ndarray, cfg: MaskConfig,
              rng: np.random.Generator | None = None) -> MaskSelection:
    if kind == "difference":
        return difference_mask(clip, cfg)
    if kind == "random":
        return random_mask(clip, cfg, rng)
    if kind == "none":
        cfg.validate(clip.shape)
        return full_selection(cfg.grid_shape(*clip.shape[:3]))
    raise ConfigError(f"unknown mask kind {kind!r}")


def apply_mask(tokens, sel):
    """Keep the tokens whose (t, i, j) position is retained by ``sel``.

    ``tokens`` is any object with batched ``embeddings`` (B, N, F) and integer
    ``positions`` (B, N, 3) (see :class:`east.model.TokenSequence`). ``sel`` is a
    MaskSelection, a list of them (one per batch row), or a (B, T/d, H/p, W/p)
    boolean array. Retained tokens keep their positions and (t, i, j) order.
    """
    if isinstance(sel, MaskSelection):
        keep = sel.keep[None]
    elif isinstance(sel, (list, tuple)):
        keep = np.stack([s.keep for s in sel])
    else:
        keep = np.asarray(sel)
    pos = np.asarray(tokens.positions)
    B = pos.shape[0]
    if keep.shape[0] != B:
        raise ContractError(f"selection batch {keep.shape[0]} != token batch {B}")
    grid = np.array(keep.shape[1:])
    if np.any(pos < 0) or np.any(pos >= grid):
        raise ContractError(f"token positions fall outside the {tuple(grid)} mask grid")
    b = np.arange(B)[:, None]
    hit = keep[b, pos[..., 0], pos[..., 1], pos[..., 2]]
    counts = hit.sum(axis=1)
    if np.any(counts != counts[0]):
        raise ContractError("selections retain different token counts across the batch")
    return type(tokens).select(tokens, hit)
