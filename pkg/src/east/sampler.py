"""Observation-ratio sampling of observed/unobserved clip pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from east.errors import ConfigError, ContractError, LeakageError

DEFAULT_RHO_GRID = tuple(round(0.1 * i, 10) for i in range(1, 10))


@dataclass
class SamplingConfig:
    T: int = 8
    mode: str = "randomized"  # "randomized" | "fixed"
    fixed_rho: float | None = None
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID

    def validate(self) -> None:
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.mode == "randomized":
            if not self.rho_grid or any(not 0 < r < 1 for r in self.rho_grid):
                raise ConfigError("rho_grid must be nonempty with values in (0, 1)")
        elif self.mode == "fixed":
            if self.fixed_rho is None or not 0 < self.fixed_rho <= 1:
                raise ConfigError("fixed mode needs fixed_rho in (0, 1]")
        else:
            raise ConfigError(f"unknown sampling mode {self.mode!r}")


@dataclass
class ClipPair:
    observed: np.ndarray
    unobserved: np.ndarray
    observed_indices: list[int]
    unobserved_indices: list[int]
    rho: float


def sample_rho(rng: np.random.Generator, cfg: SamplingConfig) -> float:
    if cfg.mode == "fixed":
        return cfg.fixed_rho
    return cfg.rho_grid[int(rng.integers(len(cfg.rho_grid)))]


def observed_length(T_d: int, rho: float) -> int:
    """Number of visible frames, floor(rho * T_d) clamped to at least one.

    The epsilon absorbs products such as 0.7 * 10 = 6.999...; grid ratios
    are exact multiples of 0.1 and must not lose a frame to rounding.
    """
    if not 0 < rho <= 1:
        raise ContractError(f"rho must lie in (0, 1], got {rho}")
    return max(math.floor(rho * T_d + 1e-9), 1)


def index_present(T_d: int, rho: float, T: int) -> list[int]:
    m = observed_length(T_d, rho)
    return [-(-(j + 1) * m // T) - 1 for j in range(T)]


def index_future(T_d: int, rho: float, T: int) -> list[int]:
    m = observed_length(T_d, rho)
    if m >= T_d:
        raise ContractError(f"no unobserved frames at rho={rho} with T_d={T_d}")
    return [m + j * (T_d - m) // T for j in range(T)]


class GuardedFrames:
    """Frame accessor that refuses reads at or past ``limit`` and logs every read."""

    def __init__(self, frames: np.ndarray, limit: int | None = None, log: list | None = None):
        self._frames = frames
        self.limit = len(frames) if limit is None else limit
        self.log = log

    def __len__(self) -> int:
        return len(self._frames)

    def take(self, indices: list[int]) -> np.ndarray:
        if self.log is not None:
            self.log.append((max(indices), self.limit))
        if max(indices) >= self.limit or min(indices) < 0:
            raise LeakageError(f"read frame {max(indices)} with observation limit {self.limit}")
        return self._frames[indices]


def _frames(video) -> np.ndarray:
    return getattr(video, "frames", video)


def build_clip_pair(video, rho: float, cfg: SamplingConfig) -> ClipPair:
    frames = _frames(video)
    T_d = len(frames)
    obs = index_present(T_d, rho, cfg.T)
    fut = index_future(T_d, rho, cfg.T)
    return ClipPair(frames[obs], frames[fut], obs, fut, rho)


def build_inference_clip(video, rho: float, cfg: SamplingConfig,
                         log: list | None = None) -> np.ndarray:
    """The observed half only; frames past floor(rho * T_d) are never touched."""
    frames = _frames(video)
    m = observed_length(len(frames), rho)
    guard = GuardedFrames(frames, limit=m, log=log)
    return guard.take(index_present(len(frames), rho, cfg.T))


def sample_training_clip(frames: np.ndarray, rng: np.random.Generator,
                         cfg: SamplingConfig) -> tuple[np.ndarray, np.ndarray | None, float]:
    rho = sample_rho(rng, cfg)
    if observed_length(len(frames), rho) >= len(frames):
        # full-video (action recognition) arm: nothing left to forecast
        return build_inference_clip(frames, rho, cfg), None, rho
    pair = build_clip_pair(frames, rho, cfg)
    return pair.observed, pair.unobserved, rho
