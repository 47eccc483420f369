"""Raw video types, the two-phase moving-sprite dataset and its binary file format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from east.errors import ConfigError, DatasetFormatError

MAGIC = b"EASTDS01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8s7I")
HEADER_SIZE = _HEADER.size

# (dy, dx) unit steps; phase-1 uses the first n1 rows, phase-2 the first n2.
DIRECTIONS = (
    (0, 1),    # right
    (-1, 0),   # up
    (1, 0),    # down
    (0, -1),   # left
    (-1, 1),   # up-right
    (1, 1),    # down-right
    (-1, -1),  # up-left
    (1, -1),   # down-left
)


@dataclass
class LabeledVideo:
    frames: np.ndarray  # (T_d, H, W, C) uint8
    label: int

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledVideo):
            return NotImplemented
        return (
            self.label == other.label
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )


def check_video(frames: np.ndarray) -> None:
    if frames.ndim != 4:
        raise ConfigError(f"video must be (T_d, H, W, C), got shape {frames.shape}")
    if frames.dtype != np.uint8:
        raise ConfigError(f"video must be uint8, got {frames.dtype}")
    if frames.shape[0] < 2 or frames.shape[0] % 2:
        raise ConfigError(f"T_d must be even and >= 2, got {frames.shape[0]}")


@dataclass
class SyntheticConfig:
    n1: int = 3
    n2: int = 3
    T_d: int = 20
    H: int = 48
    W: int = 48
    C: int = 1
    sprite_size: int = 10
    speed: int = 1
    noise_std: float = 8.0
    phase_boundary: float = 0.5
    videos_per_class: int = 100
    seed: int = 0
    background: int = 16
    foreground: int = 224

    @property
    def num_classes(self) -> int:
        return self.n1 * self.n2

    @property
    def boundary_frame(self) -> int:
        """Index of the first frame whose position depends on the phase-2 direction."""
        return math.ceil(self.phase_boundary * self.T_d - 1e-9)

    def validate(self) -> None:
        if not 1 <= self.n1 <= len(DIRECTIONS) or not 1 <= self.n2 <= len(DIRECTIONS):
            raise ConfigError(f"n1, n2 must lie in [1, {len(DIRECTIONS)}]")
        if not 0 < self.phase_boundary < 1:
            raise ConfigError("phase_boundary must lie strictly between 0 and 1")
        if self.T_d < 2 or self.T_d % 2:
            raise ConfigError("T_d must be even and >= 2")
        if self.C not in (1, 3):
            raise ConfigError("C must be 1 or 3")
        if min(self.videos_per_class, self.sprite_size, self.speed) < 1 or self.noise_std < 0:
            raise ConfigError("videos_per_class, sprite_size, speed must be positive and noise_std >= 0")
        if not 1 <= self.boundary_frame < self.T_d:
            raise ConfigError("phase boundary leaves one of the phases empty")
        start_range(self)


def _trajectory(cfg: SyntheticConfig, d1: int, d2: int) -> np.ndarray:
    """Sprite offsets from its start position, shape (T_d, 2)."""
    b = cfg.boundary_frame
    t = np.arange(cfg.T_d)
    v1 = cfg.speed * np.array(DIRECTIONS[d1])
    v2 = cfg.speed * np.array(DIRECTIONS[d2])
    return np.minimum(t, b - 1)[:, None] * v1 + np.maximum(0, t - b + 1)[:, None] * v2


def start_range(cfg: SyntheticConfig) -> tuple[tuple[int, int], tuple[int, int]]:
    """Inclusive (lo, hi) start ranges for y and x that keep the sprite inside the frame.

    One range serves every class, so the first frame says nothing about the label.
    """
    offsets = np.concatenate([_trajectory(cfg, d1, d2)
                              for d1 in range(cfg.n1) for d2 in range(cfg.n2)])
    lo = -offsets.min(axis=0)
    hi = np.array([cfg.H, cfg.W]) - cfg.sprite_size - offsets.max(axis=0)
    if np.any(hi < lo):
        raise ConfigError(
            f"sprite escapes the {cfg.H}x{cfg.W} frame for some class; "
            "enlarge the frame, shrink the sprite or shorten T_d"
        )
    return (int(lo[0]), int(hi[0])), (int(lo[1]), int(hi[1]))


def render_video(cfg: SyntheticConfig, d1: int, d2: int, start: tuple[int, int],
                 rng: np.random.Generator | None = None) -> np.ndarray:
    s = cfg.sprite_size
    canvas = np.full((cfg.T_d, cfg.H, cfg.W), float(cfg.background))
    for t, (dy, dx) in enumerate(_trajectory(cfg, d1, d2)):
        y, x = start[0] + dy, start[1] + dx
        canvas[t, y:y + s, x:x + s] = cfg.foreground
    if cfg.noise_std > 0:
        canvas += rng.normal(0.0, cfg.noise_std, size=canvas.shape)
    frames = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return np.repeat(frames[..., None], cfg.C, axis=-1)


def generate_synthetic_dataset(cfg: SyntheticConfig) -> list[LabeledVideo]:
    """Generate ``n1 * n2 * videos_per_class`` videos, class-major order.

    Class ``(d1, d2)`` has label ``d1 * n2 + d2``: the sprite moves along
    direction ``d1`` up to the phase boundary and along ``d2`` afterward.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    videos = []
    (ylo, yhi), (xlo, xhi) = start_range(cfg)
    for d1 in range(cfg.n1):
        for d2 in range(cfg.n2):
            for _ in range(cfg.videos_per_class):
                start = (int(rng.integers(ylo, yhi + 1)), int(rng.integers(xlo, xhi + 1)))
                frames = render_video(cfg, d1, d2, start, rng)
                videos.append(LabeledVideo(frames, d1 * cfg.n2 + d2))
    return videos


def bayes_ceiling(rho: float, cfg: SyntheticConfig) -> float:
    """Best achievable top-1 accuracy from the first ``rho * T_d`` frames."""
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    return 1.0 / cfg.n2 if rho <= cfg.phase_boundary else 1.0


def write_dataset(videos: list[LabeledVideo], path: str | PathLike,
                  num_classes: int | None = None) -> None:
    if videos:
        shape = videos[0].frames.shape
        for v in videos:
            if v.frames.shape != shape or v.frames.dtype != np.uint8:
                raise DatasetFormatError("videos differ in shape or dtype", offset=0)
        if num_classes is None:
            num_classes = max(v.label for v in videos) + 1
        if any(not 0 <= v.label < num_classes for v in videos):
            raise DatasetFormatError("label outside [0, num_classes)", offset=0)
    else:
        shape = (0, 0, 0, 0)
        num_classes = num_classes or 0
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(videos), *shape, num_classes)
    with open(path, "wb") as f:
        f.write(header)
        for v in videos:
            f.write(struct.pack("<I", v.label))
            f.write(np.ascontiguousarray(v.frames).tobytes())


def read_dataset(path: str | PathLike) -> list[LabeledVideo]:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise DatasetFormatError("truncated header", offset=len(data))
    magic, version, count, T_d, H, W, C, num_classes = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported version {version}", offset=8)
    frame_bytes = T_d * H * W * C
    expected = HEADER_SIZE + count * (4 + frame_bytes)
    if count and frame_bytes == 0:
        raise DatasetFormatError("zero-sized video dimensions", offset=16)
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "trailing bytes in"
        raise DatasetFormatError(f"{kind} file: {len(data)} bytes, expected {expected}",
                                 offset=min(len(data), expected))
    videos = []
    offset = HEADER_SIZE
    for _ in range(count):
        (label,) = struct.unpack_from("<I", data, offset)
        if label >= num_classes:
            raise DatasetFormatError(f"label {label} >= num_classes {num_classes}", offset=offset)
        offset += 4
        frames = np.frombuffer(data, dtype=np.uint8, count=frame_bytes, offset=offset)
        videos.append(LabeledVideo(frames.reshape(T_d, H, W, C).copy(), int(label)))
        offset += frame_bytes
    return videos
