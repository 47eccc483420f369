"""Single-model evaluation across observation ratios, FLOP accounting and arm comparisons."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from os import PathLike
from statistics import median

import numpy as np
import torch

from east.errors import ConfigError, LeakageError
from east.masking import MaskConfig, make_mask
from east.model import EASTModel, ModelConfig
from east.sampler import DEFAULT_RHO_GRID, SamplingConfig, build_inference_clip
from east.train import TrainConfig, train
from east.video import LabeledVideo

log = logging.getLogger(__name__)


@dataclass
class MetricsTable:
    rows: list[tuple[float, float, int]]
    meta: dict = field(default_factory=dict)

    def top1(self, rho: float) -> float:
        for r, acc, _ in self.rows:
            if abs(r - rho) < 1e-9:
                return acc
        raise KeyError(rho)

    @property
    def mean_top1(self) -> float:
        return float(np.mean([acc for _, acc, _ in self.rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "top1", "n"])
        for rho, acc, n in self.rows:
            w.writerow([f"{rho:g}", f"{acc:.6f}", n])
        return buf.getvalue()

    def write_csv(self, path: str | PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | PathLike) -> "MetricsTable":
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != ["rho", "top1", "n"]:
                raise ConfigError(f"{path}: unexpected metrics header {header}")
            return cls([(float(r), float(a), int(n)) for r, a, n in reader])


@torch.no_grad()
def evaluate(model: EASTModel, videos: list[LabeledVideo], rho_grid=DEFAULT_RHO_GRID,
             mask_kind: str = "difference", k: float = 0.5, seed: int = 0,
             batch_size: int = 300, read_log: list | None = None) -> MetricsTable:
    """Top-1 accuracy of ``forward_pred`` on observed prefixes at every ratio in ``rho_grid``.

    Only the clip builder sees rho; every frame read goes through a guarded
    accessor and any read at or past floor(rho * T_d) raises LeakageError.
    """
    cfg = model.cfg
    sampling = SamplingConfig(T=cfg.T)
    mask_cfg = MaskConfig(p=cfg.p, d=cfg.d, k=k)
    audit = [] if read_log is None else read_log
    model.eval()
    rows = []
    for rho in rho_grid:
        rng = np.random.default_rng([seed, round(rho * 1e6)])
        correct = 0
        for start in range(0, len(videos), batch_size):
            chunk = videos[start:start + batch_size]
            clips = [build_inference_clip(v.frames, rho, sampling, log=audit) for v in chunk]
            keep = np.stack([make_mask(mask_kind, c, mask_cfg, rng).keep for c in clips])
            logits = model.forward_pred(np.stack(clips), keep)
            labels = torch.tensor([v.label for v in chunk])
            correct += int((logits.argmax(dim=-1) == labels).sum())
        rows.append((float(rho), correct / len(videos) if videos else 0.0, len(videos)))
    if any(idx >= limit for idx, limit in audit):
        raise LeakageError("a frame past the observation boundary was read")
    return MetricsTable(rows)


def leak_reads(read_log: list) -> int:
    return sum(idx >= limit for idx, limit in read_log)


@dataclass
class FlopReport:
    tokens: int                  # encoder tokens of the prediction pass
    attention_flops: int         # score + value mixing
    projection_flops: int        # embedding, qkv/out projections, MLPs, classifier
    total_flops: int
    peak_tokens: int             # largest token set in any one pass (memory proxy)

    def as_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in vars(self).items())


def _layer_flops(n: int, dim: int, mlp_ratio: int) -> tuple[int, int]:
    """(attention mixing, projections + MLP) for one block over ``n`` tokens; 2 FLOPs per MAC."""
    mixing = 4 * n * n * dim
    proj = 8 * n * dim * dim + 2 * n * dim * (mlp_ratio * dim) * 2
    return mixing, proj


def count_flops(cfg: ModelConfig, mask_k: float = 0.0, clip_len: int | None = None,
                include_oracle: bool = False) -> FlopReport:
    clip_len = cfg.T if clip_len is None else clip_len
    mask_cfg = MaskConfig(p=cfg.p, d=cfg.d, k=mask_k)
    steps = clip_len // cfg.d
    spatial = (cfg.H // cfg.p) * (cfg.W // cfg.p)
    n = mask_cfg.kept_per_column(clip_len) * spatial
    F = cfg.F

    def encoder_pass(tokens: int) -> tuple[int, int]:
        if tokens == 0:
            return 0, 0
        mix, proj = _layer_flops(tokens, F, cfg.mlp_ratio)
        return cfg.enc_layers * mix, cfg.enc_layers * proj + 2 * tokens * cfg.tubelet_dim * F

    attn, proj = encoder_pass(n)
    peak = n
    if n and cfg.dec_variant == "direct":
        mix, pr = _layer_flops(2 * steps, F, cfg.mlp_ratio)
        attn, proj = attn + cfg.dec_layers * mix, proj + cfg.dec_layers * pr
        peak = max(peak, 2 * steps)
    elif n and cfg.dec_variant == "autoregressive":
        for s in range(steps):
            mix, pr = _layer_flops(steps + s, F, cfg.mlp_ratio)
            attn, proj = attn + cfg.dec_layers * mix, proj + cfg.dec_layers * pr
        peak = max(peak, 2 * steps - 1)
    if n:
        proj += 2 * F * cfg.num_classes
    if include_oracle and n:
        a, p = encoder_pass(2 * n)
        attn, proj = attn + a, proj + p + 2 * F * cfg.num_classes
        peak = max(peak, 2 * n)
    return FlopReport(n, attn, proj, attn + proj, peak)


@dataclass
class Arm:
    name: str
    train: TrainConfig
    sampling: SamplingConfig
    model: ModelConfig | None = None


@dataclass
class ComparisonReport:
    rho_grid: tuple[float, ...]
    per_seed: dict[str, list[MetricsTable]]

    def median_top1(self, arm: str, rho: float) -> float:
        return median(t.top1(rho) for t in self.per_seed[arm])

    def median_mean_top1(self, arm: str) -> float:
        return median(t.mean_top1 for t in self.per_seed[arm])

    @property
    def rows(self) -> list[tuple[str, float, float]]:
        return [(arm, rho, self.median_top1(arm, rho))
                for arm in self.per_seed for rho in self.rho_grid]


def train_and_evaluate(arm: Arm, seed: int, train_videos, test_videos, model_cfg: ModelConfig,
                       rho_grid=DEFAULT_RHO_GRID) -> MetricsTable:
    tcfg = replace(arm.train, seed=seed)
    model, _ = train(train_videos, arm.model or model_cfg, tcfg, arm.sampling)
    return evaluate(model, test_videos, rho_grid, tcfg.mask_kind, tcfg.k, seed=seed)


def run_arms(arms: list[Arm], train_videos, test_videos, model_cfg: ModelConfig,
             seeds=(0, 1, 2), rho_grid=DEFAULT_RHO_GRID, runner=None) -> ComparisonReport:
    """Train and evaluate every arm once per seed under one shared budget.

    ``runner(arm, seed)`` may replace the default train-then-evaluate routine
    (the acceptance suite uses it to cache finished runs).
    """
    budgets = {(a.train.steps, a.train.batch_size) for a in arms}
    if len(budgets) != 1:
        raise ConfigError(f"arms have different step/batch budgets: {sorted(budgets)}")

    def default_runner(arm: Arm, seed: int) -> MetricsTable:
        return train_and_evaluate(arm, seed, train_videos, test_videos, model_cfg, rho_grid)

    runner = runner or default_runner
    per_seed = {}
    for arm in arms:
        per_seed[arm.name] = []
        for seed in seeds:
            table = runner(arm, seed)
            log.info("%s seed %d: mean top1 %.3f", arm.name, seed, table.mean_top1)
            per_seed[arm.name].append(table)
    return ComparisonReport(tuple(rho_grid), per_seed)


def compare_masking(train_videos, test_videos, model_cfg: ModelConfig, base: TrainConfig,
                    ks=(0.5,), kinds=("difference", "random"), seeds=(0, 1, 2),
                    rho_grid=DEFAULT_RHO_GRID, runner=None) -> ComparisonReport:
    sampling = SamplingConfig(T=model_cfg.T)
    arms = [Arm(f"{kind}_k{k:g}", replace(base, mask_kind=kind, k=k), sampling)
            for k in ks for kind in kinds]
    return run_arms(arms, train_videos, test_videos, model_cfg, seeds, rho_grid, runner)


def compare_sampling(train_videos, test_videos, model_cfg: ModelConfig, base: TrainConfig,
                     fixed_rhos=(1.0,), seeds=(0, 1, 2), rho_grid=DEFAULT_RHO_GRID,
                     runner=None) -> ComparisonReport:
    arms = [Arm("east", base, SamplingConfig(T=model_cfg.T))]
    arms += [Arm(f"fixed_{r:g}", base, SamplingConfig(T=model_cfg.T, mode="fixed", fixed_rho=r))
             for r in fixed_rhos]
    return run_arms(arms, train_videos, test_videos, model_cfg, seeds, rho_grid, runner)


