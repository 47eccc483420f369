import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from east import sampler
from east.errors import ConfigError, LeakageError
from east.evaluate import (
    Arm,
    MetricsTable,
    _layer_flops,
    compare_masking,
    compare_sampling,
    count_flops,
    evaluate,
    leak_reads,
    run_arms,
)
from east.model import EASTModel, ModelConfig
from east.sampler import DEFAULT_RHO_GRID, SamplingConfig
from east.train import TINY_CONFIG, TrainConfig
from east.video import DIRECTIONS, SyntheticConfig, generate_synthetic_dataset


@pytest.fixture(scope="module")
def test_videos():
    return generate_synthetic_dataset(SyntheticConfig(seed=2000))


class SpriteTracker:
    """Hand-written classifier that follows the bright sprite; it never sees rho."""

    def __init__(self, cfg: ModelConfig, n2: int = 3):
        self.cfg = cfg
        self.n2 = n2

    def eval(self):
        return self

    def _centroid(self, frame):
        ys, xs = np.nonzero(frame[..., 0] > 120)
        return np.array([ys.mean(), xs.mean()])

    def _direction(self, a, b):
        step = tuple(int(s) for s in np.sign(np.round(self._centroid(b) - self._centroid(a))))
        return DIRECTIONS.index(step) if step in DIRECTIONS[:self.n2] else 0

    def forward_pred(self, clips, keep=None):
        clips = np.asarray(clips)
        half = clips.shape[1] // 2
        logits = torch.zeros(len(clips), 9)
        for n, clip in enumerate(clips):
            d1 = self._direction(clip[0], clip[half - 1])
            d2 = self._direction(clip[half], clip[-1])
            logits[n, d1 * self.n2 + d2] = 1.0
        return logits


def test_untrained_model_is_at_chance(test_videos):
    torch.manual_seed(0)
    table = evaluate(EASTModel(ModelConfig()), test_videos)
    assert len(table.rows) == 9
    for rho, acc, n in table.rows:
        assert n == 900
        assert abs(acc - 1 / 9) <= 0.04


def test_sprite_tracker_stub_is_perfect_at_late_ratio(test_videos):
    table = evaluate(SpriteTracker(ModelConfig()), test_videos, rho_grid=(0.9,), mask_kind="none")
    assert table.rows == [(0.9, 1.0, 900)]


def test_evaluation_reads_only_the_prefix(test_videos):
    log = []
    evaluate(SpriteTracker(ModelConfig()), test_videos[::50], read_log=log)
    assert len(log) == 9 * len(test_videos[::50])
    assert leak_reads(log) == 0
    for max_idx, limit in log:
        assert max_idx < limit


def test_leakage_guard_trips(monkeypatch, test_videos):
    monkeypatch.setattr(sampler, "index_present", lambda T_d, rho, T: [T_d - 1] * T)
    with pytest.raises(LeakageError):
        evaluate(SpriteTracker(ModelConfig()), test_videos[:3], rho_grid=(0.5,))


def test_evaluate_is_deterministic(test_videos):
    torch.manual_seed(1)
    model = EASTModel(ModelConfig())
    with torch.no_grad():
        model.head.weight.normal_(0, 1)
    a = evaluate(model, test_videos[::9], mask_kind="random", seed=4)
    b = evaluate(model, test_videos[::9], mask_kind="random", seed=4)
    assert a.to_csv() == b.to_csv()


def test_metrics_csv_format(tmp_path):
    table = MetricsTable([(r, 0.5 + r / 10, 900) for r in DEFAULT_RHO_GRID])
    path = tmp_path / "m.csv"
    table.write_csv(path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == "rho,top1,n"
    assert lines[1] == "0.1,0.510000,900"
    assert len(lines) == 10
    back = MetricsTable.read_csv(path)
    assert [r for r, _, _ in back.rows] == list(DEFAULT_RHO_GRID)
    assert back.top1(0.3) == pytest.approx(0.53)


# ---- FLOP accounting -----------------------------------------------------------------------

def test_masking_halves_tokens_and_cuts_flops():
    cfg = ModelConfig()
    full, half = count_flops(cfg, 0.0), count_flops(cfg, 0.5)
    assert full.tokens == cfg.num_tokens == 2 * half.tokens
    assert 1.8 <= full.total_flops / half.total_flops <= 4.0
    assert full.peak_tokens / half.peak_tokens == 2.0


@pytest.mark.parametrize("k", [0.0, 0.25, 0.5, 0.75])
@pytest.mark.parametrize("oracle", [False, True])
def test_flop_parts_sum_to_total(k, oracle):
    rep = count_flops(ModelConfig(), k, include_oracle=oracle)
    assert rep.total_flops == rep.attention_flops + rep.projection_flops
    text = rep.as_text()
    assert f"total_flops={rep.total_flops}\n" in text


def test_no_tokens_no_flops():
    rep = count_flops(ModelConfig(), 0.9)
    assert rep.tokens == 0 and rep.total_flops == 0
    assert _layer_flops(0, 64, 4) == (0, 0)


def test_projection_term_scales_with_f_squared():
    for n in (1, 17, 64):
        assert _layer_flops(n, 128, 4)[1] == 4 * _layer_flops(n, 64, 4)[1]
        assert _layer_flops(2 * n, 64, 4)[0] == 4 * _layer_flops(n, 64, 4)[0]


def test_flops_strictly_increase_with_tokens_and_layers():
    cfg = ModelConfig()
    by_k = [count_flops(cfg, k).total_flops for k in (0.75, 0.5, 0.25, 0.0)]
    assert all(a < b for a, b in zip(by_k, by_k[1:]))
    by_layers = [count_flops(replace(cfg, enc_layers=n)).total_flops for n in (1, 2, 3)]
    assert by_layers[0] < by_layers[1] < by_layers[2]
    by_dec = [count_flops(replace(cfg, dec_layers=n)).total_flops for n in (1, 2, 4)]
    assert by_dec[0] < by_dec[1] < by_dec[2]
    assert count_flops(cfg, 0.5, include_oracle=True).total_flops > by_k[1]


def test_hand_counted_flops_for_a_small_config():
    cfg = ModelConfig(F=6, enc_layers=1, enc_heads=1, dec_variant="identity", p=4, T=4,
                      H=4, W=4, num_classes=2, mlp_ratio=1)
    n, F = 2, 6
    per_layer_proj = 8 * n * F * F + 2 * n * F * F * 2
    embed = 2 * n * cfg.tubelet_dim * F
    head = 2 * F * 2
    rep = count_flops(cfg, 0.0)
    assert rep.attention_flops == 4 * n * n * F
    assert rep.projection_flops == per_layer_proj + embed + head


# ---- comparison harness --------------------------------------------------------------------

def fake_runner(arm, seed):
    base = {"east": 0.6, "fixed_1": 0.3}.get(arm.name, 0.4 + 0.01 * seed)
    return MetricsTable([(r, base + seed / 100, 10) for r in DEFAULT_RHO_GRID])


def test_report_shape_and_medians():
    base = TrainConfig(steps=10)
    report = compare_sampling(None, None, ModelConfig(), base, seeds=(0, 1, 2), runner=fake_runner)
    assert len(report.rows) == 2 * 9
    assert report.median_top1("east", 0.5) == pytest.approx(0.61)
    assert report.median_mean_top1("fixed_1") == pytest.approx(0.31)
    masking = compare_masking(None, None, ModelConfig(), base, ks=(0.25, 0.5), runner=fake_runner)
    assert len(masking.rows) == 4 * 9


def test_budget_mismatch_is_rejected():
    arms = [Arm("a", TrainConfig(steps=10), SamplingConfig()),
            Arm("b", TrainConfig(steps=20), SamplingConfig())]
    with pytest.raises(ConfigError):
        run_arms(arms, None, None, ModelConfig(), runner=fake_runner)


def test_zero_lr_arms_give_identical_chance_curves():
    data = generate_synthetic_dataset(SyntheticConfig(n1=3, n2=1, T_d=4, H=8, W=8, sprite_size=2,
                                                      videos_per_class=4, seed=1))
    cfg = replace(TINY_CONFIG, num_classes=3)
    base = TrainConfig(steps=2, batch_size=4, base_lr=0.0)
    report = compare_sampling(data, data, cfg, base, fixed_rhos=(1.0, 0.1), seeds=(0,))
    curves = {arm: [acc for a, _, acc in report.rows if a == arm] for arm in report.per_seed}
    assert len(curves) == 3
    first = next(iter(curves.values()))
    assert all(c == first for c in curves.values())
    assert all(math.isclose(acc, 1 / 3) for acc in first)
