import struct
from collections import Counter

import numpy as np
import pytest

from east.errors import ConfigError, DatasetFormatError
from east.video import (
    HEADER_SIZE,
    LabeledVideo,
    SyntheticConfig,
    bayes_ceiling,
    generate_synthetic_dataset,
    read_dataset,
    render_video,
    start_range,
    write_dataset,
)


def small_cfg(**kw):
    base = dict(n1=3, n2=3, videos_per_class=4, seed=7)
    base.update(kw)
    return SyntheticConfig(**base)


def test_one_class_noise_free_videos_differ_only_by_start():
    cfg = small_cfg(n1=1, n2=1, noise_std=0, videos_per_class=5)
    videos = generate_synthetic_dataset(cfg)
    assert {v.label for v in videos} == {0}
    ref = videos[0].frames
    for v in videos[1:]:
        # same motion: shifting each video back to the reference start must match
        ys, xs = np.nonzero(v.frames[0, :, :, 0] == cfg.foreground)
        ry, rx = np.nonzero(ref[0, :, :, 0] == cfg.foreground)
        dy, dx = ys.min() - ry.min(), xs.min() - rx.min()
        shifted = np.roll(v.frames, (-dy, -dx), axis=(1, 2))
        assert np.array_equal(shifted, ref)


def test_same_seed_is_byte_identical(tmp_path):
    a = generate_synthetic_dataset(small_cfg(seed=7))
    b = generate_synthetic_dataset(small_cfg(seed=7))
    write_dataset(a, tmp_path / "a.bin")
    write_dataset(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_class_balance():
    videos = generate_synthetic_dataset(small_cfg(videos_per_class=100))
    assert len(videos) == 900
    assert Counter(v.label for v in videos) == {c: 100 for c in range(9)}


def test_pixels_and_shapes():
    cfg = small_cfg(C=3, noise_std=40)
    for v in generate_synthetic_dataset(cfg):
        assert v.frames.dtype == np.uint8
        assert v.frames.shape == (cfg.T_d, cfg.H, cfg.W, 3)


def test_prefix_independent_of_phase2_direction():
    cfg = small_cfg(noise_std=0)
    b = cfg.boundary_frame
    (ylo, _), (xlo, _) = start_range(cfg)
    for d1 in range(cfg.n1):
        vids = [render_video(cfg, d1, d2, (ylo, xlo)) for d2 in range(cfg.n2)]
        for v in vids[1:]:
            assert np.array_equal(v[:b], vids[0][:b])
            assert not np.array_equal(v[b], vids[0][b])


def test_first_frame_carries_no_label_information():
    # every class draws its start from one shared range, so the sprite's
    # initial placement cannot separate classes
    cfg = small_cfg(noise_std=0, videos_per_class=200)
    (ylo, yhi), (xlo, xhi) = start_range(cfg)
    by_label = {}
    for v in generate_synthetic_dataset(cfg):
        ys, xs = np.nonzero(v.frames[0, :, :, 0] == cfg.foreground)
        assert ylo <= ys.min() <= yhi and xlo <= xs.min() <= xhi
        by_label.setdefault(v.label, []).append((ys.min(), xs.min()))
    means = np.array([np.mean(p, axis=0) for p in by_label.values()])
    assert np.ptp(means, axis=0).max() < 0.25 * max(yhi - ylo, xhi - xlo)


def test_sprite_stays_inside_the_frame():
    cfg = small_cfg(noise_std=0, videos_per_class=20)
    area = cfg.sprite_size ** 2
    for v in generate_synthetic_dataset(cfg):
        assert ((v.frames[..., 0] == cfg.foreground).sum(axis=(1, 2)) == area).all()


def test_speed_scales_displacement():
    cfg = small_cfg(n1=1, n2=1, noise_std=0, speed=2, sprite_size=4)
    (ylo, _), (xlo, _) = start_range(cfg)
    frames = render_video(cfg, 0, 0, (ylo, xlo))  # moving right the whole time
    xs = [np.nonzero(f[..., 0] == cfg.foreground)[1].min() for f in frames]
    assert np.all(np.diff(xs) == 2)


def test_sprite_escape_is_a_config_error():
    with pytest.raises(ConfigError):
        generate_synthetic_dataset(small_cfg(H=16, W=16))


@pytest.mark.parametrize("bad", [dict(phase_boundary=0.0), dict(phase_boundary=1.0), dict(T_d=7)])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        small_cfg(**bad).validate()


def test_bayes_ceiling():
    assert bayes_ceiling(0.3, small_cfg()) == pytest.approx(1 / 3)
    assert bayes_ceiling(0.9, small_cfg(n2=5)) == 1.0
    assert bayes_ceiling(0.5, small_cfg(n2=4)) == 0.25
    assert bayes_ceiling(1.0, small_cfg()) == 1.0
    with pytest.raises(ValueError):
        bayes_ceiling(0.0, small_cfg())


def test_empty_file_is_header_only(tmp_path):
    path = tmp_path / "empty.bin"
    write_dataset([], path)
    data = path.read_bytes()
    assert len(data) == HEADER_SIZE == 36
    assert data[:8] == b"EASTDS01"
    assert struct.unpack("<7I", data[8:]) == (1, 0, 0, 0, 0, 0, 0)
    assert read_dataset(path) == []


def test_file_size_formula(tmp_path):
    video = LabeledVideo(np.arange(256, dtype=np.uint8).reshape(4, 8, 8, 1), 0)
    path = tmp_path / "one.bin"
    write_dataset([video], path, num_classes=1)
    assert path.stat().st_size == HEADER_SIZE + 4 + 256
    assert read_dataset(path) == [video]


def test_layout_is_t_major_channel_last(tmp_path):
    frames = np.arange(2 * 2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 2, 3)
    write_dataset([LabeledVideo(frames, 1)], tmp_path / "x.bin", num_classes=2)
    data = (tmp_path / "x.bin").read_bytes()
    assert struct.unpack_from("<I", data, HEADER_SIZE) == (1,)
    assert data[HEADER_SIZE + 4:] == bytes(range(24))


def test_round_trip_full_set(tmp_path):
    videos = generate_synthetic_dataset(small_cfg(videos_per_class=100))
    write_dataset(videos, tmp_path / "d.bin")
    back = read_dataset(tmp_path / "d.bin")
    assert len(back) == 900
    assert all(a == b for a, b in zip(videos, back))


def test_corrupt_files_report_offsets(tmp_path):
    videos = generate_synthetic_dataset(small_cfg(videos_per_class=1))
    path = tmp_path / "d.bin"
    write_dataset(videos, path)
    data = path.read_bytes()

    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(DatasetFormatError) as e:
        read_dataset(tmp_path / "magic.bin")
    assert e.value.offset == 0

    (tmp_path / "version.bin").write_bytes(data[:8] + struct.pack("<I", 2) + data[12:])
    with pytest.raises(DatasetFormatError) as e:
        read_dataset(tmp_path / "version.bin")
    assert e.value.offset == 8

    (tmp_path / "short.bin").write_bytes(data[:-10])
    with pytest.raises(DatasetFormatError) as e:
        read_dataset(tmp_path / "short.bin")
    assert e.value.offset == len(data) - 10

    (tmp_path / "head.bin").write_bytes(data[:20])
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path / "head.bin")


def test_write_rejects_mixed_shapes(tmp_path):
    a = LabeledVideo(np.zeros((4, 8, 8, 1), np.uint8), 0)
    b = LabeledVideo(np.zeros((4, 8, 16, 1), np.uint8), 0)
    with pytest.raises(DatasetFormatError):
        write_dataset([a, b], tmp_path / "x.bin")
