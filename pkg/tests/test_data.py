import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuenet.data import (
    AugmentParams,
    AugmentRejected,
    EmptySplitError,
    LabelFormatError,
    Sample,
    SynthConfig,
    export_dataset,
    gaussian_heatmap,
    load_dataset,
    location_split,
    parse_label_file,
    split_channels,
    stack_frames,
    stack_sequence,
    synth_sequence,
)
from cuenet.data.augment import IDENTITY, apply_transform, augment, rotate_point
from cuenet.data.io import (
    DimensionMismatchError,
    MissingFileError,
    PGMFormatError,
    read_pgm,
    write_pgm,
)
from cuenet.data.labels import LabelFile, LabelRecord, format_label_file
from cuenet.data.samples import choose_validation_regions, region_of
from cuenet.data.synth import InfeasibleConfig
from cuenet.tensor import ShapeError


class TestLabels:
    def test_two_records(self):
        lf = parse_label_file("0 12 34\n1 13 35")
        assert [(r.frame_index, r.x, r.y) for r in lf] == [(0, 12, 34), (1, 13, 35)]

    def test_malformed_line(self):
        with pytest.raises(LabelFormatError) as exc:
            parse_label_file("0 12")
        assert exc.value.line == 1

    def test_comments_and_blanks(self):
        lf = parse_label_file("# header\n\n0 1 2  # trailing\n\n3 4 5\n")
        assert [r.frame_index for r in lf] == [0, 3]

    @pytest.mark.parametrize("text,line", [
        ("0 1 1\n0 2 2", 2),
        ("2 1 1\n1 2 2", 2),
        ("0 a 1", 1),
        ("0 -1 1", 1),
        ("0 1 1\n1 10 1", 2),
    ])
    def test_errors_carry_line(self, text, line):
        with pytest.raises(LabelFormatError) as exc:
            parse_label_file(text, width=10, height=10)
        assert exc.value.line == line

    def test_second_ball(self):
        r = next(iter(parse_label_file("4 1 2 7 8")))
        assert r.centers == ((1, 2), (7, 8))

    def test_thousand_line_round_trip(self):
        rng = np.random.default_rng(0)
        idx = np.cumsum(rng.integers(1, 4, size=1000))
        lf = LabelFile([LabelRecord(int(i), ((int(rng.integers(240)), int(rng.integers(180))),))
                        for i in idx])
        text = format_label_file(lf)
        assert len(text.splitlines()) == 1000
        assert parse_label_file(text, 240, 180) == lf
        assert format_label_file(parse_label_file(text)) == text


class TestChannels:
    def test_red_green(self):
        f = np.zeros((3, 2, 3))
        f[0] = 1
        aps, dvs = split_channels(f)
        assert np.all(aps == 1) and not dvs.any()

    def test_pure_blue(self):
        f = np.zeros((3, 2, 2))
        f[2] = 1
        assert not any(p.any() for p in split_channels(f))

    def test_projection(self):
        f = np.random.default_rng(0).uniform(size=(3, 4, 5))
        aps, dvs = split_channels(f)
        assert np.array_equal(np.concatenate([aps, dvs]), f[:2])

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            split_channels(np.zeros((1, 2, 2)))


class TestHeatmap:
    def test_symmetric_around_middle(self):
        h = gaussian_heatmap((10, 10), 2.0, (21, 21))[0]
        assert np.unravel_index(np.argmax(h), h.shape) == (10, 10)
        assert np.allclose(h, h[::-1]) and np.allclose(h, h[:, ::-1]) and np.allclose(h, h.T)

    def test_normalized(self):
        assert abs(gaussian_heatmap((3, 40), 2.0, (45, 60)).sum() - 1) < 1e-9

    def test_ratio(self):
        h = gaussian_heatmap((20, 15), 2.0, (30, 40))[0]
        assert h[15, 20] / h[15, 22] == pytest.approx(math.exp(0.5), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            gaussian_heatmap((40, 0), 2.0, (30, 40))
        with pytest.raises(ValueError):
            gaussian_heatmap((1, 1), 0.0, (30, 40))

    def test_sample_invariants_over_random_draws(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            h, w = int(rng.integers(4, 30)), int(rng.integers(4, 30))
            c = (int(rng.integers(w)), int(rng.integers(h)))
            s = Sample(np.zeros((1, h, w)), c, sigma=float(rng.uniform(0.5, 3)))
            assert abs(s.label.sum() - 1) < 1e-6
            y, x = np.unravel_index(np.argmax(s.label[0]), (h, w))
            assert (x, y) == c


def _seq(n, start=0, h=4, w=5):
    rng = np.random.default_rng(start)
    return [Sample(rng.uniform(size=(1, h, w)), (1, 1), frame_index=start + i) for i in range(n)]


class TestStacking:
    def test_consecutive(self):
        seq = _seq(3, start=5)
        s = stack_frames(seq)
        assert s.frame_index == 7 and s.frames.shape == (3, 4, 5)
        assert np.array_equal(s.frames[0], seq[0].frames[0])
        assert np.array_equal(s.frames[2], seq[2].frames[0])

    def test_gap_rejected(self):
        a, b, c = _seq(3, start=5)
        c.frame_index = 8
        with pytest.raises(ValueError):
            stack_frames([a, b, c])

    def test_sequence_start_repeats_first_frame(self):
        seq = _seq(4)
        stacks = stack_sequence(seq)
        f0 = seq[0].frames[0]
        assert all(np.array_equal(p, f0) for p in stacks[0].frames)
        assert np.array_equal(stacks[1].frames[0], f0) and np.array_equal(stacks[1].frames[1], f0)
        assert np.array_equal(stacks[3].frames[0], seq[1].frames[0])

    def test_sequence_gap_restarts_padding(self):
        seq = _seq(2) + _seq(2, start=10)
        stacks = stack_sequence(seq)
        assert all(np.array_equal(p, seq[2].frames[0]) for p in stacks[2].frames)


class TestAugment:
    def test_identity_is_exact(self):
        s = Sample(np.random.default_rng(0).uniform(size=(3, 8, 8)), (2, 5))
        assert augment(s, IDENTITY, 0) is s

    def test_rotate_point_90(self):
        x, y = rotate_point(2, 5, 90, (9, 9))
        assert (round(x), round(y)) == (9 - 1 - 5, 2)

    def test_rotation_90_moves_pixels_and_center(self):
        f = np.zeros((1, 9, 9))
        f[0, 5, 2] = 1.0
        out = apply_transform(Sample(f, (2, 5)), 90, 0, 1)
        assert out.center == (3, 2)
        assert out.frames[0, 2, 3] == pytest.approx(1.0)
        assert np.argmax(out.label[0]) == 2 * 9 + 3

    def test_brightness_offset_and_clamp(self):
        f = np.array([[[0.2, 0.95]]])
        out = apply_transform(Sample(f, (0, 0)), 0, 0.1, 1)
        assert out.frames[0, 0].tolist() == pytest.approx([0.3, 1.0])

    def test_contrast_about_mean(self):
        f = np.array([[[0.4, 0.6]]])
        out = apply_transform(Sample(f, (0, 0)), 0, 0, 2)
        assert out.frames[0, 0].tolist() == pytest.approx([0.3, 0.7])

    def test_rotation_out_of_bounds_rejected(self):
        with pytest.raises(AugmentRejected):
            apply_transform(Sample(np.zeros((1, 4, 20)), (0, 0)), 90, 0, 1)

    def test_channels_transformed_identically(self):
        plane = np.random.default_rng(1).uniform(size=(12, 12))
        s = Sample(np.stack([plane] * 3), (6, 6))
        out = augment(s, AugmentParams(), 3)
        assert np.array_equal(out.frames[0], out.frames[1]) and np.array_equal(out.frames[1], out.frames[2])

    def test_draws_are_seeded(self):
        s = Sample(np.random.default_rng(1).uniform(size=(1, 12, 12)), (6, 6))
        assert np.array_equal(augment(s, AugmentParams(), 9).frames, augment(s, AugmentParams(), 9).frames)

    def test_bad_contrast(self):
        with pytest.raises(ValueError):
            AugmentParams(contrast=(0.0, 1.0))


class TestSplit:
    def test_region_of(self):
        assert region_of((0, 0), (44, 60), (4, 4)) == (0, 0)
        assert region_of((59, 43), (44, 60), (4, 4)) == (3, 3)

    def test_empty_validation(self):
        samples = [Sample(np.zeros((1, 8, 8)), (7, 7))]
        with pytest.raises(EmptySplitError):
            location_split(samples, (2, 2), {(0, 0)})

    def test_validation_fraction_and_partition(self):
        rng = np.random.default_rng(0)
        samples = [Sample(np.zeros((1, 40, 40)), (int(rng.integers(40)), int(rng.integers(40))),
                          frame_index=i) for i in range(2000)]
        train, val = location_split(samples, (2, 2), {(1, 0)})
        assert abs(len(val) / len(samples) - 0.25) <= 0.05
        ids_t, ids_v = {s.frame_index for s in train}, {s.frame_index for s in val}
        assert not ids_t & ids_v and ids_t | ids_v == set(range(2000))

    def test_seeded_regions(self):
        assert choose_validation_regions((4, 4), 4, 3) == choose_validation_regions((4, 4), 4, 3)
        assert len(choose_validation_regions((4, 4), 4, 3)) == 4
        with pytest.raises(ValueError):
            choose_validation_regions((2, 2), 4, 0)


class TestSynth:
    cfg = SynthConfig(width=60, height=44, ball_radius=2, velocity_max=3, length=60, seed=4, sigma=1.0)

    def test_deterministic(self):
        a, b = synth_sequence(self.cfg), synth_sequence(self.cfg)
        assert all(np.array_equal(x.frames, y.frames) and x.center == y.center for x, y in zip(a, b))

    def test_seed_matters(self):
        other = SynthConfig(**{**self.cfg.__dict__, "seed": 5})
        assert any(x.center != y.center for x, y in zip(synth_sequence(self.cfg), synth_sequence(other)))

    def test_displacement_bounded(self):
        centers = np.array([s.center for s in synth_sequence(self.cfg)], float)
        assert np.all(np.hypot(*np.diff(centers, axis=0).T) <= self.cfg.velocity_max + 1e-9)

    def test_ball_stays_inside(self):
        for s in synth_sequence(self.cfg):
            x, y = s.center
            r = self.cfg.ball_radius
            assert r <= x < 60 - r and r <= y < 44 - r

    def test_argmax_of_raw_frame_finds_ball(self):
        for s in synth_sequence(SynthConfig(**{**self.cfg.__dict__, "length": 200})):
            y, x = np.unravel_index(np.argmax(s.frames[0]), s.frames[0].shape)
            assert math.hypot(x - s.center[0], y - s.center[1]) <= 1.5

    def test_occluders_never_cover_ball(self):
        cfg = SynthConfig(**{**self.cfg.__dict__, "occluder_probability": 1.0, "shadow": False, "noise": 0.0})
        for s in synth_sequence(cfg):
            x, y = s.center
            assert s.frames[0, y, x] == 1.0

    def test_two_balls(self):
        seq = synth_sequence(SynthConfig(**{**self.cfg.__dict__, "two_balls": True}))
        assert all(len(s.centers) == 2 for s in seq)

    def test_values_are_8bit_exact(self):
        f = synth_sequence(self.cfg)[0].frames
        assert np.array_equal(np.rint(f * 255) / 255, f)

    def test_infeasible(self):
        with pytest.raises(InfeasibleConfig):
            synth_sequence(SynthConfig(width=6, height=6, ball_radius=4))


class TestDiskFormat:
    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(5, 7), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_pgm_header_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
        assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 2]]

    def test_sixteen_bit_rejected(self, tmp_path):
        (tmp_path / "b.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x01")
        with pytest.raises(PGMFormatError, match="unsupported"):
            read_pgm(tmp_path / "b.pgm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(PGMFormatError):
            read_pgm(tmp_path / "t.pgm")

    @pytest.mark.parametrize("channels", [1, 3])
    def test_export_load_round_trip(self, tmp_path, channels):
        seq = synth_sequence(SynthConfig(width=24, height=16, ball_radius=2, length=12, seed=1,
                                         two_balls=True))
        if channels == 3:
            seq = stack_sequence(seq)
        export_dataset(seq, tmp_path)
        back = load_dataset(tmp_path)
        assert [s.centers for s in back] == [s.centers for s in seq]
        assert all(np.array_equal(a.frames, b.frames) for a, b in zip(seq, back))

    def test_missing_labels(self, tmp_path):
        export_dataset(synth_sequence(SynthConfig(width=24, height=16, length=3)), tmp_path)
        (tmp_path / "labels.txt").unlink()
        with pytest.raises(MissingFileError, match="labels"):
            load_dataset(tmp_path)

    def test_missing_meta(self, tmp_path):
        export_dataset(synth_sequence(SynthConfig(width=24, height=16, length=3)), tmp_path)
        (tmp_path / "meta.txt").unlink()
        with pytest.raises(MissingFileError, match="meta"):
            load_dataset(tmp_path)

    def test_dims_disagree(self, tmp_path):
        export_dataset(synth_sequence(SynthConfig(width=24, height=16, length=3)), tmp_path)
        (tmp_path / "meta.txt").write_text("width=24\nheight=12\nchannels=1\n")
        with pytest.raises(DimensionMismatchError):
            load_dataset(tmp_path)

    def test_unlabeled_frames_skipped(self, tmp_path, caplog):
        export_dataset(synth_sequence(SynthConfig(width=24, height=16, length=4)), tmp_path)
        lines = (tmp_path / "labels.txt").read_text().splitlines()
        (tmp_path / "labels.txt").write_text("\n".join(lines[:2]) + "\n")
        with caplog.at_level("WARNING"):
            assert len(load_dataset(tmp_path)) == 2
        assert "skipped 2 frames" in caplog.text


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-4, 4))
def test_augment_label_follows_center(seed, degrees):
    s = Sample(np.random.default_rng(seed).uniform(size=(1, 16, 16)), (8, 7))
    out = apply_transform(s, degrees, 0, 1)
    y, x = np.unravel_index(np.argmax(out.label[0]), (16, 16))
    assert (x, y) == out.center
