import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuenet.data.samples import Sample, gaussian_heatmap
from cuenet.layers import spatial_softmax_forward
from cuenet.metrics import (
    PEReport,
    argmax_peak,
    evaluate,
    evaluate_predictor,
    l1_loss,
    l1_loss_grad,
    mean_quadratic_loss,
    positioning_error,
    quadratic_loss,
    quadratic_loss_grad,
    scaled_tolerance,
    top_k_peaks,
)
from cuenet.network import NetworkConfig, build_network, scaled_widths
from cuenet.tensor import ShapeError
from oracles import max_rel_err, numeric_grad


class TestL1:
    def test_identity(self):
        a = np.array([0.3, 0.7])
        assert l1_loss(a, a) == 0 and not l1_loss_grad(a, a).any()

    def test_hand_sum(self):
        assert l1_loss(np.array([0.2, 0.8]), np.array([1.0, 0.0])) == pytest.approx(1.6)

    def test_dims(self):
        with pytest.raises(ShapeError):
            l1_loss(np.zeros(2), np.zeros(3))

    def test_grad_finite_differences(self):
        rng = np.random.default_rng(0)
        out, label = rng.uniform(size=(1, 4, 5)), rng.uniform(size=(1, 4, 5))
        fd = numeric_grad(lambda: l1_loss(out, label), out, h=1e-7)
        assert max_rel_err(l1_loss_grad(out, label), fd) < 1e-6

    @settings(max_examples=100)
    @given(st.integers(0, 2**31))
    def test_triangle_bound(self, seed):
        a, b, c = np.random.default_rng(seed).standard_normal((3, 6))
        assert l1_loss(a, c) <= l1_loss(a, b) + l1_loss(b, c) + 1e-12
        assert l1_loss(a, b) >= 0


class TestQuadratic:
    def test_zero(self):
        a = np.array([0.1, 0.2])
        assert quadratic_loss(a, a) == 0 and not quadratic_loss_grad(a, a).any()

    def test_hand(self):
        assert quadratic_loss(np.array([1.0, 0]), np.zeros(2)) == 0.5

    def test_grad_is_residual(self):
        a, y = np.array([0.4, 0.9]), np.array([1.0, 0.0])
        assert np.array_equal(quadratic_loss_grad(a, y), a - y)

    def test_batch_average(self):
        rng = np.random.default_rng(1)
        acts, labels = rng.uniform(size=(5, 3)), rng.uniform(size=(5, 3))
        per = [quadratic_loss(a, y) for a, y in zip(acts, labels)]
        assert mean_quadratic_loss(acts, labels) == pytest.approx(sum(per) / 5)


class TestPeaks:
    def test_one_hot(self):
        h = np.zeros((1, 5, 7))
        h[0, 3, 2] = 1
        assert argmax_peak(h) == (2, 3, 1.0)

    def test_uniform_tie_rule(self):
        assert argmax_peak(np.full((4, 4), 1 / 16))[:2] == (0, 0)

    def test_gaussian_blob(self):
        assert argmax_peak(gaussian_heatmap((20, 15), 2.0, (30, 40)))[:2] == (20, 15)

    def test_multi_channel_rejected(self):
        with pytest.raises(ValueError):
            argmax_peak(np.zeros((2, 3, 3)))

    @settings(max_examples=50)
    @given(st.integers(0, 2**31), st.floats(-50, 50))
    def test_invariant_under_logit_shift(self, seed, shift):
        logits = np.random.default_rng(seed).standard_normal((1, 6, 8))
        assert argmax_peak(spatial_softmax_forward(logits))[:2] == \
            argmax_peak(spatial_softmax_forward(logits + shift))[:2]

    def test_two_blobs(self):
        h = gaussian_heatmap((8, 6), 1.5, (24, 32)) + 0.8 * gaussian_heatmap((25, 17), 1.5, (24, 32))
        peaks = top_k_peaks(h, 2, 6)
        assert peaks.centers() == [(8, 6), (25, 17)]
        assert peaks[0][2] >= peaks[1][2]

    def test_k1_is_argmax(self):
        h = np.random.default_rng(0).uniform(size=(1, 9, 9))
        assert top_k_peaks(h, 1, 3)[0] == argmax_peak(h)

    def test_uniform_row_major(self):
        assert top_k_peaks(np.ones((3, 4)), 3, 0).centers() == [(0, 0), (1, 0), (2, 0)]

    def test_separation_suppresses_neighbours(self):
        h = gaussian_heatmap((10, 10), 2.0, (20, 20))
        (x0, y0), (x1, y1) = top_k_peaks(h, 2, 6).centers()
        assert math.hypot(x1 - x0, y1 - y0) > 6

    def test_exhaustion(self):
        assert len(top_k_peaks(np.ones((2, 2)), 10, 5)) == 1
        assert len(top_k_peaks(np.ones((2, 2)), 10, 0)) == 4

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            top_k_peaks(np.ones((2, 2)), 0)
        with pytest.raises(ValueError):
            top_k_peaks(np.ones((2, 2)), 1, -1)


class TestPositioningError:
    def test_basic(self):
        assert positioning_error((3, 4), (3, 4)) == 0
        assert positioning_error((13, 14), (10, 10)) == 5.0

    @given(st.tuples(st.integers(0, 300), st.integers(0, 300)),
           st.tuples(st.integers(0, 300), st.integers(0, 300)))
    def test_symmetric(self, p, q):
        assert positioning_error(p, q) == positioning_error(q, p)

    def test_tolerance_boundary(self):
        assert PEReport([4.0, 4.0001]).accuracy == 0.5

    def test_scaled_tolerance(self):
        assert scaled_tolerance(1.0) == 4
        assert scaled_tolerance(0.5) == 2
        assert scaled_tolerance(0.25) == 2
        assert scaled_tolerance(0.75) == 3


class TestReport:
    def test_histogram_and_accuracy_recount(self):
        pe = [0.0, 0.5, 1.0, 3.9, 4.0, 7.2, 19.99, 20.0, 55.0]
        r = PEReport(pe)
        assert sum(r.histogram) == len(pe)
        assert r.histogram[0] == 2 and r.histogram[19] == 1 and r.histogram[20] == 2
        assert r.accuracy_at_4 == sum(v <= 4 for v in pe) / len(pe)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            PEReport([-1.0])

    def test_csv_and_summary(self):
        r = PEReport([0.0, 5.0], frame_indices=[7, 9])
        assert r.to_csv() == "frame_index,pe\n7,0.000000\n9,5.000000\n"
        assert r.summary_line() == "frames,accuracy_at_4,mean_pe,median_pe\n2,0.500000,2.500000,2.500000\n"
        assert len(r.histogram_text().splitlines()) == 21

    def test_merge_is_order_independent(self):
        a = PEReport([1.0, 2.0], frame_indices=[0, 2])
        b = PEReport([9.0], frame_indices=[1])
        c = PEReport([0.5], frame_indices=[3])
        ab_c, c_ba = a.merge(b).merge(c), c.merge(b.merge(a))
        assert ab_c.pe == c_ba.pe == [1.0, 9.0, 2.0, 0.5]
        assert ab_c.frame_indices == [0, 1, 2, 3]

    def test_merge_tolerance_mismatch(self):
        with pytest.raises(ValueError):
            PEReport([1.0], 4).merge(PEReport([1.0], 2))


def _samples(n=12):
    rng = np.random.default_rng(0)
    out = []
    for i in range(n):
        c = (int(rng.integers(3, 13)), int(rng.integers(3, 9)))
        out.append(Sample(frames=rng.uniform(size=(3, 12, 16)), center=c, frame_index=i))
    return out


class TestEvaluate:
    def test_perfect_predictor(self):
        assert evaluate_predictor(lambda s: s.center, _samples()).accuracy == 1.0

    def test_fixed_origin_predictor(self):
        assert evaluate_predictor(lambda s: (0, 0), _samples()).accuracy == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate_predictor(lambda s: (0, 0), [])
        with pytest.raises(ValueError):
            evaluate(None, [])

    def test_network_report_is_consistent(self):
        net = build_network(NetworkConfig(height=12, width=16, widths=scaled_widths(1 / 16),
                                          dtype="float64"), seed=0)
        samples = _samples()
        r = evaluate(net, samples, tolerance=3)
        assert r.frames_evaluated == len(samples)
        assert r.accuracy == sum(v <= 3 for v in r.pe) / len(samples)
        for s, pe in zip(samples, r.pe):
            x, y, _ = argmax_peak(net.forward(s.frames))
            assert pe == positioning_error((x, y), s.center)
