import numpy as np
import pytest

from clavage.attribution import (
    AttributionError,
    attribute_subject,
    branch_aggregate,
    export_heatmap_csv,
    export_heatmap_pgm,
    integrated_gradients,
    most_informative_slice,
    pixel_attributions,
)
from clavage.nnet import ModelConfig, MultiBranchRegressor
from clavage.nnet import autodiff as ad
from clavage.nnet.autodiff import Tensor
from clavage.nnet.layers import FusionNet


def linear_f(w):
    wt = Tensor(np.asarray(w, dtype=np.float64)[:, None])
    return lambda t: ad.matmul(t, wt)


class TestIntegratedGradients:
    def test_x_equals_baseline_gives_zero(self):
        f = linear_f([1.0, -2.0, 3.0])
        x = np.array([0.5, 0.5, 0.5])
        assert np.allclose(integrated_gradients(f, x, x), 0.0)

    def test_linear_closed_form_exact(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=7)
        x = rng.normal(size=7)
        ig = integrated_gradients(linear_f(w), x, np.zeros(7), steps=16)
        assert np.max(np.abs(ig - w * x)) < 1e-8

    def test_completeness_on_relu_network(self):
        rng = np.random.default_rng(1)
        fusion = FusionNet(rng, n_branches=3, n_features=16, depth=2)

        def f(t):
            return fusion(t, training=False)

        for seed in range(5):
            x = np.random.default_rng(seed).normal(size=48)
            ig = integrated_gradients(f, x, np.zeros(48), steps=256)
            fx = float(f(Tensor(x[None])).data[0, 0])
            f0 = float(f(Tensor(np.zeros((1, 48)))).data[0, 0])
            gap = abs(ig.sum() - (fx - f0))
            assert gap <= 0.01 * max(abs(fx - f0), 1e-9)

    def test_completeness_error_shrinks_with_steps(self):
        rng = np.random.default_rng(2)
        fusion = FusionNet(rng, n_branches=2, n_features=8, depth=2)

        def f(t):
            return fusion(t, training=False)

        x = np.random.default_rng(3).normal(size=16)
        fx = float(f(Tensor(x[None])).data[0, 0])
        f0 = float(f(Tensor(np.zeros((1, 16)))).data[0, 0])
        errs = []
        for steps in (32, 64, 128, 256, 512):
            ig = integrated_gradients(f, x, np.zeros(16), steps=steps)
            errs.append(abs(ig.sum() - (fx - f0)))
        assert errs[-1] <= errs[0] + 1e-12
        for a, b in zip(errs, errs[1:]):
            assert b <= a * 1.25 + 1e-12  # monotone up to numerical noise

    def test_shape_mismatch_rejected(self):
        with pytest.raises(AttributionError):
            integrated_gradients(linear_f([1.0]), np.zeros(3), np.zeros(2))


class TestBranchAggregate:
    def test_all_ones(self):
        s = branch_aggregate(np.ones(5 * 64), 5, 64)
        assert np.allclose(s, 64.0)

    def test_partition_identity(self):
        rng = np.random.default_rng(4)
        pf = rng.normal(size=4 * 16)
        s = branch_aggregate(pf, 4, 16)
        assert np.isclose(s.sum(), pf.sum())

    def test_one_hot(self):
        pf = np.zeros(5 * 8)
        pf[2 * 8 + 3] = 1.0
        assert np.array_equal(branch_aggregate(pf, 5, 8), [0, 0, 1, 0, 0])

    def test_length_mismatch(self):
        with pytest.raises(AttributionError):
            branch_aggregate(np.ones(10), 3, 4)


class TestMostInformativeSlice:
    P = np.array([0.0, 10.0, 20.0, 30.0, 40.0])

    def test_uniform_scores_give_midpoint(self):
        assert most_informative_slice(np.ones(5), self.P) == 20.0

    def test_one_hot_picks_position(self):
        s = np.zeros(5)
        s[3] = 2.5
        assert most_informative_slice(s, self.P) == 30.0

    def test_documented_weighted_average(self):
        assert most_informative_slice(np.array([1, 2, 2, 0, 0]), self.P) == 12.0

    def test_negative_scores_clamped(self):
        s = np.array([-5.0, 1.0, 1.0, -2.0, 0.0])
        assert most_informative_slice(s, self.P) == 15.0

    def test_all_clamped_gives_median(self):
        assert most_informative_slice(np.array([-1.0, -2.0, 0.0, -3.0, -1e-9]), self.P) == 20.0

    def test_positive_rescaling_invariance(self):
        rng = np.random.default_rng(5)
        s = rng.random(5)
        c1 = most_informative_slice(s, self.P)
        c2 = most_informative_slice(7.3 * s, self.P)
        assert np.isclose(c1, c2)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            s = rng.normal(size=5)
            c = most_informative_slice(s, self.P)
            assert self.P.min() <= c <= self.P.max()

    def test_empty_rejected(self):
        with pytest.raises(AttributionError):
            most_informative_slice(np.array([]), np.array([]))


class TestSubjectAttribution:
    def model(self):
        return MultiBranchRegressor(
            ModelConfig(n_branches=5, n_features=8, conv_channels=(4, 8),
                        fusion_depth=2, init_seed=3)
        )

    def test_fusion_ignoring_branches_pins_center(self):
        model = self.model()
        w = model.fusion.blocks[0].w  # (5*8, width)
        keep = slice(2 * 8, 3 * 8)
        mask = np.zeros_like(w.data)
        mask[keep] = 1.0
        w.data = w.data * mask
        slices = np.random.default_rng(7).random((5, 12, 12))
        res = attribute_subject(model, slices, positions=[5, 15, 25, 35, 45], steps=64)
        assert np.allclose(res.branch_scores[[0, 1, 3, 4]], 0.0)
        assert res.center == 25.0

    def test_zero_weight_branch_scores_exactly_zero(self):
        model = self.model()
        w = model.fusion.blocks[0].w
        w.data[0:8] = 0.0  # branch 0 ignored
        slices = np.random.default_rng(8).random((5, 12, 12))
        res = attribute_subject(model, slices, positions=[5, 15, 25, 35, 45], steps=32)
        assert res.branch_scores[0] == 0.0


class TestPixelMapsAndExport:
    def test_pixel_attribution_shape(self):
        model = MultiBranchRegressor(
            ModelConfig(n_branches=2, n_features=8, conv_channels=(4, 8),
                        fusion_depth=2, init_seed=4)
        )
        slices = np.random.default_rng(9).random((2, 12, 12))
        maps = pixel_attributions(model, slices, steps=8)
        assert maps.shape == (2, 12, 12)
        assert np.all(np.isfinite(maps))

    def test_pgm_format(self, tmp_path):
        m = np.arange(12.0).reshape(3, 4)
        p = tmp_path / "h.pgm"
        export_heatmap_pgm(m, p)
        lines = p.read_text().splitlines()
        assert lines[0] == "P2"
        assert lines[1] == "4 3"
        assert lines[2] == "255"
        values = [int(v) for row in lines[3:] for v in row.split()]
        assert min(values) == 0 and max(values) == 255

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        m = rng.normal(size=(5, 5))
        p = tmp_path / "h.csv"
        export_heatmap_csv(m, p)
        back = np.array([[float(v) for v in line.split(",")] for line in p.read_text().splitlines()])
        assert np.array_equal(back, m)
