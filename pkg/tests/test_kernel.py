import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussmotion.kernel import (DegenerateKernelError, GaussianKernel, KernelSet, Translation,
                                covariance, eval_kernel, grad_render, render, render_array,
                                render_points, residual)

from oracles import central_difference, render_at, render_dense


def random_set(rng, n, w, h, margin=0.0):
    return KernelSet(rng.uniform(-0.3, 1.0, n),
                     np.column_stack([rng.uniform(margin, w - 1 - margin, n),
                                      rng.uniform(margin, h - 1 - margin, n)]),
                     rng.uniform(-np.pi, np.pi, n),
                     np.log(rng.uniform(0.7, 3.0, (n, 2))))


def params_of(ks):
    return ks.c, ks.mu, ks.theta, ks.log_s


class TestCovariance:
    def test_table_scale(self):
        assert np.allclose(covariance(0.0, (2.52, 2.52)), np.diag([6.3504, 6.3504]), atol=1e-12)

    def test_quarter_turn_swaps(self):
        assert np.allclose(covariance(np.pi / 2, (1.5, 3.0)), np.diag([9.0, 2.25]), atol=1e-12)

    def test_half_turn(self):
        assert np.allclose(covariance(np.pi, (1.2, 2.7)), covariance(0.0, (1.2, 2.7)), atol=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            covariance(0.0, (0.0, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_symmetric_positive_definite(self, theta, sx, sy):
        cov = covariance(theta, (sx, sy))
        assert np.array_equal(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)


class TestEvalKernel:
    k = GaussianKernel(1.0, (10.0, 20.0), 0.0, (2.52, 2.52))

    def test_center(self):
        assert eval_kernel(GaussianKernel(0.7, (3.3, 4.1), 0.4, (1.0, 2.0)), (3.3, 4.1)) == 0.7

    def test_one_sigma(self):
        assert eval_kernel(self.k, (12.52, 20.0)) == pytest.approx(0.606531, abs=1e-6)

    def test_diagonal(self):
        assert eval_kernel(self.k, (12.52, 22.52)) == pytest.approx(0.367879, abs=1e-6)

    def test_degenerate(self):
        with pytest.raises(DegenerateKernelError):
            eval_kernel(GaussianKernel(1.0, (0, 0), 0.0, (1e-7, 1.0)), (0.1, 0.1))


class TestRender:
    def test_center_pixel(self):
        ks = KernelSet.from_kernels([GaussianKernel(0.8, (5.0, 7.0), 0.3, (1.4, 2.2))])
        assert render(ks, Translation(), 12, 12).intensities[7, 5] == 0.8

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        ks = random_set(rng, 15, 30, 22)
        fast = render_array(ks, (0.31, -0.42), 30, 22, 4.0)
        slow = render_dense(params_of(ks), 30, 22, (0.31, -0.42), cutoff=4.0)
        assert np.max(np.abs(fast - slow)) < 1e-13

    def test_twice(self):
        one = KernelSet.from_kernels([GaussianKernel(0.5, (6.2, 5.9), 0.1, (1.3, 2.0))])
        two = KernelSet.concatenate([one, one])
        assert np.array_equal(render_array(two, (0, 0), 14, 12), 2 * render_array(one, (0, 0), 14, 12))

    def test_translation_equivariance(self):
        rng = np.random.default_rng(1)
        ks = random_set(rng, 10, 60, 60, margin=25)
        shift = Translation(0.37, -0.21)
        ys, xs = np.mgrid[10:50, 10:50]
        moved = render_array(ks, shift, 60, 60)[10:50, 10:50].ravel()
        base = render_points(ks, (0, 0), xs.ravel() - shift.dx, ys.ravel() - shift.dy)
        assert np.max(np.abs(moved - base)) < 1e-10

    def test_rotation_periodicity(self):
        rng = np.random.default_rng(2)
        ks = random_set(rng, 12, 25, 25)
        turned = KernelSet(ks.c, ks.mu, ks.theta + np.pi, ks.log_s)
        assert np.max(np.abs(render_array(ks, (0, 0), 25, 25) - render_array(turned, (0, 0), 25, 25))) < 1e-12

    def test_additivity(self):
        rng = np.random.default_rng(3)
        a, b = random_set(rng, 8, 20, 20), random_set(rng, 9, 20, 20)
        both = render_array(KernelSet.concatenate([a, b]), (0.1, 0.2), 20, 20)
        parts = render_array(a, (0.1, 0.2), 20, 20) + render_array(b, (0.1, 0.2), 20, 20)
        assert np.max(np.abs(both - parts)) < 1e-12

    def test_cutoff_error_bound(self):
        rng = np.random.default_rng(4)
        ks = random_set(rng, 6, 40, 40)
        cut = render_array(ks, (0, 0), 40, 40, 4.0)
        full = render_dense(params_of(ks), 40, 40)
        bound = np.sum(np.abs(ks.c)) * math.exp(-8.0)
        assert np.max(np.abs(cut - full)) <= bound

    def test_cutoff_minimum(self):
        ks = KernelSet.from_kernels([GaussianKernel(1.0, (2.0, 2.0))])
        with pytest.raises(ValueError):
            render(ks, Translation(), 4, 4, cutoff_radius=2.0)

    def test_points_match_grid(self):
        rng = np.random.default_rng(5)
        ks = random_set(rng, 10, 16, 16)
        ys, xs = np.mgrid[0:16, 0:16]
        grid = render_array(ks, (0.05, 0.0), 16, 16)
        pts = render_points(ks, (0.05, 0.0), xs.ravel(), ys.ravel())
        assert np.max(np.abs(grid.ravel() - pts)) < 1e-13


class TestResidual:
    def test_examples(self):
        r = np.random.default_rng(0).random((3, 4))
        assert np.all(residual(r, r) == 0)
        assert np.all(residual(np.zeros((2, 2)), np.ones((2, 2))) == 1)
        assert np.array_equal(residual(r, r.T.T * 0.5), -residual(r * 0.5, r))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            residual(np.zeros((2, 3)), np.zeros((3, 2)))


class TestGradRender:
    def test_zero_weights(self):
        rng = np.random.default_rng(6)
        ks = random_set(rng, 5, 12, 12)
        g = grad_render(ks, (0.2, 0.1), np.zeros((12, 12)))
        for arr in (g.c, g.mu, g.theta, g.log_s, g.shift):
            assert np.all(arr == 0)

    def test_center_is_stationary(self):
        ks = KernelSet.from_kernels([GaussianKernel(0.9, (4.0, 5.0), 0.7, (1.1, 2.3))])
        w = np.zeros((10, 10))
        w[5, 4] = 1.0
        g = grad_render(ks, (0, 0), w)
        assert np.all(g.mu == 0)
        assert g.c[0] == 1.0

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        w, h, n = 18, 15, 6
        ks = random_set(rng, n, w, h)
        shift = rng.uniform(-0.5, 0.5, 2)
        weights = rng.normal(size=(h, w))
        xs, ys = rng.uniform(0, w - 1, 40), rng.uniform(0, h - 1, 40)
        pw = rng.normal(size=40)
        g = grad_render(ks, shift, weights, points=(xs, ys), point_weights=pw, cutoff_radius=12.0)

        def objective(vec):
            c, mu, th, ls, sh = vec[:n], vec[n:3 * n].reshape(n, 2), vec[3 * n:4 * n], \
                vec[4 * n:6 * n].reshape(n, 2), vec[6 * n:]
            p = (c, mu, th, ls)
            return np.sum(weights * render_dense(p, w, h, sh)) + np.sum(pw * render_at(p, xs, ys, sh))

        vec = np.concatenate([ks.c, ks.mu.ravel(), ks.theta, ks.log_s.ravel(), shift])
        fd = central_difference(objective, vec, 1e-5)
        analytic = np.concatenate([g.c, g.mu.ravel(), g.theta, g.log_s.ravel(), g.shift])
        assert np.all(np.abs(analytic - fd) <= np.maximum(1e-5 * np.abs(fd), 1e-8))

    def test_shift_is_sum_of_centers(self):
        rng = np.random.default_rng(7)
        ks = random_set(rng, 7, 14, 14)
        g = grad_render(ks, (0.3, 0.3), rng.normal(size=(14, 14)))
        assert np.allclose(g.shift, g.mu.sum(axis=0), rtol=1e-12, atol=1e-15)

    def test_weight_shape_checked(self):
        ks = KernelSet.from_kernels([GaussianKernel(1.0, (1.0, 1.0))])
        with pytest.raises(ValueError):
            grad_render(ks, (0, 0), np.zeros(5))
        with pytest.raises(ValueError):
            grad_render(ks, (0, 0), points=([0.5], [0.5]), point_weights=[1.0, 2.0])


class TestKernelSet:
    def test_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        ks = random_set(rng, 4, 10, 10)
        path = tmp_path / "k.json"
        ks.to_json(path)
        back = KernelSet.from_json(path)
        assert np.allclose(back.c, ks.c) and np.allclose(back.mu, ks.mu)
        assert np.allclose(back.scales, ks.scales, rtol=1e-14)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError):
            GaussianKernel(1.0, (0, 0), 0.0, (-1.0, 1.0))
