import math
from dataclasses import replace

import numpy as np
import pytest

from gaussmotion.frame import Frame
from gaussmotion.kernel import KernelSet, Translation, render_array
from gaussmotion.loss import LossConfig
from gaussmotion.solver import (Adam, FitConfig, densify_and_prune, fit_pair, init_kernels,
                                init_state, measure_motion, step, summarize_runs)


def model_pair(shift=(0.0, 0.0), size=32, n=12, seed=0):
    rng = np.random.default_rng(seed)
    ks = KernelSet(rng.uniform(0.3, 0.6, n), rng.uniform(6, size - 7, (n, 2)),
                   rng.uniform(0, np.pi, n), np.log(rng.uniform(1.5, 3.0, (n, 2))))
    a = Frame(render_array(ks, (0, 0), size, size, 8.0))
    b = Frame(render_array(ks, shift, size, size, 8.0))
    return a, b, ks


SMALL = FitConfig(kernel_count=80, iterations=60, densify_start=20, densify_stop=40,
                  densify_interval=20)


class TestInit:
    frame = Frame(np.random.default_rng(0).uniform(0.2, 0.8, (20, 30)))

    def test_contract(self):
        ks = init_kernels(self.frame, 50, 3)
        assert len(ks) == 50
        assert np.all(ks.mu >= 0) and np.all(ks.mu[:, 0] <= 29) and np.all(ks.mu[:, 1] <= 19)
        assert np.all(ks.theta == 0) and np.allclose(ks.scales, 1.5)
        from gaussmotion.frame import bilinear_sample_many
        assert np.allclose(ks.c, 0.8 * bilinear_sample_many(self.frame, ks.mu[:, 0], ks.mu[:, 1]))

    def test_seeds(self):
        a, b = init_kernels(self.frame, 10, 1), init_kernels(self.frame, 10, 1)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.c, b.c)
        assert not np.array_equal(a.mu, init_kernels(self.frame, 10, 2).mu)

    def test_needs_a_kernel(self):
        with pytest.raises(ValueError):
            init_kernels(self.frame, 0, 0)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        opt = Adam({"x": 0.1})
        x = np.array([1.0, -2.0, 3.0])
        before = x.copy()
        for _ in range(5):
            opt.step({"x": x}, {"x": np.zeros(3)})
        assert np.array_equal(x, before)

    def test_first_step_moves_by_lr(self):
        opt = Adam({"x": 0.1})
        x = np.zeros(2)
        opt.step({"x": x}, {"x": np.array([3.0, -0.5])})
        assert np.allclose(x, [-0.1, 0.1], rtol=1e-6)


class TestStep:
    def test_exact_representation_does_not_move(self):
        # the generating kernels are a stationary point of the pixel loss
        a, _, ks = model_pair()
        cfg = replace(SMALL, kernel_count=len(ks), cutoff_radius=8.0)
        loss_cfg = LossConfig(w_s=0.0)
        state = init_state(a, a, cfg, loss_cfg)
        state.kernels = ks.copy()
        for it in range(100):
            step(state, (a, a), cfg, loss_cfg, it)
        assert np.all(state.shift == 0.0)
        assert np.array_equal(state.kernels.mu, ks.mu)

    def test_loss_recorded_and_finite(self):
        a, b, _ = model_pair((0.1, 0.1))
        res = fit_pair(a, b, SMALL)
        assert res.iterations_run == SMALL.iterations
        assert np.all(np.isfinite(res.loss_trace))
        assert res.loss_trace[-1] < res.loss_trace[0]


class TestDensify:
    def _state(self, n=20):
        a, b, _ = model_pair()
        cfg = replace(SMALL, kernel_count=n)
        return init_state(a, b, cfg, LossConfig()), cfg

    def test_nothing_to_do(self):
        state, cfg = self._state()
        state.kernels = KernelSet(np.full(20, 0.5), state.kernels.mu, state.kernels.theta,
                                  state.kernels.log_s)
        before = state.kernels.copy()
        densify_and_prune(state, cfg)
        assert np.array_equal(state.kernels.mu, before.mu)
        assert np.array_equal(state.kernels.c, before.c)

    def test_prunes_dark_kernel(self):
        state, cfg = self._state()
        c = np.full(20, 0.5)
        c[7] = 0.0
        state.kernels = KernelSet(c, state.kernels.mu, state.kernels.theta, state.kernels.log_s)
        densify_and_prune(state, cfg)
        assert len(state.kernels) == 19 and np.all(state.kernels.c != 0)

    def test_clone_and_split(self):
        state, cfg = self._state()
        ks = state.kernels
        log_s = ks.log_s.copy()
        log_s[3] = math.log(4.0)
        state.kernels = KernelSet(np.full(20, 0.5), ks.mu, ks.theta, log_s)
        state.grad_accum[:] = 0.0
        state.grad_accum[[3, 5]] = 1.0
        state.grad_count[:] = 1.0
        cfg = replace(cfg, kernel_count=40)
        densify_and_prune(state, cfg)
        new = state.kernels
        assert len(new) == 20 - 1 + 1 + 2
        assert np.sum(np.isclose(new.c, 0.25)) == 2
        assert np.sum(np.isclose(new.scales[:, 0], 2.5)) == 2
        assert len(state.grad_accum) == len(new)

    def test_cap(self):
        state, cfg = self._state()
        state.grad_accum[:] = 1.0
        state.grad_count[:] = 1.0
        densify_and_prune(state, cfg)
        assert len(state.kernels) <= cfg.kernel_count

    def test_count_capped_during_fit(self):
        a, b, _ = model_pair((0.05, 0.0))
        cfg = replace(SMALL, kernel_count=30, split_grad_threshold=0.0)
        assert len(fit_pair(a, b, cfg).kernels) <= 30


class TestFit:
    def test_deterministic(self):
        a, b, _ = model_pair((0.2, -0.1))
        r1, r2 = fit_pair(a, b, SMALL), fit_pair(a, b, SMALL)
        assert r1.motion == r2.motion
        assert np.array_equal(r1.loss_trace, r2.loss_trace)
        assert np.array_equal(r1.kernels.mu, r2.kernels.mu)

    def test_identical_frames(self):
        a, _, _ = model_pair()
        cfg = replace(SMALL, iterations=600, densify_start=120, densify_stop=360,
                      densify_interval=60)
        res = fit_pair(a, a, cfg)
        assert abs(res.motion.dx) <= 1e-4 and abs(res.motion.dy) <= 1e-4

    def test_recovers_shift_and_swaps(self):
        a, b, _ = model_pair((0.1, -0.1), size=40, n=16)
        cfg = replace(SMALL, iterations=600, kernel_count=200, densify_start=100,
                      densify_stop=400, densify_interval=100)
        fwd = fit_pair(a, b, cfg).motion.as_array()
        back = fit_pair(b, a, cfg).motion.as_array()
        assert np.allclose(fwd, [0.1, -0.1], atol=0.01)
        mae = np.abs(fwd - [0.1, -0.1])
        assert np.all(np.abs(fwd + back) <= 2 * (mae + 1e-4) + 0.005)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            fit_pair(Frame(np.zeros((4, 4))), Frame(np.zeros((4, 5))), SMALL)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FitConfig(kernel_count=0)
        with pytest.raises(ValueError):
            FitConfig(densify_start=10, densify_stop=5)


class TestMeasure:
    def test_single_run(self):
        a, b, _ = model_pair((0.1, 0.1))
        rep = measure_motion(a, b, SMALL, n_runs=1, ground_truth=(0.1, 0.1))
        est = rep.motions[0].as_array()
        assert np.array_equal(rep.mae, np.abs(est - 0.1))
        assert np.all(rep.std == 0)
        assert rep.seeds == [SMALL.rng_seed]

    def test_seeds_and_dispersion(self):
        a, b, _ = model_pair((0.1, 0.1))
        rep = measure_motion(a, b, replace(SMALL, rng_seed=4), n_runs=3)
        assert rep.seeds == [4, 5, 6] and rep.mae_is_dispersion
        est = np.array([m.as_array() for m in rep.motions])
        assert np.allclose(rep.mae, np.mean(np.abs(est - est.mean(axis=0)), axis=0))
        assert np.allclose(rep.std, est.std(axis=0, ddof=1))
        assert np.all(np.isnan(rep.pct_error))

    def test_diverged_runs_excluded(self):
        a, b, _ = model_pair()
        ok = fit_pair(a, b, replace(SMALL, iterations=5))
        rep = summarize_runs([ok, None, ok], [0, 1, 2], Translation(0, 0), SMALL, LossConfig())
        assert rep.n_diverged == 1 and len(rep.motions) == 2
        assert np.all(rep.std == 0)
        assert rep.to_dict()["n_diverged"] == 1

    def test_needs_a_run(self):
        a, b, _ = model_pair()
        with pytest.raises(ValueError):
            measure_motion(a, b, SMALL, n_runs=0)
