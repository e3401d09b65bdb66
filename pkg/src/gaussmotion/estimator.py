"""scikit-learn style wrapper around the two-frame motion fit."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .frame import BitDepth, Frame
from .loss import LossConfig
from .solver import FitConfig, measure_motion


def check_frame_pair(X):
    """Coerce ``X`` into two equally sized frames.

    Accepts a pair of :class:`Frame` objects or anything array-like of shape
    ``(2, H, W)``. Arrays become continuous-depth frames.
    """
    if isinstance(X, (tuple, list)) and len(X) == 2 and all(isinstance(f, Frame) for f in X):
        a, b = X
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 2:
            raise ValueError(f"expected a frame pair of shape (2, H, W), got {arr.shape}")
        a = Frame(check_array(arr[0], ensure_min_samples=2, ensure_min_features=2))
        b = Frame(check_array(arr[1], ensure_min_samples=2, ensure_min_features=2))
    if a.shape != b.shape:
        raise ValueError(f"frame sizes differ: {a.shape} vs {b.shape}")
    return a, b


class GaussianMotionEstimator(BaseEstimator):
    """Measure the rigid sub-pixel translation between two frames.

    ``fit(X)`` runs ``n_runs`` randomized fits on the pair ``X`` and stores
    the mean motion in ``motion_`` (``[dx, dy]`` in pixels) together with the
    full :class:`MeasurementReport` in ``report_``. Passing the true motion
    as ``y`` makes the report's MAE an error against it.
    """

    def __init__(self, kernel_count=3000, iterations=5000, w_s=0.33, beta=0.001,
                 points_per_gap=4, sample_fraction=0.05, symmetric_sr=False, n_runs=5,
                 random_state=0, n_jobs=1):
        self.kernel_count = kernel_count
        self.iterations = iterations
        self.w_s = w_s
        self.beta = beta
        self.points_per_gap = points_per_gap
        self.sample_fraction = sample_fraction
        self.symmetric_sr = symmetric_sr
        self.n_runs = n_runs
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _configs(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        fit_cfg = FitConfig(kernel_count=self.kernel_count, iterations=self.iterations,
                            rng_seed=seed)
        loss_cfg = LossConfig(w_s=self.w_s, beta=self.beta, points_per_gap=self.points_per_gap,
                              sample_fraction=self.sample_fraction,
                              symmetric_sr=self.symmetric_sr)
        return fit_cfg, loss_cfg

    def fit(self, X, y=None):
        a, b = check_frame_pair(X)
        truth = None
        if y is not None:
            truth = np.asarray(y, dtype=np.float64).ravel()
            if truth.shape != (2,) or not np.all(np.isfinite(truth)):
                raise ValueError("y must be a finite (dx, dy) pair")
        fit_cfg, loss_cfg = self._configs()
        report = measure_motion(a, b, fit_cfg, loss_cfg, n_runs=self.n_runs,
                                ground_truth=truth, jobs=self.n_jobs)
        if not report.motions:
            raise RuntimeError("every run diverged; no motion estimate available")
        self.report_ = report
        self.motion_ = report.mean_motion
        self.frame_shape_ = a.shape
        return self

    def predict(self, X=None):
        """Fitted motion ``[dx, dy]``; with ``X`` the pair is fitted first."""
        if X is not None:
            self.fit(X)
        check_is_fitted(self, "motion_")
        return self.motion_.copy()


def as_frame(array, bit_depth=BitDepth.CONTINUOUS) -> Frame:
    """Validated frame from a 2-D array of normalized intensities."""
    return Frame(check_array(array, ensure_min_samples=1, ensure_min_features=1), bit_depth)
