"""Two-frame objective: symmetric absolute pixel error plus a gated sub-pixel term.

The sub-pixel ("super-resolution") term compares the rendered surface at
random inter-pixel locations with the bilinearly interpolated target, and
only counts errors larger than ``beta``. Both terms are means, so ``w_s``
balances them independently of frame size and sample count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache, cached_property

import numpy as np

from ._raster import PointBins
from .frame import Frame, bilinear_sample_many
from .kernel import (DEFAULT_CUTOFF, KernelGrad, KernelSet, Translation, grad_render,
                     render_array, render_points, residual)

__all__ = [
    "LossConfig",
    "SRSampleSet",
    "LossEvaluation",
    "data_loss",
    "sr_lattice",
    "sr_lattice_size",
    "sample_sr_locations",
    "sr_residuals",
    "sr_loss",
    "total_loss",
    "evaluate_loss",
]


@dataclass(frozen=True)
class LossConfig:
    w_s: float = 0.33
    beta: float = 0.001
    points_per_gap: int = 4
    sample_fraction: float = 0.05
    symmetric_sr: bool = False

    def __post_init__(self):
        if not 0.0 <= self.w_s < 1.0:
            raise ValueError("w_s must lie in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if int(self.points_per_gap) != self.points_per_gap or self.points_per_gap < 1:
            raise ValueError("points_per_gap must be an integer >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SRSampleSet:
    """Sub-pixel sample locations; ``index`` points into :func:`sr_lattice` order."""

    xs: np.ndarray
    ys: np.ndarray
    seed: tuple = ()
    index: np.ndarray | None = None

    def __len__(self) -> int:
        return self.xs.size

    @cached_property
    def bins(self) -> PointBins:
        return PointBins(self.xs, self.ys)

    def locations(self) -> np.ndarray:
        return np.column_stack([self.xs, self.ys])


def data_loss(E, E_next) -> float:
    """Mean over pixels of ``(|E| + |E'|) / 2``."""
    E = np.asarray(E, dtype=np.float64)
    E_next = np.asarray(E_next, dtype=np.float64)
    if E.shape != E_next.shape:
        raise ValueError(f"error fields differ in shape: {E.shape} vs {E_next.shape}")
    return float(np.mean(0.5 * (np.abs(E) + np.abs(E_next))))


def sr_lattice_size(width: int, height: int, points_per_gap: int) -> int:
    """Closed-form count of inter-pixel lattice points strictly inside the frame."""
    k = points_per_gap + 1
    return (k * (width - 1) - 1) * (k * (height - 1) - 1) - (width - 2) * (height - 2)


@lru_cache(maxsize=8)
def _lattice(width: int, height: int, points_per_gap: int):
    k = points_per_gap + 1
    # cell-major order so that sorted indices are already grouped by unit cell
    m, l, b, a = np.meshgrid(np.arange(height - 1), np.arange(width - 1), np.arange(k),
                             np.arange(k), indexing="ij")
    fi = (l * k + a).ravel()
    fj = (m * k + b).ravel()
    keep = (fi > 0) & (fj > 0) & ~((a.ravel() == 0) & (b.ravel() == 0))
    xs = fi[keep] / k
    ys = fj[keep] / k
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys


def sr_lattice(width: int, height: int, points_per_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """All candidate sub-pixel locations: every ``1/(points_per_gap+1)`` lattice
    point strictly inside the frame that is not an integer pixel node."""
    if width < 2 or height < 2:
        raise ValueError("sub-pixel sampling needs a frame of at least 2x2 pixels")
    return _lattice(int(width), int(height), int(points_per_gap))


def sample_sr_locations(width: int, height: int, cfg: LossConfig, rng_seed) -> SRSampleSet:
    """Uniform random subset of ``ceil(sample_fraction * lattice size)`` locations."""
    xs, ys = sr_lattice(width, height, cfg.points_per_gap)
    total = xs.size
    count = min(total, math.ceil(cfg.sample_fraction * total))
    seed = tuple(np.atleast_1d(rng_seed).tolist())
    if count == total:
        idx = np.arange(total)
    else:
        rng = np.random.default_rng(list(seed))
        idx = np.sort(rng.choice(total, count, replace=False, shuffle=False))
    return SRSampleSet(xs[idx], ys[idx], seed, idx)


def sr_residuals(ks: KernelSet, shift, target: Frame, samples: SRSampleSet,
                 cutoff_radius: float = DEFAULT_CUTOFF, expected=None) -> np.ndarray:
    """Bilinear target minus rendered surface at each sample location.

    ``expected`` may carry precomputed bilinear target values for the samples.
    """
    if len(samples) == 0:
        return np.zeros(0)
    if expected is None:
        expected = bilinear_sample_many(target, samples.xs, samples.ys)
    rendered = render_points(ks, shift, samples.xs, samples.ys, cutoff_radius, bins=samples.bins)
    return expected - rendered


def _gated_mean(errors: np.ndarray, beta: float) -> float:
    if errors.size == 0:
        return 0.0
    mag = np.abs(errors)
    return float(np.mean(np.where(mag - beta > 0, mag, 0.0)))


def sr_loss(ks: KernelSet, shift, target: Frame, samples: SRSampleSet, cfg: LossConfig,
            cutoff_radius: float = DEFAULT_CUTOFF) -> float:
    """Mean of ``|E_s|`` over samples whose error strictly exceeds ``beta``."""
    return _gated_mean(sr_residuals(ks, shift, target, samples, cutoff_radius), cfg.beta)


def total_loss(data: float, sr: float, cfg: LossConfig) -> float:
    return (1.0 - cfg.w_s) * data + cfg.w_s * sr


@dataclass
class LossEvaluation:
    total: float
    data: float
    sr: float
    residual_a: np.ndarray
    residual_b: np.ndarray
    grad: KernelGrad | None = field(default=None, repr=False)


def evaluate_loss(ks: KernelSet, shift, frame_a: Frame, frame_b: Frame,
                  samples: SRSampleSet | None, cfg: LossConfig,
                  cutoff_radius: float = DEFAULT_CUTOFF, with_grad: bool = True,
                  sr_targets=None) -> LossEvaluation:
    """Total objective for the pair and, optionally, its analytic (sub)gradient.

    Frame A is rendered from ``ks``; frame B from ``ks`` moved by ``shift``.
    The gated term applies to frame A, and to frame B too when
    ``cfg.symmetric_sr`` is set. ``sr_targets`` optionally holds the bilinear
    target values over the whole sub-pixel lattice, one array per frame.
    """
    shift = Translation(*shift)
    if frame_a.shape != frame_b.shape:
        raise ValueError("frames differ in size")
    h, w = frame_a.shape
    e_a = residual(render_array(ks, (0.0, 0.0), w, h, cutoff_radius), frame_a.intensities)
    e_b = residual(render_array(ks, shift, w, h, cutoff_radius), frame_b.intensities)
    data = data_loss(e_a, e_b)

    use_sr = cfg.w_s > 0 and samples is not None and len(samples) > 0
    sr_terms = []
    if use_sr:
        sr_terms.append((Translation(), frame_a))
        if cfg.symmetric_sr:
            sr_terms.append((shift, frame_b))
    sr_errors = []
    for k, (s, f) in enumerate(sr_terms):
        expected = None
        if sr_targets is not None and samples.index is not None:
            expected = sr_targets[k][samples.index]
        sr_errors.append(sr_residuals(ks, s, f, samples, cutoff_radius, expected))
    sr = float(np.mean([_gated_mean(e, cfg.beta) for e in sr_errors])) if sr_errors else 0.0
    total = total_loss(data, sr, cfg)
    ev = LossEvaluation(total, data, sr, e_a, e_b)
    if not with_grad:
        return ev

    # dL/dR = -dL/dE for E = target - R
    pix_scale = (1.0 - cfg.w_s) / (2.0 * e_a.size)
    grad = grad_render(ks, (0.0, 0.0), -pix_scale * np.sign(e_a), cutoff_radius=cutoff_radius)
    grad_b = grad_render(ks, shift, -pix_scale * np.sign(e_b), cutoff_radius=cutoff_radius)
    grad.shift[:] = 0.0
    grad += grad_b
    for idx, ((s, _), errors) in enumerate(zip(sr_terms, sr_errors)):
        active = (np.abs(errors) - cfg.beta > 0) & (errors != 0)
        pts_w = -(cfg.w_s / (errors.size * len(sr_terms))) * np.sign(errors[active])
        g = grad_render(ks, s, points=(samples.xs[active], samples.ys[active]),
                        point_weights=pts_w, cutoff_radius=cutoff_radius)
        if idx == 0:
            g.shift[:] = 0.0  # frame A does not move with the shift
        grad += g
    ev.grad = grad
    return ev
