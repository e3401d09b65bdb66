"""2D Gaussian kernels: definition, rendering and analytic parameter gradients."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _raster
from .frame import BitDepth, Frame

__all__ = [
    "GaussianKernel",
    "KernelSet",
    "Translation",
    "KernelGrad",
    "DegenerateKernelError",
    "covariance",
    "eval_kernel",
    "render",
    "render_points",
    "residual",
    "grad_render",
]

DEFAULT_CUTOFF = 4.0
_MAX_CONDITION = 1e12


class DegenerateKernelError(ValueError):
    pass


class Translation(NamedTuple):
    """Rigid shift shared by every kernel of the second frame, in pixels."""

    dx: float = 0.0
    dy: float = 0.0

    def __neg__(self):
        return Translation(-self.dx, -self.dy)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy], dtype=np.float64)


@dataclass(frozen=True)
class GaussianKernel:
    c: float
    mu: tuple[float, float]
    theta: float = 0.0
    s: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        sx, sy = self.s
        if not (sx > 0 and sy > 0):
            raise ValueError(f"kernel scales must be positive, got {self.s}")
        object.__setattr__(self, "mu", (float(self.mu[0]), float(self.mu[1])))
        object.__setattr__(self, "s", (float(sx), float(sy)))

    @property
    def covariance(self) -> np.ndarray:
        return covariance(self.theta, self.s)


class KernelSet:
    """Ordered collection of kernels stored as parameter arrays.

    Scales are kept as ``log_s`` so that gradient steps never leave the
    positive half-line.
    """

    def __init__(self, c, mu, theta=None, log_s=None):
        self.c = np.array(c, dtype=np.float64).reshape(-1)
        n = self.c.size
        if n < 1:
            raise ValueError("a kernel set needs at least one kernel")
        self.mu = np.array(mu, dtype=np.float64).reshape(n, 2)
        self.theta = (np.zeros(n) if theta is None
                      else np.array(theta, dtype=np.float64).reshape(n))
        self.log_s = (np.zeros((n, 2)) if log_s is None
                      else np.array(log_s, dtype=np.float64).reshape(n, 2))

    @classmethod
    def from_kernels(cls, kernels: Sequence[GaussianKernel]) -> "KernelSet":
        kernels = list(kernels)
        return cls(
            [k.c for k in kernels],
            [k.mu for k in kernels],
            [k.theta for k in kernels],
            np.log([k.s for k in kernels]) if kernels else np.zeros((0, 2)),
        )

    @classmethod
    def concatenate(cls, sets: Sequence["KernelSet"]) -> "KernelSet":
        return cls(
            np.concatenate([s.c for s in sets]),
            np.concatenate([s.mu for s in sets]),
            np.concatenate([s.theta for s in sets]),
            np.concatenate([s.log_s for s in sets]),
        )

    def __len__(self) -> int:
        return self.c.size

    @property
    def count(self) -> int:
        return self.c.size

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_s)

    def __getitem__(self, i) -> GaussianKernel:
        return GaussianKernel(self.c[i], tuple(self.mu[i]), self.theta[i], tuple(np.exp(self.log_s[i])))

    @property
    def kernels(self) -> list[GaussianKernel]:
        return [self[i] for i in range(len(self))]

    def __iter__(self):
        return iter(self.kernels)

    def copy(self) -> "KernelSet":
        return KernelSet(self.c, self.mu, self.theta, self.log_s)

    def shifted(self, shift) -> "KernelSet":
        shift = Translation(*shift)
        return KernelSet(self.c, self.mu + shift.as_array(), self.theta, self.log_s)

    def select(self, index) -> "KernelSet":
        return KernelSet(self.c[index], self.mu[index], self.theta[index], self.log_s[index])

    def to_dict(self) -> list[dict]:
        scales = self.scales
        return [
            {"c": float(self.c[i]), "mu": [float(v) for v in self.mu[i]],
             "theta": float(self.theta[i]), "s": [float(v) for v in scales[i]]}
            for i in range(len(self))
        ]

    @classmethod
    def from_dict(cls, items: Sequence[dict]) -> "KernelSet":
        return cls.from_kernels(
            [GaussianKernel(d["c"], tuple(d["mu"]), d.get("theta", 0.0), tuple(d["s"])) for d in items])

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "KernelSet":
        text = str(text_or_path)
        if not text.lstrip().startswith("["):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"KernelSet(N={len(self)})"


@dataclass
class KernelGrad:
    c: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    log_s: np.ndarray
    shift: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "KernelGrad":
        return cls(np.zeros(n), np.zeros((n, 2)), np.zeros(n), np.zeros((n, 2)), np.zeros(2))

    def __iadd__(self, other: "KernelGrad"):
        self.c += other.c
        self.mu += other.mu
        self.theta += other.theta
        self.log_s += other.log_s
        self.shift += other.shift
        return self


def _rotation(theta: float) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([[ct, -st], [st, ct]])


def covariance(theta: float, s) -> np.ndarray:
    sx, sy = s
    if not (sx > 0 and sy > 0):
        raise ValueError(f"scales must be positive, got {s}")
    rot = _rotation(theta)
    scale = np.diag([sx, sy])
    cov = rot @ scale @ scale.T @ rot.T
    return 0.5 * (cov + cov.T)


def eval_kernel(k: GaussianKernel, x) -> float:
    sx, sy = k.s
    ratio = max(sx, sy) / min(sx, sy)
    if ratio * ratio > _MAX_CONDITION:
        raise DegenerateKernelError(f"covariance condition number {ratio * ratio:.3g} overflows")
    d = np.asarray(x, dtype=np.float64) - np.asarray(k.mu)
    u = _rotation(k.theta).T @ d
    q = (u[0] / sx) ** 2 + (u[1] / sy) ** 2
    return float(k.c * math.exp(-0.5 * q))


def _check_cutoff(cutoff_radius: float) -> float:
    cutoff_radius = float(cutoff_radius)
    if not cutoff_radius >= 3.0:
        raise ValueError("cutoff_radius must be at least 3 (in multiples of the kernel scale)")
    return cutoff_radius


def render_array(ks: KernelSet, shift, width: int, height: int,
                 cutoff_radius: float = DEFAULT_CUTOFF) -> np.ndarray:
    shift = Translation(*shift)
    out = np.zeros((int(height), int(width)))
    _raster.render_grid(ks.c, ks.mu, ks.theta, ks.log_s, float(shift.dx), float(shift.dy),
                        _check_cutoff(cutoff_radius), out)
    return out


def render(ks: KernelSet, shift=Translation(), width: int = 64, height: int = 64,
           cutoff_radius: float = DEFAULT_CUTOFF) -> Frame:
    """Sum of all kernels (centers moved by ``shift``) on the pixel grid, unclamped."""
    return Frame(render_array(ks, shift, width, height, cutoff_radius), BitDepth.CONTINUOUS,
                 _validate=False)


def render_points(ks: KernelSet, shift, xs, ys, cutoff_radius: float = DEFAULT_CUTOFF,
                  bins: _raster.PointBins | None = None) -> np.ndarray:
    """Kernel sum at arbitrary sub-pixel locations, returned in input order."""
    shift = Translation(*shift)
    if bins is None:
        bins = _raster.PointBins(xs, ys)
    out = np.zeros(bins.n)
    _raster.render_points(ks.c, ks.mu, ks.theta, ks.log_s, float(shift.dx), float(shift.dy),
                          _check_cutoff(cutoff_radius), *bins.args(), out)
    return bins.from_sorted(out)


def residual(rendered, target) -> np.ndarray:
    """Representation error: target minus rendered, per pixel."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch: rendered {rendered.shape} vs target {target.shape}")
    return target - rendered


def grad_render(ks: KernelSet, shift, pixel_weights=None, points=None, point_weights=None,
                cutoff_radius: float = DEFAULT_CUTOFF, bins: _raster.PointBins | None = None) -> KernelGrad:
    """Gradient of ``sum_p w(p) * R(p)`` over pixel and sub-pixel locations.

    ``R`` is the render of ``ks`` under ``shift``. ``pixel_weights`` is an
    ``(H, W)`` field; ``points``/``point_weights`` give extra sub-pixel
    locations as ``(xs, ys)`` plus one weight each. The ``shift`` entry of the
    result is the derivative with respect to the shared translation.
    """
    shift = Translation(*shift)
    cutoff = _check_cutoff(cutoff_radius)
    grad = KernelGrad.zeros(len(ks))
    gsx = gsy = 0.0
    if pixel_weights is not None:
        weights = np.ascontiguousarray(pixel_weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError("pixel_weights must be a 2D field")
        gsx, gsy = _raster.backward_grid(ks.c, ks.mu, ks.theta, ks.log_s, float(shift.dx),
                                         float(shift.dy), cutoff, weights, grad.c, grad.mu,
                                         grad.theta, grad.log_s)
    if point_weights is not None:
        if bins is None:
            if points is None:
                raise ValueError("point_weights given without points")
            bins = _raster.PointBins(*points)
        pw = np.asarray(point_weights, dtype=np.float64).ravel()
        if pw.size != bins.n:
            raise ValueError(f"{pw.size} point weights for {bins.n} points")
        px, py = _raster.backward_points(ks.c, ks.mu, ks.theta, ks.log_s, float(shift.dx),
                                         float(shift.dy), cutoff, *bins.args(), bins.to_sorted(pw),
                                         grad.c, grad.mu, grad.theta, grad.log_s)
        gsx += px
        gsy += py
    grad.shift[:] = (gsx, gsy)
    return grad
