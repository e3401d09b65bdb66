"""Synthetic benchmark frames with known sub-pixel motion.

Two families:

* kernel arrays: a regular grid of identical Gaussians, shifted analytically;
* textured frames: an image crop whose second frame is produced by moving a
  fraction ``d`` of every pixel's intensity into its neighbour.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .frame import BitDepth, Frame, crop, downsample, quantize, save_frame
from .kernel import KernelSet, Translation, render_array

__all__ = [
    "GkaSpec",
    "GfsmSpec",
    "gka_kernels",
    "generate_gka",
    "synth_motion",
    "make_gfsm",
    "texture_image",
    "TEXTURES",
    "write_bundle",
]

GKA_RENDER_CUTOFF = 8.0


@dataclass(frozen=True)
class GkaSpec:
    size: int = 241
    scale: float = 2.52
    spacing: float = 2.52 * 7
    theta: float = 0.0
    brightness: float = 1.0
    bit_depth: BitDepth = BitDepth.SIXTEEN
    shift: Translation = Translation(0.0, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bit_depth"] = BitDepth.parse(self.bit_depth).value
        d["shift"] = list(map(float, self.shift))
        d["render_cutoff"] = GKA_RENDER_CUTOFF
        d["grid"] = "centered"
        return d


@dataclass(frozen=True)
class GfsmSpec:
    source: Frame
    downsample_factor: int = 2
    crop_origin: tuple[int, int] = (32, 32)
    crop_size: tuple[int, int] = (64, 64)
    motion: Translation = Translation(0.01, 0.01)
    bit_depth: BitDepth = BitDepth.SIXTEEN

    def to_dict(self) -> dict:
        return {"downsample_factor": self.downsample_factor,
                "crop_origin": list(self.crop_origin), "crop_size": list(self.crop_size),
                "motion": list(map(float, self.motion)),
                "bit_depth": BitDepth.parse(self.bit_depth).value,
                "source_size": [self.source.width, self.source.height]}


def gka_kernels(spec: GkaSpec) -> KernelSet:
    """Centered grid holding ``floor(size / spacing)`` kernels per axis."""
    if not spec.spacing > 0:
        raise ValueError("spacing must be positive")
    per_axis = int(math.floor(spec.size / spec.spacing))
    if per_axis < 1:
        raise ValueError(f"no kernel fits a {spec.size}px frame at spacing {spec.spacing}")
    center = (spec.size - 1) / 2.0
    offsets = (np.arange(per_axis) - (per_axis - 1) / 2.0) * spec.spacing
    gx, gy = np.meshgrid(center + offsets, center + offsets, indexing="xy")
    n = gx.size
    mu = np.column_stack([gx.ravel(), gy.ravel()])
    return KernelSet(np.full(n, spec.brightness), mu, np.full(n, spec.theta),
                     np.full((n, 2), math.log(spec.scale)))


def generate_gka(spec: GkaSpec = GkaSpec()):
    """Kernel-array frame pair; frame B re-renders the same kernels moved by ``spec.shift``.

    Returns ``(frame_a, frame_b, truth, kernels)``.
    """
    ks = gka_kernels(spec)
    depth = BitDepth.parse(spec.bit_depth)
    shift = Translation(*spec.shift)
    a = Frame(render_array(ks, (0.0, 0.0), spec.size, spec.size, GKA_RENDER_CUTOFF), _validate=False)
    b = Frame(render_array(ks, shift, spec.size, spec.size, GKA_RENDER_CUTOFF), _validate=False)
    if depth is not BitDepth.CONTINUOUS:
        a, b = quantize(a, depth), quantize(b, depth)
    return a, b, shift, ks


def _shift_axis(img: np.ndarray, d: float, axis: int) -> np.ndarray:
    if d == 0.0:
        return img.copy()
    out = img.copy()
    src = np.moveaxis(img, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    frac = abs(d)
    if d > 0:
        # intensity flows toward +axis; the first row has no upstream neighbour
        dst[1:] = src[1:] * (1.0 - frac) + src[:-1] * frac
    else:
        dst[:-1] = src[:-1] * (1.0 - frac) + src[1:] * frac
    return out


def synth_motion(frame: Frame, d) -> Frame:
    """Move the frame content by a sub-pixel ``d`` via proportional intensity transfer.

    Along x, ``out[l] = in[l] * (1 - dx) + in[l - 1] * dx`` for ``dx > 0``
    (mirrored for negative values), then the same along y. Inflow-edge pixels
    keep their value. The result is re-quantized to the input bit depth.
    """
    d = Translation(*d)
    if abs(d.dx) >= 1 or abs(d.dy) >= 1:
        raise ValueError("synthetic motion must be sub-pixel (|d| < 1 on both axes)")
    img = _shift_axis(frame.intensities, float(d.dx), axis=1)
    img = _shift_axis(img, float(d.dy), axis=0)
    out = Frame(img, BitDepth.CONTINUOUS, _validate=False)
    if frame.bit_depth is not BitDepth.CONTINUOUS:
        out = quantize(out, frame.bit_depth)
    return out


def make_gfsm(spec: GfsmSpec):
    """Downsample, crop and move a source image; returns ``(frame_a, frame_b, truth)``."""
    depth = BitDepth.parse(spec.bit_depth)
    small = downsample(spec.source, spec.downsample_factor)
    w, h = spec.crop_size
    region = crop(small, spec.crop_origin, w, h)
    a = quantize(region, depth) if depth is not BitDepth.CONTINUOUS else region
    b = synth_motion(a, spec.motion)
    return a, b, Translation(*spec.motion)


def _normalize(img: np.ndarray, lo: float = 0.08, hi: float = 0.92) -> np.ndarray:
    img = img - img.min()
    img = img / max(img.max(), 1e-12)
    return lo + (hi - lo) * img


def _texture_blobs(rng, size):
    noise = rng.standard_normal((size, size))
    coarse = ndimage.gaussian_filter(noise, 9.0, mode="wrap")
    fine = ndimage.gaussian_filter(noise, 5.0, mode="wrap")
    return _normalize(coarse / coarse.std() + 0.5 * fine / fine.std())


def _texture_cells(rng, size):
    # soft-saturated band-pass noise: plateaus separated by smooth ramps
    noise = rng.standard_normal((size, size))
    img = ndimage.gaussian_filter(noise, 6.0, mode="wrap")
    img = np.tanh(1.2 * img / img.std())
    return _normalize(ndimage.gaussian_filter(img, 2.0, mode="wrap"))


def _texture_edges(rng, size):
    img = np.full((size, size), 0.5)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(60):
        cx, cy = rng.uniform(0, size, 2)
        half_w, half_h = rng.uniform(4, 24, 2)
        ang = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)
        v = -(xx - cx) * np.sin(ang) + (yy - cy) * np.cos(ang)
        mask = (np.abs(u) < half_w) & (np.abs(v) < half_h)
        img[mask] = rng.uniform(0, 1)
    # optical blur keeps edges a few pixels wide after downsampling
    return _normalize(ndimage.gaussian_filter(img, 3.0, mode="wrap"))


TEXTURES = {
    "blobs": (_texture_blobs, 11),
    "cells": (_texture_cells, 23),
    "edges": (_texture_edges, 37),
}


def texture_image(name: str = "blobs", size: int = 256) -> Frame:
    """Deterministic procedural grayscale source image (16-bit)."""
    try:
        fn, seed = TEXTURES[name]
    except KeyError:
        raise ValueError(f"unknown texture {name!r}; choose from {sorted(TEXTURES)}") from None
    rng = np.random.default_rng(seed)
    return quantize(Frame(fn(rng, size), _validate=False), BitDepth.SIXTEEN)


def write_bundle(out_dir, frame_a: Frame, frame_b: Frame, truth, spec: dict) -> str:
    """Write ``frame_a.pgm``, ``frame_b.pgm``, ``truth.json`` and ``spec.json``."""
    os.makedirs(out_dir, exist_ok=True)
    save_frame(frame_a, os.path.join(out_dir, "frame_a.pgm"))
    save_frame(frame_b, os.path.join(out_dir, "frame_b.pgm"))
    truth = Translation(*truth)
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump({"dx": truth.dx, "dy": truth.dy}, fh, indent=2)
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)
    return os.fspath(out_dir)
