"""Grayscale frames: loading, quantization, sampling, cropping and downsampling.

Intensities are always held as normalized floats. Pixel ``(l, m)`` sits at
continuous position ``x = l, y = m`` and is stored at ``intensities[m, l]``.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BitDepth",
    "Frame",
    "FrameError",
    "UnreadableFrameError",
    "MultiChannelError",
    "UnsupportedDepthError",
    "load_frame",
    "save_frame",
    "quantize",
    "bilinear_sample",
    "bilinear_sample_many",
    "crop",
    "downsample",
]


class FrameError(ValueError):
    pass


class UnreadableFrameError(FrameError):
    pass


class MultiChannelError(FrameError):
    pass


class UnsupportedDepthError(FrameError):
    pass


class BitDepth(enum.Enum):
    EIGHT = 8
    SIXTEEN = 16
    CONTINUOUS = 0

    @property
    def maxval(self) -> int:
        if self is BitDepth.CONTINUOUS:
            raise ValueError("continuous frames have no integer levels")
        return (1 << self.value) - 1

    @classmethod
    def parse(cls, value) -> "BitDepth":
        if isinstance(value, BitDepth):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            aliases = {"8": cls.EIGHT, "eight": cls.EIGHT, "16": cls.SIXTEEN,
                       "sixteen": cls.SIXTEEN, "continuous": cls.CONTINUOUS, "0": cls.CONTINUOUS}
            if key in aliases:
                return aliases[key]
        elif value in (8, 16, 0):
            return cls(value)
        raise UnsupportedDepthError(f"unsupported bit depth: {value!r}")


@dataclass(frozen=True, eq=False)
class Frame:
    """Immutable 2D grid of normalized intensities.

    Quantized frames (8/16 bit) must hold values in [0, 1] on their level grid.
    Continuous frames only need finite values, so rendered kernel sums that
    overshoot 1 can be represented without clamping.
    """

    intensities: np.ndarray
    bit_depth: BitDepth = BitDepth.CONTINUOUS
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        data = np.array(self.intensities, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise FrameError(f"frame must be a non-empty 2D grid, got shape {data.shape}")
        depth = BitDepth.parse(self.bit_depth)
        if self._validate:
            if not np.all(np.isfinite(data)):
                raise FrameError("frame contains non-finite intensities")
            if depth is not BitDepth.CONTINUOUS:
                if data.min() < 0.0 or data.max() > 1.0:
                    raise FrameError("quantized intensities must lie in [0, 1]")
                levels = data * depth.maxval
                if np.max(np.abs(levels - np.rint(levels))) > 1e-6:
                    raise FrameError(f"intensities are not multiples of 1/{depth.maxval}")
        data.setflags(write=False)
        object.__setattr__(self, "intensities", data)
        object.__setattr__(self, "bit_depth", depth)

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.intensities, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.bit_depth is other.bit_depth and np.array_equal(self.intensities, other.intensities)

    __hash__ = None


def _from_levels(levels: np.ndarray, depth: BitDepth) -> Frame:
    return Frame(levels.astype(np.float64) / depth.maxval, depth, _validate=False)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise UnreadableFrameError("truncated PNM header")
    return buf[start:pos], pos


def _load_pgm(path) -> Frame:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise UnreadableFrameError(f"cannot read {path}: {exc}") from exc
    magic = buf[:2]
    if magic in (b"P6", b"P3", b"P7"):
        raise MultiChannelError(f"{path}: {magic.decode()} is a multi-channel format")
    if magic != b"P5":
        raise UnreadableFrameError(f"{path}: not a binary PGM (P5) file")
    try:
        pos = 2
        tokens = []
        for _ in range(3):
            tok, pos = _read_token(buf, pos)
            tokens.append(int(tok))
    except ValueError as exc:
        raise UnreadableFrameError(f"{path}: malformed PGM header") from exc
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise UnreadableFrameError(f"{path}: invalid dimensions {width}x{height}")
    if maxval == 255:
        depth, dtype = BitDepth.EIGHT, np.dtype(np.uint8)
    elif maxval == 65535:
        depth, dtype = BitDepth.SIXTEEN, np.dtype(">u2")
    else:
        raise UnsupportedDepthError(f"{path}: maxval {maxval} is neither 255 nor 65535")
    pos += 1  # single whitespace byte ends the header
    count = width * height
    raw = buf[pos:pos + count * dtype.itemsize]
    if len(raw) != count * dtype.itemsize:
        raise UnreadableFrameError(f"{path}: truncated pixel data")
    levels = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return _from_levels(levels, depth)


def _load_png(path) -> Frame:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            bits = img.info.get("bits")
            arr = np.array(img)
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableFrameError(f"cannot decode {path}: {exc}") from exc
    if mode in ("RGB", "RGBA", "LA", "CMYK", "YCbCr", "P", "PA", "La", "RGBa"):
        raise MultiChannelError(f"{path}: mode {mode} is not single-channel grayscale")
    if mode == "L":
        return _from_levels(arr, BitDepth.EIGHT)
    if mode.startswith("I;16") or (mode == "I" and arr.max(initial=0) <= 65535 and bits in (None, 16)):
        return _from_levels(arr.astype(np.uint32), BitDepth.SIXTEEN)
    raise UnsupportedDepthError(f"{path}: unsupported grayscale mode {mode}")


def load_frame(path, format: str | None = None) -> Frame:
    """Read an 8/16-bit grayscale PGM (P5) or PNG into a normalized frame."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise UnreadableFrameError(f"no such file: {path}")
    fmt = (format or "").upper()
    if not fmt:
        with open(path, "rb") as fh:
            head = fh.read(8)
        if head.startswith(b"\x89PNG"):
            fmt = "PNG"
        elif head[:1] == b"P":
            fmt = "PGM"
        else:
            raise UnreadableFrameError(f"{path}: unrecognized image format")
    if fmt == "PGM":
        return _load_pgm(path)
    if fmt == "PNG":
        return _load_png(path)
    raise UnreadableFrameError(f"unknown format {format!r}")


def save_frame(frame: Frame, path, format: str | None = None) -> None:
    """Write a frame as PGM (default) or PNG; continuous frames are stored at 16 bit."""
    path = os.fspath(path)
    depth = frame.bit_depth
    if depth is BitDepth.CONTINUOUS:
        frame = quantize(frame, BitDepth.SIXTEEN)
        depth = BitDepth.SIXTEEN
    levels = np.rint(frame.intensities * depth.maxval)
    fmt = (format or ("PNG" if path.lower().endswith(".png") else "PGM")).upper()
    if fmt == "PNG":
        from PIL import Image

        arr = levels.astype(np.uint8 if depth is BitDepth.EIGHT else np.uint16)
        Image.fromarray(arr).save(path)
        return
    dtype = np.uint8 if depth is BitDepth.EIGHT else ">u2"
    header = f"P5\n{frame.width} {frame.height}\n{depth.maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(levels.astype(dtype).tobytes())


def quantize(frame: Frame, depth) -> Frame:
    """Round intensities to the level grid of ``depth``; ties round away from zero."""
    depth = BitDepth.parse(depth)
    if depth is BitDepth.CONTINUOUS:
        raise UnsupportedDepthError("quantize needs an integer bit depth")
    values = np.clip(frame.intensities, 0.0, 1.0)
    levels = np.floor(values * depth.maxval + 0.5)
    return _from_levels(levels, depth)


def _check_inside(frame: Frame, x, y) -> None:
    x = np.asarray(x)
    y = np.asarray(y)
    if (np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)) or np.any(x < 0) or np.any(y < 0)
            or np.any(x > frame.width - 1) or np.any(y > frame.height - 1)):
        raise IndexError("sample location outside frame bounds")


def bilinear_sample_many(frame: Frame, xs, ys) -> np.ndarray:
    """Vectorized bilinear interpolation at sub-pixel locations."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    _check_inside(frame, xs, ys)
    img = frame.intensities
    h, w = img.shape
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def bilinear_sample(frame: Frame, loc) -> float:
    x, y = loc
    return float(bilinear_sample_many(frame, np.array([x]), np.array([y]))[0])


def crop(frame: Frame, origin, w: int, h: int) -> Frame:
    l0, m0 = (int(v) for v in origin)
    if w < 1 or h < 1 or l0 < 0 or m0 < 0 or l0 + w > frame.width or m0 + h > frame.height:
        raise IndexError(
            f"crop {w}x{h} at ({l0},{m0}) exceeds {frame.width}x{frame.height} frame")
    return Frame(frame.intensities[m0:m0 + h, l0:l0 + w], frame.bit_depth, _validate=False)


def downsample(frame: Frame, factor: int) -> Frame:
    """Block-mean downsampling; trailing rows/columns that do not fill a block are dropped."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return frame
    h = frame.height // factor
    w = frame.width // factor
    if h < 1 or w < 1:
        raise ValueError(f"factor {factor} larger than frame {frame.width}x{frame.height}")
    blocks = frame.intensities[:h * factor, :w * factor].reshape(h, factor, w, factor)
    return Frame(blocks.mean(axis=(1, 3)), BitDepth.CONTINUOUS)


def lattice_levels(frame: Frame) -> np.ndarray:
    """Integer gray levels of a quantized frame."""
    return np.rint(frame.intensities * frame.bit_depth.maxval).astype(np.int64)

