"""Grayscale image conventions, file I/O, and pixel-level primitives.

An image is a plain 2-D float64 numpy array of shape (height, width), row
major, with intensities nominally in [0, 1] (not enforced on intermediates).
All functions here are pure: inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    """Base class for image file format problems."""


class UnsupportedFormatError(ImageFormatError):
    """File magic is not one of the supported formats."""


class MalformedHeaderError(ImageFormatError):
    """Header exists but cannot be parsed or carries invalid values."""


class TruncatedPayloadError(ImageFormatError):
    """Header promised more pixel data than the file contains."""


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the 2-D/finite/nonempty invariants and return img as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# Constraint sets and projection
# ---------------------------------------------------------------------------

class Unconstrained:
    """No constraint; projection is the identity."""

    def __repr__(self) -> str:
        return "Unconstrained()"


class NonNegative:
    """The nonnegative orthant."""

    def __repr__(self) -> str:
        return "NonNegative()"


@dataclass(frozen=True)
class Box:
    """Per-pixel interval constraint [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"Box requires lo < hi, got [{self.lo}, {self.hi}]")


Constraint = Unconstrained | NonNegative | Box

UNCONSTRAINED = Unconstrained()
NON_NEGATIVE = NonNegative()
UNIT_BOX = Box(0.0, 1.0)


def project(img: np.ndarray, constraint: Constraint) -> np.ndarray:
    """Euclidean projection of img onto the constraint set (per-pixel clamp)."""
    img = validate_image(img)
    if isinstance(constraint, Unconstrained):
        return img.copy()
    if isinstance(constraint, NonNegative):
        return np.maximum(img, 0.0)
    if isinstance(constraint, Box):
        return np.clip(img, constraint.lo, constraint.hi)
    raise TypeError(f"unknown constraint {constraint!r}")


# ---------------------------------------------------------------------------
# Padding and integral images
# ---------------------------------------------------------------------------

def pad_symmetric(img: np.ndarray, margin: int) -> np.ndarray:
    """Pad by mirror reflection about the half-sample border position.

    Index -1 maps to index 0, -2 to 1, and so on (reflection map
    i -> -i-1), i.e. the row [a, b, c] padded by 1 becomes [a, a, b, c, c].
    The margin must not exceed the image extent (single-reflection regime).
    """
    img = validate_image(img)
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if margin > min(img.shape):
        raise ValueError(
            f"margin {margin} exceeds min image extent {min(img.shape)}"
        )
    if margin == 0:
        return img.copy()
    return np.pad(img, margin, mode="symmetric")


def integral_image(img: np.ndarray) -> np.ndarray:
    """Summed-area table with a zero-padded leading row and column.

    Entry (i, j) is the sum of img over rows < i and columns < j, so the
    output has shape (height+1, width+1).
    """
    img = validate_image(img)
    out = np.zeros((img.shape[0] + 1, img.shape[1] + 1), dtype=np.float64)
    np.cumsum(img, axis=0, out=out[1:, 1:])
    np.cumsum(out[1:, 1:], axis=1, out=out[1:, 1:])
    return out


def box_sum(ii: np.ndarray, top: int, left: int, size: int) -> float:
    """Sum of the size x size box with top-left corner (top, left), 4 lookups."""
    if size < 1:
        raise ValueError(f"box size must be >= 1, got {size}")
    height, width = ii.shape[0] - 1, ii.shape[1] - 1
    if top < 0 or left < 0 or top + size > height or left + size > width:
        raise ValueError(
            f"box ({top},{left}) of size {size} outside {height}x{width} extent"
        )
    b, r = top + size, left + size
    return float(ii[b, r] - ii[top, r] - ii[b, left] + ii[top, left])


# ---------------------------------------------------------------------------
# Quality metric
# ---------------------------------------------------------------------------

def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    reference = validate_image(reference, "reference")
    test = validate_image(test, "test")
    if reference.shape != test.shape:
        raise ValueError(f"dimension mismatch: {reference.shape} vs {test.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# PGM / PFM file I/O
# ---------------------------------------------------------------------------
# PGM: P2 (ASCII) and P5 (binary) read, maxval <= 65535, '#' comments allowed
# in the header; P5 with maxval > 255 uses big-endian 16-bit samples.
# Values map to [0, 1] by dividing by maxval.
# PFM: grayscale 'Pf' only, float32 samples, scanlines stored bottom-to-top,
# negative scale meaning little-endian (written here with scale -1.0).

def read_image(path) -> np.ndarray:
    """Read a PGM (P2/P5) or grayscale PFM file as a float64 image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P2", b"P5"):
        return _read_pgm(data)
    if data[:2] == b"Pf":
        return _read_pfm(data)
    magic = data[:2].decode("ascii", errors="replace")
    raise UnsupportedFormatError(f"unsupported magic {magic!r} in {path}")


def _scan_header(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Pull whitespace-separated header tokens after the magic, skipping
    '#' comments. Returns the tokens and the offset of the byte following
    the single whitespace character that terminates the last token (where
    a binary payload begins)."""
    tokens: list[bytes] = []
    pos = 2  # past magic
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("header ended before all fields were read")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after header")
    return tokens, pos + 1


def _read_pgm(data: bytes) -> np.ndarray:
    ascii_mode = data[:2] == b"P2"
    raw_tokens, payload = _scan_header(data, 3)
    try:
        width, height, maxval = (int(t) for t in raw_tokens)
    except ValueError as exc:
        raise MalformedHeaderError(f"non-integer header token in {raw_tokens}") from exc
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise MalformedHeaderError(f"maxval {maxval} outside (0, 65535]")
    if ascii_mode:
        try:
            values = np.array(data[payload - 1 :].split(), dtype=np.int64)
        except ValueError as exc:
            raise TruncatedPayloadError("non-integer ASCII sample") from exc
        if values.size != width * height:
            raise TruncatedPayloadError(
                f"expected {width * height} samples, found {values.size}"
            )
        values = values.astype(np.float64)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        need = width * height * dtype.itemsize
        raw = data[payload : payload + need]
        if len(raw) < need:
            raise TruncatedPayloadError(
                f"expected {need} payload bytes, found {len(raw)}"
            )
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    if values.max() > maxval or values.min() < 0:
        raise MalformedHeaderError("sample value outside [0, maxval]")
    return (values / maxval).reshape(height, width)


def _read_pfm(data: bytes) -> np.ndarray:
    raw_tokens, payload = _scan_header(data, 3)
    try:
        width, height = int(raw_tokens[0]), int(raw_tokens[1])
        scale = float(raw_tokens[2])
    except ValueError as exc:
        raise MalformedHeaderError(f"bad PFM header fields {raw_tokens}") from exc
    if width < 1 or height < 1 or scale == 0:
        raise MalformedHeaderError(f"bad PFM header {width}x{height} scale {scale}")
    need = width * height * 4
    raw = data[payload : payload + need]
    if len(raw) < need:
        raise TruncatedPayloadError(f"expected {need} payload bytes, found {len(raw)}")
    endian = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(raw, dtype=endian).astype(np.float64)
    # PFM scanlines run bottom-to-top
    return values.reshape(height, width)[::-1].copy()


def write_image(img: np.ndarray, path, format: str = "pgm8") -> None:
    """Write as 8-bit binary PGM ('pgm8') or full-precision PFM ('pfm').

    PGM8 clamps to [0, 1] and quantizes with round-half-up; PFM keeps
    float32 precision verbatim.
    """
    img = validate_image(img)
    fmt = format.lower()
    if fmt == "pgm8":
        quant = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        payload = quant.tobytes()
    elif fmt == "pfm":
        header = f"Pf\n{img.shape[1]} {img.shape[0]}\n-1.0\n".encode("ascii")
        payload = img[::-1].astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown format {format!r} (expected 'pgm8' or 'pfm')")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
