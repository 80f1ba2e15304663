"""Forward models and simulators for the two restoration applications.

Super-resolution: blur with a normalized kernel under a periodic or symmetric
boundary, then subsample by an integer factor (top-left anchored). With a
per-axis symmetric kernel the adjoint is zero-fill upsampling followed by the
same blur, and the pair is adjoint to machine precision.

Single-photon sensing: each pixel is read by K binary jots; a jot fires when
its Poisson photon count (mean gain * x / K) reaches 1. The negative
log-likelihood of the per-pixel hit/miss counts is separable, convex, and
differentiable away from 0; evaluation clamps its argument at a small floor
because the curvature blows up at the origin.

All randomness comes from an explicit splitmix64 stream so simulators are
bit-reproducible for a given seed on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import validate_image

# ---------------------------------------------------------------------------
# Deterministic random stream (splitmix64)
# ---------------------------------------------------------------------------

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


class SplitMix64:
    """splitmix64 stream; same seed gives the same values on every platform.

    Uniforms in [0, 1) use the top 53 bits of each 64-bit output. Normal
    deviates come from Box-Muller applied to consecutive uniform pairs
    (u1, u2): r = sqrt(-2 ln(1 - u1)), then r*cos(2 pi u2), r*sin(2 pi u2).
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_uint64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def uniform(self) -> float:
        return (self.next_uint64() >> 11) * 2.0 ** -53

    def uniforms(self, n: int) -> np.ndarray:
        """Next n uniforms as an array (state advances by n)."""
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + np.uint64(_GOLDEN) * steps
        self._state = (self._state + n * _GOLDEN) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        return (z >> np.uint64(11)) * 2.0 ** -53

    def normals(self, n: int) -> np.ndarray:
        """Next n standard-normal deviates via Box-Muller (consumes 2*ceil(n/2))."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]


# ---------------------------------------------------------------------------
# Super-resolution
# ---------------------------------------------------------------------------

def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Normalized Gaussian blur kernel on a (2*radius+1)^2 grid."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    grid = np.arange(-radius, radius + 1, dtype=np.float64)
    prof = np.exp(-(grid ** 2) / (2.0 * sigma * sigma))
    kernel = prof[:, None] * prof[None, :]
    return kernel / kernel.sum()


@dataclass(frozen=True, eq=False)
class SuperResOp:
    """Blur kernel + integer downsampling factor + boundary handling."""

    kernel: np.ndarray
    factor: int
    boundary: str = "periodic"

    def __post_init__(self) -> None:
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be odd and square, got shape {kernel.shape}")
        if np.any(kernel < 0) or not np.all(np.isfinite(kernel)):
            raise ValueError("kernel entries must be finite and >= 0")
        if abs(float(kernel.sum()) - 1.0) > 1e-12:
            raise ValueError(f"kernel must sum to 1, got {float(kernel.sum())!r}")
        if self.factor < 1:
            raise ValueError(f"factor must be >= 1, got {self.factor}")
        if self.boundary not in ("periodic", "symmetric"):
            raise ValueError(f"boundary must be 'periodic' or 'symmetric', got {self.boundary!r}")
        kernel = kernel.copy()
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)

    @property
    def radius(self) -> int:
        return self.kernel.shape[0] // 2

    @property
    def kernel_symmetric(self) -> bool:
        """Symmetric along each axis (needed for the adjoint construction)."""
        return np.array_equal(self.kernel, self.kernel[::-1, :]) and np.array_equal(
            self.kernel, self.kernel[:, ::-1]
        )


def _convolve(img: np.ndarray, kernel: np.ndarray, boundary: str) -> np.ndarray:
    radius = kernel.shape[0] // 2
    h, w = img.shape
    if radius > min(h, w):
        raise ValueError(f"kernel radius {radius} exceeds image extent {min(h, w)}")
    mode = "symmetric" if boundary == "symmetric" else "wrap"
    pad = np.pad(img, radius, mode=mode)
    out = np.zeros_like(img)
    for dy in range(-radius, radius + 1):
        row = kernel[dy + radius]
        for dx in range(-radius, radius + 1):
            weight = row[dx + radius]
            if weight != 0.0:
                out += weight * pad[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
    return out


def sr_apply(op: SuperResOp, x: np.ndarray) -> np.ndarray:
    """Blur then keep every factor-th sample (positions k*i, k*j)."""
    x = validate_image(x)
    if x.shape[0] % op.factor or x.shape[1] % op.factor:
        raise ValueError(f"dimensions {x.shape} not divisible by factor {op.factor}")
    return _convolve(x, op.kernel, op.boundary)[:: op.factor, :: op.factor]


def sr_adjoint(op: SuperResOp, y: np.ndarray) -> np.ndarray:
    """Zero-fill upsample then blur; exact adjoint of sr_apply."""
    y = validate_image(y)
    if not op.kernel_symmetric:
        raise ValueError("adjoint requires a per-axis symmetric kernel")
    up = np.zeros((y.shape[0] * op.factor, y.shape[1] * op.factor))
    up[:: op.factor, :: op.factor] = y
    return _convolve(up, op.kernel, op.boundary)


def _sr_residual(op: SuperResOp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = validate_image(y, "observation")
    ax = sr_apply(op, x)
    if ax.shape != y.shape:
        raise ValueError(f"dimension mismatch: A x is {ax.shape}, observation {y.shape}")
    return ax - y


def sr_data_term(op: SuperResOp, x: np.ndarray, y: np.ndarray) -> float:
    """Quadratic misfit 0.5 * ||y - A x||^2."""
    r = _sr_residual(op, x, y)
    return 0.5 * float((r * r).sum())


def sr_gradient(op: SuperResOp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Descent gradient A^T (A x - y) of the quadratic misfit."""
    return sr_adjoint(op, _sr_residual(op, x, y))


def power_iteration_lipschitz(op: SuperResOp, hr_shape: tuple[int, int],
                              iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of A^T A (gradient Lipschitz constant) by power iteration."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    rng = SplitMix64(seed)
    x = rng.uniforms(hr_shape[0] * hr_shape[1]).reshape(hr_shape) + 0.5
    x /= np.sqrt((x * x).sum())
    for _ in range(iters):
        z = sr_adjoint(op, sr_apply(op, x))
        norm = np.sqrt((z * z).sum())
        if norm == 0.0:
            return 0.0
        x = z / norm
    z = sr_adjoint(op, sr_apply(op, x))
    return float((x * z).sum() / (x * x).sum())


def sr_simulate(x: np.ndarray, op: SuperResOp, noise_sigma: float, seed: int) -> np.ndarray:
    """Observation A x plus iid Gaussian noise, bit-reproducible per seed."""
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    y = sr_apply(op, x)
    if noise_sigma > 0:
        rng = SplitMix64(seed)
        y = y + noise_sigma * rng.normals(y.size).reshape(y.shape)
    return y


# ---------------------------------------------------------------------------
# Single-photon (QIS) model
# ---------------------------------------------------------------------------

#: Evaluation floor for the likelihood argument; the second derivative is
#: unbounded near 0, so x is clamped to at least this before evaluating.
QIS_FLOOR = 1e-6


@dataclass(frozen=True)
class QisModel:
    """Oversampling factor K (jots per pixel) and sensor gain."""

    oversampling: int
    gain: float

    def __post_init__(self) -> None:
        if self.oversampling < 1:
            raise ValueError(f"oversampling must be >= 1, got {self.oversampling}")
        if not self.gain > 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")


class QisCounts:
    """Per-pixel counts of jots that fired (ones) and stayed dark (zeros)."""

    def __init__(self, ones: np.ndarray, zeros: np.ndarray):
        ones = validate_image(ones, "ones")
        zeros = validate_image(zeros, "zeros")
        if ones.shape != zeros.shape:
            raise ValueError(f"dimension mismatch: {ones.shape} vs {zeros.shape}")
        for name, arr in (("ones", ones), ("zeros", zeros)):
            if np.any(arr < 0) or np.any(arr != np.round(arr)):
                raise ValueError(f"{name} must be nonnegative integers")
        total = ones + zeros
        if total.min() != total.max():
            raise ValueError("ones + zeros must equal the same K at every pixel")
        self.ones = ones
        self.zeros = zeros
        self.oversampling = int(total.flat[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.ones.shape


def qis_simulate(x: np.ndarray, model: QisModel, seed: int) -> QisCounts:
    """Draw K per-pixel binary jots from the Poisson single-photon model.

    Each jot's photon count is Poisson with mean gain * x / K (x clamped to
    [0, 1]), sampled with Knuth's product method; a jot fires when the count
    reaches 1. Uniforms are consumed jot by jot in raster-then-jot order, so
    the counts are bit-reproducible per seed.
    """
    x = validate_image(x)
    stop = np.exp(-model.gain * np.clip(x, 0.0, 1.0) / model.oversampling)
    stop_flat = stop.ravel().tolist()
    jots = model.oversampling
    rng = SplitMix64(seed)
    chunk = 1 << 16
    buf = rng.uniforms(chunk).tolist()
    pos = 0
    hits = np.zeros(x.size, dtype=np.float64)
    for i, threshold in enumerate(stop_flat):
        fired = 0
        for _ in range(jots):
            count = 0
            prod = 1.0
            while True:
                if pos == len(buf):
                    buf = rng.uniforms(chunk).tolist()
                    pos = 0
                prod *= buf[pos]
                pos += 1
                if prod <= threshold:
                    break
                count += 1
            if count >= 1:
                fired += 1
        hits[i] = fired
    ones = hits.reshape(x.shape)
    return QisCounts(ones, jots - ones)


def _qis_check(x: np.ndarray, counts: QisCounts, model: QisModel) -> np.ndarray:
    x = validate_image(x)
    if x.shape != counts.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {counts.shape}")
    if counts.oversampling != model.oversampling:
        raise ValueError(
            f"counts are for K={counts.oversampling}, model has K={model.oversampling}"
        )
    return x


def qis_data_term(x: np.ndarray, counts: QisCounts, model: QisModel,
                  floor: float = QIS_FLOOR) -> float:
    """Negative log-likelihood sum_i [K0_i z_i - K1_i log(1 - exp(-z_i))],
    z = gain * max(x, floor) / K."""
    x = _qis_check(x, counts, model)
    z = model.gain * np.maximum(x, floor) / model.oversampling
    terms = counts.zeros * z - counts.ones * np.log(-np.expm1(-z))
    return float(terms.sum())


def qis_gradient(x: np.ndarray, counts: QisCounts, model: QisModel,
                 floor: float = QIS_FLOOR) -> np.ndarray:
    """Per-pixel derivative (gain/K) (K0_i - K1_i / (exp(z_i) - 1))."""
    x = _qis_check(x, counts, model)
    z = model.gain * np.maximum(x, floor) / model.oversampling
    return (model.gain / model.oversampling) * (counts.zeros - counts.ones / np.expm1(z))


def qis_initial_estimate(counts: QisCounts, floor: float = QIS_FLOOR) -> np.ndarray:
    """Fraction of fired jots, clamped to [floor, 1]; a cheap starting point."""
    return np.clip(counts.ones / counts.oversampling, floor, 1.0)
