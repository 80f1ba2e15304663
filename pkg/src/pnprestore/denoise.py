"""Nonlocal-means filtering and its doubly stochastic variant.

Plain NLM averages each pixel over a search window with Gaussian patch-
similarity weights (row-stochastic). The doubly stochastic variant (DSG-NLM)
post-processes those weights with a separable hat taper, a symmetric
row/column normalization, a global rescale by the maximum row sum, and a
diagonal correction; the resulting weight matrix is symmetric, doubly
stochastic, and has spectrum in [0, 1], which is what makes it usable as a
proximal-map denoiser inside ADMM.

The filter is applied in three window sweeps without ever materializing the
weight matrix. Patch distances are computed per window offset from a
squared-difference image and a summed-area table, so the per-pixel cost does
not depend on the patch size; ``distances="direct"`` switches to the
brute-force per-pixel reference whose cost does (used for benchmarking).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import pad_symmetric, validate_image

# Per-offset kernel maps are memoized when the whole window fits under this
# budget; above it they are recomputed per sweep. Results are identical.
KERNEL_CACHE_BYTES = 1 << 30

# Guard for the inverse square root in the symmetric normalization. The row
# mass is >= 1 mathematically (the self term contributes hat(0) * 1), so the
# floor never binds; it only keeps a hypothetical underflow finite.
_MASS_FLOOR = 1e-300

DENSE_WEIGHTS_MAX_PIXELS = 4096


@dataclass(frozen=True)
class PatchParams:
    """Patch side (odd), search-window radius, and kernel bandwidth."""

    patch_side: int
    window_radius: int
    bandwidth: float

    def __post_init__(self) -> None:
        if self.patch_side < 1 or self.patch_side % 2 == 0:
            raise ValueError(f"patch_side must be odd and >= 1, got {self.patch_side}")
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")

    @property
    def pad_margin(self) -> int:
        """Guide padding needed so every patch of every window member exists."""
        return self.window_radius + (self.patch_side - 1) // 2


def hat_weight(s: tuple[int, int], r: tuple[int, int], window_radius: int) -> float:
    """Separable hat taper (1-|dy|/(R+1))(1-|dx|/(R+1)) for window offsets."""
    dy, dx = s[0] - r[0], s[1] - r[1]
    if abs(dy) > window_radius or abs(dx) > window_radius:
        raise ValueError(f"offset ({dy},{dx}) outside window radius {window_radius}")
    scale = window_radius + 1
    return (1.0 - abs(dy) / scale) * (1.0 - abs(dx) / scale)


def nlm_kernel(guide: np.ndarray, s: tuple[int, int], r: tuple[int, int],
               params: PatchParams) -> float:
    """Gaussian patch-similarity kernel exp(-||P_s - P_r||^2 / (2 Np^2 sigma^2)).

    Patches are read from the symmetrically padded guide, so border pixels
    have full-size patches.
    """
    guide = validate_image(guide, "guide")
    h, w = guide.shape
    for name, (py, px) in (("s", s), ("r", r)):
        if not (0 <= py < h and 0 <= px < w):
            raise ValueError(f"pixel {name}={py, px} outside {h}x{w} image")
    half = (params.patch_side - 1) // 2
    pad = pad_symmetric(guide, half)
    side = params.patch_side
    patch_s = pad[s[0] : s[0] + side, s[1] : s[1] + side]
    patch_r = pad[r[0] : r[0] + side, r[1] : r[1] + side]
    ssd = float(((patch_s - patch_r) ** 2).sum())
    return float(np.exp(-ssd / (2.0 * side * side * params.bandwidth ** 2)))


def _window_offsets(h: int, w: int, radius: int):
    """Yield (dy, dx, dst, src) for the clipped window, raster order.

    dst indexes pixels s for which r = s + (dy, dx) stays inside the image;
    src is the same slice shifted by the offset.
    """
    for dy in range(-radius, radius + 1):
        rows_dst = slice(max(0, -dy), h - max(0, dy))
        rows_src = slice(max(0, dy), h - max(0, -dy))
        for dx in range(-radius, radius + 1):
            cols_dst = slice(max(0, -dx), w - max(0, dx))
            cols_src = slice(max(0, dx), w - max(0, -dx))
            yield dy, dx, (rows_dst, cols_dst), (rows_src, cols_src)


class _DistanceEngine:
    """Per-offset squared patch distances for one padded guide.

    ``integral`` reads every patch sum from a summed-area table of the
    squared-difference image (cost independent of the patch size); ``direct``
    accumulates the patch_side^2 shifted terms explicitly.
    """

    def __init__(self, guide: np.ndarray, params: PatchParams, method: str):
        if method not in ("integral", "direct"):
            raise ValueError(f"unknown distance method {method!r}")
        self.method = method
        self.side = params.patch_side
        self.h, self.w = guide.shape
        half = (self.side - 1) // 2
        margin = params.pad_margin
        pad = pad_symmetric(guide, margin)
        # Region holding every patch element of every image pixel; offset
        # slices of it stay inside the padded array by construction.
        self._pad = pad
        self._a = margin - half
        self._rh = self.h + 2 * half
        self._rw = self.w + 2 * half
        self._base = pad[self._a : self._a + self._rh, self._a : self._a + self._rw]

    def map(self, dy: int, dx: int) -> np.ndarray:
        a, rh, rw = self._a, self._rh, self._rw
        shifted = self._pad[a + dy : a + dy + rh, a + dx : a + dx + rw]
        d = self._base - shifted
        d *= d
        side, h, w = self.side, self.h, self.w
        if self.method == "direct":
            out = np.zeros((h, w))
            for py in range(side):
                for px in range(side):
                    out += d[py : py + h, px : px + w]
            return out
        # Center the data before the cumulative sums: the box sums are then
        # differences of near-zero partial sums, which keeps the cancellation
        # error far below the 1e-9 agreement the direct path is held to.
        mu = float(d.mean())
        d -= mu
        ii = np.zeros((rh + 1, rw + 1))
        np.cumsum(d, axis=0, out=ii[1:, 1:])
        np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
        out = (
            ii[side : side + h, side : side + w]
            - ii[:h, side : side + w]
            - ii[side : side + h, :w]
            + ii[:h, :w]
        )
        out += (side * side) * mu
        return out


def patch_distance_map(guide: np.ndarray, offset: tuple[int, int],
                       params: PatchParams, method: str = "integral") -> np.ndarray:
    """Map of ||P_s - P_{s+t}||^2 over all pixels s for one window offset t.

    Patches are read from the symmetrically padded guide; the default method
    uses the summed-area table so the cost does not depend on patch_side.
    """
    guide = validate_image(guide, "guide")
    dy, dx = offset
    if max(abs(dy), abs(dx)) > params.window_radius:
        raise ValueError(
            f"offset {offset} outside window radius {params.window_radius}"
        )
    return _DistanceEngine(guide, params, method).map(dy, dx)


class _WeightEngine:
    """Hat taper and kernel maps shared by the filtering sweeps."""

    def __init__(self, guide: np.ndarray, params: PatchParams,
                 method: str = "integral"):
        self.params = params
        self.h, self.w = guide.shape
        self.radius = params.window_radius
        self._dist = _DistanceEngine(guide, params, method)
        self._inv = 1.0 / (2.0 * params.patch_side ** 2 * params.bandwidth ** 2)
        n_offsets = (2 * self.radius + 1) ** 2
        fits = n_offsets * self.h * self.w * 8 <= KERNEL_CACHE_BYTES
        self._cache: dict[tuple[int, int], np.ndarray] | None = {} if fits else None

    def kernel_map(self, dy: int, dx: int) -> np.ndarray:
        if self._cache is not None and (dy, dx) in self._cache:
            return self._cache[(dy, dx)]
        k = np.exp(-self._inv * self._dist.map(dy, dx))
        if self._cache is not None:
            self._cache[(dy, dx)] = k
        return k

    def hat(self, dy: int, dx: int) -> float:
        scale = self.radius + 1
        return (1.0 - abs(dy) / scale) * (1.0 - abs(dx) / scale)

    def offsets(self):
        return _window_offsets(self.h, self.w, self.radius)


def _mass_sweep(eng: _WeightEngine) -> np.ndarray:
    """Sweep 1: row mass of the hat-tapered kernel matrix."""
    g = np.zeros((eng.h, eng.w))
    for dy, dx, dst, src in eng.offsets():
        g[dst] += eng.hat(dy, dx) * eng.kernel_map(dy, dx)[dst]
    return g


def _scale_sweep(eng: _WeightEngine, g: np.ndarray) -> float:
    """Sweep 2: maximum row sum after the symmetric normalization."""
    rowsum = np.zeros((eng.h, eng.w))
    inv_root = 1.0 / np.sqrt(g)
    for dy, dx, dst, src in eng.offsets():
        rowsum[dst] += (
            eng.hat(dy, dx) * eng.kernel_map(dy, dx)[dst]
            * inv_root[dst] * inv_root[src]
        )
    return float(rowsum.max())


def _filter_sweep(eng: _WeightEngine, image: np.ndarray, g: np.ndarray,
                  m: float) -> np.ndarray:
    """Sweep 3: rescale, accumulate the filtered value, correct the diagonal."""
    out = np.zeros((eng.h, eng.w))
    mass = np.zeros((eng.h, eng.w))
    inv_m = 1.0 / m
    inv_root = 1.0 / np.sqrt(g)
    for dy, dx, dst, src in eng.offsets():
        wgt = inv_m * eng.hat(dy, dx) * eng.kernel_map(dy, dx)[dst]
        wgt *= inv_root[dst]
        wgt *= inv_root[src]
        out[dst] += wgt * image[src]
        mass[dst] += wgt
    out += (1.0 - mass) * image
    return out


def _check_pair(image: np.ndarray, guide: np.ndarray | None):
    image = validate_image(image, "image")
    if guide is None:
        return image, image
    guide = validate_image(guide, "guide")
    if guide.shape != image.shape:
        raise ValueError(f"dimension mismatch: image {image.shape} vs guide {guide.shape}")
    return image, guide


def nlm_denoise(image: np.ndarray, params: PatchParams,
                guide: np.ndarray | None = None) -> np.ndarray:
    """Plain NLM: per-pixel convex combination over the clipped window.

    Weights come from the guide (defaults to the image itself); the output
    therefore stays inside [min(image), max(image)].
    """
    image, guide = _check_pair(image, guide)
    eng = _WeightEngine(guide, params)
    num = np.zeros(image.shape)
    den = np.zeros(image.shape)
    for dy, dx, dst, src in eng.offsets():
        k = eng.kernel_map(dy, dx)
        num[dst] += k[dst] * image[src]
        den[dst] += k[dst]
    return num / den


def dsg_nlm_denoise(image: np.ndarray, params: PatchParams,
                    guide: np.ndarray | None = None,
                    distances: str = "integral") -> np.ndarray:
    """Doubly stochastic NLM via three window sweeps, no matrix materialized.

    Equals ``build_dense_weights(guide, params) @ image.ravel()`` for any
    guide small enough to build densely. ``distances="direct"`` runs the
    brute-force per-pixel reference instead (window SSDs recomputed at every
    pixel; cost grows with the patch area), used for benchmarking.
    """
    image, guide = _check_pair(image, guide)
    if distances == "direct":
        return _dsg_per_pixel(image, guide, params)
    eng = _WeightEngine(guide, params, method=distances)
    g = np.maximum(_mass_sweep(eng), _MASS_FLOOR)
    m = _scale_sweep(eng, g)
    return _filter_sweep(eng, image, g, m)


def _dsg_per_pixel(image: np.ndarray, guide: np.ndarray,
                   p: PatchParams) -> np.ndarray:
    """Brute-force reference: three per-pixel loops with direct patch SSDs.

    ||P_s - P_r||^2 expands to ||P_s||^2 - 2 <P_s, P_r> + ||P_r||^2; the norm
    image is precomputed by direct summation and the cross terms are taken
    against every window patch at every pixel, so the per-pixel cost is
    window area x patch area. No summed-area tables anywhere.
    """
    h, w = image.shape
    ns, side = p.window_radius, p.patch_side
    margin = p.pad_margin
    pad = pad_symmetric(guide, margin)
    # patch with top-left (i, j) in padded coords; image pixel (y, x) owns
    # the patch at index (y + ns, x + ns)
    wins = sliding_window_view(pad, (side, side))
    pad_sq = pad * pad
    norms = np.zeros((h + 2 * ns, w + 2 * ns))
    for a in range(side):
        for b in range(side):
            norms += pad_sq[a : a + h + 2 * ns, b : b + w + 2 * ns]
    inv = 1.0 / (2.0 * side * side * p.bandwidth ** 2)
    scale = ns + 1
    taper = 1.0 - np.abs(np.arange(-ns, ns + 1)) / scale
    hat_full = taper[:, None] * taper[None, :]

    def window(y, x):
        r0, r1 = max(0, y - ns), min(h - 1, y + ns)
        c0, c1 = max(0, x - ns), min(w - 1, x + ns)
        sub = wins[r0 + ns : r1 + ns + 1, c0 + ns : c1 + ns + 1]
        cross = np.einsum("ijkl,kl->ij", sub, wins[y + ns, x + ns])
        d = norms[r0 + ns : r1 + ns + 1, c0 + ns : c1 + ns + 1] - 2.0 * cross
        d += norms[y + ns, x + ns]
        np.maximum(d, 0.0, out=d)
        kern = np.exp(-inv * d)
        kern *= hat_full[r0 - y + ns : r1 - y + ns + 1, c0 - x + ns : c1 - x + ns + 1]
        return kern, (r0, r1, c0, c1)

    g = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            g[y, x] = window(y, x)[0].sum()
    g = np.maximum(g, _MASS_FLOOR)
    inv_root = 1.0 / np.sqrt(g)

    m = 0.0
    for y in range(h):
        for x in range(w):
            kern, (r0, r1, c0, c1) = window(y, x)
            rowsum = inv_root[y, x] * float(
                (kern * inv_root[r0 : r1 + 1, c0 : c1 + 1]).sum()
            )
            if rowsum > m:
                m = rowsum

    out = np.empty((h, w))
    inv_m = 1.0 / m
    for y in range(h):
        for x in range(w):
            kern, (r0, r1, c0, c1) = window(y, x)
            wgt = (inv_m * inv_root[y, x]) * kern
            wgt *= inv_root[r0 : r1 + 1, c0 : c1 + 1]
            acc = float((wgt * image[r0 : r1 + 1, c0 : c1 + 1]).sum())
            out[y, x] = acc + (1.0 - float(wgt.sum())) * image[y, x]
    return out


class FrozenGuide:
    """Snapshot of a guide; applying it is a fixed linear operator.

    The first two sweeps depend only on the guide, so their outputs (row
    mass and max row sum) are computed once and reused for every apply.
    ``apply(image)`` is bit-identical to ``dsg_nlm_denoise(image, params,
    guide)`` with the frozen guide.
    """

    def __init__(self, guide: np.ndarray, params: PatchParams):
        self.guide = validate_image(guide, "guide").copy()
        self.guide.setflags(write=False)
        self.params = params
        self._eng = _WeightEngine(self.guide, params)
        self._g = np.maximum(_mass_sweep(self._eng), _MASS_FLOOR)
        self._m = _scale_sweep(self._eng, self._g)

    def apply(self, image: np.ndarray) -> np.ndarray:
        image = validate_image(image, "image")
        if image.shape != self.guide.shape:
            raise ValueError(
                f"dimension mismatch: image {image.shape} vs guide {self.guide.shape}"
            )
        return _filter_sweep(self._eng, image, self._g, self._m)


def freeze_guide(guide: np.ndarray, params: PatchParams) -> FrozenGuide:
    """Freeze the weight-defining guide, e.g. to stop adapting mid-run."""
    return FrozenGuide(guide, params)


def build_dense_weights(guide: np.ndarray, params: PatchParams) -> np.ndarray:
    """Explicit n x n doubly stochastic weight matrix (test-scale oracle).

    Uses direct patch-distance summation, independent of the summed-area-table
    path, and applies the taper/normalize/rescale/diagonal steps as literal
    matrix transforms. Limited to small images.
    """
    guide = validate_image(guide, "guide")
    h, w = guide.shape
    n = h * w
    if n > DENSE_WEIGHTS_MAX_PIXELS:
        raise ValueError(f"{h}x{w} image too large for dense weights (n={n})")
    dist = _DistanceEngine(guide, params, method="direct")
    inv = 1.0 / (2.0 * params.patch_side ** 2 * params.bandwidth ** 2)
    scale = params.window_radius + 1
    idx = np.arange(n).reshape(h, w)
    weights = np.zeros((n, n))
    for dy, dx, dst, src in _window_offsets(h, w, params.window_radius):
        k = np.exp(-inv * dist.map(dy, dx))
        hat = (1.0 - abs(dy) / scale) * (1.0 - abs(dx) / scale)
        weights[idx[dst].ravel(), idx[src].ravel()] = hat * k[dst].ravel()
    row = weights.sum(axis=1)
    col = weights.sum(axis=0)
    weights *= 1.0 / np.sqrt(row)[:, None]
    weights *= 1.0 / np.sqrt(col)[None, :]
    m = weights.sum(axis=1).max()
    weights /= m
    diag = np.arange(n)
    weights[diag, diag] += 1.0 - weights.sum(axis=1)
    return weights
