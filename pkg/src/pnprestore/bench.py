"""Timing harness for the fast vs brute-force doubly stochastic NLM.

The fast path reads every patch distance from a summed-area table, so its
wall time is nearly flat in the patch size; the brute-force path accumulates
patch_side^2 terms per window offset and scales accordingly. Both paths run
the same three sweeps, and their outputs must agree to 1e-9.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .denoise import PatchParams, dsg_nlm_denoise
from .image import validate_image

BENCH_AGREEMENT_ATOL = 1e-9
BENCH_CSV_HEADER = "np,fast_s,brute_s,speedup"


@dataclass
class BenchRow:
    patch_side: int
    fast_s: float
    brute_s: float
    speedup: float
    max_abs_diff: float


def _timed(fn, repeats: int) -> tuple[float, np.ndarray]:
    """Median wall time over `repeats` runs and the (identical) output."""
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def bench_denoiser(
    image: np.ndarray,
    window_radius: int = 21,
    patch_sides: tuple[int, ...] = (11, 17, 23, 29),
    bandwidth: float = 0.15,
    repeats: int = 3,
    brute_repeats: int = 1,
) -> list[BenchRow]:
    """Time both paths for each patch size and check they agree.

    Fast timings are medians of `repeats` runs. Brute-force runs take minutes
    at the default 256x256 scale, where timer noise is negligible relative to
    the total, so they default to a single run.
    """
    image = validate_image(image)
    rows = []
    for side in patch_sides:
        params = PatchParams(side, window_radius, bandwidth)
        fast_s, fast_out = _timed(lambda: dsg_nlm_denoise(image, params), repeats)
        brute_s, brute_out = _timed(
            lambda: dsg_nlm_denoise(image, params, distances="direct"), brute_repeats
        )
        diff = float(np.abs(fast_out - brute_out).max())
        if diff > BENCH_AGREEMENT_ATOL:
            raise AssertionError(
                f"fast and brute outputs disagree at patch_side={side}: "
                f"max abs diff {diff:.3e} > {BENCH_AGREEMENT_ATOL:.0e}"
            )
        rows.append(BenchRow(side, fast_s, brute_s, brute_s / fast_s, diff))
    return rows


def write_bench_csv(rows: list[BenchRow], path) -> None:
    lines = [BENCH_CSV_HEADER]
    for r in rows:
        lines.append(f"{r.patch_side},{r.fast_s:.6f},{r.brute_s:.6f},{r.speedup:.3f}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
