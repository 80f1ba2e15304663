"""Batch command-line front-end.

Subcommands: denoise, simulate-sr, simulate-qis, restore, bench-denoiser.
Each reads a flat INI-style config (sections [run], [sr], [qis], [patch],
[solver]; see README for the schema), validates it fully before touching the
filesystem, and writes all outputs into a run directory named from the hash
of the resolved configuration plus the seed, so identical invocations
reproduce byte-identical files.

Exit codes: 0 success, 1 internal error, 2 config or input error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
import time
import traceback
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .bench import bench_denoiser, write_bench_csv
from .denoise import (
    DENSE_WEIGHTS_MAX_PIXELS,
    PatchParams,
    build_dense_weights,
    dsg_nlm_denoise,
    nlm_denoise,
)
from .forward import (
    QisCounts,
    QisModel,
    SplitMix64,
    SuperResOp,
    gaussian_kernel,
    qis_simulate,
    sr_apply,
    sr_simulate,
)
from .image import (
    Box,
    Constraint,
    ImageFormatError,
    NON_NEGATIVE,
    UNCONSTRAINED,
    UNIT_BOX,
    psnr,
    read_image,
    write_image,
)
from .solver import (
    DENOISERS,
    DivergenceError,
    SolverConfig,
    default_qis_alpha,
    default_sr_alpha,
    linearized_pnp_admm,
    make_qis_problem,
    make_sr_problem,
    standard_pnp_admm_cg,
    write_log_csv,
)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

@dataclass
class Settings:
    """Fully resolved configuration for one run."""

    command: str
    problem: str = "sr"
    output_dir: Path = Path("runs")
    seed: int = 0
    ground_truth: Path | None = None
    observation: Path | None = None
    input: Path | None = None
    # super-resolution
    sr_factor: int = 2
    sr_blur_sigma: float = 1.5
    sr_blur_radius: int = 5
    sr_boundary: str = "periodic"
    sr_noise_sigma: float = 2.0 / 255.0
    # single-photon
    qis_oversampling: int = 16
    qis_gain: float = 16.0
    # patch weights
    patch_side: int = 7
    window_radius: int = 10
    bandwidth: float | None = None
    # solver
    solver: str = "linearized"
    denoiser: str = "dsg-fixed"
    rho: float = 1.0
    lam: float = 0.02
    alpha: float | None = None
    max_iters: int = 250
    freeze_at: int | None = 15
    constraint: str = "box01"
    stop_tol: float | None = None
    cg_tol: float = 1e-6
    cg_max_iters: int = 200
    cg_warm_start: bool = False
    # bench
    bench_size: int = 256
    bench_window_radius: int = 21
    bench_patch_sides: tuple[int, ...] = (11, 17, 23, 29)
    bench_repeats: int = 3
    bench_bandwidth: float = 0.15

    def constraint_set(self) -> Constraint:
        if self.constraint == "none":
            return UNCONSTRAINED
        if self.constraint == "nonneg":
            return NON_NEGATIVE
        if self.constraint == "box01":
            return UNIT_BOX
        if self.constraint.startswith("box:"):
            try:
                lo, hi = (float(t) for t in self.constraint[4:].split(","))
            except ValueError as exc:
                raise ConfigError(f"bad constraint {self.constraint!r}") from exc
            return Box(lo, hi)
        raise ConfigError(f"unknown constraint {self.constraint!r}")

    def fingerprint(self) -> str:
        parts = []
        for f in fields(self):
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        digest = hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()
        return digest[:12]


# (section, key) -> settings attribute, parser
def _opt_float(text: str) -> float | None:
    return float(text) if text else None


def _opt_int(text: str) -> int | None:
    return int(text) if text else None


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SCHEMA = {
    ("run", "problem"): ("problem", str),
    ("run", "output_dir"): ("output_dir", Path),
    ("run", "seed"): ("seed", int),
    ("run", "ground_truth"): ("ground_truth", Path),
    ("run", "observation"): ("observation", Path),
    ("run", "input"): ("input", Path),
    ("sr", "factor"): ("sr_factor", int),
    ("sr", "blur_sigma"): ("sr_blur_sigma", float),
    ("sr", "blur_radius"): ("sr_blur_radius", int),
    ("sr", "boundary"): ("sr_boundary", str),
    ("sr", "noise_sigma"): ("sr_noise_sigma", float),
    ("qis", "oversampling"): ("qis_oversampling", int),
    ("qis", "gain"): ("qis_gain", float),
    ("patch", "patch_side"): ("patch_side", int),
    ("patch", "window_radius"): ("window_radius", int),
    ("patch", "bandwidth"): ("bandwidth", _opt_float),
    ("solver", "solver"): ("solver", str),
    ("solver", "denoiser"): ("denoiser", str),
    ("solver", "rho"): ("rho", float),
    ("solver", "lambda"): ("lam", float),
    ("solver", "alpha"): ("alpha", _opt_float),
    ("solver", "max_iters"): ("max_iters", int),
    ("solver", "freeze_at"): ("freeze_at", _opt_int),
    ("solver", "constraint"): ("constraint", str),
    ("solver", "stop_tol"): ("stop_tol", _opt_float),
    ("solver", "cg_tol"): ("cg_tol", float),
    ("solver", "cg_max_iters"): ("cg_max_iters", int),
    ("solver", "cg_warm_start"): ("cg_warm_start", _bool),
    ("bench", "size"): ("bench_size", int),
    ("bench", "window_radius"): ("bench_window_radius", int),
    ("bench", "patch_sides"): ("bench_patch_sides", _int_tuple),
    ("bench", "repeats"): ("bench_repeats", int),
    ("bench", "bandwidth"): ("bench_bandwidth", float),
}

# command-line overrides (spec'd flags plus a few practical ones)
_OVERRIDES = {
    "seed": ("seed", int),
    "rho": ("rho", float),
    "lam": ("lam", float),
    "alpha": ("alpha", float),
    "iters": ("max_iters", int),
    "solver": ("solver", str),
    "denoiser": ("denoiser", str),
    "freeze_at": ("freeze_at", int),
    "output_dir": ("output_dir", Path),
    "input": ("input", Path),
    "observation": ("observation", Path),
}


def load_settings(command: str, config_path: str, args: argparse.Namespace) -> Settings:
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    settings = Settings(command=command)
    base = path.resolve().parent
    for section in parser.sections():
        for key, raw in parser.items(section):
            try:
                attr, conv = _SCHEMA[(section, key)]
            except KeyError:
                raise ConfigError(f"unknown config key [{section}] {key}") from None
            if raw == "":
                continue
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
            if conv is Path:
                value = (base / value).resolve() if not Path(raw).is_absolute() else Path(raw)
            setattr(settings, attr, value)
    for flag, (attr, conv) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(settings, attr, conv(value))
    _validate(settings)
    return settings


def _validate(s: Settings) -> None:
    if s.problem not in ("sr", "qis"):
        raise ConfigError(f"problem must be 'sr' or 'qis', got {s.problem!r}")
    if s.solver not in ("linearized", "standard-cg"):
        raise ConfigError(f"solver must be 'linearized' or 'standard-cg', got {s.solver!r}")
    if s.denoiser not in DENOISERS:
        raise ConfigError(f"denoiser must be one of {DENOISERS}, got {s.denoiser!r}")
    if s.sr_boundary not in ("periodic", "symmetric"):
        raise ConfigError(f"boundary must be 'periodic' or 'symmetric', got {s.sr_boundary!r}")
    s.constraint_set()
    for name in ("ground_truth", "observation", "input"):
        p = getattr(s, name)
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"{name} file not found: {p}")
    # constructing these validates their parameter ranges
    try:
        if s.command in ("simulate-sr", "restore", "denoise") and s.problem == "sr":
            _sr_op(s)
        if s.problem == "qis":
            QisModel(s.qis_oversampling, s.qis_gain)
        _solver_config(s, alpha=s.alpha if s.alpha is not None else 1.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if s.sr_noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {s.sr_noise_sigma}")


def _sr_op(s: Settings) -> SuperResOp:
    return SuperResOp(
        gaussian_kernel(s.sr_blur_sigma, s.sr_blur_radius), s.sr_factor, s.sr_boundary
    )


def _solver_config(s: Settings, alpha: float) -> SolverConfig:
    return SolverConfig(
        rho=s.rho,
        lam=s.lam,
        alpha=alpha,
        max_iters=s.max_iters,
        freeze_at=s.freeze_at,
        constraint=s.constraint_set(),
        denoiser=s.denoiser,
        patch_side=s.patch_side,
        window_radius=s.window_radius,
        bandwidth=s.bandwidth,
        stop_tol=s.stop_tol,
        cg_tol=s.cg_tol,
        cg_max_iters=s.cg_max_iters,
        cg_warm_start=s.cg_warm_start,
    )


def _run_dir(s: Settings) -> Path:
    d = Path(s.output_dir) / f"{s.command}-{s.fingerprint()}-{s.seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _patch_params(s: Settings) -> PatchParams:
    bandwidth = s.bandwidth
    if bandwidth is None:
        if s.lam <= 0:
            raise ConfigError("bandwidth not set and lambda is 0; nothing to derive")
        bandwidth = (s.lam / s.rho) ** 0.5
    return PatchParams(s.patch_side, s.window_radius, bandwidth)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_denoise(args: argparse.Namespace) -> int:
    s = load_settings("denoise", args.config, args)
    if s.input is None:
        raise ConfigError("denoise needs [run] input = <image path>")
    params = _patch_params(s)
    image = read_image(s.input)
    out_dir = _run_dir(s)
    t0 = time.perf_counter()
    if s.denoiser == "nlm":
        denoised = nlm_denoise(image, params)
    else:
        denoised = dsg_nlm_denoise(image, params)
    dt = time.perf_counter() - t0
    if args.oracle:
        if s.denoiser not in ("dsg-adaptive", "dsg-fixed"):
            raise ConfigError("--oracle is only meaningful for the DSG denoisers")
        if image.size > DENSE_WEIGHTS_MAX_PIXELS:
            raise ConfigError(
                f"--oracle needs at most {DENSE_WEIGHTS_MAX_PIXELS} pixels, got {image.size}"
            )
        dense = (build_dense_weights(image, params) @ image.ravel()).reshape(image.shape)
        print(f"oracle max-abs diff = {np.abs(dense - denoised).max():.3e}")
    write_image(denoised, out_dir / "denoised.pfm", "pfm")
    write_image(denoised, out_dir / "denoised.pgm", "pgm8")
    print(f"denoised {image.shape[1]}x{image.shape[0]} with {s.denoiser} in {dt:.3f} s")
    print(f"outputs in {out_dir}")
    return 0


def cmd_simulate_sr(args: argparse.Namespace) -> int:
    s = load_settings("simulate-sr", args.config, args)
    if s.ground_truth is None:
        raise ConfigError("simulate-sr needs [run] ground_truth = <image path>")
    truth = read_image(s.ground_truth)
    op = _sr_op(s)
    if truth.shape[0] % op.factor or truth.shape[1] % op.factor:
        raise ConfigError(
            f"ground truth {truth.shape} not divisible by factor {op.factor}"
        )
    observed = sr_simulate(truth, op, s.sr_noise_sigma, s.seed)
    out_dir = _run_dir(s)
    write_image(observed, out_dir / "observation.pfm", "pfm")
    write_image(observed, out_dir / "observation.pgm", "pgm8")
    print(f"observation {observed.shape[1]}x{observed.shape[0]} in {out_dir}")
    return 0


def cmd_simulate_qis(args: argparse.Namespace) -> int:
    s = load_settings("simulate-qis", args.config, args)
    if s.ground_truth is None:
        raise ConfigError("simulate-qis needs [run] ground_truth = <image path>")
    truth = read_image(s.ground_truth)
    model = QisModel(s.qis_oversampling, s.qis_gain)
    counts = qis_simulate(truth, model, s.seed)
    out_dir = _run_dir(s)
    write_image(counts.ones, out_dir / "counts_ones.pfm", "pfm")
    write_image(counts.zeros, out_dir / "counts_zeros.pfm", "pfm")
    meta = (
        "[qis]\n"
        f"oversampling = {model.oversampling}\n"
        f"gain = {model.gain!r}\n"
        f"seed = {s.seed}\n"
        "ones = counts_ones.pfm\n"
        "zeros = counts_zeros.pfm\n"
    )
    (out_dir / "counts_meta.ini").write_text(meta, newline="\n")
    print(f"counts (K={model.oversampling}) in {out_dir}")
    return 0


def _load_qis_observation(meta_path: Path) -> tuple[QisCounts, QisModel]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(meta_path)
        section = parser["qis"]
        model = QisModel(section.getint("oversampling"), section.getfloat("gain"))
        base = meta_path.resolve().parent
        ones = read_image(base / section.get("ones"))
        zeros = read_image(base / section.get("zeros"))
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigError(f"bad QIS counts metadata {meta_path}: {exc}") from exc
    return QisCounts(ones, zeros), model


def cmd_restore(args: argparse.Namespace) -> int:
    s = load_settings("restore", args.config, args)
    if s.observation is None:
        raise ConfigError("restore needs [run] observation = <path>")
    truth = read_image(s.ground_truth) if s.ground_truth is not None else None

    if s.problem == "sr":
        op = _sr_op(s)
        observed = read_image(s.observation)
        problem = make_sr_problem(op, observed, ground_truth=truth)
        alpha = s.alpha if s.alpha is not None else default_sr_alpha(op, problem.shape, seed=s.seed)
    else:
        counts, model = _load_qis_observation(Path(s.observation))
        problem = make_qis_problem(counts, model, ground_truth=truth)
        alpha = s.alpha if s.alpha is not None else default_qis_alpha(counts, model)
    if truth is not None and truth.shape != problem.shape:
        raise ConfigError(
            f"ground truth {truth.shape} does not match restored shape {problem.shape}"
        )
    config = _solver_config(s, alpha=alpha)

    out_dir = _run_dir(s)
    if s.solver == "standard-cg":
        if s.problem != "sr":
            raise ConfigError("standard-cg baseline is only defined for the sr problem")
        restored, records = standard_pnp_admm_cg(problem, config)
    else:
        restored, records = linearized_pnp_admm(problem, config)
    write_log_csv(records, out_dir / "log.csv", include_time=args.timing)
    write_image(restored, out_dir / "restored.pfm", "pfm")
    write_image(restored, out_dir / "restored.pgm", "pgm8")
    if truth is not None:
        print(f"PSNR={psnr(truth, restored):.4f} dB")
    print(f"outputs in {out_dir}")
    return 0


def cmd_bench_denoiser(args: argparse.Namespace) -> int:
    s = load_settings("bench-denoiser", args.config, args)
    if s.input is not None:
        image = read_image(s.input)
    else:
        # deterministic synthetic scene: smoothed uniform noise
        n = s.bench_size
        raw = SplitMix64(s.seed).uniforms(n * n).reshape(n, n)
        smooth = SuperResOp(gaussian_kernel(2.0, 5), 1, "symmetric")
        image = sr_apply(smooth, raw)
    out_dir = _run_dir(s)
    rows = bench_denoiser(
        image,
        window_radius=s.bench_window_radius,
        patch_sides=s.bench_patch_sides,
        bandwidth=s.bench_bandwidth,
        repeats=s.bench_repeats,
    )
    write_bench_csv(rows, out_dir / "bench.csv")
    for r in rows:
        print(
            f"np={r.patch_side:3d} fast={r.fast_s:8.3f}s brute={r.brute_s:9.3f}s "
            f"speedup={r.speedup:6.1f}x agree={r.max_abs_diff:.2e}"
        )
    print(f"outputs in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnprestore",
        description="Plug-and-play ADMM image restoration with fast DSG-NLM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to INI run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--rho", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--iters", type=int)
        p.add_argument("--solver", choices=("linearized", "standard-cg"))
        p.add_argument("--denoiser", choices=DENOISERS)
        p.add_argument("--freeze-at", dest="freeze_at", type=int)
        p.add_argument("--output-dir", dest="output_dir")
        p.set_defaults(func=func)
        return p

    p = add("denoise", cmd_denoise, "run the standalone denoiser on one image")
    p.add_argument("--input", help="input image (overrides [run] input)")
    p.add_argument("--oracle", action="store_true",
                   help="also compare against the dense weight matrix (small images)")
    add("simulate-sr", cmd_simulate_sr, "simulate a low-resolution observation")
    add("simulate-qis", cmd_simulate_qis, "simulate single-photon jot counts")
    p = add("restore", cmd_restore, "run a restoration experiment")
    p.add_argument("--observation", help="observation path (overrides [run] observation)")
    p.add_argument("--timing", action="store_true",
                   help="record real wall-clock times in log.csv (breaks byte-identical reruns)")
    add("bench-denoiser", cmd_bench_denoiser, "time fast vs brute-force DSG-NLM")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ImageFormatError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except Exception:  # pragma: no cover - safety net
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
