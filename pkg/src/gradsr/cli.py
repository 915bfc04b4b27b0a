"""Command-line front end: simulate, reconstruct, evaluate, ablate.

Configuration is a flat "key = value" text file with '#' comments;
command-line --set overrides win over the file. Every command writes a
manifest with the resolved configuration, the seed, and input hashes so a
run can be repeated exactly.
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import sys
from pathlib import Path

from . import evaluate, fidelity, imageio
from .degrade import FrameMotion, gaussian_kernel, simulate_stack
from .gradprior import GptConfig
from .solver import ABLATIONS, SolverConfig, reconstruct

PRNG_NAME = "numpy-pcg64"

_CURVE = fidelity.default_curve()

# Known configuration keys with parsers and defaults. "auto" is accepted
# where noted and resolved at run time.
CONFIG_KEYS: dict[str, tuple] = {
    "scale": (int, 4),
    "blur.size": (int, 3),
    "blur.sigma": (float, 1.0),
    "solver.alpha": (float, 0.05),
    "solver.beta": (float, 0.2),
    "solver.tau": ("float_or_auto", "auto"),
    "solver.max_outer": (int, 30),
    "solver.pcg_max_iters": (int, 150),
    "solver.pcg_tol": (float, 1e-6),
    "solver.early_stop": (float, 1e-4),
    "solver.b_inner_iters": (int, 8),
    "solver.b_inner_rounds": (int, 1),
    "shift.max": ("float_or_auto", "auto"),  # auto = the decimation factor
    "fidelity.p": ("float_or_auto", "auto"),
    "fidelity.epsilon": (float, 1e-5),
    "fidelity.reselect_every": (int, 0),
    "fidelity.curve.a": (float, _CURVE.a),
    "fidelity.curve.b": (float, _CURVE.b),
    "fidelity.curve.c": (float, _CURVE.c),
    "fidelity.curve.d": (float, _CURVE.d),
    "gpt.lambda": (float, 1.6),
    "gpt.mu": (float, 0.9),
    "gpt.edge_percentile": (float, 90.0),
    "gpt.max_trace_len": (float, 8.0),
    "gpt.ratio_clamp_lo": (float, 0.2),
    "gpt.ratio_clamp_hi": (float, 5.0),
    "nltv.patch_radius": (int, 3),
    "nltv.window_radius": (int, 10),
    "nltv.num_neighbors": (int, 10),
    "nltv.eta": ("float_or_auto", "auto"),
    "nltv.rebuild_every": (int, 5),
}


class ConfigError(Exception):
    pass


def _parse_value(key: str, raw: str):
    kind = CONFIG_KEYS[key][0]
    raw = raw.strip()
    try:
        if kind == "float_or_auto":
            return "auto" if raw == "auto" else float(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def _reject_unknown(key: str) -> None:
    if key in CONFIG_KEYS:
        return
    close = difflib.get_close_matches(key, CONFIG_KEYS, n=1)
    hint = f" (did you mean {close[0]!r}?)" if close else ""
    raise ConfigError(f"unknown config key {key!r}{hint}")


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    """Resolve defaults, then the config file, then --set overrides."""
    resolved = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            _reject_unknown(key)
            resolved[key] = _parse_value(key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        _reject_unknown(key)
        resolved[key] = _parse_value(key, raw)
    return resolved


def solver_config_from(resolved: dict, method: str, gradient_path: str | None):
    tau = resolved["solver.tau"]
    return SolverConfig(
        alpha=resolved["solver.alpha"],
        beta=resolved["solver.beta"],
        tau=None if tau == "auto" else tau,
        max_outer=resolved["solver.max_outer"],
        pcg_max_iters=resolved["solver.pcg_max_iters"],
        pcg_tol=resolved["solver.pcg_tol"],
        early_stop=resolved["solver.early_stop"],
        b_inner_iters=resolved["solver.b_inner_iters"],
        b_inner_rounds=resolved["solver.b_inner_rounds"],
        ablation=method,
        scale=resolved["scale"],
        p=resolved["fidelity.p"],
        epsilon=resolved["fidelity.epsilon"],
        reselect_p_every=resolved["fidelity.reselect_every"],
        curve=fidelity.NormSelection(
            a=resolved["fidelity.curve.a"],
            b=resolved["fidelity.curve.b"],
            c=resolved["fidelity.curve.c"],
            d=resolved["fidelity.curve.d"],
        ),
        gpt=GptConfig(
            lam=resolved["gpt.lambda"],
            mu=resolved["gpt.mu"],
            edge_percentile=resolved["gpt.edge_percentile"],
            max_trace_len=resolved["gpt.max_trace_len"],
            ratio_clamp_lo=resolved["gpt.ratio_clamp_lo"],
            ratio_clamp_hi=resolved["gpt.ratio_clamp_hi"],
        ),
        patch_radius=resolved["nltv.patch_radius"],
        window_radius=resolved["nltv.window_radius"],
        num_neighbors=resolved["nltv.num_neighbors"],
        eta=resolved["nltv.eta"],
        rebuild_every=resolved["nltv.rebuild_every"],
        gradient_path=gradient_path,
    )


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path, command: str, seed: int, inputs: list, resolved: dict,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "prng": PRNG_NAME,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config": {k: resolved[k] for k in sorted(resolved)},
        "fidelity_curve": {
            "a": resolved["fidelity.curve.a"],
            "b": resolved["fidelity.curve.b"],
            "c": resolved["fidelity.curve.c"],
            "d": resolved["fidelity.curve.d"],
        },
        "gamma_calibration": fidelity.gamma_calibration(),
    }
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_simulate(args) -> int:
    resolved = load_config(args.config, args.set)
    for key, value in (
        ("scale", args.scale),
        ("blur.size", args.blur_size),
        ("blur.sigma", args.blur_sigma),
    ):
        if value is not None:
            resolved[key] = value
    scale = resolved["scale"]
    truth = imageio.read_image(args.input)
    if truth.shape[0] % scale or truth.shape[1] % scale:
        raise ConfigError(
            f"image {truth.shape[1]}x{truth.shape[0]} not divisible by scale {scale}"
        )
    blur = gaussian_kernel(resolved["blur.size"], resolved["blur.sigma"])
    stack = simulate_stack(truth, args.k, scale, blur, args.noise_var, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = args.format
    shift_lines = []
    for i, (frame, motion) in enumerate(stack):
        imageio.write_image(frame, out / f"frame_{i:03d}.{ext}", fmt=ext)
        shift_lines.append(f"{i} {motion.dx!r} {motion.dy!r}")
    (out / "shifts.txt").write_text("\n".join(shift_lines) + "\n")
    _write_manifest(
        out / "manifest.json",
        "simulate",
        args.seed,
        [args.input],
        resolved,
        extra={"k": args.k, "noise_var": args.noise_var, "frame_format": ext},
    )
    return 0


def _read_shifts(path) -> dict[int, FrameMotion]:
    motions = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        idx, dx, dy = line.split()
        motions[int(idx)] = FrameMotion(float(dx), float(dy))
    if not motions:
        raise ConfigError(f"no shifts in {path}")
    return motions


def cmd_reconstruct(args) -> int:
    resolved = load_config(args.config, args.set)
    if args.method not in ABLATIONS:
        raise ConfigError(f"unknown method {args.method!r} (one of {ABLATIONS})")
    if args.method in ("nltv-lg", "nltv-lgr") and args.gradient_file is None:
        raise ConfigError(
            f"method {args.method!r} takes its guidance gradient from a file; "
            f"pass --gradient-file"
        )
    frames_dir = Path(args.frames)
    frame_paths = sorted(
        p for p in frames_dir.iterdir()
        if p.suffix.lower() in (".pgm", ".imgf") and p.stem.startswith("frame_")
    )
    if not frame_paths:
        raise ConfigError(f"no frame_*.pgm / frame_*.imgf files in {frames_dir}")
    frames = [imageio.read_image(p) for p in frame_paths]
    shift_map = _read_shifts(args.shifts)
    try:
        motions = [shift_map[i] for i in range(len(frames))]
    except KeyError as exc:
        raise ConfigError(f"shift file missing frame index {exc}") from exc
    max_shift = resolved["shift.max"]
    if max_shift == "auto":
        max_shift = float(resolved["scale"])
    for i, motion in enumerate(motions):
        if max(abs(motion.dx), abs(motion.dy)) >= max_shift:
            raise ConfigError(
                f"frame {i} shift ({motion.dx}, {motion.dy}) exceeds the "
                f"shift.max bound {max_shift}"
            )

    blur = gaussian_kernel(resolved["blur.size"], resolved["blur.sigma"])
    config = solver_config_from(resolved, args.method, args.gradient_file)
    report = reconstruct(frames, motions, blur, config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt = "imgf" if out.suffix.lower() == ".imgf" else "pgm"
    imageio.write_image(report.z, out, fmt=fmt)

    log_lines = []
    for i in range(1, len(report.objective_trace)):
        log_lines.append(json.dumps({
            "iter": i,
            "objective": report.objective_trace[i],
            "surrogate": report.surrogate_trace[i],
            "z_change": report.z_changes[i - 1],
            "pcg_iters": report.pcg_iters[i - 1],
        }, sort_keys=True))
    Path(str(out) + ".log.jsonl").write_text("\n".join(log_lines) + "\n")

    inputs = [*frame_paths, args.shifts]
    if args.gradient_file:
        inputs.append(args.gradient_file)
    _write_manifest(
        str(out) + ".manifest.json",
        "reconstruct",
        args.seed,
        inputs,
        resolved,
        extra={
            "method": args.method,
            "selected_p": report.p,
            "eta": report.eta,
            "gamma": report.gamma,
            "iterations": report.iterations,
        },
    )
    print(f"wrote {out} after {report.iterations} iterations (p={report.p:.4f})",
          file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    truth = imageio.read_image(args.truth)
    test = imageio.read_image(args.test)
    report = imageio.metric_report(truth, test, peak=args.peak)
    print(f"psnr_db={report.psnr!r} ssim={report.ssim!r}")
    if args.manifest:
        _write_manifest(
            args.manifest,
            "evaluate",
            0,
            [args.truth, args.test],
            load_config(None, []),
            extra={"psnr_db": report.psnr, "ssim": report.ssim, "peak": args.peak},
        )
    return 0


def cmd_ablate(args) -> int:
    resolved = load_config(args.config, args.set)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    spec = evaluate.ExperimentSpec(
        input_dir=args.input,
        output_dir=args.out,
        methods=methods,
        scale=args.scale if args.scale is not None else resolved["scale"],
        k=args.k,
        blur_size=resolved["blur.size"],
        blur_sigma=resolved["blur.sigma"],
        noise_var=args.noise_var,
        seed=args.seed,
        gradient_dir=args.gradient_dir,
    )
    if args.scale is not None:
        resolved["scale"] = args.scale
    base = solver_config_from(resolved, methods[0] if methods else "nltv", None)
    table = evaluate.run_experiment(spec, base)
    summary = evaluate.summarize(table)
    for method in methods:
        s = summary[method]
        print(f"{method}: psnr={s['psnr_db']:.3f} dB ssim={s['ssim']:.4f} "
              f"time={s['time_s']:.2f} s")
    inputs = sorted(str(p) for p in Path(args.input).iterdir() if p.is_file())
    _write_manifest(
        Path(args.out) / "manifest.json",
        "ablate",
        args.seed,
        inputs,
        resolved,
        extra={"methods": list(methods), "k": args.k, "noise_var": args.noise_var},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradsr",
        description="Multi-frame super-resolution with gradient guidance "
        "and non-local total variation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a degraded frame stack")
    p_sim.add_argument("--input", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--k", type=int, default=16)
    p_sim.add_argument("--scale", type=int, default=None)
    p_sim.add_argument("--blur-sigma", type=float, default=None)
    p_sim.add_argument("--blur-size", type=int, default=None)
    p_sim.add_argument("--noise-var", type=float, default=0.0)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--format", choices=("imgf", "pgm"), default="imgf")
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--set", action="append", default=[])
    p_sim.set_defaults(func=cmd_simulate)

    p_rec = sub.add_parser("reconstruct", help="reconstruct from a frame stack")
    p_rec.add_argument("--frames", required=True)
    p_rec.add_argument("--shifts", required=True)
    p_rec.add_argument("--out", required=True)
    p_rec.add_argument("--method", default="nltv-lgr", choices=ABLATIONS)
    p_rec.add_argument("--gradient-file", default=None)
    p_rec.add_argument("--config", default=None)
    p_rec.add_argument("--seed", type=int, default=0)
    p_rec.add_argument("--set", action="append", default=[])
    p_rec.set_defaults(func=cmd_reconstruct)

    p_eval = sub.add_parser("evaluate", help="full-reference metrics")
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--test", required=True)
    p_eval.add_argument("--peak", type=float, default=255.0)
    p_eval.add_argument("--manifest", default=None,
                        help="optionally record inputs and scores here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run the method-comparison harness")
    p_abl.add_argument("--input", required=True)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--methods", default="bicubic,nltv,nltv-gpt,nltv-lgr")
    p_abl.add_argument("--k", type=int, default=16)
    p_abl.add_argument("--scale", type=int, default=None)
    p_abl.add_argument("--noise-var", type=float, default=0.0)
    p_abl.add_argument("--seed", type=int, default=0)
    p_abl.add_argument("--gradient-dir", default=None)
    p_abl.add_argument("--config", default=None)
    p_abl.add_argument("--set", action="append", default=[])
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, imageio.ImageFormatError, ValueError,
            FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
