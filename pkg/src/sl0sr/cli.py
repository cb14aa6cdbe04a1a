"""Command-line front end: ``sl0sr {degrade,train,sr,eval,bench,rerun}``.

Every command that writes an artifact also writes ``<output>.manifest.json``
holding the resolved arguments, absolute input/output paths, per-stage
wall times and the tool version. ``sl0sr rerun MANIFEST`` replays it.

Exit codes: 0 on success, 1 on a numerical failure, 2 on usage or I/O
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from . import __version__
from .dictionary import TrainingConfig, harvest_pairs, load_dictionary, save_dictionary, train_coupled
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    FormatError,
    InvariantViolation,
    SingularSystemError,
)
from .imaging import (
    DegradationConfig,
    bicubic_resize,
    center_crop_to_multiple,
    degrade,
    read_image,
    write_image,
)
from .metrics import ComparisonRow, SsimConfig, average_rows, compare, psnr, ssim
from .parallel import default_threads
from .sl0 import Sl0Config
from .superres import SrConfig, super_resolve

log = logging.getLogger("sl0sr")

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
SOLVER_CHOICES = ("sl0", "ista", "bicubic")
# Arguments that only steer logging and never change an artifact.
_NOT_RECORDED = ("func", "verbose")
_PATH_ARGS = ("input", "output", "dictionary", "image_dir", "reference", "candidates")


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit code 2)."""


# --- manifests and helpers ---------------------------------------------------

def manifest_path(output) -> str:
    return os.fspath(output) + ".manifest.json"


def _recorded_args(args: argparse.Namespace) -> dict:
    """Resolved arguments with paths made absolute so a rerun works from any directory."""
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_RECORDED:
            continue
        if k in _PATH_ARGS and v is not None:
            v = [_abs(x) for x in v] if isinstance(v, list) else _abs(v)
        out[k] = v
    return out


def write_manifest(output, args: argparse.Namespace, inputs: dict, outputs: dict,
                   wall_times: Dict[str, float], **extra) -> str:
    """Serialize a run description next to ``output`` and return its path."""
    recorded = _recorded_args(args)
    data = {
        "command": args.command,
        "tool_version": __version__,
        "args": recorded,
        "seed": recorded.get("seed"),
        "inputs": inputs,
        "outputs": outputs,
        "wall_times": wall_times,
    }
    data.update(extra)
    path = manifest_path(output)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _abs(path) -> str:
    return os.path.abspath(os.fspath(path))


def _list_images(directory) -> List[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"not a directory: {directory}")
    files = sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"no images ({', '.join(IMAGE_SUFFIXES)}) found in {directory}")
    return files


def _median_times(runs: Sequence[Dict[str, float]]) -> Dict[str, float]:
    return {k: statistics.median(r[k] for r in runs) for k in runs[0]}


def _fmt_seconds(t: float) -> str:
    return f"{t:.2f}"


def _sr_config(args, scale: int, lr_patch_size: int, solver: str) -> SrConfig:
    return SrConfig(
        scale=scale,
        lr_patch_size=lr_patch_size,
        overlap=args.overlap,
        lam=args.lam,
        nu=args.nu,
        max_global_iters=args.max_global_iters,
        global_tol=args.global_tol,
        coding=Sl0Config(sigma_min=args.sigma_min),
        degradation=DegradationConfig(scale=scale, blur_sigma=args.blur_sigma),
        solver=solver,
        l1_weight=args.l1_weight,
        ista_iters=args.ista_iters,
    )


def _reconstruct(y, solver: str, scale: int, dictionary, config, threads: int, repeat: int):
    """Run one solver ``repeat`` times; returns image, median stage times, report."""
    runs, report = [], None
    out = None
    for _ in range(max(1, repeat)):
        if solver == "bicubic":
            t = time.perf_counter()
            out = bicubic_resize(y, y.shape[1] * scale, y.shape[0] * scale)
            runs.append({"total": time.perf_counter() - t})
        else:
            out, report = super_resolve(y, dictionary, config, threads=threads)
            runs.append(dict(report.wall_times))
    return out, _median_times(runs), report


# --- table rendering -------------------------------------------------------

def _num(v: float, digits: int) -> str:
    return "inf" if v == float("inf") else f"{v:.{digits}f}"


def render_table(headers: Sequence[str], rows: Sequence[Sequence], fmt: str = "markdown",
                 digits: Sequence[int] = ()) -> str:
    """Markdown (rounded) or CSV (6 significant digits) table text."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(headers)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else f"{v:.6g}" for v in row])
        return buf.getvalue()
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for row in rows:
        cells = []
        for i, v in enumerate(row):
            cells.append(v if isinstance(v, str) else _num(v, digits[i] if i < len(digits) else 4))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def comparison_table(rows: Sequence[ComparisonRow], fmt: str = "markdown") -> str:
    return render_table(["name", "PSNR(dB)", "SSIM"],
                        [(r.name, r.psnr, r.ssim) for r in rows], fmt, digits=(0, 2, 4))


# --- commands --------------------------------------------------------------

def cmd_degrade(args) -> int:
    start = time.perf_counter()
    image = read_image(args.input)
    config = DegradationConfig(scale=args.scale, blur_sigma=args.blur_sigma)
    cropped, (top, bottom, left, right) = center_crop_to_multiple(image, config.scale)
    if top or bottom or left or right:
        print(f"center crop: top={top} bottom={bottom} left={left} right={right}", file=sys.stderr)
    lr = degrade(cropped, config)
    write_image(lr, args.output)
    elapsed = time.perf_counter() - start
    write_manifest(
        args.output, args,
        inputs={"input": _abs(args.input)},
        outputs={"output": _abs(args.output)},
        wall_times={"total": elapsed},
        crop={"top": top, "bottom": bottom, "left": left, "right": right},
        input_size=[image.shape[1], image.shape[0]],
        output_size=[lr.shape[1], lr.shape[0]],
    )
    return EXIT_OK


def cmd_train(args) -> int:
    files = _list_images(args.image_dir)
    start = time.perf_counter()
    images = [read_image(p) for p in files]
    degradation = DegradationConfig(scale=args.scale, blur_sigma=args.blur_sigma)
    lr, hr = harvest_pairs(images, degradation, lr_patch_size=args.patch_size,
                           stride=args.harvest_stride, max_pairs=args.max_pairs, seed=args.seed)
    harvest_time = time.perf_counter() - start
    log.info("harvested %d patch pairs from %d images", len(lr), len(images))

    config = TrainingConfig(atom_count=args.atoms, epochs=args.epochs,
                            coding=Sl0Config(sigma_min=args.sigma_min),
                            mod_ridge=args.mod_ridge, seed=args.seed)
    history: list = []
    t = time.perf_counter()
    dictionary = train_coupled(lr, hr, config, threads=args.threads, history=history)
    train_time = time.perf_counter() - t
    for h in history:
        log.info("epoch %d: rmse %.6g, mean sparsity %.1f, dead atoms %d",
                 h.epoch, h.rmse, h.mean_sparsity, h.dead_atoms)
    save_dictionary(dictionary, args.output)
    final_rmse = history[-1].rmse
    print(f"trained {dictionary.atom_count} atoms on {len(lr)} pairs; final RMSE {final_rmse:.6g}")
    write_manifest(
        args.output, args,
        inputs={"images": [_abs(p) for p in files]},
        outputs={"dictionary": _abs(args.output)},
        wall_times={"harvest": harvest_time, "train": train_time,
                    "total": time.perf_counter() - start},
        training={"pairs": int(len(lr)), "final_rmse": final_rmse,
                  "epochs": [asdict(h) for h in history]},
    )
    return EXIT_OK


def cmd_sr(args) -> int:
    y = read_image(args.input)
    dictionary, config = None, None
    if args.solver == "bicubic":
        scale = args.scale or 2
    else:
        dictionary = load_dictionary(args.dictionary)
        scale = args.scale or dictionary.scale
        config = _sr_config(args, scale, dictionary.lr_patch_size, args.solver)
    out, times, report = _reconstruct(y, args.solver, scale, dictionary, config,
                                      args.threads, args.repeat)
    write_image(out, args.output)
    summary = " ".join(f"{k}={_fmt_seconds(v)}s" for k, v in times.items())
    print(f"{args.solver}: {y.shape[1]}x{y.shape[0]} -> {out.shape[1]}x{out.shape[0]} {summary}")
    extra = {"output_size": [out.shape[1], out.shape[0]]}
    if report is not None:
        print(f"patches={report.patch_count} mean_sparsity={report.mean_patch_sparsity:.2f} "
              f"global_iterations={report.global_iterations_used}")
        extra["report"] = {
            "patch_count": report.patch_count,
            "mean_patch_sparsity": report.mean_patch_sparsity,
            "global_iterations_used": report.global_iterations_used,
            "objective_trace": report.objective_trace,
        }
    inputs = {"input": _abs(args.input)}
    if dictionary is not None:
        inputs["dictionary"] = _abs(args.dictionary)
    write_manifest(args.output, args, inputs=inputs, outputs={"output": _abs(args.output)},
                   wall_times=times, **extra)
    return EXIT_OK


def cmd_eval(args) -> int:
    reference = read_image(args.reference)
    candidates = [(Path(c).name, read_image(c)) for c in args.candidates]
    rows = compare(reference, candidates, peak=args.peak, config=SsimConfig())
    text = comparison_table(rows, args.format)
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        write_manifest(
            args.output, args,
            inputs={"reference": _abs(args.reference),
                    "candidates": [_abs(c) for c in args.candidates]},
            outputs={"table": _abs(args.output)},
            wall_times={},
            rows=[r._asdict() for r in rows],
        )
    return EXIT_OK


def cmd_bench(args) -> int:
    files = _list_images(args.image_dir)
    solvers = list(dict.fromkeys(args.solvers))
    dictionary = None
    scale = args.scale or 2
    if any(s != "bicubic" for s in solvers):
        dictionary = load_dictionary(args.dictionary)
        scale = args.scale or dictionary.scale
    degradation = DegradationConfig(scale=scale, blur_sigma=args.blur_sigma)

    results = []  # per image: {solver: (psnr, ssim, coding seconds, total seconds)}
    for path in files:
        truth, _ = center_crop_to_multiple(read_image(path), scale)
        y = degrade(truth, degradation)
        per = {}
        for solver in solvers:
            config = None
            if solver != "bicubic":
                config = _sr_config(args, scale, dictionary.lr_patch_size, solver)
            out, times, _ = _reconstruct(y, solver, scale, dictionary, config,
                                         args.threads, args.repeat)
            per[solver] = (psnr(truth, out, args.peak), ssim(truth, out),
                           times.get("coding", 0.0), times["total"])
            log.info("%s %s: %.3f dB, %.2f s", path.name, solver, per[solver][0], times["total"])
        results.append((path.name, per))

    headers = ["image"]
    for s in solvers:
        headers += [f"{s} PSNR(dB)", f"{s} SSIM", f"{s} time(s)"]
    compare_times = "sl0" in solvers and "ista" in solvers
    if compare_times:
        headers.append("time saving(%)")

    def saving(t_sl0, t_ista):
        return 100.0 * (1.0 - t_sl0 / t_ista) if t_ista > 0 else 0.0

    rows = []
    for name, per in results:
        row = [name]
        for s in solvers:
            row += [per[s][0], per[s][1], per[s][3]]
        if compare_times:
            row.append(saving(per["sl0"][3], per["ista"][3]))
        rows.append(row)
    avg = ["Average"]
    for s in solvers:
        summary = average_rows([ComparisonRow(n, per[s][0], per[s][1]) for n, per in results])
        avg += [summary.psnr, summary.ssim, float(np.mean([per[s][3] for _, per in results]))]
    if compare_times:
        avg.append(float(np.mean([r[-1] for r in rows])))
    rows.append(avg)

    digits = [0] + [2, 4, 2] * len(solvers) + [1]
    text = render_table(headers, rows, args.format, digits)
    if compare_times:
        coding_sl0 = sum(per["sl0"][2] for _, per in results)
        coding_ista = sum(per["ista"][2] for _, per in results)
        text += (f"\nsparse coding time: sl0 {_fmt_seconds(coding_sl0)} s, "
                 f"ista {_fmt_seconds(coding_ista)} s, "
                 f"saving {saving(coding_sl0, coding_ista):.1f} %\n")
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        inputs = {"images": [_abs(p) for p in files]}
        if dictionary is not None:
            inputs["dictionary"] = _abs(args.dictionary)
        write_manifest(
            args.output, args, inputs=inputs, outputs={"table": _abs(args.output)},
            wall_times={"total": sum(per[s][3] for _, per in results for s in solvers)},
            results={name: {s: dict(zip(("psnr", "ssim", "coding_time", "total_time"), v))
                            for s, v in per.items()} for name, per in results},
        )
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        with open(args.manifest, encoding="utf-8") as fh:
            manifest = json.load(fh)
        command = manifest["command"]
        recorded = dict(manifest["args"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{args.manifest}: not a run manifest ({exc})") from exc
    if command not in _COMMANDS or command == "rerun":
        raise UsageError(f"{args.manifest}: cannot rerun command {command!r}")
    if args.output is not None:
        if "output" not in recorded:
            raise UsageError(f"command {command!r} has no output to redirect")
        recorded["output"] = args.output
    replay = argparse.Namespace(**recorded, verbose=args.verbose)
    replay.command = command
    return _COMMANDS[command](replay)


_COMMANDS = {
    "degrade": cmd_degrade,
    "train": cmd_train,
    "sr": cmd_sr,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "rerun": cmd_rerun,
}


# --- argument parsing --------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _add_threads(p):
    p.add_argument("--threads", type=_positive_int, default=default_threads(),
                   help="worker threads for patch coding (default: $SL0SR_THREADS or 1)")


def _add_reconstruction(p):
    p.add_argument("--scale", type=_positive_int, default=None,
                   help="upscaling factor (default: the dictionary's, or 2 for bicubic)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1,
                   help="weight of the data-consistency term")
    p.add_argument("--nu", type=float, default=0.5, help="initial global gradient step")
    p.add_argument("--overlap", type=int, default=1, help="LR patch overlap in pixels")
    p.add_argument("--max-global-iters", type=int, default=100)
    p.add_argument("--global-tol", type=float, default=1e-5)
    p.add_argument("--blur-sigma", type=float, default=0.8,
                   help="Gaussian blur of the degradation model")
    p.add_argument("--sigma-min", type=float, default=Sl0Config().sigma_min,
                   help="SL0 annealing floor")
    p.add_argument("--l1-weight", type=float, default=1e-3, help="ISTA l1 weight")
    p.add_argument("--ista-iters", type=_positive_int, default=100, help="ISTA iterations")
    p.add_argument("--repeat", type=_positive_int, default=1,
                   help="runs per timing; the median is reported")
    _add_threads(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sl0sr", description="Smoothed-l0 sparse coding super-resolution tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="blur and decimate an image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--scale", type=_positive_int, default=2)
    p.add_argument("--blur-sigma", type=float, default=0.8)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a coupled dictionary from a directory of images")
    p.add_argument("image_dir")
    p.add_argument("output")
    p.add_argument("--atoms", type=_positive_int, default=1024)
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=_positive_int, default=2)
    p.add_argument("--patch-size", type=_positive_int, default=5, help="LR patch side")
    p.add_argument("--blur-sigma", type=float, default=0.8)
    p.add_argument("--max-pairs", type=_positive_int, default=10000,
                   help="patch pairs sampled for training")
    p.add_argument("--harvest-stride", type=_positive_int, default=1,
                   help="LR stride between harvested patches")
    p.add_argument("--sigma-min", type=float, default=Sl0Config().sigma_min)
    p.add_argument("--mod-ridge", type=float, default=1e-6)
    _add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve a low-resolution image")
    p.add_argument("input")
    p.add_argument("dictionary", help="dictionary file (ignored by --solver bicubic)")
    p.add_argument("output")
    p.add_argument("--solver", choices=SOLVER_CHOICES, default="sl0")
    _add_reconstruction(p)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM of candidates against a reference")
    p.add_argument("reference")
    p.add_argument("candidates", nargs="+")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--peak", type=float, default=1.0, help="PSNR peak value")
    p.add_argument("--output", default=None, help="also write the table to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="degrade, reconstruct, score and time a corpus")
    p.add_argument("image_dir")
    p.add_argument("dictionary")
    p.add_argument("--solvers", nargs="+", choices=SOLVER_CHOICES,
                   default=["bicubic", "ista", "sl0"])
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--output", default=None, help="also write the table to this file")
    _add_reconstruction(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--output", default=None, help="write the artifact here instead")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SingularSystemError, DegenerateDataError, FloatingPointError) as exc:
        print(f"sl0sr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError, InvariantViolation, ConfigurationError, UsageError,
            ValueError) as exc:
        print(f"sl0sr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
