"""Command-line entry point: ``gaussmotion {synth,fit,bench} ...``.

Reports go to stdout (and into ``--out``); progress goes to stderr. The
default output directory comes from ``$GAUSSMOTION_OUT`` when set. Exit
status is 1 when a run diverged or a benchmark misses its tolerance, 2 for
usage or input errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from . import bench
from .frame import BitDepth, FrameError, load_frame, save_frame
from .kernel import Translation
from .loss import LossConfig
from .solver import FitConfig, measure_motion
from .synthgen import (TEXTURES, GfsmSpec, GkaSpec, generate_gka, make_gfsm, texture_image,
                       write_bundle)

logger = logging.getLogger("gaussmotion")

OUT_ENV = "GAUSSMOTION_OUT"
REPORT_SCHEMA = "gaussmotion.fit/1"


@dataclass
class RunConfig:
    """Everything needed to repeat a command; embedded in every report."""
    command: str
    fit_config: dict = field(default_factory=dict)
    loss_config: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)
    n_runs: int = 5
    out_dir: str = ""
    fmt: str = "json"


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, "gaussmotion_out")


def _load_config(path):
    """Base FitConfig/LossConfig from a report or config JSON (``fit_config``/``loss_config`` keys)."""
    if not path:
        return {}, {}
    with open(path) as fh:
        data = json.load(fh)
    data = data.get("config", data)
    fit_keys = {f.name for f in fields(FitConfig)}
    loss_keys = {f.name for f in fields(LossConfig)}
    fit = {k: v for k, v in data.get("fit_config", {}).items() if k in fit_keys}
    loss = {k: v for k, v in data.get("loss_config", {}).items() if k in loss_keys}
    return fit, loss


def _configs(args, default_kernels):
    fit_base, loss_base = _load_config(getattr(args, "config", None))
    fit = FitConfig(**{"kernel_count": default_kernels, **fit_base})
    overrides = {}
    if args.kernels is not None:
        overrides["kernel_count"] = args.kernels
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    fit = replace(fit, **overrides)
    loss = LossConfig(**loss_base)
    if args.ws is not None:
        loss = replace(loss, w_s=args.ws)
    if args.beta is not None:
        loss = replace(loss, beta=args.beta)
    if args.no_sr:
        loss = replace(loss, w_s=0.0)
    return fit, loss


def _emit(text: str, path: str | None) -> None:
    sys.stdout.write(text)
    if not text.endswith("\n"):
        sys.stdout.write("\n")
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


# -- synth --------------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = args.out or os.path.join(default_out_dir(), "fixture")
    if args.kind == "texture":
        frame = texture_image(args.name, args.size)
        save_frame(frame, out)
        print(out)
        return 0
    if args.kind == "gka":
        spec = GkaSpec(size=args.size, scale=args.scale, spacing=args.spacing, theta=args.theta,
                       brightness=args.brightness, bit_depth=BitDepth.parse(args.depth),
                       shift=Translation(*args.shift))
        a, b, truth, _ = generate_gka(spec)
        meta = {"kind": "gka", **spec.to_dict()}
    else:
        source = load_frame(args.image) if args.image else texture_image(args.texture)
        motion = args.motion if len(args.motion) == 2 else args.motion * 2
        spec = GfsmSpec(source, args.factor, tuple(args.origin), tuple(args.crop),
                        Translation(*motion), BitDepth.parse(args.depth))
        a, b, truth = make_gfsm(spec)
        meta = {"kind": "gfsm", "source": args.image or f"texture:{args.texture}", **spec.to_dict()}
    print(write_bundle(out, a, b, truth, meta))
    return 0


# -- fit ----------------------------------------------------------------------------------------

def _read_pair(args):
    truth = Translation(*args.truth) if args.truth else None
    if args.fixture:
        a = load_frame(os.path.join(args.fixture, "frame_a.pgm"))
        b = load_frame(os.path.join(args.fixture, "frame_b.pgm"))
        truth_path = os.path.join(args.fixture, "truth.json")
        if truth is None and os.path.exists(truth_path):
            with open(truth_path) as fh:
                t = json.load(fh)
            truth = Translation(t["dx"], t["dy"])
        return a, b, truth
    if not args.frames or len(args.frames) != 2:
        raise ValueError("give --fixture DIR or two frame paths")
    return load_frame(args.frames[0]), load_frame(args.frames[1]), truth


def cmd_fit(args) -> int:
    a, b, truth = _read_pair(args)
    if a.shape != b.shape:
        raise ValueError(f"frames differ in size: {a.shape} vs {b.shape}")
    fit, loss = _configs(args, bench.GFSM_KERNELS)
    report = measure_motion(a, b, fit, loss, n_runs=args.runs, ground_truth=truth, jobs=args.jobs)
    run = RunConfig("fit", fit.to_dict(), loss.to_dict(),
                    {"fixture": args.fixture, "frames": args.frames}, args.runs, args.out or "",
                    args.format)
    if args.format == "csv":
        rows = []
        est = report.mean_motion if report.motions else [float("nan")] * 2
        for k, axis in enumerate("xy"):
            rows.append({"case": args.name, "axis": axis,
                         "truth_px": bench._num(truth[k]) if truth else "",
                         "estimate_px": bench._num(est[k]), "mae_px": bench._num(report.mae[k]),
                         "std_px": bench._num(report.std[k]),
                         "pct_error": bench._num(report.pct_error[k]), "paper_mae_px": ""})
        text = bench.write_csv(rows)
    else:
        text = bench.dumps({"schema": REPORT_SCHEMA, "config": asdict(run), **report.to_dict()})
    _emit(text, args.out)
    return 1 if report.n_diverged else 0


# -- bench --------------------------------------------------------------------------------------

def cmd_bench(args) -> int:
    kwargs = {}
    if args.suite == "kernel-number" and args.counts:
        kwargs["counts"] = tuple(args.counts)
    if args.motions and args.suite == "kernel-number":
        kwargs["motion"] = args.motions[0]
    elif args.motions and args.suite != "gka":
        kwargs["motions"] = tuple(args.motions)
    if args.textures and args.suite != "gka":
        kwargs["textures"] = tuple(args.textures)
    cases = bench.suite_cases(args.suite, **kwargs)
    default_n = bench.GKA_KERNELS if args.suite == "gka" else bench.GFSM_KERNELS
    fit, loss = _configs(args, default_n)
    # per-case kernel counts stay unless --kernels overrides them
    override = args.kernels if args.suite != "kernel-number" else None
    reports = bench.run_cases(cases, fit, loss, n_runs=args.runs, jobs=args.jobs,
                              kernel_override=override)
    record = bench.suite_report(args.suite, cases, reports, args.runs)
    record["config"] = asdict(RunConfig(f"bench {args.suite}", fit.to_dict(), loss.to_dict(),
                                        {"kernel_override": override, **kwargs}, args.runs,
                                        args.out or default_out_dir(), args.format))
    out_dir = args.out or default_out_dir()
    stem = os.path.join(out_dir, f"bench_{args.suite.replace('-', '_')}")
    csv_text = bench.write_csv(bench.csv_rows(cases, reports))
    json_text = bench.dumps(record)
    if args.format == "csv":
        _emit(csv_text, stem + ".csv")
        with open(stem + ".json", "w") as fh:
            fh.write(json_text + "\n")
    else:
        _emit(json_text, stem + ".json")
        with open(stem + ".csv", "w", newline="") as fh:
            fh.write(csv_text)
    for msg in record["failures"]:
        logger.warning("tolerance: %s", msg)
    return 1 if record["failures"] else 0


# -- parser -------------------------------------------------------------------------------------

def _fit_flags(p, default_format):
    p.add_argument("--seed", type=int, default=None, help="first random seed (default 0)")
    p.add_argument("--runs", type=int, default=5, help="randomized fits per case")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--kernels", type=int, default=None, help="kernel count N")
    p.add_argument("--ws", type=float, default=None, help="sub-pixel loss weight")
    p.add_argument("--beta", type=float, default=None, help="sub-pixel error gate")
    p.add_argument("--no-sr", action="store_true", help="drop the sub-pixel term (w_s = 0)")
    p.add_argument("--config", help="JSON with fit_config/loss_config, e.g. a previous report")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--format", choices=("json", "csv"), default=default_format)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussmotion",
                                     description="Sub-pixel motion from Gaussian kernel fits.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic fixture bundle")
    kinds = synth.add_subparsers(dest="kind", required=True)
    gka = kinds.add_parser("gka", help="kernel-array pair")
    gka.add_argument("--shift", type=float, nargs=2, default=(0.01, 0.01), metavar=("DX", "DY"))
    gka.add_argument("--depth", type=int, choices=(0, 8, 16), default=16)
    gka.add_argument("--size", type=int, default=GkaSpec.size)
    gka.add_argument("--scale", type=float, default=GkaSpec.scale)
    gka.add_argument("--spacing", type=float, default=GkaSpec.spacing)
    gka.add_argument("--theta", type=float, default=GkaSpec.theta)
    gka.add_argument("--brightness", type=float, default=GkaSpec.brightness)
    gka.add_argument("--out")
    gfsm = kinds.add_parser("gfsm", help="textured pair with interpolated motion")
    src = gfsm.add_mutually_exclusive_group()
    src.add_argument("--image", help="grayscale PGM/PNG source")
    src.add_argument("--texture", choices=sorted(TEXTURES), default="blobs")
    gfsm.add_argument("--motion", type=float, nargs="+", default=[0.01],
                      help="one value for both axes, or DX DY")
    gfsm.add_argument("--factor", type=int, default=2, help="downsampling factor")
    gfsm.add_argument("--origin", type=int, nargs=2, default=(32, 32), metavar=("X", "Y"))
    gfsm.add_argument("--crop", type=int, nargs=2, default=(64, 64), metavar=("W", "H"))
    gfsm.add_argument("--depth", type=int, choices=(0, 8, 16), default=16)
    gfsm.add_argument("--out")
    tex = kinds.add_parser("texture", help="procedural source image")
    tex.add_argument("--name", choices=sorted(TEXTURES), default="blobs")
    tex.add_argument("--size", type=int, default=256)
    tex.add_argument("--out")

    fit = sub.add_parser("fit", help="measure motion between two frames")
    fit.add_argument("frames", nargs="*", help="frame A and frame B")
    fit.add_argument("--fixture", help="bundle directory written by synth")
    fit.add_argument("--truth", type=float, nargs=2, metavar=("DX", "DY"))
    fit.add_argument("--name", default="input", help="case label for CSV output")
    fit.add_argument("--out", help="also write the report here")
    _fit_flags(fit, "json")

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=sorted(bench.SUITES))
    b.add_argument("--counts", type=int, nargs="+", help="kernel counts (kernel-number)")
    b.add_argument("--motions", type=float, nargs="+")
    b.add_argument("--textures", nargs="+", choices=sorted(TEXTURES))
    b.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./gaussmotion_out)")
    _fit_flags(b, "csv")
    return parser


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if args.command == "synth" and args.kind == "texture" and not args.out:
        args.out = os.path.join(default_out_dir(), f"{args.name}.pgm")
    try:
        return COMMANDS[args.command](args)
    except (FrameError, ValueError, OSError) as exc:
        print(f"gaussmotion: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
