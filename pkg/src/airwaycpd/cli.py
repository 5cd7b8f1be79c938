"""Command-line interface.

Subcommands::

    align     baseline.csv followup.csv  -> aligned JSON
    detect    aligned.json               -> dilatation call JSON
    simulate  (synthetic airways)        -> heatmap CSV
    evaluate  airway directory           -> heatmap CSV
    volume    aligned.json --t MM        -> PVC report CSV

Exit status is 0 on success (a no-call is a success), 2 for usage or input
errors and 3 when an internal invariant fails.  Errors are written to stderr
as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .baseline_detectors import NoCallError, penalized_cost_detect, threshold_detect
from .dilatation_sim import (
    ALPHAS_MM,
    MAGNITUDES,
    run_sweep,
    synthetic_airways,
    write_heatmap_csv,
)
from .posterior_analysis import NoChangepointError, call_dilatation_point, pooled_histogram
from .rjmh_sampler import SamplerConfig, run_chain
from .segment_model import InvalidStateError
from .series_prep import (
    align_pair,
    load_record,
    pair_from_record,
    pair_to_record,
    read_area_csv,
    resample_to_1mm,
    series_from_record,
)
from .volume_metrics import volume_report, write_report_csv

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3

METHOD_ALIASES = {"rjmh": "rjmh", "threshold": "threshold",
                  "lavielle": "penalized_cost", "penalized_cost": "penalized_cost"}

_defaults = SamplerConfig()


class UsageError(Exception):
    pass


# -- argument parsing ----------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _epsilon(text: str):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon {text!r}") from None
    if len(parts) not in (1, 3) or any(not p > 0 for p in parts):
        raise argparse.ArgumentTypeError("epsilon is one positive value or mu,sigma2,nu")
    return parts[0] if len(parts) == 1 else tuple(parts)


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _detectors(text: str) -> list[str]:
    out = []
    for name in text.split(","):
        name = name.strip()
        if name not in METHOD_ALIASES:
            raise argparse.ArgumentTypeError(f"unknown detector {name!r}")
        if METHOD_ALIASES[name] not in out:
            out.append(METHOD_ALIASES[name])
    return out


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--iterations", type=_positive_int, default=_defaults.iterations)
    g.add_argument("--burn-in", type=float, default=_defaults.burn_in_fraction,
                   help="burn-in as a fraction of the iterations")
    g.add_argument("--thin", type=_positive_int, default=_defaults.thin)
    g.add_argument("--kmax", type=_positive_int, default=_defaults.k_max)
    g.add_argument("--epsilon", type=_epsilon, default=None,
                   help="resample/shift proposal std: one value or mu,sigma2,nu "
                        "(default: from noise level)")
    g.add_argument("--jump-epsilon", type=_epsilon, default=None,
                   help="birth/death offset std, same format (default: --epsilon if "
                        "given, else at least the prior spread)")
    g.add_argument("--lambda", dest="lam", type=float, default=_defaults.lam)
    g.add_argument("--seed", type=int, default=_defaults.seed)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.add_argument("--manifest", help="write a run manifest JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airwaycpd", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="align a baseline/follow-up pair")
    p.add_argument("baseline")
    p.add_argument("followup")
    _common(p)

    p = sub.add_parser("detect", help="locate the dilatation starting point")
    p.add_argument("aligned")
    p.add_argument("--method", choices=["rjmh", "threshold", "lavielle"], default="rjmh")
    p.add_argument("--trace", help="also write the stored chain states (JSON lines)")
    _add_sampler_flags(p)
    _common(p)

    for name, helptext in (("simulate", "sweep on synthetic healthy airways"),
                           ("evaluate", "sweep on a directory of aligned airways")):
        p = sub.add_parser(name, help=helptext)
        if name == "evaluate":
            p.add_argument("airway_dir")
        else:
            p.add_argument("--airways", type=_positive_int, default=14)
            p.add_argument("--length", type=_positive_int, default=120)
            p.add_argument("--sigma", type=float, default=0.1)
            p.add_argument("--nu", type=float, default=10.0)
            p.add_argument("--data-seed", type=int, default=0)
        p.add_argument("--alphas", type=_float_list, default=list(ALPHAS_MM))
        p.add_argument("--magnitudes", type=_float_list, default=list(MAGNITUDES))
        p.add_argument("--detectors", type=_detectors,
                       default=["rjmh", "threshold", "penalized_cost"])
        p.add_argument("--workers", type=int, default=1, help="processes (0 = all CPUs)")
        p.add_argument("--raw", help="also write every displacement as JSON")
        _add_sampler_flags(p)
        _common(p)

    p = sub.add_parser("volume", help="percentage volume change report")
    p.add_argument("aligned")
    p.add_argument("--t", dest="t_mm", type=float, required=True, help="dilatation point (mm)")
    p.add_argument("--name", help="airway label (default: input file stem)")
    _common(p)
    return parser


def _sampler_config(args) -> SamplerConfig:
    try:
        return SamplerConfig(
            iterations=args.iterations,
            burn_in_fraction=args.burn_in,
            thin=args.thin,
            k_max=args.kmax,
            epsilon=args.epsilon,
            jump_epsilon=args.jump_epsilon,
            lam=args.lam,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- commands ------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def cmd_align(args) -> tuple[str, dict]:
    b = resample_to_1mm(read_area_csv(args.baseline))
    f = resample_to_1mm(read_area_csv(args.followup))
    pair = align_pair(b, f)
    rec = pair_to_record(pair)
    rec["interpolation"] = [b.meta["interpolation"], f.meta["interpolation"]]
    return _dumps(rec), {"inputs": [args.baseline, args.followup]}


def cmd_detect(args) -> tuple[str, dict]:
    series = series_from_record(load_record(args.aligned))
    y, x0 = series.y, series.x0
    method = METHOD_ALIASES[args.method]
    out: dict = {"method": method, "n": series.n, "x0": x0}
    meta: dict = {"inputs": [args.aligned]}
    if method == "rjmh":
        config = _sampler_config(args)
        trace = run_chain(y, config=config)
        hist = pooled_histogram(trace, x0=x0)
        out["diagnostics"] = trace.diagnostics()
        try:
            call = call_dilatation_point(hist)
        except NoChangepointError:
            out.update(status="no_call", point_mm=None, peaks=[], discarded=None,
                       histogram=hist.mass.tolist())
        else:
            out.update(status="call", **call.to_dict())
        meta["config"] = out["diagnostics"]["config"]
        if args.trace:
            with open(args.trace, "w", encoding="utf-8") as fh:
                trace.write_jsonl(fh)
    else:
        fn = threshold_detect if method == "threshold" else penalized_cost_detect
        try:
            call = fn(y)
        except NoCallError:
            out.update(status="no_call", point_mm=None)
        else:
            d = call.to_dict()
            d["point_mm"] = x0 + d["point_mm"]
            d.pop("method")
            out.update(status="call", **d)
    return _dumps(out), meta


def _sweep(args, airways, names, inputs) -> tuple[str, dict]:
    config = _sampler_config(args)
    if any(not m > 0 for m in args.magnitudes):
        raise UsageError("magnitudes must be positive")
    for a in args.alphas:
        for y in airways:
            if not 0 < a < y.size - 1:
                raise UsageError(f"alpha {a:g} mm outside a {y.size}-sample airway")
    cells = run_sweep(
        airways,
        detectors=args.detectors,
        config=config,
        alphas=args.alphas,
        magnitudes=args.magnitudes,
        seed=args.seed,
        workers=None if args.workers == 0 else args.workers,
    )
    buf = io.StringIO()
    write_heatmap_csv(cells, buf)
    if args.raw:
        raw = {
            "airways": names,
            "cells": [
                {"alpha_mm": c.alpha, "magnitude": c.magnitude, "detector": c.detector,
                 "displacements_mm": c.displacements}
                for c in cells
            ],
        }
        with open(args.raw, "w", encoding="utf-8") as fh:
            fh.write(_dumps(raw))
    meta = {
        "inputs": inputs,
        "config": {
            **config.__dict__,
            "alphas_mm": args.alphas,
            "magnitudes": args.magnitudes,
            "detectors": args.detectors,
        },
    }
    return buf.getvalue(), meta


def cmd_simulate(args) -> tuple[str, dict]:
    airways = synthetic_airways(args.airways, seed=args.data_seed, n=args.length,
                                sigma=args.sigma, nu=args.nu)
    names = [f"synthetic_{i:02d}" for i in range(len(airways))]
    text, meta = _sweep(args, airways, names, [])
    meta["config"].update(airways=args.airways, length=args.length, sigma=args.sigma,
                          nu=args.nu, data_seed=args.data_seed)
    return text, meta


def cmd_evaluate(args) -> tuple[str, dict]:
    d = Path(args.airway_dir)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    files = sorted(d.glob("*.json"))
    if not files:
        raise UsageError(f"no *.json airway files in {d}")
    airways = [series_from_record(load_record(f)).y for f in files]
    return _sweep(args, airways, [f.stem for f in files], [str(f) for f in files])


def cmd_volume(args) -> tuple[str, dict]:
    pair = pair_from_record(load_record(args.aligned))
    report = volume_report(pair, args.t_mm)
    buf = io.StringIO()
    write_report_csv([(args.name or Path(args.aligned).stem, report)], buf)
    return buf.getvalue(), {"inputs": [args.aligned], "config": {"t_mm": args.t_mm}}


COMMANDS = {
    "align": cmd_align,
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "volume": cmd_volume,
}


def _write_manifest(path, argv, args, meta, started) -> None:
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "inputs": meta.get("inputs", []),
        "config": meta.get("config", {}),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "output": args.output,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=1, default=list) + "\n")


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    try:
        text, meta = COMMANDS[args.command](args)
    except InvalidStateError as exc:
        return _fail(EXIT_INTERNAL, type(exc).__name__, str(exc))
    # SeriesError and VolumeError are ValueErrors
    except (UsageError, ValueError, OSError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))

    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.manifest:
        _write_manifest(args.manifest, argv, args, meta, started)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
