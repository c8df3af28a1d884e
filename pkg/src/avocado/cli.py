"""Command-line entry point: ``avocado <command> ...``.

Exit codes: 0 success (including flagged non-convergence), 1 usage error,
2 data or parse error, 3 numerical failure.  Errors go to standard error
prefixed with ``avocado: error:``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io
from .errors import AvocadoError, NumericalError
from .fields import Grid, ScalarField, compose_warp, interior, jacobian_determinant
from .metrics import build_report, perturbation_study
from .phantoms import blob_case_3d, divfree_warp_3d, ellipse_pair
from .pipeline import avocado, warp_segmentation

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PREFIX = "avocado: error:"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sigmas(text):
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(v < 0 or not np.isfinite(v) for v in values):
        raise argparse.ArgumentTypeError("sigmas must be non-negative finite numbers")
    return values


def build_parser():
    p = _Parser(prog="avocado", description="Volume-conserving landmark and intensity registration.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("register", help="register a source image onto a target")
    r.add_argument("--target", required=True)
    r.add_argument("--source", required=True)
    r.add_argument("--landmarks", required=True, help="id,frame,x,y[,z] CSV")
    r.add_argument("--config", help="JSON run configuration")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--validation", help="held-out landmarks for TRE")
    r.add_argument("--source-mask", help="binary source mask to warp and measure")
    r.add_argument("--no-figures", action="store_true")

    w = sub.add_parser("warp", help="pull an image back through a map")
    w.add_argument("--image", required=True)
    w.add_argument("--map", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--binary", action="store_true", help="treat the image as a mask and re-threshold")
    w.add_argument("--threshold", type=float, default=0.5)

    j = sub.add_parser("jacobian", help="Jacobian determinant of a map")
    j.add_argument("--map", required=True)
    j.add_argument("--out", required=True)

    m = sub.add_parser("metrics", help="TRE, volume change and overlap of a map")
    m.add_argument("--map", required=True)
    m.add_argument("--landmarks", help="validation landmarks")
    m.add_argument("--mask-before")
    m.add_argument("--mask-after")
    m.add_argument("--dice", nargs=2, metavar=("X", "Y"))
    m.add_argument("--out", help="also write the report to this file")

    ph = sub.add_parser("phantom", help="write a synthetic case")
    kinds = ph.add_subparsers(dest="kind", parser_class=_Parser)
    kinds.required = True
    e = kinds.add_parser("ellipse")
    e.add_argument("--size", type=int, default=256)
    e.add_argument("--area-src", type=float, default=1888.0)
    e.add_argument("--area-tgt", type=float, default=1264.0)
    e.add_argument("--edge-sigma", type=float, default=2.0)
    e.add_argument("--landmarks", type=int, default=6)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    b = kinds.add_parser("blob3d")
    b.add_argument("--size", type=int, default=64)
    b.add_argument("--blobs", type=int, default=40)
    b.add_argument("--max-disp", type=float, default=5.0)
    b.add_argument("--modes", type=int, default=2)
    b.add_argument("--landmarks", type=int, default=10)
    b.add_argument("--validation", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)

    s = sub.add_parser("perturb-study", help="TRE as landmark noise grows")
    s.add_argument("--case", required=True, help="directory written by 'avocado phantom'")
    s.add_argument("--sigmas", type=_sigmas, default=[0.0, 0.5, 1.0, 2.0, 3.0, 5.0])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--config", help="JSON run configuration")
    s.add_argument("--out", required=True, help="curve CSV")
    s.add_argument("--no-figures", action="store_true")
    return p


# ---------------------------------------------------------------------------

def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _report_entries(result, validation=None):
    d = {}
    for stage, trace in result.stage_traces.items():
        d[f"{stage}.converged"] = trace.converged
        d[f"{stage}.reason"] = trace.reason
        d[f"{stage}.iterations"] = trace.iterations
        d[f"{stage}.rejected"] = trace.rejected
        d[f"{stage}.corrected"] = trace.corrected
        d[f"{stage}.energy_initial"] = trace.energies[0]
        d[f"{stage}.energy_final"] = trace.final_energy
        d[f"{stage}.energies"] = trace.energies
        d[f"{stage}.max_divergence"] = max(trace.max_divergence) if trace.max_divergence else 0.0
    d["converged"] = all(result.converged.values()) if result.converged else True
    d["rigid.rotation"] = result.rigid.rotation.ravel().tolist()
    d["rigid.translation"] = result.rigid.translation.tolist()
    return d


def _metric_entries(report):
    d = {}
    for key, value in report.as_dict().items():
        d[key] = value
    return d


def cmd_register(args):
    cfg = io.read_config(args.config) if args.config else io.RunConfig()
    out = args.out or cfg.out
    if not out:
        raise UsageError("an output directory is required (--out or 'out' in the config)")
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    params = cfg.flow_params(base)
    target = io.read_volume(args.target)
    source = io.read_volume(args.source)
    landmarks = io.read_landmarks(args.landmarks)
    validation = io.read_landmarks(args.validation) if args.validation else None
    mask = io.read_volume(args.source_mask) if args.source_mask else None
    result = avocado(target, source, landmarks, params, skip_rigid=cfg.skip_rigid,
                     skip_landmark=cfg.skip_landmark, skip_intensity=cfg.skip_intensity)
    if not np.all(np.isfinite(result.map.mapped)):
        raise NumericalError("registration produced a non-finite map")
    _mkdir(out)
    warped = result.warped(source)
    io.write_vector_field(result.map, os.path.join(out, "map.mhd"))
    io.write_volume(ScalarField(warped.grid, warped.values), os.path.join(out, "warped.mhd"))
    warped_mask = None
    if mask is not None:
        warped_mask = warp_segmentation(mask, result.map)
        io.write_volume(warped_mask, os.path.join(out, "warped_mask.mhd"))
    report = build_report(result.map, validation, mask, warped_mask)
    entries = _report_entries(result)
    entries.update(_metric_entries(report))
    io.write_report(entries, os.path.join(out, "report.txt"))
    io.write_config(cfg, os.path.join(out, "config.json"))
    with open(os.path.join(out, "energies.csv"), "w", encoding="utf-8") as fh:
        fh.write("stage,step,energy\n")
        for stage, trace in result.stage_traces.items():
            for k, e in enumerate(trace.energies):
                fh.write(f"{stage},{k},{e!r}\n")
    if not args.no_figures:
        from .plotting import energy_figure, registration_figure
        registration_figure(target, source, warped, jacobian_determinant(result.map),
                            os.path.join(out, "registration.png"))
        if result.stage_traces:
            energy_figure(result.stage_traces, os.path.join(out, "energies.png"))
    print(f"converged = {io._fmt(entries['converged'])}")
    print(f"jacobian_min = {report.jacobian_min!r}")
    print(f"jacobian_max = {report.jacobian_max!r}")
    if mask is not None:
        print(f"volume_change_pct = {report.volume_change_pct!r}")
    if validation is not None:
        print(f"tre_mean = {report.tre_mean!r}")
    return EXIT_OK


def cmd_warp(args):
    image = io.read_volume(args.image)
    phi = io.read_map(args.map)
    if args.binary:
        out = warp_segmentation(image, phi, args.threshold)
    else:
        out = compose_warp(image, phi)
    io.write_volume(out, args.out)
    return EXIT_OK


def cmd_jacobian(args):
    phi = io.read_map(args.map)
    if not np.all(np.isfinite(phi.mapped)):
        raise NumericalError("map contains non-finite displacements")
    det = jacobian_determinant(phi)
    if not np.all(np.isfinite(det.values)):
        raise NumericalError("Jacobian determinant is not finite")
    io.write_volume(det, args.out)
    core = interior(det.values, phi.grid.ndims)
    print(f"min = {float(core.min())!r}")
    print(f"mean = {float(core.mean())!r}")
    print(f"max = {float(core.max())!r}")
    if core.min() <= 0:
        print("warning: map folds (non-positive Jacobian determinant)", file=sys.stderr)
    return EXIT_OK


def cmd_metrics(args):
    phi = io.read_map(args.map)
    validation = io.read_landmarks(args.landmarks) if args.landmarks else None
    if (args.mask_before is None) != (args.mask_after is None):
        raise UsageError("--mask-before and --mask-after must be given together")
    before = io.read_volume(args.mask_before) if args.mask_before else None
    after = io.read_volume(args.mask_after) if args.mask_after else None
    pair = (io.read_volume(args.dice[0]), io.read_volume(args.dice[1])) if args.dice else None
    report = build_report(phi, validation, before, after, pair)
    entries = _metric_entries(report)
    for key, value in entries.items():
        print(f"{key} = {io._fmt(value)}")
    if args.out:
        io.write_report(entries, args.out)
    return EXIT_OK


def _write_case(case, out, meta):
    _mkdir(out)
    io.write_volume(case.source, os.path.join(out, "source.mhd"))
    io.write_volume(case.target, os.path.join(out, "target.mhd"))
    io.write_volume(case.source_mask, os.path.join(out, "source_mask.mhd"))
    io.write_volume(case.target_mask, os.path.join(out, "target_mask.mhd"))
    io.write_landmarks(case.init_landmarks, os.path.join(out, "landmarks.csv"))
    io.write_landmarks(case.validation_landmarks, os.path.join(out, "validation.csv"))
    if case.ground_truth is not None:
        io.write_vector_field(case.ground_truth, os.path.join(out, "ground_truth_map.mhd"))
    with open(os.path.join(out, "case.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_phantom(args):
    if args.kind == "ellipse":
        case = ellipse_pair(Grid((args.size, args.size)), args.area_src, args.area_tgt,
                            args.edge_sigma, args.landmarks, args.seed)
    else:
        grid = Grid((args.size,) * 3)
        warp = divfree_warp_3d(grid, modes=args.modes, max_disp=args.max_disp, seed=args.seed)
        case = blob_case_3d(grid, n_blobs=args.blobs, warp=warp, n_landmarks=args.landmarks,
                            n_validation=args.validation, seed=args.seed)
    meta = {k: v for k, v in vars(args).items() if k not in ("command", "out")}
    _write_case(case, args.out, meta)
    print(f"wrote {args.kind} case to {args.out}")
    return EXIT_OK


def cmd_perturb(args):
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")
    cfg = io.read_config(args.config) if args.config else io.RunConfig()
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    case = args.case
    target = io.read_volume(os.path.join(case, "target.mhd"))
    source = io.read_volume(os.path.join(case, "source.mhd"))
    landmarks = io.read_landmarks(os.path.join(case, "landmarks.csv"))
    validation = io.read_landmarks(os.path.join(case, "validation.csv"))
    curve = perturbation_study(target, source, landmarks, validation, args.sigmas, args.seed,
                               params=cfg.flow_params(base), repeats=args.repeats,
                               skip_rigid=cfg.skip_rigid, skip_landmark=cfg.skip_landmark,
                               skip_intensity=cfg.skip_intensity)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    _mkdir(out_dir)
    io.write_curve(curve, args.out)
    sidecar = {
        "case": os.path.abspath(case),
        "seed": args.seed,
        "sigmas": args.sigmas,
        "repeats": args.repeats,
        "rng": "numpy default_rng([seed, sigma_index, repeat]) (PCG64)",
        "noise": "independent zero-mean normal per source landmark coordinate",
    }
    for p in curve:
        sidecar[f"sigma_{p.sigma!r}.errors"] = p.errors
    io.write_report(sidecar, os.path.splitext(args.out)[0] + ".report.txt")
    if not args.no_figures:
        from .plotting import curve_figure
        curve_figure(curve, os.path.splitext(args.out)[0] + ".png")
    for p in curve:
        print(f"sigma={p.sigma!r} mean_tre={p.mean_tre!r} runs={p.runs} failures={p.failures}")
    return EXIT_OK


COMMANDS = {"register": cmd_register, "warp": cmd_warp, "jacobian": cmd_jacobian,
            "metrics": cmd_metrics, "phantom": cmd_phantom, "perturb-study": cmd_perturb}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{PREFIX} {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"{PREFIX} {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AvocadoError, OSError) as exc:
        print(f"{PREFIX} {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
