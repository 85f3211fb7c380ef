"""Command-line driver: ``sordor <subcommand> ...``."""
import argparse
import hashlib
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .chirp import ChirpReference, chirp_residual
from .config import RunConfig
from .ensemble import build_ensemble
from .errors import SordorError
from .grape import (
    OptimizerSettings,
    convergence_tolerance,
    fidelity_and_gradient,
    initial_waveform,
    optimize,
    problem,
)
from .morph import Checkpoint, MorphGrid, RecipeRunner
from .simulate import INITIAL_STATES, bloch_trajectory, fidelity_profile, named_sequence, sequence_fidelity

logger = logging.getLogger("sordor")

EXIT_USAGE = 2
EXIT_NUMERICAL = 3

_ANGLE = re.compile(r"^\s*(?P<num>[-+]?\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(?P<den>\d+\.?\d*))?\s*$")


def parse_angle(text):
    """Angle in rad from ``1.5708``, ``pi``, ``pi/2``, ``2pi/3`` or ``90deg``."""
    text = str(text).strip().lower()
    if text.endswith("deg"):
        return math.radians(float(text[:-3]))
    m = _ANGLE.match(text)
    if m:
        num = m.group("num")
        factor = float(num) if num not in ("", "+", "-") else (-1.0 if num == "-" else 1.0)
        den = float(m.group("den")) if m.group("den") else 1.0
        return factor * math.pi / den
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _inputs(paths):
    return {str(p): _sha256(p) for p in paths}


def _manifest_path(out):
    out = Path(out)
    return out / "manifest.json" if out.suffix == "" else out.with_name(out.name + ".manifest.json")


# subcommands ------------------------------------------------------------


def cmd_optimize(args, argv):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ensemble, targets = problem(args.b, args.Q, args.beta, args.bandwidth, args.members)
    if args.init:
        start = sio.read_waveform(args.init)
        start.metadata.update(b=args.b, Q=args.Q, beta=args.beta, bandwidth=args.bandwidth)
    else:
        start = initial_waveform(args.b, args.Q, args.beta, args.bandwidth, args.seed, args.perturbation)
    settings = OptimizerSettings(max_iterations=args.max_iter, tolerance=args.tolerance)
    res = optimize(start, ensemble, targets, settings)
    if not np.isfinite(res.fidelity):
        logger.error("optimisation produced a non-finite fidelity")
        sio.write_manifest(_manifest_path(out), "optimize", argv, vars_clean(args),
                           seeds={"seed": args.seed}, notes=["partial: numerical failure"])
        return EXIT_NUMERICAL
    sio.write_waveform(out / "waveform.json", res.waveform)
    _, _, members = fidelity_and_gradient(res.waveform, ensemble, targets)
    report = {
        "fidelity": res.fidelity,
        "gradient_norm": res.gradient_norm,
        "tolerance": args.tolerance if args.tolerance is not None else convergence_tolerance(args.b),
        "status": res.status,
        "iterations": res.iterations,
        "gradient_calls": res.gradient_calls,
        "member_offsets_hz": list(ensemble.offsets_hz),
        "member_fidelities": [float(f) for f in members],
        "fidelity_trace": res.fidelity_trace,
        "gradient_norm_trace": res.gradient_norm_trace,
    }
    sio.atomic_write_text(out / "report.json", sio.dumps_json(report))
    inputs = _inputs([args.init]) if args.init else {}
    sio.write_manifest(_manifest_path(out), "optimize", argv, vars_clean(args),
                       seeds={"seed": args.seed}, inputs=inputs,
                       outputs=["waveform.json", "report.json"])
    print(f"F = {res.fidelity:.10f}  |grad F| = {res.gradient_norm:.3e}  "
          f"status = {res.status}  gradient calls = {res.gradient_calls}")
    return 0


def _morph_config(args):
    data = {}
    if args.config:
        data.update(json.loads(Path(args.config).read_text()))
    flags = {
        "beta": args.beta, "bandwidth": args.bandwidth, "b_max": args.b_max,
        "dq": args.dq, "db": args.db, "q_max": args.q_max, "members": args.members,
        "max_iterations": args.max_iter, "tolerance": args.tolerance, "seed": args.seed,
        "perturbation": args.perturbation, "smoothing_count": args.smoothing_count,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.smoothing_all_b:
        data["smoothing_all_b"] = True
    data["output_dir"] = str(args.checkpoint)
    return RunConfig.from_dict(data)


def cmd_morph(args, argv):
    config = _morph_config(args)
    runner = RecipeRunner(config, args.checkpoint, stop_after=args.stop_after, workers=args.workers)
    grid = runner.run()
    sio.write_manifest(Path(args.checkpoint) / "run-manifest.json", "morph", argv,
                       config.to_dict(), seeds={"seed": config.seed},
                       inputs=_inputs([args.config]) if args.config else {},
                       outputs=["manifest.json", "grid/"])
    state = "finished" if runner.finished else "interrupted (resume by re-running)"
    print(f"morph {state}: {len(grid.cells)} cells populated")
    for stage, calls in runner.stage_gradient_calls.items():
        print(f"  stage {stage}: {calls} gradient calls")
    return 0


def _load_pulses(spec):
    pulses = [sio.read_waveform(p) for p in spec.split(",") if p]
    p90 = p180 = None
    for p in pulses:
        beta = p.metadata["beta"]
        if math.isclose(beta, math.pi / 2, rel_tol=1e-9):
            p90 = p
        elif math.isclose(beta, math.pi, rel_tol=1e-9):
            p180 = p
        else:
            raise SordorError(f"pulse with beta={beta} is neither pi/2 nor pi")
    return pulses, p90, p180


def _ensemble_for(pulses, members, bandwidth):
    bw = bandwidth or pulses[0].metadata["bandwidth"]
    b = pulses[0].metadata["b"]
    return build_ensemble(b, bw, members)


def cmd_simulate(args, argv):
    pulses, p90, p180 = _load_pulses(args.pulses)
    ensemble = _ensemble_for(pulses, args.members, args.bandwidth)
    seq = named_sequence(args.sequence, p90, p180, ideal=args.ideal)
    header = ["offset_hz"]
    columns = []
    for name, state in INITIAL_STATES.items():
        res = bloch_trajectory(seq, state, ensemble)
        columns.append(res.states)
        header += [f"{c}_from_{name}0" for c in "xyz"]
        for w in res.warnings:
            print(f"warning: {w}", file=sys.stderr)
    table = np.concatenate([ensemble.offsets_hz[:, None]] + columns, axis=1)
    sio.write_csv(args.out, header, table.tolist())
    report = sequence_fidelity(named_sequence(args.sequence, p90, p180),
                               named_sequence(args.sequence, p90, p180, ideal=True), ensemble)
    sio.write_manifest(_manifest_path(args.out), "simulate", argv, vars_clean(args),
                       inputs=_inputs(args.pulses.split(",")), outputs=[str(args.out)],
                       notes=[f"sequence fidelity {report.total!r}"])
    print(f"{args.sequence}: sequence fidelity F = {report.total:.8f} over {ensemble.member_count} offsets")
    return 0


def cmd_profile(args, argv):
    pulse = sio.read_waveform(args.file)
    ensemble = _ensemble_for([pulse], args.members, args.bandwidth)
    report = fidelity_profile(pulse, ensemble)
    rows = zip(ensemble.offsets_hz.tolist(), report.members.tolist())
    sio.write_csv(args.out, ["offset_hz", "fidelity"], rows)
    sio.write_manifest(_manifest_path(args.out), "profile", argv, vars_clean(args),
                       inputs=_inputs([args.file]), outputs=[str(args.out)])
    print(f"mean fidelity {report.total:.8f}, minimum {report.members.min():.8f}")
    return 0


def cmd_export(args, argv):
    pulse = sio.read_waveform(args.file)
    out = args.out or str(Path(args.file).with_suffix(".shape"))
    sio.write_shape(out, pulse, title=args.title or Path(args.file).stem)
    sio.write_manifest(_manifest_path(out), "export", argv, vars_clean(args),
                       inputs=_inputs([args.file]), outputs=[out])
    print(out)
    return 0


def cmd_grid_report(args, argv):
    root = Path(args.checkpoint)
    doc = json.loads((root / "manifest.json").read_text())
    config = RunConfig.from_dict(doc["config"])
    grid = MorphGrid.from_config(config)
    Checkpoint(root, config).load(grid)
    header = ["Q", "b", "fidelity", "infidelity", "gradient_norm", "gradient_calls", "stage", "status"]
    rows = []
    for (iq, ib), cell in sorted(grid.cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        rows.append([grid.q_values[iq], grid.b_values[ib], cell.fidelity, 1.0 - cell.fidelity,
                     cell.gradient_norm, cell.gradient_calls, cell.stage, cell.status])
    sio.write_csv(args.out, header, rows)
    if args.best:
        best = [(b, q, f, 1.0 - f) for b, q, f in grid.best_per_b()]
        sio.write_csv(args.best, ["b", "Q", "fidelity", "infidelity"], best)
    sio.write_manifest(_manifest_path(args.out), "grid-report", argv, vars_clean(args),
                       inputs=_inputs([root / "manifest.json"]), outputs=[str(args.out)])
    print(f"{len(rows)} cells written to {args.out}")
    return 0


def cmd_chirp_compare(args, argv):
    pulse = sio.read_waveform(args.file)
    t, residual, reference = chirp_residual(pulse, args.sweep)
    phases = np.unwrap(pulse.phases)
    centre_us = (t - pulse.duration / 2) * 1e6
    rows = zip(centre_us.tolist(), phases.tolist(), reference.tolist(), residual.tolist())
    sio.write_csv(args.out, ["time_from_centre_us", "phase_rad", "reference_rad", "residual_rad"], rows)
    ref = ChirpReference.for_pulse(pulse, args.sweep)
    sio.write_manifest(_manifest_path(args.out), "chirp-compare", argv, vars_clean(args),
                       inputs=_inputs([args.file]), outputs=[str(args.out)],
                       notes=[f"reference sweep {ref.sweep!r} Hz = (A/2pi)^2 T unless --sweep given"])
    print(f"reference sweep {ref.sweep:.1f} Hz; residual rms {np.sqrt(np.mean(residual**2)):.4f} rad")
    return 0


def cmd_rerun(args, argv):
    doc = json.loads(Path(args.manifest).read_text())
    replay = doc["argv"]
    print("rerunning: sordor " + " ".join(replay))
    return main(replay)


def vars_clean(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


# parser -----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="sordor", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def problem_flags(p, with_cell=True):
        if with_cell:
            p.add_argument("--b", type=float, required=True, help="bandwidth factor")
            p.add_argument("--Q", type=float, default=0.0, help="quadratic dispersion coefficient")
        p.add_argument("--beta", type=parse_angle, default=math.pi, help="rotation angle (pi, pi/2, ...)")
        p.add_argument("--bandwidth", type=float, default=40e3, help="bandwidth in Hz")
        p.add_argument("--members", type=int, default=None, help="ensemble size (default 1+ceil(10b))")

    p = sub.add_parser("optimize", help="optimise one (Q, b) cell")
    problem_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturbation", type=float, default=0.0)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--init", help="starting waveform JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("morph", help="run or resume the morphic recipe")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--beta", type=parse_angle)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--b-max", type=float)
    p.add_argument("--dq", type=float)
    p.add_argument("--db", type=float)
    p.add_argument("--q-max", type=float)
    p.add_argument("--members", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--perturbation", type=float)
    p.add_argument("--smoothing-count", type=int)
    p.add_argument("--smoothing-all-b", action="store_true")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--stop-after", type=int, default=None, help="stop after this many jobs")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_morph)

    p = sub.add_parser("simulate", help="Bloch simulation of a pulse sequence")
    p.add_argument("--sequence", default="perfect-echo")
    p.add_argument("--pulses", required=True, help="comma-separated waveform JSON files")
    p.add_argument("--members", type=int, default=451)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--ideal", action="store_true", help="simulate the ideal targets instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("profile", help="fidelity versus offset")
    p.add_argument("--file", required=True)
    p.add_argument("--members", type=int, default=451)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("export", help="write a spectrometer shape file")
    p.add_argument("--format", choices=["shape"], default="shape")
    p.add_argument("--file", required=True)
    p.add_argument("--title", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("grid-report", help="fidelity surface of a morph checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--best", default=None, help="also write the best fidelity per b")
    p.set_defaults(func=cmd_grid_report)

    p = sub.add_parser("chirp-compare", help="residual phase against a chirp")
    p.add_argument("--file", required=True)
    p.add_argument("--sweep", type=float, default=None, help="reference sweep in Hz")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_chirp_compare)

    p = sub.add_parser("rerun", help="regenerate outputs from a run manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (SordorError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"sordor {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"sordor {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
