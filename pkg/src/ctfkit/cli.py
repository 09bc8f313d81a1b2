"""Command line entry point: ``ctfkit estimate`` and ``ctfkit synth``.

Exit codes for ``estimate``: 0 when every input was processed, 2 when some
inputs failed, 3 when none were processed.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import sys
from pathlib import Path

from .ctf_model import DefocusParams, MicroscopeParams
from .fit_correlation import SearchConfig
from .mrc import write_mrc
from .pipeline import PipelineConfig, run_pipeline
from .report import write_report
from .synth import SynthSpec, synth_movie

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_NONE = 3

log = logging.getLogger("ctfkit")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _optics(parser):
    parser.add_argument("--pixel-size", type=float, required=True, help="angstrom per pixel")
    parser.add_argument("--voltage", type=float, default=300.0, help="kV (default 300)")
    parser.add_argument("--cs", type=float, default=2.7, help="spherical aberration, mm (default 2.7)")
    parser.add_argument("--amplitude-contrast", type=float, default=0.1,
                        help="amplitude contrast fraction (default 0.1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="ctfkit", description="CTF estimation for micrographs and movies")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate defocus and astigmatism")
    est.add_argument("--input", nargs="+", required=True, help="MRC files or glob patterns")
    _optics(est)
    est.add_argument("--block-sizes", type=_int_list, default=(512, 1024))
    est.add_argument("--tapers", type=_int_list, default=None,
                     help="tapers per block size (default 4 for 512, 16 for 1024, else 4)")
    est.add_argument("--cutoff", type=float, default=3 / 8, help="background cutoff m/K")
    est.add_argument("--method", choices=("corr", "zeros", "auto"), default="corr")
    est.add_argument("--min-defocus", type=float, default=5000.0)
    est.add_argument("--max-defocus", type=float, default=50000.0)
    est.add_argument("--defocus-step", type=float, default=100.0)
    est.add_argument("--min-res", type=float, default=30.0, help="low-resolution limit, angstrom")
    est.add_argument("--max-res", type=float, default=5.0, help="high-resolution limit, angstrom")
    est.add_argument("--refine-on", choices=("subtracted", "projected"), default="subtracted",
                     help="spectrum used by the final refinement")
    est.add_argument("--movie", action="store_true", help="treat stacks as movies (average per-frame spectra)")
    est.add_argument("--drop-first-frame", action=argparse.BooleanOptionalAction, default=True,
                     help="discard the first movie frame (default on)")
    est.add_argument("--select-per-dataset", action="store_true",
                     help="pick one block size for the whole batch by mean correlation")
    est.add_argument("--out", default=".", help="output directory")
    est.add_argument("--format", choices=("json", "tsv"), default="json")
    est.add_argument("--diagnostics", action="store_true", help="write PNG montages")
    est.add_argument("--workers", type=int, default=1)
    est.add_argument("--no-timing", action="store_true", help="omit timings (byte-stable reports)")

    syn = sub.add_parser("synth", help="write a synthetic micrograph or movie with known CTF")
    syn.add_argument("--out", required=True, help="output MRC path; truth goes to <out>.json")
    _optics(syn)
    syn.add_argument("--df1", type=float, required=True, help="angstrom")
    syn.add_argument("--df2", type=float, default=None, help="angstrom (default df1)")
    syn.add_argument("--angle", type=float, default=0.0, help="astigmatism angle, degrees")
    syn.add_argument("--size", type=int, default=4096)
    syn.add_argument("--snr", type=float, default=1.0)
    syn.add_argument("--frames", type=int, default=1)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def _default_tapers(block_sizes):
    table = {512: 4, 1024: 16}
    return tuple(table.get(k, 4) for k in block_sizes)


def expand_inputs(patterns):
    paths = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        if matches:
            paths.extend(matches)
        else:
            paths.append(pattern)  # reported as a per-file error later
    return paths


def cmd_estimate(args):
    tapers = args.tapers if args.tapers is not None else _default_tapers(args.block_sizes)
    search = SearchConfig(df_min=args.min_defocus, df_max=args.max_defocus, df_step=args.defocus_step,
                          min_res=args.min_res, max_res=args.max_res, cutoff=args.cutoff)
    config = PipelineConfig(
        pixel_size=args.pixel_size, voltage=args.voltage, cs_mm=args.cs,
        amplitude_contrast=args.amplitude_contrast, block_sizes=args.block_sizes, tapers=tapers,
        cutoff=args.cutoff, search=search, method=args.method, movie=args.movie,
        drop_first_frame=args.drop_first_frame, select_per_dataset=args.select_per_dataset,
        refine_on=args.refine_on, diagnostics=args.diagnostics, out_dir=args.out,
        workers=args.workers, record_timing=not args.no_timing,
    )
    paths = expand_inputs(args.input)
    reports = run_pipeline(config, paths)
    if not reports:
        log.error("no inputs")
        return EXIT_NONE
    out = Path(args.out) / f"ctf_report.{args.format}"
    write_report(reports, out, args.format)
    failed = [r for r in reports if r.status != "ok"]
    for r in failed:
        log.error("%s: %s", r.file_id, r.error)
    log.info("wrote %s (%d ok, %d failed)", out, len(reports) - len(failed), len(failed))
    if len(failed) == len(reports):
        return EXIT_NONE
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_synth(args):
    mic = MicroscopeParams.from_settings(args.voltage, args.cs, args.amplitude_contrast, args.pixel_size)
    df2 = args.df1 if args.df2 is None else args.df2
    defocus = DefocusParams(args.df1, df2, math.radians(args.angle))
    spec = SynthSpec(mic=mic, defocus=defocus, size=args.size, snr=args.snr, seed=args.seed)
    frames = synth_movie(spec, args.frames)
    write_mrc(args.out, frames[0] if args.frames == 1 else frames, pixel_size=args.pixel_size)
    truth = {"schema_version": 1, "df1": defocus.df1, "df2": defocus.df2, "alpha_f": defocus.alpha_f,
             "pixel_size": args.pixel_size, "voltage": args.voltage, "cs_mm": args.cs,
             "amplitude_contrast": args.amplitude_contrast, "size": args.size, "snr": args.snr,
             "frames": args.frames, "seed": args.seed}
    Path(f"{args.out}.json").write_text(json.dumps(truth, indent=2) + "\n")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        return cmd_synth(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_NONE


if __name__ == "__main__":
    sys.exit(main())
