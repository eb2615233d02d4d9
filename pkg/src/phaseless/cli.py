"""Command-line interface: ``phaseless <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import io as pkio
from .errors import ConfigError, FormatError, NumericalError
from .pipeline import PipelineConfig, compare_volumes, run_pipeline, simulate, true_beta

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
DEFAULT_OUTPUT = "phaseless_out"
log = logging.getLogger("phaseless")


def _config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig.from_dict({})
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if args.dump_csv:
        over["dump_csv"] = True
    if over:
        vals = cfg.to_dict()
        vals.update(over)
        cfg = PipelineConfig(vals)
    return cfg


def _outdir(args):
    return args.output or DEFAULT_OUTPUT


def _out(args, name):
    os.makedirs(_outdir(args), exist_ok=True)
    return os.path.join(_outdir(args), name)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_phantom(args):
    cfg = _config(args)
    beta = true_beta(cfg.phantom)
    cfg.phantom.save(_out(args, "phantom.json"))
    pkio.write_volume(_out(args, "beta_true.pkvol"), beta)
    if cfg["dump_csv"]:
        pkio.dump_volume_csv(_out(args, "beta_true.csv"), beta)
    _print({"beta_true": _out(args, "beta_true.pkvol"), "max_beta": float(beta.values.max())})


def cmd_simulate(args):
    from .geometry import chord_grid
    cfg = _config(args)
    ch = cfg["chords"]
    chords = chord_grid(cfg.ball, ch["n_z"], ch["n_alpha"], ch["n_s"])
    chords.save(_out(args, "chords.pkchord"))
    want_scan = (args.scan or cfg["write_scan"]) and cfg.use_sweeps()
    if args.scan and not cfg.use_sweeps():
        raise ConfigError("--scan needs sweeps; set sweep to 'always' or lower the chord count")
    scan = _out(args, "chords.pkscan") if want_scan else None
    table = simulate(cfg, chords, scan)
    table.save(_out(args, "observables.pkobs"))
    _print({"chords": len(chords), "observables": _out(args, "observables.pkobs"),
            "scan": scan, "line_of_sight": int(table.line_of_sight.sum())})


def cmd_extract(args):
    from .extract import ObservablesTable, extract_observables
    from .geometry import ChordSet
    cfg = _config(args)
    scan = pkio.read_scan(args.scan)
    chord_path = args.chords or os.path.join(os.path.dirname(args.scan) or ".", scan.chords)
    chords = ChordSet.load(chord_path)
    if len(chords) != scan.values.shape[0]:
        raise ConfigError(f"chord set has {len(chords)} rows, scan has {scan.values.shape[0]}")
    tol = args.tol if args.tol is not None else cfg["extraction"]["tol"]
    res = extract_observables(scan.values, scan.grid, chords.dist, tol,
                              cfg["extraction"]["fallback"])
    table = ObservablesTable(chords.z, chords.alpha, chords.s, chords.dist, res["A_hat"],
                             res["tau_hat"], res["line_of_sight"], res["quality"])
    table.save(_out(args, "observables.pkobs"))
    _print({"observables": _out(args, "observables.pkobs"), "rows": len(table)})


def _table(path):
    from .extract import ObservablesTable
    return ObservablesTable.load(path)


def cmd_recon_radon(args):
    from .radon import reconstruct_beta_radon
    cfg = _config(args)
    vol = reconstruct_beta_radon(_table(args.observables), cfg.ball,
                                 apodization=cfg["radon"]["apodization"], workers=cfg["threads"])
    pkio.write_volume(_out(args, "beta_radon.pkvol"), vol)
    if cfg["dump_csv"]:
        pkio.dump_volume_csv(_out(args, "beta_radon.csv"), vol)
    _print({"beta_radon": _out(args, "beta_radon.pkvol")})


def cmd_recon_abel(args):
    from .abelgeo import reconstruct_beta_abel, reconstruct_q_abel
    cfg = _config(args)
    ab = cfg["abel"]
    table = _table(args.observables)
    out = {}
    if args.q_only:
        q = reconstruct_q_abel(table, cfg.ball, N=ab["N"], M=ab["M"], method=ab["method"],
                               fill=ab["fill"], workers=cfg["threads"])
    else:
        beta, q = reconstruct_beta_abel(table, cfg.ball, N=ab["N"], M=ab["M"],
                                        method=ab["method"], fill=ab["fill"],
                                        rtol=cfg["poisson"]["rtol"], workers=cfg["threads"])
        pkio.write_volume(_out(args, "beta_abel.pkvol"), beta)
        out["beta_abel"] = _out(args, "beta_abel.pkvol")
        if cfg["dump_csv"]:
            pkio.dump_volume_csv(_out(args, "beta_abel.csv"), beta)
    pkio.write_volume(_out(args, "q_abel.pkvol"), q)
    out["q_abel"] = _out(args, "q_abel.pkvol")
    _print(out)


def cmd_poisson(args):
    from .elliptic import poisson_solve_ball, residual_check
    cfg = _config(args)
    q = pkio.read_volume(args.q)
    if not hasattr(q, "spacing"):
        raise ConfigError("poisson needs a volume file, not a slice")
    beta = poisson_solve_ball(q, cfg.ball, rtol=cfg["poisson"]["rtol"])
    pkio.write_volume(_out(args, "beta.pkvol"), beta)
    _print({"beta": _out(args, "beta.pkvol"),
            "iterations": len(beta.meta.get("residual_history", [])),
            "residual": residual_check(q, beta, cfg.ball)})


def cmd_compare(args):
    a = pkio.read_volume(args.a)
    b = pkio.read_volume(args.b)
    if not (hasattr(a, "spacing") and hasattr(b, "spacing")):
        raise ConfigError("compare needs two volume files")
    m = compare_volumes(a, b, args.radius, resample=args.resample)
    summary = {"rel_l2": m["rel_l2"], "linf": m["linf"]}
    if args.output:
        with open(_out(args, "compare.json"), "w") as fh:
            json.dump(m, fh, indent=2)
        if args.dump_csv:
            with open(_out(args, "compare.csv"), "w") as fh:
                fh.write("z,rel_l2\n")
                fh.writelines(f"{z!r},{e!r}\n" for z, e in zip(m["z"], m["per_slice"]))
    _print(summary)


def cmd_pipeline(args):
    cfg = _config(args)
    report = run_pipeline(cfg, _outdir(args))
    summary = {name: {"rel_l2": m["rel_l2"], "linf": m["linf"]}
               for name, m in report.metrics.items()}
    summary["timings"] = report.timings
    summary["report"] = report.outputs.get("report")
    _print(summary)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--output", metavar="DIR",
                        help=f"output directory (default: {DEFAULT_OUTPUT}; compare writes "
                             f"files only when given)")
    common.add_argument("--seed", type=int, help="noise seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads for slice loops")
    common.add_argument("--dump-csv", action="store_true", help="also write plot-ready CSV")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="phaseless",
                                description="Phaseless inverse scattering in a ball.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("phantom", parents=[common], help="write the true beta volume"
                   ).set_defaults(func=cmd_phantom)
    s = sub.add_parser("simulate", parents=[common], help="chords and observables")
    s.add_argument("--scan", action="store_true", help="also write the F1 sweeps (.pkscan)")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("extract", parents=[common], help="observables from a .pkscan file")
    s.add_argument("scan")
    s.add_argument("--chords", help="chord-set file (default: named in the scan header)")
    s.add_argument("--tol", type=float)
    s.set_defaults(func=cmd_extract)
    s = sub.add_parser("recon-radon", parents=[common], help="beta by filtered backprojection")
    s.add_argument("observables")
    s.set_defaults(func=cmd_recon_radon)
    s = sub.add_parser("recon-abel", parents=[common], help="q and beta by the Abel path")
    s.add_argument("observables")
    s.add_argument("--q-only", action="store_true", help="skip the Poisson solve")
    s.set_defaults(func=cmd_recon_abel)
    s = sub.add_parser("poisson", parents=[common], help="solve lap(beta) = q")
    s.add_argument("q")
    s.set_defaults(func=cmd_poisson)
    s = sub.add_parser("compare", parents=[common], help="error metrics of volume A vs B")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--radius", type=float, help="mask radius (default: whole grid)")
    s.add_argument("--resample", action="store_true", help="resample B onto A's grid")
    s.set_defaults(func=cmd_compare)
    sub.add_parser("pipeline", parents=[common], help="run every stage"
                   ).set_defaults(func=cmd_pipeline)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FormatError as exc:
        print(f"phaseless: file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"phaseless: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"phaseless: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"phaseless: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
