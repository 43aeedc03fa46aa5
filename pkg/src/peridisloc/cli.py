"""Command-line interface: ``peridisloc run|study-delta|study-force|probe``."""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .harness import config as cfgmod
from .harness import output, runner
from .solver import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
THREADS_ENV = "PERIDISLOC_NUM_THREADS"

log = logging.getLogger("peridisloc")


def set_threads(requested=None) -> int:
    """Apply ``--threads`` or the environment default to the numba pool."""
    import numba

    value = requested
    if value is None and os.environ.get(THREADS_ENV):
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError:
            raise cfgmod.ConfigError(f"{THREADS_ENV}: expected an integer") from None
    if value is None:
        return numba.get_num_threads()
    if value < 1:
        raise cfgmod.ConfigError("--threads must be at least 1")
    limit = numba.config.NUMBA_NUM_THREADS
    if value > limit:
        log.warning("requested %d threads, only %d available", value, limit)
        value = limit
    numba.set_num_threads(value)
    return value


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peridisloc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV})")
        sp.add_argument("--format", choices=("csv", "vtk", "both"), help="field output format")
        sp.add_argument("--log-csv", help="write the solver progress log to this CSV file")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="single relaxation run"))
    common(sub.add_parser("study-delta", help="horizon convergence study"))
    common(sub.add_parser("study-force", help="driving-force sweep"))
    pr = sub.add_parser("probe", help="sample fields along a line segment")
    common(pr, config_required=False)
    pr.add_argument("--fields", help="fields CSV written by a previous run")
    pr.add_argument("--start", type=_point, help="segment start x,y[,z] (use --start=-1e-8,0 for a leading minus)")
    pr.add_argument("--end", type=_point, help="segment end x,y[,z]")
    pr.add_argument("--points", type=int, help="number of sample points")
    return p


def _point(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _formats(arg):
    if arg is None:
        return None
    return ("csv", "vtk") if arg == "both" else (arg,)


def _load(args):
    cfg = cfgmod.load_config(args.config)
    fmt = _formats(args.format)
    if fmt:
        cfg = cfg.replace(output=dataclasses.replace(cfg.output, formats=fmt))
    out = Path(args.out or cfg.output.directory)
    return cfg, out


def _probe_from_csv(args):
    if not (args.fields and args.start and args.end):
        raise cfgmod.ConfigError("probe: need --config, or --fields with --start and --end")
    fields = output.read_fields_csv(args.fields)
    start = cfgmod._vec(args.start, "--start")
    end = cfgmod._vec(args.end, "--end")
    spacing = None
    if args.points is None:
        # nearest-neighbour distance of the stored nodes
        from scipy.spatial import cKDTree
        d, _ = cKDTree(fields.positions).query(fields.positions[:1], k=2)
        spacing = float(d[0, 1])
    idx, s = output.sample_line(fields.positions, start, end, args.points, spacing)
    sub = fields.subset(idx)
    rows = []
    for k in range(len(sub)):
        row = {"id": int(sub.ids[k]), "s": float(s[k])}
        row.update(zip(output.FIELD_COLUMNS[1:], map(float, sub.table()[k])))
        rows.append(row)
    out = Path(args.out or ".")
    output.ensure_writable(out)
    path = output.write_table(rows, out / "probe.csv", ["id", "s", *output.FIELD_COLUMNS[1:]])
    print(path)


def _dispatch(args):
    set_threads(args.threads)
    if args.command == "probe" and not args.config:
        _probe_from_csv(args)
        return
    cfg, out = _load(args)
    log_cm = open(args.log_csv, "w", newline="") if args.log_csv else contextlib.nullcontext()
    with log_cm as stream:
        if args.command in ("run", "probe"):
            if args.command == "probe" and args.start and args.end:
                probe = cfgmod.ProbeConfig("cli", cfgmod._vec(args.start, "--start"),
                                           cfgmod._vec(args.end, "--end"), args.points)
                cfg = cfg.replace(output=dataclasses.replace(
                    cfg.output, probes=cfg.output.probes + (probe,)))
            res = runner.run(cfg, out, log_stream=stream)
            r = res.report
            du = "n/a" if r["D_u"] is None else f"{100 * r['D_u']:.4f}%"
            print(f"{cfg.name}: N={cfg.geometry.nodes[0]} delta={cfg.horizon:.4g} "
                  f"iterations={r['iterations']} D_u={du} wall={r['wall_time']:.1f}s -> {out}")
        elif args.command == "study-delta":
            rows = runner.delta_convergence_study(cfg, out_dir=out)
            for row in rows:
                print(f"delta={row['delta']:.4g} M={row['M']:.3g} N={row['N']} D_u={100 * row['D_u']:.4f}%")
        elif args.command == "study-force":
            rows = runner.force_sweep_study(cfg, out_dir=out)
            for row in rows:
                print("separation={separation:.4g} NLPK={NLPK:.6g} LPK={LPK:.6g} EG={EG:.6g}".format(**row))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
