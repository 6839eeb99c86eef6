"""``aggrisk`` command line: gen, validate, run, metrics, bench.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 data/validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .bench import (
    EXPERIMENTS,
    Workload,
    bench_chunk_sweep,
    bench_layouts,
    bench_oversubscription,
    bench_precision,
    bench_scaling,
)
from .datagen import GenSpec, generate_portfolio, generate_yet
from .engine import DEFAULT_CHUNK_SIZE, Precision, RunConfig, run_analysis
from .io import (
    FormatError,
    format_loss,
    YetValidationError,
    load_workload,
    read_yet,
    read_ylt_csv,
    write_workload,
    write_yet,
    write_ylt_csv,
)
from .lookup import Layout
from .metrics import MetricError, exceedance_curve, rpl_report, var_tvar_report
from .model import MAX_ELTS_PER_LAYER, MAX_PROGRAMS, validate_yet

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4


class DataError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _list_of(conv: Callable) -> Callable[[str], list]:
    def parse(text: str) -> list:
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("expected a comma-separated list")
        try:
            return [conv(t) for t in items]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _add_workload_flags(p: argparse.ArgumentParser, trials: int) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--trials", type=_positive_int, default=trials)
    g.add_argument("--events-min", type=_positive_int, default=800)
    g.add_argument("--events-max", type=_positive_int, default=1500)
    g.add_argument("--catalog", type=_positive_int, default=1_000_000)
    g.add_argument("--programs", type=_positive_int, default=1)
    g.add_argument("--layers", type=_positive_int, default=1, help="layers per program")
    g.add_argument("--elts", type=_positive_int, default=16, help="ELTs per layer")
    g.add_argument("--elt-entries", type=_positive_int, default=10_000)
    g.add_argument("--loss-scale", type=float, default=100_000.0)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--threads-per-slot", type=_positive_int, default=1)
    p.add_argument("--chunk", type=_positive_int, default=DEFAULT_CHUNK_SIZE)
    p.add_argument("--precision", choices=[p.value for p in Precision], default="wide")
    p.add_argument("--layout", choices=[k.value for k in Layout], default="direct")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen,validate,run,metrics,bench}")

    p = sub.add_parser("gen", help="generate a synthetic YET, ELTs and portfolio config")
    _add_workload_flags(p, trials=100_000)
    p.add_argument("--out-dir", required=True, type=Path)

    p = sub.add_parser("validate", help="check a YET file (and optionally a portfolio config)")
    p.add_argument("--yet", required=True, type=Path)
    p.add_argument("--portfolio", type=Path)

    p = sub.add_parser("run", help="run the analysis and write YLT CSVs")
    p.add_argument("--yet", required=True, type=Path)
    p.add_argument("--portfolio", required=True, type=Path)
    _add_run_flags(p)
    p.add_argument("--checked", action="store_true", help="assert term bounds inside the kernel")
    p.add_argument("--out", required=True, type=Path, help="output directory for YLT CSVs")

    p = sub.add_parser("metrics", help="EP curve, return period losses, VaR/TVaR from a YLT CSV")
    p.add_argument("--ylt", required=True, type=Path)
    p.add_argument("--return-periods", type=_list_of(float), default=[2.0, 5.0, 10.0, 100.0, 250.0])
    p.add_argument("--alphas", type=_list_of(float), default=[0.99, 0.995])
    p.add_argument("--out", type=Path, help="directory for ep_curve.csv, rpl.csv, var_tvar.csv")

    p = sub.add_parser("bench", help="reproduce the scaling / layout / chunking / precision experiments")
    p.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    _add_workload_flags(p, trials=10_000)
    _add_run_flags(p)
    p.add_argument("--worker-counts", "--workers-list", dest="worker_counts", type=_list_of(_positive_int),
                   default=[1, 2, 4])
    p.add_argument("--threads-per-slot-list", dest="slots", type=_list_of(_positive_int), default=[1, 2, 4])
    p.add_argument("--kinds", type=_list_of(Layout), default=list(Layout))
    p.add_argument("--chunk-sizes", type=_list_of(_positive_int), default=[1, 64, 256, 1024])
    p.add_argument("--repetitions", type=_positive_int, default=3)
    p.add_argument("--out", type=Path, help="CSV report path")
    return parser


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    resolved = {k: ([str(x) for x in v] if isinstance(v, list) else v) for k, v in resolved.items()}
    print("config: " + json.dumps(resolved, sort_keys=True), flush=True)


def _gen_spec(args: argparse.Namespace) -> GenSpec:
    return GenSpec(seed=args.seed, num_trials=args.trials, events_per_trial=(args.events_min, args.events_max),
                   catalog_size=args.catalog, elt_entry_count=args.elt_entries, loss_scale=args.loss_scale)


def cmd_gen(args: argparse.Namespace) -> int:
    spec = _gen_spec(args)
    portfolio, elts = generate_portfolio(spec, args.programs, args.layers, args.elts)
    yet = generate_yet(spec)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    nbytes = write_yet(yet, args.out_dir / "yet.bin")
    config = write_workload(portfolio, elts, args.out_dir)
    print(f"trials={yet.num_trials} events={yet.num_events} yet_bytes={nbytes} "
          f"elts={len(elts)} portfolio={config}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    yet = read_yet(args.yet, validate=False)
    problems = [str(v) for v in validate_yet(yet)]
    if args.portfolio is not None:
        _, elts = load_workload(args.portfolio)
        problems += [f"id-range @ ELT {elt.elt_id}: event {elt.max_event_id} > catalog {yet.catalog_size}"
                     for elt in elts.values() if elt.max_event_id > yet.catalog_size]
    for line in problems:
        print(line)
    print(f"trials={yet.num_trials} events={yet.num_events} violations={len(problems)}")
    return EXIT_DATA if problems else EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    yet = read_yet(args.yet)
    portfolio, elts = load_workload(args.portfolio)
    read_seconds = time.perf_counter() - t0
    config = RunConfig(workers=args.workers, threads_per_worker_slot=args.threads_per_slot,
                       chunk_size=args.chunk, precision=args.precision, layout=args.layout,
                       checked=args.checked)
    result = run_analysis(portfolio, yet, elts, config)
    args.out.mkdir(parents=True, exist_ok=True)
    for scope, ylt in result.layers.items():
        _, program, layer = scope.split("/")
        write_ylt_csv(ylt, args.out / f"ylt_p{program}_l{layer}.csv")
    write_ylt_csv(result.total, args.out / "ylt_total.csv")
    t = result.timing
    print(f"load_seconds={read_seconds + t.load_seconds:.3f} compute_seconds={t.compute_seconds:.3f} "
          f"throughput_events_per_s={t.events_per_second:.0f} layers={len(result.layers)} "
          f"trials={yet.num_trials}")
    return EXIT_OK


def _emit(rows: list, header: str, out: Path | None, name: str) -> None:
    lines = [header] + [",".join(format_loss(float(v)) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    print(f"# {name}")
    sys.stdout.write(text)
    if out is not None:
        (out / name).write_text(text, encoding="utf-8")


def cmd_metrics(args: argparse.Namespace) -> int:
    ylt = read_ylt_csv(args.ylt)
    if len(ylt) == 0:
        raise DataError(f"{args.ylt}: YLT has no rows")
    ep = exceedance_curve(ylt)
    rpl = rpl_report(ylt, args.return_periods)
    vt = var_tvar_report(ylt, args.alphas)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
    _emit(ep.points, "loss,exceedance_probability", args.out, "ep_curve.csv")
    _emit(rpl, "return_period,loss", args.out, "rpl.csv")
    _emit(vt, "alpha,var,tvar", args.out, "var_tvar.csv")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    workload = Workload.generate(_gen_spec(args), args.programs, args.layers, args.elts)
    base = RunConfig(workers=args.workers, threads_per_worker_slot=args.threads_per_slot,
                     chunk_size=args.chunk, precision=args.precision, layout=args.layout)
    reps = args.repetitions
    if args.experiment == "scaling":
        report = bench_scaling(workload, args.worker_counts, reps, base)
    elif args.experiment == "oversubscription":
        report = bench_oversubscription(workload, args.slots, reps, base=base)
    elif args.experiment == "layouts":
        report = bench_layouts(workload, args.kinds, reps, base)
    elif args.experiment == "chunks":
        report = bench_chunk_sweep(workload, args.chunk_sizes, reps, base)
    else:
        report = bench_precision(workload, reps, base)
    print(report.to_table())
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            report.to_csv(f)
    else:
        report.to_csv(sys.stdout)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "validate": cmd_validate, "run": cmd_run, "metrics": cmd_metrics, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("gen", "bench"):
        if args.programs > MAX_PROGRAMS:
            parser.error(f"--programs must be <= {MAX_PROGRAMS}")
        if args.elts > MAX_ELTS_PER_LAYER:
            parser.error(f"--elts must be <= {MAX_ELTS_PER_LAYER}")
        try:
            _gen_spec(args)
        except ValueError as exc:
            parser.error(str(exc))
    _print_config(args)
    try:
        return COMMANDS[args.command](args)
    except YetValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FormatError, MetricError, DataError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
