"""
Command-line interface
validate | capacity | awgn | simulate | surface | runs
Exit codes: 0 ok, 1 semantic error in the channel, 2 parse error, 3 computation error
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import (
    SolverSettings, SweepConfig, DATABASE_URL, LOG_LEVEL, DEFAULT_SEED, DEFAULT_RESTARTS,
    DEFAULT_TRIALS, DEFAULT_CODEBOOKS, WORKER_COUNT, CSV_COLUMNS, SURFACE_COLUMNS
)
from covertcsi import __version__
from covertcsi.exceptions import (
    ChannelParseError, ChannelValidationError, BudgetExceededError, InfeasibleError
)
from covertcsi.channel_model import read_channel, x0_redundant
from covertcsi import covert_capacity as capacity
from covertcsi import awgn
from covertcsi import coding_sim

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SEMANTIC = 1
EXIT_PARSE = 2
EXIT_COMPUTATION = 3


@dataclass
class RunManifest:
    """What produced an output file"""
    command: str
    channel_digest: Optional[str] = None
    config: Dict = field(default_factory=dict)
    version: str = __version__
    seed: Optional[int] = None
    duration_seconds: float = 0.0
    exit_code: Optional[int] = None
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def file_digest(path: str) -> str:
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            sha.update(block)
    return sha.hexdigest()


def write_manifest(manifest: RunManifest, output_path: str) -> str:
    """Write `<output>.manifest.json` next to an output file."""
    path = f"{output_path}.manifest.json"
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True, default=str)
        f.write('\n')
    return path


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[str]]):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} rows to {path}")


def _load(path: str, manifest: RunManifest):
    ch, report = read_channel(path)
    manifest.channel_digest = file_digest(path)
    return ch, report


def _floats(text: str) -> List[float]:
    """Comma-separated reals; 'inf' is accepted."""
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _matrix(text: str) -> List[List[float]]:
    """Rows separated by ';', entries by ','."""
    return [_floats(row) for row in text.split(';') if row.strip()]


def _settings(args) -> SolverSettings:
    return SolverSettings(
        aux_bound=getattr(args, 'aux_bound', 'achiev'),
        restarts=getattr(args, 'restarts', DEFAULT_RESTARTS),
        seed=args.seed,
        workers=args.workers,
        aux_size=getattr(args, 'aux_size', None),
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


# ---------------------------------------------------------------------------
# Commands

def cmd_validate(args, manifest: RunManifest) -> int:
    ch, report = _load(args.channel, manifest)
    print(f"\n📋 Channel {args.channel}: |X|={ch.nx} |S|={ch.ns} |Y|={ch.ny} |Z|={ch.nz}, x0={ch.x0}")
    for line in report.lines():
        print(f"   ⚠️  {line}")
    if report.forbidden:
        print(f"   FORBIDDEN inputs: {report.forbidden}")
    print(f"   supp(Q0) = Z: {'yes' if report.supp_ok else 'no'}")
    print(f"   x0 redundant without CSI: {'yes' if x0_redundant(ch) else 'no'}")
    if report.ok:
        print("✅ Channel is valid")
        return EXIT_OK
    print("❌ Channel is not valid")
    return EXIT_SEMANTIC


def _print_solution(title: str, sol: capacity.CapacitySolution, key_rate: float):
    print(f"\n📊 {title}")
    print(f"   Rate: {sol.rate_bits:.6f} bits/use")
    print(f"   Key-rate deficit: {sol.key_deficit_bits:.6f} bits/use "
          f"({'met' if sol.key_feasible else 'NOT met'} by the file's key rate {key_rate:g})")
    print(f"   Cost used: {sol.cost_used:.6f}")
    print(f"   Covertness residual: {sol.covert_residual_nats:.3e} nats")
    print(f"   {sol.aux_label} alphabet: {sol.map.aux_size}, map rows: {sol.map.to_list()}")
    if sol.mode == capacity.CAUSAL:
        print(f"   P_V: {np.round(sol.aux_dist.probs, 6).tolist()}")
    else:
        print(f"   P_U|S rows: {np.round(sol.aux_dist.rows, 6).tolist()}")


def cmd_capacity(args, manifest: RunManifest) -> int:
    ch, _ = _load(args.channel, manifest)
    settings = _settings(args)
    manifest.seed = args.seed
    manifest.config = {'mode': args.mode, 'A': args.A, 'settings': asdict(settings),
                       'oracle': args.oracle}
    sol = capacity.solve_capacity(ch, args.mode, args.A, settings)
    _print_solution(f"{args.mode.capitalize()} covert capacity", sol, ch.key_rate)

    if args.aux_bound == 'converse' and args.aux_size is None:
        achiev = capacity.solve_capacity(ch, args.mode, args.A,
                                         SolverSettings(**{**asdict(settings), 'aux_bound': 'achiev'}))
        print(f"   Achievability-bound rate: {achiev.rate_bits:.6f} bits/use "
              f"(gap {achiev.rate_bits - sol.rate_bits:+.2e})")

    if args.no_csi:
        baseline = capacity.no_csi_capacity(ch, args.A, settings)
        print(f"   Rate without CSI: {baseline.rate_bits:.6f} bits/use")

    if args.oracle:
        default_aux = 3 if args.mode == capacity.CAUSAL else 2
        aux_size = args.oracle_aux or min(capacity.cardinality_bound(ch, args.mode), default_aux)
        value = capacity.brute_force_oracle(ch, args.mode, aux_size, args.oracle_resolution)
        print(f"   Oracle (aux {aux_size}, resolution {args.oracle_resolution}): {value:.6f} bits/use "
              f"(gap {sol.rate_bits - value:+.2e})")

    if args.out:
        _ensure_parent(args.out)
        with open(args.out, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(capacity.solution_to_dict(sol), f, indent=2, sort_keys=True, default=str)
            f.write('\n')
        manifest.outputs.append(args.out)
        print(f"✅ Solution saved to {args.out}")
    return EXIT_OK


def cmd_awgn(args, manifest: RunManifest) -> int:
    manifest.config = {'P': args.P, 'T': args.T, 'sigma2': args.sigma2}
    result = awgn.evaluate(awgn.AwgnSpec(args.P, args.T, args.sigma2))
    print(f"\n📊 Gaussian channel P={args.P:g} T={args.T:g} sigma2={args.sigma2:g}")
    for key, value in result.to_dict().items():
        print(f"   {key}: {_fmt(value)}")
    if result.no_key_needed_causal:
        print("   ✅ Causal scheme: no key needed")
    if result.no_key_needed_noncausal:
        print("   ✅ Noncausal scheme: no key needed")
    return EXIT_OK


def _simulation_solution(args, ch) -> capacity.CapacitySolution:
    if args.solution:
        with open(args.solution, 'r', encoding='utf-8') as f:
            sol = capacity.solution_from_dict(json.load(f))
        logger.info(f"Loaded {sol.mode} solution from {args.solution}")
        return sol
    if args.aux or args.map:
        if not (args.aux and args.map):
            raise ValueError("--aux and --map must be given together")
        aux = _matrix(args.aux)
        data = {
            'mode': args.mode,
            'rate_bits': float('nan'),
            'aux_dist': aux[0] if args.mode == capacity.CAUSAL else aux,
            'map': [[int(x) for x in row] for row in _matrix(args.map)],
        }
        sol = capacity.solution_from_dict(data)
        sol.map.check(ch)
        return sol
    logger.info("No solution given; solving for the capacity-achieving scheme")
    return capacity.solve_capacity(ch, args.mode, 0.0, _settings(args))


def cmd_simulate(args, manifest: RunManifest) -> int:
    ch, _ = _load(args.channel, manifest)
    sol = _simulation_solution(args, ch)
    sweep = SweepConfig(
        n_list=args.n_list,
        R=args.R,
        R_K=args.RK,
        R_prime=args.Rprime,
        seed=args.seed,
        trials=args.trials,
        codebooks=args.codebooks,
        workers=args.workers,
    )
    manifest.seed = args.seed
    manifest.config = {'mode': sol.mode, 'sweep': sweep.to_dict(),
                       'solution': args.solution, 'aux': args.aux, 'map': args.map}
    reports = coding_sim.run_experiment(ch, sol, sweep)
    averaged = coding_sim.average_reports(reports)

    print(f"\n📊 {sol.mode.capitalize()} scheme, {args.codebooks} codebooks per n "
          f"(decoder: {coding_sim.DECODER})")
    print("   " + "  ".join(f"{c:>15}" for c in CSV_COLUMNS))
    for report in averaged:
        print("   " + "  ".join(f"{c:>15}" for c in coding_sim.csv_row(report)))
    flags = averaged[0].rate_condition_flags if averaged else {}
    for name, ok in flags.items():
        print(f"   {'✅' if ok else '⚠️ '} {name} condition at the realized rates")

    if args.out:
        _write_csv(args.out, CSV_COLUMNS, [coding_sim.csv_row(r) for r in averaged])
        manifest.outputs.append(args.out)
        print(f"✅ CSV written to {args.out}")
    if args.xlsx:
        from excel_generator import ReportWorkbook
        summary = {
            'mode': sol.mode,
            'solution rate (bits)': sol.rate_bits,
            'codebooks per n': args.codebooks,
            'trials per codebook': args.trials,
            'seed': args.seed,
            'decoder': coding_sim.DECODER,
        }
        summary.update({f"{k} condition": v for k, v in flags.items()})
        path = ReportWorkbook().export_sweep(averaged, reports, summary, args.xlsx)
        manifest.outputs.append(path)
        print(f"✅ Workbook written to {path}")
    if args.report:
        _ensure_parent(args.report)
        with open(args.report, 'w', encoding='utf-8', newline='\n') as f:
            f.write(coding_sim.reports_to_text(averaged))
        manifest.outputs.append(args.report)
        print(f"✅ Report written to {args.report}")
    return EXIT_OK


def cmd_surface(args, manifest: RunManifest) -> int:
    ch, _ = _load(args.channel, manifest)
    settings = _settings(args)
    manifest.seed = args.seed
    manifest.config = {'mode': args.mode, 'A_grid': args.A_grid, 'B_grid': args.B_grid,
                       'settings': asdict(settings)}
    points = capacity.capacity_surface(ch, args.mode, args.A_grid, args.B_grid, settings)
    rows = [[coding_sim.format_cell(p.A), coding_sim.format_cell(p.B),
             coding_sim.format_cell(p.value_bits)] for p in points]
    print(f"\n📊 {args.mode.capitalize()} C(A,B) surface")
    for row in rows:
        print("   " + "  ".join(f"{c:>15}" for c in row))
    if args.out:
        _write_csv(args.out, SURFACE_COLUMNS, rows)
        manifest.outputs.append(args.out)
        print(f"✅ CSV written to {args.out}")
    if args.xlsx:
        from excel_generator import ReportWorkbook
        summary = {'mode': args.mode, 'points': len(points),
                   'max value (bits)': max(p.value_bits for p in points)}
        path = ReportWorkbook().export_surface(points, summary, args.xlsx)
        manifest.outputs.append(path)
        print(f"✅ Workbook written to {path}")
    return EXIT_OK


def cmd_runs(args, manifest: RunManifest) -> int:
    from database_manager import RunRegistry
    page = RunRegistry(args.registry).get_runs(args.page, args.size, args.filter_command)
    print(f"\n📋 Runs in {args.registry}: {page['total']} total, "
          f"page {page['page']} of {max(page['total_pages'], 1)}")
    for run in page['results']:
        status = '✅' if run['exit_code'] == EXIT_OK else '❌'
        print(f"   {status} #{run['runid']} {run['command']:<9} exit={run['exit_code']} "
              f"seed={run['seed']} {run['created']} {run['output_path'] or ''}".rstrip())
    if page['next_page']:
        print(f"   more: --page {page['next_page']}")
    return EXIT_OK


COMMANDS = {
    'validate': cmd_validate,
    'capacity': cmd_capacity,
    'awgn': cmd_awgn,
    'simulate': cmd_simulate,
    'surface': cmd_surface,
    'runs': cmd_runs,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='covertcsi',
        description='Covert communication over state-dependent channels with transmitter CSI')
    parser.add_argument('--log-level', default=LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--registry', default=DATABASE_URL, help='sqlite file of the run registry')
    parser.add_argument('--no-registry', action='store_true', help='do not record the run')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('validate', help='check a channel file')
    p.add_argument('channel')

    p = sub.add_parser('capacity', help='solve for the covert capacity')
    p.add_argument('channel')
    p.add_argument('--mode', choices=capacity.MODES, default=capacity.CAUSAL)
    p.add_argument('--aux-bound', choices=capacity.AUX_BOUNDS, default='achiev')
    p.add_argument('--aux-size', type=int, default=None)
    p.add_argument('--A', type=float, default=0.0, help='covertness budget in nats (0: P_Z = Q0)')
    p.add_argument('--restarts', type=int, default=DEFAULT_RESTARTS)
    p.add_argument('--seed', type=int, default=DEFAULT_SEED)
    p.add_argument('--workers', type=int, default=WORKER_COUNT)
    p.add_argument('--oracle', action='store_true', help='compare with the brute-force grid search')
    p.add_argument('--oracle-aux', type=int, default=None,
                   help='aux size of the oracle; noncausal grids fit COVERT_ORACLE_BUDGET at 2, '
                        'and at 3 only with a low --oracle-resolution (about 20)')
    p.add_argument('--oracle-resolution', type=int, default=100)
    p.add_argument('--no-csi', action='store_true', help='also print the rate without CSI')
    p.add_argument('--out', help='save the solution as JSON')

    p = sub.add_parser('awgn', help='closed forms for the Gaussian channel')
    p.add_argument('--P', type=float, required=True)
    p.add_argument('--T', type=float, required=True)
    p.add_argument('--sigma2', type=float, default=1.0)

    p = sub.add_parser('simulate', help='random-coding simulation sweep')
    p.add_argument('channel')
    p.add_argument('--mode', choices=capacity.MODES, default=capacity.CAUSAL)
    p.add_argument('--solution', help='solution JSON written by capacity --out')
    p.add_argument('--aux', help="inline aux law: P_V as 'a,b,...' or P_U|S rows 'a,b;c,d'")
    p.add_argument('--map', help="inline strategy map rows, e.g. '0,0;0,1;1,0'")
    p.add_argument('--n-list', type=_ints, default=[2, 4, 6, 8])
    p.add_argument('--R', type=float, required=True)
    p.add_argument('--RK', type=float, default=0.0)
    p.add_argument('--Rprime', type=float, default=0.0)
    p.add_argument('--trials', type=int, default=DEFAULT_TRIALS)
    p.add_argument('--codebooks', type=int, default=DEFAULT_CODEBOOKS)
    p.add_argument('--seed', type=int, default=DEFAULT_SEED)
    p.add_argument('--workers', type=int, default=WORKER_COUNT)
    p.add_argument('--out', help='CSV of per-n averages')
    p.add_argument('--xlsx', help='Excel workbook with averages and every codebook')
    p.add_argument('--report', help='structured-text report, one block per n')

    p = sub.add_parser('surface', help='evaluate C(A,B) on a grid')
    p.add_argument('channel')
    p.add_argument('--mode', choices=capacity.MODES, default=capacity.CAUSAL)
    p.add_argument('--A-grid', type=_floats, default=[0.0])
    p.add_argument('--B-grid', type=_floats, default=[math.inf])
    p.add_argument('--restarts', type=int, default=DEFAULT_RESTARTS)
    p.add_argument('--seed', type=int, default=DEFAULT_SEED)
    p.add_argument('--workers', type=int, default=WORKER_COUNT)
    p.add_argument('--out', help='CSV of (A, B, value)')
    p.add_argument('--xlsx', help='Excel workbook of the grid')

    p = sub.add_parser('runs', help='list recorded runs, newest first')
    p.add_argument('--page', type=int, default=1)
    p.add_argument('--size', type=int, default=10)
    p.add_argument('--filter', dest='filter_command', default='', choices=[''] + list(COMMANDS),
                   help='only runs of this command')
    return parser


def configure_logging(level: str):
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(level)


def _record(args, manifest: RunManifest):
    for output in manifest.outputs:
        write_manifest(manifest, output)
    if args.no_registry or args.command == 'runs':
        return
    try:
        from database_manager import RunRegistry
        RunRegistry(args.registry).record_run(
            manifest.to_dict(), manifest.outputs[0] if manifest.outputs else None)
    except Exception as e:
        logger.warning(f"Could not record the run in {args.registry}: {e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Returns:
        exit code (0 ok, 1 semantic, 2 parse, 3 computation)
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    manifest = RunManifest(command=args.command)
    start = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, manifest)
    except ChannelParseError as e:
        print(f"❌ Parse error: {e}")
        code = EXIT_PARSE
    except ChannelValidationError as e:
        print("❌ Channel is not valid")
        lines = e.report.lines() if e.report is not None else [str(e)]
        for line in lines:
            print(f"   {line}")
        code = EXIT_SEMANTIC
    except (BudgetExceededError, InfeasibleError, ArithmeticError) as e:
        print(f"❌ Computation failed: {e}")
        code = EXIT_COMPUTATION
    except (FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as e:
        print(f"❌ Cannot read input: {e}")
        code = EXIT_PARSE
    except ValueError as e:
        print(f"❌ Invalid input: {e}")
        code = EXIT_COMPUTATION
    except KeyboardInterrupt:
        print("\n❌ Interrupted by user.")
        code = EXIT_COMPUTATION
    except Exception as e:
        print(f"❌ Error: {e}")
        logger.error(f"Error in {args.command}: {e}", exc_info=True)
        code = EXIT_COMPUTATION
    manifest.duration_seconds = round(time.perf_counter() - start, 6)
    manifest.exit_code = code
    _record(args, manifest)
    return code
