"""Command-line front end: curves, attacks, empirical checks, bandwidth, replay.

Exit codes: 0 success, 1 usage error, 2 runtime error (including a replay
that does not match its pinned stats).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .attacks import (WAVE_GRID_R1, WaveComparison, blocked_tbit, compare_wave, fill_escape,
                      toggle_forget, wave_attack)
from .params import (ConfigError, DramTimings, PracParams, known_keys, load_config,
                     parse_config_text)
from .security import (BANDWIDTH_CSV_HEADER, N_BO_SWEEP, AnalysisConfig, CurvePoint,
                       DivergenceError, SecurityCurve, bandwidth_csv, bandwidth_table, curve_point)
from .sim import SimStats, Trace

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

CURVE_HELP = f"""\
CSV columns ({SecurityCurve.CSV_HEADER}):
  n_bo            back-off threshold of the row
  n_mit           RFMs issued per alert
  proactive       off or every_ref (one proactive mitigation per REF)
  max_r1          largest initial pool whose attack fits one refresh window
  n_online        ACTs the last surviving row collects after setup
  min_secure_trh  n_bo + n_online, the smallest tolerated Rowhammer threshold
Points whose recursion diverges keep their row with empty values.
"""

SIMULATE_HELP = f"""\
CSV columns ({WaveComparison.CSV_HEADER}):
  n_bo, n_mit     PRAC configuration
  r1              initial pool of the wave attack
  policy          psq or ideal
  empirical       simulated peak count of the final row plus one
  analytical      n_bo + n_online(r1)
  rel_error       |empirical - analytical| / analytical
"""

BANDWIDTH_HELP = f"""\
CSV columns ({BANDWIDTH_CSV_HEADER}):
  n_bo            back-off threshold (16, 32, 64, 128)
  scope           RFM scope: per_bank, same_bank or all_bank
  proactive       off or every_ref
  bw_loss         worst-case fraction of activation bandwidth lost
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _threads() -> int:
    raw = os.environ.get("PRACSIM_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PRACSIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("PRACSIM_THREADS must be >= 1")
    return n


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Map in worker processes; results come back in input order."""
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _parse_overrides(pairs: Iterable[str]) -> dict[str, int]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = (p.strip() for p in pair.split("=", 1))
        if key not in known_keys():
            raise UsageError(f"unknown key {key!r}; known keys: {', '.join(known_keys())}")
        try:
            out[key] = int(value.replace("_", ""))
        except ValueError:
            raise UsageError(f"--set {key}: expected an integer, got {value!r}") from None
    return out


def _load(args) -> tuple[PracParams, DramTimings]:
    try:
        return load_config(args.config, _parse_overrides(args.set or []))
    except ConfigError as e:
        raise UsageError(str(e)) from None
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from None


def _explicit_keys(args) -> set[str]:
    keys = set(_parse_overrides(args.set or []))
    if args.config is not None:
        keys |= set(parse_config_text(Path(args.config).read_text(), args.config))
    return keys


def _emit(args, text: str) -> None:
    if args.output in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(args.output)
    if path.parent and not path.parent.exists():
        raise UsageError(f"output directory {path.parent} does not exist")
    path.write_text(text)


# ------------------------------------------------------------------ commands

def _curve_job(job) -> tuple:
    params, timings, proactive, n_bo = job
    try:
        return ("ok", curve_point(n_bo, AnalysisConfig(params, timings, proactive)))
    except DivergenceError as e:
        return ("diverged", str(e))


def cmd_curve(args) -> int:
    params, timings = _load(args)
    modes = {"off": ["off"], "on": ["every_ref"], "both": ["off", "every_ref"]}[args.proactive]
    jobs = [(params.replace(n_mit=m), timings, pro, n)
            for m in args.n_mit for pro in modes for n in args.n_bo]
    lines = [SecurityCurve.CSV_HEADER]
    for (p, _, pro, n), (status, value) in zip(jobs, parallel_map(_curve_job, jobs)):
        if status == "ok":
            v: CurvePoint = value
            lines.append(f"{v.n_bo},{v.n_mit},{v.proactive},{v.max_r1},{v.n_online},"
                         f"{v.min_secure_trh}")
        else:
            print(f"n_bo={n} n_mit={p.n_mit} proactive={pro}: {value}", file=sys.stderr)
            lines.append(f"{n},{p.n_mit},{pro},,,")
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


ATTACKS = ("toggle-forget", "fill-escape", "blocked-tbit", "wave")


def _ref_choice(value: str) -> bool | None:
    return {"on": True, "off": False, "worst": None}[value]


def _attack_job(job) -> dict:
    name, params, timings, opts, point, record = job
    if name == "toggle-forget":
        rep = toggle_forget(opts["queue_size"] or 4, point, params, timings,
                            ref_mitigation=bool(opts["ref_mitigation"]), record=record)
    elif name == "fill-escape":
        rep = fill_escape(point, opts["queue_size"] or 16, params, timings,
                          opts["ref_mitigation"], record=record)
    elif name == "blocked-tbit":
        rep = blocked_tbit(point, opts["queue_size"] or 16, params, timings,
                           opts["ref_mitigation"], record=record)
    else:
        rep = wave_attack(opts["policy"], point, params, timings, record=record)
    trace = rep.trace.dumps() if rep.trace is not None else None
    return {"report": rep.to_json_dict(), "trace": trace,
            "stats": rep.trace.replay().to_json() if rep.trace is not None else None}


def cmd_attack(args) -> int:
    params, timings = _load(args)
    name = args.name
    if name == "toggle-forget":
        points = args.tbit or [5]
    elif name == "wave":
        points = args.r1 or [1000]
    else:
        if not args.threshold:
            raise UsageError(f"{name} needs --threshold")
        points = args.threshold
    if name == "fill-escape" and "n_mit" not in _explicit_keys(args):
        params = params.replace(n_mit=4)  # the attack's reference operating point
    if args.trace and len(points) != 1:
        raise UsageError("--trace needs a single grid point")
    opts = {"queue_size": args.queue_size, "ref_mitigation": _ref_choice(args.ref_mitigation),
            "policy": args.policy}
    jobs = [(name, params, timings, opts, p, bool(args.trace)) for p in points]
    try:
        results = parallel_map(_attack_job, jobs)
    except ValueError as e:
        raise UsageError(str(e)) from None
    reports = [r["report"] for r in results]
    body = reports[0] if len(reports) == 1 else reports
    _emit(args, json.dumps(body, sort_keys=True, indent=2) + "\n")
    if args.trace:
        Path(args.trace).write_text(results[0]["trace"])
        Path(str(args.trace) + ".stats.json").write_text(results[0]["stats"])
    return EXIT_OK


def _simulate_job(job) -> WaveComparison:
    r1, params, timings, policy = job
    return compare_wave(r1, params, timings, policy)


def cmd_simulate(args) -> int:
    params, timings = _load(args)
    jobs = [(r1, params.replace(n_mit=m), timings, pol)
            for m in args.n_mit for r1 in args.r1 for pol in args.policy]
    rows = parallel_map(_simulate_job, jobs)
    _emit(args, "\n".join([WaveComparison.CSV_HEADER] + [r.csv_row() for r in rows]) + "\n")
    return EXIT_OK


def cmd_bandwidth(args) -> int:
    params, timings = _load(args)
    _emit(args, bandwidth_csv(bandwidth_table(AnalysisConfig(params, timings))))
    return EXIT_OK


def _diff_stats(got: dict, want: dict, prefix: str = "") -> list[str]:
    out = []
    for key in sorted(set(got) | set(want)):
        a, b = got.get(key), want.get(key)
        if isinstance(a, dict) and isinstance(b, dict):
            out += _diff_stats(a, b, f"{prefix}{key}.")
        elif a != b:
            out.append(f"{prefix}{key}: expected {b!r}, got {a!r}")
    return out


def cmd_replay(args) -> int:
    try:
        trace = Trace.load(args.trace)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load trace: {e}") from None
    stats = trace.replay()
    text = stats.to_json()
    if args.expect is None:
        _emit(args, text)
        return EXIT_OK
    try:
        want = json.loads(Path(args.expect).read_text())
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load expected stats: {e}") from None
    SimStats.from_json_dict(want)  # validates the field names
    diff = _diff_stats(json.loads(text), want)
    if diff:
        print("replay does not match the pinned stats:", file=sys.stderr)
        for line in diff[:50]:
            print(f"  {line}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.output is not None:
        _emit(args, text)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one parameter (repeatable); keys: " + ", ".join(known_keys()))
    p.add_argument("-o", "--output", metavar="PATH", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="pracsim", description=__doc__, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("curve", help="security curve CSV", epilog=CURVE_HELP, formatter_class=fmt)
    _common(p)
    p.add_argument("--n-mit", type=int, nargs="+", choices=(1, 2, 4), default=[1, 2, 4])
    p.add_argument("--proactive", choices=("off", "on", "both"), default="both")
    p.add_argument("--n-bo", type=int, nargs="+", default=list(N_BO_SWEEP))
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("attack", help="run a named attack, JSON report",
                       epilog="One grid point prints one report object, several print a list.\n"
                              "--trace also writes TRACE.stats.json for `replay --expect`.",
                       formatter_class=fmt)
    _common(p)
    p.add_argument("name", choices=ATTACKS)
    p.add_argument("--threshold", type=int, nargs="+",
                   help="mitigation threshold grid (fill-escape, blocked-tbit)")
    p.add_argument("--tbit", type=int, nargs="+", help="t-bit grid (toggle-forget)")
    p.add_argument("--r1", type=int, nargs="+", help="initial pool grid (wave)")
    p.add_argument("--queue-size", type=int, help="FIFO entries (default 4 or 16)")
    p.add_argument("--ref-mitigation", choices=("on", "off", "worst"), default="worst",
                   help="FIFO pops at REF; 'worst' runs both and reports the higher count")
    p.add_argument("--policy", choices=("psq", "ideal"), default="psq", help="wave defense")
    p.add_argument("--trace", metavar="PATH", help="save a replayable trace")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("simulate", help="wave attack against the analytical bound",
                       epilog=SIMULATE_HELP, formatter_class=fmt)
    _common(p)
    p.add_argument("--n-mit", type=int, nargs="+", choices=(1, 2, 4), default=[1, 2, 4])
    p.add_argument("--r1", type=int, nargs="+", default=list(WAVE_GRID_R1))
    p.add_argument("--policy", nargs="+", choices=("psq", "ideal"), default=["psq", "ideal"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bandwidth", help="bandwidth-loss table CSV", epilog=BANDWIDTH_HELP,
                       formatter_class=fmt)
    _common(p)
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("replay", help="replay a trace, optionally against pinned stats")
    p.add_argument("trace", metavar="TRACE")
    p.add_argument("--expect", metavar="STATS_JSON", help="exit 2 on any difference")
    p.add_argument("-o", "--output", metavar="PATH", help="write the replayed stats JSON")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"pracsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # anything else is a runtime failure
        print(f"pracsim: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
