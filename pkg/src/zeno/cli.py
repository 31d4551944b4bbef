"""Command line entry point.

  zeno run SCENARIO [--out DIR] [--grid M]
  zeno sweep SCENARIO [--out DIR]
  zeno profile SCENARIO [--out DIR]
  zeno verify [--scenarios DIR] [--out DIR]

Exit codes: 0 success, 1 failed verification or I/O error, 2 invalid
input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (
    AssumptionError,
    ConfigError,
    InconclusiveError,
    NumericsError,
    ParseError,
    ValidationError,
    ZenoError,
)
from .jumps import DEFAULT_GRID
from .oracle import CompositeScenario, verify
from .scenario import emit_csv, load_scenario, run_scenario

log = logging.getLogger("zeno")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERICS = 0, 1, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zeno", description="Measurement-modified decay rates.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="zeno_out", help="output directory (default: zeno_out)")
    common.add_argument("--grid", type=int, default=DEFAULT_GRID,
                        help=f"time quadrature nodes per axis (default: {DEFAULT_GRID})")
    common.add_argument("--strict", dest="strict", action="store_true", default=True,
                        help="reject unknown scenario keys (default)")
    common.add_argument("--no-strict", dest="strict", action="store_false",
                        help="ignore unknown scenario keys")
    common.add_argument("--workers", type=int, default=1, help="parallel workers for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "all outputs requested by the scenario"),
        ("sweep", "decay rate against measurement interval (rates.csv)"),
        ("profile", "measurement-broadened line profile (profile.csv)"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("scenario", help="scenario JSON file")
    p = sub.add_parser("verify", parents=[common], help="check the second-order formula against exact propagation")
    p.add_argument("--scenarios", default=None,
                   help="directory of scenario files (default: built-in reference set)")
    return ap


def _composite(sc) -> CompositeScenario:
    return CompositeScenario(sc.system(), sc.perturbation(), sc.model(sc.schedule.tau), sc.schedule, sc.name)


def _final_for(cs: CompositeScenario, initial):
    """Final state with the strongest coupling from ``initial``."""
    best, amp = None, 0.0
    for (a, b), v in sorted(cs.V.entries.items(), key=repr):
        if tuple(b) == tuple(initial) and a[0] != initial[0] and abs(v) > amp:
            best, amp = a, abs(v)
    if best is None:
        raise ValidationError(f"{cs.name}: initial state is not coupled to any other level")
    return best


def _verify(args) -> int:
    out = Path(args.out)
    if args.scenarios is None:
        records = verify(grid=args.grid)
    else:
        files = sorted(Path(args.scenarios).glob("*.json"))
        if not files:
            raise ConfigError(f"no scenario files in {args.scenarios}")
        records = []
        for f in files:
            sc = load_scenario(f, strict=args.strict)
            if sc.spectrum is not None:
                log.info("%s: spectrum scenarios have no discrete reference, skipped", f.name)
                continue
            cs = _composite(sc)
            records.extend(verify([(cs, sc.initial, _final_for(cs, sc.initial))], grid=args.grid))
    out.mkdir(parents=True, exist_ok=True)
    report = [r.as_json() for r in sorted(records, key=lambda r: r.scenario)]
    (out / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for r in report:
        print(f"{r['scenario']}: exponent {r['exponent']:.3f} residual {r['residual']:.3e} "
              f"{'PASS' if r['pass'] else 'FAIL'}")
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_FAIL


def _run(args) -> int:
    sc = load_scenario(args.scenario, strict=args.strict)
    artifacts = {"run": None, "sweep": ("rates",), "profile": ("profile",)}[args.command]
    if args.command == "sweep" and sc.sweep is None:
        raise ValidationError(f"{args.scenario}: scenario has no sweep section")
    report = run_scenario(sc, grid=args.grid, workers=args.workers, artifacts=artifacts)
    paths = emit_csv(report, args.out, artifacts or sc.outputs.artifacts)
    for note in report.log:
        log.info(note)
    print(f"{sc.name}: total jump probability {report.total_w:.6g}, rate {report.rate:.6g}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    where = getattr(args, "scenario", None) or getattr(args, "scenarios", None) or "verify"
    try:
        if args.command == "verify":
            return _verify(args)
        return _run(args)
    except (ParseError, ValidationError, ConfigError, AssumptionError) as exc:
        print(f"error: {where}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericsError, InconclusiveError) as exc:
        print(f"numerics error: {where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except (ZenoError, OSError) as exc:
        print(f"error: {where}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
