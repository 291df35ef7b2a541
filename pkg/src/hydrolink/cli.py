"""Command-line front end.

Subcommands:
  simulate   run any scenario (file path or bundled name)
  wfs        run a wavefront-analysis scenario
  qkd        run a qkd-pol or qkd-oam scenario
  sweep      run a scenario across values of a declared parameter
  scenarios  list bundled scenarios
  schema     print the scenario schema reference

Value precedence: command-line --set overrides > scenario file > defaults.
Exit codes: 0 success, 1 validation error, 2 runtime error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .runner import SWEEPABLE_PARAMETERS, run_scenario, sweep
from .scenario import (ScenarioError, bundled_scenarios,
                       parse_scenario, schema_reference, set_by_path)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _load_with_overrides(ref: str, sets: list[str], seed: int | None,
                         frames: int | None):
    path = Path(ref)
    bundled = bundled_scenarios()
    if path.exists():
        text = path.read_text()
    elif ref in bundled:
        text = bundled[ref]
    else:
        raise ScenarioError(
            f"no scenario file or bundled scenario named {ref!r}; bundled: "
            f"{sorted(bundled)}")
    if not sets and seed is None and frames is None:
        return parse_scenario(text)
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ScenarioError("top level must be a mapping")
    for item in sets:
        if "=" not in item:
            raise ScenarioError(f"--set needs key.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        set_by_path(doc, dotted.strip(), raw)
    if seed is not None:
        doc["seed"] = seed
    if frames is not None:
        doc["frames"] = frames
    return parse_scenario(yaml.safe_dump(doc, sort_keys=True))


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario file path or bundled name")
    p.add_argument("--output", "-o", default=None,
                   help="output directory (default: ./runs/<name>)")
    p.add_argument("--set", dest="sets", action="append", default=[],
                   metavar="KEY.PATH=VALUE",
                   help="override one scenario value (repeatable)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.add_argument("--frames", type=int, default=None,
                   help="override the frame count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrolink",
        description="Underwater optical link simulator: structured beams, "
                    "turbulence, wavefront sensing, and BB84 feasibility.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (("simulate", "run any scenario"),
                      ("wfs", "run a wavefront-analysis scenario"),
                      ("qkd", "run a qkd-pol or qkd-oam scenario")):
        p = sub.add_parser(name, help=doc)
        _add_run_options(p)

    p = sub.add_parser("sweep", help="summarize a scenario across one "
                                     "parameter")
    _add_run_options(p)
    p.add_argument("--parameter", required=True,
                   choices=SWEEPABLE_PARAMETERS)
    p.add_argument("--values", required=True,
                   help="comma-separated numeric values")

    p = sub.add_parser("scenarios", help="bundled scenario tools")
    p.add_argument("action", choices=("list",))

    sub.add_parser("schema", help="print the scenario schema reference")
    return parser


def _run(args) -> int:
    scenario = _load_with_overrides(args.scenario, args.sets, args.seed,
                                    args.frames)
    if args.command == "wfs" and scenario.analysis.kind != "wavefront":
        raise ScenarioError(
            f"'wfs' needs a wavefront scenario, got {scenario.analysis.kind}")
    if args.command == "qkd" and scenario.analysis.kind not in (
            "qkd-pol", "qkd-oam"):
        raise ScenarioError(
            f"'qkd' needs a qkd scenario, got {scenario.analysis.kind}")
    out = Path(args.output) if args.output else Path("runs") / scenario.name
    if getattr(args, "parameter", None):
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise ScenarioError(
                f"--values must be comma-separated numbers, got "
                f"{args.values!r}") from None
        result = sweep(scenario, args.parameter, values, out)
    else:
        result = run_scenario(scenario, out)
    print(f"{scenario.name}: wrote {len(result.files)} files to "
          f"{result.output_dir}")
    for key, value in result.summary.items():
        print(f"  {key}: {value}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scenarios":
            for name in sorted(bundled_scenarios()):
                print(name)
            return EXIT_OK
        if args.command == "schema":
            print(schema_reference())
            return EXIT_OK
        return _run(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:   # keep the contract: nonzero on any failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
