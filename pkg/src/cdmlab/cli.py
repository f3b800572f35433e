"""Command-line front end for the scenario harness.

Subcommands:
  calibrate   fit a curvature calibration map and write it to a file
  run         execute a named or file-defined scenario, persist artifacts
  replay      recompute the detector verdict and plot series for a trace
  sweep       generate the seeded detector-calibration corpus

Exit codes: 0 success, 2 scenario or component error, 3 malformed input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .detect import DetectorParams
from .errors import CdmLabError, MalformedTrace, ScenarioError
from .fbg import FbgLayout
from .harness import (
    SCENARIO_IDS,
    builtin_scenario,
    make_calibration,
    replay,
    run,
    scenario_from_yaml,
    sweep,
)
from .reconstruction import map_to_yaml

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_MALFORMED = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cdmlab",
        description="Planar continuum-arm experiments: simulate, sense, "
                    "control, detect contact.",
    )
    p.add_argument("--out-dir", default="out", help="artifact directory")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="write a curvature calibration map")
    c.add_argument("--output", default=None,
                   help="map file path (default <out-dir>/calibration_map.yaml)")

    r = sub.add_parser("run", help="execute a scenario")
    r.add_argument("scenario", help="builtin id (%s) or a YAML scenario file"
                                    % ", ".join(SCENARIO_IDS))
    r.add_argument("--seed", type=int, default=0, help="run seed")
    r.add_argument("--map", default=None, help="calibration map file to reuse")

    y = sub.add_parser("replay", help="re-analyze a persisted trace")
    y.add_argument("trace", help="trace CSV produced by 'run'")
    y.add_argument("--drop-soft", type=float, default=None,
                   help="override the soft deviation threshold")
    y.add_argument("--drop-hard", type=float, default=None,
                   help="override the hard deviation threshold")

    s = sub.add_parser("sweep", help="seeded detector-calibration corpus")
    s.add_argument("--runs", type=int, default=50, help="runs per class")
    s.add_argument("--seed", type=int, default=0, help="first seed")
    return p


def _cmd_calibrate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.output) if args.output else out / "calibration_map.yaml"
    cal = make_calibration(FbgLayout())
    path.write_text(map_to_yaml(cal))
    print(f"calibration map written to {path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    name = args.scenario
    if name in SCENARIO_IDS:
        scenario = builtin_scenario(name, seed=args.seed)
    else:
        path = Path(name)
        if not path.exists():
            raise ScenarioError(
                f"{name!r} is neither a builtin scenario id nor a file"
            )
        scenario = scenario_from_yaml(path.read_text())
    report = run(scenario, args.out_dir, map_path=args.map)
    print(json.dumps({
        "scenario": report.scenario_id,
        "final_errors_mm": list(report.final_errors),
        "iterations": list(report.iterations),
        "reached": list(report.reached),
        "verdict": report.verdict.state,
        "hardness": report.verdict.hardness,
        "wrapped": report.verdict.wrapped,
        "report": report.report_path,
    }, indent=2))
    return EXIT_OK


def _cmd_replay(args) -> int:
    kwargs = {}
    if args.drop_soft is not None:
        kwargs["drop_threshold_soft"] = args.drop_soft
    if args.drop_hard is not None:
        kwargs["drop_threshold_hard"] = args.drop_hard
    detector = DetectorParams(**kwargs) if kwargs else None
    verdict, series_paths = replay(args.trace, detector, args.out_dir)
    print(json.dumps({
        "state": verdict.state,
        "onset": verdict.onset,
        "hardness": verdict.hardness,
        "wrapped": verdict.wrapped,
        "series": list(series_paths),
    }, indent=2))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    summary = sweep(args.out_dir, n_runs=args.runs, seed0=args.seed)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "calibrate": _cmd_calibrate,
        "run": _cmd_run,
        "replay": _cmd_replay,
        "sweep": _cmd_sweep,
    }[args.command]
    try:
        return handler(args)
    except MalformedTrace as e:
        print(f"malformed input: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except CdmLabError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
