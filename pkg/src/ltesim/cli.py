"""Command line front end.

    ltesim run scenario.json [--seed N] [--capture PATH] [--report PATH]
                             [--ground-truth PATH] [--quiet]
    ltesim scan capture.jsonl
    ltesim replay capture.jsonl [--report PATH]
    ltesim diff ground_truth.json report.json

Exit codes: 0 success, 2 unusable scenario file, 3 a run tripped an
internal consistency check.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .attacker import NoBroadcastFound, scan_broadcast
from .codec import InvariantViolation as CodecInvariantViolation
from .core import InvariantViolation as CoreInvariantViolation
from .engine import diff_tracking, replay_capture, run
from .scenario import ScenarioInvalid, load_scenario

# The wire layer and the session table each police their own invariants;
# either one tripping mid-run is the same outcome for the operator.
INVARIANT_ERRORS = (CodecInvariantViolation, CoreInvariantViolation)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioInvalid as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run(scenario, seed=args.seed)
    except INVARIANT_ERRORS as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3

    if args.capture:
        with open(args.capture, "w", encoding="utf-8") as fh:
            fh.write(result.capture_text())
    if args.report and result.report is not None:
        _write_json(args.report, result.report.as_json())
    if args.ground_truth:
        _write_json(args.ground_truth, result.ground_truth)

    if not args.quiet:
        print(f"{scenario.name}: seed {result.seed}, {result.duration_ms} ms")
        print(f"capture: {len(result.capture_lines)} lines")
        if result.report is not None:
            rep = result.report
            print(
                f"observer: {len(rep.sessions)} sessions, "
                f"{rep.total_frames} frames, {rep.undecodable} undecodable"
            )
        for name, ue in result.ues.items():
            stats = ue.stats
            print(
                f"  {name}: {ue.phase.value}, attach attempts {len(stats.attach_attempts)}, "
                f"handovers {stats.handovers_completed}, idles {stats.idle_transitions}"
            )
        if result.rogue is not None:
            caught = len(result.rogue.catcher_log)
            rejects = sum(result.rogue.rejects_sent.values())
            print(f"  rogue: {caught} identities caught, {rejects} rejects sent")
    return 0


def _read_capture(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _cmd_scan(args: argparse.Namespace) -> int:
    records = _read_capture(args.capture)
    try:
        ranked, draft = scan_broadcast(records)
    except NoBroadcastFound as exc:
        print(f"scan failed: {exc}", file=sys.stderr)
        return 1
    for cell in ranked:
        print(
            f"cell {cell.cell_id}: plmn {cell.plmn}, tac {cell.tac}, "
            f"best rx {cell.best_rx_dbm:.1f} dBm, {cell.sightings} sightings"
        )
    print(json.dumps(draft.as_json(), indent=2, sort_keys=True))
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    with open(args.capture, encoding="utf-8") as fh:
        report = replay_capture(fh)
    obj = report.as_json()
    if args.report:
        _write_json(args.report, obj)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))
    return 0


def _cmd_diff(args: argparse.Namespace) -> int:
    with open(args.ground_truth, encoding="utf-8") as fh:
        truth = json.load(fh)
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    print(json.dumps(diff_tracking(truth, report), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltesim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--capture", help="write the air capture (json lines)")
    p_run.add_argument("--report", help="write the observer's tracking report")
    p_run.add_argument("--ground-truth", help="write the simulator's ground truth")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_scan = sub.add_parser("scan", help="rank broadcasts in a capture and draft a spoof")
    p_scan.add_argument("capture")
    p_scan.set_defaults(func=_cmd_scan)

    p_replay = sub.add_parser("replay", help="rebuild the tracking report from a capture")
    p_replay.add_argument("capture")
    p_replay.add_argument("--report", help="write the report instead of printing it")
    p_replay.set_defaults(func=_cmd_replay)

    p_diff = sub.add_parser("diff", help="score a tracking report against ground truth")
    p_diff.add_argument("ground_truth")
    p_diff.add_argument("report")
    p_diff.set_defaults(func=_cmd_diff)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
