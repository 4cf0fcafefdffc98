"""Command-line front end.

    rollupsim run --scenario F --report F --l1-out F [--workers N] [--seed N]
    rollupsim derive --l1 F [--expect-root HEX]
    rollupsim quarantine REPORT list
    rollupsim quarantine REPORT show HASH

Exit codes: 0 ok, 2 scenario error, 3 root mismatch, 4 derivation gap,
5 not found.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .core import EncodingError, TxHash
from .derivation import DerivationGap, derive
from .detection import UnauthorizedInvariant
from .formats import parse_history, parse_report, parse_scenario, render_history, render_report
from .l1da import L1Error
from .sequencer import ScenarioError, run

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_ROOT_MISMATCH = 3
EXIT_DERIVATION = 4
EXIT_NOT_FOUND = 5


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    try:
        text = path.read_text()
    except OSError as exc:
        return _fail(EXIT_SCENARIO, f"cannot read scenario: {exc}")
    try:
        scenario = parse_scenario(text, default_name=path.stem)
        if args.workers is not None:
            scenario.seq_config = dataclasses.replace(scenario.seq_config, workers=args.workers)
        outcome = run(scenario)
    except (ScenarioError, UnauthorizedInvariant, EncodingError, L1Error, ValueError) as exc:
        return _fail(EXIT_SCENARIO, str(exc))
    outcome.report.l1_export = args.l1_out
    Path(args.report).write_text(render_report(outcome.report))
    Path(args.l1_out).write_text(render_history(outcome.history))
    print(f"final_root {outcome.report.final_root.hex0x()}")
    return EXIT_OK


def cmd_derive(args: argparse.Namespace) -> int:
    try:
        text = Path(args.l1).read_text()
    except OSError as exc:
        return _fail(EXIT_DERIVATION, f"cannot read history: {exc}")
    try:
        history = parse_history(text)
        chain = derive(history)
    except DerivationGap as exc:
        return _fail(EXIT_DERIVATION, f"derivation gap: {exc}")
    except (ScenarioError, EncodingError, L1Error, ValueError, KeyError) as exc:
        return _fail(EXIT_DERIVATION, f"unusable history: {exc}")
    print(f"final_root {chain.final_root.hex0x()}")
    if args.expect_root is not None:
        expected = args.expect_root[2:] if args.expect_root.startswith("0x") else args.expect_root
        if chain.final_root.hex() != expected.lower():
            return _fail(EXIT_ROOT_MISMATCH, f"root mismatch: expected 0x{expected.lower()}")
    return EXIT_OK


def cmd_quarantine(args: argparse.Namespace) -> int:
    try:
        report = parse_report(Path(args.report).read_text())
    except OSError as exc:
        return _fail(EXIT_SCENARIO, f"cannot read report: {exc}")
    except (ScenarioError, EncodingError, ValueError, KeyError) as exc:
        return _fail(EXIT_SCENARIO, f"unusable report: {exc}")
    if args.action == "list":
        for entry in report.entries:
            print(
                f"{entry.key.hex0x()} kind={entry.kind} sender={entry.sender.hex0x()} "
                f"block={entry.admitted_block} damage={entry.damage}"
            )
        return EXIT_OK
    try:
        key = TxHash.from_hex(args.hash)
    except (EncodingError, ValueError):
        return _fail(EXIT_NOT_FOUND, f"bad hash {args.hash!r}")
    matches = [e for e in report.entries if e.key == key]
    if not matches:
        return _fail(EXIT_NOT_FOUND, f"no quarantine entry {key.hex0x()}")
    for entry in matches:
        print(f"entry {entry.key.hex0x()}")
        print(f"  kind {entry.kind}")
        print(f"  sender {entry.sender.hex0x()}")
        print(f"  sequence {entry.sequence}")
        print(f"  admitted_at {entry.admitted_at} (block {entry.admitted_block})")
        print(f"  violated {', '.join(entry.violated) or '-'}")
        print(f"  victims {', '.join(v.hex0x() for v in entry.victims) or '-'}")
        print(f"  damage {entry.damage}")
    for event in report.audit:
        if event.entry == key:
            print(f"  at={event.at} {event.kind} actor={event.actor} {event.detail}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rollupsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--report", required=True)
    p_run.add_argument("--l1-out", required=True)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None, help="ignored; runs are deterministic")
    p_run.set_defaults(func=cmd_run)

    p_derive = sub.add_parser("derive", help="re-derive the chain from an L1 history file")
    p_derive.add_argument("--l1", required=True)
    p_derive.add_argument("--expect-root", default=None)
    p_derive.set_defaults(func=cmd_derive)

    p_q = sub.add_parser("quarantine", help="inspect a run report's quarantine trail")
    p_q.add_argument("report")
    p_q.add_argument("action", choices=["list", "show"])
    p_q.add_argument("hash", nargs="?")
    p_q.set_defaults(func=cmd_quarantine)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "quarantine" and args.action == "show" and not args.hash:
        return _fail(EXIT_NOT_FOUND, "show needs a transaction hash")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
