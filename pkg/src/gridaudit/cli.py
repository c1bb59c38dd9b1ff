"""Command-line interface.

Subcommands wire ingestion, auditing, policy checks, queries and reports
into one tool.  Exit codes are a stable scripting contract:

    0  success, no critical findings
    1  completed, critical findings present
    2  usage error (bad arguments, malformed inputs, rejected ingest)
    3  integrity failure (hash chain verification or digest mismatch)

Findings print one per line on stdout as
severity<TAB>rule_id<TAB>location<TAB>message; diagnostics go to stderr.
Given identical inputs (and a fixed --generated-at for reports) every
command produces byte-identical output.
"""

from __future__ import annotations

import argparse
import fcntl
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from .assess import EmptyLedger, build_profile, build_report, render_report_json, render_report_text
from .audit import AuditConfig, ConfigError, audit_workbook, load_audit_config
from .controls import ControlPolicy, PolicyError, TrendRule, evaluate_policies, parse_policy_file, trend_deviation
from .diffing import DiffError, DigestMismatch, diff_snapshots
from .findings import Finding, has_critical
from .grid import (
    Number,
    SnapshotError,
    format_instant,
    parse_instant,
    parse_qualified_address,
    parse_snapshot_file,
    render_content,
    render_value,
)
from .ledger import CellSeries, Ledger, LedgerCorrupt, LedgerError, MissingObject, NonMonotonicTimestamp

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3


def _print_findings(findings: list[Finding]) -> int:
    for f in findings:
        print(f"{f.severity}\t{f.rule_id}\t{f.location}\t{f.message}")
    return EXIT_FINDINGS if has_critical(findings) else EXIT_OK


def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_config(path: str | None) -> AuditConfig | None:
    return load_audit_config(_read_text(path)) if path else None


def _load_policy(path: str | None) -> ControlPolicy | None:
    return parse_policy_file(_read_text(path)) if path else None


def _open_existing(ledger_dir: str) -> Ledger:
    """Read-only commands must not conjure an empty ledger from a typo."""
    path = Path(ledger_dir)
    if not path.is_dir():
        raise FileNotFoundError(f"no ledger directory at {ledger_dir!r}")
    return Ledger.open(path)


@contextmanager
def _exclusive_lock(directory: Path):
    """Writer lock for a ledger directory, held on the log file itself."""
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "ledger.log").open("a", encoding="utf-8") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def _cmd_ingest(args) -> int:
    policy = _load_policy(args.policy)
    cfg = _load_config(args.config)
    snapshot = parse_snapshot_file(_read_text(args.snapshot))
    with _exclusive_lock(Path(args.ledger_dir)):
        ledger = Ledger.open(args.ledger_dir)
        findings = ledger.ingest_snapshot(snapshot, cfg=cfg, policy=policy)
    return _print_findings(findings)


def _cmd_audit(args) -> int:
    snapshot = parse_snapshot_file(_read_text(args.snapshot))
    return _print_findings(audit_workbook(snapshot, _load_config(args.config)))


def _cmd_diff(args) -> int:
    before = parse_snapshot_file(_read_text(args.snapshot_a))
    after = parse_snapshot_file(_read_text(args.snapshot_b))
    for event in diff_snapshots(before, after).events:
        print(
            f"{event.kind.value}\t{event.address}\t"
            f"{render_content(event.before)}\t{render_content(event.after)}"
        )
    return EXIT_OK


def _cmd_check(args) -> int:
    policy = parse_policy_file(_read_text(args.policy))
    ledger = _open_existing(args.ledger_dir)
    changeset_seqs = [r.seq for r in ledger.records if r.kind == "CHANGESET"]
    if not changeset_seqs:
        print("error: ledger holds no change sets to check", file=sys.stderr)
        return EXIT_USAGE
    seq = changeset_seqs[-1]
    changes = ledger.changesets()[-1]
    cut = seq - 1 if seq > 0 and ledger.records[seq - 1].kind == "INGEST" else seq
    view = ledger.prefix_view(cut)
    return _print_findings(evaluate_policies(changes, policy, view))


def _cmd_trend(args) -> int:
    ledger = _open_existing(args.ledger_dir)
    address = parse_qualified_address(args.cell)
    series = ledger.series_for_cell(address)
    for at, value in series.points:
        print(f"{format_instant(at)}\t{render_value(value)}")
    numeric = [(at, v) for at, v in series.points if isinstance(v, Number)]
    rule = TrendRule(address=address, window=args.window)
    if len(numeric) < rule.min_points + 1:
        print("TREND\tinsufficient-data")
        return EXIT_OK
    history = CellSeries(address, tuple(numeric[:-1]))
    verdict = trend_deviation(history, numeric[-1][1].value, rule)
    flag = "true" if verdict.violated else "false"
    print(
        f"TREND\tmean={verdict.mean:.6f}\tstddev={verdict.stddev:.6f}"
        f"\tz={verdict.z:.6f}\tviolated={flag}"
    )
    return EXIT_OK


def _cmd_history(args) -> int:
    ledger = _open_existing(args.ledger_dir)
    address = parse_qualified_address(args.cell)
    for change in ledger.change_history(address):
        print(
            f"{format_instant(change.at)}\t{change.actor}\t{change.event.kind.value}\t"
            f"{render_content(change.event.before)}\t{render_content(change.event.after)}"
        )
    return EXIT_OK


def _cmd_profile(args) -> int:
    ledger = _open_existing(args.ledger_dir)
    all_findings = [f for _, fs in ledger.findings_records() for f in fs]
    profile = build_profile(ledger, all_findings)
    m = profile.metrics
    print(f"workbook\t{ledger.workbook_id or '-'}")
    print(f"ingests\t{m.ingest_count}")
    print(f"distinct_actors\t{m.distinct_actors}")
    print(f"persistence_days\t{m.persistence_days:.4f}")
    print(f"mean_structural_volatility\t{float(m.mean_structural_volatility):.4f}")
    print(f"mean_data_volatility\t{float(m.mean_data_volatility):.4f}")
    print(f"classification\t{profile.classification}")
    print(f"risk_score\t{profile.risk_score:.1f}")
    for reason in profile.rationale:
        print(f"rationale\t{reason}")
    return EXIT_OK


def _cmd_report(args) -> int:
    ledger = _open_existing(args.ledger_dir)
    policy = _load_policy(args.policy)
    generated = parse_instant(args.generated_at) if args.generated_at else datetime.now(timezone.utc)
    report = build_report(
        ledger,
        policy,
        (parse_instant(getattr(args, "from")), parse_instant(args.to)),
        generated_at=generated,
    )
    rendered = render_report_json(report) if args.format == "json" else render_report_text(report)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
    else:
        print(rendered, end="")
    if not report.chain_verified:
        return EXIT_INTEGRITY
    return EXIT_FINDINGS if report.material_weaknesses else EXIT_OK


def _cmd_verify(args) -> int:
    ledger = _open_existing(args.ledger_dir)
    result = ledger.verify_chain()
    if result.ok:
        print(f"OK n={result.record_count}")
        return EXIT_OK
    print(f"FAIL seq={result.first_bad_seq} n={result.record_count}")
    return EXIT_INTEGRITY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridaudit",
        description="Audit spreadsheet snapshots, track changes in a tamper-evident ledger, "
        "enforce control policies and render compliance reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="record a snapshot in a ledger and evaluate controls")
    p.add_argument("ledger_dir")
    p.add_argument("snapshot")
    p.add_argument("--policy")
    p.add_argument("--config")
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("audit", help="statically audit one snapshot file")
    p.add_argument("snapshot")
    p.add_argument("--config")
    p.set_defaults(handler=_cmd_audit)

    p = sub.add_parser("diff", help="cell-level differences between two snapshot files")
    p.add_argument("snapshot_a")
    p.add_argument("snapshot_b")
    p.set_defaults(handler=_cmd_diff)

    p = sub.add_parser("check", help="re-evaluate the latest recorded delta against a policy")
    p.add_argument("ledger_dir")
    p.add_argument("--policy", required=True)
    p.set_defaults(handler=_cmd_check)

    p = sub.add_parser("trend", help="value history and trend verdict for one cell")
    p.add_argument("ledger_dir")
    p.add_argument("cell")
    p.add_argument("--window", type=int, default=20)
    p.set_defaults(handler=_cmd_trend)

    p = sub.add_parser("history", help="attributed change history for one cell")
    p.add_argument("ledger_dir")
    p.add_argument("cell")
    p.set_defaults(handler=_cmd_history)

    p = sub.add_parser("profile", help="usage metrics, classification and risk score")
    p.add_argument("ledger_dir")
    p.set_defaults(handler=_cmd_profile)

    p = sub.add_parser("report", help="compliance report over a period")
    p.add_argument("ledger_dir")
    p.add_argument("--from", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--generated-at", dest="generated_at")
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("verify", help="verify the ledger hash chain")
    p.add_argument("ledger_dir")
    p.set_defaults(handler=_cmd_verify)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        if exc.code is None:
            return EXIT_OK
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.handler(args)
    except (LedgerCorrupt, DigestMismatch, MissingObject) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (
        SnapshotError,
        DiffError,
        PolicyError,
        ConfigError,
        NonMonotonicTimestamp,
        EmptyLedger,
        ValueError,
        LedgerError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
