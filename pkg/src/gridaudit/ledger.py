"""Tamper-evident, append-only audit trail for one workbook.

On disk a ledger is one directory:

    ledger.log   one record per line:
                 seq<TAB>prev_hash<TAB>kind<TAB>recorded_at<TAB>base64(payload)<TAB>hash
    objects/     snapshot files named by content digest, verbatim .snap bytes

Each record hash is SHA-256 over (seq, prev_hash, kind, payload bytes,
recorded_at) with newline separators; record 0 links from 64 zeros and
record n links from record n-1's hash, so altering any stored byte or
reordering records breaks verification at or before the altered position.

Record timestamps come from the ingested snapshot, not a wall clock, so a
ledger built from the same snapshot files is byte-identical every time.

Ingesting appends INGEST, then (after the first snapshot) CHANGESET and
FINDINGS, then ATTEST when the snapshot carries an attestation.  The
trailing ATTEST closes a workflow period including its own changes.
Appends must be serialized by the caller (one writer per workbook);
readers may run concurrently.
"""

from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING

from . import audit as audit_mod
from .diffing import ChangeEvent, ChangeKind, ChangeSet, WorkbookMismatch, diff_snapshots
from .findings import RULE_SEVERITY, Finding
from .grid import (
    CellAddress,
    CellValue,
    ErrorValue,
    Snapshot,
    _escape,
    _unescape,
    content_value,
    decode_content,
    encode_content,
    format_instant,
    parse_a1,
    parse_instant,
    parse_location,
    parse_snapshot_file,
    snapshot_digest,
    write_snapshot_file,
)

if TYPE_CHECKING:
    from .controls import ControlPolicy

GENESIS_HASH = "0" * 64
RECORD_KINDS = ("INGEST", "CHANGESET", "FINDINGS", "ATTEST")

_HEX64_RE = re.compile(r"[0-9a-f]{64}")


class LedgerError(Exception):
    pass


class NonMonotonicTimestamp(LedgerError):
    pass


class LedgerCorrupt(LedgerError):
    def __init__(self, seq: int, reason: str):
        super().__init__(f"ledger record {seq} is corrupt: {reason}")
        self.seq = seq


class MissingObject(LedgerError):
    pass


@dataclass(frozen=True)
class LedgerRecord:
    seq: int
    prev_hash: str
    kind: str
    recorded_at: datetime
    payload: bytes
    hash: str


@dataclass(frozen=True)
class ChainVerification:
    ok: bool
    first_bad_seq: int | None
    record_count: int


@dataclass(frozen=True)
class CellSeries:
    address: CellAddress
    points: tuple[tuple[datetime, CellValue], ...]


@dataclass(frozen=True)
class AttributedChange:
    """A change event paired with who made it and when."""

    event: ChangeEvent
    actor: str
    at: datetime


def record_hash(seq_text: str, prev_hash: str, kind: str, payload: bytes, recorded_at_text: str) -> str:
    hasher = hashlib.sha256()
    hasher.update(f"{seq_text}\n{prev_hash}\n{kind}\n".encode("utf-8"))
    hasher.update(payload)
    hasher.update(f"\n{recorded_at_text}".encode("utf-8"))
    return hasher.hexdigest()


def encode_record(record: LedgerRecord) -> str:
    return "\t".join(
        [
            str(record.seq),
            record.prev_hash,
            record.kind,
            format_instant(record.recorded_at),
            base64.b64encode(record.payload).decode("ascii"),
            record.hash,
        ]
    )


def _check_record_line(index: int, line: str, prev_hash: str) -> str | None:
    """None when the line is a valid record at this position, else the
    reason it is not.  Field text is checked as stored so any byte flip
    breaks either the structure or the hash."""
    fields = line.split("\t")
    if len(fields) != 6:
        return f"expected 6 fields, found {len(fields)}"
    seq_text, prev_text, kind, at_text, payload_b64, hash_text = fields
    if seq_text != str(index):
        return f"sequence field {seq_text!r} at position {index}"
    if prev_text != prev_hash:
        return "previous-hash link broken"
    if kind not in RECORD_KINDS:
        return f"unknown record kind {kind!r}"
    if not _HEX64_RE.fullmatch(hash_text):
        return "hash field is not 64 lowercase hex chars"
    try:
        payload = base64.b64decode(payload_b64.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError):
        return "payload is not valid base64"
    if base64.b64encode(payload).decode("ascii") != payload_b64:
        return "payload base64 is not canonical"
    try:
        parse_instant(at_text)
    except ValueError:
        return "unparseable recorded_at"
    if record_hash(seq_text, prev_text, kind, payload, at_text) != hash_text:
        return "record hash does not match contents"
    return None


def decode_record(index: int, line: str, prev_hash: str) -> LedgerRecord:
    reason = _check_record_line(index, line, prev_hash)
    if reason is not None:
        raise LedgerCorrupt(index, reason)
    fields = line.split("\t")
    return LedgerRecord(
        seq=index,
        prev_hash=fields[1],
        kind=fields[2],
        recorded_at=parse_instant(fields[3]),
        payload=base64.b64decode(fields[4]),
        hash=fields[5],
    )


# --- payload serializations -------------------------------------------------


def serialize_ingest(digest: str, timestamp: datetime, actor: str) -> bytes:
    return f"{digest}\t{format_instant(timestamp)}\t{_escape(actor)}".encode("utf-8")


def parse_ingest(payload: bytes) -> tuple[str, datetime, str]:
    digest, at, actor = payload.decode("utf-8").split("\t")
    return digest, parse_instant(at), _unescape(actor)


def serialize_changeset(changes: ChangeSet) -> bytes:
    lines = [
        "\t".join(
            [
                "CS1",
                _escape(changes.workbook_id),
                changes.from_digest,
                changes.to_digest,
                format_instant(changes.from_time),
                format_instant(changes.to_time),
                _escape(changes.actor),
            ]
        )
    ]
    for event in changes.events:
        lines.append(
            "\t".join(
                [
                    _escape(event.address.sheet),
                    event.address.a1,
                    event.kind.value,
                    "-" if event.before is None else _escape(encode_content(event.before)),
                    "-" if event.after is None else _escape(encode_content(event.after)),
                ]
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_changeset(payload: bytes) -> ChangeSet:
    lines = payload.decode("utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    head = lines[0].split("\t")
    if len(head) != 7 or head[0] != "CS1":
        raise ValueError(f"bad change set header {lines[0]!r}")
    events = []
    for line in lines[1:]:
        sheet, a1, kind, before, after = line.split("\t")
        row, col = parse_a1(a1)
        events.append(
            ChangeEvent(
                address=CellAddress(_unescape(sheet), row, col),
                kind=ChangeKind(kind),
                before=None if before == "-" else decode_content(_unescape(before)),
                after=None if after == "-" else decode_content(_unescape(after)),
            )
        )
    return ChangeSet(
        workbook_id=_unescape(head[1]),
        from_digest=head[2],
        to_digest=head[3],
        from_time=parse_instant(head[4]),
        to_time=parse_instant(head[5]),
        actor=_unescape(head[6]),
        events=tuple(events),
    )


def serialize_findings(findings: list[Finding]) -> bytes:
    lines = []
    for f in findings:
        fields = [
            f.rule_id,
            f.severity,
            _escape(str(f.location)),
            _escape(f.message),
            _escape(f.observed),
        ]
        if f.expected is not None:
            fields.append(_escape(f.expected))
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines).encode("utf-8")


def parse_findings(payload: bytes) -> list[Finding]:
    findings = []
    lines = payload.decode("utf-8").split("\n")
    for line in lines:
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) not in (5, 6):
            raise ValueError(f"bad finding line {line!r}")
        if fields[0] not in RULE_SEVERITY:
            raise ValueError(f"unknown rule id {fields[0]!r}")
        findings.append(
            Finding(
                rule_id=fields[0],
                severity=fields[1],
                location=parse_location(_unescape(fields[2])),
                message=_unescape(fields[3]),
                observed=_unescape(fields[4]),
                expected=_unescape(fields[5]) if len(fields) == 6 else None,
            )
        )
    return findings


# --- the ledger itself -------------------------------------------------------


@dataclass
class Ledger:
    directory: Path | None = None
    raw_lines: list[str] = field(default_factory=list)
    _objects: dict[str, bytes] = field(default_factory=dict)
    _records: list[LedgerRecord | None] = field(default_factory=list)
    # a prefix view keeps reading objects from its parent's directory
    _fallback_directory: Path | None = None

    @classmethod
    def open(cls, directory: str | Path) -> "Ledger":
        """Load a ledger directory, creating it when absent.  Corrupt
        record lines are tolerated here so verify_chain can report them;
        any other operation on a corrupt ledger raises LedgerCorrupt."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "objects").mkdir(exist_ok=True)
        ledger = cls(directory=directory)
        log = directory / "ledger.log"
        if log.exists():
            raw = log.read_text(encoding="utf-8").split("\n")
            if raw and raw[-1] == "":
                raw.pop()
            ledger.raw_lines = raw
        prev = GENESIS_HASH
        for i, line in enumerate(ledger.raw_lines):
            try:
                record = decode_record(i, line, prev)
            except LedgerCorrupt:
                ledger._records.append(None)
                prev = line.split("\t")[5] if len(line.split("\t")) == 6 else ""
                continue
            ledger._records.append(record)
            prev = record.hash
        return ledger

    @property
    def records(self) -> list[LedgerRecord]:
        for i, record in enumerate(self._records):
            if record is None:
                raise LedgerCorrupt(i, "cannot operate on a corrupt ledger")
        return self._records  # type: ignore[return-value]

    @property
    def workbook_id(self) -> str | None:
        for record in self._records:
            if record is not None and record.kind == "INGEST":
                snapshot = self.load_snapshot(parse_ingest(record.payload)[0])
                return snapshot.workbook_id
        return None

    def prefix_view(self, length: int) -> "Ledger":
        """Read-only view of the first `length` records, sharing the
        object store.  Used to re-evaluate a delta in its original state."""
        view = Ledger(directory=None, raw_lines=self.raw_lines[:length])
        view._records = list(self._records[:length])
        view._objects = self._objects
        view._fallback_directory = self.directory
        return view

    # --- object store ---

    def store_snapshot(self, snapshot: Snapshot) -> str:
        digest = snapshot_digest(snapshot)
        if digest not in self._objects:
            self._objects[digest] = write_snapshot_file(snapshot).encode("utf-8")
            if self.directory is not None:
                path = self.directory / "objects" / digest
                if not path.exists():
                    path.write_bytes(self._objects[digest])
        return digest

    def load_snapshot(self, digest: str) -> Snapshot:
        data = self._objects.get(digest)
        if data is None:
            for directory in (self.directory, self._fallback_directory):
                if directory is not None and (directory / "objects" / digest).exists():
                    data = (directory / "objects" / digest).read_bytes()
                    break
            else:
                raise MissingObject(f"no stored snapshot for digest {digest[:12]}...")
            self._objects[digest] = data
        return parse_snapshot_file(data.decode("utf-8"))

    # --- appends ---

    def append_record(self, kind: str, payload: bytes, recorded_at: datetime) -> LedgerRecord:
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        records = self.records  # raises on corruption before appending
        prev = records[-1].hash if records else GENESIS_HASH
        seq = len(records)
        at_text = format_instant(recorded_at)
        record = LedgerRecord(
            seq=seq,
            prev_hash=prev,
            kind=kind,
            recorded_at=parse_instant(at_text),
            payload=payload,
            hash=record_hash(str(seq), prev, kind, payload, at_text),
        )
        line = encode_record(record)
        if self.directory is not None:
            with (self.directory / "ledger.log").open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        self.raw_lines.append(line)
        self._records.append(record)
        return record

    # --- queries ---

    def ingests(self) -> list[tuple[str, datetime, str]]:
        """(digest, timestamp, actor) per INGEST record, in order."""
        return [parse_ingest(r.payload) for r in self.records if r.kind == "INGEST"]

    def changesets(self) -> list[ChangeSet]:
        return [parse_changeset(r.payload) for r in self.records if r.kind == "CHANGESET"]

    def latest_snapshot(self) -> Snapshot | None:
        ingests = self.ingests()
        if not ingests:
            return None
        return self.load_snapshot(ingests[-1][0])

    def verify_chain(self) -> ChainVerification:
        prev = GENESIS_HASH
        for i, line in enumerate(self.raw_lines):
            if _check_record_line(i, line, prev) is not None:
                return ChainVerification(False, i, len(self.raw_lines))
            prev = line.split("\t")[5]
        return ChainVerification(True, None, len(self.raw_lines))

    def series_for_cell(self, address: CellAddress) -> CellSeries:
        """Value history of one cell across ingested snapshots, oldest
        first.  Cells that are absent, have no value, or hold an error
        value leave a gap."""
        points: list[tuple[datetime, CellValue]] = []
        for digest, at, _actor in self.ingests():
            cell = self.load_snapshot(digest).cells.get(address)
            if cell is None:
                continue
            value = content_value(cell)
            if value is None or isinstance(value, ErrorValue):
                continue
            points.append((at, value))
        return CellSeries(address, tuple(points))

    def change_history(self, address: CellAddress) -> list[AttributedChange]:
        history = []
        for changes in self.changesets():
            for event in changes.events:
                if event.address == address:
                    history.append(AttributedChange(event, changes.actor, changes.to_time))
        return history

    def findings_records(self) -> list[tuple[LedgerRecord, list[Finding]]]:
        return [
            (r, parse_findings(r.payload)) for r in self.records if r.kind == "FINDINGS"
        ]

    # --- ingestion ---

    def ingest_snapshot(
        self,
        snapshot: Snapshot,
        cfg: "audit_mod.AuditConfig | None" = None,
        policy: "ControlPolicy | None" = None,
    ) -> list[Finding]:
        """Record a new snapshot: stores its bytes, appends INGEST, and
        when a prior snapshot exists diffs against it, evaluates the
        static audit plus any control policy, and appends CHANGESET and
        FINDINGS records.  Returns the new findings.

        Re-ingesting content whose digest equals the latest is a no-op
        unless it carries an attestation (a sign-off is worth recording
        even without cell edits)."""
        existing = self.workbook_id
        if existing is not None and snapshot.workbook_id != existing:
            raise WorkbookMismatch(
                f"ledger tracks {existing!r}, snapshot is {snapshot.workbook_id!r}"
            )
        if policy is not None and policy.workbook_id != snapshot.workbook_id:
            raise WorkbookMismatch(
                f"policy is for {policy.workbook_id!r}, snapshot is {snapshot.workbook_id!r}"
            )
        digest = snapshot_digest(snapshot)
        ingests = self.ingests()
        if ingests:
            last_digest, last_at, _ = ingests[-1]
            if digest == last_digest and not snapshot.attestation:
                return []
            if snapshot.timestamp <= last_at:
                raise NonMonotonicTimestamp(
                    f"snapshot at {format_instant(snapshot.timestamp)} does not "
                    f"advance past {format_instant(last_at)}"
                )
        previous = self.latest_snapshot()
        self.store_snapshot(snapshot)

        findings: list[Finding] = []
        changes: ChangeSet | None = None
        if previous is not None:
            changes = diff_snapshots(previous, snapshot)
            findings.extend(audit_mod.audit_workbook(snapshot, cfg))
            if policy is not None:
                from .controls import evaluate_policies

                findings.extend(evaluate_policies(changes, policy, self))

        self.append_record("INGEST", serialize_ingest(digest, snapshot.timestamp, snapshot.actor), snapshot.timestamp)
        if changes is not None:
            self.append_record("CHANGESET", serialize_changeset(changes), snapshot.timestamp)
            self.append_record("FINDINGS", serialize_findings(findings), snapshot.timestamp)
        if snapshot.attestation:
            self.append_record("ATTEST", _escape(snapshot.attestation).encode("utf-8"), snapshot.timestamp)
        return findings
