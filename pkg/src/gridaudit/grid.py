"""Workbook data model and the canonical snapshot file format.

A snapshot is a full point-in-time capture of one workbook.  The on-disk
form (extension ``.snap``) is line-oriented, tab-separated, UTF-8 with LF
line endings:

    SNAP1<TAB>workbook_id<TAB>timestamp<TAB>actor
    ATTEST<TAB>free text                       (optional, at most one)
    sheet<TAB>A1-address<TAB>V<TAB>N<TAB>5     (literal number)
    sheet<TAB>A1-address<TAB>V<TAB>T<TAB>text  (literal text)
    sheet<TAB>A1-address<TAB>V<TAB>B<TAB>TRUE  (literal boolean)
    sheet<TAB>A1-address<TAB>V<TAB>E<TAB>#REF! (literal error)
    sheet<TAB>A1-address<TAB>F<TAB>=A1+1[<TAB>kind<TAB>payload]  (formula,
                                                optional cached value)

Backslash escapes (``\\\\``, ``\\t``, ``\\n``, ``\\r``) keep every field on
one line, so arbitrary text payloads round-trip.  Empty cells are never
stored; absence from the cell map means empty.  Timestamps are RFC 3339
and are normalized to UTC on parse.

The content digest is SHA-256 over the canonical cell lines plus a reduced
header holding only the workbook id.  Timestamp, actor and attestation are
excluded so that a re-save without edits keeps its digest and change sets
can be replayed digest-to-digest.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal

ERROR_CODES = frozenset(
    {"#DIV/0!", "#N/A", "#NAME?", "#NULL!", "#NUM!", "#REF!", "#VALUE!"}
)

MAX_COL = 16384

_NUMBER_RE = re.compile(r"-?[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?")
_A1_RE = re.compile(r"([A-Za-z]{1,3})([0-9]+)")


class SnapshotError(ValueError):
    """Base for snapshot file format errors."""


class MalformedHeader(SnapshotError):
    pass


class BadTimestamp(SnapshotError):
    pass


class BadAddress(SnapshotError):
    """A cell line that cannot be parsed (address, kind or payload)."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DuplicateCell(SnapshotError):
    def __init__(self, address: "CellAddress"):
        super().__init__(f"duplicate cell {address}")
        self.address = address


def col_to_letters(col: int) -> str:
    """1 -> A, 26 -> Z, 27 -> AA (bijective base 26)."""
    if col < 1:
        raise ValueError(f"column must be >= 1, got {col}")
    letters = ""
    while col > 0:
        col, rem = divmod(col - 1, 26)
        letters = chr(ord("A") + rem) + letters
    return letters


def letters_to_col(letters: str) -> int:
    col = 0
    for ch in letters.upper():
        if not "A" <= ch <= "Z":
            raise ValueError(f"bad column letters {letters!r}")
        col = col * 26 + (ord(ch) - ord("A") + 1)
    return col


@dataclass(frozen=True, eq=False)
class CellAddress:
    """1-based cell location.  Sheet comparisons are case-insensitive but
    the stored case is preserved for display."""

    sheet: str
    row: int
    col: int

    def __post_init__(self):
        if not self.sheet:
            raise ValueError("sheet name must be non-empty")
        if self.row < 1 or self.col < 1:
            raise ValueError(f"row/col must be >= 1, got {self.row}/{self.col}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellAddress):
            return NotImplemented
        return self.sort_key() == other.sort_key()

    def __hash__(self) -> int:
        return hash(self.sort_key())

    def sort_key(self) -> tuple[str, int, int]:
        return (self.sheet.lower(), self.row, self.col)

    @property
    def a1(self) -> str:
        return f"{col_to_letters(self.col)}{self.row}"

    def __str__(self) -> str:
        return f"{self.sheet}!{self.a1}"


@dataclass(frozen=True)
class Region:
    """Rectangular block of cells on one sheet, inclusive bounds."""

    sheet: str
    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if not self.sheet:
            raise ValueError("sheet name must be non-empty")
        if not (1 <= self.top <= self.bottom and 1 <= self.left <= self.right):
            raise ValueError(f"bad region bounds {self}")

    def contains(self, address: CellAddress) -> bool:
        return (
            address.sheet.lower() == self.sheet.lower()
            and self.top <= address.row <= self.bottom
            and self.left <= address.col <= self.right
        )

    def sort_key(self) -> tuple[str, int, int]:
        return (self.sheet.lower(), self.top, self.left)

    def __str__(self) -> str:
        start = f"{col_to_letters(self.left)}{self.top}"
        if (self.top, self.left) == (self.bottom, self.right):
            return f"{self.sheet}!{start}"
        end = f"{col_to_letters(self.right)}{self.bottom}"
        return f"{self.sheet}!{start}:{end}"


@dataclass(frozen=True)
class Number:
    value: Decimal

    def __post_init__(self):
        if not self.value.is_finite():
            raise ValueError(f"non-finite number {self.value}")


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class Boolean:
    value: bool


@dataclass(frozen=True)
class ErrorValue:
    code: str

    def __post_init__(self):
        if self.code not in ERROR_CODES:
            raise ValueError(f"unknown error code {self.code!r}")


CellValue = Number | Text | Boolean | ErrorValue


@dataclass(frozen=True)
class Literal:
    value: CellValue


@dataclass(frozen=True)
class Formula:
    source: str
    cached: CellValue | None = None

    def __post_init__(self):
        if not self.source.startswith("="):
            raise ValueError(f"formula source must start with '=': {self.source!r}")


CellContent = Literal | Formula


@dataclass(frozen=True)
class Snapshot:
    workbook_id: str
    timestamp: datetime
    actor: str
    cells: dict[CellAddress, CellContent] = field(default_factory=dict)
    attestation: str | None = None

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("snapshot timestamp must be timezone-aware")
        object.__setattr__(self, "timestamp", self.timestamp.astimezone(timezone.utc))

    def formula_cells(self) -> dict[CellAddress, Formula]:
        return {a: c for a, c in self.cells.items() if isinstance(c, Formula)}

    def literal_cells(self) -> dict[CellAddress, Literal]:
        return {a: c for a, c in self.cells.items() if isinstance(c, Literal)}

    def sheets(self) -> list[str]:
        """Stored sheet names, deduplicated case-insensitively, sorted."""
        seen: dict[str, str] = {}
        for address in self.cells:
            seen.setdefault(address.sheet.lower(), address.sheet)
        return [seen[k] for k in sorted(seen)]


def canonical_decimal(value: Decimal) -> str:
    """Deterministic text for a Decimal: equal values render identically,
    no exponent notation, no trailing zeros."""
    if value == 0:
        return "0"
    return format(value.normalize(), "f")


def format_instant(dt: datetime) -> str:
    """RFC 3339 text in UTC with a Z suffix."""
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_instant(text: str) -> datetime:
    raw = text[:-1] + "+00:00" if text.endswith("Z") else text
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise BadTimestamp(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None:
        raise BadTimestamp(f"timestamp {text!r} has no timezone offset")
    return dt.astimezone(timezone.utc)


def _escape(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


_UNESCAPE = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def _unescape(text: str) -> str:
    if "\\" not in text:
        return text
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text) or text[i + 1] not in _UNESCAPE:
                raise ValueError(f"bad escape in {text!r}")
            out.append(_UNESCAPE[text[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def parse_a1(text: str) -> tuple[int, int]:
    """A1-style address text -> (row, col)."""
    m = _A1_RE.fullmatch(text)
    if not m:
        raise ValueError(f"bad A1 address {text!r}")
    col = letters_to_col(m.group(1))
    row = int(m.group(2))
    if row < 1 or col > MAX_COL:
        raise ValueError(f"address {text!r} out of range")
    return row, col


def parse_qualified_address(text: str) -> CellAddress:
    """'Sheet1!B2' -> CellAddress."""
    sheet, sep, addr = text.rpartition("!")
    if not sep or not sheet:
        raise ValueError(f"address {text!r} must be sheet-qualified")
    row, col = parse_a1(addr)
    return CellAddress(sheet, row, col)


def parse_region(text: str) -> Region:
    """'Sheet1!A1:D20' or a single cell 'Sheet1!B2' -> Region."""
    sheet, sep, rect = text.rpartition("!")
    if not sep or not sheet:
        raise ValueError(f"region {text!r} must be sheet-qualified")
    if ":" in rect:
        start, _, end = rect.partition(":")
        top, left = parse_a1(start)
        bottom, right = parse_a1(end)
    else:
        top, left = parse_a1(rect)
        bottom, right = top, left
    return Region(sheet, min(top, bottom), min(left, right), max(top, bottom), max(left, right))


def parse_location(text: str) -> CellAddress | Region:
    sheet, sep, rest = text.rpartition("!")
    if sep and ":" in rest:
        return parse_region(text)
    return parse_qualified_address(text)


def _value_fields(value: CellValue) -> list[str]:
    if isinstance(value, Number):
        return ["N", canonical_decimal(value.value)]
    if isinstance(value, Text):
        return ["T", _escape(value.value)]
    if isinstance(value, Boolean):
        return ["B", "TRUE" if value.value else "FALSE"]
    return ["E", value.code]


def _parse_value_fields(kind: str, payload: str) -> CellValue:
    if kind == "N":
        if not _NUMBER_RE.fullmatch(payload):
            raise ValueError(f"bad number {payload!r}")
        return Number(Decimal(payload))
    if kind == "T":
        return Text(_unescape(payload))
    if kind == "B":
        if payload not in ("TRUE", "FALSE"):
            raise ValueError(f"bad boolean {payload!r}")
        return Boolean(payload == "TRUE")
    if kind == "E":
        return ErrorValue(payload)
    raise ValueError(f"unknown value kind {kind!r}")


def _content_fields(content: CellContent) -> list[str]:
    if isinstance(content, Literal):
        return ["V", *_value_fields(content.value)]
    fields = ["F", _escape(content.source)]
    if content.cached is not None:
        fields.extend(_value_fields(content.cached))
    return fields


def _cell_line(address: CellAddress, content: CellContent) -> str:
    return "\t".join([_escape(address.sheet), address.a1, *_content_fields(content)])


def _sorted_cell_lines(snapshot: Snapshot) -> list[str]:
    return [
        _cell_line(address, snapshot.cells[address])
        for address in sorted(snapshot.cells, key=CellAddress.sort_key)
    ]


def write_snapshot_file(snapshot: Snapshot) -> str:
    """Canonical text form: header, optional ATTEST line, then cell lines
    sorted by (sheet lowercase, row, col) so output is byte-deterministic."""
    lines = [
        "\t".join(
            [
                "SNAP1",
                _escape(snapshot.workbook_id),
                format_instant(snapshot.timestamp),
                _escape(snapshot.actor),
            ]
        )
    ]
    if snapshot.attestation is not None:
        lines.append(f"ATTEST\t{_escape(snapshot.attestation)}")
    lines.extend(_sorted_cell_lines(snapshot))
    return "\n".join(lines) + "\n"


def _parse_cell_line(lineno: int, line: str) -> tuple[CellAddress, CellContent]:
    fields = line.split("\t")
    if len(fields) < 4:
        raise BadAddress(lineno, f"cell line needs at least 4 fields: {line!r}")
    try:
        sheet = _unescape(fields[0])
        if not sheet:
            raise ValueError("empty sheet name")
        row, col = parse_a1(fields[1])
        address = CellAddress(sheet, row, col)
    except ValueError as exc:
        raise BadAddress(lineno, str(exc)) from exc
    kind = fields[2]
    try:
        if kind == "V":
            if len(fields) != 5:
                raise ValueError("literal line needs exactly 5 fields")
            return address, Literal(_parse_value_fields(fields[3], fields[4]))
        if kind == "F":
            source = _unescape(fields[3])
            if len(fields) == 4:
                return address, Formula(source)
            if len(fields) == 6:
                return address, Formula(source, _parse_value_fields(fields[4], fields[5]))
            raise ValueError("formula line needs 4 or 6 fields")
        raise ValueError(f"unknown cell kind {kind!r}")
    except BadAddress:
        raise
    except ValueError as exc:
        raise BadAddress(lineno, str(exc)) from exc


def parse_snapshot_file(content: str) -> Snapshot:
    # the format is LF-delimited; split("\n") keeps exotic line-breaking
    # characters (NEL, VT, FF, U+2028...) safely inside fields
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedHeader("empty snapshot file")
    header = lines[0].split("\t")
    if len(header) != 4 or header[0] != "SNAP1":
        raise MalformedHeader(f"bad header line: {lines[0]!r}")
    try:
        workbook_id = _unescape(header[1])
        actor = _unescape(header[3])
    except ValueError as exc:
        raise MalformedHeader(str(exc)) from exc
    if not workbook_id:
        raise MalformedHeader("empty workbook id")
    timestamp = parse_instant(header[2])

    body = lines[1:]
    attestation = None
    if body and body[0].startswith("ATTEST\t"):
        try:
            attestation = _unescape(body[0][len("ATTEST\t") :])
        except ValueError as exc:
            raise MalformedHeader(str(exc)) from exc
        body = body[1:]

    cells: dict[CellAddress, CellContent] = {}
    for offset, line in enumerate(body):
        if not line:
            continue
        lineno = len(lines) - len(body) + offset + 1
        address, cell = _parse_cell_line(lineno, line)
        if address in cells:
            raise DuplicateCell(address)
        cells[address] = cell
    return Snapshot(workbook_id, timestamp, actor, cells, attestation)


def encode_content(content: CellContent) -> str:
    """Tab-joined cell content fields (the cell-line tail after the
    address), reused inside ledger payloads."""
    return "\t".join(_content_fields(content))


def decode_content(text: str) -> CellContent:
    fields = text.split("\t")
    kind = fields[0]
    if kind == "V" and len(fields) == 3:
        return Literal(_parse_value_fields(fields[1], fields[2]))
    if kind == "F":
        source = _unescape(fields[1])
        if len(fields) == 2:
            return Formula(source)
        if len(fields) == 4:
            return Formula(source, _parse_value_fields(fields[2], fields[3]))
    raise ValueError(f"bad cell content encoding {text!r}")


def snapshot_digest(snapshot: Snapshot) -> str:
    """64 lowercase hex chars of SHA-256 over the content-only canonical
    bytes (workbook id plus sorted cell lines)."""
    lines = [f"SNAP1\t{_escape(snapshot.workbook_id)}"]
    lines.extend(_sorted_cell_lines(snapshot))
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def content_value(content: CellContent) -> CellValue | None:
    """The observable value of a cell: a literal's value or a formula's
    cached value, if any."""
    if isinstance(content, Literal):
        return content.value
    return content.cached


def render_value(value: CellValue) -> str:
    """Compact one-field display text for a cell value."""
    if isinstance(value, Number):
        return canonical_decimal(value.value)
    if isinstance(value, Text):
        return '"' + value.value.replace('"', '""') + '"'
    if isinstance(value, Boolean):
        return "TRUE" if value.value else "FALSE"
    return value.code


def render_content(content: CellContent | None) -> str:
    """Display text for a cell: formula source, literal value, or '-'."""
    if content is None:
        return "-"
    if isinstance(content, Formula):
        return content.source
    return render_value(content.value)
