"""Static audit of one snapshot for error-prone logic.

Four detectors, each a pure function of (snapshot, config):

* copy-region inconsistencies: within each maximal horizontal and vertical
  run of contiguous formula cells, cells whose host-relative normalized
  form deviates from a qualified majority form
* deep IF nesting beyond a threshold
* numeric constants buried inside formula logic
* literal or cached error values

Unparseable formulas degrade to PARSE_FAILURE findings so one bad cell
cannot abort a workbook audit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction

from .findings import Finding, make_finding
from .formula import (
    Binary,
    Call,
    FormulaAst,
    FormulaError,
    NumberLit,
    Range,
    Ref,
    Unary,
    normalize_relative,
    parse_formula,
)
from .grid import (
    CellAddress,
    ErrorValue,
    Formula,
    Literal,
    Snapshot,
    canonical_decimal,
    content_value,
)

DEFAULT_CONSTANT_WHITELIST = frozenset(
    {Decimal(0), Decimal(1), Decimal(-1), Decimal(100)}
)


@dataclass(frozen=True)
class AuditConfig:
    if_depth_threshold: int = 3
    min_run_length: int = 3
    majority_fraction: Fraction = Fraction(2, 3)
    constant_whitelist: frozenset[Decimal] = DEFAULT_CONSTANT_WHITELIST

    def __post_init__(self):
        if self.if_depth_threshold < 1:
            raise ValueError("if_depth_threshold must be >= 1")
        if self.min_run_length < 3:
            raise ValueError("min_run_length must be >= 3")
        if not Fraction(1, 2) < self.majority_fraction <= 1:
            raise ValueError("majority_fraction must be in (1/2, 1]")


class ConfigError(ValueError):
    pass


def load_audit_config(text: str) -> AuditConfig:
    """Parse a `key = value` config file; absent keys keep defaults."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected `key = value`")
        key, value = key.strip(), value.strip()
        try:
            if key == "if_depth_threshold" or key == "min_run_length":
                values[key] = int(value)
            elif key == "majority_fraction":
                values[key] = Fraction(value)
            elif key == "constant_whitelist":
                values[key] = frozenset(
                    Decimal(part.strip()) for part in value.split(",") if part.strip()
                )
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except (ValueError, ArithmeticError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    try:
        return AuditConfig(**values)  # type: ignore[arg-type]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class _ParsedCells:
    """Formula cells split into parsed trees and parse failures."""

    trees: dict[CellAddress, FormulaAst] = field(default_factory=dict)
    failures: dict[CellAddress, str] = field(default_factory=dict)


def _parse_cells(snapshot: Snapshot) -> _ParsedCells:
    parsed = _ParsedCells()
    for address, cell in snapshot.formula_cells().items():
        try:
            parsed.trees[address] = parse_formula(cell.source)
        except FormulaError as exc:
            parsed.failures[address] = str(exc)
    return parsed


def _normal_form(snapshot: Snapshot, parsed: _ParsedCells, address: CellAddress) -> str:
    """Equivalence key for copy-consistency: normalized text for parseable
    formulas, the raw source otherwise (a broken cell still breaks runs'
    uniformity rather than splitting them)."""
    tree = parsed.trees.get(address)
    if tree is not None:
        return normalize_relative(tree, address)
    cell = snapshot.cells[address]
    assert isinstance(cell, Formula)
    return f"!unparsed:{cell.source}"


def _runs(positions: list[int], min_len: int) -> list[list[int]]:
    """Maximal runs of consecutive integers, keeping those >= min_len."""
    runs: list[list[int]] = []
    current: list[int] = []
    for p in sorted(positions):
        if current and p == current[-1] + 1:
            current.append(p)
        else:
            if len(current) >= min_len:
                runs.append(current)
            current = [p]
    if len(current) >= min_len:
        runs.append(current)
    return runs


def _run_findings(
    snapshot: Snapshot,
    parsed: _ParsedCells,
    cells: list[CellAddress],
    cfg: AuditConfig,
) -> list[Finding]:
    forms = {a: _normal_form(snapshot, parsed, a) for a in cells}
    counts = Counter(forms.values())
    (top_form, top_count), *rest = counts.most_common()
    if rest and rest[0][1] == top_count:
        return []  # tie: no expected form exists
    if Fraction(top_count, len(cells)) < cfg.majority_fraction:
        return []
    return [
        make_finding(
            "COPY_INCONSISTENT",
            address,
            f"formula deviates from the majority form of its run ({top_count}/{len(cells)} cells agree)",
            observed=forms[address],
            expected=top_form,
        )
        for address in cells
        if forms[address] != top_form
    ]


def detect_copy_inconsistencies(
    snapshot: Snapshot, sheet: str, cfg: AuditConfig | None = None
) -> list[Finding]:
    """Flag minority cells in horizontal and vertical copy runs on one
    sheet.  A run qualifies when it has at least min_run_length contiguous
    formula cells and a unique majority form with share >= majority_fraction.
    A cell flagged on both axes yields a single finding (row axis wins)."""
    cfg = cfg or AuditConfig()
    parsed = _parse_cells(snapshot)
    addresses = [
        a for a in snapshot.formula_cells() if a.sheet.lower() == sheet.lower()
    ]
    by_row: dict[int, list[CellAddress]] = {}
    by_col: dict[int, list[CellAddress]] = {}
    for a in addresses:
        by_row.setdefault(a.row, []).append(a)
        by_col.setdefault(a.col, []).append(a)

    found: dict[CellAddress, Finding] = {}
    for axis_groups, coord in ((by_row, "col"), (by_col, "row")):
        for fixed, members in sorted(axis_groups.items()):
            index = {getattr(a, coord): a for a in members}
            for run in _runs(list(index), cfg.min_run_length):
                cells = [index[p] for p in run]
                for finding in _run_findings(snapshot, parsed, cells, cfg):
                    found.setdefault(finding.location, finding)
    return sorted(found.values(), key=Finding.sort_key)


def if_nesting_depth(node: FormulaAst) -> int:
    """Maximum depth of IF calls nested within IF calls, counting self."""
    if isinstance(node, Call):
        inner = max((if_nesting_depth(a) for a in node.args), default=0)
        return inner + 1 if node.name == "IF" else inner
    if isinstance(node, Unary):
        return if_nesting_depth(node.child)
    if isinstance(node, Binary):
        return max(if_nesting_depth(node.left), if_nesting_depth(node.right))
    return 0


def detect_deep_nesting(snapshot: Snapshot, cfg: AuditConfig | None = None) -> list[Finding]:
    cfg = cfg or AuditConfig()
    parsed = _parse_cells(snapshot)
    findings = []
    for address, tree in parsed.trees.items():
        depth = if_nesting_depth(tree)
        if depth > cfg.if_depth_threshold:
            findings.append(
                make_finding(
                    "DEEP_NESTING",
                    address,
                    f"IF nesting depth {depth} exceeds threshold {cfg.if_depth_threshold}",
                    observed=str(depth),
                    expected=f"<= {cfg.if_depth_threshold}",
                )
            )
    return sorted(findings, key=Finding.sort_key)


def _embedded_constants(node: FormulaAst) -> list[Decimal]:
    """Numeric literals inside a tree; a literal directly under unary minus
    counts once, with its sign."""
    if isinstance(node, NumberLit):
        return [node.value]
    if isinstance(node, Unary):
        if node.op == "neg" and isinstance(node.child, NumberLit):
            return [-node.child.value]
        return _embedded_constants(node.child)
    if isinstance(node, Binary):
        return _embedded_constants(node.left) + _embedded_constants(node.right)
    if isinstance(node, Call):
        out: list[Decimal] = []
        for arg in node.args:
            out.extend(_embedded_constants(arg))
        return out
    return []


def detect_embedded_constants(
    snapshot: Snapshot, cfg: AuditConfig | None = None
) -> list[Finding]:
    """Numeric constants buried in formula logic suggest hidden assumptions.
    A bare literal cell (`=42`, `=-42`) is data, not buried logic, and passes."""
    cfg = cfg or AuditConfig()
    parsed = _parse_cells(snapshot)
    findings = []
    for address, tree in parsed.trees.items():
        if isinstance(tree, NumberLit):
            continue
        if isinstance(tree, Unary) and tree.op == "neg" and isinstance(tree.child, NumberLit):
            continue
        offenders = [
            c for c in _embedded_constants(tree) if c not in cfg.constant_whitelist
        ]
        if offenders:
            rendered = ", ".join(canonical_decimal(c) for c in offenders)
            findings.append(
                make_finding(
                    "EMBEDDED_CONSTANT",
                    address,
                    f"formula embeds constant(s) {rendered} outside the whitelist",
                    observed=rendered,
                )
            )
    return sorted(findings, key=Finding.sort_key)


def detect_error_values(snapshot: Snapshot) -> list[Finding]:
    findings = []
    for address, cell in snapshot.cells.items():
        value = content_value(cell)
        if isinstance(value, ErrorValue):
            where = "cached" if isinstance(cell, Formula) else "literal"
            findings.append(
                make_finding(
                    "ERROR_VALUE",
                    address,
                    f"cell holds {where} error value {value.code}",
                    observed=value.code,
                )
            )
    return sorted(findings, key=Finding.sort_key)


def detect_parse_failures(snapshot: Snapshot) -> list[Finding]:
    parsed = _parse_cells(snapshot)
    return sorted(
        (
            make_finding(
                "PARSE_FAILURE",
                address,
                f"formula could not be parsed: {reason}",
                observed=snapshot.cells[address].source,  # type: ignore[union-attr]
            )
            for address, reason in parsed.failures.items()
        ),
        key=Finding.sort_key,
    )


def audit_workbook(snapshot: Snapshot, cfg: AuditConfig | None = None) -> list[Finding]:
    """Run every static detector and return findings ordered by
    (sheet, row, col, rule id)."""
    cfg = cfg or AuditConfig()
    findings: list[Finding] = []
    for sheet in snapshot.sheets():
        findings.extend(detect_copy_inconsistencies(snapshot, sheet, cfg))
    findings.extend(detect_deep_nesting(snapshot, cfg))
    findings.extend(detect_embedded_constants(snapshot, cfg))
    findings.extend(detect_error_values(snapshot))
    findings.extend(detect_parse_failures(snapshot))
    return sorted(findings, key=Finding.sort_key)
