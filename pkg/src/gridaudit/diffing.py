"""Cell-level differences between consecutive snapshots.

Diffing is address-based: a row or column insertion shows up as a block of
added/removed/changed cells, never as inferred moves.  Formula equality is
source-text equality, so refactors that preserve meaning are still logged;
a cached-value-only change on a formula cell counts as data movement, not
a logic change.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from fractions import Fraction

from .grid import (
    CellAddress,
    CellContent,
    Formula,
    Literal,
    Snapshot,
    snapshot_digest,
)


class ChangeKind(Enum):
    ADDED = "Added"
    REMOVED = "Removed"
    DATA_CHANGED = "DataChanged"
    LOGIC_CHANGED = "LogicChanged"
    KIND_CHANGED = "KindChanged"


class DiffError(ValueError):
    pass


class WorkbookMismatch(DiffError):
    pass


class NoChange(DiffError):
    pass


class DigestMismatch(DiffError):
    pass


class ConflictingEvent(DiffError):
    pass


@dataclass(frozen=True)
class ChangeEvent:
    address: CellAddress
    kind: ChangeKind
    before: CellContent | None
    after: CellContent | None

    def __post_init__(self):
        if self.kind is ChangeKind.ADDED and self.before is not None:
            raise ValueError("Added events carry no before content")
        if self.kind is ChangeKind.REMOVED and self.after is not None:
            raise ValueError("Removed events carry no after content")
        if self.kind not in (ChangeKind.ADDED, ChangeKind.REMOVED) and (
            self.before is None or self.after is None
        ):
            raise ValueError(f"{self.kind.value} events need both sides")

    def alters_logic(self) -> bool:
        """True when the event creates, edits or deletes formula logic."""
        if self.kind in (ChangeKind.LOGIC_CHANGED, ChangeKind.KIND_CHANGED):
            return True
        if self.kind is ChangeKind.ADDED:
            return isinstance(self.after, Formula)
        if self.kind is ChangeKind.REMOVED:
            return isinstance(self.before, Formula)
        return False


@dataclass(frozen=True)
class ChangeSet:
    workbook_id: str
    from_digest: str
    to_digest: str
    from_time: datetime
    to_time: datetime
    actor: str
    events: tuple[ChangeEvent, ...]


@dataclass(frozen=True)
class VolatilityMetrics:
    structural_volatility: Fraction
    data_volatility: Fraction
    added_fraction: Fraction


def classify_change(before: CellContent | None, after: CellContent | None) -> ChangeKind:
    if before is None and after is None:
        raise ValueError("classify_change needs at least one side")
    if before == after:
        raise NoChange("contents are equal")
    if before is None:
        return ChangeKind.ADDED
    if after is None:
        return ChangeKind.REMOVED
    if isinstance(before, Literal) and isinstance(after, Literal):
        return ChangeKind.DATA_CHANGED
    if isinstance(before, Formula) and isinstance(after, Formula):
        if before.source != after.source:
            return ChangeKind.LOGIC_CHANGED
        return ChangeKind.DATA_CHANGED  # same logic, new cached value
    return ChangeKind.KIND_CHANGED


def diff_snapshots(before: Snapshot, after: Snapshot) -> ChangeSet:
    """One event per address whose content differs between the snapshots."""
    if before.workbook_id != after.workbook_id:
        raise WorkbookMismatch(
            f"cannot diff {before.workbook_id!r} against {after.workbook_id!r}"
        )
    events = []
    for address in sorted(set(before.cells) | set(after.cells), key=CellAddress.sort_key):
        old = before.cells.get(address)
        new = after.cells.get(address)
        if old == new:
            continue
        events.append(ChangeEvent(address, classify_change(old, new), old, new))
    return ChangeSet(
        workbook_id=before.workbook_id,
        from_digest=snapshot_digest(before),
        to_digest=snapshot_digest(after),
        from_time=before.timestamp,
        to_time=after.timestamp,
        actor=after.actor,
        events=tuple(events),
    )


def apply_changes(before: Snapshot, changes: ChangeSet) -> Snapshot:
    """Replay a change set on its base snapshot.  The result carries the
    change set's end time and actor and reproduces to_digest exactly."""
    if changes.from_digest != snapshot_digest(before):
        raise DigestMismatch(
            f"change set starts at {changes.from_digest[:12]}..., "
            f"snapshot digest differs"
        )
    cells = dict(before.cells)
    for event in changes.events:
        current = cells.get(event.address)
        if current != event.before:
            raise ConflictingEvent(f"unexpected content at {event.address}")
        if event.after is None:
            del cells[event.address]
        else:
            cells[event.address] = event.after
    result = Snapshot(
        workbook_id=before.workbook_id,
        timestamp=changes.to_time,
        actor=changes.actor,
        cells=cells,
        attestation=before.attestation,
    )
    if snapshot_digest(result) != changes.to_digest:
        raise DigestMismatch("replayed snapshot does not reproduce to_digest")
    return result


def volatility_metrics(changes: ChangeSet, before: Snapshot) -> VolatilityMetrics:
    """Change-rate ratios over the before snapshot.

    structural_volatility: formula cells whose logic changed, flipped kind
    or were removed, over formula cells in before.  data_volatility: the
    same over literal cells.  added_fraction: added cells over before cell
    count (over 1 when before is empty).  Cached-value-only changes count
    in neither volatility since neither the logic nor a literal moved.
    """
    formula_count = len(before.formula_cells())
    literal_count = len(before.literal_cells())
    structural = 0
    data = 0
    added = 0
    for event in changes.events:
        if event.kind is ChangeKind.ADDED:
            added += 1
            continue
        gone_or_changed = event.kind in (
            ChangeKind.REMOVED,
            ChangeKind.KIND_CHANGED,
            ChangeKind.LOGIC_CHANGED,
            ChangeKind.DATA_CHANGED,
        )
        if not gone_or_changed:
            continue
        if isinstance(event.before, Formula):
            if event.kind is not ChangeKind.DATA_CHANGED:
                structural += 1
        elif isinstance(event.before, Literal):
            data += 1
    return VolatilityMetrics(
        structural_volatility=Fraction(structural, formula_count) if formula_count else Fraction(0),
        data_volatility=Fraction(data, literal_count) if literal_count else Fraction(0),
        added_fraction=Fraction(added, len(before.cells)) if before.cells else Fraction(added),
    )
