"""Checklist-based UI fidelity scoring.

Each checklist item is a binary pass/fail dimension for one control,
grouped into page framework, constraint relations, geometry and styling.
The fidelity score is passed dimensions over total dimensions; the integer
percent uses round-half-up, the unique simple rule consistent with all four
published case results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum


class FidelityError(Exception):
    pass


class EmptyChecklist(FidelityError):
    pass


class ChecklistGroup(str, Enum):
    PAGE_FRAMEWORK = "page_framework"
    CONSTRAINT_RELATIONS = "constraint_relations"
    GEOMETRY = "geometry"
    STYLING = "styling"


GROUP_ORDER: tuple[ChecklistGroup, ...] = (
    ChecklistGroup.PAGE_FRAMEWORK,
    ChecklistGroup.CONSTRAINT_RELATIONS,
    ChecklistGroup.GEOMETRY,
    ChecklistGroup.STYLING,
)


@dataclass(frozen=True)
class ChecklistItem:
    control: str
    group: ChecklistGroup
    dimension: str
    passed: bool
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "control": self.control,
            "group": self.group.value,
            "dimension": self.dimension,
            "pass": self.passed,
            "note": self.note,
        }


def load_checklist(path: str) -> list[ChecklistItem]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise FidelityError(f"{path}: checklist must be a list of items")
    items = []
    for index, record in enumerate(data):
        try:
            items.append(
                ChecklistItem(
                    control=str(record["control"]),
                    group=ChecklistGroup(record["group"]),
                    dimension=str(record["dimension"]),
                    passed=bool(record["pass"]),
                    note=record.get("note"),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FidelityError(f"{path} item {index}: {exc}") from exc
    return items


@dataclass(frozen=True)
class FidelityScore:
    passed: int
    total: int

    @property
    def ratio(self) -> float:
        return self.passed / self.total

    @property
    def percent(self) -> int:
        # round-half-up on 100 * passed / total, in exact integer arithmetic
        return (200 * self.passed + self.total) // (2 * self.total)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "total": self.total,
            "ratio": self.ratio,
            "percent": self.percent,
        }


def score_checklist(items: list[ChecklistItem]) -> FidelityScore:
    if not items:
        raise EmptyChecklist("checklist has no items")
    return FidelityScore(passed=sum(1 for i in items if i.passed), total=len(items))


@dataclass
class GroupFailures:
    group: ChecklistGroup
    count: int
    failures: list[ChecklistItem] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "group": self.group.value,
            "count": self.count,
            "failures": [f.to_dict() for f in self.failures],
        }


@dataclass
class FailureReport:
    score: FidelityScore
    groups: list[GroupFailures] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "score": self.score.to_dict(),
            "groups": [g.to_dict() for g in self.groups],
            "warnings": list(self.warnings),
        }

    def to_table(self) -> str:
        lines = [
            f"fidelity: {self.score.passed}/{self.score.total} "
            f"({self.score.percent}%)"
        ]
        if not self.groups:
            lines.append("no failures")
        for group in self.groups:
            lines.append(f"{group.group.value}: {group.count} failure(s)")
            for item in group.failures:
                note = item.note or "(no note)"
                lines.append(f"  - {item.control} / {item.dimension}: {note}")
        for warning in self.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines)


def failure_report(items: list[ChecklistItem]) -> FailureReport:
    """Failures grouped by the four groups, then by control, with per-group
    counts. Failing items without a discrepancy note draw a warning."""
    if not items:
        raise EmptyChecklist("checklist has no items")
    score = score_checklist(items)
    warnings = [
        f"failing item {item.control!r}/{item.dimension!r} has no note"
        for item in items
        if not item.passed and not item.note
    ]
    groups = []
    for group in GROUP_ORDER:
        failures = sorted(
            (i for i in items if not i.passed and i.group is group),
            key=lambda i: (i.control, i.dimension),
        )
        if failures:
            groups.append(GroupFailures(group=group, count=len(failures), failures=failures))
    return FailureReport(score=score, groups=groups, warnings=warnings)
