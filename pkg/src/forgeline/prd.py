"""PRD decomposition into UI-anchored logic units.

A PRD is decomposed by a pluggable extractor backend into logic units, each
bound to exactly one UI control category. The resulting requirement
understanding starts as a draft, is validated, and is frozen by an explicit
confirmation step; the confirmed artifact is the single source of truth for
every downstream stage, so any later mutation attempt is rejected.
"""

from __future__ import annotations

import concurrent.futures
import json
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

from .clock import Clock, system_clock
from .design import ComponentSet
from .taxonomy import DEFAULT_TAXONOMY, LEXICON, Taxonomy

BACKEND_TIMEOUT_SECONDS = 120.0


class PrdError(Exception):
    pass


class BackendFailure(PrdError):
    pass


class ValidationFailure(PrdError):
    pass


class AlreadyConfirmed(PrdError):
    pass


class InvalidEdit(PrdError):
    pass


@dataclass(frozen=True)
class PrdDocument:
    id: str
    body: str
    image_refs: tuple[str, ...] = ()
    source: str = "raw_text"  # raw_text | fetched

    def __post_init__(self):
        if not self.body:
            raise ValueError("PRD body must be non-empty")


@dataclass(frozen=True)
class Relation:
    target: str
    description: str

    def to_dict(self) -> dict:
        return {"target": self.target, "description": self.description}


@dataclass(frozen=True)
class LogicUnit:
    unit_id: str
    entity_name: str
    category: str
    logic_description: str
    anchor: str | None = None
    relations: tuple[Relation, ...] = ()
    context_notes: str | None = None

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "entity_name": self.entity_name,
            "category": self.category,
            "logic_description": self.logic_description,
            "anchor": self.anchor,
            "relations": [r.to_dict() for r in self.relations],
            "context_notes": self.context_notes,
        }

    @staticmethod
    def from_dict(d: dict) -> "LogicUnit":
        return LogicUnit(
            unit_id=d["unit_id"],
            entity_name=d["entity_name"],
            category=d["category"],
            logic_description=d.get("logic_description", ""),
            anchor=d.get("anchor"),
            relations=tuple(
                Relation(r["target"], r.get("description", "")) for r in d.get("relations", [])
            ),
            context_notes=d.get("context_notes"),
        )


@dataclass(frozen=True)
class Confirmation:
    decided_by: str
    timestamp: float
    edits_applied: int

    def to_dict(self) -> dict:
        return {
            "decided_by": self.decided_by,
            "timestamp": self.timestamp,
            "edits_applied": self.edits_applied,
        }


@dataclass(frozen=True)
class RequirementUnderstanding:
    prd_id: str
    units: tuple[LogicUnit, ...]
    status: str = "draft"  # draft | confirmed
    confirmation: Confirmation | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "prd_id": self.prd_id,
            "status": self.status,
            "units": [u.to_dict() for u in self.units],
            "confirmation": self.confirmation.to_dict() if self.confirmation else None,
            "warnings": list(self.warnings),
        }

    @staticmethod
    def from_dict(d: dict) -> "RequirementUnderstanding":
        conf = d.get("confirmation")
        return RequirementUnderstanding(
            prd_id=d["prd_id"],
            units=tuple(LogicUnit.from_dict(u) for u in d.get("units", [])),
            status=d.get("status", "draft"),
            confirmation=Confirmation(
                conf["decided_by"], float(conf["timestamp"]), int(conf["edits_applied"])
            )
            if conf
            else None,
            warnings=tuple(d.get("warnings", [])),
        )


@dataclass(frozen=True)
class Finding:
    unit_id: str
    severity: str  # error | warning
    code: str
    message: str

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
        }


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "findings": [f.to_dict() for f in self.findings]}


class ExtractorBackend(Protocol):
    """Callable contract every extractor backend satisfies; implementations
    may wrap a remote model or run locally and deterministically."""

    def __call__(
        self, prd: PrdDocument, taxonomy: Taxonomy, components: ComponentSet | None
    ) -> list[LogicUnit]: ...


# ---------------------------------------------------------------------------
# the deterministic default backend
# ---------------------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"[.!?\n]")

_LEXICON_PATTERNS = [
    (phrase, category, re.compile(r"\b" + re.escape(phrase) + r"\b", re.IGNORECASE))
    for phrase, category in LEXICON
]


def rule_based_extract(
    prd: PrdDocument, taxonomy: Taxonomy = DEFAULT_TAXONOMY, components: ComponentSet | None = None
) -> list[LogicUnit]:
    """Deterministic lexicon extractor.

    Sentences split on '.', '!', '?' and newline; a sentence containing a
    lexicon phrase yields one unit whose entity is the matched phrase and
    whose logic description is the sentence. When several phrases match, the
    earliest match wins, longer phrases beating shorter ones at the same
    position. Unit ids are "u-001", "u-002", ... in sentence order.
    """
    units: list[LogicUnit] = []
    component_names = {name.lower(): name for name in components.names()} if components else {}
    for sentence in _split_sentences(prd.body):
        match = _best_match(sentence)
        if match is None:
            continue
        phrase, category = match
        anchor = component_names.get(phrase.lower())
        units.append(
            LogicUnit(
                unit_id=f"u-{len(units) + 1:03d}",
                entity_name=phrase,
                category=category,
                logic_description=sentence,
                anchor=anchor,
            )
        )
    return units


def _split_sentences(body: str) -> list[str]:
    return [part.strip() for part in _SENTENCE_SPLIT.split(body) if part.strip()]


def _best_match(sentence: str) -> tuple[str, str] | None:
    best: tuple[int, int, int] | None = None  # (position, -length, lexicon index)
    best_entry: tuple[str, str] | None = None
    for index, (phrase, category, pattern) in enumerate(_LEXICON_PATTERNS):
        m = pattern.search(sentence)
        if m is None:
            continue
        rank = (m.start(), -len(phrase), index)
        if best is None or rank < best:
            best = rank
            best_entry = (phrase, category)
    return best_entry


class ScriptedReplayBackend:
    """Backend replaying pre-recorded units from a JSON file keyed by PRD id.

    Stands in for a remote model in tests and offline runs; the file holds
    either {prd_id: [unit, ...]} or a bare list applied to any PRD.
    """

    def __init__(self, path: str):
        with open(path, encoding="utf-8") as fh:
            self._script = json.load(fh)

    def __call__(
        self, prd: PrdDocument, taxonomy: Taxonomy, components: ComponentSet | None
    ) -> list[LogicUnit]:
        records = self._script.get(prd.id, []) if isinstance(self._script, dict) else self._script
        return [LogicUnit.from_dict(r) for r in records]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def decompose(
    prd: PrdDocument,
    backend: Callable = rule_based_extract,
    components: ComponentSet | None = None,
    taxonomy: Taxonomy = DEFAULT_TAXONOMY,
    timeout: float = BACKEND_TIMEOUT_SECONDS,
) -> RequirementUnderstanding:
    """Run the extractor backend and assemble a draft understanding.

    Units failing per-unit validation are dropped with a warning; if the
    backend produced units and none survived, the decomposition fails.
    """
    try:
        with concurrent.futures.ThreadPoolExecutor(max_workers=1) as pool:
            future = pool.submit(backend, prd, taxonomy, components)
            raw_units = future.result(timeout=timeout)
    except concurrent.futures.TimeoutError as exc:
        raise BackendFailure(f"backend timed out after {timeout:.0f} s") from exc
    except Exception as exc:
        raise BackendFailure(f"backend raised: {exc}") from exc

    warnings: list[str] = []
    accepted: list[LogicUnit] = []
    seen_ids: set[str] = set()
    component_names = {n.lower(): n for n in components.names()} if components else {}
    for unit in raw_units:
        problem = _unit_problem(unit, taxonomy, seen_ids)
        if problem:
            warnings.append(f"unit {unit.unit_id!r} rejected: {problem}")
            continue
        seen_ids.add(unit.unit_id)
        if unit.anchor is None and unit.entity_name.lower() in component_names:
            unit = replace(unit, anchor=component_names[unit.entity_name.lower()])
        accepted.append(unit)

    if raw_units and not accepted:
        raise ValidationFailure("backend produced units but none passed validation")
    if not raw_units:
        warnings.append("extraction produced no logic units")

    return RequirementUnderstanding(
        prd_id=prd.id, units=tuple(accepted), status="draft", warnings=tuple(warnings)
    )


def _unit_problem(unit: LogicUnit, taxonomy: Taxonomy, seen_ids: set[str]) -> str | None:
    if not unit.entity_name:
        return "empty entity name"
    if not taxonomy.is_valid_key(unit.category):
        return f"unknown category {unit.category!r}"
    if unit.unit_id in seen_ids:
        return "duplicate unit id"
    return None


def validate_understanding(
    ru: RequirementUnderstanding,
    taxonomy: Taxonomy = DEFAULT_TAXONOMY,
    components: ComponentSet | None = None,
) -> ValidationReport:
    """Check every unit; findings are data, never exceptions.

    Errors: unknown category, duplicate unit id, empty entity name.
    Warnings: anchor absent from the component set, relation target not an
    extracted entity.
    """
    report = ValidationReport()
    seen: set[str] = set()
    entity_names = {u.entity_name for u in ru.units}
    component_names = components.names() if components else None
    for unit in ru.units:
        if unit.unit_id in seen:
            report.findings.append(
                Finding(unit.unit_id, "error", "duplicate_id", f"duplicate unit id {unit.unit_id!r}")
            )
        seen.add(unit.unit_id)
        if not unit.entity_name:
            report.findings.append(
                Finding(unit.unit_id, "error", "empty_entity", "entity name is empty")
            )
        if not taxonomy.is_valid_key(unit.category):
            report.findings.append(
                Finding(
                    unit.unit_id,
                    "error",
                    "unknown_category",
                    f"category {unit.category!r} is not one of the 7 taxonomy keys",
                )
            )
        if unit.anchor is not None and component_names is not None and unit.anchor not in component_names:
            report.findings.append(
                Finding(
                    unit.unit_id,
                    "warning",
                    "unresolved_anchor",
                    f"anchor {unit.anchor!r} not present in the component set",
                )
            )
        for relation in unit.relations:
            if relation.target not in entity_names:
                report.findings.append(
                    Finding(
                        unit.unit_id,
                        "warning",
                        "dangling_relation",
                        f"relation target {relation.target!r} is not an extracted entity",
                    )
                )
    return report


def confirm_understanding(
    ru: RequirementUnderstanding,
    decided_by: str,
    edits: list[LogicUnit] | None = None,
    taxonomy: Taxonomy = DEFAULT_TAXONOMY,
    components: ComponentSet | None = None,
    clock: Clock = system_clock,
) -> RequirementUnderstanding:
    """Apply unit replacements and freeze the artifact.

    Edits replace units by unit_id; the edited collection must validate
    cleanly or the confirmation is rejected. Confirming twice fails.
    """
    if ru.status == "confirmed":
        raise AlreadyConfirmed(f"requirement understanding for {ru.prd_id!r} is already confirmed")
    edits = edits or []
    units = list(ru.units)
    by_id = {u.unit_id: i for i, u in enumerate(units)}
    for edit in edits:
        index = by_id.get(edit.unit_id)
        if index is None:
            raise InvalidEdit(f"edit targets unknown unit {edit.unit_id!r}")
        units[index] = edit
    candidate = replace(ru, units=tuple(units))
    report = validate_understanding(candidate, taxonomy, components)
    if not report.ok:
        details = "; ".join(f.message for f in report.errors())
        raise InvalidEdit(f"post-edit validation failed: {details}")
    return replace(
        candidate,
        status="confirmed",
        confirmation=Confirmation(decided_by=decided_by, timestamp=clock(), edits_applied=len(edits)),
    )


def render_markdown(ru: RequirementUnderstanding, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> str:
    """Human-readable view, regenerated from the structured artifact.

    Never the parse source; the JSON form stays authoritative.
    """
    lines = [f"# Requirement understanding: {ru.prd_id}", "", f"Status: {ru.status}"]
    if ru.confirmation:
        lines.append(
            f"Confirmed by {ru.confirmation.decided_by} "
            f"(edits applied: {ru.confirmation.edits_applied})"
        )
    by_category: dict[str, list[LogicUnit]] = {}
    for unit in ru.units:
        by_category.setdefault(unit.category, []).append(unit)
    for category in taxonomy.categories:
        units = by_category.get(category.key)
        if not units:
            continue
        lines += ["", f"## {category.display_name}", ""]
        for unit in units:
            anchor = f" (anchor: {unit.anchor})" if unit.anchor else ""
            lines.append(f"- **{unit.entity_name}**{anchor}: {unit.logic_description}")
            for rel in unit.relations:
                lines.append(f"  - relates to {rel.target}: {rel.description}")
            if unit.context_notes:
                lines.append(f"  - note: {unit.context_notes}")
    unknown = sorted(set(by_category) - set(taxonomy.keys()))
    for category in unknown:
        lines += ["", f"## (unknown category: {category})", ""]
        for unit in by_category[category]:
            lines.append(f"- **{unit.entity_name}**: {unit.logic_description}")
    if ru.warnings:
        lines += ["", "## Warnings", ""]
        lines += [f"- {w}" for w in ru.warnings]
    return "\n".join(lines) + "\n"
