"""Decomposition evaluation: dataset loading, splitting and category metrics.

Scoring is category-level and per document: predicted and gold category
multisets are matched with the min-count rule, precision/recall/F1 computed
per document, then arithmetically averaged across the corpus (macro over
documents). Entity boundaries and logic descriptions are out of scope.
"""

from __future__ import annotations

import json
import random
import warnings as _warnings
from collections import Counter
from dataclasses import dataclass, field

from .taxonomy import DEFAULT_TAXONOMY, Taxonomy


class EvaluationError(Exception):
    pass


class ParseError(EvaluationError):
    pass


class UnknownCategory(EvaluationError):
    pass


class EmptyDataset(EvaluationError):
    pass


class EmptyInput(EvaluationError):
    pass


@dataclass(frozen=True)
class GoldEntity:
    entity_name: str
    category: str


@dataclass(frozen=True)
class DatasetSample:
    instruction: str
    input: str
    output: tuple[GoldEntity, ...]
    image_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class CategoryCounts:
    tp: int
    fp: int
    fn: int


@dataclass
class DocumentMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class MetricsReport:
    per_document: list[DocumentMetrics] = field(default_factory=list)
    mean_precision: float = 0.0
    mean_recall: float = 0.0
    mean_f1: float = 0.0

    @property
    def n_documents(self) -> int:
        return len(self.per_document)

    def to_dict(self) -> dict:
        return {
            "per_document": [m.to_dict() for m in self.per_document],
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "mean_f1": self.mean_f1,
            "n_documents": self.n_documents,
        }

    def to_table(self) -> str:
        """Aligned plain-text table, three decimals."""
        header = f"{'document':>10}  {'precision':>9}  {'recall':>9}  {'f1':>9}"
        rows = [header, "-" * len(header)]
        for i, m in enumerate(self.per_document, start=1):
            rows.append(f"{i:>10}  {m.precision:>9.3f}  {m.recall:>9.3f}  {m.f1:>9.3f}")
        rows.append("-" * len(header))
        rows.append(
            f"{'mean':>10}  {self.mean_precision:>9.3f}  {self.mean_recall:>9.3f}  {self.mean_f1:>9.3f}"
        )
        return "\n".join(rows)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def load_dataset(path: str, format: str, taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> list[DatasetSample]:
    """Load an alpaca or sharegpt dataset file.

    alpaca records: {"instruction", "input", "output"} with output either a
    list of {entity_name, category} or a JSON string encoding one; image
    refs are always empty. sharegpt records: {"system"?, "conversations":
    [{"from", "value"}, ...], "images"?} where the first human turn is the
    PRD input and the first gpt turn carries the gold output.
    """
    if format not in ("alpaca", "sharegpt"):
        raise ValueError(f"unknown dataset format {format!r}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON (line {exc.lineno})") from exc
    if not isinstance(data, list):
        raise ParseError(f"{path}: top level must be a list of records")

    samples = []
    for index, record in enumerate(data):
        locus = f"{path} record {index}"
        if not isinstance(record, dict):
            raise ParseError(f"{locus}: record must be an object")
        if format == "alpaca":
            samples.append(_parse_alpaca_record(record, locus, taxonomy))
        else:
            samples.append(_parse_sharegpt_record(record, locus, taxonomy))
    return samples


def _parse_alpaca_record(record: dict, locus: str, taxonomy: Taxonomy) -> DatasetSample:
    try:
        instruction = str(record["instruction"])
        prd_input = str(record["input"])
        output = record["output"]
    except KeyError as exc:
        raise ParseError(f"{locus}: missing field {exc}") from exc
    return DatasetSample(
        instruction=instruction,
        input=prd_input,
        output=_parse_gold(output, locus, taxonomy),
        image_refs=(),
    )


def _parse_sharegpt_record(record: dict, locus: str, taxonomy: Taxonomy) -> DatasetSample:
    conversations = record.get("conversations")
    if not isinstance(conversations, list) or not conversations:
        raise ParseError(f"{locus}: missing conversations")
    human = next((t for t in conversations if t.get("from") == "human"), None)
    gpt = next((t for t in conversations if t.get("from") == "gpt"), None)
    if human is None or gpt is None:
        raise ParseError(f"{locus}: conversations need one human and one gpt turn")
    images = record.get("images") or []
    if not isinstance(images, list):
        raise ParseError(f"{locus}: images must be a list")
    return DatasetSample(
        instruction=str(record.get("system", "")),
        input=str(human.get("value", "")),
        output=_parse_gold(gpt.get("value"), locus, taxonomy),
        image_refs=tuple(str(i) for i in images),
    )


def _parse_gold(output, locus: str, taxonomy: Taxonomy) -> tuple[GoldEntity, ...]:
    if isinstance(output, str):
        try:
            output = json.loads(output)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{locus}: output string is not valid JSON") from exc
    if not isinstance(output, list):
        raise ParseError(f"{locus}: output must be a list of entities")
    entities = []
    for item in output:
        if not isinstance(item, dict):
            raise ParseError(f"{locus}: entity must be an object")
        name = item.get("entity_name", item.get("entity"))
        label = item.get("category")
        if name is None or label is None:
            raise ParseError(f"{locus}: entity needs entity_name and category")
        key = taxonomy.normalize(str(label))
        if key is None:
            raise UnknownCategory(f"{locus}: category {label!r} is not in the taxonomy")
        entities.append(GoldEntity(entity_name=str(name), category=key))
    return tuple(entities)


# ---------------------------------------------------------------------------
# splitting and scoring
# ---------------------------------------------------------------------------


def split_dataset(samples: list, ratio: float, seed: int) -> tuple[list, list]:
    """Random train/test split: |train| = round-half-up(ratio * n)."""
    if not samples:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    indices = list(range(len(samples)))
    random.Random(seed).shuffle(indices)
    n_train = int(ratio * len(samples) + 0.5)
    train = [samples[i] for i in indices[:n_train]]
    test = [samples[i] for i in indices[n_train:]]
    if not test:
        _warnings.warn("split produced an empty test set", stacklevel=2)
    return train, test


def score_document(predicted: list[str] | Counter, gold: list[str] | Counter) -> CategoryCounts:
    """Multiset overlap: tp sums min counts per category."""
    pred_counts = predicted if isinstance(predicted, Counter) else Counter(predicted)
    gold_counts = gold if isinstance(gold, Counter) else Counter(gold)
    tp = sum(min(pred_counts[c], gold_counts[c]) for c in pred_counts.keys() & gold_counts.keys())
    return CategoryCounts(
        tp=tp,
        fp=sum(pred_counts.values()) - tp,
        fn=sum(gold_counts.values()) - tp,
    )


def aggregate_metrics(counts: list[CategoryCounts]) -> MetricsReport:
    """Per-document P/R/F1 with arithmetic means across documents.

    Degenerate conventions: an empty prediction set scores precision 1.0
    against an empty gold set and 0.0 otherwise; recall is symmetric; F1 is
    0 when precision + recall is 0.
    """
    if not counts:
        raise EmptyInput("no documents to aggregate")
    per_document = []
    for c in counts:
        precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else (1.0 if c.fn == 0 else 0.0)
        recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else (1.0 if c.fp == 0 else 0.0)
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
        per_document.append(DocumentMetrics(precision=precision, recall=recall, f1=f1))
    n = len(per_document)
    return MetricsReport(
        per_document=per_document,
        mean_precision=sum(m.precision for m in per_document) / n,
        mean_recall=sum(m.recall for m in per_document) / n,
        mean_f1=sum(m.f1 for m in per_document) / n,
    )


def evaluate_predictions(
    predicted_per_doc: list[list[str]], gold_per_doc: list[list[str]]
) -> MetricsReport:
    if len(predicted_per_doc) != len(gold_per_doc):
        raise ValueError("prediction and gold lists differ in length")
    return aggregate_metrics(
        [score_document(p, g) for p, g in zip(predicted_per_doc, gold_per_doc)]
    )
