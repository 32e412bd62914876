from __future__ import annotations

import random
from collections import Counter

import pytest

from forgeline.evaluation import (
    CategoryCounts,
    EmptyDataset,
    EmptyInput,
    ParseError,
    UnknownCategory,
    aggregate_metrics,
    evaluate_predictions,
    load_dataset,
    score_document,
    split_dataset,
)
from forgeline.taxonomy import CATEGORY_KEYS


def _brute_force_counts(pred: list[str], gold: list[str]) -> CategoryCounts:
    """Independent oracle: direct counting over category labels."""
    tp = 0
    remaining = list(gold)
    for label in pred:
        if label in remaining:
            remaining.remove(label)
            tp += 1
    return CategoryCounts(tp=tp, fp=len(pred) - tp, fn=len(gold) - tp)


# -- loading -------------------------------------------------------------------


def test_load_alpaca(fixtures):
    samples = load_dataset(str(fixtures / "datasets" / "alpaca.json"), "alpaca")
    assert len(samples) == 4
    assert all(s.image_refs == () for s in samples)
    assert samples[0].output[0].category == "InputControl"
    # record 2 carries its gold output as a JSON string
    assert samples[1].output[1].category == "ListSelection"


def test_load_sharegpt_with_images(fixtures):
    samples = load_dataset(str(fixtures / "datasets" / "sharegpt.json"), "sharegpt")
    assert len(samples) == 2
    assert samples[0].image_refs == ("mockups/search.png",)
    assert samples[1].image_refs == ()
    assert samples[0].instruction.startswith("Decompose the PRD")


def test_unknown_category_is_reported(fixtures):
    with pytest.raises(UnknownCategory, match="Carousel"):
        load_dataset(str(fixtures / "datasets" / "bad_category.json"), "alpaca")


def test_parse_error_carries_record_locus(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('[{"instruction": "x", "input": "y"}]')
    with pytest.raises(ParseError, match="record 0"):
        load_dataset(str(path), "alpaca")


def test_unknown_format_rejected(fixtures):
    with pytest.raises(ValueError):
        load_dataset(str(fixtures / "datasets" / "alpaca.json"), "jsonl")


# -- splitting -----------------------------------------------------------------


def test_split_182_at_080_gives_146_36():
    samples = list(range(182))
    train, test = split_dataset(samples, 0.8, seed=7)
    assert len(train) == 146
    assert len(test) == 36
    assert sorted(train + test) == samples


def test_split_is_deterministic_per_seed():
    samples = list(range(50))
    assert split_dataset(samples, 0.8, seed=3) == split_dataset(samples, 0.8, seed=3)
    assert split_dataset(samples, 0.8, seed=3) != split_dataset(samples, 0.8, seed=4)


def test_split_degenerate_single_sample_warns():
    with pytest.warns(UserWarning):
        train, test = split_dataset([1], 0.8, seed=0)
    assert train == [1]
    assert test == []


def test_split_empty_dataset():
    with pytest.raises(EmptyDataset):
        split_dataset([], 0.8, seed=0)


# -- scoring -------------------------------------------------------------------


def test_score_identity():
    counts = score_document(["InputControl"], ["InputControl"])
    assert (counts.tp, counts.fp, counts.fn) == (1, 0, 0)


def test_score_partial_overlap():
    counts = score_document(
        ["InputControl", "OverlayPanel"], ["InputControl", "FunctionalButton"]
    )
    assert (counts.tp, counts.fp, counts.fn) == (1, 1, 1)


def test_score_multiset_min_rule():
    counts = score_document(["FunctionalButton"], ["FunctionalButton", "FunctionalButton"])
    assert (counts.tp, counts.fp, counts.fn) == (1, 0, 1)


def test_score_symmetry_swaps_fp_fn():
    pred = ["InputControl", "InputControl", "OverlayPanel"]
    gold = ["InputControl", "ListSelection"]
    a = score_document(pred, gold)
    b = score_document(gold, pred)
    assert a.tp == b.tp
    assert (a.fp, a.fn) == (b.fn, b.fp)


def test_counts_invariants():
    pred = ["InputControl", "OverlayPanel", "OverlayPanel"]
    gold = ["OverlayPanel"]
    counts = score_document(pred, gold)
    assert counts.tp + counts.fp == len(pred)
    assert counts.tp + counts.fn == len(gold)


# -- aggregation ----------------------------------------------------------------


def test_perfect_match_gives_ones():
    report = aggregate_metrics([CategoryCounts(3, 0, 0)])
    m = report.per_document[0]
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_half_half():
    report = aggregate_metrics([CategoryCounts(1, 1, 1)])
    m = report.per_document[0]
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)


def test_mean_is_arithmetic_over_documents():
    report = aggregate_metrics([CategoryCounts(2, 0, 0), CategoryCounts(0, 1, 1)])
    assert report.per_document[0].f1 == 1.0
    assert report.per_document[1].f1 == 0.0
    assert report.mean_f1 == 0.5


def test_empty_prediction_conventions():
    both_empty = aggregate_metrics([CategoryCounts(0, 0, 0)]).per_document[0]
    assert (both_empty.precision, both_empty.recall, both_empty.f1) == (1.0, 1.0, 1.0)
    pred_empty = aggregate_metrics([CategoryCounts(0, 0, 2)]).per_document[0]
    assert (pred_empty.precision, pred_empty.recall, pred_empty.f1) == (0.0, 0.0, 0.0)
    gold_empty = aggregate_metrics([CategoryCounts(0, 2, 0)]).per_document[0]
    assert (gold_empty.precision, gold_empty.recall) == (0.0, 0.0)


def test_empty_input():
    with pytest.raises(EmptyInput):
        aggregate_metrics([])


def test_mean_f1_is_not_harmonic_of_means():
    # doc1 perfect; doc2 P=0.5, R=1.0 -> F1 2/3.
    report = evaluate_predictions(
        [["InputControl"], ["InputControl", "OverlayPanel"]],
        [["InputControl"], ["InputControl"]],
    )
    assert report.mean_precision == 0.75
    assert report.mean_recall == 1.0
    harmonic = 2 * report.mean_precision * report.mean_recall / (
        report.mean_precision + report.mean_recall
    )
    assert report.mean_f1 == pytest.approx((1.0 + 2 / 3) / 2)
    assert abs(report.mean_f1 - harmonic) > 1e-3


def test_randomized_corpora_match_brute_force_oracle():
    rng = random.Random(42)
    for _ in range(25):
        n_docs = rng.randint(1, 50)
        predicted, gold = [], []
        for _ in range(n_docs):
            predicted.append(rng.choices(CATEGORY_KEYS, k=rng.randint(0, 6)))
            gold.append(rng.choices(CATEGORY_KEYS, k=rng.randint(0, 6)))
        report = evaluate_predictions(predicted, gold)
        for metrics, pred, g in zip(report.per_document, predicted, gold):
            oracle = _brute_force_counts(pred, g)
            scored = score_document(Counter(pred), Counter(g))
            assert (scored.tp, scored.fp, scored.fn) == (oracle.tp, oracle.fp, oracle.fn)
            p = oracle.tp / (oracle.tp + oracle.fp) if oracle.tp + oracle.fp else (
                1.0 if oracle.fn == 0 else 0.0
            )
            r = oracle.tp / (oracle.tp + oracle.fn) if oracle.tp + oracle.fn else (
                1.0 if oracle.fp == 0 else 0.0
            )
            f1 = 2 * p * r / (p + r) if p + r else 0.0
            assert metrics.precision == pytest.approx(p, abs=1e-9)
            assert metrics.recall == pytest.approx(r, abs=1e-9)
            assert metrics.f1 == pytest.approx(f1, abs=1e-9)
            assert 0.0 <= metrics.precision <= 1.0
            assert 0.0 <= metrics.recall <= 1.0
            assert 0.0 <= metrics.f1 <= 1.0


def test_table_has_three_decimals():
    report = evaluate_predictions([["InputControl"]], [["InputControl"]])
    assert "1.000" in report.to_table()
