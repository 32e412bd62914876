from __future__ import annotations

import pytest

from forgeline.clock import FixedClock
from forgeline.knowledge import (
    CHUNK_OVERLAP,
    CHUNK_WINDOW,
    EmptyDocument,
    EmptyStore,
    KnowledgeStore,
    chunk_document,
    embed,
)


def _store(ttl: float = 3600.0) -> tuple[KnowledgeStore, FixedClock]:
    clock = FixedClock(1_000_000.0)
    return KnowledgeStore(clock=clock, ttl=ttl), clock


# -- chunking ------------------------------------------------------------------


def test_short_headingless_document_is_one_chunk():
    chunks = chunk_document("d1", "x" * 300)
    assert len(chunks) == 1
    assert chunks[0].chunk_id == "d1:0000"
    assert chunks[0].heading_path == ()


def test_1024_chars_is_three_windows_at_0_448_896():
    body = "".join(chr(ord("a") + (i % 26)) for i in range(1024))
    chunks = chunk_document("d1", body)
    assert [c.body for c in chunks] == [body[0:512], body[448:960], body[896:1024]]


def test_chunks_reassemble_source_document():
    body = "".join(chr(ord("a") + (i % 26)) for i in range(2000))
    chunks = chunk_document("d1", body)
    rebuilt = chunks[0].body
    for chunk in chunks[1:]:
        rebuilt += chunk.body[CHUNK_OVERLAP:]
    assert rebuilt == body


def test_heading_sections_carry_paths_and_reassemble():
    body = (
        "intro text\n"
        "# Spacing\n"
        "Use an 8pt grid." + "x" * 600 + "\n"
        "## Margins\n"
        "Leading margins are 16.\n"
        "# Colors\n"
        "Use tokens.\n"
    )
    chunks = chunk_document("guide", body)
    paths = [c.heading_path for c in chunks]
    assert paths[0] == ()
    assert ("Spacing",) in paths
    assert ("Spacing", "Margins") in paths
    assert ("Colors",) in paths
    rebuilt = ""
    for prev, chunk in zip([None] + list(chunks), chunks):
        if prev is not None and prev.heading_path == chunk.heading_path:
            rebuilt += chunk.body[CHUNK_OVERLAP:]
        else:
            rebuilt += chunk.body
    assert rebuilt == body


def test_empty_document_rejected():
    store, _ = _store()
    with pytest.raises(EmptyDocument):
        store.ingest_document("d1", "")


def test_reingest_same_body_same_ids_version_still_increments():
    store, _ = _store()
    first = store.ingest_document("d1", "hello world")
    version_after_first = store.store_version
    second = store.ingest_document("d1", "hello world")
    assert first == second
    assert store.store_version == version_after_first + 1
    assert len(store) == len(first)


# -- embedding -----------------------------------------------------------------


def test_embedder_is_deterministic_and_normalized():
    a = embed("spacing rules for lists")
    b = embed("spacing rules for lists")
    assert (a == b).all()
    assert abs(float((a * a).sum()) - 1.0) < 1e-9


# -- retrieval -----------------------------------------------------------------


def test_single_matching_chunk_scores_one():
    store, _ = _store()
    store.ingest_document("d1", "margin spacing guidance")
    context = store.retrieve("spacing", k=1, use_cache=False)
    assert len(context.hits) == 1
    assert context.hits[0].score == 1.0
    assert context.from_cache is False


def test_ranking_prefers_matching_chunk_with_chunk_id_tiebreak():
    store, _ = _store()
    store.ingest_document("a", "the button color token is primary red")
    store.ingest_document("b", "list rows use eight point spacing")
    context = store.retrieve("spacing for list rows", k=2, use_cache=False)
    assert context.hits[0].chunk_id == "b:0000"
    scores = [h.score for h in context.hits]
    assert scores == sorted(scores, reverse=True)


def test_retrieval_deterministic():
    store, _ = _store()
    store.ingest_document("a", "alpha beta gamma")
    store.ingest_document("b", "beta gamma delta")
    first = store.retrieve("beta", k=2, use_cache=False)
    second = store.retrieve("beta", k=2, use_cache=False)
    assert first.hits == second.hits


def test_cache_hit_at_3599_and_miss_at_3601():
    store, clock = _store(ttl=3600.0)
    store.ingest_document("d1", "spacing guidance")
    first = store.retrieve("spacing", k=1, use_cache=True)
    assert first.from_cache is False

    clock.epoch += 3599.0
    hit = store.retrieve("spacing", k=1, use_cache=True)
    assert hit.from_cache is True
    assert hit.hits == first.hits

    store2, clock2 = _store(ttl=3600.0)
    store2.ingest_document("d1", "spacing guidance")
    store2.retrieve("spacing", k=1, use_cache=True)
    clock2.epoch += 3601.0
    miss = store2.retrieve("spacing", k=1, use_cache=True)
    assert miss.from_cache is False


def test_exact_ttl_boundary_is_stale():
    store, clock = _store(ttl=3600.0)
    store.ingest_document("d1", "spacing")
    store.retrieve("spacing", k=1, use_cache=True)
    clock.epoch += 3600.0
    assert store.retrieve("spacing", k=1, use_cache=True).from_cache is False


def test_cache_transparency_on_and_off_identical():
    store, _ = _store()
    store.ingest_document("a", "alpha beta gamma delta")
    store.ingest_document("b", "gamma delta epsilon")
    cached = store.retrieve("gamma delta", k=2, use_cache=True)
    # second call comes from cache
    warm = store.retrieve("gamma delta", k=2, use_cache=True)
    uncached = store.retrieve("gamma delta", k=2, use_cache=False)
    assert warm.from_cache is True
    assert warm.hits == uncached.hits == cached.hits


def test_ingest_invalidates_cache_via_version():
    store, _ = _store()
    store.ingest_document("a", "alpha beta")
    first = store.retrieve("alpha", k=1, use_cache=True)
    assert first.from_cache is False
    store.ingest_document("b", "alpha alpha alpha")
    after = store.retrieve("alpha", k=1, use_cache=True)
    assert after.from_cache is False
    assert after.store_version == first.store_version + 1


def test_empty_store_and_bad_k():
    store, _ = _store()
    with pytest.raises(EmptyStore):
        store.retrieve("anything", k=1)
    store.ingest_document("a", "alpha")
    with pytest.raises(ValueError):
        store.retrieve("anything", k=0)


# -- persistence -----------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    store, clock = _store()
    store.ingest_document("guide", "# Spacing\nUse an 8pt grid.\n# Colors\nUse tokens.")
    store.save(tmp_path / "knowledge")
    assert (tmp_path / "knowledge" / "chunks.json").is_file()
    assert (tmp_path / "knowledge" / "inverted_index.json").is_file()
    assert (tmp_path / "knowledge" / "vector_table.json").is_file()

    loaded = KnowledgeStore.load(tmp_path / "knowledge", clock=clock)
    assert loaded.store_version == store.store_version
    original = store.retrieve("spacing grid", k=2, use_cache=False)
    reloaded = loaded.retrieve("spacing grid", k=2, use_cache=False)
    assert original.hits == reloaded.hits
