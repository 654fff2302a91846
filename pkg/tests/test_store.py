import io
import json
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialoforge.store import (
    CorpusLayout,
    LanguageStats,
    SplitSpec,
    StoreError,
    append_record,
    canonical_json,
    compute_stats,
    content_id,
    iter_records,
    load_records,
    manifest_path,
    read_manifest,
    split,
    validate_record,
    write_manifest,
)

import oracles


def make_persona_record(i: int, language: str = "fr") -> dict:
    return {
        "kind": "persona",
        "language": language,
        "profiles": [
            {"sentence": f"sentence {i}-{j}", "taxonomy": f"Cat | Sub | Leaf{j}"}
            for j in range(5)
        ],
        "provenance": {"model_id": "m", "demo_seed": 0, "n_demos": 0},
    }


def make_cg_record(i: int, language: str = "fr") -> dict:
    return {
        "kind": "common_ground",
        "language": language,
        "text": f"Personnage 1 et Personnage 2 se retrouvent au lieu {i}.",
        "speech_event": {"category": "Small Talk", "subcategory": "Gossip"},
        "persona_refs": [f"pa{i}", f"pb{i}"],
        "attempts_used": 1,
        "character_word": "Personnage",
    }


def make_dialogue_record(i: int, n_utterances: int = 8, words: int = 5, language: str = "fr") -> dict:
    planned = max(4, (n_utterances + 1) // 2)
    text = " ".join(f"w{k}" for k in range(words))
    return {
        "kind": "dialogue",
        "language": language,
        "personas": [],
        "common_ground": {"text": "x"},
        "utterances": [[(j % 2) + 1, f"{text}"] for j in range(n_utterances)],
        "planned_turns": planned,
        "model_id": "m",
        "created_at": "t0",
    }


class TestContentId:
    def test_id_field_excluded_from_hash(self):
        record = make_persona_record(1)
        with_id = dict(record, id="whatever")
        assert content_id(record) == content_id(with_id)

    def test_content_changes_id(self):
        assert content_id(make_persona_record(1)) != content_id(make_persona_record(2))

    def test_canonical_json_is_key_order_independent(self):
        assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})
        assert canonical_json({"x": "é"}) == '{"x":"é"}'


class TestValidation:
    def test_valid_records_pass(self):
        assert validate_record(make_persona_record(0)) == []
        assert validate_record(make_cg_record(0)) == []
        assert validate_record(make_dialogue_record(0)) == []

    def test_unknown_kind_short_circuits(self):
        assert validate_record({"kind": "blob"}) == ["unknown kind 'blob'"]

    def test_persona_profile_count(self):
        record = make_persona_record(0)
        record["profiles"] = record["profiles"][:4]
        assert any("5 profiles" in p for p in validate_record(record))

    def test_persona_duplicate_taxonomy(self):
        record = make_persona_record(0)
        record["profiles"][1]["taxonomy"] = record["profiles"][0]["taxonomy"]
        assert any("distinct" in p for p in validate_record(record))

    def test_dialogue_minimum_length(self):
        record = make_dialogue_record(0, n_utterances=6)
        assert any(">= 8 utterances" in p for p in validate_record(record))

    def test_dialogue_alternation(self):
        record = make_dialogue_record(0)
        record["utterances"][3][0] = 1
        assert any("alternate" in p for p in validate_record(record))

    def test_dialogue_planned_turn_bounds(self):
        record = make_dialogue_record(0)
        record["planned_turns"] = 11
        assert any("[4, 10]" in p for p in validate_record(record))
        record["planned_turns"] = "6"
        assert any("[4, 10]" in p for p in validate_record(record))

    def test_dialogue_overlong(self):
        record = make_dialogue_record(0, n_utterances=10)
        record["planned_turns"] = 4
        assert any("exceeds" in p for p in validate_record(record))

    def test_append_rejects_invalid(self):
        buffer = io.StringIO()
        with pytest.raises(StoreError, match="5 profiles"):
            append_record({"kind": "persona", "language": "fr", "profiles": []}, buffer)


class TestRoundTrip:
    def test_100_record_round_trip(self, tmp_path):
        path = tmp_path / "mixed.jsonl"
        originals = []
        for i in range(100):
            if i % 3 == 0:
                record = make_persona_record(i)
            elif i % 3 == 1:
                record = make_cg_record(i)
            else:
                record = make_dialogue_record(i)
            append_record(record, path)
            originals.append(record)
        loaded = load_records(path)
        assert len(loaded) == 100
        for original, stored in zip(originals, loaded):
            assert stored["schema_version"] == 1
            assert stored["id"] == content_id(stored)
            body = {k: v for k, v in stored.items() if k not in ("id", "schema_version")}
            assert body == json.loads(canonical_json(original))

    def test_same_content_same_id_across_runs(self, tmp_path):
        a = append_record(make_persona_record(7), tmp_path / "a.jsonl")
        b = append_record(make_persona_record(7), tmp_path / "b.jsonl")
        assert a == b

    def test_iter_skips_blank_lines_and_missing_file(self, tmp_path):
        path = tmp_path / "gap.jsonl"
        path.write_text('{"a": 1}\n\n{"b": 2}\n')
        assert load_records(path) == [{"a": 1}, {"b": 2}]
        assert load_records(tmp_path / "absent.jsonl") == []

    def test_concurrent_appends_interleave_whole_lines(self, tmp_path):
        path = tmp_path / "parallel.jsonl"

        def worker(base):
            for i in range(20):
                append_record(make_persona_record(base * 100 + i), path)

        threads = [threading.Thread(target=worker, args=(t,)) for t in range(5)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        records = load_records(path)
        assert len(records) == 100
        assert all(r["kind"] == "persona" for r in records)


class TestLayout:
    def test_kind_files(self, tmp_path):
        layout = CorpusLayout(tmp_path)
        assert layout.file_for("fr", "persona").name == "personas.jsonl"
        assert layout.file_for("fr", "common_ground").name == "common_grounds.jsonl"
        assert layout.file_for("fr", "dialogue") == tmp_path / "fr" / "dialogues.jsonl"
        with pytest.raises(StoreError):
            layout.file_for("fr", "nope")

    def test_languages_sorted(self, tmp_path):
        for tag in ("fr", "ar", "es"):
            (tmp_path / tag).mkdir()
        assert CorpusLayout(tmp_path).languages() == ["ar", "es", "fr"]
        assert CorpusLayout(tmp_path / "missing").languages() == []


class TestStats:
    def test_hand_fixture_exact(self):
        # 2 dialogues, 14 + 16 = 30 utterances, 5 words each:
        # avg utterances = 15.0, avg words = 5.0, all exact
        corpus = [
            make_dialogue_record(0, n_utterances=14, words=5),
            make_dialogue_record(1, n_utterances=16, words=5),
        ]
        stats = compute_stats(corpus, "fr")
        assert stats == LanguageStats(
            language="fr",
            n_dialogues=2,
            n_utterances=30,
            avg_utterances_per_dialogue=15.0,
            avg_words_per_utterance=5.0,
        )

    def test_empty_corpus(self):
        stats = compute_stats([], "fr")
        assert stats.n_dialogues == 0
        assert stats.n_utterances == 0
        assert stats.avg_utterances_per_dialogue is None
        assert stats.avg_words_per_utterance is None

    def test_filters_language_and_kind(self):
        corpus = [
            make_dialogue_record(0, language="fr"),
            make_dialogue_record(1, language="es"),
            make_persona_record(2, language="fr"),
        ]
        assert compute_stats(corpus, "fr").n_dialogues == 1

    def test_no_whitespace_heuristic(self):
        record = make_dialogue_record(0, n_utterances=8, language="ja")
        record["utterances"] = [[(j % 2) + 1, "あ" * 10] for j in range(8)]
        stats = compute_stats([record], "ja", no_whitespace=True)
        assert stats.avg_words_per_utterance == 5.0
        assert stats.approx_words is True

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(8, 20), st.integers(1, 12)), min_size=1, max_size=6
        )
    )
    def test_incremental_equals_batch(self, shapes):
        corpus = [
            make_dialogue_record(i, n_utterances=n, words=w)
            for i, (n, w) in enumerate(shapes)
        ]
        batch = compute_stats(corpus, "fr")
        total_utts = sum(n for n, _ in shapes)
        total_words = sum(n * w for n, w in shapes)
        assert batch.n_dialogues == len(shapes)
        assert batch.n_utterances == total_utts
        assert batch.avg_utterances_per_dialogue == pytest.approx(
            float(oracles.mean([n for n, _ in shapes]))
        )
        assert batch.avg_words_per_utterance == pytest.approx(total_words / total_utts)

    def test_stats_invariant_guard(self):
        with pytest.raises(ValueError):
            LanguageStats("fr", 2, 30, 14.0, 5.0)  # 30/2 != 14


class TestSplit:
    def test_determinism_and_disjointness_100_specs(self):
        corpus = [make_persona_record(i) for i in range(40)]
        ids = [content_id(r) for r in corpus]
        rng = random.Random(999)
        for _ in range(100):
            valid = rng.randrange(0, 15)
            test = rng.randrange(0, 15)
            if valid + test >= len(corpus):
                continue
            spec = SplitSpec(valid_size=valid, test_size=test, seed=rng.randrange(2**31))
            train1, valid1, test1 = split(corpus, spec)
            train2, valid2, test2 = split(corpus, spec)
            assert (train1, valid1, test1) == (train2, valid2, test2)
            assert len(valid1) == valid and len(test1) == test
            assert len(train1) == len(corpus) - valid - test
            seen = [content_id(r) for part in (train1, valid1, test1) for r in part]
            assert sorted(seen) == sorted(ids)

    def test_oversized_split_rejected(self):
        corpus = [make_persona_record(i) for i in range(10)]
        with pytest.raises(StoreError, match="non-empty train"):
            split(corpus, SplitSpec(valid_size=5, test_size=5, seed=0))

    def test_different_seeds_differ(self):
        corpus = [make_persona_record(i) for i in range(30)]
        a = split(corpus, SplitSpec(5, 5, seed=1))
        b = split(corpus, SplitSpec(5, 5, seed=2))
        assert a != b


class TestManifest:
    def test_write_read_round_trip(self, tmp_path):
        out = tmp_path / "personas.jsonl"
        manifest = {"command": "gen-personas", "seed": 3, "argv": ["--lang", "fr"]}
        target = write_manifest(out, manifest)
        assert target == manifest_path(out)
        assert target.name == "personas.jsonl.manifest.json"
        assert read_manifest(out) == manifest

    def test_atomic_overwrite(self, tmp_path):
        out = tmp_path / "x.tsv"
        write_manifest(out, {"v": 1})
        write_manifest(out, {"v": 2})
        assert read_manifest(out) == {"v": 2}
        assert not manifest_path(out).with_suffix(".tmp").exists()
