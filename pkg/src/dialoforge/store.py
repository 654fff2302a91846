"""JSONL persistence for generated records, corpus statistics, and splits.

Records are plain dicts here; the typed views live with the generator. Every
persisted line carries ``schema_version`` and a content-derived ``id`` so the
same record always lands under the same identifier.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

SCHEMA_VERSION = 1
KINDS = ("persona", "common_ground", "dialogue")
_KIND_FILES = {
    "persona": "personas.jsonl",
    "common_ground": "common_grounds.jsonl",
    "dialogue": "dialogues.jsonl",
}


class StoreError(ValueError):
    """Invariant violation or storage failure."""


# -- identity -----------------------------------------------------------------


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_id(record: dict) -> str:
    """Stable sha256 over the record's content, ignoring any existing id."""
    body = {k: v for k, v in record.items() if k != "id"}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


# -- validation ----------------------------------------------------------------


def validate_record(record: dict) -> list:
    """Return a list of invariant violations (empty when the record is sound)."""
    problems = []
    kind = record.get("kind")
    if kind not in KINDS:
        return [f"unknown kind {kind!r}"]
    if not record.get("language"):
        problems.append("missing language")
    if kind == "persona":
        profiles = record.get("profiles") or []
        if len(profiles) != 5:
            problems.append(f"persona needs exactly 5 profiles, got {len(profiles)}")
        if any(not (p.get("sentence") or "").strip() for p in profiles):
            problems.append("empty profile sentence")
        paths = [p.get("taxonomy") for p in profiles]
        if len(set(paths)) != len(paths):
            problems.append("taxonomy refs must be pairwise distinct")
    elif kind == "common_ground":
        if not (record.get("text") or "").strip():
            problems.append("empty common-ground text")
        refs = record.get("persona_refs") or []
        if len(refs) != 2:
            problems.append("persona_refs must hold exactly two ids")
        event = record.get("speech_event") or {}
        if not event.get("category") or not event.get("subcategory"):
            problems.append("speech_event must carry category and subcategory")
    elif kind == "dialogue":
        utterances = record.get("utterances") or []
        planned = record.get("planned_turns")
        if not isinstance(planned, int) or not 4 <= planned <= 10:
            problems.append("planned_turns must be an integer in [4, 10]")
        if len(utterances) < 8:
            problems.append(f"dialogue needs >= 8 utterances, got {len(utterances)}")
        elif isinstance(planned, int) and len(utterances) > 2 * planned:
            problems.append("utterance count exceeds 2 * planned_turns")
        for i, utt in enumerate(utterances):
            speaker, text = utt[0], utt[1]
            if speaker != (i % 2) + 1:
                problems.append("speakers must alternate starting with speaker 1")
                break
            if not str(text).strip():
                problems.append(f"utterance {i} is empty")
                break
    return problems


# -- persistence ----------------------------------------------------------------


def append_record(record: dict, sink) -> str:
    """Validate, stamp schema_version + content id, append one JSONL line.

    ``sink`` is a path or an open text file. Path appends take an advisory
    exclusive lock so concurrent workers interleave whole lines only.
    """
    problems = validate_record(record)
    if problems:
        raise StoreError("; ".join(problems))
    rec = dict(record)
    rec.setdefault("schema_version", SCHEMA_VERSION)
    rec["id"] = content_id(rec)
    line = json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n"
    if hasattr(sink, "write"):
        sink.write(line)
    else:
        path = Path(sink)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                fh.write(line)
                fh.flush()
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)
    return rec["id"]


def iter_records(path) -> Iterator[dict]:
    path = Path(path)
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def load_records(path) -> list:
    return list(iter_records(path))


@dataclass(frozen=True)
class CorpusLayout:
    """corpus/{lang}/{personas,common_grounds,dialogues}.jsonl"""

    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def file_for(self, language: str, kind: str) -> Path:
        if kind not in _KIND_FILES:
            raise StoreError(f"unknown kind {kind!r}")
        return self.root / language / _KIND_FILES[kind]

    def languages(self) -> list:
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())


# -- statistics -----------------------------------------------------------------


@dataclass(frozen=True)
class LanguageStats:
    language: str
    n_dialogues: int
    n_utterances: int
    avg_utterances_per_dialogue: Optional[float]
    avg_words_per_utterance: Optional[float]
    approx_words: bool = False

    def __post_init__(self):
        if self.n_dialogues < 0 or self.n_utterances < 0:
            raise StoreError("counts must be >= 0")
        if self.n_dialogues > 0:
            expected = self.n_utterances / self.n_dialogues
            if abs((self.avg_utterances_per_dialogue or 0) - expected) > 1e-9:
                raise StoreError("avg_utterances_per_dialogue inconsistent with counts")


def _word_count(text: str, no_whitespace: bool) -> float:
    if no_whitespace:
        # scripts without spaces: approximate words as half the characters
        return len(text) / 2
    return float(len(text.split()))


def compute_stats(
    corpus: Iterable[dict], language: str, no_whitespace: bool = False
) -> LanguageStats:
    """Aggregate dialogue counts for one language.

    Words are whitespace tokens; for no-whitespace scripts a characters/2
    heuristic is used and the row is flagged ``approx_words``.
    """
    n_dialogues = 0
    n_utterances = 0
    total_words = 0.0
    for record in corpus:
        if record.get("kind") != "dialogue" or record.get("language") != language:
            continue
        n_dialogues += 1
        for _, text in record.get("utterances", []):
            n_utterances += 1
            total_words += _word_count(str(text), no_whitespace)
    if n_dialogues == 0:
        return LanguageStats(language, 0, 0, None, None, no_whitespace)
    return LanguageStats(
        language=language,
        n_dialogues=n_dialogues,
        n_utterances=n_utterances,
        avg_utterances_per_dialogue=n_utterances / n_dialogues,
        avg_words_per_utterance=(total_words / n_utterances) if n_utterances else None,
        approx_words=no_whitespace,
    )


# -- splits ----------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    valid_size: int
    test_size: int
    seed: int

    def __post_init__(self):
        if self.valid_size < 0 or self.test_size < 0:
            raise StoreError("split sizes must be >= 0")


def split(corpus: Sequence, spec: SplitSpec):
    """Seed-deterministic disjoint (train, valid, test) partition."""
    items = list(corpus)
    if spec.valid_size + spec.test_size >= len(items):
        raise StoreError(
            f"corpus of {len(items)} records cannot yield valid={spec.valid_size} "
            f"+ test={spec.test_size} with a non-empty train split"
        )
    shuffled = list(items)
    random.Random(spec.seed).shuffle(shuffled)
    valid = shuffled[: spec.valid_size]
    test = shuffled[spec.valid_size : spec.valid_size + spec.test_size]
    train = shuffled[spec.valid_size + spec.test_size :]
    return train, valid, test


# -- run manifests ------------------------------------------------------------------


def manifest_path(out_path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def write_manifest(out_path, manifest: dict) -> Path:
    """Atomically write <out>.manifest.json describing one run."""
    target = manifest_path(out_path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(".tmp")
    tmp.write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    tmp.replace(target)
    return target


def read_manifest(out_path) -> dict:
    return json.loads(manifest_path(out_path).read_text(encoding="utf-8"))
