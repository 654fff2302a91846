"""LLM-as-a-judge: batched scoring prompts, tolerant response parsing,
and score aggregation into per-part tables.

Items are scored 1-5 on fixed criterion sets (loaded from the checked-in
criteria file). Personas are judged in batches of up to six; conversations
in batches of up to three, each conversation yielding one common-ground and
one dialogue score sheet from a single response.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from math import fsum
from typing import Iterable, Mapping, Sequence

from .gateway import JUDGE_DECODING, LlmGateway
from .languages import data_text, language_name

KINDS = ("persona", "common_ground", "dialogue")
REQUIRED_KEYS = {
    "persona": ("specificity", "fluency", "taxonomy_relevancy", "toxicity"),
    "common_ground": (
        "specificity",
        "fluency",
        "personas_relevancy",
        "speech_event_relevancy",
        "toxicity",
    ),
    "dialogue": (
        "common_ground_relevancy",
        "specificity",
        "humanness",
        "fluency",
        "toxicity",
        "personas_relevancy",
    ),
}
PART_BY_KIND = {"persona": "P", "common_ground": "CG", "dialogue": "C"}
MAX_PERSONAS_PER_BATCH = 6
MAX_CONVERSATIONS_PER_BATCH = 3


class JudgeError(ValueError):
    """Batch construction failure (oversized batch, bad kind)."""


class JudgeParseError(Exception):
    """Structured description of an unusable judge response."""

    def __init__(self, message, missing_ids=(), extra_ids=(), bad_scores=()):
        self.missing_ids = tuple(missing_ids)
        self.extra_ids = tuple(extra_ids)
        self.bad_scores = tuple(bad_scores)
        parts = [message]
        if self.missing_ids:
            parts.append(f"missing ids: {', '.join(self.missing_ids)}")
        if self.extra_ids:
            parts.append(f"unexpected ids: {', '.join(self.extra_ids)}")
        if self.bad_scores:
            rendered = "; ".join(f"{i}/{k}: {why}" for i, k, why in self.bad_scores)
            parts.append(f"bad scores: {rendered}")
        super().__init__(" | ".join(parts))


# -- criteria -------------------------------------------------------------------


@dataclass(frozen=True)
class Criterion:
    key: str
    name: str
    question: str
    anchors: tuple  # labels for scores 1..5
    judge_suffix: str = ""

    def __post_init__(self):
        if len(self.anchors) != 5:
            raise JudgeError(f"criterion {self.key} needs 5 anchor labels")


@dataclass(frozen=True)
class CriterionSet:
    kind: str
    criteria: tuple

    def __post_init__(self):
        if self.kind not in REQUIRED_KEYS:
            raise JudgeError(f"unknown criterion-set kind {self.kind!r}")
        keys = tuple(c.key for c in self.criteria)
        if set(keys) != set(REQUIRED_KEYS[self.kind]) or len(set(keys)) != len(keys):
            raise JudgeError(
                f"{self.kind} criteria must be exactly {REQUIRED_KEYS[self.kind]}"
            )

    def keys(self) -> tuple:
        return tuple(c.key for c in self.criteria)


@lru_cache(maxsize=None)
def _criteria_data() -> dict:
    return json.loads(data_text("judge_criteria.json"))


@lru_cache(maxsize=None)
def load_criteria() -> dict:
    """kind -> CriterionSet, from the checked-in criteria file."""
    raw = _criteria_data()
    sets = {}
    for kind, entries in raw["criterion_sets"].items():
        criteria = tuple(
            Criterion(
                key=e["key"],
                name=e["name"],
                question=e["question"],
                anchors=tuple(e["anchors"][str(i)] for i in range(1, 6)),
                judge_suffix=e.get("judge_suffix", ""),
            )
            for e in entries
        )
        sets[kind] = CriterionSet(kind=kind, criteria=criteria)
    return sets


def system_prompt(kind: str, language: str) -> str:
    raw = _criteria_data()
    data_type = raw["data_type_by_kind"][kind]
    lang = language_name(language)
    return (
        raw["system_prompt"].replace("{language}", lang).replace("{data_type}", data_type)
    )


# -- score sheets -----------------------------------------------------------------


@dataclass(frozen=True)
class ScoreSheet:
    item_id: str
    kind: str
    scores: Mapping  # criterion key -> integer in [1, 5]
    rater_kind: str  # "llm_judge" | "human"
    rater_id: str
    language: str = ""

    def __post_init__(self):
        if self.kind not in REQUIRED_KEYS:
            raise ValueError(f"unknown sheet kind {self.kind!r}")
        if self.rater_kind not in ("llm_judge", "human"):
            raise ValueError("rater_kind must be llm_judge or human")
        scores = dict(self.scores)
        if set(scores) != set(REQUIRED_KEYS[self.kind]):
            raise ValueError(
                f"{self.kind} sheet must score exactly {REQUIRED_KEYS[self.kind]}"
            )
        for key, value in scores.items():
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise ValueError(f"score {key}={value!r} must be an integer in [1, 5]")
        object.__setattr__(self, "scores", scores)

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "kind": self.kind,
            "scores": dict(self.scores),
            "rater_kind": self.rater_kind,
            "rater_id": self.rater_id,
            "language": self.language,
        }


def sheet_from_json(data: dict) -> ScoreSheet:
    return ScoreSheet(
        item_id=data["item_id"],
        kind=data["kind"],
        scores=data["scores"],
        rater_kind=data["rater_kind"],
        rater_id=data["rater_id"],
        language=data.get("language", ""),
    )


# -- batch construction -------------------------------------------------------------


def _criterion_block(criterion: Criterion, lang: str) -> str:
    head = f"{criterion.name}: {criterion.question.replace('{language}', lang)}"
    if criterion.judge_suffix:
        head = f"{head} {criterion.judge_suffix}"
    anchors = "\n".join(f"{i}: {label}" for i, label in enumerate(criterion.anchors, 1))
    return f"{head}\n{anchors}"


def _persona_item_block(item: Mapping) -> str:
    lines = [f"(id: {item['id']})"]
    for sentence, taxonomy in item["profiles"]:
        lines.append(f"{sentence} (Taxonomy: {taxonomy})")
    return "\n".join(lines)


def _conversation_item_block(item: Mapping) -> str:
    lines = [f"(id: {item['id']})", "# Personas:"]
    for speaker, profiles in enumerate(item["personas"], start=1):
        lines.append(f"Speaker {speaker}:")
        lines.extend(str(p) for p in profiles)
    lines.append(f"# Common Ground: {item['speech_event']}")
    lines.append(str(item["common_ground"]))
    lines.append("# Dialogue:")
    for speaker, text in item["utterances"]:
        lines.append(f"Speaker {speaker}: {text}")
    return "\n".join(lines)


def build_judge_batch(
    items: Sequence[Mapping], kind: str, language: str, character_word: str = ""
):
    """Render one batched evaluation request as (system prompt, user prompt).

    ``kind`` is "persona" for persona batches; "conversation" (or either of
    "common_ground"/"dialogue") for conversation batches, which carry both
    the common-ground and dialogue criterion blocks.
    """
    del character_word  # accepted for interface stability; prompts don't need it
    lang = language_name(language)
    criteria = load_criteria()
    if kind == "persona":
        if len(items) > MAX_PERSONAS_PER_BATCH:
            raise JudgeError(
                f"persona batches are capped at {MAX_PERSONAS_PER_BATCH} items"
            )
        parts = ["### Input: Personas and Taxonomies", ""]
        parts.extend(_persona_item_block(item) + "\n" for item in items)
        parts.extend(_criterion_block(c, lang) + "\n" for c in criteria["persona"].criteria)
        parts.append(
            "### Output: Return your evaluation in a dictionary with each persona id "
            "as key and a dictionary with your evaluations as value and do not explain:"
        )
        user = "\n".join(parts)
        return system_prompt("persona", language), user
    if kind in ("conversation", "common_ground", "dialogue"):
        if len(items) > MAX_CONVERSATIONS_PER_BATCH:
            raise JudgeError(
                f"conversation batches are capped at {MAX_CONVERSATIONS_PER_BATCH} items"
            )
        parts = ["### Input: Conversations", ""]
        parts.extend(_conversation_item_block(item) + "\n" for item in items)
        parts.append("### Evaluation:")
        parts.append("")
        parts.append("# Common ground evaluation:")
        parts.extend(
            _criterion_block(c, lang) + "\n" for c in criteria["common_ground"].criteria
        )
        parts.append("# Dialogue evaluation:")
        parts.extend(
            _criterion_block(c, lang) + "\n" for c in criteria["dialogue"].criteria
        )
        parts.append(
            "### Output: Return your evaluation in a dictionary with each conversation "
            'id as key and two dictionaries for your "common_ground" and "dialogue" '
            "evaluations and do not explain:"
        )
        user = "\n".join(parts)
        return system_prompt("dialogue", language), user
    raise JudgeError(f"unknown batch kind {kind!r}")


# -- response parsing -----------------------------------------------------------------


def _balanced_spans(text: str, max_starts: int = 50):
    """Yield candidate dictionary substrings, string-aware, first-open first."""
    starts = 0
    i = 0
    n = len(text)
    while i < n and starts < max_starts:
        if text[i] != "{":
            i += 1
            continue
        starts += 1
        depth = 0
        quote = None
        escaped = False
        for j in range(i, n):
            ch = text[j]
            if quote is not None:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == quote:
                    quote = None
                continue
            if ch in "\"'":
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[i : j + 1]
                    break
        i += 1


def _extract_dict(text) -> dict:
    for span in _balanced_spans(str(text)):
        for loader in (json.loads, ast.literal_eval):
            try:
                value = loader(span)
            except Exception:
                continue
            if isinstance(value, dict):
                return value
    raise JudgeParseError("no dictionary found in response")


def _norm_key(key) -> str:
    return re.sub(r"[\s\-]+", "_", str(key).strip().lower())


_KIND_SECTION_ALIASES = {
    "common_ground": {
        "common_ground",
        "common_grounds",
        "commonground",
        "cg",
        "common_ground_evaluation",
    },
    "dialogue": {"dialogue", "dialog", "conversation", "dialogue_evaluation"},
}


@lru_cache(maxsize=None)
def _criterion_aliases(kind: str) -> dict:
    aliases = {}
    for criterion in load_criteria()[kind].criteria:
        aliases[_norm_key(criterion.key)] = criterion.key
        aliases[_norm_key(criterion.name)] = criterion.key
    return aliases


def _coerce_score(value):
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        return int(value) if value.is_integer() else None
    if isinstance(value, str):
        try:
            number = float(value.strip())
        except (ValueError, TypeError):
            return None
        return int(number) if number.is_integer() else None
    return None


def _select_section(obj: Mapping, kind: str):
    """Pick the per-kind criterion map out of one item's response entry."""
    if kind == "persona":
        return obj
    section_names = _KIND_SECTION_ALIASES[kind]
    for key, value in obj.items():
        if _norm_key(key) in section_names and isinstance(value, Mapping):
            return value
    # tolerate flattened responses that skip the section nesting
    aliases = _criterion_aliases(kind)
    if any(_norm_key(k) in aliases for k in obj):
        return obj
    return None


def parse_judge_response(text, expected_ids: Sequence, kind: str) -> dict:
    """Extract one ScoreSheet per expected id, or raise JudgeParseError.

    Tolerates python-literal dictionaries, criterion names instead of keys,
    numeric strings, and unknown extra keys. Every expected id must carry a
    complete in-range criterion map; anything less raises with the full list
    of problems.
    """
    criterion_set = load_criteria()[kind]
    data = _extract_dict(text)
    by_id = {}
    for key, value in data.items():
        by_id[str(key).strip()] = value
    expected = [str(i).strip() for i in expected_ids]
    missing = [i for i in expected if i not in by_id]
    extra = [i for i in by_id if i not in expected]
    if missing:
        raise JudgeParseError("response incomplete", missing_ids=missing, extra_ids=extra)
    aliases = _criterion_aliases(kind)
    sheets = {}
    bad = []
    for item_id in expected:
        entry = by_id[item_id]
        if not isinstance(entry, Mapping):
            bad.append((item_id, "<entry>", "not a dictionary"))
            continue
        section = _select_section(entry, kind)
        if section is None:
            bad.append((item_id, kind, "missing evaluation section"))
            continue
        found = {}
        for key, value in section.items():
            norm = _norm_key(key)
            if norm in aliases:
                found[aliases[norm]] = value
        scores = {}
        for criterion in criterion_set.criteria:
            if criterion.key not in found:
                bad.append((item_id, criterion.key, "missing"))
                continue
            value = _coerce_score(found[criterion.key])
            if value is None:
                bad.append(
                    (item_id, criterion.key, f"non-integer {found[criterion.key]!r}")
                )
                continue
            if not 1 <= value <= 5:
                bad.append((item_id, criterion.key, f"out of range {value}"))
                continue
            scores[criterion.key] = value
        if len(scores) == len(criterion_set.criteria):
            sheets[item_id] = ScoreSheet(
                item_id=item_id,
                kind=kind,
                scores=scores,
                rater_kind="llm_judge",
                rater_id="",
            )
    if bad:
        raise JudgeParseError("invalid scores", extra_ids=extra, bad_scores=bad)
    return sheets


# -- record -> judge item adapters -------------------------------------------------------


def judge_item_from_persona(record: Mapping) -> dict:
    return {
        "id": record["id"],
        "profiles": [[p["sentence"], p["taxonomy"]] for p in record["profiles"]],
    }


def judge_item_from_dialogue(record: Mapping) -> dict:
    event = record["common_ground"]["speech_event"]
    return {
        "id": record["id"],
        "personas": [
            [p["sentence"] for p in persona["profiles"]]
            for persona in record["personas"]
        ],
        "speech_event": f"{event['category']} | {event['subcategory']}",
        "common_ground": record["common_ground"]["text"],
        "utterances": [[u[0], u[1]] for u in record["utterances"]],
    }


# -- batched runner ------------------------------------------------------------------------


def _chunks(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def judge_personas(
    items: Sequence[Mapping],
    language: str,
    gateway: LlmGateway,
    *,
    batch_size: int = MAX_PERSONAS_PER_BATCH,
    on_drop=None,
) -> list:
    """Score persona items; malformed batches are re-asked once then dropped."""
    sheets = []
    for b, batch in enumerate(_chunks(list(items), batch_size)):
        system, user = build_judge_batch(batch, "persona", language)
        ids = [item["id"] for item in batch]
        parsed = _ask_with_retry(
            gateway, system, user, ids, ("persona",), f"judge:personas:b{b}", on_drop
        )
        if parsed is not None:
            for sheet_map in parsed:
                for sheet in sheet_map.values():
                    sheets.append(
                        replace(sheet, rater_id=gateway.model_id, language=language)
                    )
    return sheets


def judge_conversations(
    items: Sequence[Mapping],
    language: str,
    gateway: LlmGateway,
    *,
    batch_size: int = MAX_CONVERSATIONS_PER_BATCH,
    on_drop=None,
) -> list:
    """Score conversation items; each yields common-ground + dialogue sheets."""
    sheets = []
    for b, batch in enumerate(_chunks(list(items), batch_size)):
        system, user = build_judge_batch(batch, "conversation", language)
        ids = [item["id"] for item in batch]
        parsed = _ask_with_retry(
            gateway,
            system,
            user,
            ids,
            ("common_ground", "dialogue"),
            f"judge:conversations:b{b}",
            on_drop,
        )
        if parsed is not None:
            for sheet_map in parsed:
                for sheet in sheet_map.values():
                    sheets.append(
                        replace(sheet, rater_id=gateway.model_id, language=language)
                    )
    return sheets


def _ask_with_retry(gateway, system, user, ids, kinds, tag, on_drop):
    """One judge call, re-asked once on a parse failure; None when dropped."""
    last_error = None
    for attempt in (1, 2):
        candidates = gateway.generate(
            [("system", system), ("user", user)],
            JUDGE_DECODING,
            request_tag=f"{tag}:att{attempt}",
        )
        text = candidates[0].text
        try:
            return [parse_judge_response(text, ids, kind) for kind in kinds]
        except JudgeParseError as exc:
            last_error = exc
    if on_drop is not None:
        on_drop(tag, ids, last_error)
    return None


# -- aggregation -------------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreTable:
    """Criterion means plus part means (P/CG/C) and their overall average."""

    n_sheets: int
    criterion_means: Mapping  # (kind, criterion key) -> float
    part_means: Mapping  # part label -> float
    average: float


def aggregate(sheets: Iterable[ScoreSheet]) -> ScoreTable:
    """Unweighted criterion means -> part means -> overall average."""
    sheets = list(sheets)
    if not sheets:
        raise ValueError("no score sheets to aggregate")
    by_kind = {}
    for sheet in sheets:
        by_kind.setdefault(sheet.kind, []).append(sheet)
    criterion_means = {}
    part_means = {}
    for kind in KINDS:
        group = by_kind.get(kind)
        if not group:
            continue
        kind_means = []
        for key in REQUIRED_KEYS[kind]:
            mean = fsum(s.scores[key] for s in group) / len(group)
            criterion_means[(kind, key)] = mean
            kind_means.append(mean)
        part_means[PART_BY_KIND[kind]] = fsum(kind_means) / len(kind_means)
    average = fsum(part_means.values()) / len(part_means)
    return ScoreTable(
        n_sheets=len(sheets),
        criterion_means=criterion_means,
        part_means=part_means,
        average=average,
    )


def aggregate_by_group(sheets: Iterable[ScoreSheet]):
    """(rater_id, language) -> ScoreTable over that group's sheets."""
    groups = {}
    for sheet in sheets:
        groups.setdefault((sheet.rater_id, sheet.language), []).append(sheet)
    return {key: aggregate(group) for key, group in sorted(groups.items())}
