"""Persona-constraint and conversation-type taxonomies: load, validate, sample."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .languages import data_text

SPEECH_EVENT_CATEGORIES = ("Informal/Superficial", "Goal-directed", "Involving")


class TaxonomyError(ValueError):
    """A taxonomy file violates its schema."""


@dataclass(frozen=True)
class TaxonomyEntity:
    category_path: tuple[str, ...]
    sentences: tuple[str, ...]

    @property
    def path_str(self) -> str:
        return " | ".join(self.category_path)


@dataclass(frozen=True)
class SpeechEvent:
    category: str
    subcategory: str
    symmetric: bool
    reformulations: tuple[str, ...]
    description_symmetric: Optional[str] = None
    description_general: Optional[str] = None
    description_s1: Optional[str] = None
    description_s2: Optional[str] = None

    @property
    def description(self) -> str:
        """Speaker-neutral sentence describing the event."""
        text = self.description_symmetric if self.symmetric else self.description_general
        assert text is not None
        return text

    def role_sentence(self, speaker_index: int) -> str:
        if self.symmetric:
            return self.description
        return self.description_s1 if speaker_index == 1 else self.description_s2

    @property
    def label(self) -> str:
        return f"{self.category} | {self.subcategory}"


@dataclass(frozen=True)
class SpeechEventDraw:
    """One sampled event together with the phrasing chosen for this use."""

    event: SpeechEvent
    reformulation: str

    def role_for(self, speaker_index: int) -> str:
        return self.event.role_sentence(speaker_index)


@dataclass(frozen=True)
class PersonaConstraintSet:
    # (entity, index of the chosen sentence) pairs, in sampled order
    entries: tuple[tuple[TaxonomyEntity, int], ...]

    def __post_init__(self):
        paths = {entity.category_path for entity, _ in self.entries}
        if len(self.entries) != 5 or len(paths) != 5:
            raise TaxonomyError(
                "a persona constraint set needs exactly 5 entities with distinct category paths"
            )

    @property
    def entities(self) -> tuple[TaxonomyEntity, ...]:
        return tuple(entity for entity, _ in self.entries)

    @property
    def sentences(self) -> tuple[str, ...]:
        return tuple(entity.sentences[idx] for entity, idx in self.entries)

    @property
    def paths(self) -> tuple[str, ...]:
        return tuple(entity.path_str for entity in self.entities)


def _read_source(path, default_name: str) -> str:
    if path is None:
        return data_text(default_name)
    return Path(path).read_text(encoding="utf-8")


def _parse_json(raw: str, what: str) -> list:
    try:
        records = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"cannot parse {what}: {exc}") from exc
    if not isinstance(records, list):
        raise TaxonomyError(f"{what} must be a list of records")
    return records


def load_persona_taxonomy(path=None) -> tuple[TaxonomyEntity, ...]:
    """Load persona constraint entities, enforcing path depth and uniqueness."""
    records = _parse_json(_read_source(path, "persona_taxonomy.json"), "persona taxonomy")
    entities, seen = [], set()
    for rec in records:
        cat = tuple(rec.get("category_path") or ())
        sentences = tuple(rec.get("sentences") or ())
        label = " / ".join(cat) or "<empty path>"
        if not 1 <= len(cat) <= 4:
            raise TaxonomyError(f"category path depth out of range at {label}")
        if not 1 <= len(sentences) <= 10 or any(not s.strip() for s in sentences):
            raise TaxonomyError(f"entity {label} needs 1 to 10 non-empty sentences")
        if cat in seen:
            raise TaxonomyError(f"duplicate category path {label}")
        seen.add(cat)
        entities.append(TaxonomyEntity(category_path=cat, sentences=sentences))
    return tuple(entities)


def load_speech_events(path=None) -> tuple[SpeechEvent, ...]:
    """Load the speech-event taxonomy, enforcing role-symmetry invariants."""
    records = _parse_json(_read_source(path, "speech_events.json"), "speech events")
    events, seen = [], set()
    for rec in records:
        name = rec.get("subcategory", "<unnamed>")
        if rec.get("category") not in SPEECH_EVENT_CATEGORIES:
            raise TaxonomyError(f"unknown speech-event category for {name}")
        if name in seen:
            raise TaxonomyError(f"duplicate speech event {name}")
        seen.add(name)
        reformulations = tuple(rec.get("reformulations") or ())
        if not reformulations or any(not r.strip() for r in reformulations):
            raise TaxonomyError(f"speech event {name} needs non-empty reformulations")
        symmetric = bool(rec.get("symmetric"))
        if symmetric:
            if not rec.get("description_symmetric") or rec.get("description_s1") or rec.get("description_s2"):
                raise TaxonomyError(
                    f"symmetric event {name} must carry only a shared description"
                )
        else:
            if not (rec.get("description_s1") and rec.get("description_s2") and rec.get("description_general")):
                raise TaxonomyError(
                    f"asymmetric event {name} must carry both role sentences and a general description"
                )
        events.append(
            SpeechEvent(
                category=rec["category"],
                subcategory=name,
                symmetric=symmetric,
                reformulations=reformulations,
                description_symmetric=rec.get("description_symmetric"),
                description_general=rec.get("description_general"),
                description_s1=rec.get("description_s1"),
                description_s2=rec.get("description_s2"),
            )
        )
    return tuple(events)


def sample_persona_constraints(
    taxonomy: Sequence[TaxonomyEntity], rng_seed: int
) -> PersonaConstraintSet:
    """Pick 5 distinct entities and one sentence each, uniformly, seed-deterministic."""
    if len(taxonomy) < 5:
        raise TaxonomyError(f"need at least 5 taxonomy entities, got {len(taxonomy)}")
    rng = random.Random(rng_seed)
    entries = []
    for i in rng.sample(range(len(taxonomy)), 5):
        entity = taxonomy[i]
        entries.append((entity, rng.randrange(len(entity.sentences))))
    return PersonaConstraintSet(entries=tuple(entries))


def sample_speech_event(
    events: Sequence[SpeechEvent], rng_seed: int
) -> SpeechEventDraw:
    if not events:
        raise TaxonomyError("speech-event taxonomy is empty")
    rng = random.Random(rng_seed)
    event = events[rng.randrange(len(events))]
    reformulation = event.reformulations[rng.randrange(len(event.reformulations))]
    return SpeechEventDraw(event=event, reformulation=reformulation)
