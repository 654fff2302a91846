"""Three-stage corpus generation: personas, common grounds, conversations.

Each stage talks to an instruction-tuned model through the gateway, screens
candidates with the quality filters, and produces typed records that
serialize to the JSONL shapes the store persists. A conversation is driven
by two model instances that alternate as speakers; the shared context
appears in their prompts only for the first two turns.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .filters import (
    FilterLog,
    RetryLadder,
    check_cg_markers,
    check_language,
    clean_text,
    clean_utterance,
    is_repetitive,
)
from .gateway import (
    CG_DECODING,
    DecodingConfig,
    LlmGateway,
    PERSONA_DECODING,
    UTTERANCE_DECODING,
)
from .languages import Language, get_language
from .prompts import (
    SpeakerContext,
    build_cg_prompt,
    build_persona_prompt,
    build_speaker_prompt,
)
from .store import SCHEMA_VERSION, content_id
from .taxonomy import (
    SpeechEventDraw,
    sample_persona_constraints,
    sample_speech_event,
)

ALLOWED_N_DEMOS = (0, 1, 2, 4, 6, 8, 10)
MIN_TURNS, MAX_TURNS = 4, 10


@dataclass(frozen=True)
class Dropped:
    """A slot abandoned by the retry policy; carries the stage and reason."""

    stage: str
    reason: str


@dataclass(frozen=True)
class Provenance:
    model_id: str
    decoding: DecodingConfig
    demo_seed: int
    n_demos: int


def _decoding_to_json(decoding: DecodingConfig) -> dict:
    return {
        "temperature": decoding.temperature,
        "top_p": decoding.top_p,
        "repetition_penalty": decoding.repetition_penalty,
        "max_new_tokens": decoding.max_new_tokens,
    }


def _decoding_from_json(data: dict) -> DecodingConfig:
    return DecodingConfig(
        temperature=data["temperature"],
        top_p=data["top_p"],
        repetition_penalty=data["repetition_penalty"],
        max_new_tokens=data["max_new_tokens"],
    )


@dataclass(frozen=True)
class Persona:
    """Five profile sentences, each bound to a distinct taxonomy entity."""

    profiles: tuple  # ((sentence, taxonomy_path), ...) exactly 5
    language: str
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(
            self, "profiles", tuple((str(s), str(p)) for s, p in self.profiles)
        )
        if len(self.profiles) != 5:
            raise ValueError("persona needs exactly 5 profile sentences")
        if any(not s.strip() for s, _ in self.profiles):
            raise ValueError("profile sentences must be non-empty")
        paths = [p for _, p in self.profiles]
        if len(set(paths)) != len(paths):
            raise ValueError("taxonomy refs must be pairwise distinct")

    @property
    def profile_sentences(self) -> tuple:
        return tuple(s for s, _ in self.profiles)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "persona",
            "language": self.language,
            "profiles": [
                {"sentence": s, "taxonomy": p} for s, p in self.profiles
            ],
            "provenance": {
                "model_id": self.provenance.model_id,
                "decoding": _decoding_to_json(self.provenance.decoding),
                "demo_seed": self.provenance.demo_seed,
                "n_demos": self.provenance.n_demos,
            },
        }

    @property
    def record_id(self) -> str:
        return content_id(self.to_json())


def persona_from_json(data: dict) -> Persona:
    prov = data["provenance"]
    return Persona(
        profiles=tuple((p["sentence"], p["taxonomy"]) for p in data["profiles"]),
        language=data["language"],
        provenance=Provenance(
            model_id=prov["model_id"],
            decoding=_decoding_from_json(prov["decoding"]),
            demo_seed=prov["demo_seed"],
            n_demos=prov["n_demos"],
        ),
    )


@dataclass(frozen=True)
class CommonGround:
    """Narrator paragraph shared by both speakers of one conversation."""

    text: str
    speech_event: SpeechEventDraw
    persona_refs: tuple
    language: str
    attempts_used: int
    character_word: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("common-ground text must be non-empty")
        if not 1 <= self.attempts_used <= 3:
            raise ValueError("attempts_used must be in [1, 3]")
        if len(self.persona_refs) != 2:
            raise ValueError("persona_refs must hold exactly two ids")
        if not check_cg_markers(self.text, self.character_word):
            raise ValueError("common ground must mention both character markers")

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "common_ground",
            "language": self.language,
            "text": self.text,
            "speech_event": {
                "category": self.speech_event.event.category,
                "subcategory": self.speech_event.event.subcategory,
                "symmetric": self.speech_event.event.symmetric,
                "reformulation": self.speech_event.reformulation,
            },
            "persona_refs": list(self.persona_refs),
            "attempts_used": self.attempts_used,
            "character_word": self.character_word,
        }

    @property
    def record_id(self) -> str:
        return content_id(self.to_json())


@dataclass(frozen=True)
class DialogueRecord:
    personas: tuple  # (Persona, Persona)
    common_ground: CommonGround
    utterances: tuple  # ((speaker_index, text), ...)
    planned_turns: int
    language: str
    model_id: str
    decoding: DecodingConfig
    created_at: str

    def __post_init__(self):
        object.__setattr__(
            self, "utterances", tuple((int(s), str(t)) for s, t in self.utterances)
        )
        if not MIN_TURNS <= self.planned_turns <= MAX_TURNS:
            raise ValueError("planned_turns must be in [4, 10]")
        if len(self.utterances) < 2 * MIN_TURNS:
            raise ValueError("dialogue needs at least 8 utterances")
        if len(self.utterances) > 2 * self.planned_turns:
            raise ValueError("utterance count exceeds 2 * planned_turns")
        for i, (speaker, text) in enumerate(self.utterances):
            if speaker != (i % 2) + 1:
                raise ValueError("speakers must alternate starting with speaker 1")
            if not text.strip():
                raise ValueError("utterances must be non-empty")

    def to_json(self) -> dict:
        personas = []
        for p in self.personas:
            body = p.to_json()
            body["id"] = p.record_id
            personas.append(body)
        cg = self.common_ground.to_json()
        cg["id"] = self.common_ground.record_id
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "dialogue",
            "language": self.language,
            "personas": personas,
            "common_ground": cg,
            "utterances": [[s, t] for s, t in self.utterances],
            "planned_turns": self.planned_turns,
            "model_id": self.model_id,
            "decoding": _decoding_to_json(self.decoding),
            "created_at": self.created_at,
        }

    @property
    def record_id(self) -> str:
        return content_id(self.to_json())


def common_ground_from_json(data: dict, events=None) -> CommonGround:
    from .taxonomy import load_speech_events

    pool = events if events is not None else load_speech_events()
    by_label = {(e.category, e.subcategory): e for e in pool}
    se = data["speech_event"]
    event = by_label[(se["category"], se["subcategory"])]
    return CommonGround(
        text=data["text"],
        speech_event=SpeechEventDraw(event=event, reformulation=se["reformulation"]),
        persona_refs=tuple(data["persona_refs"]),
        language=data["language"],
        attempts_used=data["attempts_used"],
        character_word=data["character_word"],
    )


def dialogue_from_json(data: dict, events=None) -> DialogueRecord:
    return DialogueRecord(
        personas=tuple(persona_from_json(p) for p in data["personas"]),
        common_ground=common_ground_from_json(data["common_ground"], events),
        utterances=tuple((u[0], u[1]) for u in data["utterances"]),
        planned_turns=data["planned_turns"],
        language=data["language"],
        model_id=data["model_id"],
        decoding=_decoding_from_json(data["decoding"]),
        created_at=data["created_at"],
    )


# -- persona generation --------------------------------------------------------


_LINE_PREFIX = re.compile(r"^\s*(?:[-*•]+|\d+[.)]|example\s*<?\d*>?:?)\s*", re.IGNORECASE)


def parse_persona_sentences(text: str) -> Optional[list]:
    """Split model output into profile sentences; None when fewer than 5."""
    lines = []
    for raw in text.splitlines():
        line = _LINE_PREFIX.sub("", raw.strip()).strip()
        if line:
            lines.append(line)
    if len(lines) < 5:
        return None
    return lines[:5]


def load_demo_personas() -> tuple:
    """Bundled English persona descriptions used as few-shot demonstrations."""
    import json

    from .languages import data_text

    pool = json.loads(data_text("demo_personas.json"))
    return tuple(tuple(sentences) for sentences in pool)


def select_demos(demo_pool: Sequence, n_demos: int, demo_seed: int) -> list:
    """Deterministic demonstration subset for one run."""
    if n_demos not in ALLOWED_N_DEMOS:
        raise ValueError(f"n_demos must be one of {ALLOWED_N_DEMOS}")
    if n_demos > len(demo_pool):
        raise ValueError("demo pool smaller than n_demos")
    if n_demos == 0:
        return []
    return random.Random(demo_seed).sample(list(demo_pool), n_demos)


def generate_personas(
    language: Language,
    count: int,
    n_demos: int,
    demo_seed: int,
    taxonomy,
    gateway: LlmGateway,
    demo_pool: Sequence,
    *,
    detector,
    ladder: RetryLadder = RetryLadder(),
    decoding: DecodingConfig = PERSONA_DECODING,
    filter_log: Optional[FilterLog] = None,
    rng_seed: int = 0,
    template_dir: Optional[str] = None,
    run_tag: str = "personas",
) -> list:
    """Generate `count` personas; slots whose ladder exhausts are skipped."""
    log = filter_log or FilterLog()
    demos = select_demos(demo_pool, n_demos, demo_seed)
    provenance = Provenance(
        model_id=gateway.model_id,
        decoding=decoding,
        demo_seed=demo_seed,
        n_demos=n_demos,
    )
    results = []
    for j in range(count):
        slot_seed = rng_seed * 1_000_003 + j
        constraints = sample_persona_constraints(taxonomy, slot_seed)
        prompt = build_persona_prompt(
            constraints, demos, language, num_requested=1, template_dir=template_dir
        )
        persona = None
        for attempt, n_candidates in ladder.schedule():
            tag = f"{run_tag}:slot{j}:att{attempt}"
            candidates = gateway.generate(
                [("system", prompt)],
                DecodingConfig(
                    temperature=decoding.temperature,
                    top_p=decoding.top_p,
                    repetition_penalty=decoding.repetition_penalty,
                    max_new_tokens=decoding.max_new_tokens,
                    n_candidates=n_candidates,
                ),
                request_tag=tag,
            )
            for candidate in candidates:
                sentences = parse_persona_sentences(candidate.text)
                if sentences is None:
                    log.log(tag, "persona_parse", "reject", "fewer than 5 lines", attempt)
                    continue
                verdict = check_language(" ".join(sentences), language.tag, detector)
                if not verdict.passed:
                    log.log(tag, "persona_language", "reject", verdict.reason, attempt)
                    continue
                persona = Persona(
                    profiles=tuple(zip(sentences, constraints.paths)),
                    language=language.tag,
                    provenance=provenance,
                )
                log.log(tag, "persona", "accept", "", attempt)
                break
            if persona is not None:
                break
        if persona is None:
            log.log(f"{run_tag}:slot{j}", "persona", "drop", "ladder exhausted", ladder.max_attempts)
        else:
            results.append(persona)
    return results


# -- common-ground generation -----------------------------------------------------


def generate_common_ground(
    p1: Persona,
    p2: Persona,
    se: SpeechEventDraw,
    language: Language,
    gateway: LlmGateway,
    *,
    detector,
    ladder: RetryLadder = RetryLadder(),
    decoding: DecodingConfig = CG_DECODING,
    filter_log: Optional[FilterLog] = None,
    character_word: Optional[str] = None,
    template_dir: Optional[str] = None,
    run_tag: str = "cg",
):
    """First candidate passing language + marker checks, else Dropped."""
    log = filter_log or FilterLog()
    word = character_word if character_word is not None else language.character_word
    prompt = build_cg_prompt(
        p1, p2, se, language, character_word=word, template_dir=template_dir
    )
    for attempt, n_candidates in ladder.schedule():
        tag = f"{run_tag}:att{attempt}"
        candidates = gateway.generate(
            [("system", prompt)],
            DecodingConfig(
                temperature=decoding.temperature,
                top_p=decoding.top_p,
                repetition_penalty=decoding.repetition_penalty,
                max_new_tokens=decoding.max_new_tokens,
                n_candidates=n_candidates,
            ),
            request_tag=tag,
        )
        for candidate in candidates:
            text = clean_text(candidate.text)
            if not text:
                log.log(tag, "cg_clean", "reject", "empty", attempt)
                continue
            if not check_cg_markers(text, word):
                log.log(tag, "cg_markers", "reject", "missing character markers", attempt)
                continue
            verdict = check_language(text, language.tag, detector)
            if not verdict.passed:
                log.log(tag, "cg_language", "reject", verdict.reason, attempt)
                continue
            log.log(tag, "cg", "accept", "", attempt)
            return CommonGround(
                text=text,
                speech_event=se,
                persona_refs=(p1.record_id, p2.record_id),
                language=language.tag,
                attempts_used=attempt,
                character_word=word,
            )
    log.log(run_tag, "cg", "drop", "ladder exhausted", ladder.max_attempts)
    return Dropped(stage="common_ground", reason="ladder exhausted")


# -- conversation generation -------------------------------------------------------


def sample_planned_turns(rng_seed: int) -> int:
    """Uniform integer in [4, 10]; one draw per conversation."""
    return random.Random(rng_seed).randint(MIN_TURNS, MAX_TURNS)


def _speaker_messages(system_prompt: str, speaker_index: int, utterances) -> list:
    """History from one speaker's point of view: own turns are assistant."""
    messages = [("system", system_prompt)]
    for spk, text in utterances:
        role = "assistant" if spk == speaker_index else "user"
        messages.append((role, text))
    return messages


def generate_conversation(
    p1: Persona,
    p2: Persona,
    cg: CommonGround,
    se: SpeechEventDraw,
    language: Language,
    gateway: LlmGateway,
    *,
    rng_seed: int,
    detector,
    ladder: RetryLadder = RetryLadder(),
    decoding: DecodingConfig = UTTERANCE_DECODING,
    filter_log: Optional[FilterLog] = None,
    created_at: str = "",
    template_dir: Optional[str] = None,
    run_tag: str = "dlg",
):
    """Alternating two-instance generation; kept iff >= 4 complete turns."""
    log = filter_log or FilterLog()
    planned = sample_planned_turns(rng_seed)
    personas = (p1, p2)
    utterances = []
    exhausted = False
    for turn in range(1, planned + 1):
        for speaker_index in (1, 2):
            ctx = SpeakerContext(
                speaker_index=speaker_index,
                persona=personas[speaker_index - 1],
                common_ground_text=cg.text,
                character_word=cg.character_word,
                speech_event=se,
                num_turns=planned,
                current_turn=turn,
                language=language.tag,
            )
            first = turn == 1 and speaker_index == 1
            system_prompt = build_speaker_prompt(ctx, first, template_dir=template_dir)
            messages = _speaker_messages(system_prompt, speaker_index, utterances)
            accepted = None
            for attempt, n_candidates in ladder.schedule():
                tag = f"{run_tag}:turn{turn}:spk{speaker_index}:att{attempt}"
                candidates = gateway.generate(
                    messages,
                    DecodingConfig(
                        temperature=decoding.temperature,
                        top_p=decoding.top_p,
                        repetition_penalty=decoding.repetition_penalty,
                        max_new_tokens=decoding.max_new_tokens,
                        n_candidates=n_candidates,
                    ),
                    request_tag=tag,
                )
                for candidate in candidates:
                    outcome = clean_utterance(candidate)
                    if not outcome.ok:
                        log.log(tag, "utterance_clean", "reject", outcome.reason, attempt)
                        continue
                    history = [t for _, t in utterances]
                    if is_repetitive(history, outcome.text):
                        log.log(tag, "utterance_repetition", "reject", "near-duplicate", attempt)
                        continue
                    verdict = check_language(outcome.text, language.tag, detector)
                    if not verdict.passed:
                        log.log(tag, "utterance_language", "reject", verdict.reason, attempt)
                        continue
                    accepted = outcome.text
                    break
                if accepted is not None:
                    break
            if accepted is None:
                exhausted = True
                log.log(
                    f"{run_tag}:turn{turn}:spk{speaker_index}",
                    "utterance",
                    "early_stop",
                    "ladder exhausted",
                    ladder.max_attempts,
                )
                break
            utterances.append((speaker_index, accepted))
        if exhausted:
            break
    completed_turns = len(utterances) // 2
    if completed_turns < MIN_TURNS:
        log.log(run_tag, "dialogue", "drop", f"only {completed_turns} complete turns", 0)
        return Dropped(stage="conversation", reason="fewer than 4 complete turns")
    # a trailing unanswered utterance is trimmed so turns stay whole
    kept = utterances[: completed_turns * 2]
    return DialogueRecord(
        personas=personas,
        common_ground=cg,
        utterances=tuple(kept),
        planned_turns=planned,
        language=language.tag,
        model_id=gateway.model_id,
        decoding=decoding,
        created_at=created_at,
    )


# -- one conversation slot end to end ----------------------------------------------


def generate_dialogue_slot(
    slot: int,
    persona_pool: Sequence,
    events,
    language: Language,
    gateway: LlmGateway,
    *,
    run_seed: int,
    detector,
    ladder: RetryLadder = RetryLadder(),
    cg_decoding: DecodingConfig = CG_DECODING,
    utterance_decoding: DecodingConfig = UTTERANCE_DECODING,
    filter_log: Optional[FilterLog] = None,
    created_at: str = "",
    template_dir: Optional[str] = None,
):
    """Pair two personas, draw a speech event, build CG, run the dialogue."""
    if len(persona_pool) < 2:
        raise ValueError("persona pool must hold at least two personas")
    slot_seed = run_seed * 1_000_003 + slot
    rng = random.Random(slot_seed)
    p1, p2 = rng.sample(list(persona_pool), 2)
    se = sample_speech_event(events, rng.randrange(2**32))
    conversation_seed = rng.randrange(2**32)
    tag = f"dlg{slot}"
    cg = generate_common_ground(
        p1,
        p2,
        se,
        language,
        gateway,
        detector=detector,
        ladder=ladder,
        decoding=cg_decoding,
        filter_log=filter_log,
        template_dir=template_dir,
        run_tag=f"{tag}:cg",
    )
    if isinstance(cg, Dropped):
        return cg
    return generate_conversation(
        p1,
        p2,
        cg,
        se,
        language,
        gateway,
        rng_seed=conversation_seed,
        detector=detector,
        ladder=ladder,
        decoding=utterance_decoding,
        filter_log=filter_log,
        created_at=created_at,
        template_dir=template_dir,
        run_tag=tag,
    )
