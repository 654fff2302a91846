"""Deterministic prompt assembly from the checked-in template files.

Templates are plain text with ``{placeholder}`` slots, organised as blank-line
separated blocks: optional input blocks, an instructions section, a
constraints section, an optional demonstration header + per-demo pattern, and
one or more closing generation blocks. Sections are joined with one blank
line; no prompt ever ends with a newline.

Placeholder vocabulary per template:

- ``persona.txt``: ``{lang}``, ``{k}``, ``{demo_profiles}``, ``{num_requested}``,
  ``{taxonomy_sentence}`` (the taxonomy line is repeated once per constraint)
- ``cg.txt``: ``{character_1_profiles}``, ``{character_2_profiles}``,
  ``{language}``, ``{speech_event_sentence}``, ``{category}``,
  ``{speech_event}``, ``{speech_event_description}``,
  ``{translation_of_character_in_target}``
- ``conversation_first.txt`` / ``conversation_turn.txt``: ``{language}``,
  ``{speech_event_type}``, ``{speech_event_taxonomy}``,
  ``{speech_event_sentence_description_with_speakers_role}``,
  ``{persona_profiles}``, ``{common_ground}``,
  ``{translation_of_character_in_target}``, ``{1_or_2}``, ``{num_turns}``,
  ``{current_turn}`` (the common-ground block is dropped after turn 2)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .languages import Language, data_text, language_name
from .taxonomy import PersonaConstraintSet, SpeechEventDraw

STEPS = ("persona", "common_ground", "conversation_first", "conversation_turn")
# steps the generation pipeline always runs without demonstrations
ZERO_SHOT_STEPS = ("common_ground", "conversation_first", "conversation_turn")

_TEMPLATE_FILES = {
    "persona": "persona.txt",
    "common_ground": "cg.txt",
    "conversation_first": "conversation_first.txt",
    "conversation_turn": "conversation_turn.txt",
}

_PLACEHOLDER = re.compile(r"\{([a-z0-9_]+)\}")


class PromptError(ValueError):
    """Template structure or placeholder resolution failure."""


def fill(text: str, values: Mapping[str, object]) -> str:
    """Substitute every ``{name}`` slot, failing loudly on unknown names."""

    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise PromptError(f"unresolved placeholder {{{key}}}")
        return str(values[key])

    return _PLACEHOLDER.sub(sub, text)


@dataclass(frozen=True)
class Template:
    step: str
    input_blocks: tuple[str, ...]
    instructions_header: str
    instructions: tuple[str, ...]
    constraints_header: str
    constraints: tuple[str, ...]
    demo_header: Optional[str]
    demo_pattern: Optional[str]
    gen_blocks: tuple[str, ...]


@lru_cache(maxsize=None)
def examples_header() -> str:
    return data_text("templates/examples_header.txt").rstrip("\n")


@lru_cache(maxsize=None)
def load_template(step: str, template_dir: Optional[str] = None) -> Template:
    if step not in _TEMPLATE_FILES:
        raise PromptError(f"unknown prompt step {step!r}")
    name = _TEMPLATE_FILES[step]
    if template_dir is None:
        raw = data_text(f"templates/{name}")
    else:
        raw = (Path(template_dir) / name).read_text(encoding="utf-8")
    return _parse_template(step, raw)


def _parse_template(step: str, raw: str) -> Template:
    blocks = raw.rstrip("\n").split("\n\n")
    idx = next(
        (i for i, b in enumerate(blocks) if b.startswith("### Instructions")), None
    )
    if idx is None or idx + 1 >= len(blocks):
        raise PromptError(f"template {step} lacks an instructions section")
    input_blocks = tuple(blocks[:idx])
    ins_lines = blocks[idx].split("\n")
    con_lines = blocks[idx + 1].split("\n")
    if not con_lines[0].startswith("### Constraints"):
        raise PromptError(f"template {step} lacks a constraints section")
    tail = blocks[idx + 2:]
    demo_header = demo_pattern = None
    gen_blocks = []
    for i, block in enumerate(tail):
        if "{demo_profiles}" in block:
            demo_pattern = block
            if i == 0:
                raise PromptError(f"template {step} has a demo block but no demo header")
            demo_header = tail[i - 1]
            gen_blocks.remove(tail[i - 1])
        else:
            gen_blocks.append(block)
    if not gen_blocks:
        raise PromptError(f"template {step} lacks a generation block")
    return Template(
        step=step,
        input_blocks=input_blocks,
        instructions_header=ins_lines[0],
        instructions=tuple(ins_lines[1:]),
        constraints_header=con_lines[0],
        constraints=tuple(con_lines[1:]),
        demo_header=demo_header,
        demo_pattern=demo_pattern,
        gen_blocks=tuple(gen_blocks),
    )


@dataclass(frozen=True)
class PromptSpec:
    """Fully rendered prompt sections, ready for order-preserving assembly."""

    step: str
    instructions: tuple[str, ...]
    constraints: tuple[str, ...]
    demonstrations: tuple[str, ...]
    generation_instruction: str
    section_headers: tuple[str, str, str]  # instructions, constraints, demos
    input_blocks: tuple[str, ...] = field(default=())


def validate_spec(spec: PromptSpec) -> None:
    if spec.step not in STEPS:
        raise PromptError(f"unknown prompt step {spec.step!r}")
    if not spec.instructions:
        raise PromptError("prompt spec has no instructions")
    if spec.step in ZERO_SHOT_STEPS and spec.demonstrations:
        raise PromptError(f"step {spec.step} is generated 0-shot; demonstrations not allowed")


def assemble(spec: PromptSpec) -> str:
    """Join sections with blank lines; empty demo lists leave no trace."""
    if not spec.instructions:
        raise PromptError("prompt spec has no instructions")
    head_i, head_c, head_d = spec.section_headers
    sections = list(spec.input_blocks)
    sections.append("\n".join([head_i, *spec.instructions]))
    sections.append("\n".join([head_c, *spec.constraints]))
    if spec.demonstrations:
        sections.append(head_d)
        sections.extend(spec.demonstrations)
    sections.append(spec.generation_instruction)
    text = "\n\n".join(s for s in sections if s)
    leftover = _PLACEHOLDER.search(text)
    if leftover:
        raise PromptError(f"unresolved placeholder {{{leftover.group(1)}}}")
    return text


def render_profiles(source) -> str:
    """Render a persona-ish object as five plain lines.

    Accepts a ready string, a sequence of sentences, or any object exposing
    ``profile_sentences``.
    """
    if isinstance(source, str):
        return source.rstrip("\n")
    sentences = getattr(source, "profile_sentences", None)
    if sentences is None:
        sentences = source
    return "\n".join(str(s) for s in sentences)


def _spec_from_template(
    template: Template, values: Mapping[str, object], demonstrations: tuple[str, ...] = (),
    skip_gen_block=None,
) -> PromptSpec:
    gen_parts = []
    for block in template.gen_blocks:
        if skip_gen_block and skip_gen_block(block):
            continue
        gen_parts.append(fill(block, values))
    return PromptSpec(
        step=template.step,
        input_blocks=tuple(fill(b, values) for b in template.input_blocks),
        instructions=tuple(fill(x, values) for x in template.instructions),
        constraints=tuple(fill(x, values) for x in template.constraints),
        demonstrations=demonstrations,
        generation_instruction="\n\n".join(gen_parts),
        section_headers=(
            template.instructions_header,
            template.constraints_header,
            template.demo_header if template.demo_header is not None else examples_header(),
        ),
    )


def build_prompt(
    step: str,
    values: Mapping[str, object],
    demonstrations: Sequence[str] = (),
    template_dir: Optional[str] = None,
) -> str:
    """Generic assembly for any template and shot count.

    Useful for prompt experiments; the pipeline builders below additionally
    enforce step policy (context and conversation prompts run 0-shot, the
    common-ground block is dropped after turn 2).
    """
    template = load_template(step, template_dir)
    spec = _spec_from_template(
        template, dict(values), demonstrations=tuple(demonstrations)
    )
    return assemble(spec)


def build_persona_prompt(
    constraints: PersonaConstraintSet,
    demos: Sequence,
    language: Language,
    num_requested: int,
    template_dir: Optional[str] = None,
) -> str:
    """Persona-generation prompt; demos are passed through verbatim, untranslated."""
    if num_requested < 1:
        raise PromptError("num_requested must be at least 1")
    template = load_template("persona", template_dir)
    values = {"lang": language.name, "num_requested": num_requested}
    demo_blocks = tuple(
        fill(template.demo_pattern, {"k": k, "demo_profiles": render_profiles(demo)})
        for k, demo in enumerate(demos, start=1)
    )
    # the taxonomy line expands to one bullet per sampled constraint sentence
    gen_parts = []
    for block in template.gen_blocks:
        lines = []
        for line in block.split("\n"):
            if "{taxonomy_sentence}" in line:
                lines.extend(
                    fill(line, {**values, "taxonomy_sentence": s})
                    for s in constraints.sentences
                )
            else:
                lines.append(fill(line, values))
        gen_parts.append("\n".join(lines))
    spec = PromptSpec(
        step="persona",
        input_blocks=tuple(fill(b, values) for b in template.input_blocks),
        instructions=tuple(fill(x, values) for x in template.instructions),
        constraints=tuple(fill(x, values) for x in template.constraints),
        demonstrations=demo_blocks,
        generation_instruction="\n\n".join(gen_parts),
        section_headers=(
            template.instructions_header,
            template.constraints_header,
            template.demo_header or examples_header(),
        ),
    )
    validate_spec(spec)
    return assemble(spec)


def build_cg_prompt(
    p1,
    p2,
    se: SpeechEventDraw,
    language: Language,
    character_word: Optional[str] = None,
    template_dir: Optional[str] = None,
) -> str:
    """Narrator prompt producing the shared context for one conversation."""
    template = load_template("common_ground", template_dir)
    word = character_word if character_word is not None else language.character_word
    if not word:
        raise PromptError("character_word must be non-empty")
    values = {
        "character_1_profiles": render_profiles(p1),
        "character_2_profiles": render_profiles(p2),
        "language": language.name,
        "category": se.event.category,
        "speech_event": se.event.subcategory,
        "speech_event_sentence": se.reformulation,
        "speech_event_description": se.event.description,
        "translation_of_character_in_target": word,
    }
    spec = _spec_from_template(template, values)
    validate_spec(spec)
    return assemble(spec)


@dataclass(frozen=True)
class SpeakerContext:
    """Everything one speaker's LLM instance needs for one reply."""

    speaker_index: int
    persona: object
    common_ground_text: str
    character_word: str
    speech_event: SpeechEventDraw
    num_turns: int
    current_turn: int
    language: str

    def __post_init__(self):
        if self.speaker_index not in (1, 2):
            raise PromptError("speaker_index must be 1 or 2")
        if not 4 <= self.num_turns <= 10:
            raise PromptError("num_turns must be within [4, 10]")
        if not 1 <= self.current_turn <= self.num_turns:
            raise PromptError("current_turn must be within [1, num_turns]")


def build_speaker_prompt(
    ctx: SpeakerContext, first_message: bool, template_dir: Optional[str] = None
) -> str:
    """Speaker prompt for one utterance; CG context appears only on turns 1 and 2."""
    step = "conversation_first" if first_message else "conversation_turn"
    template = load_template(step, template_dir)
    values = {
        "language": language_name(ctx.language),
        "speech_event_type": ctx.speech_event.event.category,
        "speech_event_taxonomy": ctx.speech_event.event.subcategory,
        "speech_event_sentence_description_with_speakers_role": ctx.speech_event.role_for(
            ctx.speaker_index
        ),
        "persona_profiles": render_profiles(ctx.persona),
        "common_ground": ctx.common_ground_text,
        "translation_of_character_in_target": ctx.character_word,
        "1_or_2": ctx.speaker_index,
        "num_turns": ctx.num_turns,
        "current_turn": ctx.current_turn,
    }
    drop_cg = ctx.current_turn > 2
    spec = _spec_from_template(
        template,
        values,
        skip_gen_block=(lambda block: "{common_ground}" in block) if drop_cg else None,
    )
    validate_spec(spec)
    return assemble(spec)
