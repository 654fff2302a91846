"""Registry of supported target languages and their prompt vocabulary."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class Language:
    tag: str
    name: str
    character_word: str
    no_whitespace: bool = False
    rtl: bool = False


def data_text(name: str) -> str:
    """Read a UTF-8 file shipped under the package data directory."""
    return resources.files("dialoforge.data").joinpath(name).read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def load_languages() -> tuple[Language, ...]:
    return tuple(Language(**row) for row in json.loads(data_text("languages.json")))


def get_language(tag: str) -> Language:
    for lang in load_languages():
        if lang.tag == tag:
            return lang
    raise KeyError(f"unknown language tag {tag!r}")


def language_name(tag: str) -> str:
    """Display name for a tag; unknown tags fall back to the tag itself."""
    try:
        return get_language(tag).name
    except KeyError:
        return tag
