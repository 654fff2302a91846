"""Acceptance predicates and the retry ladder for generated text.

Every check is a pure function: language verification (hits@2 with the source
language as a contaminant), character-marker presence in shared contexts,
utterance cleanup, and near-duplicate detection. Decisions can be recorded as
JSONL through :class:`FilterLog`.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .gateway import Candidate

SOURCE_LANGUAGE = "en"
REPETITION_THRESHOLD = 0.8


@dataclass(frozen=True)
class LanguageVerdict:
    """Outcome of hits@2 language detection against a target language."""

    top2: tuple
    target: str
    passed: bool
    reason: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "top2", tuple((str(t), float(c)) for t, c in self.top2)
        )
        if len(self.top2) > 2:
            raise ValueError("top2 may hold at most two detections")
        tags = [t for t, _ in self.top2]
        expected = self.target in tags and (
            self.target == SOURCE_LANGUAGE or SOURCE_LANGUAGE not in tags
        )
        if self.passed != expected:
            raise ValueError("passed flag contradicts the hits@2 rule")


@dataclass(frozen=True)
class RetryLadder:
    """Attempt k requests 2k - 1 candidates: 1, 3, 5 over three attempts."""

    max_attempts: int = 3

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def candidates_at(self, attempt: int) -> int:
        if not 1 <= attempt <= self.max_attempts:
            raise ValueError(f"attempt must be in [1, {self.max_attempts}]")
        return 2 * attempt - 1

    @property
    def total_budget(self) -> int:
        return sum(self.candidates_at(k) for k in range(1, self.max_attempts + 1))

    def schedule(self):
        """Yield (attempt, n_candidates) pairs in order."""
        for k in range(1, self.max_attempts + 1):
            yield k, self.candidates_at(k)


# -- language detection ------------------------------------------------------


def check_language(text: str, target: str, detector) -> LanguageVerdict:
    """hits@2 rule: pass iff target is detected and English is absent.

    English targets are exempt from the contamination clause (the source
    language cannot contaminate itself). Detector errors fail closed.
    """
    try:
        raw = list(detector.detect_top2(text))[:2]
        top2 = tuple((str(t), float(c)) for t, c in raw)
    except Exception as exc:  # detector failure -> fail closed with reason
        return LanguageVerdict(
            top2=(), target=target, passed=False, reason=f"detector failure: {exc}"
        )
    tags = [t for t, _ in top2]
    passed = target in tags and (
        target == SOURCE_LANGUAGE or SOURCE_LANGUAGE not in tags
    )
    if passed:
        reason = ""
    elif target not in tags:
        reason = "target language not in top-2"
    else:
        reason = "source language detected"
    return LanguageVerdict(top2=top2, target=target, passed=passed, reason=reason)


class TableDetector:
    """Deterministic exact-text lookup detector for tests and replays."""

    def __init__(self, table: Optional[Mapping] = None, default=(("und", 1.0),)):
        self.table = dict(table or {})
        self.default = tuple(default)

    def detect_top2(self, text: str):
        return self.table.get(text, self.default)


class FunctionDetector:
    """Adapter wrapping any callable text -> [(tag, confidence), ...]."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def detect_top2(self, text: str):
        return self.fn(text)


_SCRIPT_PATTERNS = (
    ("ar", re.compile(r"[؀-ۿ]")),
    ("el", re.compile(r"[Ͱ-Ͽ]")),
    ("ko", re.compile(r"[가-힯]")),
    ("th", re.compile(r"[฀-๿]")),
    ("hi", re.compile(r"[ऀ-ॿ]")),
    ("bn", re.compile(r"[ঀ-৿]")),
)
_KANA = re.compile(r"[぀-ヿ]")
_HAN = re.compile(r"[一-鿿]")
_CYRILLIC = re.compile(r"[Ѐ-ӿ]")
_UKRAINIAN_ONLY = re.compile(r"[іїєґІЇЄҐ]")

_STOPWORDS = {
    # deliberately excludes tokens that are everyday words elsewhere
    # ("a", "no", "i", "is", "in", "on", "to", "was"), which would smuggle
    # English into the top-2 for Romance and Germanic text
    "en": "the and are you they of with this that these those hello yes not very would there their where when something anything everyone really",
    "fr": "le la les un une des et est sont je tu il elle nous vous ne pas que qui dans pour avec du au c'est j'ai j'aime ça très bonjour oui non aujourd'hui",
    "es": "el la los las un una unas y es son yo tú él ella nosotros no que en para con del al muy está hola sí hoy gracias cuando",
    "de": "der die das ein eine und ist sind ich du er sie wir ihr von zu im für mit nicht sehr hallo ja nein heute",
    "it": "il lo la gli le un una e è sono io tu lui lei noi di del al non che per con molto ciao sì oggi",
    "pt": "o a os as um uma e é são eu tu ele ela nós de do ao não que em para com muito olá sim hoje",
    "nl": "de het een en is zijn ik jij hij zij wij van te in voor met niet erg hallo ja nee vandaag",
    "pl": "i w z na jest są ja ty on ona my nie że dla bardzo cześć tak dziś się do",
    "vi": "là và của tôi bạn anh chị em không có rất xin chào vâng hôm nay một những",
    "id": "yang dan di ke dari adalah saya kamu dia kami tidak sangat halo ya hari ini itu",
    "sv": "och är jag du han hon vi av till i för med inte mycket hej ja nej idag en ett det",
    "hu": "a az és van vagyok te ő mi nem nagyon szia igen ma egy hogy is el",
    "da": "og er jeg du han hun vi af til i for med ikke meget hej ja nej dag en et det",
    "fi": "ja on minä sinä hän me ei hyvin hei kyllä tänään yksi että se olen",
    "hr": "i je su ja ti on ona mi ne da vrlo bok danas jedan što se u na za",
    "af": "die en is ek jy hy sy ons van om in vir met nie baie hallo ja nee vandag",
    "sw": "na ni mimi wewe yeye sisi ya wa kwa si sana habari ndiyo leo moja hii",
    "yo": "ati ni emi iwo oun awa ti ko pupo bawo beeni loni kan naa si fun",
    "tr": "ve bir bu ben sen o biz değil çok merhaba evet hayır bugün için ile var",
}
_STOPWORD_SETS = {tag: frozenset(words.split()) for tag, words in _STOPWORDS.items()}

_WORD = re.compile(r"[\w']+", re.UNICODE)


class StopwordDetector:
    """Self-contained detector: script ranges first, stopword hits otherwise.

    Coarse by design; it exists so the pipeline runs with no third-party
    model. Swap in a stronger detector via FunctionDetector when available.
    """

    def detect_top2(self, text: str):
        scripts = self._script_hits(text)
        if scripts:
            return scripts[:2]
        tokens = [t.lower() for t in _WORD.findall(text)]
        if not tokens:
            return [("und", 1.0)]
        scores = {}
        for tag, words in _STOPWORD_SETS.items():
            hits = sum(1 for t in tokens if t in words)
            if hits:
                scores[tag] = hits / len(tokens)
        if not scores:
            return [("und", 1.0)]
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:2]
        total = sum(s for _, s in ranked)
        return [(tag, s / total) for tag, s in ranked]

    def _script_hits(self, text: str):
        counts = []
        for tag, pattern in _SCRIPT_PATTERNS:
            n = len(pattern.findall(text))
            if n:
                counts.append((tag, n))
        kana = len(_KANA.findall(text))
        han = len(_HAN.findall(text))
        if kana:
            counts.append(("ja", kana + han))
        elif han:
            counts.append(("zh", han))
        cyr = len(_CYRILLIC.findall(text))
        if cyr:
            counts.append(("uk" if _UKRAINIAN_ONLY.search(text) else "ru", cyr))
        if not counts:
            return []
        counts.sort(key=lambda kv: (-kv[1], kv[0]))
        total = sum(n for _, n in counts[:2])
        return [(tag, n / total) for tag, n in counts[:2]]


# -- common-ground markers ----------------------------------------------------


def check_cg_markers(text: str, character_word: str) -> bool:
    """True iff both "{word} 1" and "{word} 2" appear (case-insensitive,
    whitespace optional between word and digit)."""
    if not character_word:
        raise ValueError("character_word must be non-empty")
    word = re.escape(character_word)
    return bool(
        re.search(word + r"\s*1\b", text, re.IGNORECASE)
        and re.search(word + r"\s*2\b", text, re.IGNORECASE)
    )


# -- utterance cleanup ---------------------------------------------------------


@dataclass(frozen=True)
class CleanOutcome:
    ok: bool
    text: str = ""
    reason: str = ""


_BLANK_LINE = re.compile(r"\n\s*\n")
_BRACKETED = re.compile(r"\([^()]*\)|\[[^\[\]]*\]|\*[^*]*\*")
_QUOTE_PAIRS = {'"': '"', "'": "'", "«": "»", "“": "”", "‘": "’", "„": "“", "「": "」"}
_WS_RUN = re.compile(r"\s+")
_TERMINAL = ".!?…。！？؟"


def _cut_at_blank_line(text: str) -> str:
    return _BLANK_LINE.split(text, maxsplit=1)[0]


def _strip_speaker_label(text: str) -> str:
    """Drop a leading "Speaker 1:" / "Marie:" style label, conservatively.

    A label is a short prefix before a colon with no sentence punctuation,
    ending in a digit or made of capitalized words. Ordinary sentences that
    merely contain a colon are left alone.
    """
    match = re.match(r"^([^:\n]{1,40}):\s*(.+)$", text, re.DOTALL)
    if not match:
        return text
    prefix, rest = match.group(1).strip(), match.group(2)
    words = prefix.split()
    if not words or len(words) > 4:
        return text
    if any(ch in prefix for ch in _TERMINAL + ",;"):
        return text
    if prefix[-1].isdigit():
        return rest
    if all(w[:1].isupper() or not w[:1].isalpha() for w in words) and len(words) <= 3:
        return rest
    return text


def _strip_matching_quotes(text: str) -> str:
    if len(text) >= 2 and _QUOTE_PAIRS.get(text[0]) == text[-1]:
        return text[1:-1]
    return text


def _clean_pass(text: str) -> str:
    text = text.strip()
    text = _cut_at_blank_line(text)
    # quotes first: '"Marie: Salut!"' must shed the quotes before the label
    # heuristic can see it; the reverse nesting resolves on the next pass
    text = _strip_matching_quotes(text)
    text = _strip_speaker_label(text.strip())
    text = _BRACKETED.sub(" ", text)
    text = _WS_RUN.sub(" ", text).strip()
    return text


def clean_text(text: str) -> str:
    """Run cleanup passes to a fixed point (idempotent by construction)."""
    for _ in range(10):
        cleaned = _clean_pass(text)
        if cleaned == text:
            return cleaned
        text = cleaned
    return text


def clean_utterance(candidate: Candidate) -> CleanOutcome:
    """Cleaned text, or a rejection for empty / incomplete generations."""
    text = clean_text(candidate.text)
    if not text:
        return CleanOutcome(ok=False, reason="empty")
    if candidate.finish_reason == "length" and not _ends_complete(text):
        return CleanOutcome(ok=False, reason="incomplete")
    return CleanOutcome(ok=True, text=text)


def _ends_complete(text: str) -> bool:
    stripped = text.rstrip("\"'»”’」 ")
    return bool(stripped) and stripped[-1] in _TERMINAL


# -- repetition ---------------------------------------------------------------


def _trigrams(items: Sequence) -> frozenset:
    return frozenset(tuple(items[i : i + 3]) for i in range(len(items) - 2))


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


def _normalize(text: str) -> str:
    return _WS_RUN.sub(" ", text.strip().lower())


def _char_mode(text: str) -> bool:
    # scripts without whitespace word boundaries yield almost no tokens;
    # fall back to character trigrams below one token per ten characters
    tokens = text.split()
    return len(tokens) * 10 < len(text)


def _pair_similarity(a: str, b: str) -> float:
    if _char_mode(a) or _char_mode(b):
        return _jaccard(_trigrams(a), _trigrams(b))
    ta, tb = a.split(), b.split()
    if len(ta) < 3 or len(tb) < 3:
        return 1.0 if a == b else 0.0
    return _jaccard(_trigrams(ta), _trigrams(tb))


def is_repetitive(
    history: Iterable[str], candidate: str, threshold: float = REPETITION_THRESHOLD
) -> bool:
    """True iff the candidate's max trigram-Jaccard against history reaches
    the threshold. Tokens are lowercased whitespace splits; texts under three
    tokens compare by exact normalized equality."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    cand = _normalize(candidate)
    for prior in history:
        if _pair_similarity(_normalize(prior), cand) >= threshold:
            return True
    return False


# -- decision log --------------------------------------------------------------


class FilterLog:
    """Append-only JSONL log of filter decisions; path None disables it."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._lock = threading.Lock()

    def log(self, record_id: str, stage: str, verdict: str, reason: str = "", attempt: int = 0):
        if not self.path:
            return
        entry = {
            "record_id": record_id,
            "stage": stage,
            "verdict": verdict,
            "reason": reason,
            "attempt": attempt,
        }
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
