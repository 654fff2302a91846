"""Human-rating backend: registration with a demographic survey, balanced
assignment of blinded item bundles, validated rating intake, JSONL export.

State lives in one JSON file written atomically under a process-wide lock;
the generator model of an item is used for balancing only and never appears
in any API response.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .judge import REQUIRED_KEYS, ScoreSheet, load_criteria
from .languages import data_text, load_languages

AGE_BUCKETS = ("Under 18", "18-29", "30-49", "50+", "Other")
GENDERS = ("Female", "Male", "Other")
EDUCATIONS = ("Grad", "PhD", "Other")
EMPLOYMENTS = ("Employed", "Unemployed", "Student", "Other")
CHANNELS = ("Authors", "LinkedIn", "Mailing", "Referral", "Other")

_VOCABULARIES = {
    "age_bucket": AGE_BUCKETS,
    "gender": GENDERS,
    "education": EDUCATIONS,
    "employment": EMPLOYMENTS,
    "channel": CHANNELS,
}


class ReviewError(Exception):
    """Store-level failure carrying an HTTP-ish status code."""

    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


def validate_demographics(demographics: Mapping) -> dict:
    """Check every survey answer against its closed vocabulary."""
    cleaned = {}
    for field, vocabulary in _VOCABULARIES.items():
        value = demographics.get(field)
        if value not in vocabulary:
            raise ReviewError(
                422,
                f"{field} {value!r} is not one of {list(vocabulary)}",
            )
        cleaned[field] = value
    return cleaned


@dataclass(frozen=True)
class ReviewItem:
    """One rateable bundle derived from a generated dialogue record."""

    item_id: str
    language: str
    model: str  # balancing only; never serialized to clients
    personas: tuple  # two persona payloads
    common_ground: dict
    dialogue: tuple  # ((speaker, text), ...)


def items_from_dialogue_records(records: Iterable[Mapping]) -> list:
    items = []
    for record in records:
        if record.get("kind") != "dialogue":
            continue
        personas = tuple(
            {
                "id": p["id"],
                "profiles": [
                    {"sentence": pr["sentence"], "taxonomy": pr["taxonomy"]}
                    for pr in p["profiles"]
                ],
            }
            for p in record["personas"]
        )
        event = record["common_ground"]["speech_event"]
        items.append(
            ReviewItem(
                item_id=record["id"],
                language=record["language"],
                model=record["model_id"],
                personas=personas,
                common_ground={
                    "id": record["common_ground"]["id"],
                    "text": record["common_ground"]["text"],
                    "speech_event": f"{event['category']} | {event['subcategory']}",
                },
                dialogue=tuple((u[0], u[1]) for u in record["utterances"]),
            )
        )
    return items


def _pseudonym(evaluator_id: str) -> str:
    return "h-" + hashlib.sha256(evaluator_id.encode("utf-8")).hexdigest()[:16]


class ReviewStore:
    """Single-file JSON state with atomic writes and coarse locking."""

    def __init__(
        self,
        state_path,
        items: Iterable[ReviewItem] = (),
        clock: Callable[[], float] = time.time,
    ):
        self.state_path = Path(state_path)
        self.items = {item.item_id: item for item in items}
        self.clock = clock
        self._lock = threading.Lock()
        if self.state_path.exists():
            self.state = json.loads(self.state_path.read_text(encoding="utf-8"))
        else:
            self.state = {
                "schema_version": 1,
                "seq": 0,
                "evaluators": {},
                "assignments": {},
                "ratings": [],
            }
            self._persist()

    # -- persistence --

    def _persist(self):
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(self.state, ensure_ascii=False, sort_keys=True, indent=1),
            encoding="utf-8",
        )
        tmp.replace(self.state_path)

    def _next_seq(self) -> int:
        self.state["seq"] += 1
        return self.state["seq"]

    # -- evaluators --

    def register(self, language: str, demographics: Mapping) -> dict:
        cleaned = validate_demographics(demographics)
        if not language or not isinstance(language, str):
            raise ReviewError(422, "language tag is required")
        with self._lock:
            seq = self._next_seq()
            evaluator_id = f"ev-{seq:06d}-{secrets.token_hex(4)}"
            token = secrets.token_urlsafe(24)
            self.state["evaluators"][evaluator_id] = {
                "id": evaluator_id,
                "language": language,
                "demographics": cleaned,
                "created_at": self.clock(),
                "token": token,
            }
            self._persist()
        return {"evaluator_id": evaluator_id, "token": token}

    def _evaluator_by_token(self, token: str) -> dict:
        for evaluator in self.state["evaluators"].values():
            if evaluator["token"] == token:
                return evaluator
        raise ReviewError(401, "unknown or missing session token")

    # -- assignments --

    def _rated_item_ids(self, evaluator_id: str) -> set:
        return {
            r["item_id"]
            for r in self.state["ratings"]
            if r["evaluator_id"] == evaluator_id
        }

    def _model_rating_counts(self, language: str) -> dict:
        """Submitted-rating totals per generator model for one language."""
        counts = {}
        for assignment in self.state["assignments"].values():
            if assignment["status"] != "submitted":
                continue
            item = self.items.get(assignment["item_id"])
            if item is None or item.language != language:
                continue
            counts[item.model] = counts.get(item.model, 0) + 1
        return counts

    def next_assignment(self, token: str) -> Optional[dict]:
        with self._lock:
            evaluator = self._evaluator_by_token(token)
            open_assignment = next(
                (
                    a
                    for a in self.state["assignments"].values()
                    if a["evaluator_id"] == evaluator["id"] and a["status"] == "open"
                ),
                None,
            )
            if open_assignment is None:
                rated = self._rated_item_ids(evaluator["id"])
                candidates = [
                    item
                    for item in self.items.values()
                    if item.language == evaluator["language"]
                    and item.item_id not in rated
                ]
                if not candidates:
                    return None
                counts = self._model_rating_counts(evaluator["language"])
                candidates.sort(key=lambda item: (counts.get(item.model, 0), item.item_id))
                chosen = candidates[0]
                seq = self._next_seq()
                open_assignment = {
                    "id": f"as-{seq:06d}",
                    "evaluator_id": evaluator["id"],
                    "item_id": chosen.item_id,
                    "status": "open",
                    "created_at": self.clock(),
                }
                self.state["assignments"][open_assignment["id"]] = open_assignment
                self._persist()
            return self._bundle(open_assignment)

    def _bundle(self, assignment: Mapping) -> dict:
        """Client payload for one assignment; model identity is omitted."""
        item = self.items[assignment["item_id"]]
        rtl_tags = {lang.tag for lang in load_languages() if lang.rtl}
        return {
            "assignment_id": assignment["id"],
            "item_id": item.item_id,
            "language": item.language,
            "rtl": item.language in rtl_tags,
            "personas": [dict(p) for p in item.personas],
            "common_ground": dict(item.common_ground),
            "dialogue": [[speaker, text] for speaker, text in item.dialogue],
        }

    # -- ratings --

    def _checked_sheet(self, kind: str, item_id: str, scores, evaluator) -> ScoreSheet:
        if not isinstance(scores, Mapping):
            raise ReviewError(422, f"{kind} scores must be an object")
        missing = [k for k in REQUIRED_KEYS[kind] if k not in scores]
        if missing:
            raise ReviewError(
                422, f"{kind} sheet missing criteria: {', '.join(missing)}"
            )
        try:
            return ScoreSheet(
                item_id=item_id,
                kind=kind,
                scores={k: scores[k] for k in REQUIRED_KEYS[kind]},
                rater_kind="human",
                rater_id=_pseudonym(evaluator["id"]),
                language=evaluator["language"],
            )
        except ValueError as exc:
            raise ReviewError(422, str(exc)) from exc

    def submit_rating(self, token: str, assignment_id: str, sheets: Mapping) -> dict:
        with self._lock:
            evaluator = self._evaluator_by_token(token)
            assignment = self.state["assignments"].get(assignment_id)
            if assignment is None:
                raise ReviewError(404, f"assignment {assignment_id} not found")
            if assignment["evaluator_id"] != evaluator["id"]:
                raise ReviewError(403, "assignment belongs to another evaluator")
            if assignment["status"] == "submitted":
                raise ReviewError(409, "assignment already submitted")
            item = self.items[assignment["item_id"]]
            persona_scores = sheets.get("personas")
            if not isinstance(persona_scores, (list, tuple)) or len(persona_scores) != 2:
                raise ReviewError(422, "personas must hold exactly two score sheets")
            checked = []
            for persona, scores in zip(item.personas, persona_scores):
                checked.append(
                    self._checked_sheet("persona", persona["id"], scores, evaluator)
                )
            checked.append(
                self._checked_sheet(
                    "common_ground",
                    item.common_ground["id"],
                    sheets.get("common_ground"),
                    evaluator,
                )
            )
            checked.append(
                self._checked_sheet("dialogue", item.item_id, sheets.get("dialogue"), evaluator)
            )
            submitted_at = self.clock()
            for sheet in checked:
                entry = sheet.to_json()
                entry["seq"] = self._next_seq()
                entry["submitted_at"] = submitted_at
                entry["assignment_id"] = assignment_id
                entry["evaluator_id"] = evaluator["id"]
                self.state["ratings"].append(entry)
            assignment["status"] = "submitted"
            assignment["submitted_at"] = submitted_at
            self._persist()
            return {"ok": True, "sheets_stored": len(checked)}

    # -- export --

    def export_ratings(self, language: Optional[str] = None) -> str:
        """JSONL, one pseudonymized sheet per line, in submission order."""
        lines = []
        for entry in sorted(self.state["ratings"], key=lambda r: r["seq"]):
            if language and entry["language"] != language:
                continue
            payload = {k: v for k, v in entry.items() if k != "evaluator_id"}
            lines.append(json.dumps(payload, ensure_ascii=False, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


# -- HTTP layer -------------------------------------------------------------------


class RegistrationBody(BaseModel):
    language: str
    demographics: dict


class RatingBody(BaseModel):
    assignment_id: str
    personas: list
    common_ground: dict
    dialogue: dict


def public_criteria() -> dict:
    """Criterion sets as shown to human raters (judge-only suffixes removed)."""
    result = {}
    for kind, criterion_set in load_criteria().items():
        result[kind] = [
            {
                "key": c.key,
                "name": c.name,
                "question": c.question,
                "anchors": {str(i): label for i, label in enumerate(c.anchors, 1)},
            }
            for c in criterion_set.criteria
        ]
    return result


def create_app(store: ReviewStore) -> FastAPI:
    app = FastAPI(title="dialogue rating service", docs_url=None, redoc_url=None)

    def bearer(authorization: Optional[str] = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        return authorization[len("Bearer ") :]

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ReviewError as exc:
            raise HTTPException(status_code=exc.status, detail=exc.message) from exc

    @app.post("/api/evaluators")
    def register(body: RegistrationBody):
        return run(store.register, body.language, body.demographics)

    @app.get("/api/assignments/next")
    def next_assignment(token: str = Depends(bearer)):
        bundle = run(store.next_assignment, token)
        return {"assignment": bundle}

    @app.post("/api/ratings")
    def submit(body: RatingBody, token: str = Depends(bearer)):
        sheets = {
            "personas": body.personas,
            "common_ground": body.common_ground,
            "dialogue": body.dialogue,
        }
        return run(store.submit_rating, token, body.assignment_id, sheets)

    @app.get("/api/export", response_class=PlainTextResponse)
    def export(language: Optional[str] = Query(default=None)):
        return store.export_ratings(language)

    @app.get("/api/guidelines")
    def guidelines():
        return {"markdown": data_text("guidelines.md")}

    @app.get("/api/criteria")
    def criteria():
        return public_criteria()

    return app
