"""HTTP client for OpenAI-compatible chat-completion endpoints.

Handles bearer auth, bounded concurrency, exponential-backoff retries for
transport-level failures, candidate fan-out, and JSONL request/response
logging. Semantic retries (language filters, marker checks) live elsewhere;
this layer only distinguishes "the network/server failed" from "the server
answered".
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from pathlib import Path
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import httpx

DEFAULT_TOKEN_ENV = "LLM_GATEWAY_TOKEN"

FINISH_REASONS = ("stop", "length", "other")


class GatewayError(RuntimeError):
    """Transport failure after retries, bad status, or malformed response."""


@dataclass(frozen=True)
class DecodingConfig:
    """Sampling knobs sent with every generation request."""

    temperature: float = 0.7
    top_p: float = 0.9
    repetition_penalty: float = 1.2
    max_new_tokens: int = 400
    n_candidates: int = 1

    def __post_init__(self):
        # temperature 0 permitted: deterministic scoring runs greedy
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


# presets used by the generation pipeline; utterances are capped short because
# the templates demand replies under 15 words
PERSONA_DECODING = DecodingConfig(max_new_tokens=400)
PERSONA_DECODING_HOT = DecodingConfig(temperature=0.8, max_new_tokens=400)
CG_DECODING = DecodingConfig(max_new_tokens=400)
UTTERANCE_DECODING = DecodingConfig(max_new_tokens=80)
JUDGE_DECODING = DecodingConfig(temperature=0.0, max_new_tokens=1024)


@dataclass(frozen=True)
class GenRequest:
    endpoint: str
    model_id: str
    messages: tuple  # ((role, content), ...)
    decoding: DecodingConfig
    request_tag: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "messages", tuple((str(r), str(c)) for r, c in self.messages)
        )
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] != "system":
            raise ValueError("first message role must be system")


@dataclass(frozen=True)
class Candidate:
    text: str
    finish_reason: str
    candidate_index: int

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"finish_reason must be one of {FINISH_REASONS}")
        if self.candidate_index < 0:
            raise ValueError("candidate_index must be >= 0")


def encode_request(req: GenRequest) -> dict:
    """JSON-able form of a request; `decode_request` inverts it exactly."""
    return {
        "endpoint": req.endpoint,
        "model_id": req.model_id,
        "messages": [{"role": r, "content": c} for r, c in req.messages],
        "decoding": {
            "temperature": req.decoding.temperature,
            "top_p": req.decoding.top_p,
            "repetition_penalty": req.decoding.repetition_penalty,
            "max_new_tokens": req.decoding.max_new_tokens,
            "n_candidates": req.decoding.n_candidates,
        },
        "request_tag": req.request_tag,
    }


def decode_request(data: Mapping) -> GenRequest:
    return GenRequest(
        endpoint=data["endpoint"],
        model_id=data["model_id"],
        messages=tuple((m["role"], m["content"]) for m in data["messages"]),
        decoding=DecodingConfig(**data["decoding"]),
        request_tag=data.get("request_tag", ""),
    )


def _normalize_finish_reason(raw) -> str:
    return raw if raw in ("stop", "length") else "other"


class LlmGateway:
    """Shareable, thread-safe client for one chat-completion endpoint.

    Retries ``httpx.TransportError``, HTTP 429 and 5xx with exponential
    backoff (attempt k waits ``backoff_base * 2**k`` scaled by a seeded
    +/-20% jitter). Any other failure surfaces immediately. The payload is
    built once, so resends are byte-identical.
    """

    def __init__(
        self,
        base_url: str,
        model_id: str,
        *,
        client: Optional[httpx.Client] = None,
        token_env: str = DEFAULT_TOKEN_ENV,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        jitter_seed: Optional[int] = None,
        sleep: Callable[[float], None] = time.sleep,
        max_in_flight: int = 8,
        log_path: Optional[str] = None,
        timeout: float = 120.0,
        repetition_penalty_field: str = "repetition_penalty",
    ):
        base = base_url.rstrip("/")
        if "chat/completions" not in base:
            base = base + "/v1/chat/completions"
        self.endpoint = base
        self.model_id = model_id
        self.token_env = token_env
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.requests_sent = 0
        self._owns_client = client is None
        self._client = client if client is not None else httpx.Client(timeout=timeout)
        self._rng = random.Random(jitter_seed)
        self._rng_lock = threading.Lock()
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(max_in_flight)
        self._log_path = log_path
        self._log_lock = threading.Lock()
        self._rep_field = repetition_penalty_field

    # -- plumbing ----------------------------------------------------------

    def close(self):
        if self._owns_client:
            self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self) -> dict:
        token = os.environ.get(self.token_env, "")
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _log(self, entry: dict):
        if not self._log_path:
            return
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._log_lock:
            Path(self._log_path).parent.mkdir(parents=True, exist_ok=True)
            with open(self._log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def _backoff(self, attempt: int) -> float:
        with self._rng_lock:
            jitter = self._rng.uniform(0.8, 1.2)
        return self.backoff_base * (2 ** attempt) * jitter

    # -- request construction ---------------------------------------------

    def build_request(
        self,
        messages: Sequence,
        decoding: DecodingConfig,
        request_tag: str = "",
    ) -> GenRequest:
        return GenRequest(
            endpoint=self.endpoint,
            model_id=self.model_id,
            messages=tuple(messages),
            decoding=decoding,
            request_tag=request_tag,
        )

    def _payload(self, req: GenRequest) -> dict:
        payload = {
            "model": req.model_id,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "temperature": req.decoding.temperature,
            "top_p": req.decoding.top_p,
            "max_tokens": req.decoding.max_new_tokens,
            "n": req.decoding.n_candidates,
        }
        if self._rep_field == "frequency_penalty":
            # endpoints without a repetition-penalty knob get the closest
            # OpenAI-native analogue; the mapping is logged per request
            payload["frequency_penalty"] = round(
                req.decoding.repetition_penalty - 1.0, 6
            )
        else:
            payload[self._rep_field] = req.decoding.repetition_penalty
        return payload

    # -- main entry points --------------------------------------------------

    def complete(self, req: GenRequest) -> list:
        payload = self._payload(req)
        self._log(
            {
                "direction": "request",
                "request_tag": req.request_tag,
                "endpoint": req.endpoint,
                "payload": payload,
                "repetition_penalty_field": self._rep_field,
            }
        )
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self._backoff(attempt - 1))
            try:
                with self._semaphore:
                    self.requests_sent += 1
                    response = self._client.post(
                        req.endpoint, json=payload, headers=self._headers()
                    )
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"status {response.status_code}: {response.text[:200]}"
                continue
            if response.status_code != 200:
                raise GatewayError(
                    f"[{req.request_tag}] status {response.status_code}: "
                    f"{response.text[:200]}"
                )
            candidates = self._parse(req, response)
            self._log(
                {
                    "direction": "response",
                    "request_tag": req.request_tag,
                    "status": response.status_code,
                    "candidates": [
                        {
                            "text": c.text,
                            "finish_reason": c.finish_reason,
                            "candidate_index": c.candidate_index,
                        }
                        for c in candidates
                    ],
                }
            )
            return candidates
        raise GatewayError(
            f"[{req.request_tag}] gave up after {self.max_retries + 1} attempts; "
            f"last failure: {last_error}"
        )

    def generate(
        self,
        messages: Sequence,
        decoding: DecodingConfig,
        request_tag: str = "",
    ) -> list:
        return self.complete(self.build_request(messages, decoding, request_tag))

    def _parse(self, req: GenRequest, response: httpx.Response) -> list:
        try:
            data = response.json()
            choices = data["choices"]
            candidates = [
                Candidate(
                    text=choice["message"]["content"],
                    finish_reason=_normalize_finish_reason(choice.get("finish_reason")),
                    candidate_index=int(choice.get("index", i)),
                )
                for i, choice in enumerate(choices)
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise GatewayError(
                f"[{req.request_tag}] malformed response: {exc}; "
                f"body: {response.text[:200]}"
            ) from exc
        if len(candidates) != req.decoding.n_candidates:
            raise GatewayError(
                f"[{req.request_tag}] expected {req.decoding.n_candidates} "
                f"candidates, got {len(candidates)}"
            )
        return candidates
