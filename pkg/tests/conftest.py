import socket
import threading
import time

import httpx
import pytest

from dialoforge.filters import StopwordDetector
from dialoforge.gateway import Candidate, LlmGateway
from dialoforge.generator import (
    Dropped,
    generate_dialogue_slot,
    generate_personas,
    load_demo_personas,
)
from dialoforge.languages import get_language
from dialoforge.stubserver import StubWsgiApp, serve
from dialoforge.taxonomy import load_persona_taxonomy, load_speech_events


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="session")
def stub_endpoint():
    """Socket-served stub shared by CLI and acceptance tests."""
    port = _free_port()
    threading.Thread(target=serve, args=("127.0.0.1", port), daemon=True).start()
    url = f"http://127.0.0.1:{port}"
    for _ in range(200):
        try:
            if httpx.get(f"{url}/health", timeout=1.0).status_code == 200:
                break
        except httpx.HTTPError:
            time.sleep(0.02)
    else:
        raise RuntimeError("stub server did not come up")
    return url


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance.py" not in str(report.nodeid):
                continue
            name = report.nodeid.split("::")[-1]
            lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(lines):
        terminalreporter.write_line(f"[{verdict}] {name}")


class ScriptedGateway:
    """Feeds canned texts; each generate() call consumes one script entry.

    An entry is a str (returned for every candidate) or a list (padded by
    cycling to the asked-for candidate count).
    """

    def __init__(self, responses, model_id="scripted"):
        self._responses = list(responses)
        self.model_id = model_id
        self.calls = []

    def generate(self, messages, decoding, request_tag=""):
        if not self._responses:
            raise AssertionError(f"script exhausted at {request_tag}")
        entry = self._responses.pop(0)
        self.calls.append((tuple(messages), decoding, request_tag))
        texts = [entry] if isinstance(entry, str) else list(entry)
        texts = (texts * decoding.n_candidates)[: decoding.n_candidates]
        return [Candidate(t, "stop", i) for i, t in enumerate(texts)]


def make_gateway(app=None, model_id="stub-model", **kwargs):
    """Gateway wired to an in-process stub; returns (gateway, app)."""
    app = app or StubWsgiApp()
    client = httpx.Client(
        transport=httpx.WSGITransport(app=app), base_url="http://stub"
    )
    kwargs.setdefault("jitter_seed", 0)
    kwargs.setdefault("sleep", lambda s: None)
    return LlmGateway("http://stub", model_id, client=client, **kwargs), app


def build_small_corpus(language_tag="fr", n_personas=4, n_dialogues=2, run_seed=11):
    """In-memory personas + dialogues generated through the stub."""
    gateway, _ = make_gateway()
    detector = StopwordDetector()
    language = get_language(language_tag)
    personas = generate_personas(
        language,
        n_personas,
        0,
        0,
        load_persona_taxonomy(),
        gateway,
        load_demo_personas(),
        detector=detector,
        rng_seed=7,
    )
    assert len(personas) == n_personas
    events = load_speech_events()
    dialogues = []
    slot = 0
    while len(dialogues) < n_dialogues:
        result = generate_dialogue_slot(
            slot,
            personas,
            events,
            language,
            gateway,
            run_seed=run_seed,
            detector=detector,
            created_at="2026-08-15T00:00:00+00:00",
        )
        slot += 1
        if not isinstance(result, Dropped):
            dialogues.append(result)
    gateway.close()
    return personas, dialogues


@pytest.fixture(scope="session")
def small_corpus():
    return build_small_corpus()


@pytest.fixture(scope="session")
def persona_records(small_corpus):
    personas, _ = small_corpus
    records = []
    for p in personas:
        body = p.to_json()
        body["id"] = p.record_id
        records.append(body)
    return records


@pytest.fixture(scope="session")
def dialogue_records(small_corpus):
    _, dialogues = small_corpus
    records = []
    for d in dialogues:
        body = d.to_json()
        body["id"] = d.record_id
        records.append(body)
    return records
