import json

import httpx
import pytest

from dialoforge.filters import StopwordDetector, check_cg_markers, check_language
from dialoforge.judge import (
    REQUIRED_KEYS,
    build_judge_batch,
    parse_judge_response,
)
from dialoforge.languages import get_language
from dialoforge.prompts import SpeakerContext, build_cg_prompt, build_persona_prompt, build_speaker_prompt
from dialoforge.stubserver import StubLlm, StubWsgiApp
from dialoforge.taxonomy import (
    load_persona_taxonomy,
    load_speech_events,
    sample_persona_constraints,
    sample_speech_event,
)


def chat_body(text, n=1, system="", model="stub"):
    messages = []
    if system:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": text})
    return {"model": model, "messages": messages, "n": n}


def wsgi_client(app):
    return httpx.Client(
        transport=httpx.WSGITransport(app=app), base_url="http://stub"
    )


class TestDeterminism:
    def test_same_body_same_response(self):
        llm = StubLlm()
        body = chat_body("keep the conversation flow going please.", n=3)
        assert llm.respond(body) == llm.respond(dict(body))

    def test_different_body_different_id(self):
        llm = StubLlm()
        a = llm.respond(chat_body("keep the conversation flow A"))
        b = llm.respond(chat_body("keep the conversation flow B"))
        assert a["id"] != b["id"]
        assert a["id"].startswith("stub-")

    def test_candidate_count_and_envelope(self):
        llm = StubLlm()
        response = llm.respond(chat_body("keep the conversation flow", n=3))
        assert [c["index"] for c in response["choices"]] == [0, 1, 2]
        assert all(c["finish_reason"] == "stop" for c in response["choices"])
        assert {c["message"]["content"] for c in response["choices"]}  # non-empty
        assert response["created"] == 0
        assert response["usage"]["total_tokens"] == 0
        assert response["object"] == "chat.completion"

    def test_key_order_does_not_matter(self):
        llm = StubLlm()
        body = {"model": "m", "messages": [{"role": "user", "content": "hi"}], "n": 1}
        flipped = {"n": 1, "messages": [{"content": "hi", "role": "user"}], "model": "m"}
        assert llm.respond(body) == llm.respond(flipped)


class TestLanguageSniffing:
    def test_persona_prompt_pattern(self):
        llm = StubLlm()
        assert (
            llm.sniff_language("Every sentence in the persona should be in French.")
            == "fr"
        )

    def test_narrator_pattern(self):
        assert StubLlm().sniff_language("You are a Narrator fluent in Spanish!") == "es"

    def test_speaker_pattern(self):
        assert StubLlm().sniff_language("You are a fluent Japanese speaker.") == "ja"

    def test_default_is_english(self):
        assert StubLlm().sniff_language("nothing about languages here") == "en"

    def test_unpooled_language_falls_back_to_english_pool(self):
        llm = StubLlm()
        body = chat_body(
            "You are a fluent Japanese speaker. keep the conversation flow."
        )
        content = llm.respond(body)["choices"][0]["message"]["content"]
        assert content.isascii()


class TestStepResponses:
    def test_persona_step_yields_five_lines_in_language(self):
        constraints = sample_persona_constraints(load_persona_taxonomy(), 4)
        prompt = build_persona_prompt(constraints, [], get_language("fr"), num_requested=1)
        llm = StubLlm()
        content = llm.respond(chat_body("", system=prompt))["choices"][0]["message"]["content"]
        lines = content.splitlines()
        assert len(lines) == 5
        verdict = check_language(" ".join(lines), "fr", StopwordDetector())
        assert verdict.passed

    def test_cg_step_echoes_character_word_and_passes_markers(self):
        event = sample_speech_event(load_speech_events(), 4)
        prompt = build_cg_prompt(
            ("p one",) * 5, ("p two",) * 5, event, get_language("fr"), "Personnage"
        )
        llm = StubLlm()
        content = llm.respond(chat_body("", system=prompt))["choices"][0]["message"]["content"]
        assert check_cg_markers(content, "Personnage")
        assert check_language(content, "fr", StopwordDetector()).passed

    def test_utterance_step_is_short_and_terminal(self):
        event = sample_speech_event(load_speech_events(), 4)
        ctx = SpeakerContext(
            speaker_index=1,
            persona=["p"] * 5,
            common_ground_text="Personaje 1 y Personaje 2 charlan en la plaza.",
            character_word="Personaje",
            speech_event=event,
            num_turns=5,
            current_turn=1,
            language="es",
        )
        prompt = build_speaker_prompt(ctx, first_message=True)
        llm = StubLlm()
        content = llm.respond(chat_body("", system=prompt))["choices"][0]["message"]["content"]
        assert content[-1] in ".!?"
        assert check_language(content, "es", StopwordDetector()).passed

    def test_unknown_step_echoes_last_user_message(self):
        llm = StubLlm()
        body = {
            "model": "m",
            "messages": [
                {"role": "system", "content": "be nice"},
                {"role": "user", "content": "first"},
                {"role": "user", "content": "second"},
            ],
        }
        assert llm.respond(body)["choices"][0]["message"]["content"] == "second"


def persona_item(i):
    return {
        "id": f"p{i}",
        "profiles": [[f"s{i}.{j}", f"C | S | L{j}"] for j in range(5)],
    }


def conversation_item(i):
    return {
        "id": f"c{i}",
        "personas": [["a"] * 5, ["b"] * 5],
        "speech_event": "Goal-directed | Asking a favor",
        "common_ground": "Character 1 and Character 2 chat.",
        "utterances": [[k % 2 + 1, f"u{k}"] for k in range(8)],
    }


class TestJudgeResponses:
    def test_persona_batch_round_trip(self):
        items = [persona_item(i) for i in range(4)]
        system, user = build_judge_batch(items, "persona", "fr")
        llm = StubLlm()
        body = chat_body(user, system=system)
        content = llm.respond(body)["choices"][0]["message"]["content"]
        sheets = parse_judge_response(content, [i["id"] for i in items], "persona")
        assert set(sheets) == {f"p{i}" for i in range(4)}
        for sheet in sheets.values():
            assert set(sheet.scores) == set(REQUIRED_KEYS["persona"])

    def test_conversation_batch_round_trip(self):
        items = [conversation_item(i) for i in range(2)]
        system, user = build_judge_batch(items, "conversation", "es")
        llm = StubLlm()
        content = llm.respond(chat_body(user, system=system))["choices"][0]["message"]["content"]
        ids = [i["id"] for i in items]
        cg = parse_judge_response(content, ids, "common_ground")
        dlg = parse_judge_response(content, ids, "dialogue")
        assert set(cg) == set(ids) and set(dlg) == set(ids)

    def test_same_item_scores_agree_across_batches(self):
        llm = StubLlm()
        shared = persona_item(7)
        batch_a = build_judge_batch([shared, persona_item(1)], "persona", "fr")
        batch_b = build_judge_batch([persona_item(2), shared], "persona", "fr")
        scores = []
        for system, user in (batch_a, batch_b):
            content = llm.respond(chat_body(user, system=system))["choices"][0][
                "message"
            ]["content"]
            scores.append(json.loads(content)["p7"])
        assert scores[0] == scores[1]


class TestWsgiApp:
    def test_health(self):
        with wsgi_client(StubWsgiApp()) as client:
            response = client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"ok": True}

    def test_chat_completions_any_prefix(self):
        with wsgi_client(StubWsgiApp()) as client:
            for path in ("/v1/chat/completions", "/chat/completions"):
                response = client.post(path, json=chat_body("hello"))
                assert response.status_code == 200
                assert response.json()["choices"]

    def test_bad_json_is_400(self):
        with wsgi_client(StubWsgiApp()) as client:
            response = client.post(
                "/v1/chat/completions",
                content=b"{nope",
                headers={"Content-Type": "application/json"},
            )
        assert response.status_code == 400
        assert "invalid JSON" in response.json()["error"]

    def test_unknown_route_404(self):
        with wsgi_client(StubWsgiApp()) as client:
            assert client.get("/v2/other").status_code == 404
            assert client.post("/v1/embeddings", json={}).status_code == 404

    def test_fail_first_serves_errors_then_recovers(self):
        app = StubWsgiApp(fail_first=2)
        with wsgi_client(app) as client:
            codes = [
                client.post("/v1/chat/completions", json=chat_body("x")).status_code
                for _ in range(4)
            ]
        assert codes == [500, 500, 200, 200]

    def test_recording_captures_parsed_bodies(self):
        app = StubWsgiApp(record=True)
        body = chat_body("record me")
        with wsgi_client(app) as client:
            client.post("/v1/chat/completions", json=body)
            client.post("/v1/chat/completions", json=body)
        assert app.requests == [body, body]

    def test_recording_disabled_by_default(self):
        app = StubWsgiApp()
        assert app.requests is None
