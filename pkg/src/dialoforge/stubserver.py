"""Deterministic OpenAI-compatible stub for tests, demos, and replays.

The stub is a pure function of the request body: a sha256 over the canonical
JSON seeds every draw, so identical requests always yield identical
responses. It sniffs the prompt to decide which pipeline step is asking
(persona, narrator context, utterance, judge scoring) and answers from small
per-language pools crafted to pass the shipped quality filters.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from functools import lru_cache
from typing import Optional

from .judge import REQUIRED_KEYS
from .languages import load_languages
from .store import canonical_json

_PERSONAS = {
    "fr": (
        "Je suis boulangère dans le centre de Lyon et j'aime beaucoup mon métier.",
        "Je passe mes soirées à lire des romans policiers près de la Saône.",
        "Je joue au football avec mes amis tous les dimanches dans le parc.",
        "Je prépare souvent des tartes aux pommes pour toute la famille.",
        "Je rêve de visiter les villages de Provence avec ma sœur.",
        "Je travaille comme infirmière et je prends soin des personnes âgées.",
        "Je déteste le bruit de la ville et je préfère la campagne.",
        "Je cultive des tomates et des herbes dans mon petit jardin.",
        "Je chante dans une chorale et la musique est toute ma vie.",
        "Je fais du vélo le long du canal quand il fait beau.",
    ),
    "es": (
        "Soy panadera en el centro de Sevilla y me encanta mi trabajo.",
        "Paso las tardes leyendo novelas de misterio junto al río.",
        "Juego al fútbol con mis amigos todos los domingos en el parque.",
        "Preparo tartas de manzana para toda la familia los sábados.",
        "Sueño con visitar los pueblos de Andalucía con mi hermana.",
        "Trabajo como enfermera y cuido de las personas mayores.",
        "No soporto el ruido de la ciudad y prefiero el campo.",
        "Cultivo tomates y hierbas en mi pequeño huerto.",
        "Canto en un coro y la música es toda mi vida.",
        "Monto en bicicleta junto al canal cuando hace buen tiempo.",
    ),
    "en": (
        "I bake fresh bread every morning and the whole street loves it.",
        "I spend my evenings reading mystery novels with a cup of tea.",
        "I play football with my friends at the park every Sunday.",
        "I love baking apple pies and they always disappear fast.",
        "I dream of visiting the little villages of Vermont with my sister.",
        "I work as a nurse and take care of the elderly.",
        "I hate the noise of the city and prefer the quiet countryside.",
        "I grow tomatoes and herbs and give them to the neighbors.",
        "I sing in the church choir and music fills my whole life.",
        "I ride my bicycle along the canal when the weather turns nice.",
    ),
}

_CG_PLACES = {
    "fr": (
        "au marché du village un samedi matin",
        "dans un petit café près de la gare",
        "sur la place du quartier après le travail",
        "dans le jardin public au bord de la rivière",
        "à la bibliothèque municipale en fin de journée",
        "devant la boulangerie de la rue principale",
    ),
    "es": (
        "en el mercado del pueblo un sábado por la mañana",
        "en un pequeño café cerca de la estación",
        "en la plaza del barrio después del trabajo",
        "en el parque junto al río",
        "en la biblioteca municipal al final del día",
        "delante de la panadería de la calle mayor",
    ),
    "en": (
        "at the village market on Saturday morning",
        "in the little café near the station",
        "on the neighborhood square after work",
        "in the public garden by the river",
        "at the local library late in the day",
        "outside the bakery on the main street",
    ),
}

_CG_PURPOSES = {
    "fr": (
        "Ils veulent parler de la vie quotidienne et de leurs projets pour les vacances.",
        "Ils souhaitent échanger des nouvelles de la famille et du quartier.",
        "Ils comptent discuter de la musique et des fêtes du village.",
        "Ils veulent comparer leurs recettes et parler du jardin.",
        "Ils espèrent organiser une sortie au bord de la mer.",
    ),
    "es": (
        "Quieren hablar de la vida cotidiana y de sus planes para las vacaciones.",
        "Desean compartir noticias de la familia y del barrio.",
        "Piensan conversar sobre la música y las fiestas del pueblo.",
        "Quieren comparar sus recetas y hablar del huerto.",
        "Esperan organizar una salida a la playa.",
    ),
    "en": (
        "They want to talk about everyday life and their holiday plans.",
        "They hope to share news about the family and the neighborhood.",
        "They plan to chat about music and the village festivals.",
        "They want to compare recipes and talk about the garden.",
        "They hope to organize a trip to the seaside together.",
    ),
}

_CG_JOINERS = {"fr": "et", "es": "y", "en": "and"}
_CG_VERBS = {"fr": "se retrouvent", "es": "se encuentran", "en": "meet"}

_UTT_OPENERS = {
    "fr": (
        "Je pense que le marché du village est vraiment agréable",
        "Je crois que la famille va bien ces jours-ci",
        "Je trouve que les soirées sont plus douces en ce moment",
        "Je dois dire que le jardin donne beaucoup de tomates",
        "Je me souviens que la chorale répète ce jeudi",
        "Je vois que tu aimes les romans policiers toi aussi",
        "Je sens que les vacances vont être magnifiques",
        "Je sais que la boulangerie ouvre très tôt demain",
        "Je remarque que le parc est plein de monde le dimanche",
        "Je suppose que le café de la gare est ouvert",
        "J'ai entendu que la fête du quartier approche",
        "Je dirais que la campagne me manque un peu",
    ),
    "es": (
        "Creo que el mercado del pueblo es muy agradable",
        "Pienso que la familia está bien estos días",
        "Me parece que las tardes son más suaves ahora",
        "Debo decir que el huerto da muchos tomates",
        "Recuerdo que el coro ensaya este jueves",
        "Veo que también te gustan las novelas de misterio",
        "Siento que las vacaciones van a ser estupendas",
        "Sé que la panadería abre muy temprano mañana",
        "Noto que el parque se llena los domingos",
        "Supongo que el café de la estación está abierto",
        "He oído que la fiesta del barrio ya llega",
        "Diría que echo de menos el campo",
    ),
    "en": (
        "I think the village market is really lovely these days",
        "I believe the family has been doing well lately",
        "I feel the evenings are getting softer with the season",
        "I must say the garden gives plenty of tomatoes",
        "I remember the choir rehearses this Thursday",
        "I see you enjoy the mystery novels as well",
        "I sense the holidays are going to be wonderful",
        "I know the bakery opens very early tomorrow",
        "I notice the park fills up every Sunday",
        "I suppose the café by the station stays open",
        "I heard the neighborhood festival is coming soon",
        "I would say the countryside calls me back",
    ),
}

_UTT_CLOSERS = {
    "fr": (
        "et je veux bien en parler avec toi.",
        "parce que les journées sont très belles.",
        "et la famille sera contente de venir.",
        "même si le travail me prend du temps.",
        "et nous pourrions y aller ensemble.",
        "car le quartier est calme le matin.",
        "et cela me donne toujours le sourire.",
        "puisque la saison des fêtes commence.",
        "et j'aime beaucoup ces moments simples.",
        "alors je prépare déjà les recettes.",
        "et le vélo reste mon plaisir préféré.",
        "donc je garde un peu de temps pour nous.",
    ),
    "es": (
        "y me encanta hablarlo contigo.",
        "porque los días están muy bonitos.",
        "y la familia estará feliz de venir.",
        "aunque el trabajo me quita tiempo.",
        "y podríamos ir juntos esta vez.",
        "porque el barrio está tranquilo por la mañana.",
        "y eso siempre me saca una sonrisa.",
        "ya que la temporada de fiestas empieza.",
        "y disfruto mucho estos momentos sencillos.",
        "así que ya preparo las recetas.",
        "y la bicicleta sigue siendo mi placer favorito.",
        "por eso guardo un rato para nosotros.",
    ),
    "en": (
        "and you are welcome to join the fun.",
        "because the days are very bright now.",
        "and the family would love the plan.",
        "though the work keeps me quite busy.",
        "and we could go there together.",
        "since the neighborhood stays calm early.",
        "and that always brings the smile back.",
        "because the festival season starts soon.",
        "and these simple moments are the best.",
        "so the recipes are already waiting.",
        "and the bicycle remains the best part.",
        "therefore there is time for the two of us.",
    ),
}

_DEFAULT_WORDS = {"fr": "Personnage", "es": "Personaje", "en": "Character"}

_STEP_PERSONA = "varied examples respecting the following taxonomy"
_STEP_CG = "### Narrator:"
_STEP_UTTERANCE = "keep the conversation flow"
_STEP_JUDGE = "### Output: Return your evaluation"

_LANG_PATTERNS = (
    re.compile(r"sentence in the persona should be in (\w+)"),
    re.compile(r"Narrator fluent in (\w+)"),
    re.compile(r"You are a fluent (\w+) speaker"),
)
_WORD_PATTERN = re.compile(r'ALWAYS mention "([^"]+) 1"')
_ID_PATTERN = re.compile(r"\(id: ([^)]+)\)")


@lru_cache(maxsize=None)
def _name_to_tag() -> dict:
    return {lang.name.lower(): lang.tag for lang in load_languages()}


class StubLlm:
    """Stateless responder: response = f(request body)."""

    def sniff_language(self, text: str) -> str:
        for pattern in _LANG_PATTERNS:
            match = pattern.search(text)
            if match:
                tag = _name_to_tag().get(match.group(1).lower())
                if tag:
                    return tag
        return "en"

    def _pool_lang(self, tag: str) -> str:
        return tag if tag in _PERSONAS else "en"

    def respond(self, body: dict) -> dict:
        messages = body.get("messages") or []
        text = "\n".join(str(m.get("content", "")) for m in messages)
        n = int(body.get("n", 1) or 1)
        digest = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
        choices = []
        for i in range(n):
            rng = random.Random(f"{digest}:{i}")
            content = self._content(text, messages, rng)
            choices.append(
                {
                    "index": i,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            )
        return {
            "id": f"stub-{digest[:12]}",
            "object": "chat.completion",
            "created": 0,
            "model": body.get("model", "stub"),
            "choices": choices,
            "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0},
        }

    def _content(self, text: str, messages, rng: random.Random) -> str:
        if _STEP_JUDGE in text:
            return self._judge(text, rng)
        lang = self._pool_lang(self.sniff_language(text))
        if _STEP_CG in text:
            return self._common_ground(text, lang, rng)
        if _STEP_UTTERANCE in text:
            return f"{rng.choice(_UTT_OPENERS[lang])} {rng.choice(_UTT_CLOSERS[lang])}"
        if _STEP_PERSONA in text:
            return "\n".join(rng.sample(_PERSONAS[lang], 5))
        # unknown step: echo the last user message
        for message in reversed(messages):
            if message.get("role") == "user":
                return str(message.get("content", ""))
        return "OK."

    def _common_ground(self, text: str, lang: str, rng: random.Random) -> str:
        match = _WORD_PATTERN.search(text)
        word = match.group(1) if match else _DEFAULT_WORDS[lang]
        place = rng.choice(_CG_PLACES[lang])
        purpose = rng.choice(_CG_PURPOSES[lang])
        return (
            f"{word} 1 {_CG_JOINERS[lang]} {word} 2 "
            f"{_CG_VERBS[lang]} {place}. {purpose}"
        )

    def _judge(self, text: str, rng: random.Random) -> str:
        ids = _ID_PATTERN.findall(text)
        result = {}
        if "### Input: Personas" in text:
            for item_id in ids:
                result[item_id] = {
                    key: self._score(item_id, "persona", key)
                    for key in REQUIRED_KEYS["persona"]
                }
        else:
            for item_id in ids:
                result[item_id] = {
                    "common_ground": {
                        key: self._score(item_id, "common_ground", key)
                        for key in REQUIRED_KEYS["common_ground"]
                    },
                    "dialogue": {
                        key: self._score(item_id, "dialogue", key)
                        for key in REQUIRED_KEYS["dialogue"]
                    },
                }
        return json.dumps(result, ensure_ascii=False)

    def _score(self, item_id: str, kind: str, key: str) -> int:
        # stable per (item, criterion): judging the same item twice agrees
        seed = hashlib.sha256(f"{item_id}:{kind}:{key}".encode("utf-8")).hexdigest()
        return random.Random(seed).randint(1, 5)


class StubWsgiApp:
    """Pure-WSGI wrapper; mountable in-process or served over a socket.

    ``fail_first`` makes the first N requests return HTTP 500, for
    exercising retry/backoff paths against a misbehaving server.
    """

    def __init__(self, llm: Optional[StubLlm] = None, record: bool = False, fail_first: int = 0):
        self.llm = llm or StubLlm()
        self.requests = [] if record else None
        self._fail_remaining = fail_first
        self._lock = threading.Lock()

    def __call__(self, environ, start_response):
        path = environ.get("PATH_INFO", "")
        method = environ.get("REQUEST_METHOD", "GET")
        if method == "GET" and path == "/health":
            return self._json(start_response, "200 OK", {"ok": True})
        if method == "POST" and path.endswith("/chat/completions"):
            try:
                length = int(environ.get("CONTENT_LENGTH") or 0)
            except ValueError:
                length = 0
            raw = environ["wsgi.input"].read(length) if length else b"{}"
            try:
                body = json.loads(raw.decode("utf-8"))
            except (ValueError, UnicodeDecodeError):
                return self._json(
                    start_response, "400 Bad Request", {"error": "invalid JSON body"}
                )
            with self._lock:
                if self.requests is not None:
                    self.requests.append(body)
                if self._fail_remaining > 0:
                    self._fail_remaining -= 1
                    return self._json(
                        start_response,
                        "500 Internal Server Error",
                        {"error": "induced failure"},
                    )
            return self._json(start_response, "200 OK", self.llm.respond(body))
        return self._json(start_response, "404 Not Found", {"error": f"no route {path}"})

    @staticmethod
    def _json(start_response, status: str, payload: dict):
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        start_response(
            status,
            [("Content-Type", "application/json"), ("Content-Length", str(len(data)))],
        )
        return [data]


def serve(host: str = "127.0.0.1", port: int = 8099, app: Optional[StubWsgiApp] = None):
    """Blocking threaded WSGI server for the CLI."""
    from socketserver import ThreadingMixIn
    from wsgiref.simple_server import WSGIRequestHandler, WSGIServer, make_server

    class QuietHandler(WSGIRequestHandler):
        def log_message(self, *args):
            pass

    class ThreadingServer(ThreadingMixIn, WSGIServer):
        daemon_threads = True

    with make_server(
        host, port, app or StubWsgiApp(), server_class=ThreadingServer, handler_class=QuietHandler
    ) as httpd:
        httpd.serve_forever()
