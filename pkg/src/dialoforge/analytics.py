"""Agreement and diversity statistics for rating comparisons.

Correlation kernels (Pearson, Spearman over mid-ranks, tie-corrected
Kendall tau-b) return (statistic, two-sided p); zero-variance input yields
NaN rather than an error, since judges really do rate entire columns 5.
Cohen's kappa supports label grouping applied before computation. Persona
diversity draws uniform pairs from a seeded sample and averages a pluggable
similarity scorer.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from math import fsum
from typing import Callable, Mapping, Optional, Sequence

import httpx
from scipy.stats import norm as _norm
from scipy.stats import t as _student_t

NAN = float("nan")

# the grouped-kappa scheme: merge (1,2), merge (3,4), keep (5,)
GROUPED_12_34_5 = {1: "A", 2: "A", 3: "B", 4: "B", 5: "C"}


@dataclass(frozen=True)
class PairedRatings:
    """Aligned human (x) and judge (y) scores for one criterion."""

    criterion: str
    x: tuple
    y: tuple
    item_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "y", tuple(self.y))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have equal length")
        if len(self.x) < 2:
            raise ValueError("need at least two paired ratings")
        if self.item_ids and len(self.item_ids) != len(self.x):
            raise ValueError("item_ids must align with the ratings")


def _check_lengths(x: Sequence, y: Sequence, minimum: int):
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if len(x) < minimum:
        raise ValueError(f"need at least {minimum} observations")


def _t_pvalue(r: float, n: int) -> float:
    if math.isnan(r):
        return NAN
    if abs(r) >= 1:
        return 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return 2 * _student_t.sf(abs(t), n - 2)


def pearson(x: Sequence, y: Sequence):
    """Sample correlation with a two-sided t-test p-value (n-2 df)."""
    _check_lengths(x, y, 3)
    n = len(x)
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    # exact constant check: mean subtraction rounds, so a constant float
    # vector would otherwise sneak past the zero-variance guard below
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        return NAN, NAN
    mx = fsum(xs) / n
    my = fsum(ys) / n
    sxy = fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = fsum((a - mx) ** 2 for a in xs)
    syy = fsum((b - my) ** 2 for b in ys)
    if sxx <= 0 or syy <= 0:
        return NAN, NAN
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return r, _t_pvalue(r, n)


def midranks(values: Sequence) -> list:
    """Average ranks (1-based); ties share the mean of their rank range."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        average = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = average
        i = j + 1
    return ranks


def spearman(x: Sequence, y: Sequence):
    """Pearson over mid-ranks; same t transform for the p-value."""
    _check_lengths(x, y, 3)
    return pearson(midranks(x), midranks(y))


def _tie_group_sizes(values: Sequence) -> list:
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return [c for c in counts.values() if c > 1]


def kendall(x: Sequence, y: Sequence):
    """Tie-corrected tau-b with a normal-approximation two-sided p-value."""
    _check_lengths(x, y, 2)
    n = len(x)
    s = 0
    for i in range(n):
        for j in range(i + 1, n):
            s += _sign(x[i], x[j]) * _sign(y[i], y[j])
    n0 = n * (n - 1) // 2
    tx = _tie_group_sizes(x)
    ty = _tie_group_sizes(y)
    n1 = sum(t * (t - 1) // 2 for t in tx)
    n2 = sum(u * (u - 1) // 2 for u in ty)
    if n1 == n0 or n2 == n0:
        return NAN, NAN
    tau = s / math.sqrt((n0 - n1) * (n0 - n2))
    tau = max(-1.0, min(1.0, tau))
    # tie-corrected variance of S (no continuity correction)
    term1 = (
        n * (n - 1) * (2 * n + 5)
        - sum(t * (t - 1) * (2 * t + 5) for t in tx)
        - sum(u * (u - 1) * (2 * u + 5) for u in ty)
    ) / 18
    term2 = 0.0
    if n > 2:
        term2 = (
            sum(t * (t - 1) * (t - 2) for t in tx)
            * sum(u * (u - 1) * (u - 2) for u in ty)
        ) / (9 * n * (n - 1) * (n - 2))
    term3 = (
        sum(t * (t - 1) for t in tx) * sum(u * (u - 1) for u in ty)
    ) / (2 * n * (n - 1))
    var_s = term1 + term2 + term3
    if var_s <= 0:
        return tau, NAN
    z = s / math.sqrt(var_s)
    return tau, 2 * _norm.sf(abs(z))


def _sign(a, b) -> int:
    if a < b:
        return 1
    if a > b:
        return -1
    return 0


def cohen_kappa(x: Sequence, y: Sequence, grouping: Optional[Mapping] = None) -> float:
    """Observed-vs-chance agreement; labels are mapped through ``grouping``
    first when given. Exact integer arithmetic, NaN when chance agreement
    is total."""
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if not x:
        raise ValueError("need at least one observation")
    if grouping is not None:
        try:
            x = [grouping[v] for v in x]
            y = [grouping[v] for v in y]
        except KeyError as exc:
            raise ValueError(f"grouping does not cover label {exc.args[0]!r}") from exc
    n = len(x)
    matches = sum(1 for a, b in zip(x, y) if a == b)
    count_x = {}
    count_y = {}
    for a in x:
        count_x[a] = count_x.get(a, 0) + 1
    for b in y:
        count_y[b] = count_y.get(b, 0) + 1
    chance = sum(count_x.get(label, 0) * count_y.get(label, 0) for label in count_x)
    # kappa = (p_o - p_e) / (1 - p_e) scaled by n^2 to stay in integers
    numerator = matches * n - chance
    denominator = n * n - chance
    if denominator == 0:
        return NAN
    return numerator / denominator


# -- pairing human and judge sheets ---------------------------------------------


def build_paired_ratings(human_sheets, judge_sheets) -> dict:
    """(kind, criterion) -> PairedRatings, one pair per human sheet whose
    item also has a judge sheet of the same kind."""
    judged = {}
    for sheet in judge_sheets:
        judged[(sheet.kind, sheet.item_id)] = sheet
    collected = {}
    for sheet in human_sheets:
        judge = judged.get((sheet.kind, sheet.item_id))
        if judge is None:
            continue
        for criterion, score in sorted(sheet.scores.items()):
            bucket = collected.setdefault((sheet.kind, criterion), ([], [], []))
            bucket[0].append(score)
            bucket[1].append(judge.scores[criterion])
            bucket[2].append(sheet.item_id)
    return {
        (kind, criterion): PairedRatings(
            criterion=criterion, x=xs, y=ys, item_ids=ids
        )
        for (kind, criterion), (xs, ys, ids) in sorted(collected.items())
        if len(xs) >= 2
    }


# -- persona diversity -------------------------------------------------------------


def lexical_similarity(a: str, b: str) -> float:
    """Jaccard overlap of lowercased word sets; the local fallback scorer."""
    ta = set(a.lower().split())
    tb = set(b.lower().split())
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


class HttpSimilarityScorer:
    """Adapter posting text pairs to a scoring endpoint returning {"score": x}."""

    def __init__(self, url: str, client: Optional[httpx.Client] = None, timeout: float = 30.0):
        self.url = url
        self._client = client if client is not None else httpx.Client(timeout=timeout)

    def __call__(self, a: str, b: str) -> float:
        response = self._client.post(self.url, json={"text_a": a, "text_b": b})
        response.raise_for_status()
        return float(response.json()["score"])


def _persona_text(persona) -> str:
    if isinstance(persona, str):
        return persona
    sentences = getattr(persona, "profile_sentences", None)
    if sentences is None and isinstance(persona, Mapping):
        sentences = [p["sentence"] for p in persona.get("profiles", [])]
    if sentences is None:
        sentences = persona
    return " ".join(str(s) for s in sentences)


def persona_diversity(
    personas: Sequence,
    scorer: Callable[[str, str], float] = lexical_similarity,
    n_sample: int = 300,
    n_pairs: int = 10000,
    seed: int = 0,
) -> float:
    """Mean pairwise similarity over uniformly drawn non-self pairs."""
    if n_sample > len(personas):
        raise ValueError(
            f"cannot sample {n_sample} personas from a pool of {len(personas)}"
        )
    if n_sample < 2:
        raise ValueError("need at least two personas to form pairs")
    rng = random.Random(seed)
    sample = [_persona_text(p) for p in rng.sample(list(personas), n_sample)]
    scores = []
    for _ in range(n_pairs):
        i = rng.randrange(n_sample)
        j = rng.randrange(n_sample - 1)
        if j >= i:
            j += 1
        scores.append(float(scorer(sample[i], sample[j])))
    return fsum(scores) / n_pairs
