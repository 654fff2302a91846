"""Command line for corpus generation, scoring, analytics, and serving.

Every generating or reporting command drops a ``<out>.manifest.json`` next
to its primary output recording the seeds, endpoints, decoding knobs, and
bundled-data hashes that produced it; ``replay`` re-runs a generation
command from such a manifest.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from .analytics import (
    GROUPED_12_34_5,
    HttpSimilarityScorer,
    build_paired_ratings,
    cohen_kappa,
    kendall,
    lexical_similarity,
    pearson,
    persona_diversity,
    spearman,
)
from .filters import FilterLog, StopwordDetector
from .gateway import PERSONA_DECODING, PERSONA_DECODING_HOT, LlmGateway
from .generator import (
    Dropped,
    generate_dialogue_slot,
    generate_personas,
    load_demo_personas,
    persona_from_json,
)
from .judge import (
    aggregate_by_group,
    judge_conversations,
    judge_item_from_dialogue,
    judge_item_from_persona,
    judge_personas,
    sheet_from_json,
)
from .languages import data_text, get_language
from .reports import (
    correlation_report,
    diversity_report,
    score_report,
    stats_report,
)
from .review import ReviewStore, create_app, items_from_dialogue_records
from .store import (
    CorpusLayout,
    append_record,
    compute_stats,
    iter_records,
    load_records,
    read_manifest,
    validate_record,
    write_manifest,
)
from .taxonomy import load_persona_taxonomy, load_speech_events

DEFAULT_ENDPOINT = "http://127.0.0.1:8099"
N_DEMO_CHOICES = ("0", "1", "2", "4", "6", "8", "10")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _data_hashes() -> dict:
    names = ("persona_taxonomy.json", "speech_events.json", "languages.json")
    return {
        name: hashlib.sha256(data_text(name).encode("utf-8")).hexdigest()
        for name in names
    }


def _no_whitespace(tag: str) -> bool:
    try:
        return get_language(tag).no_whitespace
    except KeyError:
        return False


def _write_run_manifest(anchor, command: str, params: dict, results: dict) -> Path:
    manifest = {
        "command": command,
        "argv": list(sys.argv[1:]),
        "params": params,
        "data_hashes": _data_hashes(),
        "results": results,
    }
    return write_manifest(anchor, manifest)


def _run_gen_personas(params: dict) -> dict:
    language = get_language(params["lang"])
    layout = CorpusLayout(params["out"])
    decoding = PERSONA_DECODING_HOT if params["hot"] else PERSONA_DECODING
    detector = StopwordDetector()
    filter_log = FilterLog(params.get("filter_log"))
    with LlmGateway(
        params["endpoint"],
        params["model"],
        log_path=params.get("gateway_log"),
        jitter_seed=params["seed"],
    ) as gateway:
        personas = generate_personas(
            language,
            params["count"],
            params["n_demos"],
            params["demo_seed"],
            load_persona_taxonomy(),
            gateway,
            load_demo_personas(),
            detector=detector,
            decoding=decoding,
            filter_log=filter_log,
            rng_seed=params["seed"],
        )
    out_file = layout.file_for(language.tag, "persona")
    for persona in personas:
        append_record(persona.to_json(), out_file)
    return {
        "file": str(out_file),
        "written": len(personas),
        "requested": params["count"],
    }


def _run_gen_dialogues(params: dict) -> dict:
    language = get_language(params["lang"])
    layout = CorpusLayout(params["out"])
    detector = StopwordDetector()
    filter_log = FilterLog(params.get("filter_log"))
    events = load_speech_events()
    dropped = []
    with LlmGateway(
        params["endpoint"],
        params["model"],
        log_path=params.get("gateway_log"),
        jitter_seed=params["seed"],
    ) as gateway:
        if params.get("personas"):
            pool = [persona_from_json(r) for r in load_records(params["personas"])]
            pool = [p for p in pool if p.language == language.tag]
        else:
            pool_size = params.get("pool_size") or max(10, params["count"] // 2)
            pool = generate_personas(
                language,
                pool_size,
                params["n_demos"],
                params["demo_seed"],
                load_persona_taxonomy(),
                gateway,
                load_demo_personas(),
                detector=detector,
                filter_log=filter_log,
                rng_seed=params["seed"],
            )
            persona_file = layout.file_for(language.tag, "persona")
            for persona in pool:
                append_record(persona.to_json(), persona_file)
        if len(pool) < 2:
            raise click.ClickException(
                f"persona pool for {language.tag} holds {len(pool)} personas; need >= 2"
            )

        def run_slot(slot: int):
            return generate_dialogue_slot(
                slot,
                pool,
                events,
                language,
                gateway,
                run_seed=params["seed"],
                detector=detector,
                filter_log=filter_log,
                created_at=params["created_at"],
            )

        with ThreadPoolExecutor(max_workers=params["workers"]) as executor:
            results = list(executor.map(run_slot, range(params["count"])))

    dialogue_file = layout.file_for(language.tag, "dialogue")
    cg_file = layout.file_for(language.tag, "common_ground")
    written = 0
    for slot, result in enumerate(results):
        if isinstance(result, Dropped):
            dropped.append({"slot": slot, "stage": result.stage, "reason": result.reason})
            continue
        append_record(result.common_ground.to_json(), cg_file)
        append_record(result.to_json(), dialogue_file)
        written += 1
    return {
        "file": str(dialogue_file),
        "written": written,
        "requested": params["count"],
        "dropped": dropped,
        "persona_pool": len(pool),
    }


@click.group()
def main():
    """Persona-grounded multilingual dialogue corpus toolkit."""


@main.command("gen-personas")
@click.option("--lang", required=True, help="Target language tag, e.g. fr.")
@click.option("--count", type=int, required=True, help="Personas to generate.")
@click.option("--n-demos", type=click.Choice(N_DEMO_CHOICES), default="0")
@click.option("--demo-seed", type=int, default=0)
@click.option("--seed", type=int, default=0, help="Run seed (prompts, retries).")
@click.option("--endpoint", default=DEFAULT_ENDPOINT, show_default=True)
@click.option("--model", default="stub-model", show_default=True)
@click.option("--hot", is_flag=True, help="Sample at temperature 0.8 instead of 0.7.")
@click.option("--out", required=True, help="Corpus root directory.")
@click.option("--gateway-log", default=None, help="JSONL of raw gateway traffic.")
@click.option("--filter-log", default=None, help="JSONL of filter verdicts.")
def gen_personas_cmd(lang, count, n_demos, demo_seed, seed, endpoint, model, hot, out, gateway_log, filter_log):
    """Generate persona records into <out>/<lang>/personas.jsonl."""
    params = {
        "lang": lang,
        "count": count,
        "n_demos": int(n_demos),
        "demo_seed": demo_seed,
        "seed": seed,
        "endpoint": endpoint,
        "model": model,
        "hot": hot,
        "out": out,
        "gateway_log": gateway_log,
        "filter_log": filter_log,
        "created_at": _now(),
    }
    results = _run_gen_personas(params)
    manifest = _write_run_manifest(results["file"], "gen-personas", params, results)
    click.echo(f"wrote {results['written']}/{results['requested']} personas to {results['file']}")
    click.echo(f"manifest: {manifest}")


@main.command("gen-dialogues")
@click.option("--lang", required=True)
@click.option("--count", type=int, required=True, help="Dialogue slots to attempt.")
@click.option("--personas", default=None, help="Existing personas.jsonl to pair from.")
@click.option("--pool-size", type=int, default=None, help="Personas to generate when --personas is absent (default max(10, count//2)).")
@click.option("--n-demos", type=click.Choice(N_DEMO_CHOICES), default="0", help="Demos for inline persona generation.")
@click.option("--demo-seed", type=int, default=0)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--endpoint", default=DEFAULT_ENDPOINT, show_default=True)
@click.option("--model", default="stub-model", show_default=True)
@click.option("--out", required=True, help="Corpus root directory.")
@click.option("--gateway-log", default=None)
@click.option("--filter-log", default=None)
def gen_dialogues_cmd(lang, count, personas, pool_size, n_demos, demo_seed, seed, workers, endpoint, model, out, gateway_log, filter_log):
    """Generate dialogues (with their common grounds) into the corpus."""
    params = {
        "lang": lang,
        "count": count,
        "personas": personas,
        "pool_size": pool_size,
        "n_demos": int(n_demos),
        "demo_seed": demo_seed,
        "seed": seed,
        "workers": workers,
        "endpoint": endpoint,
        "model": model,
        "out": out,
        "gateway_log": gateway_log,
        "filter_log": filter_log,
        "created_at": _now(),
    }
    results = _run_gen_dialogues(params)
    manifest = _write_run_manifest(results["file"], "gen-dialogues", params, results)
    click.echo(
        f"wrote {results['written']}/{results['requested']} dialogues to {results['file']}"
        f" ({len(results['dropped'])} dropped)"
    )
    click.echo(f"manifest: {manifest}")


@main.command("replay")
@click.argument("manifest_file")
@click.option("--out", required=True, help="Fresh corpus root for the replayed run.")
def replay_cmd(manifest_file, out):
    """Re-run a generation command from its manifest (same seeds, new --out)."""
    anchor = manifest_file
    if anchor.endswith(".manifest.json"):
        anchor = anchor[: -len(".manifest.json")]
    try:
        manifest = read_manifest(anchor)
    except FileNotFoundError:
        raise click.ClickException(f"no manifest found for {manifest_file}")
    except json.JSONDecodeError as err:
        raise click.ClickException(f"manifest {manifest_file} is not valid JSON: {err}")
    command = manifest.get("command")
    params = dict(manifest["params"])
    params["out"] = out
    if command == "gen-personas":
        results = _run_gen_personas(params)
    elif command == "gen-dialogues":
        results = _run_gen_dialogues(params)
    else:
        raise click.ClickException(f"manifest command {command!r} is not replayable")
    _write_run_manifest(results["file"], command, params, results)
    click.echo(f"replayed {command}: wrote {results['written']} records to {results['file']}")


@main.command("validate")
@click.option("--corpus", required=True)
@click.option("--lang", "langs", multiple=True, help="Default: every language present.")
def validate_cmd(corpus, langs):
    """Check every stored record against its schema; exit 1 on problems."""
    layout = CorpusLayout(corpus)
    tags = list(langs) or layout.languages()
    checked = 0
    failures = 0
    for tag in tags:
        for kind in ("persona", "common_ground", "dialogue"):
            path = layout.file_for(tag, kind)
            for i, record in enumerate(iter_records(path), start=1):
                checked += 1
                for problem in validate_record(record):
                    failures += 1
                    click.echo(f"{path}:{i}: {problem}", err=True)
    click.echo(f"checked {checked} records, {failures} problems")
    if failures:
        raise SystemExit(1)


@main.command("stats")
@click.option("--corpus", required=True)
@click.option("--lang", "langs", multiple=True)
@click.option("--out", required=True, help="TSV path; figure lands next to it.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def stats_cmd(corpus, langs, out, figures):
    """Corpus size table per language."""
    layout = CorpusLayout(corpus)
    tags = list(langs) or layout.languages()
    entries = [
        compute_stats(
            iter_records(layout.file_for(tag, "dialogue")),
            tag,
            no_whitespace=_no_whitespace(tag),
        )
        for tag in tags
    ]
    for path in stats_report(entries, out, figures):
        click.echo(str(path))
    params = {"corpus": corpus, "langs": tags, "created_at": _now()}
    _write_run_manifest(out, "stats", params, {"rows": len(entries)})


@main.command("judge")
@click.option("--corpus", required=True)
@click.option("--lang", "langs", multiple=True, required=True)
@click.option("--kind", type=click.Choice(["personas", "conversations", "both"]), default="both", show_default=True)
@click.option("--endpoint", default=DEFAULT_ENDPOINT, show_default=True)
@click.option("--model", default="stub-judge", show_default=True)
@click.option("--out", required=True, help="Score table TSV; sheets JSONL lands next to it.")
@click.option("--gateway-log", default=None)
@click.option("--figures/--no-figures", default=True, show_default=True)
def judge_cmd(corpus, langs, kind, endpoint, model, out, gateway_log, figures):
    """Score stored records with the rubric-driven judge."""
    layout = CorpusLayout(corpus)
    sheets = []
    drops = []

    def on_drop(tag, ids, err):
        drops.append({"batch": tag, "ids": list(ids), "error": str(err)})
        click.echo(f"dropped batch {tag}: {err}", err=True)

    with LlmGateway(endpoint, model, log_path=gateway_log) as gateway:
        for tag in langs:
            if kind in ("personas", "both"):
                items = [
                    judge_item_from_persona(r)
                    for r in iter_records(layout.file_for(tag, "persona"))
                ]
                if items:
                    sheets.extend(
                        judge_personas(items, tag, gateway, on_drop=on_drop)
                    )
            if kind in ("conversations", "both"):
                items = [
                    judge_item_from_dialogue(r)
                    for r in iter_records(layout.file_for(tag, "dialogue"))
                ]
                if items:
                    sheets.extend(
                        judge_conversations(items, tag, gateway, on_drop=on_drop)
                    )
    if not sheets:
        raise click.ClickException("no records to judge")
    sheets_path = Path(out).with_suffix(".sheets.jsonl")
    sheets_path.parent.mkdir(parents=True, exist_ok=True)
    with sheets_path.open("w", encoding="utf-8") as fh:
        for sheet in sheets:
            fh.write(json.dumps(sheet.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    tables = aggregate_by_group(sheets)
    for path in score_report(tables, out, figures):
        click.echo(str(path))
    click.echo(str(sheets_path))
    params = {
        "corpus": corpus,
        "langs": list(langs),
        "kind": kind,
        "endpoint": endpoint,
        "model": model,
        "created_at": _now(),
    }
    _write_run_manifest(
        out, "judge", params, {"sheets": len(sheets), "dropped_batches": drops}
    )


def _load_sheets(path) -> list:
    return [sheet_from_json(r) for r in iter_records(path)]


@main.command("correlate")
@click.option("--human", "human_path", required=True, help="Human sheets JSONL.")
@click.option("--judge", "judge_path", required=True, help="Judge sheets JSONL.")
@click.option("--out", required=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
def correlate_cmd(human_path, judge_path, out, figures):
    """Human/judge agreement per criterion: r, rho, tau-b, kappa."""
    pairs = build_paired_ratings(_load_sheets(human_path), _load_sheets(judge_path))
    if not pairs:
        raise click.ClickException("no overlapping (item, criterion) ratings")
    rows = []
    for (kind, criterion), rated in sorted(pairs.items()):
        if len(rated.x) >= 3:
            r, r_p = pearson(rated.x, rated.y)
            rho, rho_p = spearman(rated.x, rated.y)
        else:
            # two pairs are enough to keep, but below the correlation floor
            r = r_p = rho = rho_p = float("nan")
        tau, tau_p = kendall(rated.x, rated.y)
        rows.append(
            {
                "kind": kind,
                "criterion": criterion,
                "n": len(rated.x),
                "pearson_r": r,
                "pearson_p": r_p,
                "spearman_rho": rho,
                "spearman_p": rho_p,
                "kendall_tau": tau,
                "kendall_p": tau_p,
                "kappa": cohen_kappa(rated.x, rated.y),
                "kappa_grouped": cohen_kappa(rated.x, rated.y, GROUPED_12_34_5),
            }
        )
    for path in correlation_report(rows, out, figures):
        click.echo(str(path))
    params = {"human": human_path, "judge": judge_path, "created_at": _now()}
    _write_run_manifest(out, "correlate", params, {"rows": len(rows)})


@main.command("diversity")
@click.option("--corpus", required=True)
@click.option("--lang", "langs", multiple=True)
@click.option("--n-sample", type=int, default=300, show_default=True)
@click.option("--n-pairs", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--scorer-url", default=None, help="Optional HTTP similarity scorer.")
@click.option("--out", required=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
def diversity_cmd(corpus, langs, n_sample, n_pairs, seed, scorer_url, out, figures):
    """Mean pairwise persona similarity per language."""
    layout = CorpusLayout(corpus)
    tags = list(langs) or layout.languages()
    scorer = HttpSimilarityScorer(scorer_url) if scorer_url else lexical_similarity
    rows = []
    for tag in tags:
        records = load_records(layout.file_for(tag, "persona"))
        if not records:
            continue
        sample = min(n_sample, len(records))
        mean = persona_diversity(
            records, scorer=scorer, n_sample=sample, n_pairs=n_pairs, seed=seed
        )
        rows.append(
            {
                "language": tag,
                "n_personas": len(records),
                "n_pairs": n_pairs,
                "mean_similarity": mean,
            }
        )
    if not rows:
        raise click.ClickException("no persona records found")
    for path in diversity_report(rows, out, figures):
        click.echo(str(path))
    params = {
        "corpus": corpus,
        "langs": tags,
        "n_sample": n_sample,
        "n_pairs": n_pairs,
        "seed": seed,
        "created_at": _now(),
    }
    _write_run_manifest(out, "diversity", params, {"rows": len(rows)})


@main.command("serve-review")
@click.option("--corpus", required=True)
@click.option("--lang", "langs", multiple=True)
@click.option("--state", required=True, help="JSON state file for the rating store.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8088, show_default=True)
def serve_review_cmd(corpus, langs, state, host, port):
    """Serve the human rating API over the stored dialogues."""
    import uvicorn

    layout = CorpusLayout(corpus)
    tags = list(langs) or layout.languages()
    records = []
    for tag in tags:
        records.extend(iter_records(layout.file_for(tag, "dialogue")))
    items = items_from_dialogue_records(records)
    if not items:
        raise click.ClickException("no dialogues found to review")
    store = ReviewStore(state, items)
    click.echo(f"serving {len(items)} items on http://{host}:{port}")
    uvicorn.run(create_app(store), host=host, port=port, log_level="warning")


@main.command("export-ratings")
@click.option("--state", required=True)
@click.option("--lang", default=None)
@click.option("--out", default=None, help="Default: stdout.")
def export_ratings_cmd(state, lang, out):
    """Dump submitted ratings as pseudonymized JSONL."""
    store = ReviewStore(state)
    text = store.export_ratings(language=lang)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
        click.echo(out)
    else:
        click.echo(text, nl=False)


@main.command("serve-stub")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8099, show_default=True)
def serve_stub_cmd(host, port):
    """Serve the deterministic OpenAI-compatible stub model."""
    from .stubserver import serve

    click.echo(f"stub model listening on http://{host}:{port}")
    serve(host, port)


if __name__ == "__main__":
    main()
