import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner

from dialoforge.analytics import pearson
from dialoforge.cli import main
from dialoforge.judge import REQUIRED_KEYS, ScoreSheet, sheet_from_json
from dialoforge.review import ReviewItem, ReviewStore
from dialoforge.store import load_records, read_manifest


@pytest.fixture(scope="module")
def corpus(stub_endpoint, tmp_path_factory):
    """One generated corpus shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("corpus")
    runner = CliRunner()
    personas = runner.invoke(
        main,
        [
            "gen-personas", "--lang", "fr", "--count", "4",
            "--seed", "5", "--endpoint", stub_endpoint, "--out", str(root),
        ],
    )
    assert personas.exit_code == 0, personas.output
    dialogues = runner.invoke(
        main,
        [
            "gen-dialogues", "--lang", "fr", "--count", "3", "--workers", "2",
            "--seed", "9", "--endpoint", stub_endpoint, "--out", str(root),
            "--personas", str(root / "fr" / "personas.jsonl"),
        ],
    )
    assert dialogues.exit_code == 0, dialogues.output
    return root


class TestGeneration:
    def test_personas_written_with_manifest(self, corpus):
        path = corpus / "fr" / "personas.jsonl"
        records = load_records(path)
        assert len(records) == 4
        assert all(r["kind"] == "persona" and r["id"] for r in records)
        manifest = read_manifest(path)
        assert manifest["command"] == "gen-personas"
        assert manifest["params"]["seed"] == 5
        assert manifest["params"]["created_at"]
        assert manifest["results"]["written"] == 4
        assert set(manifest["data_hashes"]) == {
            "persona_taxonomy.json", "speech_events.json", "languages.json"
        }
        # argv mirrors sys.argv so it only carries CLI words in shell use
        assert isinstance(manifest["argv"], list)

    def test_dialogues_written_with_common_grounds(self, corpus):
        dialogues = load_records(corpus / "fr" / "dialogues.jsonl")
        grounds = load_records(corpus / "fr" / "common_grounds.jsonl")
        manifest = read_manifest(corpus / "fr" / "dialogues.jsonl")
        assert manifest["results"]["written"] == len(dialogues)
        assert len(dialogues) + len(manifest["results"]["dropped"]) == 3
        assert len(grounds) == len(dialogues)
        for record in dialogues:
            assert 4 <= record["planned_turns"] <= 10
            assert len(record["utterances"]) >= 8
            speakers = [u[0] for u in record["utterances"]]
            assert speakers == [i % 2 + 1 for i in range(len(speakers))]

    def test_inline_persona_pool_persisted(self, stub_endpoint, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "gen-dialogues", "--lang", "es", "--count", "2",
                "--pool-size", "3", "--seed", "2",
                "--endpoint", stub_endpoint, "--out", str(tmp_path),
            ],
        )
        assert result.exit_code == 0, result.output
        assert len(load_records(tmp_path / "es" / "personas.jsonl")) == 3
        assert load_records(tmp_path / "es" / "dialogues.jsonl")

    def test_unknown_language_fails(self, stub_endpoint, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "gen-personas", "--lang", "zz", "--count", "1",
                "--endpoint", stub_endpoint, "--out", str(tmp_path),
            ],
        )
        assert result.exit_code != 0


class TestReplay:
    def test_replay_is_byte_identical(self, corpus, stub_endpoint, tmp_path):
        runner = CliRunner()
        for name in ("personas.jsonl", "dialogues.jsonl"):
            manifest_path = corpus / "fr" / f"{name}.manifest.json"
            out = tmp_path / f"replay-{name}"
            result = runner.invoke(
                main, ["replay", str(manifest_path), "--out", str(out)]
            )
            assert result.exit_code == 0, result.output
            original = (corpus / "fr" / name).read_bytes()
            replayed = (out / "fr" / name).read_bytes()
            assert replayed == original

    def test_replay_rejects_report_manifests(self, corpus, tmp_path):
        runner = CliRunner()
        stats_out = tmp_path / "stats.tsv"
        ok = runner.invoke(
            main,
            [
                "stats", "--corpus", str(corpus), "--lang", "fr",
                "--out", str(stats_out), "--no-figures",
            ],
        )
        assert ok.exit_code == 0, ok.output
        result = runner.invoke(
            main,
            ["replay", str(stats_out) + ".manifest.json", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code != 0
        assert "not replayable" in result.output

    def test_missing_manifest_is_a_clean_error(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["replay", str(tmp_path / "nope.jsonl.manifest.json"),
             "--out", str(tmp_path / "x")],
        )
        assert result.exit_code != 0
        assert "no manifest found" in result.output
        assert not isinstance(result.exception, FileNotFoundError)


class TestValidate:
    def test_clean_corpus_passes(self, corpus):
        runner = CliRunner()
        result = runner.invoke(main, ["validate", "--corpus", str(corpus)])
        assert result.exit_code == 0, result.output
        assert "0 problems" in result.output

    def test_corrupted_record_fails(self, corpus, tmp_path):
        bad_root = tmp_path / "bad"
        (bad_root / "fr").mkdir(parents=True)
        records = load_records(corpus / "fr" / "dialogues.jsonl")
        record = dict(records[0])
        record["planned_turns"] = 99
        (bad_root / "fr" / "dialogues.jsonl").write_text(
            json.dumps(record) + "\n", encoding="utf-8"
        )
        runner = CliRunner()
        result = runner.invoke(main, ["validate", "--corpus", str(bad_root)])
        assert result.exit_code == 1
        assert "1 records" in result.output


class TestReports:
    def test_stats_tsv_and_figure(self, corpus, tmp_path):
        runner = CliRunner()
        out = tmp_path / "reports" / "stats.tsv"
        result = runner.invoke(
            main,
            ["stats", "--corpus", str(corpus), "--lang", "fr", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text(encoding="utf-8").strip().split("\n")
        assert lines[0].split("\t")[:3] == ["language", "n_dialogues", "n_utterances"]
        row = lines[1].split("\t")
        assert row[0] == "fr"
        assert int(row[1]) == len(load_records(corpus / "fr" / "dialogues.jsonl"))
        figure = out.with_suffix(".png")
        assert figure.exists() and figure.stat().st_size > 0
        assert str(figure) in result.output

    def test_judge_writes_sheets_and_table(self, corpus, stub_endpoint, tmp_path):
        runner = CliRunner()
        out = tmp_path / "scores.tsv"
        result = runner.invoke(
            main,
            [
                "judge", "--corpus", str(corpus), "--lang", "fr",
                "--kind", "both", "--endpoint", stub_endpoint,
                "--out", str(out), "--no-figures",
            ],
        )
        assert result.exit_code == 0, result.output
        sheets_path = tmp_path / "scores.sheets.jsonl"
        sheets = [sheet_from_json(r) for r in load_records(sheets_path)]
        n_dialogues = len(load_records(corpus / "fr" / "dialogues.jsonl"))
        assert len(sheets) == 4 + 2 * n_dialogues
        assert {s.rater_id for s in sheets} == {"stub-judge"}
        assert {s.kind for s in sheets} == {"persona", "common_ground", "dialogue"}
        table = out.read_text(encoding="utf-8").strip().split("\n")
        assert table[0].split("\t") == [
            "rater", "language", "n_sheets", "P", "CG", "C", "avg"
        ]
        assert table[1].startswith("stub-judge\tfr\t")

    def test_judge_reruns_identically(self, corpus, stub_endpoint, tmp_path):
        runner = CliRunner()
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.tsv"
            result = runner.invoke(
                main,
                [
                    "judge", "--corpus", str(corpus), "--lang", "fr",
                    "--kind", "personas", "--endpoint", stub_endpoint,
                    "--out", str(out), "--no-figures",
                ],
            )
            assert result.exit_code == 0, result.output
            outputs.append((tmp_path / f"{name}.sheets.jsonl").read_bytes())
        assert outputs[0] == outputs[1]

    def test_judge_empty_corpus_leaves_no_outputs(self, stub_endpoint, tmp_path):
        runner = CliRunner()
        out = tmp_path / "reports" / "judge.tsv"
        result = runner.invoke(
            main,
            [
                "judge", "--corpus", str(tmp_path / "empty"), "--lang", "fr",
                "--endpoint", stub_endpoint, "--out", str(out),
            ],
        )
        assert result.exit_code != 0
        assert "no records to judge" in result.output
        assert not out.parent.exists()

    def test_correlate_per_criterion_rows(self, tmp_path):
        human_path = tmp_path / "human.jsonl"
        judge_path = tmp_path / "judge.jsonl"
        values = [(1, 2), (2, 2), (3, 4), (4, 3), (5, 5), (5, 4)]
        with human_path.open("w") as hf, judge_path.open("w") as jf:
            for i, (hv, jv) in enumerate(values):
                human = ScoreSheet(
                    f"i{i}", "persona",
                    {k: hv for k in REQUIRED_KEYS["persona"]},
                    "human", "h-1", "fr",
                )
                judge = ScoreSheet(
                    f"i{i}", "persona",
                    {k: jv for k in REQUIRED_KEYS["persona"]},
                    "llm_judge", "stub-judge", "fr",
                )
                hf.write(json.dumps(human.to_json()) + "\n")
                jf.write(json.dumps(judge.to_json()) + "\n")
        runner = CliRunner()
        out = tmp_path / "agreement.tsv"
        result = runner.invoke(
            main,
            [
                "correlate", "--human", str(human_path),
                "--judge", str(judge_path), "--out", str(out), "--no-figures",
            ],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text(encoding="utf-8").strip().split("\n")
        header = lines[0].split("\t")
        assert header[:4] == ["kind", "criterion", "n", "pearson_r"]
        assert "kappa_grouped" in header
        assert len(lines) == 1 + len(REQUIRED_KEYS["persona"])
        expected_r, _ = pearson([v[0] for v in values], [v[1] for v in values])
        for line in lines[1:]:
            cells = line.split("\t")
            assert cells[0] == "persona"
            assert int(cells[2]) == 6
            assert float(cells[3]) == pytest.approx(expected_r, abs=1e-4)

    def test_correlate_two_pair_criterion_reports_nan_correlations(self, tmp_path):
        """Two pairs are legal for kappa/tau but below the r/rho floor."""
        human_path = tmp_path / "human.jsonl"
        judge_path = tmp_path / "judge.jsonl"
        with human_path.open("w") as hf, judge_path.open("w") as jf:
            for i, (hv, jv) in enumerate([(2, 4), (4, 2)]):
                human = ScoreSheet(
                    f"i{i}", "persona",
                    {k: hv for k in REQUIRED_KEYS["persona"]},
                    "human", "h-1", "fr",
                )
                judge = ScoreSheet(
                    f"i{i}", "persona",
                    {k: jv for k in REQUIRED_KEYS["persona"]},
                    "llm_judge", "stub-judge", "fr",
                )
                hf.write(json.dumps(human.to_json()) + "\n")
                jf.write(json.dumps(judge.to_json()) + "\n")
        runner = CliRunner()
        out = tmp_path / "agreement.tsv"
        result = runner.invoke(
            main,
            [
                "correlate", "--human", str(human_path),
                "--judge", str(judge_path), "--out", str(out), "--no-figures",
            ],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text(encoding="utf-8").strip().split("\n")
        header = lines[0].split("\t")
        for line in lines[1:]:
            row = dict(zip(header, line.split("\t")))
            assert int(row["n"]) == 2
            assert math.isnan(float(row["pearson_r"]))
            assert math.isnan(float(row["spearman_rho"]))
            assert float(row["kendall_tau"]) == -1.0
            # p_o = 0 and p_e = 1/2 over the two swapped labels
            assert float(row["kappa"]) == -1.0

    def test_correlate_without_overlap_fails(self, tmp_path):
        human_path = tmp_path / "h.jsonl"
        judge_path = tmp_path / "j.jsonl"
        sheet = ScoreSheet(
            "only", "persona", {k: 3 for k in REQUIRED_KEYS["persona"]},
            "human", "h", "fr",
        )
        human_path.write_text(json.dumps(sheet.to_json()) + "\n")
        judge_path.write_text("")
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "correlate", "--human", str(human_path),
                "--judge", str(judge_path), "--out", str(tmp_path / "o.tsv"),
            ],
        )
        assert result.exit_code != 0
        assert "no overlapping" in result.output

    def test_diversity_deterministic(self, corpus, tmp_path):
        runner = CliRunner()
        rows = []
        for name in ("d1", "d2"):
            out = tmp_path / f"{name}.tsv"
            result = runner.invoke(
                main,
                [
                    "diversity", "--corpus", str(corpus), "--lang", "fr",
                    "--n-sample", "4", "--n-pairs", "100", "--seed", "3",
                    "--out", str(out), "--no-figures",
                ],
            )
            assert result.exit_code == 0, result.output
            rows.append(out.read_text(encoding="utf-8"))
        assert rows[0] == rows[1]
        body = rows[0].strip().split("\n")[1].split("\t")
        assert body[0] == "fr" and body[1] == "4"
        assert 0.0 <= float(body[3]) <= 1.0


class TestExportRatings:
    def test_export_matches_store(self, tmp_path):
        item = ReviewItem(
            item_id="it-1",
            language="fr",
            model="m",
            personas=(
                {"id": "pa", "profiles": [{"sentence": "s", "taxonomy": "t"}] * 5},
                {"id": "pb", "profiles": [{"sentence": "s", "taxonomy": "t"}] * 5},
            ),
            common_ground={"id": "cg", "text": "x", "speech_event": "A | B"},
            dialogue=tuple((i % 2 + 1, f"u{i}") for i in range(8)),
        )
        state = tmp_path / "state.json"
        store = ReviewStore(state, items=[item])
        token = store.register(
            "fr",
            {
                "age_bucket": "18-29", "gender": "Other", "education": "Grad",
                "employment": "Student", "channel": "Referral",
            },
        )["token"]
        bundle = store.next_assignment(token)
        store.submit_rating(
            token,
            bundle["assignment_id"],
            {
                "personas": [
                    {k: 3 for k in REQUIRED_KEYS["persona"]},
                    {k: 4 for k in REQUIRED_KEYS["persona"]},
                ],
                "common_ground": {k: 5 for k in REQUIRED_KEYS["common_ground"]},
                "dialogue": {k: 2 for k in REQUIRED_KEYS["dialogue"]},
            },
        )
        runner = CliRunner()
        result = runner.invoke(main, ["export-ratings", "--state", str(state)])
        assert result.exit_code == 0, result.output
        assert result.output == store.export_ratings()
        out_file = tmp_path / "ratings.jsonl"
        result = runner.invoke(
            main,
            ["export-ratings", "--state", str(state), "--out", str(out_file)],
        )
        assert result.exit_code == 0
        assert out_file.read_text(encoding="utf-8") == store.export_ratings()


class TestHelp:
    def test_all_commands_registered(self):
        runner = CliRunner()
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in (
            "gen-personas", "gen-dialogues", "replay", "validate", "stats",
            "judge", "correlate", "diversity", "serve-review",
            "export-ratings", "serve-stub",
        ):
            assert command in result.output

    def test_subcommand_help(self):
        runner = CliRunner()
        for command in ("gen-dialogues", "judge", "serve-review"):
            result = runner.invoke(main, [command, "--help"])
            assert result.exit_code == 0
