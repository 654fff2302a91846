"""Tabular reports and companion figures.

Every report writes a tab-delimited table and, unless disabled, renders a
PNG figure next to it (same stem, ``.png`` suffix). Figures use the Agg
backend so reports work on headless machines.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .judge import PART_BY_KIND, ScoreTable  # noqa: E402
from .store import LanguageStats  # noqa: E402


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.{digits}f}"
    return str(value)


def write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(list(row))
    return path


def figure_path(tsv_path) -> Path:
    return Path(tsv_path).with_suffix(".png")


def stats_report(
    stats: Sequence[LanguageStats], out_path, figures: bool = True
) -> list:
    """Corpus size table: dialogues, utterances, and per-unit averages."""
    header = ("language", "n_dialogues", "n_utterances", "avg_utterances", "avg_words")
    rows = []
    for entry in stats:
        avg_words = _fmt(entry.avg_words_per_utterance, 2)
        if avg_words and entry.approx_words:
            avg_words += "*"
        rows.append(
            (
                entry.language,
                entry.n_dialogues,
                entry.n_utterances,
                _fmt(entry.avg_utterances_per_dialogue, 2),
                avg_words,
            )
        )
    written = [write_tsv(out_path, header, rows)]
    if figures and stats:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        languages = [entry.language for entry in stats]
        ax1.bar(languages, [entry.n_dialogues for entry in stats], color="#4878cf")
        ax1.set_title("Dialogues per language")
        ax1.set_ylabel("count")
        ax2.bar(
            languages,
            [entry.avg_words_per_utterance or 0.0 for entry in stats],
            color="#6acc65",
        )
        ax2.set_title("Avg words per utterance")
        fig.tight_layout()
        png = figure_path(out_path)
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written


def score_report(
    tables: Mapping[tuple, ScoreTable], out_path, figures: bool = True
) -> list:
    """Rater score summary: per-part means and their average, one row per
    (rater, language) group."""
    header = ("rater", "language", "n_sheets", "P", "CG", "C", "avg")
    parts = ("P", "CG", "C")
    rows = []
    for (rater, language), table in sorted(tables.items()):
        rows.append(
            (
                rater,
                language,
                table.n_sheets,
                *(_fmt(table.part_means.get(part), 2) for part in parts),
                _fmt(table.average, 2),
            )
        )
    written = [write_tsv(out_path, header, rows)]
    if figures and tables:
        fig, ax = plt.subplots(figsize=(max(6, 2 * len(tables)), 4))
        labels = [f"{rater}\n{language}" for rater, language in sorted(tables)]
        width = 0.2
        for offset, part in enumerate(parts + ("avg",)):
            values = []
            for key in sorted(tables):
                table = tables[key]
                value = (
                    table.average if part == "avg" else table.part_means.get(part)
                )
                values.append(value if value is not None else 0.0)
            positions = [i + offset * width for i in range(len(labels))]
            ax.bar(positions, values, width=width, label=part)
        ax.set_xticks([i + 1.5 * width for i in range(len(labels))])
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylim(0, 5)
        ax.set_ylabel("mean score (1-5)")
        ax.set_title("Scores by rater and language")
        ax.legend()
        fig.tight_layout()
        png = figure_path(out_path)
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written


def correlation_report(rows: Sequence[Mapping], out_path, figures: bool = True) -> list:
    """Human/judge agreement table: one row per (kind, criterion) with
    Pearson r, Spearman rho, Kendall tau-b (each with p), and Cohen kappa on
    raw plus grouped labels."""
    header = (
        "kind",
        "criterion",
        "n",
        "pearson_r",
        "pearson_p",
        "spearman_rho",
        "spearman_p",
        "kendall_tau",
        "kendall_p",
        "kappa",
        "kappa_grouped",
    )
    table_rows = [
        (
            row["kind"],
            row["criterion"],
            row["n"],
            _fmt(row["pearson_r"]),
            _fmt(row["pearson_p"]),
            _fmt(row["spearman_rho"]),
            _fmt(row["spearman_p"]),
            _fmt(row["kendall_tau"]),
            _fmt(row["kendall_p"]),
            _fmt(row["kappa"]),
            _fmt(row["kappa_grouped"]),
        )
        for row in rows
    ]
    written = [write_tsv(out_path, header, table_rows)]
    if figures and rows:
        fig, ax = plt.subplots(figsize=(8, max(3, 0.5 * len(rows))))
        labels = [f"{row['kind']}:{row['criterion']}" for row in rows]
        positions = range(len(rows))
        height = 0.25

        def clean(values):
            return [0.0 if (v is None or math.isnan(v)) else v for v in values]

        ax.barh(
            [p + height for p in positions],
            clean([row["pearson_r"] for row in rows]),
            height=height,
            label="pearson r",
        )
        ax.barh(
            list(positions),
            clean([row["spearman_rho"] for row in rows]),
            height=height,
            label="spearman rho",
        )
        ax.barh(
            [p - height for p in positions],
            clean([row["kendall_tau"] for row in rows]),
            height=height,
            label="kendall tau",
        )
        ax.set_yticks(list(positions))
        ax.set_yticklabels(labels, fontsize=8)
        ax.set_xlim(-1, 1)
        ax.axvline(0, color="black", linewidth=0.5)
        ax.set_title("Human vs judge rank agreement")
        ax.legend()
        fig.tight_layout()
        png = figure_path(out_path)
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written


def diversity_report(
    rows: Sequence[Mapping], out_path, figures: bool = True
) -> list:
    """Persona diversity table: mean pairwise similarity per language
    (lower means a more varied pool)."""
    header = ("language", "n_personas", "n_pairs", "mean_similarity")
    table_rows = [
        (
            row["language"],
            row["n_personas"],
            row["n_pairs"],
            _fmt(row["mean_similarity"]),
        )
        for row in rows
    ]
    written = [write_tsv(out_path, header, table_rows)]
    if figures and rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(
            [row["language"] for row in rows],
            [row["mean_similarity"] for row in rows],
            color="#d65f5f",
        )
        ax.set_ylabel("mean pairwise similarity")
        ax.set_ylim(0, 1)
        ax.set_title("Persona pool similarity (lower = more diverse)")
        fig.tight_layout()
        png = figure_path(out_path)
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written


def part_label(kind: str) -> str:
    return PART_BY_KIND[kind]


def manifest_summary(manifest: Optional[Mapping]) -> str:
    """One-line provenance string for report footers and logs."""
    if not manifest:
        return ""
    bits = []
    for key in ("command", "started_at", "seed", "model_id"):
        if key in manifest:
            bits.append(f"{key}={manifest[key]}")
    return " ".join(bits)
