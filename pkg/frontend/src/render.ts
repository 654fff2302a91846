/**
 * DOM rendering for each stage. The whole view is rebuilt on every state
 * change; the markup is small enough that diffing would be overkill.
 *
 * Criterion names, questions and anchor labels are rendered exactly as the
 * API serves them; none of that text is hardcoded here.
 */

import type { Assignment, Criterion } from "./api.js";
import type { SheetModel } from "./form.js";
import type { ReviewSession, Stage } from "./session.js";
import { SURVEY_FIELDS } from "./vocab.js";

export function renderApp(root: HTMLElement, session: ReviewSession): void {
  root.textContent = "";
  const stage = session.stage;
  switch (stage.name) {
    case "survey":
      root.appendChild(surveyView(session, stage.problems));
      break;
    case "guidelines":
      root.appendChild(guidelinesView(session, stage.markdown));
      break;
    case "rating":
      root.appendChild(ratingView(session, stage));
      break;
    case "drained":
      root.appendChild(drainedView());
      break;
    case "error":
      root.appendChild(errorView(session, stage.detail));
      break;
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

// -- survey ----------------------------------------------------------------

function surveyView(session: ReviewSession, problems: string[]): HTMLElement {
  const view = el("section", "survey-view");
  view.appendChild(el("h1", undefined, "Before you start"));
  view.appendChild(
    el(
      "p",
      "survey-intro",
      "A few questions about you, then the rating guidelines. Answers are stored pseudonymously.",
    ),
  );

  const form = el("form", "survey-form");
  form.id = "survey-form";

  const langRow = el("label", "field");
  langRow.appendChild(el("span", "field-label", "Language you will rate"));
  const langInput = el("input");
  langInput.name = "language";
  langInput.placeholder = "language tag, e.g. fr";
  langInput.autocomplete = "off";
  langRow.appendChild(langInput);
  form.appendChild(langRow);

  for (const field of SURVEY_FIELDS) {
    const row = el("label", "field");
    row.appendChild(el("span", "field-label", field.label));
    const select = el("select");
    select.name = field.key;
    const blank = el("option", undefined, "choose one");
    blank.value = "";
    select.appendChild(blank);
    for (const option of field.options) {
      const node = el("option", undefined, option);
      node.value = option;
      select.appendChild(node);
    }
    row.appendChild(select);
    form.appendChild(row);
  }

  if (problems.length > 0) {
    const list = el("ul", "problems");
    for (const problem of problems) list.appendChild(el("li", undefined, problem));
    form.appendChild(list);
  }

  const submit = el("button", "primary", "Continue");
  submit.type = "submit";
  form.appendChild(submit);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const answers: Record<string, string> = {};
    for (const field of SURVEY_FIELDS) {
      answers[field.key] = String(data.get(field.key) ?? "");
    }
    void session.register(String(data.get("language") ?? ""), answers);
  });

  view.appendChild(form);
  return view;
}

// -- guidelines --------------------------------------------------------------

function guidelinesView(session: ReviewSession, markdown: string): HTMLElement {
  const view = el("section", "guidelines-view");
  const body = el("article", "guidelines-body");
  body.innerHTML = markdownToHtml(markdown);
  view.appendChild(body);

  const start = el("button", "primary", "Start rating");
  start.id = "start-rating";
  start.addEventListener("click", () => void session.begin());
  view.appendChild(start);
  return view;
}

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;");
}

/** Headings, bullet lists and paragraphs are all the guidelines use. */
export function markdownToHtml(markdown: string): string {
  const out: string[] = [];
  let list: string[] | null = null;
  const flushList = () => {
    if (list !== null) {
      out.push("<ul>" + list.map((item) => `<li>${item}</li>`).join("") + "</ul>");
      list = null;
    }
  };
  for (const rawLine of markdown.split("\n")) {
    const line = rawLine.trim();
    const heading = /^(#{1,4})\s+(.*)$/.exec(line);
    if (heading !== null) {
      flushList();
      const level = heading[1]!.length;
      out.push(`<h${level}>${escapeHtml(heading[2]!)}</h${level}>`);
    } else if (line.startsWith("- ") || line.startsWith("* ")) {
      (list ??= []).push(escapeHtml(line.slice(2)));
    } else if (line === "") {
      flushList();
    } else {
      flushList();
      out.push(`<p>${escapeHtml(line)}</p>`);
    }
  }
  flushList();
  return out.join("\n");
}

// -- rating ------------------------------------------------------------------

type RatingStage = Extract<Stage, { name: "rating" }>;

function ratingView(session: ReviewSession, stage: RatingStage): HTMLElement {
  const view = el("section", "rating-view");
  view.appendChild(ratingHeader(session, stage));
  view.appendChild(assignmentView(stage.assignment, stage.rtl));
  view.appendChild(sheetsView(session, stage));
  return view;
}

function ratingHeader(session: ReviewSession, stage: RatingStage): HTMLElement {
  const header = el("header", "rating-header");
  header.appendChild(el("h1", undefined, "Rate this item"));
  const meta = el("p", "item-meta");
  meta.textContent = `Item ${stage.assignment.item_id} · language ${stage.assignment.language}`;
  header.appendChild(meta);

  const toggle = el("label", "rtl-toggle");
  const box = el("input");
  box.type = "checkbox";
  box.id = "rtl-toggle";
  box.checked = stage.rtl;
  box.addEventListener("change", () => session.setRtl(box.checked));
  toggle.appendChild(box);
  toggle.appendChild(el("span", undefined, "Right-to-left text"));
  header.appendChild(toggle);
  return header;
}

/** Personas, shared context and the dialogue with speaker turns. */
export function assignmentView(assignment: Assignment, rtl: boolean): HTMLElement {
  const content = el("div", "assignment");
  content.id = "assignment-content";
  content.dir = rtl ? "rtl" : "ltr";

  const personas = el("div", "personas");
  assignment.personas.forEach((persona, index) => {
    const card = el("div", "persona-card");
    card.appendChild(el("h2", undefined, `Speaker ${index + 1}`));
    const list = el("ul");
    for (const profile of persona.profiles) {
      const item = el("li", "profile");
      item.appendChild(el("span", "profile-sentence", profile.sentence));
      item.appendChild(el("span", "taxonomy-tag", profile.taxonomy));
      list.appendChild(item);
    }
    card.appendChild(list);
    personas.appendChild(card);
  });
  content.appendChild(personas);

  const context = el("div", "common-ground");
  context.appendChild(el("h2", undefined, "Shared context"));
  context.appendChild(el("p", "speech-event", assignment.common_ground.speech_event));
  context.appendChild(el("p", "context-text", assignment.common_ground.text));
  content.appendChild(context);

  const dialogue = el("div", "dialogue");
  dialogue.appendChild(el("h2", undefined, "Dialogue"));
  const turns = el("ol", "turns");
  for (const [speaker, text] of assignment.dialogue) {
    const turn = el("li", `turn speaker-${speaker}`);
    turn.appendChild(el("span", "speaker-label", `Speaker ${speaker}`));
    turn.appendChild(el("span", "turn-text", text));
    turns.appendChild(turn);
  }
  dialogue.appendChild(turns);
  content.appendChild(dialogue);
  return content;
}

function sheetsView(session: ReviewSession, stage: RatingStage): HTMLElement {
  const wrap = el("div", "sheets");
  stage.form.sheets.forEach((sheet, sheetIndex) => {
    wrap.appendChild(sheetView(session, sheet, sheetIndex));
  });

  if (stage.submitError !== null) {
    wrap.appendChild(errorBanner(stage.submitError, "Retry submit", () => void session.submit()));
  }

  const footer = el("div", "submit-row");
  const missing = stage.form.missingCount();
  if (missing > 0) {
    footer.appendChild(el("span", "missing-hint", `${missing} selections left`));
  }
  const submit = el("button", "primary", stage.busy ? "Submitting…" : "Submit ratings");
  submit.id = "submit-ratings";
  submit.disabled = !stage.form.isComplete() || stage.busy;
  submit.addEventListener("click", () => void session.submit());
  footer.appendChild(submit);
  wrap.appendChild(footer);
  return wrap;
}

function sheetView(session: ReviewSession, sheet: SheetModel, sheetIndex: number): HTMLElement {
  const section = el("fieldset", "sheet");
  section.appendChild(el("legend", undefined, sheet.title));
  for (const criterion of sheet.criteria) {
    section.appendChild(criterionView(session, sheet, sheetIndex, criterion));
  }
  return section;
}

function criterionView(
  session: ReviewSession,
  sheet: SheetModel,
  sheetIndex: number,
  criterion: Criterion,
): HTMLElement {
  const block = el("div", "criterion");
  block.dataset["criterion"] = criterion.key;
  block.appendChild(el("h3", undefined, criterion.name));
  block.appendChild(el("p", "question", criterion.question));

  const group = el("div", "anchors");
  const groupName = `s${sheetIndex}-${criterion.key}`;
  for (let score = 1; score <= 5; score++) {
    const label = el("label", "anchor");
    const radio = el("input");
    radio.type = "radio";
    radio.name = groupName;
    radio.value = String(score);
    radio.checked = sheet.scores[criterion.key] === score;
    radio.addEventListener("change", () => session.setScore(sheetIndex, criterion.key, score));
    label.appendChild(radio);
    label.appendChild(el("span", "anchor-score", String(score)));
    label.appendChild(el("span", "anchor-label", criterion.anchors[String(score)] ?? ""));
    group.appendChild(label);
  }
  block.appendChild(group);
  return block;
}

// -- terminal stages ---------------------------------------------------------

function drainedView(): HTMLElement {
  const view = el("section", "drained-view");
  view.appendChild(el("h1", undefined, "All done"));
  view.appendChild(
    el("p", undefined, "There are no more items to rate in your language. Thank you!"),
  );
  return view;
}

function errorView(session: ReviewSession, detail: string): HTMLElement {
  const view = el("section", "error-view");
  view.appendChild(errorBanner(detail, "Retry", () => void session.retry()));
  return view;
}

/** The backend's error text is shown unchanged next to a retry button. */
function errorBanner(detail: string, buttonText: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "error-banner");
  banner.setAttribute("role", "alert");
  banner.appendChild(el("span", "error-detail", detail));
  const retry = el("button", "retry", buttonText);
  retry.addEventListener("click", onRetry);
  banner.appendChild(retry);
  return banner;
}
