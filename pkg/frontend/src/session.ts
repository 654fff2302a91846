/**
 * Screen-by-screen session state. The demographic survey gates everything:
 * until registration succeeds there is no token and no assignment traffic.
 * The server stays the source of truth; after a submit the next bundle is
 * whatever it hands back, and one assignment is active at a time.
 */

import { ApiError } from "./api.js";
import type { Assignment, CriteriaByKind, Demographics, ReviewClient } from "./api.js";
import { RatingFormModel } from "./form.js";
import { validateDemographics } from "./vocab.js";

export type Stage =
  | { name: "survey"; problems: string[] }
  | { name: "guidelines"; markdown: string }
  | {
      name: "rating";
      assignment: Assignment;
      form: RatingFormModel;
      rtl: boolean;
      busy: boolean;
      submitError: string | null;
    }
  | { name: "drained" }
  | { name: "error"; detail: string };

export class ReviewSession {
  readonly api: ReviewClient;
  stage: Stage = { name: "survey", problems: [] };
  language = "";

  private criteriaByKind: CriteriaByKind | null = null;
  private listeners: ((stage: Stage) => void)[] = [];
  private lastAction: (() => Promise<void>) | null = null;

  constructor(api: ReviewClient) {
    this.api = api;
  }

  onChange(listener: (stage: Stage) => void): void {
    this.listeners.push(listener);
  }

  private setStage(stage: Stage): void {
    this.stage = stage;
    for (const listener of this.listeners) listener(stage);
  }

  /**
   * Survey submission. The client checks the closed vocabularies first; only
   * a clean form is sent to the server, which validates again.
   */
  async register(language: string, answers: Partial<Demographics>): Promise<void> {
    const problems = validateDemographics(answers);
    if (language.trim() === "") problems.unshift("Language tag is required");
    if (problems.length > 0) {
      this.setStage({ name: "survey", problems });
      return;
    }
    await this.guarded(async () => {
      await this.api.register(language.trim(), answers as Demographics);
      this.language = language.trim();
      const markdown = await this.api.guidelines();
      this.setStage({ name: "guidelines", markdown });
    });
  }

  /** Guidelines acknowledged: fetch criteria once, then the first bundle. */
  async begin(): Promise<void> {
    await this.guarded(async () => {
      if (this.criteriaByKind === null) {
        this.criteriaByKind = await this.api.criteria();
      }
      await this.advance();
    });
  }

  private async advance(): Promise<void> {
    const assignment = await this.api.nextAssignment();
    if (assignment === null) {
      this.setStage({ name: "drained" });
      return;
    }
    if (this.criteriaByKind === null) throw new Error("criteria not loaded");
    this.setStage({
      name: "rating",
      assignment,
      form: new RatingFormModel(this.criteriaByKind),
      rtl: assignment.rtl,
      busy: false,
      submitError: null,
    });
  }

  setScore(sheetIndex: number, key: string, score: number): void {
    if (this.stage.name !== "rating") return;
    this.stage.form.setScore(sheetIndex, key, score);
    // Re-announce so the submit gate is re-evaluated.
    this.setStage(this.stage);
  }

  /** Manual direction override; items in right-to-left scripts start as RTL. */
  setRtl(rtl: boolean): void {
    if (this.stage.name !== "rating") return;
    this.setStage({ ...this.stage, rtl });
  }

  /** No-op until every criterion on every sheet has a selection. */
  async submit(): Promise<void> {
    if (this.stage.name !== "rating" || this.stage.busy || !this.stage.form.isComplete()) {
      return;
    }
    const stage = this.stage;
    this.setStage({ ...stage, busy: true, submitError: null });
    try {
      await this.api.submitRating(stage.form.toPayload(stage.assignment.assignment_id));
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // Already recorded server-side; trust the server and move on.
        await this.guarded(() => this.advance());
        return;
      }
      // Keep the filled form, show the server's words, allow a retry.
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.setStage({ ...stage, busy: false, submitError: detail });
      return;
    }
    await this.guarded(() => this.advance());
  }

  /** Re-run whatever request produced the error screen. */
  async retry(): Promise<void> {
    if (this.lastAction !== null) await this.lastAction();
  }

  private async guarded(action: () => Promise<void>): Promise<void> {
    this.lastAction = action;
    try {
      await action();
    } catch (err) {
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.setStage({ name: "error", detail });
    }
  }
}
