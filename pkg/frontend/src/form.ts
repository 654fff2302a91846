/**
 * Form state for one assignment: two persona sheets, one shared-context
 * sheet, one dialogue sheet. Criteria arrive from the API at runtime, so
 * nothing about their wording lives in this package.
 */

import type { Criterion, CriteriaByKind, RatingPayload, ScoreMap, SheetKind } from "./api.js";

export interface SheetModel {
  kind: SheetKind;
  title: string;
  criteria: Criterion[];
  scores: ScoreMap;
}

export class RatingFormModel {
  readonly sheets: SheetModel[];

  constructor(criteria: CriteriaByKind) {
    this.sheets = [
      { kind: "persona", title: "Persona of speaker 1", criteria: criteria.persona, scores: {} },
      { kind: "persona", title: "Persona of speaker 2", criteria: criteria.persona, scores: {} },
      { kind: "common_ground", title: "Shared context", criteria: criteria.common_ground, scores: {} },
      { kind: "dialogue", title: "Dialogue", criteria: criteria.dialogue, scores: {} },
    ];
  }

  setScore(sheetIndex: number, key: string, score: number): void {
    const sheet = this.sheets[sheetIndex];
    if (sheet === undefined) throw new RangeError(`no sheet at index ${sheetIndex}`);
    if (!sheet.criteria.some((c) => c.key === key)) {
      throw new RangeError(`${sheet.kind} sheet has no criterion "${key}"`);
    }
    if (!Number.isInteger(score) || score < 1 || score > 5) {
      throw new RangeError(`score must be an integer in 1..5, got ${score}`);
    }
    sheet.scores[key] = score;
  }

  sheetComplete(sheetIndex: number): boolean {
    const sheet = this.sheets[sheetIndex];
    if (sheet === undefined) throw new RangeError(`no sheet at index ${sheetIndex}`);
    return sheet.criteria.every((c) => sheet.scores[c.key] !== undefined);
  }

  /** The submit button stays disabled until this turns true. */
  isComplete(): boolean {
    return this.sheets.every((_, i) => this.sheetComplete(i));
  }

  /** How many selections are still missing, for the progress hint. */
  missingCount(): number {
    let missing = 0;
    for (const sheet of this.sheets) {
      for (const criterion of sheet.criteria) {
        if (sheet.scores[criterion.key] === undefined) missing += 1;
      }
    }
    return missing;
  }

  toPayload(assignmentId: string): RatingPayload {
    if (!this.isComplete()) throw new Error("rating form is not complete");
    const [a, b, cg, dlg] = this.sheets;
    return {
      assignment_id: assignmentId,
      personas: [{ ...a!.scores }, { ...b!.scores }],
      common_ground: { ...cg!.scores },
      dialogue: { ...dlg!.scores },
    };
  }
}
