/**
 * Invented criteria and bundles for the node-side tests. Real criterion
 * wording only ever enters the app through the API, so the fixtures use
 * made-up text on purpose.
 */

import { ApiError } from "../src/api.js";
import type {
  Assignment,
  CriteriaByKind,
  Criterion,
  Demographics,
  Registration,
  RatingPayload,
  ReviewClient,
} from "../src/api.js";

function criterion(key: string): Criterion {
  return {
    key,
    name: `name of ${key}`,
    question: `How is the ${key}?`,
    anchors: {
      "1": `${key} anchor one`,
      "2": `${key} anchor two`,
      "3": `${key} anchor three`,
      "4": `${key} anchor four`,
      "5": `${key} anchor five`,
    },
  };
}

export const CRITERIA: CriteriaByKind = {
  persona: [criterion("clarity"), criterion("tone")],
  common_ground: [criterion("grounding")],
  dialogue: [criterion("flow"), criterion("warmth"), criterion("closure")],
};

export function makeAssignment(overrides: Partial<Assignment> = {}): Assignment {
  return {
    assignment_id: "as-000001",
    item_id: "item-1",
    language: "fr",
    rtl: false,
    personas: [
      {
        id: "p-1",
        profiles: [{ sentence: "Collectionne les cartes postales.", taxonomy: "hobby" }],
      },
      {
        id: "p-2",
        profiles: [{ sentence: "Travaille de nuit.", taxonomy: "work" }],
      },
    ],
    common_ground: {
      id: "cg-1",
      text: "Ils attendent le même bus sous la pluie.",
      speech_event: "gossip | strangers",
    },
    dialogue: [
      [1, "Quel temps…"],
      [2, "On est d'accord."],
      [1, "Vous attendez depuis longtemps ?"],
      [2, "Dix minutes au moins."],
    ],
    ...overrides,
  };
}

/** Every criterion of every sheet filled with the given score. */
export function fillForm(
  form: { sheets: { criteria: Criterion[] }[]; setScore(i: number, key: string, score: number): void },
  score = 3,
): void {
  form.sheets.forEach((sheet, index) => {
    for (const c of sheet.criteria) form.setScore(index, c.key, score);
  });
}

export const DEMOGRAPHICS: Demographics = {
  age_bucket: "30-49",
  gender: "Other",
  education: "Grad",
  employment: "Student",
  channel: "Referral",
};

/** In-memory backend double: hands out queued assignments, records calls. */
export class FakeApi implements ReviewClient {
  calls: string[] = [];
  queue: (Assignment | null)[] = [makeAssignment()];
  submitted: RatingPayload[] = [];
  failRegister: ApiError | null = null;
  failSubmit: ApiError | null = null;

  async register(language: string, _demographics: Demographics): Promise<Registration> {
    this.calls.push(`register:${language}`);
    if (this.failRegister !== null) {
      const err = this.failRegister;
      this.failRegister = null;
      throw err;
    }
    return { evaluator_id: "ev-1", token: "tok" };
  }

  async nextAssignment(): Promise<Assignment | null> {
    this.calls.push("next");
    return this.queue.shift() ?? null;
  }

  async submitRating(payload: RatingPayload): Promise<{ ok: boolean; sheets_stored: number }> {
    this.calls.push("submit");
    if (this.failSubmit !== null) {
      const err = this.failSubmit;
      this.failSubmit = null;
      throw err;
    }
    this.submitted.push(payload);
    return { ok: true, sheets_stored: 4 };
  }

  async criteria(): Promise<CriteriaByKind> {
    this.calls.push("criteria");
    return CRITERIA;
  }

  async guidelines(): Promise<string> {
    this.calls.push("guidelines");
    return "# Be fair\n\n- Read everything first.";
  }

  async exportRatings(): Promise<string> {
    return "";
  }
}
