/**
 * Typed client for the dialogue rating service. Every interaction with the
 * backend goes through this HTTP API; the UI never reads stored state
 * directly.
 */

export interface PersonaProfile {
  sentence: string;
  taxonomy: string;
}

export interface Persona {
  id: string;
  profiles: PersonaProfile[];
}

export interface CommonGround {
  id: string;
  text: string;
  speech_event: string;
}

/** One blinded bundle to rate. The generator model never appears here. */
export interface Assignment {
  assignment_id: string;
  item_id: string;
  language: string;
  rtl: boolean;
  personas: Persona[];
  common_ground: CommonGround;
  dialogue: [number, string][];
}

/** One rating criterion as served by the API. Anchor labels are keyed "1".."5". */
export interface Criterion {
  key: string;
  name: string;
  question: string;
  anchors: Record<string, string>;
}

export type SheetKind = "persona" | "common_ground" | "dialogue";

export type CriteriaByKind = Record<SheetKind, Criterion[]>;

export type ScoreMap = Record<string, number>;

export interface RatingPayload {
  assignment_id: string;
  personas: [ScoreMap, ScoreMap];
  common_ground: ScoreMap;
  dialogue: ScoreMap;
}

export interface Registration {
  evaluator_id: string;
  token: string;
}

export interface Demographics {
  age_bucket: string;
  gender: string;
  education: string;
  employment: string;
  channel: string;
}

/** Backend failure carrying the server's own words, unchanged, for display. */
export class ApiError extends Error {
  status: number;
  detail: string;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

/** The server reports errors as {"detail": ...}; keep that text verbatim. */
async function readDetail(response: Response): Promise<string> {
  const raw = await response.text();
  try {
    const parsed: unknown = JSON.parse(raw);
    if (parsed !== null && typeof parsed === "object" && "detail" in parsed) {
      const detail = (parsed as { detail: unknown }).detail;
      if (typeof detail === "string") return detail;
      return JSON.stringify(detail);
    }
  } catch {
    // not JSON; fall through to the raw body
  }
  return raw || `HTTP ${response.status}`;
}

/** What the session layer needs from the backend; tests substitute fakes. */
export interface ReviewClient {
  register(language: string, demographics: Demographics): Promise<Registration>;
  nextAssignment(): Promise<Assignment | null>;
  submitRating(payload: RatingPayload): Promise<{ ok: boolean; sheets_stored: number }>;
  criteria(): Promise<CriteriaByKind>;
  guidelines(): Promise<string>;
  exportRatings(language?: string): Promise<string>;
}

type FetchLike = typeof fetch;

export class ReviewApi implements ReviewClient {
  private baseUrl: string;
  private fetchFn: FetchLike;
  token: string | null = null;

  constructor(baseUrl = "", fetchFn: FetchLike = fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const headers: Record<string, string> = {};
    if (init.body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token !== null) headers["Authorization"] = `Bearer ${this.token}`;
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, { ...init, headers });
    } catch (err) {
      throw new ApiError(0, err instanceof Error ? err.message : String(err));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await readDetail(response));
    }
    return response;
  }

  /** Demographic survey submission; stores the session token on success. */
  async register(language: string, demographics: Demographics): Promise<Registration> {
    const response = await this.request("/api/evaluators", {
      method: "POST",
      body: JSON.stringify({ language, demographics }),
    });
    const registration = (await response.json()) as Registration;
    this.token = registration.token;
    return registration;
  }

  /** null means the evaluator has rated everything in their language. */
  async nextAssignment(): Promise<Assignment | null> {
    const response = await this.request("/api/assignments/next");
    const body = (await response.json()) as { assignment: Assignment | null };
    return body.assignment;
  }

  async submitRating(payload: RatingPayload): Promise<{ ok: boolean; sheets_stored: number }> {
    const response = await this.request("/api/ratings", {
      method: "POST",
      body: JSON.stringify(payload),
    });
    return (await response.json()) as { ok: boolean; sheets_stored: number };
  }

  async criteria(): Promise<CriteriaByKind> {
    const response = await this.request("/api/criteria");
    return (await response.json()) as CriteriaByKind;
  }

  async guidelines(): Promise<string> {
    const response = await this.request("/api/guidelines");
    const body = (await response.json()) as { markdown: string };
    return body.markdown;
  }

  async exportRatings(language?: string): Promise<string> {
    const query = language ? `?language=${encodeURIComponent(language)}` : "";
    const response = await this.request("/api/export" + query);
    return response.text();
  }
}
