/**
 * Single-page app wiring: one session, re-rendered into #app on every state
 * change.
 */

import { ReviewApi } from "./api.js";
import type { ReviewClient } from "./api.js";
import { renderApp } from "./render.js";
import { ReviewSession } from "./session.js";

/** Same origin by default; ?api=<url> points at a separately served backend. */
export function resolveBaseUrl(location: Location): string {
  return new URLSearchParams(location.search).get("api") ?? "";
}

export function mountApp(root: HTMLElement, api: ReviewClient): ReviewSession {
  const session = new ReviewSession(api);
  session.onChange(() => renderApp(root, session));
  renderApp(root, session);
  return session;
}

const root = typeof document === "undefined" ? null : document.querySelector<HTMLElement>("#app");
if (root !== null) {
  mountApp(root, new ReviewApi(resolveBaseUrl(window.location)));
}
