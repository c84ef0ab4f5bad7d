/**
 * Session orchestration: fetch trials in order, run each through the
 * timed phase machine, post the response, show break screens at the
 * schedule's break points, and finish on a completion screen that
 * never shows a score. A session is resumable: the session id is the
 * only state, and the server reports the current trial.
 */

import { Client, TrialView } from './api.js';
import { preloadTrial } from './preload.js';
import { TrialRunner, TrialResult } from './trial.js';

export interface SessionUi {
  renderTrial(trial: TrialView, images: HTMLImageElement[]): void;
  showImages(): void;
  hideImages(): void;
  showBreak(continueSignal: Promise<void>): Promise<void>;
  showComplete(): void;
  showError(message: string): void;
  bindKeys(handler: (key: string) => void): () => void;
}

export interface SessionDeps {
  client: Client;
  ui: SessionUi;
  now: () => number;
  schedule: (fn: () => void, ms: number) => unknown;
  doc: Document;
  waitForBreakEnd: () => Promise<void>;
}

export async function runSession(
  sessionId: string,
  deps: SessionDeps,
): Promise<void> {
  const { client, ui } = deps;
  const status = await client.status(sessionId);
  for (let k = status.current_trial; k < status.trial_count; k++) {
    let trial: TrialView;
    let images;
    try {
      trial = await client.trial(sessionId, k);
      images = await preloadTrial(trial.images, deps.doc);
    } catch (err) {
      ui.showError(String(err));
      return;
    }
    ui.renderTrial(
      trial,
      images.map((p) => p.element),
    );
    const runner = new TrialRunner(
      { showImages: () => ui.showImages(), hideImages: () => ui.hideImages() },
      deps.now,
      deps.schedule,
    );
    const unbind = ui.bindKeys((key) => runner.handleKey(key));
    let result: TrialResult;
    try {
      result = await runner.run();
    } finally {
      unbind();
    }
    await client.respond(
      sessionId,
      k,
      result.key,
      result.elapsedMs ?? RESPONSE_TIMEOUT_SENTINEL_MS,
      result.advancedMs,
    );
    if (trial.is_break_after) {
      await ui.showBreak(deps.waitForBreakEnd());
    }
  }
  await client.finalize(sessionId);
  ui.showComplete();
}

/** Reported elapsed time for a timed-out trial: just past the window,
 * so the server records it as invalid with no key. */
export const RESPONSE_TIMEOUT_SENTINEL_MS = 2001;
