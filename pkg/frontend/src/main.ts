/** Entry point: create or resume a session, then run it. The session
 * id persists in localStorage so a refresh resumes mid-session. */

import { Client } from './api.js';
import { runSession } from './session.js';
import { buildUi } from './ui.js';

const STORAGE_KEY = 'structbench-session-id';
const N_STANDARD = 100;

async function start(): Promise<void> {
  const root = document.getElementById('app')!;
  const client = new Client('');
  const ui = buildUi(root, document);

  let sessionId = localStorage.getItem(STORAGE_KEY);
  if (sessionId) {
    try {
      const status = await client.status(sessionId);
      if (status.complete || status.finalized) sessionId = null;
    } catch {
      sessionId = null;
    }
  }
  if (!sessionId) {
    const created = await client.createSession(
      N_STANDARD,
      Math.floor(Math.random() * 2 ** 31),
    );
    sessionId = created.session_id;
    localStorage.setItem(STORAGE_KEY, sessionId);
  }

  // fullscreen stabilizes retinal size as far as a browser allows
  document.body.addEventListener(
    'click',
    () => document.documentElement.requestFullscreen?.().catch(() => {}),
    { once: true },
  );

  const waitForBreakEnd = () =>
    new Promise<void>((resolve) => {
      const listener = (ev: KeyboardEvent) => {
        if (ev.key === ' ') {
          document.removeEventListener('keydown', listener);
          resolve();
        }
      };
      document.addEventListener('keydown', listener);
    });

  await runSession(sessionId, {
    client,
    ui,
    now: () => performance.now(),
    schedule: (fn, ms) => setTimeout(fn, ms),
    doc: document,
    waitForBreakEnd,
  });
  localStorage.removeItem(STORAGE_KEY);
}

start().catch((err) => {
  const root = document.getElementById('app');
  if (root) root.textContent = `Failed to start: ${err}`;
});
