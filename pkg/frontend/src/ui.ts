/**
 * DOM layer: three fixed image slots, a gray placeholder at stimulus
 * offset, break and completion screens. Deliberately contains no
 * feedback element of any kind: nothing in the DOM ever reflects
 * whether a response was correct.
 */

import { TrialView } from './api.js';
import { SessionUi } from './session.js';

const GRAY = '#808080';

export function buildUi(root: HTMLElement, doc: Document): SessionUi {
  root.innerHTML = `
    <div id="stage">
      <div id="slots">
        <div class="slot" data-slot="1"></div>
        <div class="slot" data-slot="2"></div>
        <div class="slot" data-slot="3"></div>
      </div>
      <div id="prompt">Find the image that is different from the other two
        (1, 2 or 3), then press space.</div>
      <div id="overlay" hidden></div>
    </div>`;
  const slots = Array.from(root.querySelectorAll<HTMLElement>('.slot'));
  const overlay = root.querySelector<HTMLElement>('#overlay')!;
  let current: HTMLImageElement[] = [];

  function placeholders(): void {
    for (const slot of slots) {
      slot.innerHTML = '';
      const ph = doc.createElement('div');
      ph.className = 'placeholder';
      ph.style.backgroundColor = GRAY;
      slot.appendChild(ph);
    }
  }
  placeholders();

  return {
    renderTrial(_trial: TrialView, images: HTMLImageElement[]): void {
      current = images;
      placeholders();
      overlay.hidden = true;
    },
    showImages(): void {
      slots.forEach((slot, i) => {
        slot.innerHTML = '';
        slot.appendChild(current[i]);
      });
    },
    hideImages(): void {
      placeholders();
    },
    async showBreak(continueSignal: Promise<void>): Promise<void> {
      overlay.hidden = false;
      overlay.textContent =
        'Take a short break. Press space when you are ready to continue.';
      await continueSignal;
      overlay.hidden = true;
    },
    showComplete(): void {
      overlay.hidden = false;
      overlay.textContent = 'Session complete. Thank you!';
    },
    showError(message: string): void {
      overlay.hidden = false;
      overlay.textContent = `Something went wrong: ${message}. ` +
        'Reload the page to resume this session.';
    },
    bindKeys(handler: (key: string) => void): () => void {
      const listener = (ev: KeyboardEvent) => handler(ev.key);
      doc.addEventListener('keydown', listener);
      return () => doc.removeEventListener('keydown', listener);
    },
  };
}
