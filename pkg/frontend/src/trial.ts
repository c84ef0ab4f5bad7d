/**
 * Timed phase machine for one three-image trial.
 *
 * Phases: pre-delay (300 ms, blank) -> visible (800 ms, images shown)
 * -> post-mask (images swapped for a neutral gray placeholder) ->
 * locked (from onset + 2000 ms, input ignored).
 *
 * Keys '1'/'2'/'3' select; the first keypress inside the response
 * window wins. The spacebar advances the experiment after a selection
 * has been made or the window has locked. Elapsed time is measured
 * with the injected monotonic clock from stimulus onset, never from
 * wall-clock dates, so network and render delays cannot distort it.
 */

export const PRE_DELAY_MS = 300;
export const VISIBLE_MS = 800;
export const RESPONSE_WINDOW_MS = 2000;

export type Phase = 'pre-delay' | 'visible' | 'post-mask' | 'locked';

export interface TrialResult {
  key: number | null;
  elapsedMs: number | null;
  advancedMs: number;
}

export interface TrialHooks {
  showImages(): void;
  hideImages(): void; // swap to the gray placeholder
  onLock?(): void;
}

type Clock = () => number;
type Scheduler = (fn: () => void, ms: number) => unknown;

export class TrialRunner {
  phase: Phase = 'pre-delay';
  private onsetAt = 0;
  private selectedKey: number | null = null;
  private selectedAt: number | null = null;
  private resolveDone!: (result: TrialResult) => void;
  private done: Promise<TrialResult>;

  constructor(
    private hooks: TrialHooks,
    private now: Clock,
    private schedule: Scheduler,
  ) {
    this.done = new Promise((resolve) => {
      this.resolveDone = resolve;
    });
  }

  /** Start the phase timers; images must already be preloaded. */
  run(): Promise<TrialResult> {
    this.schedule(() => {
      this.phase = 'visible';
      this.onsetAt = this.now();
      this.hooks.showImages();
      this.schedule(() => {
        this.phase = 'post-mask';
        this.hooks.hideImages();
      }, VISIBLE_MS);
      this.schedule(() => {
        this.phase = 'locked';
        if (this.hooks.onLock) this.hooks.onLock();
      }, RESPONSE_WINDOW_MS);
    }, PRE_DELAY_MS);
    return this.done;
  }

  /** Feed a keyboard event; returns true when the event was consumed. */
  handleKey(key: string): boolean {
    if (key === ' ' || key === 'Spacebar') {
      // advancing requires a selection or a locked window
      if (this.selectedKey !== null || this.phase === 'locked') {
        this.resolveDone({
          key: this.selectedKey,
          elapsedMs: this.selectedAt,
          advancedMs: this.now() - this.onsetAt,
        });
        return true;
      }
      return false;
    }
    if (key !== '1' && key !== '2' && key !== '3') return false;
    if (this.phase === 'pre-delay' || this.phase === 'locked') return false;
    if (this.selectedKey !== null) return false; // first keypress wins
    const elapsed = this.now() - this.onsetAt;
    if (elapsed > RESPONSE_WINDOW_MS) return false;
    this.selectedKey = Number(key);
    this.selectedAt = elapsed;
    return true;
  }

  /** Resolve a timed-out trial without a spacebar press (kiosk flows). */
  forceAdvance(): void {
    this.resolveDone({
      key: this.selectedKey,
      elapsedMs: this.selectedAt,
      advancedMs: this.now() - this.onsetAt,
    });
  }
}
