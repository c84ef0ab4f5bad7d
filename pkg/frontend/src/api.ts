/** Typed client for the session server's JSON API. */

export interface SessionCreated {
  session_id: string;
  trial_count: number;
  break_after: number[];
  schedule_hash: string;
}

export interface SessionStatus {
  session_id: string;
  current_trial: number;
  trial_count: number;
  complete: boolean;
  finalized: boolean;
}

export interface TrialView {
  index: number;
  images: string[];
  is_break_after: boolean;
}

export interface ResponseAck {
  ack: boolean;
  next_trial: number | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function toJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    const body = await res.text();
    throw new ApiError(res.status, `${res.status}: ${body}`);
  }
  return (await res.json()) as T;
}

export class Client {
  constructor(private base: string, private fetchFn: typeof fetch = fetch) {}

  createSession(nStandard: number, seed: number): Promise<SessionCreated> {
    return this.fetchFn(`${this.base}/session`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ n_standard: nStandard, seed }),
    }).then((r) => toJson<SessionCreated>(r));
  }

  status(sessionId: string): Promise<SessionStatus> {
    return this.fetchFn(`${this.base}/session/${sessionId}`).then((r) =>
      toJson<SessionStatus>(r),
    );
  }

  trial(sessionId: string, k: number): Promise<TrialView> {
    return this.fetchFn(`${this.base}/session/${sessionId}/trial/${k}`).then(
      (r) => toJson<TrialView>(r),
    );
  }

  respond(
    sessionId: string,
    k: number,
    key: number | null,
    elapsedMs: number,
    advancedMs: number | null,
  ): Promise<ResponseAck> {
    return this.fetchFn(
      `${this.base}/session/${sessionId}/trial/${k}/response`,
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({
          key,
          elapsed_ms: elapsedMs,
          advanced_ms: advancedMs,
        }),
      },
    ).then((r) => toJson<ResponseAck>(r));
  }

  finalize(sessionId: string): Promise<void> {
    return this.fetchFn(`${this.base}/session/${sessionId}/finalize`, {
      method: 'POST',
    }).then((r) => toJson(r)) as Promise<void>;
  }
}
