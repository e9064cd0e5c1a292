// Gateway client: one streaming /events connection with replay-on-reconnect,
// plus the question/control POST endpoints. Works in browsers and in node
// (both provide fetch + AbortController).

import { Action, GatewayEvent } from "./types.js";

export type Dispatch = (action: Action) => void;

export interface ClientOptions {
  backoffMs?: number;
  maxBackoffMs?: number;
}

export class GatewayClient {
  private lastSeq = -1;
  private stopped = false;
  private controller: AbortController | null = null;
  private backoffMs: number;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;
  private streamDone = false;
  private loopPromise: Promise<void> | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly sessionId: string,
    private readonly dispatch: Dispatch,
    options: ClientOptions = {},
  ) {
    this.initialBackoffMs = options.backoffMs ?? 200;
    this.maxBackoffMs = options.maxBackoffMs ?? 3000;
    this.backoffMs = this.initialBackoffMs;
  }

  start(): void {
    if (this.loopPromise === null) {
      this.loopPromise = this.loop();
    }
  }

  async stop(): Promise<void> {
    this.stopped = true;
    this.controller?.abort();
    await this.loopPromise?.catch(() => undefined);
  }

  /** Test hook: sever the current connection; the loop reconnects with replay. */
  forceDisconnect(): void {
    this.controller?.abort();
  }

  async waitUntilClosed(): Promise<void> {
    await this.loopPromise;
  }

  get lastAppliedSeq(): number {
    return this.lastSeq;
  }

  private async loop(): Promise<void> {
    this.dispatch({ type: "connection", state: "connecting" });
    while (!this.stopped && !this.streamDone) {
      try {
        await this.streamOnce();
        if (this.streamDone || this.stopped) break;
      } catch {
        // fall through to backoff
      }
      if (this.stopped || this.streamDone) break;
      this.dispatch({ type: "connection", state: "reconnecting" });
      await sleep(this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
    }
    this.dispatch({ type: "connection", state: "closed" });
  }

  private async streamOnce(): Promise<void> {
    this.controller = new AbortController();
    const since = this.lastSeq + 1;
    const resp = await fetch(
      `${this.baseUrl}/sessions/${this.sessionId}/events?since=${since}`,
      { signal: this.controller.signal },
    );
    if (!resp.ok || resp.body === null) {
      throw new Error(`events stream failed: ${resp.status}`);
    }
    this.dispatch({ type: "connection", state: "live" });
    this.backoffMs = this.initialBackoffMs;

    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffered = "";
    let sawEnd = false;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffered += decoder.decode(value, { stream: true });
      let newline = buffered.indexOf("\n");
      while (newline >= 0) {
        const line = buffered.slice(0, newline).trim();
        buffered = buffered.slice(newline + 1);
        newline = buffered.indexOf("\n");
        if (!line) continue;
        const event = JSON.parse(line) as GatewayEvent;
        if (event.seq > this.lastSeq + 1) {
          // Gap: resubscribe with replay; the reducer dedups overlap.
          this.controller.abort();
          return;
        }
        if (event.seq === this.lastSeq + 1) {
          this.lastSeq = event.seq;
          this.dispatch({ type: "event", event });
          if (event.kind === "SessionStatus" && event.payload["status"] === "ended") {
            sawEnd = true;
          }
        }
      }
    }
    // The gateway closes the stream only once the session has ended and the
    // full buffer is flushed; anything else is a disconnect worth retrying.
    if (sawEnd) {
      this.streamDone = true;
    } else {
      throw new Error("stream closed before session end");
    }
  }

  async submitQuestion(text: string): Promise<string | null> {
    const trimmed = text.trim();
    if (!trimmed) return null;
    this.dispatch({ type: "optimistic_question", text: trimmed });
    const resp = await fetch(`${this.baseUrl}/sessions/${this.sessionId}/questions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text: trimmed }),
    });
    if (resp.status === 409) {
      this.dispatch({ type: "error", message: "question already active" });
      return null;
    }
    if (!resp.ok) {
      this.dispatch({ type: "error", message: `question rejected (${resp.status})` });
      return null;
    }
    this.dispatch({ type: "error", message: null });
    const body = (await resp.json()) as { question_id: string };
    return body.question_id;
  }

  async control(action: "play" | "pause" | "stop"): Promise<boolean> {
    const resp = await fetch(`${this.baseUrl}/sessions/${this.sessionId}/control`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action }),
    });
    if (resp.status === 409) {
      const body = (await resp.json()) as { error?: string };
      this.dispatch({ type: "error", message: body.error ?? "illegal transition" });
      return false;
    }
    return resp.ok;
  }

  async fetchMetrics(): Promise<Record<string, unknown> | null> {
    const resp = await fetch(`${this.baseUrl}/sessions/${this.sessionId}/metrics`);
    if (!resp.ok) return null;
    return (await resp.json()) as Record<string, unknown>;
  }
}

export async function createSession(baseUrl: string, scenario: string): Promise<string> {
  const resp = await fetch(`${baseUrl}/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ scenario }),
  });
  if (!resp.ok) {
    throw new Error(`session create failed: ${resp.status}`);
  }
  const body = (await resp.json()) as { session_id: string };
  return body.session_id;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
