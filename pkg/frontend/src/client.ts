/**
 * Gateway client: one state poll plus one NDJSON event stream, with
 * reconnect and backoff. All reads funnel into the handlers; POST errors
 * are surfaced verbatim so the view can render exactly what the gateway
 * said.
 */

import type { Connection, Snapshot, StreamRecord } from "./model.js";
import { LineSplitter, parseRecord } from "./ndjson.js";

export interface ClientHandlers {
  onSnapshot(snap: Snapshot): void;
  onRecord(record: StreamRecord): void;
  onConnection(status: Connection): void;
  onError(text: string): void;
}

export interface ClientOptions {
  fetchImpl?: typeof fetch;
  sleep?: (ms: number) => Promise<void>;
  pollMs?: number;
  backoffBaseMs?: number;
  backoffCapMs?: number;
}

// snapshot facts (tick, map, accepting flag) must land within 500 ms of
// the truth changing, so the poll runs at half that
export const DEFAULT_POLL_MS = 250;

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

export class Backoff {
  private attempt = 0;

  constructor(
    private readonly base: number = 250,
    private readonly cap: number = 4000,
  ) {}

  next(): number {
    const delay = Math.min(this.base * 2 ** this.attempt, this.cap);
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}

export class GatewayClient {
  private readonly fetchImpl: typeof fetch;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly pollMs: number;
  private readonly backoff: Backoff;
  private stopped = false;
  private connected = false;
  private streamAbort: AbortController | null = null;
  private loops: Promise<void>[] = [];
  private stopSignal!: Promise<void>;
  private signalStop!: () => void;

  constructor(
    private readonly base: string,
    private readonly handlers: ClientHandlers,
    options: ClientOptions = {},
  ) {
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
    this.sleep = options.sleep ?? defaultSleep;
    this.pollMs = options.pollMs ?? DEFAULT_POLL_MS;
    this.backoff = new Backoff(options.backoffBaseMs, options.backoffCapMs);
  }

  start(): void {
    this.stopped = false;
    this.stopSignal = new Promise((resolve) => {
      this.signalStop = resolve;
    });
    this.loops = [this.runLoop(), this.pollLoop()];
  }

  async stop(): Promise<void> {
    this.stopped = true;
    this.signalStop?.();
    this.streamAbort?.abort();
    await Promise.allSettled(this.loops);
  }

  /** Sleep that wakes early on stop, so shutdown never waits out a delay. */
  private wait(ms: number): Promise<void> {
    return Promise.race([this.sleep(ms), this.stopSignal]);
  }

  /** Connect, resync from a snapshot, then drain the stream; on any drop,
   * back off and do it all again. The snapshot-first order is what makes a
   * reconnect a resync. */
  private async runLoop(): Promise<void> {
    while (!this.stopped) {
      try {
        const snap = await this.getState();
        this.handlers.onSnapshot(snap);
        this.connected = true;
        this.backoff.reset();
        this.handlers.onConnection("connected");
        await this.consumeStream();
      } catch {
        // fall through to retry
      }
      this.connected = false;
      if (this.stopped) {
        return;
      }
      this.handlers.onConnection("retrying");
      await this.wait(this.backoff.next());
    }
  }

  private async pollLoop(): Promise<void> {
    while (!this.stopped) {
      await this.wait(this.pollMs);
      if (this.stopped || !this.connected) {
        continue;
      }
      try {
        this.handlers.onSnapshot(await this.getState());
      } catch {
        // the run loop owns reconnecting
      }
    }
  }

  private async getState(): Promise<Snapshot> {
    const res = await this.fetchImpl(`${this.base}/api/state`);
    if (!res.ok) {
      throw new Error(`state poll failed: ${res.status}`);
    }
    return (await res.json()) as Snapshot;
  }

  private async consumeStream(): Promise<void> {
    this.streamAbort = new AbortController();
    const res = await this.fetchImpl(`${this.base}/api/events`, {
      signal: this.streamAbort.signal,
    });
    if (!res.ok || res.body === null) {
      throw new Error(`event stream failed: ${res.status}`);
    }
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    const splitter = new LineSplitter();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        return; // server closed (e.g. scenario reload); reconnect resyncs
      }
      for (const line of splitter.push(decoder.decode(value, { stream: true }))) {
        this.handlers.onRecord(parseRecord(line));
      }
    }
  }

  private async post(path: string, body: unknown): Promise<boolean> {
    let res: Response;
    try {
      res = await this.fetchImpl(`${this.base}${path}`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      this.handlers.onError(String(err));
      return false;
    }
    if (!res.ok) {
      this.handlers.onError(await res.text());
      return false;
    }
    return true;
  }

  sendUtterance(text: string): Promise<boolean> {
    return this.post("/api/utterance", { text });
  }

  sendTap(): Promise<boolean> {
    return this.post("/api/event/tap", undefined);
  }

  loadScenario(path: string): Promise<boolean> {
    return this.post("/api/scenario/load", { path });
  }
}
