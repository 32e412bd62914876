// RPC client and SSE subscription over plain fetch, usable in the browser
// and under node (vitest) alike.

import type { RequestFrame, ResponseFrame } from "./protocol.js";

export class RpcError extends Error {
  constructor(
    public code: number,
    message: string,
  ) {
    super(message);
    this.name = "RpcError";
  }
}

export class RpcClient {
  private nextId = 1;

  constructor(
    readonly baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  async call<T>(method: string, payload: unknown = {}): Promise<T> {
    const frame: RequestFrame = { id: this.nextId++, kind: "request", method, payload };
    const response = await this.fetchImpl(`${this.baseUrl}/rpc`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(frame),
    });
    const body = (await response.json()) as ResponseFrame;
    if (body.error) {
      throw new RpcError(body.error.code, body.error.message);
    }
    return body.payload as T;
  }
}

export type StreamState = "connecting" | "open" | "reconnecting" | "closed";

export interface EventStreamOptions {
  onEvent: (name: string, payload: unknown) => void;
  onState?: (state: StreamState) => void;
  retryMs?: number;
  fetchImpl?: typeof fetch;
}

/** SSE reader with automatic resubscribe on stream drop. */
export class EventStream {
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    readonly baseUrl: string,
    readonly runId: string,
    private options: EventStreamOptions,
  ) {}

  start(): void {
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    this.options.onState?.("closed");
  }

  private async loop(): Promise<void> {
    const fetchImpl = this.options.fetchImpl ?? fetch;
    const retryMs = this.options.retryMs ?? 1000;
    while (!this.stopped) {
      this.options.onState?.("connecting");
      this.controller = new AbortController();
      try {
        const response = await fetchImpl(
          `${this.baseUrl}/events?run_id=${encodeURIComponent(this.runId)}`,
          { signal: this.controller.signal },
        );
        if (!response.ok || !response.body) {
          throw new Error(`events stream failed: ${response.status}`);
        }
        this.options.onState?.("open");
        await this.pump(response.body);
      } catch {
        // fall through to reconnect
      }
      if (this.stopped) return;
      this.options.onState?.("reconnecting");
      await delay(retryMs);
    }
  }

  private async pump(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let boundary: number;
      while ((boundary = buffer.indexOf("\n\n")) >= 0) {
        const block = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        this.handleBlock(block);
      }
    }
  }

  private handleBlock(block: string): void {
    let name: string | null = null;
    const data: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith(":")) continue; // comment / keepalive
      if (line.startsWith("event: ")) name = line.slice(7);
      else if (line.startsWith("data: ")) data.push(line.slice(6));
    }
    if (name === null || data.length === 0) return;
    try {
      this.options.onEvent(name, JSON.parse(data.join("\n")));
    } catch {
      // malformed event payloads are dropped, the stream stays up
    }
  }
}

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
