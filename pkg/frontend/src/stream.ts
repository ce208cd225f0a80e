/** Newline-delimited JSON event stream with a polling fallback.
 * The parser is incremental so a chunk boundary can split a line. */
import type { ServerEvent } from "./types.js";

export class NdjsonParser<T = unknown> {
  private buffer = "";

  /** Feed one chunk of text; returns the complete objects it finished. */
  push(chunk: string): T[] {
    this.buffer += chunk;
    const out: T[] = [];
    let index;
    while ((index = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, index).trim();
      this.buffer = this.buffer.slice(index + 1);
      if (line) {
        out.push(JSON.parse(line) as T);
      }
    }
    return out;
  }
}

export interface StreamHandle {
  stop(): void;
}

export interface StreamOptions {
  fetchImpl?: typeof fetch;
  /** Polling period used when streaming is unavailable. */
  pollMs?: number;
  headers?: Record<string, string>;
  onFallback?: () => void;
}

/** Subscribe to /api/events from `since`; falls back to polling the same
 * endpoint in bounded reads if streaming fetch is unavailable or dies. */
export function subscribeEvents(
  baseUrl: string,
  since: number,
  onEvent: (event: ServerEvent) => void,
  options: StreamOptions = {},
): StreamHandle {
  const fetchImpl = options.fetchImpl ?? fetch;
  const pollMs = options.pollMs ?? 2000;
  let stopped = false;
  let cursor = since;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const deliver = (events: ServerEvent[]) => {
    for (const event of events) {
      if (event.seq > cursor) {
        cursor = event.seq;
        onEvent(event);
      }
    }
  };

  const startStreaming = async () => {
    const response = await fetchImpl(
      `${baseUrl}/api/events?since=${cursor}`,
      { headers: options.headers },
    );
    if (!response.ok || !response.body) {
      throw new Error(`stream unavailable: ${response.status}`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new NdjsonParser<ServerEvent>();
    for (;;) {
      const { done, value } = await reader.read();
      if (stopped) {
        await reader.cancel().catch(() => undefined);
        return;
      }
      if (done) {
        throw new Error("stream closed");
      }
      deliver(parser.push(decoder.decode(value, { stream: true })));
    }
  };

  const poll = async () => {
    if (stopped) return;
    try {
      // bounded read: take whatever the stream has buffered right now
      const response = await fetchImpl(
        `${baseUrl}/api/events?since=${cursor}`,
        { headers: options.headers },
      );
      if (response.ok && response.body) {
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const parser = new NdjsonParser<ServerEvent>();
        const { done, value } = await reader.read();
        if (!done && value) {
          deliver(parser.push(decoder.decode(value, { stream: true })));
        }
        await reader.cancel().catch(() => undefined);
      }
    } catch {
      // server momentarily unreachable; keep polling
    }
    if (!stopped) {
      timer = setTimeout(poll, pollMs);
    }
  };

  startStreaming().catch(() => {
    if (stopped) return;
    options.onFallback?.();
    void poll();
  });

  return {
    stop() {
      stopped = true;
      if (timer !== null) clearTimeout(timer);
    },
  };
}
