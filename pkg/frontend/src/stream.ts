// Cursor-resume logic for record streams. Kept free of EventSource so the
// resume rules are unit-testable; transports are injected.

import { StreamRecord } from "./types.js";

export interface TopicCursor {
  topic: string;
  next: number; // offset the consumer expects next
}

export type StreamResult =
  | { kind: "accept"; record: StreamRecord }
  | { kind: "duplicate" }
  | { kind: "gap"; expected: number; got: number };

// Decide what to do with an incoming record given the cursor. Duplicates
// (reconnect races) are dropped; a gap means the subscriber must refetch
// from `expected` before continuing.
export function advance(cursor: TopicCursor, record: StreamRecord): StreamResult {
  if (record.offset < cursor.next) {
    return { kind: "duplicate" };
  }
  if (record.offset > cursor.next) {
    return { kind: "gap", expected: cursor.next, got: record.offset };
  }
  cursor.next = record.offset + 1;
  return { kind: "accept", record };
}

export interface StreamTransport {
  // open a stream from `from`; calls onRecord per record, onEnd when the
  // server closes cleanly, onError on connection loss
  open(topic: string, from: number, onRecord: (r: StreamRecord) => void,
       onEnd: () => void, onError: () => void): () => void;
}

export class ResumingStream {
  private cursor: TopicCursor;
  private close: (() => void) | null = null;
  private stopped = false;

  constructor(private transport: StreamTransport, topic: string, from: number,
              private sink: (r: StreamRecord) => void,
              private onFinished?: () => void) {
    this.cursor = { topic, next: from };
    this.connect();
  }

  get next(): number {
    return this.cursor.next;
  }

  private connect(): void {
    if (this.stopped) return;
    this.close = this.transport.open(
      this.cursor.topic,
      this.cursor.next,
      (record) => {
        const result = advance(this.cursor, record);
        if (result.kind === "accept") this.sink(record);
        if (result.kind === "gap") {
          // reopen from the cursor: the server replays the missing range
          this.reconnect();
        }
      },
      () => { this.stopped = true; this.onFinished?.(); },
      () => this.reconnect(),
    );
  }

  private reconnect(): void {
    this.close?.();
    this.close = null;
    if (!this.stopped) this.connect();
  }

  stop(): void {
    this.stopped = true;
    this.close?.();
    this.close = null;
  }
}

export function sseTransport(baseUrl: string, runId: string): StreamTransport {
  return {
    open(topic, from, onRecord, onEnd, onError) {
      const url = `${baseUrl}/api/runs/${runId}/topics/${topic}/stream?start=${from}`;
      const es = new EventSource(url);
      es.onmessage = (e) => {
        try {
          onRecord(JSON.parse(e.data) as StreamRecord);
        } catch {
          // malformed frame: ignore, cursor untouched
        }
      };
      es.addEventListener("end", () => { es.close(); onEnd(); });
      es.onerror = () => onError();
      return () => es.close();
    },
  };
}
