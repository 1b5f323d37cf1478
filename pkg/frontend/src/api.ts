// HTTP client for the control service plus the resumable event stream.

import { SseParser } from './events';
import type { ApiEvent, Status } from './types';

export class ApiClient {
  constructor(readonly base: string) {}

  async status(): Promise<Status> {
    const resp = await fetch(`${this.base}/status`);
    if (!resp.ok) throw new Error(`status: HTTP ${resp.status}`);
    return (await resp.json()) as Status;
  }

  async source(on: boolean, wavelengthNm?: number, powerW?: number, holdS?: number): Promise<void> {
    const resp = await fetch(`${this.base}/source`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        on,
        ...(wavelengthNm !== undefined ? { wavelength_nm: wavelengthNm } : {}),
        ...(powerW !== undefined ? { power_w: powerW } : {}),
        ...(holdS !== undefined ? { hold_s: holdS } : {}),
      }),
    });
    if (!resp.ok) throw new Error((await resp.json()).error ?? `HTTP ${resp.status}`);
  }

  async startScan(preset: string): Promise<string> {
    const resp = await fetch(`${this.base}/scan`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ preset }),
    });
    const body = await resp.json();
    if (!resp.ok) throw new Error(body.error ?? `HTTP ${resp.status}`);
    return body.scan_id as string;
  }

  async fetchMapCsv(scanId: string): Promise<string> {
    const resp = await fetch(`${this.base}/scan/${scanId}/map`);
    if (!resp.ok) throw new Error(`map: HTTP ${resp.status}`);
    return await resp.text();
  }

  /**
   * Subscribe to /events with automatic resume from the last seen seq.
   * Returns a stop function. Uses fetch streaming rather than EventSource
   * so the same code runs under tests.
   */
  subscribe(
    onEvents: (events: ApiEvent[]) => void,
    onGap: () => void,
    fromSeq = 0,
  ): () => void {
    let stopped = false;
    let lastSeq = fromSeq;

    const loop = async () => {
      while (!stopped) {
        try {
          const resp = await fetch(`${this.base}/events?from_seq=${lastSeq}`);
          if (!resp.ok || resp.body === null) throw new Error(`events: HTTP ${resp.status}`);
          const reader = resp.body.getReader();
          const decoder = new TextDecoder();
          const parser = new SseParser();
          while (!stopped) {
            const { done, value } = await reader.read();
            if (done) break;
            const events = parser.feed(decoder.decode(value, { stream: true }));
            if (events.length > 0) {
              lastSeq = events[events.length - 1].seq;
              onEvents(events);
            }
          }
        } catch {
          // connection dropped; mark the gap and resubscribe with lastSeq
        }
        if (!stopped) {
          onGap();
          await new Promise((r) => setTimeout(r, 1000));
        }
      }
    };
    void loop();
    return () => {
      stopped = true;
    };
  }
}
