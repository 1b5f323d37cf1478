// Runtime validation of event records (mirrors schema/events.schema.json)
// and parsing of the text/event-stream wire format.

import { z } from 'zod';
import type { ApiEvent } from './types';

const unitInterval = z.number().min(0).max(1);
const voltage = z.number().min(-1).max(1);

export const samplePayloadSchema = z
  .object({
    s21: unitInterval,
    delta: z.number(),
    source_on: z.boolean(),
    vx: voltage,
    vy: voltage,
  })
  .strict();

const steerPayloadSchema = z
  .object({
    commanded: z.object({ vx: voltage, vy: voltage }),
    predicted_mm: z.union([z.null(), z.tuple([z.number(), z.number()])]),
    stable: z.boolean(),
  })
  .passthrough();

const sourcePayloadSchema = z
  .object({
    on: z.boolean(),
    wavelength_nm: z.number().min(180).max(2000),
    power_w: z.number().min(0),
  })
  .passthrough();

const scanProgressSchema = z
  .object({
    scan_id: z.string(),
    done: z.number().int().min(0),
    total: z.number().int().min(0),
  })
  .passthrough();

export const eventSchema = z
  .object({
    seq: z.number().int().min(1),
    t: z.number(),
    kind: z.enum([
      'session',
      'steer',
      'source',
      'sample',
      'scan_started',
      'scan_progress',
      'scan_done',
      'fault',
    ]),
    payload: z.record(z.unknown()),
  })
  .strict()
  .superRefine((ev, ctx) => {
    const detail =
      ev.kind === 'sample'
        ? samplePayloadSchema.safeParse(ev.payload)
        : ev.kind === 'steer'
          ? steerPayloadSchema.safeParse(ev.payload)
          : ev.kind === 'source'
            ? sourcePayloadSchema.safeParse(ev.payload)
            : ev.kind === 'scan_progress'
              ? scanProgressSchema.safeParse(ev.payload)
              : { success: true as const };
    if (!detail.success) {
      ctx.addIssue({
        code: z.ZodIssueCode.custom,
        message: `bad ${ev.kind} payload: ${detail.error.issues[0]?.message}`,
      });
    }
  });

export function validateEvent(record: unknown): ApiEvent {
  return eventSchema.parse(record) as ApiEvent;
}

/**
 * Incremental parser for a text/event-stream body. Feed chunks as they
 * arrive; complete `data:` blocks are validated and returned, partial
 * trailing data is buffered for the next call.
 */
export class SseParser {
  private buffer = '';

  feed(chunk: string): ApiEvent[] {
    this.buffer += chunk;
    const events: ApiEvent[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf('\n\n')) >= 0) {
      const block = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 2);
      for (const line of block.split('\n')) {
        if (line.startsWith('data: ')) {
          events.push(validateEvent(JSON.parse(line.slice(6))));
        }
      }
    }
    return events;
  }
}
