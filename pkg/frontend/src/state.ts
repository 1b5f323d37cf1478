// Console state: a pure reduction of the received event history plus user
// settings. Replaying the same event log always reproduces the same state;
// network plumbing stays outside.

import type { ApiEvent, SamplePayload, SteerAck } from './types';

export const RING_CAPACITY = 600;

export interface ChartPoint {
  t: number;
  delta: number;
  s21: number;
  sourceOn: boolean;
}

export interface SourceMarker {
  t: number;
  on: boolean;
}

export interface ConsoleState {
  lastSeq: number;
  /** samples dropped because their seq was not strictly increasing */
  duplicatesDropped: number;
  /** true when a seq jump was observed; cleared on resubscribe */
  gap: boolean;
  ring: ChartPoint[];
  sourceMarkers: SourceMarker[];
  mirror: { vx: number; vy: number } | null;
  predictedMm: [number, number] | null;
  sourceOn: boolean;
  scan: { id: string; done: number; total: number; state: string } | null;
  fault: string | null;
}

export function initialState(): ConsoleState {
  return {
    lastSeq: 0,
    duplicatesDropped: 0,
    gap: false,
    ring: [],
    sourceMarkers: [],
    mirror: null,
    predictedMm: null,
    sourceOn: false,
    scan: null,
    fault: null,
  };
}

/** Apply one event; returns a new state (inputs are never mutated). */
export function applyEvent(state: ConsoleState, ev: ApiEvent): ConsoleState {
  if (ev.seq <= state.lastSeq) {
    // at-least-once delivery: replays and regressions are dropped on seq
    return { ...state, duplicatesDropped: state.duplicatesDropped + 1 };
  }
  const next: ConsoleState = { ...state, gap: state.gap || ev.seq > state.lastSeq + 1, lastSeq: ev.seq };
  switch (ev.kind) {
    case 'sample': {
      const p = ev.payload as unknown as SamplePayload;
      const ring = [...state.ring, { t: ev.t, delta: p.delta, s21: p.s21, sourceOn: p.source_on }];
      next.ring = ring.length > RING_CAPACITY ? ring.slice(ring.length - RING_CAPACITY) : ring;
      break;
    }
    case 'steer': {
      const p = ev.payload as unknown as SteerAck;
      next.mirror = { vx: p.commanded.vx, vy: p.commanded.vy };
      next.predictedMm = p.predicted_mm;
      break;
    }
    case 'source': {
      const p = ev.payload as { on: boolean };
      next.sourceOn = p.on;
      next.sourceMarkers = [...state.sourceMarkers, { t: ev.t, on: p.on }];
      break;
    }
    case 'scan_started': {
      const p = ev.payload as { scan_id: string; points: number };
      next.scan = { id: p.scan_id, done: 0, total: p.points, state: 'running' };
      break;
    }
    case 'scan_progress': {
      const p = ev.payload as { scan_id: string; done: number; total: number };
      next.scan = { id: p.scan_id, done: p.done, total: p.total, state: 'running' };
      break;
    }
    case 'scan_done': {
      const p = ev.payload as { scan_id: string; complete: boolean };
      next.scan = {
        id: p.scan_id,
        done: state.scan?.done ?? 0,
        total: state.scan?.total ?? 0,
        state: p.complete ? 'done' : 'cancelled',
      };
      break;
    }
    case 'fault': {
      next.fault = String((ev.payload as { error?: string }).error ?? 'fault');
      break;
    }
    case 'session':
      break;
  }
  return next;
}

export function applyEvents(state: ConsoleState, events: ApiEvent[]): ConsoleState {
  return events.reduce(applyEvent, state);
}

/** Mark that the stream was resumed (gap indicator cleared). */
export function clearGap(state: ConsoleState): ConsoleState {
  return { ...state, gap: false };
}

export interface TraceSegment {
  /** max-delta height of one source-on dwell, for step-height readouts */
  height: number;
  tOn: number;
  tOff: number | null;
  points: ChartPoint[];
}

/**
 * Split the ring into source-on dwell segments using the markers; the strip
 * chart labels each segment with its step height.
 */
export function dwellSegments(state: ConsoleState): TraceSegment[] {
  const segments: TraceSegment[] = [];
  let current: { tOn: number; tOff: number | null } | null = null;
  for (const m of state.sourceMarkers) {
    if (m.on) {
      current = { tOn: m.t, tOff: null };
      segments.push({ height: 0, tOn: m.t, tOff: null, points: [] });
    } else if (current !== null) {
      segments[segments.length - 1].tOff = m.t;
      current = null;
    }
  }
  for (const seg of segments) {
    seg.points = state.ring.filter(
      (p) => p.t >= seg.tOn && (seg.tOff === null || p.t <= seg.tOff),
    );
    seg.height = seg.points.reduce((h, p) => Math.max(h, p.delta), 0);
  }
  return segments;
}
