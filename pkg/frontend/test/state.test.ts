// Replay determinism, seq de-duplication and the bounded ring buffer.

import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';

import { validateEvent } from '../src/events';
import { applyEvent, applyEvents, initialState, RING_CAPACITY } from '../src/state';
import type { ApiEvent } from '../src/types';

const fixture: ApiEvent[] = JSON.parse(
  readFileSync(new URL('../fixtures/events_fig6.json', import.meta.url), 'utf8'),
);

describe('event validation', () => {
  it('accepts every record of the recorded fixture', () => {
    for (const record of fixture) {
      expect(() => validateEvent(record)).not.toThrow();
    }
  });

  it('rejects malformed records', () => {
    expect(() => validateEvent({ seq: 0, t: 0, kind: 'sample', payload: {} })).toThrow();
    expect(() =>
      validateEvent({ seq: 1, t: 0, kind: 'sample', payload: { s21: 2, delta: 0, source_on: true, vx: 0, vy: 0 } }),
    ).toThrow();
    expect(() => validateEvent({ seq: 1, t: 0, kind: 'wibble', payload: {} })).toThrow();
  });
});

describe('state reduction', () => {
  it('replaying the same log reproduces the same final state', () => {
    const a = applyEvents(initialState(), fixture);
    const b = applyEvents(initialState(), fixture);
    expect(b).toEqual(a);
  });

  it('is insensitive to duplicated deliveries (at-least-once stream)', () => {
    const clean = applyEvents(initialState(), fixture);
    const noisy = fixture.flatMap((ev, i) => (i % 3 === 0 ? [ev, ev] : [ev]));
    const got = applyEvents(initialState(), noisy);
    expect(got.ring).toEqual(clean.ring);
    expect(got.sourceMarkers).toEqual(clean.sourceMarkers);
    expect(got.lastSeq).toEqual(clean.lastSeq);
    expect(got.duplicatesDropped).toBeGreaterThan(0);
  });

  it('drops seq regressions', () => {
    const state = applyEvents(initialState(), fixture.slice(0, 10));
    const regressed = applyEvent(state, fixture[2]);
    expect(regressed.ring).toEqual(state.ring);
    expect(regressed.duplicatesDropped).toBe(state.duplicatesDropped + 1);
  });

  it('marks a gap when seq jumps', () => {
    const state = applyEvents(initialState(), [fixture[0], fixture[5]]);
    expect(state.gap).toBe(true);
  });

  it('bounds the ring buffer', () => {
    let state = initialState();
    for (let k = 0; k < RING_CAPACITY + 250; k++) {
      state = applyEvent(state, {
        seq: k + 1,
        t: k,
        kind: 'sample',
        payload: { s21: 0.4, delta: 0.01, source_on: false, vx: 0, vy: 0 },
      });
    }
    expect(state.ring.length).toBe(RING_CAPACITY);
    expect(state.ring[0].t).toBe(250);
  });

  it('does not mutate prior states', () => {
    const s0 = initialState();
    const frozen = JSON.stringify(s0);
    applyEvents(s0, fixture);
    expect(JSON.stringify(s0)).toBe(frozen);
  });
});
