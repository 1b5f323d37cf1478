// Steer-pad behavior: click mapping, clamping, interlock confirmation, and
// the POST /steer round trip through a stub server.

import { describe, expect, it } from 'vitest';

import { clickToVoltage, inNoGoZone, steerFromClick, voltageToPixel } from '../src/steerpad';
import type { InstabilityRegion, SteerAck } from '../src/types';

const GEOM = { width: 400, height: 400 };

function stubServer(overrides: Partial<SteerAck> = {}) {
  const calls: { url: string; body: Record<string, unknown> }[] = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    const body = JSON.parse((init?.body as string) ?? '{}');
    calls.push({ url, body });
    const ack: SteerAck = {
      commanded: { vx: body.vx, vy: body.vy },
      predicted_mm: [body.vx * 15, body.vy * 15],
      stable: true,
      ...overrides,
    };
    return new Response(JSON.stringify(ack), {
      status: 200,
      headers: { 'Content-Type': 'application/json' },
    });
  };
  return { calls, fetchFn };
}

describe('click mapping', () => {
  it('canvas center is the rest command', () => {
    expect(clickToVoltage(GEOM, 200, 200)).toEqual({ vx: 0, vy: 0 });
  });

  it('clamps drags outside the pad to the command box', () => {
    expect(clickToVoltage(GEOM, -50, 500)).toEqual({ vx: -1, vy: -1 });
    expect(clickToVoltage(GEOM, 900, -10)).toEqual({ vx: 1, vy: 1 });
  });

  it('pixel mapping round-trips', () => {
    const v = { vx: 0.3, vy: -0.55 };
    const p = voltageToPixel(GEOM, v.vx, v.vy);
    expect(clickToVoltage(GEOM, p.px, p.py).vx).toBeCloseTo(v.vx, 10);
    expect(clickToVoltage(GEOM, p.px, p.py).vy).toBeCloseTo(v.vy, 10);
  });
});

describe('steer round trip', () => {
  it('posts the clamped command and renders the acknowledged position', async () => {
    const { calls, fetchFn } = stubServer();
    const result = await steerFromClick('', GEOM, 300, 100, [], { fetchFn });
    expect(calls.length).toBe(1);
    expect(calls[0].url).toBe('/steer');
    expect(calls[0].body).toEqual({ vx: 0.5, vy: 0.5 });
    expect(result.ack).not.toBeNull();
    expect(result.ack!.commanded).toEqual({ vx: 0.5, vy: 0.5 });
    expect(result.ack!.predicted_mm).toEqual([7.5, 7.5]);
  });

  it('asks for confirmation inside a no-go zone and posts only on accept', async () => {
    const regions: InstabilityRegion[] = [{ vx: 0.5, vy: 0.5, radius: 0.2 }];
    expect(inNoGoZone({ vx: 0.5, vy: 0.45 }, regions)).not.toBeNull();

    const declined = stubServer();
    const r1 = await steerFromClick('', GEOM, 300, 100, regions, {
      fetchFn: declined.fetchFn,
      confirmOverride: () => false,
    });
    expect(r1.needsConfirmation).toBe(true);
    expect(declined.calls.length).toBe(0);

    const accepted = stubServer();
    const r2 = await steerFromClick('', GEOM, 300, 100, regions, {
      fetchFn: accepted.fetchFn,
      confirmOverride: () => true,
    });
    expect(r2.ack).not.toBeNull();
    expect(accepted.calls[0].body.override).toBe(true);
  });

  it('surfaces busy errors without throwing', async () => {
    const fetchFn = async (): Promise<Response> =>
      new Response(JSON.stringify({ error: 'session is scanning' }), { status: 409 });
    const result = await steerFromClick('', GEOM, 10, 10, [], { fetchFn });
    expect(result.ack).toBeNull();
    expect(result.error).toContain('scanning');
  });
});
