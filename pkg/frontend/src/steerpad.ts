// Steer pad: maps canvas clicks to clamped voltage commands, tests no-go
// zones and posts /steer through an injected fetch (tests pass a stub).

import type { InstabilityRegion, SteerAck } from './types';

export interface PadGeometry {
  width: number;
  height: number;
}

/** Canvas pixel -> clamped voltage coordinate ([0,0] at the pad center). */
export function clickToVoltage(geom: PadGeometry, px: number, py: number): { vx: number; vy: number } {
  const vx = (px / geom.width) * 2 - 1;
  const vy = 1 - (py / geom.height) * 2; // canvas y grows downward
  return {
    vx: Math.max(-1, Math.min(1, vx)),
    vy: Math.max(-1, Math.min(1, vy)),
  };
}

export function voltageToPixel(geom: PadGeometry, vx: number, vy: number): { px: number; py: number } {
  return {
    px: ((vx + 1) / 2) * geom.width,
    py: ((1 - vy) / 2) * geom.height,
  };
}

export function inNoGoZone(
  v: { vx: number; vy: number },
  regions: InstabilityRegion[],
): InstabilityRegion | null {
  for (const r of regions) {
    if (Math.hypot(v.vx - r.vx, v.vy - r.vy) <= r.radius) return r;
  }
  return null;
}

export interface SteerResult {
  ack: SteerAck | null;
  error: string | null;
  /** the command needed an interlock override confirmation first */
  needsConfirmation: boolean;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/**
 * Handle a pad click: clamp, check the no-go zones (asking for confirmation
 * before overriding), then POST /steer and return the acknowledged position.
 */
export async function steerFromClick(
  base: string,
  geom: PadGeometry,
  px: number,
  py: number,
  regions: InstabilityRegion[],
  options: { confirmOverride?: () => boolean; fetchFn?: FetchLike } = {},
): Promise<SteerResult> {
  const fetchFn = options.fetchFn ?? fetch;
  const v = clickToVoltage(geom, px, py);
  const zone = inNoGoZone(v, regions);
  let override = false;
  if (zone !== null) {
    const confirm = options.confirmOverride ?? (() => false);
    if (!confirm()) {
      return { ack: null, error: null, needsConfirmation: true };
    }
    override = true;
  }
  const resp = await fetchFn(`${base}/steer`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ vx: v.vx, vy: v.vy, ...(override ? { override: true } : {}) }),
  });
  const body = (await resp.json()) as SteerAck & { error?: string };
  if (!resp.ok) {
    return { ack: null, error: body.error ?? `HTTP ${resp.status}`, needsConfirmation: false };
  }
  return { ack: body, error: null, needsConfirmation: false };
}
