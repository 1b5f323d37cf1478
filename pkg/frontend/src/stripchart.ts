// Strip chart layout: converts the sample ring and source markers into
// drawable polylines and marker positions (pure; canvas drawing lives in
// main.ts).

import type { ConsoleState } from './state';

export interface ChartLayout {
  /** polyline in chart coordinates [0,1]^2, y up */
  line: { x: number; y: number }[];
  markers: { x: number; on: boolean }[];
  tMin: number;
  tMax: number;
  deltaMax: number;
  stale: boolean;
  gap: boolean;
}

export function buildStripChart(state: ConsoleState, windowS = 120): ChartLayout {
  const ring = state.ring;
  if (ring.length === 0) {
    return { line: [], markers: [], tMin: 0, tMax: windowS, deltaMax: 1, stale: true, gap: state.gap };
  }
  const tMax = ring[ring.length - 1].t;
  const tMin = Math.max(ring[0].t, tMax - windowS);
  const visible = ring.filter((p) => p.t >= tMin);
  const deltaMax = Math.max(0.05, ...visible.map((p) => p.delta));
  const span = Math.max(tMax - tMin, 1e-9);
  const line = visible.map((p) => ({
    x: (p.t - tMin) / span,
    y: Math.max(0, Math.min(1, p.delta / deltaMax)),
  }));
  const markers = state.sourceMarkers
    .filter((m) => m.t >= tMin && m.t <= tMax)
    .map((m) => ({ x: (m.t - tMin) / span, on: m.on }));
  return { line, markers, tMin, tMax, deltaMax, stale: false, gap: state.gap };
}
