// End-to-end overlay check: the golden screen-plate map, the fitted
// calibration model and the known hole must agree - the overlay marker has
// to land within one tile of the brightest response blob.

import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';

import { brightestTile, brightTiles, buildHeatmap, tileDistance } from '../src/heatmap';
import { parseMapCsv } from '../src/mapcsv';
import { MappingModel } from '../src/mapping';
import type { HoleSpec } from '../src/heatmap';
import type { MappingModelJson } from '../src/types';

const csv = readFileSync(new URL('../fixtures/map_fig5.csv', import.meta.url), 'utf8');
const modelJson: MappingModelJson = JSON.parse(
  readFileSync(new URL('../fixtures/model.json', import.meta.url), 'utf8'),
);
const holes: { u_mm: number; v_mm: number; radius_mm: number }[] = JSON.parse(
  readFileSync(new URL('../fixtures/holes_fig5.json', import.meta.url), 'utf8'),
);

describe('response map parsing', () => {
  it('parses the golden 21x21 grid', () => {
    const map = parseMapCsv(csv);
    expect(map.kind).toBe('grid');
    expect(map.nx).toBe(21);
    expect(map.ny).toBe(21);
    expect(map.samples.length).toBe(441);
    expect(map.complete).toBe(true);
  });

  it('rejects non-map text', () => {
    expect(() => parseMapCsv('hello\nworld')).toThrow();
  });
});

describe('mapping model', () => {
  const model = MappingModel.fromJson(modelJson);

  it('round-trips predict/invert', () => {
    for (const v of [{ x: 0.2, y: 0.3 }, { x: -0.6, y: 0.1 }, { x: 0.05, y: -0.8 }]) {
      const back = model.invert(model.predict(v));
      expect(back).not.toBeNull();
      expect(back!.x).toBeCloseTo(v.x, 4);
      expect(back!.y).toBeCloseTo(v.y, 4);
    }
  });

  it('returns null outside the reachable range', () => {
    expect(model.invert({ x: 500, y: 500 })).toBeNull();
  });
});

describe('heat map with calibration overlay', () => {
  const map = parseMapCsv(csv);
  const model = MappingModel.fromJson(modelJson);
  const holeSpecs: HoleSpec[] = holes;

  it('bright region coincides with the overlaid hole within one tile', () => {
    const view = buildHeatmap(map, { holes: holeSpecs, model });
    expect(view.overlays.length).toBe(1);
    const blob = brightTiles(view, 0.5);
    expect(blob.length).toBeGreaterThan(0);
    expect(brightestTile(view)).not.toBeNull();
    const marker = view.overlays[0];
    const nearest = Math.min(...blob.map((t) => tileDistance(view, marker.vx, marker.vy, t)));
    expect(nearest).toBeLessThanOrEqual(1.0);
  });

  it('renders an empty map as an empty-state view', () => {
    const empty = { ...map, samples: [], complete: false };
    const view = buildHeatmap(empty, {});
    expect(view.tiles.every((t) => t.value === null)).toBe(true);
    expect(view.incomplete).toBe(true);
  });

  it('hatches tiles missing from a partial map', () => {
    const partial = { ...map, samples: map.samples.slice(0, 200), complete: false };
    const view = buildHeatmap(partial, {});
    const missing = view.tiles.filter((t) => t.value === null);
    expect(missing.length).toBe(441 - 200);
    expect(view.incomplete).toBe(true);
  });
});
