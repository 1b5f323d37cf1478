// Heat-map layout: turns a response map plus optional overlays into plain
// drawable tile/marker lists. Keeping this pure (no canvas here) is what
// makes the view state reproducible from a recorded event log.

import { MappingModel } from './mapping';
import type { ResponseMapData } from './types';

export interface Tile {
  ix: number;
  iy: number;
  vx: number;
  vy: number;
  /** normalized 0..1 against the map's delta range; null -> missing tile */
  value: number | null;
  flags: string[];
}

export interface OverlayMarker {
  vx: number;
  vy: number;
  kind: 'hole' | 'instability';
  label?: string;
}

export interface HeatmapView {
  nx: number;
  ny: number;
  vxLo: number;
  vxHi: number;
  vyLo: number;
  vyHi: number;
  tiles: Tile[];
  overlays: OverlayMarker[];
  incomplete: boolean;
  deltaMin: number;
  deltaMax: number;
}

export interface HoleSpec {
  u_mm: number;
  v_mm: number;
  radius_mm: number;
}

export function buildHeatmap(
  map: ResponseMapData,
  options: {
    holes?: HoleSpec[];
    model?: MappingModel | null;
    instabilityRegions?: { vx: number; vy: number; radius: number }[];
  } = {},
): HeatmapView {
  const present = new Map<string, Tile>();
  let lo = Number.POSITIVE_INFINITY;
  let hi = Number.NEGATIVE_INFINITY;
  for (const s of map.samples) {
    if (!Number.isNaN(s.delta)) {
      lo = Math.min(lo, s.delta);
      hi = Math.max(hi, s.delta);
    }
  }
  if (!Number.isFinite(lo)) {
    lo = 0;
    hi = 1;
  }
  const span = hi - lo || 1;
  for (const s of map.samples) {
    present.set(`${s.ix},${s.iy}`, {
      ix: s.ix,
      iy: s.iy,
      vx: s.vx,
      vy: s.vy,
      value: Number.isNaN(s.delta) ? null : (s.delta - lo) / span,
      flags: s.flags,
    });
  }

  // fill the full grid; tiles the scan never reached render as missing
  const tiles: Tile[] = [];
  const stepX = map.nx > 1 ? (map.vxHi - map.vxLo) / (map.nx - 1) : 0;
  const stepY = map.ny > 1 ? (map.vyHi - map.vyLo) / (map.ny - 1) : 0;
  for (let iy = 0; iy < map.ny; iy++) {
    for (let ix = 0; ix < map.nx; ix++) {
      const key = `${ix},${iy}`;
      const got = present.get(key);
      tiles.push(
        got ?? {
          ix,
          iy,
          vx: map.vxLo + stepX * ix,
          vy: map.vyLo + stepY * iy,
          value: null,
          flags: [],
        },
      );
    }
  }

  const overlays: OverlayMarker[] = [];
  if (options.holes && options.model) {
    for (const hole of options.holes) {
      const v = options.model.invert({ x: hole.u_mm, y: hole.v_mm });
      if (v !== null) {
        overlays.push({
          vx: v.x,
          vy: v.y,
          kind: 'hole',
          label: `${hole.u_mm},${hole.v_mm} mm`,
        });
      }
    }
  }
  for (const region of options.instabilityRegions ?? []) {
    overlays.push({ vx: region.vx, vy: region.vy, kind: 'instability' });
  }

  return {
    nx: map.nx,
    ny: map.ny,
    vxLo: map.vxLo,
    vxHi: map.vxHi,
    vyLo: map.vyLo,
    vyHi: map.vyHi,
    tiles,
    overlays,
    incomplete: !map.complete,
    deltaMin: lo,
    deltaMax: hi,
  };
}

/** Brightest tile of the view (ties broken by first occurrence). */
export function brightestTile(view: HeatmapView): Tile | null {
  let best: Tile | null = null;
  for (const tile of view.tiles) {
    if (tile.value !== null && (best === null || tile.value > (best.value ?? -1))) {
      best = tile;
    }
  }
  return best;
}

/** Tiles forming the bright response region (above frac of the maximum). */
export function brightTiles(view: HeatmapView, frac = 0.5): Tile[] {
  return view.tiles.filter((t) => t.value !== null && t.value >= frac);
}

/** Grid-tile distance between a voltage coordinate and a tile center. */
export function tileDistance(view: HeatmapView, vx: number, vy: number, tile: Tile): number {
  const stepX = view.nx > 1 ? (view.vxHi - view.vxLo) / (view.nx - 1) : 1;
  const stepY = view.ny > 1 ? (view.vyHi - view.vyLo) / (view.ny - 1) : 1;
  return Math.max(Math.abs(vx - tile.vx) / stepX, Math.abs(vy - tile.vy) / stepY);
}
