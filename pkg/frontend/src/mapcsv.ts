// Parser for the response-map CSV served by GET /scan/{id}/map.

import type { MapSample, ResponseMapData } from './types';

const FORMAT_LINE = '# cryoscan-response-map: 1';
const COLUMNS = 'ix,iy,vx,vy,s21_off,s21_on,delta,t,flags';

export function parseMapCsv(text: string): ResponseMapData {
  const lines = text.split('\n');
  if (lines[0] !== FORMAT_LINE) {
    throw new Error('not a cryoscan response map');
  }
  const headers = new Map<string, string>();
  let rowStart = -1;
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    if (line.startsWith('# ')) {
      const sep = line.indexOf(': ');
      if (sep < 0) throw new Error(`bad header at line ${i + 1}`);
      headers.set(line.slice(2, sep), line.slice(sep + 2));
    } else if (line === COLUMNS) {
      rowStart = i + 1;
      break;
    } else {
      throw new Error(`unexpected line ${i + 1}: ${line}`);
    }
  }
  if (rowStart < 0) throw new Error('missing column header');

  const kind = headers.get('kind');
  if (kind !== 'grid' && kind !== 'line') throw new Error(`unknown plan kind ${kind}`);
  const num = (key: string): number => {
    const raw = headers.get(key);
    if (raw === undefined) throw new Error(`missing header ${key}`);
    const val = Number(raw);
    if (Number.isNaN(val)) throw new Error(`bad header ${key}: ${raw}`);
    return val;
  };

  const samples: MapSample[] = [];
  for (let i = rowStart; i < lines.length; i++) {
    const line = lines[i];
    if (line === '') continue;
    const f = line.split(',');
    if (f.length !== 9) throw new Error(`bad row at line ${i + 1}`);
    samples.push({
      ix: Number(f[0]),
      iy: Number(f[1]),
      vx: Number(f[2]),
      vy: Number(f[3]),
      delta: f[6] === 'nan' ? Number.NaN : Number(f[6]),
      flags: f[8] === '' ? [] : f[8].split(';'),
    });
  }

  if (kind === 'grid') {
    return {
      kind,
      nx: num('nx'),
      ny: num('ny'),
      vxLo: num('vx_lo'),
      vxHi: num('vx_hi'),
      vyLo: num('vy_lo'),
      vyHi: num('vy_hi'),
      complete: headers.get('complete') === 'true',
      samples,
    };
  }
  const start = (headers.get('start') ?? '0,0').split(',').map(Number);
  const end = (headers.get('end') ?? '0,0').split(',').map(Number);
  return {
    kind,
    nx: num('n_points'),
    ny: 1,
    vxLo: Math.min(start[0], end[0]),
    vxHi: Math.max(start[0], end[0]),
    vyLo: Math.min(start[1], end[1]),
    vyHi: Math.max(start[1], end[1]),
    complete: headers.get('complete') === 'true',
    samples,
  };
}
