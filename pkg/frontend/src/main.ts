// DOM wiring: connects the pure state/layout modules to canvases and
// controls. All server interaction goes through ApiClient; all derived
// pixels come from the layout builders, so the view is replayable.

import { ApiClient } from './api';
import { buildHeatmap, HeatmapView } from './heatmap';
import { parseMapCsv } from './mapcsv';
import { MappingModel } from './mapping';
import { applyEvents, clearGap, ConsoleState, dwellSegments, initialState } from './state';
import { steerFromClick, voltageToPixel } from './steerpad';
import { buildStripChart } from './stripchart';
import type { HoleSpec } from './heatmap';
import type { InstabilityRegion, MappingModelJson, Status } from './types';

const api = new ApiClient('');
let state: ConsoleState = initialState();
let regions: InstabilityRegion[] = [];
let model: MappingModel | null = null;
let holes: HoleSpec[] = [];
let heatmap: HeatmapView | null = null;
let lastScanId: string | null = null;

const el = (id: string) => document.getElementById(id)!;
const padCanvas = () => el('steer-pad') as HTMLCanvasElement;
const chartCanvas = () => el('strip-chart') as HTMLCanvasElement;
const mapCanvas = () => el('map-view') as HTMLCanvasElement;

function toast(message: string) {
  const box = el('toasts');
  const node = document.createElement('div');
  node.className = 'toast';
  node.textContent = message;
  box.appendChild(node);
  setTimeout(() => node.remove(), 4000);
}

// -- steer pad ---------------------------------------------------------------

function drawPad() {
  const canvas = padCanvas();
  const ctx = canvas.getContext('2d')!;
  const geom = { width: canvas.width, height: canvas.height };
  ctx.fillStyle = '#10141c';
  ctx.fillRect(0, 0, geom.width, geom.height);
  ctx.strokeStyle = '#2c3648';
  for (let k = 0; k <= 4; k++) {
    const x = (k / 4) * geom.width;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, geom.height);
    ctx.stroke();
    const y = (k / 4) * geom.height;
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(geom.width, y);
    ctx.stroke();
  }
  // no-go zones
  for (const r of regions) {
    const c = voltageToPixel(geom, r.vx, r.vy);
    ctx.beginPath();
    ctx.fillStyle = 'rgba(255, 80, 80, 0.25)';
    ctx.arc(c.px, c.py, (r.radius / 2) * geom.width, 0, 2 * Math.PI);
    ctx.fill();
  }
  if (state.mirror !== null) {
    const c = voltageToPixel(geom, state.mirror.vx, state.mirror.vy);
    ctx.strokeStyle = '#6cf';
    ctx.beginPath();
    ctx.arc(c.px, c.py, 6, 0, 2 * Math.PI);
    ctx.stroke();
  }
  const label = el('pad-readout');
  if (state.mirror !== null) {
    const mm = state.predictedMm;
    label.textContent =
      `v = [${state.mirror.vx.toFixed(3)}, ${state.mirror.vy.toFixed(3)}]` +
      (mm ? `  ->  (${mm[0].toFixed(2)}, ${mm[1].toFixed(2)}) mm` : '  ->  (miss)');
  }
}

async function onPadClick(evt: MouseEvent) {
  const canvas = padCanvas();
  const rect = canvas.getBoundingClientRect();
  const px = ((evt.clientX - rect.left) / rect.width) * canvas.width;
  const py = ((evt.clientY - rect.top) / rect.height) * canvas.height;
  const result = await steerFromClick(
    '',
    { width: canvas.width, height: canvas.height },
    px,
    py,
    regions,
    { confirmOverride: () => window.confirm('Target is inside an instability zone. Steer anyway?') },
  );
  if (result.error !== null) toast(result.error);
}

// -- strip chart -------------------------------------------------------------

function drawChart() {
  const canvas = chartCanvas();
  const ctx = canvas.getContext('2d')!;
  const w = canvas.width;
  const h = canvas.height;
  ctx.fillStyle = '#10141c';
  ctx.fillRect(0, 0, w, h);
  const layout = buildStripChart(state);
  ctx.strokeStyle = '#9f6';
  ctx.beginPath();
  layout.line.forEach((p, i) => {
    const x = p.x * w;
    const y = h - p.y * (h - 14) - 7;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
  for (const m of layout.markers) {
    ctx.strokeStyle = m.on ? '#fd5' : '#59f';
    const x = m.x * w;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, h);
    ctx.stroke();
  }
  ctx.fillStyle = '#aab';
  ctx.font = '11px monospace';
  ctx.fillText(`dS21 max ${layout.deltaMax.toFixed(3)}`, 6, 12);
  if (layout.stale) ctx.fillText('stale: no samples', 6, 26);
  if (layout.gap) ctx.fillText('stream gap (resynced)', 6, 40);
  const segs = dwellSegments(state);
  const last = segs.slice(-3).map((s) => s.height.toFixed(3));
  if (last.length > 0) ctx.fillText(`recent step heights: ${last.join(', ')}`, 6, h - 6);
}

// -- map view ---------------------------------------------------------------

function drawMap() {
  const canvas = mapCanvas();
  const ctx = canvas.getContext('2d')!;
  ctx.fillStyle = '#10141c';
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (heatmap === null) {
    ctx.fillStyle = '#667';
    ctx.font = '13px monospace';
    ctx.fillText('no map loaded - run a scan', 16, 24);
    return;
  }
  const view = heatmap;
  const tw = canvas.width / view.nx;
  const th = canvas.height / view.ny;
  for (const tile of view.tiles) {
    const x = tile.ix * tw;
    const y = canvas.height - (tile.iy + 1) * th;
    if (tile.value === null) {
      ctx.fillStyle = '#1a1f29';
      ctx.fillRect(x, y, Math.ceil(tw), Math.ceil(th));
      ctx.strokeStyle = '#333c4c';
      ctx.beginPath();
      ctx.moveTo(x, y + th);
      ctx.lineTo(x + tw, y);
      ctx.stroke();
    } else {
      const v = tile.value;
      ctx.fillStyle = `rgb(${Math.round(30 + 225 * v)}, ${Math.round(25 + 180 * v)}, ${Math.round(60 + 40 * v)})`;
      ctx.fillRect(x, y, Math.ceil(tw), Math.ceil(th));
    }
  }
  for (const marker of view.overlays) {
    const fx = (marker.vx - view.vxLo) / (view.vxHi - view.vxLo || 1);
    const fy = (marker.vy - view.vyLo) / (view.vyHi - view.vyLo || 1);
    ctx.strokeStyle = marker.kind === 'hole' ? '#0ff' : '#f55';
    ctx.beginPath();
    ctx.arc(fx * canvas.width, canvas.height - fy * canvas.height, 8, 0, 2 * Math.PI);
    ctx.stroke();
  }
  if (view.incomplete) {
    ctx.fillStyle = '#fd5';
    ctx.font = '12px monospace';
    ctx.fillText('partial map (scan incomplete)', 8, 16);
  }
}

function hookMapHover() {
  mapCanvas().addEventListener('mousemove', (evt) => {
    if (heatmap === null) return;
    const canvas = mapCanvas();
    const rect = canvas.getBoundingClientRect();
    const fx = (evt.clientX - rect.left) / rect.width;
    const fy = 1 - (evt.clientY - rect.top) / rect.height;
    const vx = heatmap.vxLo + fx * (heatmap.vxHi - heatmap.vxLo);
    const vy = heatmap.vyLo + fy * (heatmap.vyHi - heatmap.vyLo);
    const ix = Math.round(((vx - heatmap.vxLo) / (heatmap.vxHi - heatmap.vxLo || 1)) * (heatmap.nx - 1));
    const iy = Math.round(((vy - heatmap.vyLo) / (heatmap.vyHi - heatmap.vyLo || 1)) * (heatmap.ny - 1));
    const tile = heatmap.tiles[iy * heatmap.nx + ix];
    if (tile) {
      el('map-readout').textContent =
        `(vx ${tile.vx.toFixed(3)}, vy ${tile.vy.toFixed(3)})  delta ` +
        (tile.value === null ? 'n/a' : (heatmap.deltaMin + tile.value * (heatmap.deltaMax - heatmap.deltaMin)).toFixed(4));
    }
  });
}

// -- wiring -------------------------------------------------------------------

function redraw() {
  drawPad();
  drawChart();
  el('scan-readout').textContent = state.scan
    ? `scan ${state.scan.id}: ${state.scan.done}/${state.scan.total} (${state.scan.state})`
    : 'no scan';
  if (state.fault) toast(`fault: ${state.fault}`);
}

async function refreshStatus() {
  try {
    const status: Status = await api.status();
    regions = status.instability_regions;
    el('conn-readout').textContent =
      `session ${status.session_id} · ${status.state} · config ${status.config_hash} · t=${status.clock_s.toFixed(1)} s`;
  } catch (err) {
    el('conn-readout').textContent = `disconnected: ${String(err)}`;
  }
}

async function loadLatestMap() {
  if (lastScanId === null) {
    toast('no finished scan yet');
    return;
  }
  const text = await api.fetchMapCsv(lastScanId);
  const overlayOn = (el('overlay-toggle') as HTMLInputElement).checked;
  heatmap = buildHeatmap(parseMapCsv(text), {
    holes: overlayOn ? holes : [],
    model,
    instabilityRegions: regions,
  });
  drawMap();
}

async function boot() {
  hookMapHover();
  padCanvas().addEventListener('click', (e) => void onPadClick(e));
  el('source-on').addEventListener('click', () => void api.source(true, 650, 1e-6, 5).catch((e) => toast(String(e))));
  el('source-off').addEventListener('click', () => void api.source(false).catch((e) => toast(String(e))));
  el('run-scan').addEventListener('click', () => {
    const preset = (el('preset-select') as HTMLSelectElement).value;
    api
      .startScan(preset)
      .then((id) => {
        lastScanId = id;
        toast(`scan ${id} started`);
      })
      .catch((e) => toast(String(e)));
  });
  el('load-map').addEventListener('click', () => void loadLatestMap().catch((e) => toast(String(e))));
  (el('model-file') as HTMLInputElement).addEventListener('change', async (evt) => {
    const input = evt.target as HTMLInputElement;
    if (input.files && input.files[0]) {
      const obj = JSON.parse(await input.files[0].text()) as MappingModelJson;
      model = MappingModel.fromJson(obj);
      toast(`calibration loaded (rms ${(obj.residual_rms_mm * 1e3).toFixed(0)} um)`);
    }
  });
  (el('holes-file') as HTMLInputElement).addEventListener('change', async (evt) => {
    const input = evt.target as HTMLInputElement;
    if (input.files && input.files[0]) {
      holes = JSON.parse(await input.files[0].text()) as HoleSpec[];
      toast(`${holes.length} overlay holes loaded`);
    }
  });

  api.subscribe(
    (events) => {
      state = applyEvents(state, events);
      redraw();
    },
    () => {
      state = clearGap({ ...state, gap: true });
      redraw();
    },
  );
  await refreshStatus();
  setInterval(() => void refreshStatus(), 2000);
  redraw();
  drawMap();
}

void boot();
