// Wire types for the cryoscan control-service API. The event shapes mirror
// schema/events.schema.json at the repository root; events.ts holds the
// runtime validators.

export type EventKind =
  | 'session'
  | 'steer'
  | 'source'
  | 'sample'
  | 'scan_started'
  | 'scan_progress'
  | 'scan_done'
  | 'fault';

export interface ApiEvent {
  seq: number;
  t: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export interface SamplePayload {
  s21: number;
  delta: number;
  source_on: boolean;
  vx: number;
  vy: number;
}

export interface SteerAck {
  commanded: { vx: number; vy: number };
  predicted_mm: [number, number] | null;
  slew_s?: number;
  stable: boolean;
  overridden?: boolean;
  s21?: number;
}

export interface InstabilityRegion {
  vx: number;
  vy: number;
  radius: number;
  path_length_um?: number;
}

export interface Status {
  session_id: string;
  state: 'idle' | 'scanning' | 'fault';
  config_hash: string;
  clock_s: number;
  mirror: { vx: number; vy: number; moving: boolean };
  predicted_mm: [number, number] | null;
  source: { on: boolean; wavelength_nm: number; power_w: number };
  s21: number;
  calibrated: boolean;
  instability_regions: InstabilityRegion[];
  seq: number;
}

export interface MappingModelJson {
  format: string;
  affine_mm_per_unit: [[number, number], [number, number]];
  offset_mm: [number, number];
  kappa: [number, number];
  residual_rms_mm: number;
  config_hash: string;
}

export interface MapSample {
  ix: number;
  iy: number;
  vx: number;
  vy: number;
  delta: number; // NaN for skipped points
  flags: string[];
}

export interface ResponseMapData {
  kind: 'grid' | 'line';
  nx: number;
  ny: number;
  vxLo: number;
  vxHi: number;
  vyLo: number;
  vyHi: number;
  complete: boolean;
  samples: MapSample[];
}
