// Voltage <-> physical mapping model: the calibration JSON produced by the
// analysis toolkit. predict() maps a normalized command to device-plane mm;
// invert() solves the other way (damped Newton) so mask-hole overlays can be
// drawn in voltage coordinates.

import type { MappingModelJson } from './types';

export interface Vec2 {
  x: number;
  y: number;
}

function saturation(v: number, kappa: number): number {
  if (kappa === 0) return v;
  return Math.tanh(kappa * v) / Math.tanh(kappa);
}

function saturationDeriv(v: number, kappa: number): number {
  if (kappa === 0) return 1;
  const c = Math.cosh(kappa * v);
  return kappa / (c * c * Math.tanh(kappa));
}

export class MappingModel {
  constructor(
    readonly a: [[number, number], [number, number]],
    readonly b: [number, number],
    readonly kappa: [number, number],
  ) {}

  static fromJson(obj: MappingModelJson): MappingModel {
    if (obj.format !== 'cryoscan-mapping-model/1') {
      throw new Error(`not a cryoscan mapping model: ${obj.format}`);
    }
    return new MappingModel(obj.affine_mm_per_unit, obj.offset_mm, obj.kappa);
  }

  predict(v: Vec2): Vec2 {
    const gx = saturation(v.x, this.kappa[0]);
    const gy = saturation(v.y, this.kappa[1]);
    return {
      x: this.a[0][0] * gx + this.a[0][1] * gy + this.b[0],
      y: this.a[1][0] * gx + this.a[1][1] * gy + this.b[1],
    };
  }

  /** Solve predict(v) = target (mm); returns null outside the reachable box. */
  invert(target: Vec2, tolMm = 1e-4): Vec2 | null {
    const det = this.a[0][0] * this.a[1][1] - this.a[0][1] * this.a[1][0];
    if (Math.abs(det) < 1e-12) return null;
    // affine-inverse initial guess through the saturation inverse
    const rx = target.x - this.b[0];
    const ry = target.y - this.b[1];
    let gx = (this.a[1][1] * rx - this.a[0][1] * ry) / det;
    let gy = (-this.a[1][0] * rx + this.a[0][0] * ry) / det;
    gx = Math.max(-1, Math.min(1, gx));
    gy = Math.max(-1, Math.min(1, gy));
    const inv = (g: number, k: number) => (k === 0 ? g : Math.atanh(g * Math.tanh(k)) / k);
    let v: Vec2 = { x: inv(gx, this.kappa[0]), y: inv(gy, this.kappa[1]) };

    for (let iter = 0; iter < 60; iter++) {
      const p = this.predict(v);
      const ex = p.x - target.x;
      const ey = p.y - target.y;
      if (Math.hypot(ex, ey) < tolMm) {
        if (Math.abs(v.x) > 1 + 1e-9 || Math.abs(v.y) > 1 + 1e-9) return null;
        return { x: Math.max(-1, Math.min(1, v.x)), y: Math.max(-1, Math.min(1, v.y)) };
      }
      const dgx = saturationDeriv(v.x, this.kappa[0]);
      const dgy = saturationDeriv(v.y, this.kappa[1]);
      const j00 = this.a[0][0] * dgx;
      const j01 = this.a[0][1] * dgy;
      const j10 = this.a[1][0] * dgx;
      const j11 = this.a[1][1] * dgy;
      const jdet = j00 * j11 - j01 * j10;
      if (Math.abs(jdet) < 1e-15) return null;
      let sx = -(j11 * ex - j01 * ey) / jdet;
      let sy = -(-j10 * ex + j00 * ey) / jdet;
      // damped step, clamped to a modest box around the command range
      let lambda = 1.0;
      const norm0 = Math.hypot(ex, ey);
      for (let k = 0; k < 25; k++) {
        const cand = {
          x: Math.max(-2, Math.min(2, v.x + lambda * sx)),
          y: Math.max(-2, Math.min(2, v.y + lambda * sy)),
        };
        const cp = this.predict(cand);
        if (Math.hypot(cp.x - target.x, cp.y - target.y) < norm0) {
          v = cand;
          break;
        }
        lambda /= 2;
        if (k === 24) return null;
      }
    }
    return null;
  }
}
