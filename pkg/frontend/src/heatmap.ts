/** Archive heatmap: nearest-centroid raster plus brush-selection math.
 * Pure functions here; canvas wiring lives in main.ts. */

import type { ArchiveCell, ArchivePayload, BrushRegion, ColorField } from "./types.js";

export const RASTER_SIZE = 512;

export function fieldValue(cell: ArchiveCell, field: ColorField): number {
  if (field === "fitness") return cell.fitness;
  if (field === "area") return cell.features.area;
  return cell.features.enstrophy;
}

export function colorScale(cells: ArchiveCell[], field: ColorField): { lo: number; hi: number } {
  let lo = Infinity;
  let hi = -Infinity;
  for (const cell of cells) {
    const v = fieldValue(cell, field);
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!cells.length) return { lo: 0, hi: 1 };
  if (lo === hi) hi = lo + 1e-12;
  return { lo, hi };
}

/** Viridis-like ramp (five anchor points, linear blend). */
const RAMP: [number, number, number][] = [
  [68, 1, 84],
  [59, 82, 139],
  [33, 145, 140],
  [94, 201, 98],
  [253, 231, 37],
];

export function rampColor(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t)) * (RAMP.length - 1);
  const i = Math.min(RAMP.length - 2, Math.floor(x));
  const f = x - i;
  return [
    Math.round(RAMP[i][0] + f * (RAMP[i + 1][0] - RAMP[i][0])),
    Math.round(RAMP[i][1] + f * (RAMP[i + 1][1] - RAMP[i][1])),
    Math.round(RAMP[i][2] + f * (RAMP[i + 1][2] - RAMP[i][2])),
  ];
}

/** Bucket grid over centroids so per-pixel nearest lookups stay cheap. */
export class CentroidIndex {
  private buckets: number[][];
  private grid: number;
  private cells: ArchiveCell[];

  constructor(cells: ArchiveCell[], grid = 16) {
    this.grid = grid;
    this.cells = cells;
    this.buckets = Array.from({ length: grid * grid }, () => []);
    cells.forEach((cell, i) => {
      const bx = this.clampBucket(cell.centroid[0]);
      const by = this.clampBucket(cell.centroid[1]);
      this.buckets[by * grid + bx].push(i);
    });
  }

  private clampBucket(v: number): number {
    return Math.min(this.grid - 1, Math.max(0, Math.floor(v * this.grid)));
  }

  nearest(x: number, y: number): number {
    const bx = this.clampBucket(x);
    const by = this.clampBucket(y);
    const cell = 1 / this.grid;
    let best = -1;
    let bestD = Infinity;
    for (let ring = 0; ring < 2 * this.grid; ring++) {
      for (let dy = -ring; dy <= ring; dy++) {
        for (let dx = -ring; dx <= ring; dx++) {
          if (Math.max(Math.abs(dx), Math.abs(dy)) !== ring) continue;
          const gx = bx + dx;
          const gy = by + dy;
          if (gx < 0 || gy < 0 || gx >= this.grid || gy >= this.grid) continue;
          for (const i of this.buckets[gy * this.grid + gx]) {
            const c = this.cells[i].centroid;
            const d = (c[0] - x) ** 2 + (c[1] - y) ** 2;
            if (d < bestD) {
              bestD = d;
              best = i;
            }
          }
        }
      }
      // Any centroid in ring k+1 or beyond lies at least ring*cell away,
      // so once the best hit is within that radius it is the true nearest.
      if (best >= 0 && bestD <= (ring * cell) ** 2) break;
    }
    return best;
  }
}

/** Fill an RGBA raster with the nearest-centroid coloring. */
export function rasterize(
  payload: ArchivePayload,
  field: ColorField,
  rgba: Uint8ClampedArray,
  size = RASTER_SIZE
): void {
  const { cells } = payload;
  const scale = colorScale(cells, field);
  const index = new CentroidIndex(cells);
  for (let py = 0; py < size; py++) {
    // Feature y grows upward; canvas y grows downward.
    const fy = 1 - (py + 0.5) / size;
    for (let px = 0; px < size; px++) {
      const fx = (px + 0.5) / size;
      const i = index.nearest(fx, fy);
      const offset = (py * size + px) * 4;
      if (i < 0) {
        rgba[offset + 3] = 0;
        continue;
      }
      const t = (fieldValue(cells[i], field) - scale.lo) / (scale.hi - scale.lo);
      const [r, g, b] = rampColor(t);
      rgba[offset] = r;
      rgba[offset + 1] = g;
      rgba[offset + 2] = b;
      rgba[offset + 3] = 255;
    }
  }
}

/** Convert a pixel-space drag into a normalized brush region. */
export function brushFromDrag(
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  size = RASTER_SIZE
): BrushRegion {
  const clamp = (v: number) => Math.min(1, Math.max(0, v));
  const a_lo = clamp(Math.min(x0, x1) / size);
  const a_hi = clamp(Math.max(x0, x1) / size);
  // Invert y: canvas top = feature 1.
  const e_lo = clamp(1 - Math.max(y0, y1) / size);
  const e_hi = clamp(1 - Math.min(y0, y1) / size);
  return { a_lo, a_hi, e_lo, e_hi };
}

/** Client-side gate: zero-area brushes never reach the server. */
export function brushIsValid(region: BrushRegion, minExtent = 1e-3): boolean {
  return (
    region.a_hi - region.a_lo >= minExtent && region.e_hi - region.e_lo >= minExtent
  );
}

/** Nearest occupied cell to a hover position (normalized coords). */
export function hoverCell(payload: ArchivePayload, fx: number, fy: number): ArchiveCell | null {
  if (!payload.cells.length) return null;
  const index = new CentroidIndex(payload.cells);
  const i = index.nearest(fx, fy);
  return i >= 0 ? payload.cells[i] : null;
}
