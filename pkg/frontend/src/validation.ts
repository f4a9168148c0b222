/** Validation flow: submit, poll until terminal, expose render states.
 * Pure state machine; polling/DOM wiring happens in main.ts. */

import type { ValidationStatus } from "./types.js";

export type ValidationView =
  | { kind: "queued"; position: number }
  | { kind: "running" }
  | { kind: "failed"; reason: string; timeStep: number }
  | {
      kind: "done";
      rows: { name: string; measured: number; predicted: number; delta: number }[];
      frames: string[];
    };

export function viewFromStatus(status: ValidationStatus): ValidationView {
  switch (status.status) {
    case "queued":
      return { kind: "queued", position: status.queue_position };
    case "running":
      return { kind: "running" };
    case "failed":
      return {
        kind: "failed",
        reason: status.failure?.reason ?? "unknown",
        timeStep: status.failure?.time_step ?? -1,
      };
    case "done": {
      const measured = status.measured ?? {};
      const rows = Object.keys(measured)
        .sort()
        .map((name) => ({
          name,
          measured: measured[name],
          predicted: status.predicted[name],
          delta: status.delta?.[name] ?? measured[name] - status.predicted[name],
        }));
      return {
        kind: "done",
        rows,
        frames: status.snapshots.map((s) => s.url),
      };
    }
  }
}

export function isTerminal(status: ValidationStatus): boolean {
  return status.status === "done" || status.status === "failed";
}

/** Map vorticity to diverging blue-white-red RGBA for animation frames. */
export function vorticityToRgba(
  vorticity: number[][],
  rgba: Uint8ClampedArray
): { nx: number; ny: number } {
  const nx = vorticity.length;
  const ny = nx ? vorticity[0].length : 0;
  let peak = 0;
  for (const row of vorticity) {
    for (const v of row) {
      const a = Math.abs(v);
      if (a > peak) peak = a;
    }
  }
  if (peak === 0) peak = 1;
  // Image rows are y (top = high y), columns are x.
  for (let py = 0; py < ny; py++) {
    for (let px = 0; px < nx; px++) {
      const v = vorticity[px][ny - 1 - py] / peak; // [-1, 1]
      const offset = (py * nx + px) * 4;
      if (v >= 0) {
        rgba[offset] = 255;
        rgba[offset + 1] = Math.round(255 * (1 - v));
        rgba[offset + 2] = Math.round(255 * (1 - v));
      } else {
        rgba[offset] = Math.round(255 * (1 + v));
        rgba[offset + 1] = Math.round(255 * (1 + v));
        rgba[offset + 2] = 255;
      }
      rgba[offset + 3] = 255;
    }
  }
  return { nx, ny };
}
