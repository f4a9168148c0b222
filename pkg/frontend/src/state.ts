/** UI view state: one active run, brush, selection, walk panel. The
 * server can reconstruct everything here; nothing is authoritative. */

import type { ArchiveCell, BrushRegion, ColorField } from "./types.js";

export interface ViewState {
  activeRunId: string | null;
  colorField: ColorField;
  brush: BrushRegion | null;
  selected: ArchiveCell | null;
  walkCenter: number[];
  walkSpan: number;
  hasVae: boolean;
  pollIntervalMs: number;
}

export function initialState(): ViewState {
  return {
    activeRunId: null,
    colorField: "fitness",
    brush: null,
    selected: null,
    walkCenter: [0, 0, 0, 0, 0],
    walkSpan: 2.0,
    hasVae: false,
    pollIntervalMs: 2000,
  };
}

export function selectRun(state: ViewState, runId: string, hasVae: boolean): ViewState {
  return {
    ...state,
    activeRunId: runId,
    hasVae,
    brush: null,
    selected: null,
  };
}
