/** Shapes of the /api/v1 payloads the UI consumes. */

export interface RunStatus {
  run_id: string;
  status: "created" | "running" | "finished" | "failed";
  error: string | null;
  evaluations?: number;
  budget?: number;
  occupancy?: number;
  best_fitness?: number | null;
  has_vae: boolean;
  lineage?: { parent_run_id: string } | null;
  created_at: string;
}

export interface ArchiveCell {
  niche_id: number;
  centroid: [number, number];
  features: { area: number; enstrophy: number };
  features_norm: [number, number];
  fitness: number;
  provenance: "simulated" | "predicted";
  genome: number[];
  thumbnail_rle?: string;
}

export interface ArchivePayload {
  run_id: string;
  capacity: number;
  occupancy: number;
  descriptors: {
    area: { lo: number; hi: number };
    enstrophy: { lo: number; hi: number };
  };
  cells: ArchiveCell[];
}

export interface WalkStepPayload {
  latent: number[];
  degenerate: boolean;
  predicted: { u_max: number; area: number; enstrophy: number };
  thumbnail_rle: string | null;
}

export interface WalkPayload {
  run_id: string;
  center: number[];
  rows: { dim: number; steps: WalkStepPayload[] }[];
}

export interface ValidationStatus {
  validation_id: string;
  status: "queued" | "running" | "done" | "failed";
  queue_position: number;
  predicted: Record<string, number>;
  measured: Record<string, number> | null;
  delta: Record<string, number> | null;
  failure: { reason: string; time_step: number } | null;
  snapshots: { frame: number; time_step: number; url: string }[];
}

export interface FlowFrame {
  frame: number;
  nx: number;
  ny: number;
  vorticity: number[][];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  fields: { field: string; message: string }[];
}

export type ColorField = "fitness" | "area" | "enstrophy";

export interface BrushRegion {
  a_lo: number;
  a_hi: number;
  e_lo: number;
  e_hi: number;
}
