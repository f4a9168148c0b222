/** Thin typed client for /api/v1; surfaces structured error payloads. */

import type {
  ApiErrorBody,
  ArchivePayload,
  BrushRegion,
  FlowFrame,
  RunStatus,
  ValidationStatus,
  WalkPayload,
} from "./types.js";

export class ApiError extends Error {
  code: string;
  fields: { field: string; message: string }[];
  status: number;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message || `request failed (${status})`);
    this.status = status;
    this.code = body.code || "error";
    this.fields = body.fields || [];
  }

  fieldSummary(): string {
    if (!this.fields.length) return this.message;
    return this.fields.map((f) => `${f.field}: ${f.message}`).join("; ");
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(path, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  if (!resp.ok) {
    let body: ApiErrorBody;
    try {
      body = (await resp.json()) as ApiErrorBody;
    } catch {
      body = { code: "error", message: resp.statusText, fields: [] };
    }
    throw new ApiError(resp.status, body);
  }
  return (await resp.json()) as T;
}

export const api = {
  listRuns(): Promise<{ runs: RunStatus[] }> {
    return request("/api/v1/runs");
  },

  runStatus(runId: string): Promise<RunStatus> {
    return request(`/api/v1/runs/${runId}`);
  },

  archive(runId: string, maxCells?: number): Promise<ArchivePayload> {
    const suffix = maxCells ? `?max_cells=${maxCells}` : "";
    return request(`/api/v1/runs/${runId}/archive${suffix}`);
  },

  zoom(runId: string, region: BrushRegion, idempotencyKey?: string): Promise<{ run_id: string }> {
    return request(`/api/v1/runs/${runId}/zoom`, {
      method: "POST",
      body: JSON.stringify(
        idempotencyKey ? { ...region, idempotency_key: idempotencyKey } : region
      ),
    });
  },

  walk(
    runId: string,
    body: { center: number[]; dim?: number; steps?: number; span?: number }
  ): Promise<WalkPayload> {
    return request(`/api/v1/runs/${runId}/walk`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  },

  validate(
    runId: string,
    body: { genome?: number[]; latent?: number[] }
  ): Promise<{ validation_id: string; status_url: string }> {
    return request(`/api/v1/runs/${runId}/validate`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  },

  validationStatus(runId: string, vid: string): Promise<ValidationStatus> {
    return request(`/api/v1/runs/${runId}/validations/${vid}`);
  },

  flowFrame(url: string): Promise<FlowFrame> {
    return request(url);
  },
};
