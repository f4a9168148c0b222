/** Single-page app wiring: run list, heatmap + brush zoom, shape gallery,
 * latent sliders, and the validation view. Server state is re-fetched on
 * a 2 s poll; nothing authoritative is kept client-side. */

import { api, ApiError } from "./api.js";
import {
  brushFromDrag,
  brushIsValid,
  colorScale,
  RASTER_SIZE,
  hoverCell,
  rasterize,
} from "./heatmap.js";
import { bitmapToImageData, decodeRle } from "./rle.js";
import { Debouncer, SequenceGate } from "./scheduling.js";
import { initialState, selectRun } from "./state.js";
import type {
  ArchiveCell,
  ArchivePayload,
  ColorField,
  RunStatus,
  ValidationStatus,
} from "./types.js";
import { isTerminal, viewFromStatus, vorticityToRgba } from "./validation.js";

const WALK_DEBOUNCE_MS = 200; // coalesces rapid slider moves to <= 5 req/s

let state = initialState();
let archive: ArchivePayload | null = null;
let latentDim = 5;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function setBanner(text: string, kind: "info" | "error" = "info"): void {
  const banner = $("banner");
  banner.textContent = text;
  banner.className = text ? `banner ${kind}` : "banner hidden";
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return err.fieldSummary();
  return String(err);
}

// ---------------------------------------------------------------- run list

async function refreshRuns(): Promise<void> {
  try {
    const { runs } = await api.listRuns();
    renderRunList(runs);
    if (state.activeRunId) {
      const active = runs.find((r) => r.run_id === state.activeRunId);
      if (active) {
        renderRunDetail(active);
        if (active.has_vae !== state.hasVae) {
          state = { ...state, hasVae: active.has_vae };
          renderWalkAvailability();
        }
      }
    }
  } catch (err) {
    setBanner(`run list failed: ${describeError(err)}`, "error");
  }
}

function renderRunList(runs: RunStatus[]): void {
  const list = $("run-list");
  list.innerHTML = "";
  for (const run of runs) {
    const item = document.createElement("li");
    const lineage = run.lineage?.parent_run_id
      ? ` (zoom of ${run.lineage.parent_run_id.slice(0, 6)})`
      : "";
    item.textContent = `${run.run_id.slice(0, 10)} [${run.status}]${lineage}`;
    item.className = run.run_id === state.activeRunId ? "active" : "";
    item.onclick = () => activateRun(run);
    list.appendChild(item);
  }
  if (!runs.length) {
    const item = document.createElement("li");
    item.textContent = "no runs yet - start one with the CLI";
    list.appendChild(item);
  }
}

function renderRunDetail(run: RunStatus): void {
  const detail = $("run-detail");
  const bits = [
    `status: ${run.status}`,
    `evaluations: ${run.evaluations ?? 0}/${run.budget ?? "?"}`,
    `occupancy: ${run.occupancy ?? "-"}`,
  ];
  if (run.best_fitness != null) bits.push(`best u_max: ${run.best_fitness.toFixed(4)}`);
  if (run.error) bits.push(`error: ${run.error}`);
  detail.textContent = bits.join(" | ");
}

async function activateRun(run: RunStatus): Promise<void> {
  state = selectRun(state, run.run_id, run.has_vae);
  renderWalkAvailability();
  renderRunDetail(run);
  if (run.status === "finished") {
    await loadArchive();
  } else {
    archive = null;
    drawEmptyHeatmap(`run ${run.status}; archive appears when finished`);
  }
}

// ---------------------------------------------------------------- heatmap

function drawEmptyHeatmap(message: string): void {
  const canvas = $("heatmap") as unknown as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#888";
  ctx.font = "14px sans-serif";
  ctx.textAlign = "center";
  ctx.fillText(message, canvas.width / 2, canvas.height / 2);
  $("scale-info").textContent = "";
}

async function loadArchive(): Promise<void> {
  if (!state.activeRunId) return;
  try {
    archive = await api.archive(state.activeRunId);
    drawHeatmap();
  } catch (err) {
    setBanner(`archive failed: ${describeError(err)}`, "error");
  }
}

function drawHeatmap(): void {
  if (!archive || !archive.cells.length) {
    drawEmptyHeatmap("archive is empty");
    return;
  }
  const canvas = $("heatmap") as unknown as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const image = ctx.createImageData(RASTER_SIZE, RASTER_SIZE);
  rasterize(archive, state.colorField, image.data);
  ctx.putImageData(image, 0, 0);

  const scale = colorScale(archive.cells, state.colorField);
  $("scale-info").textContent =
    `${state.colorField}: ${scale.lo.toPrecision(4)} .. ${scale.hi.toPrecision(4)}` +
    ` | ${archive.occupancy}/${archive.capacity} niches`;

  if (state.brush) {
    const b = state.brush;
    ctx.strokeStyle = "#ff3333";
    ctx.lineWidth = 2;
    ctx.strokeRect(
      b.a_lo * RASTER_SIZE,
      (1 - b.e_hi) * RASTER_SIZE,
      (b.a_hi - b.a_lo) * RASTER_SIZE,
      (b.e_hi - b.e_lo) * RASTER_SIZE
    );
  }
}

function wireHeatmap(): void {
  const canvas = $("heatmap") as unknown as HTMLCanvasElement;
  let dragStart: [number, number] | null = null;

  const canvasPos = (ev: MouseEvent): [number, number] => {
    const rect = canvas.getBoundingClientRect();
    return [
      ((ev.clientX - rect.left) / rect.width) * RASTER_SIZE,
      ((ev.clientY - rect.top) / rect.height) * RASTER_SIZE,
    ];
  };

  canvas.onmousedown = (ev) => {
    dragStart = canvasPos(ev);
  };
  canvas.onmousemove = (ev) => {
    const [x, y] = canvasPos(ev);
    if (dragStart) {
      state.brush = brushFromDrag(dragStart[0], dragStart[1], x, y);
      drawHeatmap();
    } else if (archive) {
      const cell = hoverCell(archive, x / RASTER_SIZE, 1 - y / RASTER_SIZE);
      if (cell) renderHover(cell);
    }
  };
  canvas.onmouseup = (ev) => {
    if (!dragStart) return;
    const [x, y] = canvasPos(ev);
    const region = brushFromDrag(dragStart[0], dragStart[1], x, y);
    dragStart = null;
    if (brushIsValid(region)) {
      state.brush = region;
      $("zoom-button").removeAttribute("disabled");
    } else {
      // Click (not drag): select the cell instead.
      state.brush = null;
      $("zoom-button").setAttribute("disabled", "true");
      if (archive) {
        const cell = hoverCell(archive, x / RASTER_SIZE, 1 - y / RASTER_SIZE);
        if (cell) selectCell(cell);
      }
    }
    drawHeatmap();
  };

  ($("color-field") as unknown as HTMLSelectElement).onchange = (ev) => {
    state.colorField = (ev.target as HTMLSelectElement).value as ColorField;
    drawHeatmap();
  };

  $("zoom-button").onclick = async () => {
    if (!state.activeRunId || !state.brush) return;
    if (!brushIsValid(state.brush)) {
      setBanner("brush region has zero area", "error");
      return;
    }
    try {
      const resp = await api.zoom(state.activeRunId, state.brush);
      setBanner(`zoom run ${resp.run_id} started`);
      await refreshRuns();
    } catch (err) {
      setBanner(`zoom rejected: ${describeError(err)}`, "error");
    }
  };
}

// ----------------------------------------------------------------- gallery

function paintBitmap(canvas: HTMLCanvasElement, rle: string | null | undefined): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!rle) {
    ctx.fillStyle = "#b44";
    ctx.font = "12px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("degenerate", canvas.width / 2, canvas.height / 2);
    return;
  }
  const bitmap = decodeRle(rle);
  const image = new ImageData(bitmap.resolution, bitmap.resolution);
  bitmapToImageData(bitmap, image.data);
  createImageBitmap(image).then((img) => {
    ctx.imageSmoothingEnabled = false;
    ctx.save();
    // Bitmap rows are y-up; canvas is y-down.
    ctx.scale(1, -1);
    ctx.drawImage(img, 0, -canvas.height, canvas.width, canvas.height);
    ctx.restore();
  });
}

function renderHover(cell: ArchiveCell): void {
  $("hover-info").textContent =
    `niche ${cell.niche_id} | fitness ${cell.fitness.toFixed(4)} | ` +
    `A ${cell.features.area.toFixed(4)} | E ${cell.features.enstrophy.toFixed(4)} | ` +
    cell.provenance;
  paintBitmap($("hover-thumb") as unknown as HTMLCanvasElement, cell.thumbnail_rle);
}

function selectCell(cell: ArchiveCell): void {
  state.selected = cell;
  $("selected-info").textContent =
    `selected niche ${cell.niche_id}: fitness ${cell.fitness.toFixed(4)}, ` +
    `A ${cell.features.area.toFixed(4)}, E ${cell.features.enstrophy.toFixed(4)}`;
  paintBitmap($("selected-thumb") as unknown as HTMLCanvasElement, cell.thumbnail_rle);
  $("validate-button").removeAttribute("disabled");
}

// -------------------------------------------------------------- walk panel

const walkDebouncer = new Debouncer(WALK_DEBOUNCE_MS);
const walkGate = new SequenceGate();

function renderWalkAvailability(): void {
  const panel = $("walk-panel");
  const note = $("walk-note");
  if (state.hasVae) {
    panel.classList.remove("disabled");
    note.textContent = "";
    buildSliders();
  } else {
    panel.classList.add("disabled");
    note.textContent = "train a model first: flowbench vae train <run_id>";
  }
}

function buildSliders(): void {
  const holder = $("sliders");
  holder.innerHTML = "";
  state.walkCenter = new Array(latentDim).fill(0);
  for (let d = 0; d < latentDim; d++) {
    const row = document.createElement("div");
    row.className = "slider-row";
    const label = document.createElement("span");
    label.textContent = `z${d}`;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "-3";
    slider.max = "3";
    slider.step = "0.05";
    slider.value = "0";
    const value = document.createElement("span");
    value.textContent = "0.00";
    slider.oninput = () => {
      state.walkCenter[d] = Number(slider.value);
      value.textContent = Number(slider.value).toFixed(2);
      scheduleWalkPreview();
    };
    row.append(label, slider, value);
    holder.appendChild(row);
  }
}

function scheduleWalkPreview(): void {
  walkDebouncer.schedule(async () => {
    if (!state.activeRunId || !state.hasVae) return;
    const seq = walkGate.next();
    try {
      const payload = await api.walk(state.activeRunId, {
        center: [...state.walkCenter],
        dim: 0,
        steps: 1,
      });
      if (!walkGate.accept(seq)) return; // superseded by a newer move
      const step = payload.rows[0].steps[0];
      paintBitmap($("walk-thumb") as unknown as HTMLCanvasElement, step.thumbnail_rle);
      $("walk-info").textContent = step.degenerate
        ? "degenerate decode"
        : `predicted u_max ${step.predicted.u_max.toFixed(4)}, ` +
          `A ${step.predicted.area.toFixed(4)}, E ${step.predicted.enstrophy.toFixed(4)}`;
    } catch (err) {
      setBanner(`walk failed: ${describeError(err)}`, "error");
    }
  });
}

// -------------------------------------------------------------- validation

let animationTimer: ReturnType<typeof setInterval> | null = null;

async function runValidation(): Promise<void> {
  if (!state.activeRunId || !state.selected) return;
  const view = $("validation-view");
  view.innerHTML = "<p>submitting ...</p>";
  try {
    const { validation_id } = await api.validate(state.activeRunId, {
      genome: state.selected.genome,
    });
    await pollValidation(validation_id);
  } catch (err) {
    view.innerHTML = `<p class="failure">validation rejected: ${describeError(err)}</p>`;
  }
}

async function pollValidation(vid: string): Promise<void> {
  if (!state.activeRunId) return;
  const runId = state.activeRunId;
  const view = $("validation-view");
  const status: ValidationStatus = await api.validationStatus(runId, vid);
  const rendered = viewFromStatus(status);
  if (rendered.kind === "queued") {
    view.innerHTML = `<p><span class="spinner"></span> queued (position ${rendered.position})</p>`;
  } else if (rendered.kind === "running") {
    view.innerHTML = `<p><span class="spinner"></span> simulating ...</p>`;
  } else if (rendered.kind === "failed") {
    view.innerHTML =
      `<p class="failure">simulation diverged: ${rendered.reason} ` +
      `at step ${rendered.timeStep}</p>`;
  } else {
    const rows = rendered.rows
      .map(
        (r) =>
          `<tr><td>${r.name}</td><td>${r.measured.toPrecision(5)}</td>` +
          `<td>${r.predicted.toPrecision(5)}</td><td>${r.delta.toPrecision(3)}</td></tr>`
      )
      .join("");
    view.innerHTML =
      `<table><tr><th>value</th><th>measured</th><th>predicted</th><th>delta</th></tr>` +
      `${rows}</table><canvas id="flow-canvas" width="512" height="256"></canvas>` +
      `<p id="flow-frame-label"></p>`;
    animateFrames(rendered.frames);
  }
  if (!isTerminal(status)) {
    setTimeout(() => void pollValidation(vid), 500);
  }
}

async function animateFrames(urls: string[]): Promise<void> {
  if (animationTimer) clearInterval(animationTimer);
  if (!urls.length) return;
  const frames = await Promise.all(urls.map((u) => api.flowFrame(u)));
  const canvas = document.getElementById("flow-canvas") as HTMLCanvasElement | null;
  if (!canvas) return;
  const ctx = canvas.getContext("2d")!;
  let at = 0;
  const draw = () => {
    const frame = frames[at];
    const image = new ImageData(frame.nx, frame.ny);
    vorticityToRgba(frame.vorticity, image.data);
    createImageBitmap(image).then((img) => {
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    });
    const label = document.getElementById("flow-frame-label");
    if (label) label.textContent = `snapshot ${at + 1}/${frames.length}`;
    at = (at + 1) % frames.length;
  };
  draw();
  animationTimer = setInterval(draw, 400);
}

// -------------------------------------------------------------- bootstrap

function start(): void {
  wireHeatmap();
  renderWalkAvailability();
  $("validate-button").onclick = () => void runValidation();
  drawEmptyHeatmap("select a run");
  void refreshRuns();
  setInterval(() => void refreshRuns(), state.pollIntervalMs);
}

start();
