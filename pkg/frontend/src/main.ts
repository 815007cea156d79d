/** Entry point: wires the API client, state, canvas, and keyboard together.
 * One decision request in flight at a time; queue interaction is disabled
 * while a POST is pending. */

import { ApiError, exportMask, fetchCase, fetchTrace, listCases, postDecision } from "./api.js";
import { pathBox, pickStructure, type Box } from "./hittest.js";
import { bindKeys } from "./keyboard.js";
import { composePixels, dirtyRect, selectionPixels, structureColor, type Rect } from "./render.js";
import { afterDecision, fromPayload, selectNext, toggleLayer, type Layer, type ViewState } from "./state.js";

const LAYERS: Layer[] = ["image", "likelihood", "heatmap", "mask", "skeleton"];
const API_BASE = (window as { __API_BASE__?: string }).__API_BASE__ ?? "";
const SCALE = 6;

let state: ViewState | null = null;
let boxes: Map<number, Box> = new Map();

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const caseSelect = document.getElementById("case-select") as HTMLSelectElement;
const queueList = document.getElementById("queue") as HTMLUListElement;
const metricsEl = document.getElementById("metrics") as HTMLDivElement;
const statusEl = document.getElementById("status") as HTMLDivElement;
const banner = document.getElementById("error-banner") as HTMLDivElement;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;

function showError(message: string) {
  banner.hidden = false;
  banner.querySelector("span")!.textContent = message;
}

function hideError() {
  banner.hidden = true;
}

function paint(region?: Rect) {
  if (!state) return;
  const rank = state.dims.length;
  const h = state.dims[rank - 2];
  const w = state.dims[rank - 1];
  if (canvas.width !== w * SCALE) {
    canvas.width = w * SCALE;
    canvas.height = h * SCALE;
  }
  const r: Rect = region ?? { y0: 0, x0: 0, y1: h, x1: w };
  const pixels = composePixels(state, r);
  const img = new ImageData(new Uint8ClampedArray(pixels), r.x1 - r.x0, r.y1 - r.y0);
  const off = new OffscreenCanvas(r.x1 - r.x0, r.y1 - r.y0);
  off.getContext("2d")!.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, r.x0 * SCALE, r.y0 * SCALE,
                (r.x1 - r.x0) * SCALE, (r.y1 - r.y0) * SCALE);
  // selected structure outline on top
  for (const [y, x] of selectionPixels(state)) {
    ctx.strokeStyle = "#ff851b";
    ctx.lineWidth = 2;
    ctx.strokeRect(x * SCALE, y * SCALE, SCALE, SCALE);
  }
}

function renderQueue() {
  if (!state) return;
  queueList.innerHTML = "";
  const byId = new Map(state.structures.map((s) => [s.id, s]));
  for (const sid of state.queue) {
    const s = byId.get(sid)!;
    const li = document.createElement("li");
    li.textContent = `#${sid}  u=${s.u_norm.toFixed(3)}  p=${s.p_bar.toFixed(2)}`;
    li.style.color = structureColor(s);
    if (sid === state.selected) li.classList.add("selected");
    li.onclick = () => {
      state = { ...state!, selected: sid };
      renderAll();
    };
    queueList.appendChild(li);
  }
  statusEl.textContent = state.queue.length
    ? `${state.queue.length} structures to review`
    : "done - queue empty";
}

function renderMetrics() {
  if (!state) return;
  const fmt = (v: number | null) => (v === null ? "n/a" : v.toFixed(4));
  metricsEl.textContent =
    `dice ${fmt(state.dice)}   clDice ${fmt(state.cldice)}   clicks ${state.trace.length - 1}`;
}

function renderAll() {
  paint();
  renderQueue();
  renderMetrics();
}

async function loadCase(id: string) {
  hideError();
  try {
    const [payload, trace] = await Promise.all([
      fetchCase(API_BASE, id),
      fetchTrace(API_BASE, id),
    ]);
    state = fromPayload(payload, trace.trace);
    boxes = new Map(payload.structures.map((s) => [s.id, pathBox(s.path)]));
    renderAll();
  } catch (err) {
    showError(`failed to load case ${id}: ${err}`);
  }
}

async function decide(accept: boolean) {
  if (!state || state.busy || state.selected === null) return;
  const sid = state.selected;
  state = { ...state, busy: true };
  try {
    const result = await postDecision(API_BASE, state.caseId, sid, accept);
    const refreshed = await fetchCase(API_BASE, state.caseId);
    const region = dirtyRect(state.structures.find((s) => s.id === sid)!, state.dims);
    state = afterDecision(state, sid, result, refreshed);
    paint(region);
    renderQueue();
    renderMetrics();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // already decided elsewhere: resync instead of failing
      await loadCase(state.caseId);
    } else {
      showError(`decision failed: ${err}`);
      state = { ...state, busy: false };
    }
  }
}

canvas.addEventListener("click", (e) => {
  if (!state) return;
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor((e.clientX - rect.left) / SCALE);
  const y = Math.floor((e.clientY - rect.top) / SCALE);
  const point = state.dims.length === 2 ? [y, x] : [state.slice, y, x];
  const hit = pickStructure(state.structures, point, 3, boxes);
  if (hit !== null) {
    state = { ...state, selected: hit };
    renderAll();
  }
});

bindKeys(window, {
  accept: () => void decide(true),
  reject: () => void decide(false),
  next: () => {
    if (state) {
      state = selectNext(state, 1);
      renderAll();
    }
  },
  prev: () => {
    if (state) {
      state = selectNext(state, -1);
      renderAll();
    }
  },
  toggleLayer: (index) => {
    if (state && LAYERS[index]) {
      state = toggleLayer(state, LAYERS[index]);
      paint();
    }
  },
  exportMask: () => {
    if (state) {
      void exportMask(API_BASE, state.caseId).then(
        (r) => (statusEl.textContent = `exported to ${r.path}`),
        (err) => showError(`export failed: ${err}`),
      );
    }
  },
  sliceUp: () => stepSlice(1),
  sliceDown: () => stepSlice(-1),
});

function stepSlice(delta: number) {
  if (!state || state.dims.length !== 3) return;
  const depth = state.dims[0];
  const slice = Math.max(0, Math.min(depth - 1, state.slice + delta));
  if (slice !== state.slice) {
    state = { ...state, slice };
    paint();
    statusEl.textContent = `slice ${slice + 1}/${depth}`;
  }
}

retryBtn.onclick = () => {
  if (state) void loadCase(state.caseId);
  else void init();
};

async function init() {
  hideError();
  try {
    const cases = await listCases(API_BASE);
    caseSelect.innerHTML = "";
    for (const c of cases) {
      const opt = document.createElement("option");
      opt.value = c.id;
      opt.textContent = `${c.id} (${c.dims.join("x")})`;
      caseSelect.appendChild(opt);
    }
    caseSelect.onchange = () => void loadCase(caseSelect.value);
    if (cases.length) await loadCase(cases[0].id);
  } catch (err) {
    showError(`service unreachable: ${err}`);
  }
}

void init();
