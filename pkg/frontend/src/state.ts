/** View state and pure reducers. The queue mirrors the service's pending
 * queue (uncertainty >= 0.5, most uncertain first, ties by id); every mask
 * and metric shown comes from a service payload. */

import type { CasePayload, DecisionResult, StructureInfo, TracePoint } from "./api.js";
import { decodeGrdBase64, type Grid } from "./grd.js";

export type Layer = "image" | "likelihood" | "heatmap" | "mask" | "skeleton";

export interface ViewState {
  caseId: string;
  dims: number[];
  layers: Record<Layer, boolean>;
  grids: {
    image: Grid;
    likelihood: Grid;
    backbone: Grid;
    finalMask: Grid;
    skeleton: Grid;
    heatmap: Grid;
  };
  structures: StructureInfo[];
  queue: number[];
  selected: number | null;
  dice: number | null;
  cldice: number | null;
  trace: TracePoint[];
  slice: number;
  busy: boolean;
}

export function buildQueue(structures: StructureInfo[]): number[] {
  return structures
    .filter((s) => s.u_norm >= 0.5 && s.decided === null)
    .sort((a, b) => (b.u_norm - a.u_norm) || (a.id - b.id))
    .map((s) => s.id);
}

export function fromPayload(payload: CasePayload, trace: TracePoint[]): ViewState {
  const queue = payload.pending.slice();
  return {
    caseId: payload.id,
    dims: payload.dims,
    layers: { image: true, likelihood: false, heatmap: true, mask: true, skeleton: false },
    grids: {
      image: decodeGrdBase64(payload.image),
      likelihood: decodeGrdBase64(payload.likelihood),
      backbone: decodeGrdBase64(payload.backbone_seg),
      finalMask: decodeGrdBase64(payload.final_mask),
      skeleton: decodeGrdBase64(payload.skeleton),
      heatmap: decodeGrdBase64(payload.heatmap),
    },
    structures: payload.structures,
    queue,
    selected: queue.length ? queue[0] : null,
    dice: payload.dice,
    cldice: payload.cldice,
    trace,
    slice: 0,
    busy: false,
  };
}

/** Fold a decision acknowledgement plus the refreshed payload into the state;
 * selection advances to the next queued structure. */
export function afterDecision(
  state: ViewState,
  structureId: number,
  result: DecisionResult,
  refreshed: CasePayload,
): ViewState {
  const next = fromPayload(refreshed, [
    ...state.trace,
    [state.trace.length, result.dice, result.cldice],
  ]);
  next.layers = state.layers;
  next.slice = state.slice;
  const idx = state.queue.indexOf(structureId);
  next.selected = next.queue.length
    ? next.queue[Math.min(Math.max(idx, 0), next.queue.length - 1)]
    : null;
  return next;
}

export function selectNext(state: ViewState, step: 1 | -1): ViewState {
  if (!state.queue.length) return state;
  const idx = state.selected === null ? -1 : state.queue.indexOf(state.selected);
  const next = Math.min(Math.max(idx + step, 0), state.queue.length - 1);
  return { ...state, selected: state.queue[next] };
}

export function toggleLayer(state: ViewState, layer: Layer): ViewState {
  return { ...state, layers: { ...state.layers, [layer]: !state.layers[layer] } };
}

export function queueIsNonIncreasing(state: ViewState): boolean {
  const u = new Map(state.structures.map((s) => [s.id, s.u_norm]));
  for (let i = 1; i < state.queue.length; i++) {
    if ((u.get(state.queue[i - 1]) ?? 0) < (u.get(state.queue[i]) ?? 0)) return false;
  }
  return true;
}
