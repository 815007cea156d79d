/** Canvas compositing. `composePixels` is pure (testable headless); main.ts
 * blits it into ImageData. Only the dirty region is recomposed after a
 * decision. */

import type { StructureInfo } from "./api.js";
import { sliceGrid, type Grid } from "./grd.js";
import type { ViewState } from "./state.js";

export interface Rect {
  y0: number;
  x0: number;
  y1: number;
  x1: number;
}

/** Black -> red -> yellow heat ramp for uncertainty in [0, 1]. */
export function heatColor(u: number): [number, number, number] {
  const t = Math.max(0, Math.min(1, u));
  const r = Math.min(1, 2 * t);
  const g = Math.max(0, 2 * t - 1);
  return [Math.round(255 * r), Math.round(255 * g), 40];
}

function at(grid: Grid, y: number, x: number, w: number): number {
  return grid.data[y * w + x] as number;
}

export function composePixels(state: ViewState, region?: Rect): Uint8ClampedArray {
  const image = sliceGrid(state.grids.image, state.slice);
  const likelihood = sliceGrid(state.grids.likelihood, state.slice);
  const mask = sliceGrid(state.grids.finalMask, state.slice);
  const skeleton = sliceGrid(state.grids.skeleton, state.slice);
  const heatmap = sliceGrid(state.grids.heatmap, state.slice);
  const [h, w] = image.dims;
  const r: Rect = region ?? { y0: 0, x0: 0, y1: h, x1: w };
  const out = new Uint8ClampedArray((r.y1 - r.y0) * (r.x1 - r.x0) * 4);
  let o = 0;
  for (let y = r.y0; y < r.y1; y++) {
    for (let x = r.x0; x < r.x1; x++) {
      let rr = 0;
      let gg = 0;
      let bb = 0;
      if (state.layers.image) {
        const v = Math.round(255 * at(image, y, x, w));
        rr = gg = bb = v;
      }
      if (state.layers.likelihood) {
        const v = at(likelihood, y, x, w);
        bb = Math.min(255, bb + Math.round(180 * v));
      }
      if (state.layers.mask && at(mask, y, x, w)) {
        gg = Math.min(255, gg + 110);
      }
      if (state.layers.heatmap) {
        const u = at(heatmap, y, x, w);
        if (u > 0) {
          const [hr, hg, hb] = heatColor(u);
          rr = Math.round(0.35 * rr + 0.65 * hr);
          gg = Math.round(0.35 * gg + 0.65 * hg);
          bb = Math.round(0.35 * bb + 0.65 * hb);
        }
      }
      if (state.layers.skeleton && at(skeleton, y, x, w)) {
        rr = gg = bb = 255;
      }
      out[o++] = rr;
      out[o++] = gg;
      out[o++] = bb;
      out[o++] = 255;
    }
  }
  return out;
}

/** Pixels of the selected structure's path on the current slice. */
export function selectionPixels(state: ViewState): number[][] {
  if (state.selected === null) return [];
  const s = state.structures.find((st) => st.id === state.selected);
  if (!s) return [];
  if (state.dims.length === 2) return s.path;
  return s.path.filter((c) => c[0] === state.slice).map((c) => [c[1], c[2]]);
}

export function structureColor(s: StructureInfo): string {
  if (s.decided === true) return "#2ecc40";
  if (s.decided === false) return "#ff4136";
  return s.accepted ? "#7fdbff" : "#ffdc00";
}

/** Dirty rectangle spanning a structure's path (plus margin), clamped. */
export function dirtyRect(s: StructureInfo, dims: number[], margin = 24): Rect {
  const rank = dims.length;
  const ys = s.path.map((c) => c[rank - 2]);
  const xs = s.path.map((c) => c[rank - 1]);
  const h = dims[rank - 2];
  const w = dims[rank - 1];
  return {
    y0: Math.max(0, Math.min(...ys) - margin),
    x0: Math.max(0, Math.min(...xs) - margin),
    y1: Math.min(h, Math.max(...ys) + margin + 1),
    x1: Math.min(w, Math.max(...xs) + margin + 1),
  };
}
