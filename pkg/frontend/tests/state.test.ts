import { describe, expect, it } from "vitest";

import type { CasePayload, StructureInfo } from "../src/api.js";
import { afterDecision, buildQueue, fromPayload, queueIsNonIncreasing,
         selectNext, toggleLayer } from "../src/state.js";

function structure(id: number, u: number, decided: boolean | null = null): StructureInfo {
  return { id, path: [[0, id]], p_bar: 0.6, var_bar: 0.3, u_norm: u,
           accepted: true, decided };
}

function grdB64(dims: number[], dtype: "f32" | "u8", values: number[]): string {
  const header = new TextEncoder().encode(
    JSON.stringify({ magic: "GRD1", dims, dtype }) + "\n");
  const payload = dtype === "f32"
    ? new Uint8Array(new Float32Array(values).buffer)
    : new Uint8Array(values);
  const out = new Uint8Array(header.length + payload.length);
  out.set(header);
  out.set(payload, header.length);
  return Buffer.from(out).toString("base64");
}

function payload(structures: StructureInfo[], pending: number[]): CasePayload {
  const n = 4;
  const f32 = grdB64([2, 2], "f32", Array(n).fill(0.5));
  const u8 = grdB64([2, 2], "u8", Array(n).fill(1));
  return {
    id: "case_000", dims: [2, 2],
    image: f32, likelihood: f32, heatmap: f32,
    backbone_seg: u8, final_mask: u8, skeleton: u8,
    structures, pending, mask_pixels: n, dice: 0.8, cldice: 0.7,
  };
}

describe("buildQueue", () => {
  it("keeps only undecided structures above the 0.5 cutoff", () => {
    const q = buildQueue([structure(0, 0.9), structure(1, 0.2),
                          structure(2, 0.7, true), structure(3, 0.6)]);
    expect(q).toEqual([0, 3]);
  });

  it("orders by decreasing uncertainty with id ties ascending", () => {
    const q = buildQueue([structure(5, 0.6), structure(1, 0.6), structure(2, 0.9)]);
    expect(q).toEqual([2, 1, 5]);
  });
});

describe("fromPayload", () => {
  it("selects the head of the pending queue and decodes grids", () => {
    const state = fromPayload(payload([structure(0, 0.9), structure(1, 0.8)], [0, 1]),
                              [[0, 0.8, 0.7]]);
    expect(state.selected).toBe(0);
    expect(state.grids.finalMask.data.length).toBe(4);
    expect(queueIsNonIncreasing(state)).toBe(true);
  });

  it("empty queue means done state", () => {
    const state = fromPayload(payload([structure(0, 0.1)], []), [[0, 1, 1]]);
    expect(state.selected).toBeNull();
    expect(state.queue).toEqual([]);
  });
});

describe("afterDecision", () => {
  it("appends the service metrics to the trace and advances selection", () => {
    const s0 = fromPayload(payload([structure(0, 0.9), structure(1, 0.8)], [0, 1]),
                           [[0, 0.5, 0.5]]);
    const refreshed = payload([structure(0, 0.9, true), structure(1, 0.8)], [1]);
    const s1 = afterDecision(s0, 0, { dice: 0.9, cldice: 0.85, remaining: 1 }, refreshed);
    expect(s1.trace).toEqual([[0, 0.5, 0.5], [1, 0.9, 0.85]]);
    expect(s1.selected).toBe(1);
    expect(s1.queue).toEqual([1]);
    expect(s1.busy).toBe(false);
  });

  it("keeps layer toggles across refreshes", () => {
    let s = fromPayload(payload([structure(0, 0.9)], [0]), [[0, 1, 1]]);
    s = toggleLayer(s, "skeleton");
    const s2 = afterDecision(s, 0, { dice: 1, cldice: 1, remaining: 0 },
                             payload([structure(0, 0.9, true)], []));
    expect(s2.layers.skeleton).toBe(true);
    expect(s2.selected).toBeNull();
  });
});

describe("selectNext", () => {
  it("steps through the queue and clamps at the ends", () => {
    let s = fromPayload(payload(
      [structure(0, 0.9), structure(1, 0.8), structure(2, 0.7)], [0, 1, 2]),
      [[0, 1, 1]]);
    s = selectNext(s, 1);
    expect(s.selected).toBe(1);
    s = selectNext(s, 1);
    s = selectNext(s, 1);
    expect(s.selected).toBe(2);
    s = selectNext(s, -1);
    expect(s.selected).toBe(1);
  });
});
