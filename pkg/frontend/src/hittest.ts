/** Structure picking: cheap bounding-box prefilter, then exact distance to
 * the one-pixel-wide path. Thousands of thin paths make per-path exact
 * distance too slow without the prefilter. */

import type { StructureInfo } from "./api.js";

export interface Box {
  lo: number[];
  hi: number[];
}

export function pathBox(path: number[][], pad = 2): Box {
  const rank = path[0].length;
  const lo = path[0].slice();
  const hi = path[0].slice();
  for (const c of path) {
    for (let a = 0; a < rank; a++) {
      if (c[a] < lo[a]) lo[a] = c[a];
      if (c[a] > hi[a]) hi[a] = c[a];
    }
  }
  return { lo: lo.map((v) => v - pad), hi: hi.map((v) => v + pad) };
}

function inBox(point: number[], box: Box): boolean {
  return point.every((v, a) => v >= box.lo[a] && v <= box.hi[a]);
}

function pathDistance(point: number[], path: number[][]): number {
  let best = Infinity;
  for (const c of path) {
    let d2 = 0;
    for (let a = 0; a < point.length; a++) {
      const d = point[a] - c[a];
      d2 += d * d;
    }
    if (d2 < best) best = d2;
  }
  return Math.sqrt(best);
}

/** Nearest structure within `radius` pixels of the point, or null. Ties in
 * distance go to the smaller structure id. */
export function pickStructure(
  structures: StructureInfo[],
  point: number[],
  radius = 3,
  boxes?: Map<number, Box>,
): number | null {
  let bestId: number | null = null;
  let bestDist = radius;
  for (const s of structures) {
    const box = boxes?.get(s.id) ?? pathBox(s.path, Math.ceil(radius));
    if (!inBox(point, box)) continue;
    const d = pathDistance(point, s.path);
    if (d < bestDist || (d === bestDist && bestId !== null && s.id < bestId)) {
      bestDist = d;
      bestId = s.id;
    }
  }
  return bestId;
}
