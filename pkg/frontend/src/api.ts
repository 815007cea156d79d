/** Typed client for the proofreading service; all numbers come from the
 * service, the UI never computes metrics itself. */

export interface CaseSummary {
  id: string;
  dims: number[];
}

export interface StructureInfo {
  id: number;
  path: number[][];
  p_bar: number;
  var_bar: number;
  u_norm: number;
  accepted: boolean;
  decided: boolean | null;
}

export interface CasePayload {
  id: string;
  dims: number[];
  image: string;
  likelihood: string;
  backbone_seg: string;
  final_mask: string;
  skeleton: string;
  heatmap: string;
  structures: StructureInfo[];
  pending: number[];
  mask_pixels: number;
  dice: number | null;
  cldice: number | null;
}

export interface DecisionResult {
  dice: number | null;
  cldice: number | null;
  remaining: number;
}

export type TracePoint = [number, number | null, number | null];

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(`${base}${path}`, init);
  if (!resp.ok) {
    throw new ApiError(resp.status, await resp.text());
  }
  return resp.json() as Promise<T>;
}

export function listCases(base: string): Promise<CaseSummary[]> {
  return request(base, "/api/cases");
}

export function fetchCase(base: string, id: string): Promise<CasePayload> {
  return request(base, `/api/case/${id}`);
}

export function postDecision(
  base: string,
  id: string,
  structureId: number,
  accept: boolean,
): Promise<DecisionResult> {
  return request(base, `/api/case/${id}/decision`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ structure_id: structureId, accept }),
  });
}

export function fetchTrace(base: string, id: string): Promise<{ trace: TracePoint[] }> {
  return request(base, `/api/case/${id}/trace`);
}

export function exportMask(base: string, id: string): Promise<{ path: string }> {
  return request(base, `/api/case/${id}/export`, { method: "POST" });
}
