/** GRD1 decoding: one JSON header line + raw little-endian payload. */

export interface Grid {
  dims: number[];
  dtype: "f32" | "u8";
  /** Row-major values; u8 masks decode to 0/1. */
  data: Float32Array | Uint8Array;
}

export function decodeGrdBytes(bytes: Uint8Array): Grid {
  const newline = bytes.indexOf(0x0a);
  if (newline < 0) throw new Error("GRD1: missing header line");
  const header = JSON.parse(new TextDecoder().decode(bytes.subarray(0, newline)));
  if (header.magic !== "GRD1") throw new Error("GRD1: bad magic");
  const dims: number[] = header.dims;
  if (!Array.isArray(dims) || dims.length < 2 || dims.length > 3) {
    throw new Error(`GRD1: bad dims ${JSON.stringify(dims)}`);
  }
  const n = dims.reduce((a, b) => a * b, 1);
  const payload = bytes.subarray(newline + 1);
  if (header.dtype === "f32") {
    if (payload.byteLength !== n * 4) throw new Error("GRD1: payload length mismatch");
    // copy to guarantee 4-byte alignment before the Float32Array view
    const buf = payload.slice().buffer;
    return { dims, dtype: "f32", data: new Float32Array(buf, 0, n) };
  }
  if (header.dtype === "u8") {
    if (payload.byteLength !== n) throw new Error("GRD1: payload length mismatch");
    return { dims, dtype: "u8", data: payload.slice() };
  }
  throw new Error(`GRD1: unsupported dtype ${header.dtype}`);
}

export function decodeGrdBase64(b64: string): Grid {
  let bytes: Uint8Array;
  if (typeof atob === "function") {
    const raw = atob(b64);
    bytes = new Uint8Array(raw.length);
    for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  } else {
    // node (tests): Buffer without pulling node types into the DOM build
    const buf = (globalThis as { Buffer?: { from(s: string, e: string): Uint8Array } }).Buffer;
    if (!buf) throw new Error("no base64 decoder available");
    bytes = new Uint8Array(buf.from(b64, "base64"));
  }
  return decodeGrdBytes(bytes);
}

export function foregroundCount(grid: Grid): number {
  let count = 0;
  for (let i = 0; i < grid.data.length; i++) {
    if (grid.data[i] !== 0) count++;
  }
  return count;
}

/** Axial slice of a 3D grid (2D grids pass through untouched). */
export function sliceGrid(grid: Grid, z: number): Grid {
  if (grid.dims.length === 2) return grid;
  const [d, h, w] = grid.dims;
  const zi = Math.max(0, Math.min(d - 1, z));
  const start = zi * h * w;
  return {
    dims: [h, w],
    dtype: grid.dtype,
    data: grid.data.subarray(start, start + h * w) as Float32Array | Uint8Array,
  };
}
