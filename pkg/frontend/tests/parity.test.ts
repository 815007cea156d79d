/** End-to-end parity against a live service: driving the oracle decision
 * sequence through the UI's API client must reproduce the simulator's final
 * Dice exactly, and a full refresh after N decisions must render the same
 * mask as the incremental path. */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { fetchCase, fetchTrace, listCases, postDecision } from "../src/api.js";
import { decodeGrdBase64, decodeGrdBytes, foregroundCount, type Grid } from "../src/grd.js";

const PORT = 8123;
const BASE = `http://127.0.0.1:${PORT}`;
const PY = "python3";
const SIM_ARGS = ["--bg-threshold", "0.2", "--seed", "5", "--runs", "5", "--box", "32"];

let fixtureDir: string;
let server: ChildProcess | null = null;
let simCurve: Map<string, [number, number][]>;

function cli(args: string[]) {
  execFileSync(PY, ["-m", "morseuq.cli", ...args], { stdio: "pipe" });
}

function parseCurve(csvText: string): Map<string, [number, number][]> {
  const rows = csvText.trim().split("\n").slice(1);
  const out = new Map<string, [number, number][]>();
  for (const row of rows) {
    const [caseId, clicks, dice] = row.split(",");
    if (!out.has(caseId)) out.set(caseId, []);
    out.get(caseId)!.push([Number(clicks), Number(dice)]);
  }
  for (const curve of out.values()) curve.sort((a, b) => a[0] - b[0]);
  return out;
}

async function waitForServer(timeoutMs = 120_000) {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      await listCases(BASE);
      return;
    } catch {
      if (Date.now() > deadline) throw new Error("service did not come up");
      await new Promise((r) => setTimeout(r, 500));
    }
  }
}

/** Oracle rule: accept a structure iff the mean ground truth over its
 * deterministic path is at least 0.5. */
function oracleAccept(gt: Grid, path: number[][]): boolean {
  const w = gt.dims[1];
  let total = 0;
  for (const [y, x] of path) total += gt.data[y * w + x] as number;
  return total / path.length >= 0.5;
}

beforeAll(async () => {
  fixtureDir = mkdtempSync(join(tmpdir(), "morseuq-parity-"));
  const corpus = join(fixtureDir, "corpus");
  const ckpt = join(fixtureDir, "zero.ckpt");
  const curveCsv = join(fixtureDir, "sim_curve.csv");
  cli(["synth", "--out", corpus, "--cases", "3", "--dims", "48", "48",
       "--noise-sigma", "0", "--spur-rate", "0.5", "--gap-rate", "0.3",
       "--seed", "42"]);
  // zero parameters: p_hat = 0 (everything rejected), s = 0 so every
  // structure's uncertainty is 1 - 1/e >= 0.5 and lands in the queue
  execFileSync(PY, ["-c",
    "from morseuq.regressor import init_params, save_params\n" +
    "p = init_params(2, seed=0)\n" +
    "for _, t in p.tensors(): t[...] = 0.0\n" +
    `save_params(p, ${JSON.stringify(ckpt)}, box=32)`], { stdio: "pipe" });
  cli(["proofread-sim", "--corpus", corpus, "--model", ckpt,
       "--out", curveCsv, ...SIM_ARGS]);
  simCurve = parseCurve(readFileSync(curveCsv, "utf-8"));
  server = spawn(PY, ["-m", "morseuq.cli", "serve", "--corpus", corpus,
                      "--model", ckpt, "--port", String(PORT), ...SIM_ARGS],
                 { stdio: "ignore" });
  await waitForServer();
}, 240_000);

afterAll(() => {
  server?.kill();
  rmSync(fixtureDir, { recursive: true, force: true });
});

describe("service parity", () => {
  it("oracle decisions through the API reproduce the simulator's dice curve",
     { timeout: 120_000 }, async () => {
    const cases = await listCases(BASE);
    expect(cases.length).toBe(3);
    for (const { id } of cases) {
      const payload = await fetchCase(BASE, id);
      const gt = decodeGrdBytes(
        new Uint8Array(readFileSync(join(fixtureDir, "corpus", id, "gt.grd"))));
      const expected = simCurve.get(id)!;
      expect(payload.pending.length).toBe(expected.length - 1);
      const paths = new Map(payload.structures.map((s) => [s.id, s.path]));
      let lastDice = payload.dice;
      expect(lastDice).toBeCloseTo(expected[0][1], 12);
      let clicks = 0;
      for (const sid of payload.pending) {
        const result = await postDecision(BASE, id, sid,
                                          oracleAccept(gt, paths.get(sid)!));
        clicks += 1;
        lastDice = result.dice;
        expect(lastDice).toBe(expected[clicks][1]);
      }
      expect(lastDice).toBe(expected[expected.length - 1][1]);
      const trace = await fetchTrace(BASE, id);
      expect(trace.trace.length).toBe(clicks + 1);
    }
  });

  it("a full refresh renders the same mask as the incremental path",
     { timeout: 60_000 }, async () => {
    const cases = await listCases(BASE);
    // decisions were all applied in the previous test; two independent
    // fetches must agree bit-for-bit with each other and the reported count
    for (const { id } of cases) {
      const a = await fetchCase(BASE, id);
      const b = await fetchCase(BASE, id);
      expect(a.final_mask).toBe(b.final_mask);
      const mask = decodeGrdBase64(a.final_mask);
      expect(foregroundCount(mask)).toBe(a.mask_pixels);
      expect(a.dice).toBe(b.dice);
      expect(a.pending.length).toBe(0);
    }
  });
});
