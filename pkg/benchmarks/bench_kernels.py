#!/usr/bin/env python3
"""Benchmark the numba-compiled kernels against the pure-Python/NumPy fallback.

Runs the hot path (merge-tree sweep, structure extraction, perturb-and-walk
sampling, geodesic labeling) on a synthetic case in the current mode, and with
``--both`` re-runs itself in a subprocess with MORSEUQ_NO_NUMBA=1 to print a
side-by-side comparison.
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_benchmarks(dims, seed):
    from morseuq import kernels
    from morseuq.grids import BinaryGrid
    from morseuq.inferpost import diffuse_uncertainty, threshold_and_overlay
    from morseuq.morse import build_merge_tree, extract_structures
    from morseuq.probdmt import SamplerConfig, sample_skeleton
    from morseuq.synth import SynthConfig, generate_case

    kernels.warmup()
    image, gt, likelihood = generate_case(SynthConfig(dims=dims, seed=seed))
    results = {"has_numba": kernels.HAS_NUMBA}

    t0 = time.perf_counter()
    tree = build_merge_tree(likelihood, 0.01)
    results["merge_tree"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    skel = extract_structures(tree, likelihood)
    results["extract_structures"] = time.perf_counter() - t0
    results["n_structures"] = len(skel)

    t0 = time.perf_counter()
    sample_skeleton(skel, likelihood, SamplerConfig(seed=1), 1)
    results["sample_run"] = time.perf_counter() - t0

    from morseuq.inferpost import StructureEstimate, uncertainty_from_variance
    ests = [StructureEstimate(structure_id=s.id, p_bar=0.9, var_bar=0.5,
                              u_norm=uncertainty_from_variance(0.5),
                              accepted=True, sample_paths=())
            for s in skel.structures]
    backbone = BinaryGrid(likelihood.data >= 0.5)
    t0 = time.perf_counter()
    skeletal, final = threshold_and_overlay(ests, skel, backbone)
    diffuse_uncertainty(ests, skel, final)
    results["geodesic_labeling"] = time.perf_counter() - t0
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dims", type=int, nargs=2, default=[256, 256])
    parser.add_argument("--seed", type=int, default=99)
    parser.add_argument("--both", action="store_true",
                        help="also run the NumPy fallback in a subprocess")
    parser.add_argument("--json", action="store_true",
                        help="emit raw JSON (used by the subprocess)")
    args = parser.parse_args()

    results = run_benchmarks(tuple(args.dims), args.seed)
    if args.json:
        print(json.dumps(results))
        return

    mode = "numba" if results["has_numba"] else "numpy fallback"
    print(f"mode: {mode}; {args.dims[0]}x{args.dims[1]} case, "
          f"{results['n_structures']} structures")
    keys = ["merge_tree", "extract_structures", "sample_run", "geodesic_labeling"]
    for key in keys:
        print(f"  {key:<22} {results[key]*1000:10.1f} ms")

    if not args.both:
        return
    env = dict(os.environ, MORSEUQ_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, __file__, "--dims", *map(str, args.dims),
         "--seed", str(args.seed), "--json"],
        env=env, capture_output=True, text=True, check=True)
    fallback = json.loads(out.stdout.strip().splitlines()[-1])
    assert not fallback["has_numba"]
    print(f"\n{'kernel':<22} {'numba':>12} {'fallback':>12} {'speedup':>9}")
    for key in keys:
        speedup = fallback[key] / results[key] if results[key] > 0 else float("inf")
        print(f"{key:<22} {results[key]*1000:>9.1f} ms {fallback[key]*1000:>9.1f} ms "
              f"{speedup:>8.1f}x")


if __name__ == "__main__":
    main()
