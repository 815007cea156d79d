"""Command line entry point: synth / skeletonize / sample / train / infer /
eval / proofread-sim / serve.

Every subcommand takes --seed, resolves its defaults into a RunManifest
written alongside its outputs, and can be replayed bit-exactly with
--from-manifest. Exit codes: 0 success, 1 usage error, 2 data error.
MORSEUQ_LOG in {error, info, debug} controls log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .grids import GridFormatError, load_grid, save_grid
from .inferpost import analyze_case
from .metrics import (CalSample, ari_voi, betti_errors, calibration, cldice,
                      dice)
from .morse import build_merge_tree, extract_structures
from .probdmt import SamplerConfig, sample_skeleton
from .proofread import simulate
from .regressor import TrainConfig, load_params, save_params, train
from .structgraph import load_case, load_corpus
from .synth import SynthConfig, generate_case

log = logging.getLogger("morseuq")

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(
        os.environ.get("MORSEUQ_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence(entropy=key[0] & 0xFFFFFFFFFFFFFFFF,
                                      spawn_key=tuple(key[1:])).generate_state(1)[0])


def write_manifest(out_dir, subcommand: str, config: dict, inputs: dict,
                   outputs: list[str]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": config.get("seed"),
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _apply_manifest(args):
    if getattr(args, "from_manifest", None):
        with open(args.from_manifest) as fh:
            manifest = json.load(fh)
        if manifest.get("subcommand") != args.subcommand:
            raise ValueError(
                f"manifest is for {manifest.get('subcommand')!r}, "
                f"not {args.subcommand!r}")
        for key, value in manifest["config"].items():
            setattr(args, key, value)
    return args


def _sampler_from(args) -> SamplerConfig:
    return SamplerConfig(u=args.u, gamma=args.gamma, alpha=args.alpha,
                         beta=args.beta, max_step=args.max_step, seed=args.seed)


def _add_sampler_flags(p):
    p.add_argument("--u", type=float, default=0.3)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--max-step", dest="max_step", type=int, default=50)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--from-manifest", dest="from_manifest", default=None)


def _parallel_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -------------------------------- subcommands ------------------------------ #

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = tuple(args.dims)
    case_cfgs = []
    for k in range(args.cases):
        case_cfgs.append(SynthConfig(
            dims=dims, n_curves=args.n_curves, thickness=args.thickness,
            gap_rate=args.gap_rate, spur_rate=args.spur_rate,
            blur_sigma=args.blur_sigma, noise_sigma=args.noise_sigma,
            seed=_derived_seed(args.seed, 2, k)))

    def build(item):
        k, cfg = item
        image, gt, likelihood = generate_case(cfg)
        case_dir = out / f"case_{k:03d}"
        case_dir.mkdir(exist_ok=True)
        save_grid(image, case_dir / "image.grd")
        save_grid(gt, case_dir / "gt.grd")
        save_grid(likelihood, case_dir / "likelihood.grd")
        return str(case_dir)

    outputs = _parallel_map(build, list(enumerate(case_cfgs)), args.jobs)
    config = {"cases": args.cases, "dims": list(dims), "n_curves": args.n_curves,
              "thickness": args.thickness, "gap_rate": args.gap_rate,
              "spur_rate": args.spur_rate, "blur_sigma": args.blur_sigma,
              "noise_sigma": args.noise_sigma, "seed": args.seed,
              "out": str(out),
              "case_seeds": [c.seed for c in case_cfgs]}
    write_manifest(out, "synth", config, {}, outputs)
    print(f"wrote {len(outputs)} cases under {out}")
    return 0


def _structure_record(s) -> dict:
    return {"id": s.id, "saddle": list(s.saddle), "max": list(s.max),
            "path": [list(c) for c in s.path], "persistence": s.persistence}


def cmd_skeletonize(args) -> int:
    likelihood = load_grid(args.likelihood)
    skel = extract_structures(
        build_merge_tree(likelihood, args.bg_threshold), likelihood)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for s in skel.structures:
            fh.write(json.dumps(_structure_record(s)) + "\n")
    config = {"likelihood": str(args.likelihood),
              "bg_threshold": args.bg_threshold, "seed": args.seed,
              "out": str(out)}
    write_manifest(out.parent, "skeletonize", config,
                   {"likelihood": str(args.likelihood)}, [str(out)])
    print(f"wrote {len(skel)} structures to {out}")
    return 0


def cmd_sample(args) -> int:
    likelihood = load_grid(args.likelihood)
    skel = extract_structures(
        build_merge_tree(likelihood, args.bg_threshold), likelihood)
    cfg = _sampler_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for t in range(1, args.runs + 1):
        samples = sample_skeleton(skel, likelihood, cfg, t)
        path = out / f"samples_run_{t:03d}.jsonl"
        with open(path, "w") as fh:
            for sid in sorted(samples):
                s = samples[sid]
                fh.write(json.dumps({
                    "structure_id": s.structure_id, "run": t,
                    "path": [list(c) for c in s.path],
                    "reached": s.reached, "was_retained": s.was_retained,
                    "crop_origin": list(s.crop_origin),
                    "crop_dims": list(s.crop_dims)}) + "\n")
        outputs.append(str(path))
    config = {"likelihood": str(args.likelihood), "u": cfg.u, "gamma": cfg.gamma,
              "alpha": cfg.alpha, "beta": cfg.beta, "max_step": cfg.max_step,
              "runs": args.runs, "bg_threshold": args.bg_threshold,
              "seed": args.seed, "out": str(out)}
    write_manifest(out, "sample", config,
                   {"likelihood": str(args.likelihood)}, outputs)
    print(f"wrote {args.runs} runs x {len(skel)} structures under {out}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    sampler_cfg = _sampler_from(args)
    train_cfg = TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed)
    params, trace = train(corpus, sampler_cfg, train_cfg, box=args.box,
                          bg_threshold=args.bg_threshold)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(params, out, box=args.box)
    trace_path = out.with_suffix(".trace.csv")
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(trace):
            writer.writerow([i, f"{v!r}"])
    config = {"corpus": str(args.corpus), "epochs": args.epochs, "lr": args.lr,
              "box": args.box, "bg_threshold": args.bg_threshold,
              "u": args.u, "gamma": args.gamma, "alpha": args.alpha,
              "beta": args.beta, "max_step": args.max_step,
              "seed": args.seed, "out": str(out)}
    write_manifest(out.parent, "train", config, {"corpus": str(args.corpus)},
                   [str(out), str(trace_path)])
    print(f"trained {args.epochs} epochs on {len(corpus)} cases; "
          f"loss {trace[0]:.4f} -> {trace[-1]:.4f}" if trace else "trained")
    return 0


def _infer_one(params, case, args, out_root: Path):
    sampler_cfg = _sampler_from(args)
    skel, result = analyze_case(params, case, sampler_cfg, args.runs,
                                box=args.box, bg_threshold=args.bg_threshold,
                                seed=args.seed)
    case_dir = out_root / case.case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    with open(case_dir / "estimates.jsonl", "w") as fh:
        for e in result.estimates:
            fh.write(json.dumps({
                "id": e.structure_id, "p_bar": e.p_bar, "var_bar": e.var_bar,
                "u_norm": e.u_norm, "accepted": e.accepted}) + "\n")
    save_grid(result.final_mask, case_dir / "final_mask.grd")
    save_grid(result.heatmap, case_dir / "heatmap.grd")
    save_grid(result.skeletal_mask, case_dir / "skeleton.grd")
    return str(case_dir)


def cmd_infer(args) -> int:
    params, header = load_params(args.model)
    if args.case:
        cases = [load_case(args.case)]
    else:
        cases = load_corpus(args.corpus)
    out_root = Path(args.out)
    outputs = _parallel_map(lambda c: _infer_one(params, c, args, out_root),
                            cases, args.jobs)
    config = {"model": str(args.model), "runs": args.runs, "box": args.box,
              "bg_threshold": args.bg_threshold, "u": args.u,
              "gamma": args.gamma, "alpha": args.alpha, "beta": args.beta,
              "max_step": args.max_step, "seed": args.seed,
              "case": args.case and str(args.case),
              "corpus": args.corpus and str(args.corpus), "out": str(out_root)}
    write_manifest(out_root, "infer", config, {"model": str(args.model)}, outputs)
    print(f"inferred {len(outputs)} cases under {out_root}")
    return 0


def _segmentation_report(pred, gt) -> dict:
    ari, voi = ari_voi(pred, gt)
    report = {"dice": dice(pred, gt), "cldice": cldice(pred, gt),
              "ari": ari, "voi": voi}
    errs = betti_errors(pred, gt)
    for k, e in enumerate(errs):
        report[f"betti{k}_error"] = e
    return report


def cmd_eval(args) -> int:
    if args.pred:
        pred = _binarize(load_grid(args.pred))
        gt = _binarize(load_grid(args.gt))
        report = _segmentation_report(pred, gt)
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text + "\n")
            write_manifest(out.parent, "eval",
                           {"pred": str(args.pred), "gt": str(args.gt),
                            "seed": args.seed, "out": str(out)},
                           {"pred": str(args.pred), "gt": str(args.gt)},
                           [str(out)])
        print(text)
        return 0
    # corpus mode: synth corpus dir + infer output dir
    corpus = load_corpus(args.corpus)
    out = Path(args.out or (Path(args.infer) / "eval"))
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    cal_samples = []
    for case in corpus:
        case_dir = Path(args.infer) / case.case_id
        if not case_dir.exists():
            raise FileNotFoundError(f"no inference outputs for {case.case_id}")
        pred = load_grid(case_dir / "final_mask.grd")
        report = _segmentation_report(pred, case.gt)
        reports[case.case_id] = report
        est_path = case_dir / "estimates.jsonl"
        if est_path.exists() and case.gt is not None:
            skel = extract_structures(
                build_merge_tree(case.likelihood, args.bg_threshold),
                case.likelihood)
            paths = {s.id: s.path for s in skel.structures}
            with open(est_path) as fh:
                for line in fh:
                    rec = json.loads(line)
                    z = float(np.mean([case.gt.data[tuple(c)]
                                       for c in paths[rec["id"]]]))
                    correct = (rec["p_bar"] >= 0.5) == (z >= 0.5)
                    cal_samples.append(CalSample(
                        confidence=min(max(1.0 - rec["u_norm"], 0.0), 1.0),
                        correct=correct))
    aggregate = {
        key: float(np.mean([r[key] for r in reports.values()]))
        for key in next(iter(reports.values()))
    } if reports else {}
    if cal_samples:
        ece, rows = calibration(cal_samples, args.bins)
        aggregate["ece"] = ece
        aggregate["n_structures"] = len(cal_samples)
        with open(out / "reliability.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "count", "acc", "conf"])
            for row in rows:
                writer.writerow([row.bin_index, row.count, row.acc, row.conf])
    for case_id, report in reports.items():
        with open(out / f"{case_id}.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    with open(out / "aggregate.json", "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
    config = {"corpus": str(args.corpus), "infer": str(args.infer),
              "bins": args.bins, "bg_threshold": args.bg_threshold,
              "seed": args.seed, "out": str(out)}
    write_manifest(out, "eval", config, {}, [str(out / "aggregate.json")])
    print(json.dumps(aggregate, indent=2, sort_keys=True))
    return 0


def _binarize(grid):
    from .grids import BinaryGrid
    if grid.data.dtype == bool:
        return grid
    return BinaryGrid(grid.data >= 0.5)


def cmd_proofread_sim(args) -> int:
    params, _ = load_params(args.model)
    corpus = load_corpus(args.corpus)
    sampler_cfg = _sampler_from(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curves = {}

    def run(case):
        skel, result = analyze_case(params, case, sampler_cfg, args.runs,
                                    box=args.box, bg_threshold=args.bg_threshold,
                                    seed=args.seed)
        return case.case_id, simulate(case, skel, result.estimates, result)

    for case_id, curve in _parallel_map(run, corpus, args.jobs):
        curves[case_id] = curve
    max_clicks = max(len(c) - 1 for c in curves.values())
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "clicks", "dice"])
        for case_id in sorted(curves):
            for clicks, d in curves[case_id]:
                writer.writerow([case_id, clicks, f"{d!r}"])
        # corpus mean, padding exhausted queues with their final dice
        for k in range(max_clicks + 1):
            vals = [curve[min(k, len(curve) - 1)][1]
                    for curve in curves.values()]
            writer.writerow(["mean", k, f"{float(np.mean(vals))!r}"])
    initial = float(np.mean([c[0][1] for c in curves.values()]))
    final = float(np.mean([c[-1][1] for c in curves.values()]))
    config = {"corpus": str(args.corpus), "model": str(args.model),
              "runs": args.runs, "box": args.box,
              "bg_threshold": args.bg_threshold, "u": args.u,
              "gamma": args.gamma, "alpha": args.alpha, "beta": args.beta,
              "max_step": args.max_step, "seed": args.seed, "out": str(out)}
    write_manifest(out.parent, "proofread-sim", config,
                   {"corpus": str(args.corpus), "model": str(args.model)},
                   [str(out)])
    print(f"mean dice {initial:.4f} -> {final:.4f} over {len(curves)} cases")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import build_store, create_app

    params, header = load_params(args.model)
    store = build_store(args.corpus, params, _sampler_from(args), args.runs,
                        box=args.box, bg_threshold=args.bg_threshold,
                        seed=args.seed)
    app = create_app(store, export_dir=args.export_dir)
    print(f"serving {len(store)} cases on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# --------------------------------- parser ---------------------------------- #

def build_parser() -> _Parser:
    parser = _Parser(prog="morseuq", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--dims", type=int, nargs="+", default=[64, 64])
    p.add_argument("--n-curves", dest="n_curves", type=int, default=3)
    p.add_argument("--thickness", type=int, default=3)
    p.add_argument("--gap-rate", dest="gap_rate", type=float, default=0.2)
    p.add_argument("--spur-rate", dest="spur_rate", type=float, default=0.15)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float, default=1.0)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.04)
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("skeletonize", help="decompose a likelihood into structures")
    p.add_argument("--likelihood", required=True)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    p.add_argument("--out", default="structures.jsonl")
    _add_common(p)
    p.set_defaults(fn=cmd_skeletonize)

    p = sub.add_parser("sample", help="draw stochastic skeletons per structure")
    p.add_argument("--likelihood", required=True)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_sampler_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("train", help="train the joint regressor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--box", type=int, default=32)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    _add_sampler_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="run MC inference over cases")
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--case")
    group.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--box", type=int, default=32)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    _add_sampler_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="segmentation/calibration metrics")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--corpus")
    p.add_argument("--infer")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("proofread-sim", help="simulate oracle proofreading")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="curve.csv")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--box", type=int, default=32)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    _add_sampler_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_proofread_sim)

    p = sub.add_parser("serve", help="start the proofreading HTTP service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--box", type=int, default=32)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float, default=0.01)
    p.add_argument("--export-dir", dest="export_dir", default="exports")
    _add_sampler_flags(p)
    _add_common(p)
    p.set_defaults(fn=cmd_serve)

    return parser


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        args = _apply_manifest(args)
        if args.subcommand == "eval" and not args.pred and not args.corpus:
            parser.error("eval requires --pred/--gt or --corpus/--infer")
        if args.subcommand == "eval" and args.pred and not args.gt:
            parser.error("--pred requires --gt")
        return args.fn(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    except (GridFormatError, ValueError, FileNotFoundError, KeyError) as exc:
        log.error("%s", exc)
        print(f"morseuq {args.subcommand}: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
