import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from morseuq.cli import run
from morseuq.grids import BinaryGrid, save_grid


def tree_digest(root: Path) -> dict:
    """Stable content hash per file, with volatile absolute paths masked."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "run_manifest.json":
                manifest = json.loads(data)
                manifest.pop("inputs", None)
                for key in ("out", "corpus", "model", "likelihood", "case", "infer"):
                    manifest.get("config", {}).pop(key, None)
                manifest["outputs"] = [Path(o).name for o in manifest["outputs"]]
                data = json.dumps(manifest, sort_keys=True).encode()
            out[str(p.relative_to(root))] = hashlib.sha256(data).hexdigest()
    return out


class TestExitCodes:
    def test_missing_required_flag_is_usage_error(self, capsys):
        assert run(["skeletonize"]) == 1

    def test_unknown_flag_is_usage_error(self):
        assert run(["synth", "--bogus", "x"]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert run(["frobnicate"]) == 1

    def test_missing_file_is_data_error(self, tmp_path):
        assert run(["skeletonize", "--likelihood", str(tmp_path / "nope.grd"),
                    "--out", str(tmp_path / "s.jsonl")]) == 2

    def test_malformed_grid_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.grd"
        bad.write_bytes(b'{"magic":"GRD1","dims":[4,4],"dtype":"f32"}\n' + b"ab")
        assert run(["skeletonize", "--likelihood", str(bad),
                    "--out", str(tmp_path / "s.jsonl")]) == 2


class TestSynth:
    def test_writes_cases_and_manifest(self, tmp_path):
        out = tmp_path / "corpus"
        assert run(["synth", "--out", str(out), "--cases", "3",
                    "--dims", "32", "32", "--seed", "5"]) == 0
        for k in range(3):
            case = out / f"case_{k:03d}"
            for name in ("image.grd", "gt.grd", "likelihood.grd"):
                assert (case / name).exists()
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["subcommand"] == "synth"
        assert manifest["seed"] == 5
        assert len(manifest["config"]["case_seeds"]) == 3

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["synth", "--out", str(out), "--cases", "2",
                        "--dims", "32", "32", "--seed", "9"]) == 0
        assert tree_digest(a) == tree_digest(b)

    def test_jobs_do_not_change_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["synth", "--out", str(a), "--cases", "4",
                    "--dims", "32", "32", "--seed", "3"]) == 0
        assert run(["synth", "--out", str(b), "--cases", "4",
                    "--dims", "32", "32", "--seed", "3", "--jobs", "4"]) == 0
        assert tree_digest(a) == tree_digest(b)


class TestSkeletonizeAndSample:
    @pytest.fixture()
    def likelihood_path(self, tmp_path):
        out = tmp_path / "corpus"
        assert run(["synth", "--out", str(out), "--cases", "1",
                    "--dims", "32", "32", "--seed", "2",
                    "--noise-sigma", "0"]) == 0
        return out / "case_000" / "likelihood.grd"

    def test_skeletonize_jsonl_schema(self, tmp_path, likelihood_path):
        out = tmp_path / "structures.jsonl"
        assert run(["skeletonize", "--likelihood", str(likelihood_path),
                    "--bg-threshold", "0.2", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines
        rec = json.loads(lines[0])
        assert set(rec) == {"id", "saddle", "max", "path", "persistence"}
        assert rec["path"][0] == rec["saddle"]
        assert rec["path"][-1] == rec["max"]

    def test_sample_runs(self, tmp_path, likelihood_path):
        out = tmp_path / "samples"
        assert run(["sample", "--likelihood", str(likelihood_path),
                    "--bg-threshold", "0.2", "--runs", "2",
                    "--seed", "4", "--out", str(out)]) == 0
        runs = sorted(out.glob("samples_run_*.jsonl"))
        assert len(runs) == 2
        rec = json.loads(runs[0].read_text().splitlines()[0])
        assert {"structure_id", "run", "path", "reached",
                "was_retained"} <= set(rec)


class TestEval:
    def test_identical_masks_dice_one(self, tmp_path, capsys):
        mask = BinaryGrid(np.eye(16, dtype=bool))
        p = tmp_path / "m.grd"
        save_grid(mask, p)
        assert run(["eval", "--pred", str(p), "--gt", str(p)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["dice"] == 1.0
        assert report["cldice"] == 1.0
        assert report["betti0_error"] == 0

    def test_pred_without_gt_usage_error(self, tmp_path):
        p = tmp_path / "m.grd"
        save_grid(BinaryGrid(np.eye(8, dtype=bool)), p)
        assert run(["eval", "--pred", str(p)]) == 1

    def test_scalar_pred_is_binarized(self, tmp_path, capsys):
        from morseuq.grids import ScalarGrid
        arr = np.zeros((8, 8))
        arr[2:4, :] = 0.9
        save_grid(ScalarGrid(arr), tmp_path / "p.grd")
        save_grid(BinaryGrid(arr >= 0.5), tmp_path / "g.grd")
        assert run(["eval", "--pred", str(tmp_path / "p.grd"),
                    "--gt", str(tmp_path / "g.grd")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["dice"] == 1.0


@pytest.mark.slow
class TestPipelineDeterminism:
    def _pipeline(self, root: Path) -> dict:
        corpus = root / "corpus"
        model = root / "model.ckpt"
        inferred = root / "inferred"
        evald = root / "eval"
        assert run(["synth", "--out", str(corpus), "--cases", "2",
                    "--dims", "32", "32", "--seed", "7",
                    "--noise-sigma", "0"]) == 0
        assert run(["skeletonize",
                    "--likelihood", str(corpus / "case_000" / "likelihood.grd"),
                    "--bg-threshold", "0.2",
                    "--out", str(root / "structures.jsonl")]) == 0
        assert run(["sample",
                    "--likelihood", str(corpus / "case_000" / "likelihood.grd"),
                    "--bg-threshold", "0.2", "--runs", "2", "--seed", "1",
                    "--out", str(root / "samples")]) == 0
        assert run(["train", "--corpus", str(corpus), "--out", str(model),
                    "--epochs", "2", "--box", "16", "--bg-threshold", "0.2",
                    "--seed", "11"]) == 0
        assert run(["infer", "--model", str(model), "--corpus", str(corpus),
                    "--out", str(inferred), "--runs", "2", "--box", "16",
                    "--bg-threshold", "0.2", "--seed", "13"]) == 0
        assert run(["eval", "--corpus", str(corpus), "--infer", str(inferred),
                    "--bg-threshold", "0.2", "--out", str(evald)]) == 0
        return tree_digest(root)

    def test_two_runs_byte_identical(self, tmp_path):
        assert self._pipeline(tmp_path / "a") == self._pipeline(tmp_path / "b")


class TestManifestReplay:
    def test_replay_reproduces_outputs(self, tmp_path):
        a = tmp_path / "a"
        assert run(["synth", "--out", str(a), "--cases", "2",
                    "--dims", "32", "32", "--seed", "21",
                    "--gap-rate", "0.4"]) == 0
        manifest_path = a / "run_manifest.json"
        b = tmp_path / "b"
        manifest = json.loads(manifest_path.read_text())
        manifest["config"]["out"] = str(b)
        replay = tmp_path / "replay.json"
        replay.write_text(json.dumps(manifest))
        assert run(["synth", "--out", "ignored", "--from-manifest",
                    str(replay)]) == 0
        da = {k: v for k, v in tree_digest(a).items() if k != "run_manifest.json"}
        db = {k: v for k, v in tree_digest(b).items() if k != "run_manifest.json"}
        assert da == db
