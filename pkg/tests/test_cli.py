import json
import os

import pytest

from ddce.cli import main
from ddce.corpus import save_jsonl
from ddce.embed import load_precomputed

from conftest import make_benchmark


def run(*argv):
    return main(list(argv))


@pytest.fixture
def workspace(tmp_path):
    """Labeled/unlabeled/outlier-source JSONL files plus a fast config."""
    d_l, d_ul, source = make_benchmark(seed=1, o=6, novel=2, rows=20)
    _, d_ul_clean, _ = make_benchmark(seed=1, o=6, novel=2, rows=20, test_outlier_ratio=0.0)
    paths = {
        "labeled": str(tmp_path / "labeled.jsonl"),
        "unlabeled": str(tmp_path / "unlabeled.jsonl"),
        "unlabeled_clean": str(tmp_path / "unlabeled_clean.jsonl"),
        "source": str(tmp_path / "source.jsonl"),
        "config": str(tmp_path / "config.json"),
        "out": str(tmp_path / "out"),
    }
    save_jsonl(d_l, paths["labeled"])
    save_jsonl(d_ul, paths["unlabeled"])
    save_jsonl(d_ul_clean, paths["unlabeled_clean"])
    save_jsonl(source, paths["source"])
    with open(paths["config"], "w") as fh:
        json.dump(
            {
                "k_models": 2,
                "search_space": {"n_trials": 25},
                "outlier_ratio": 0.5,
            },
            fh,
        )
    return paths


class TestUsageErrors:
    def test_unknown_subcommand(self):
        assert run("frobnicate") == 1

    def test_no_subcommand(self):
        assert run() == 1

    def test_missing_required_flag(self):
        assert run("synth", "--intents", "3") == 1

    def test_version_exits_zero(self):
        assert run("--version") == 0


class TestSynthInjectEvaluate:
    def test_synth_writes_dataset_and_oracle(self, tmp_path):
        out = str(tmp_path / "d")
        assert run("synth", "--intents", "4", "--per-intent", "6",
                   "--out", out, "--seed", "3") == 0
        lines = open(os.path.join(out, "labeled.jsonl")).read().splitlines()
        assert len(lines) == 24
        oracle = load_precomputed(os.path.join(out, "oracle.emb1"))
        assert oracle.n == 24 and oracle.d == 16
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["command"] == "synth" and manifest["master_seed"] == 3

    def test_inject_appends_flagged_rows(self, tmp_path, workspace):
        out = str(tmp_path / "inj")
        assert run("inject", "--data", workspace["unlabeled"],
                   "--source", workspace["source"],
                   "--ratio", "0.5", "--out", out) == 0
        rows = [json.loads(x) for x in open(os.path.join(out, "injected.jsonl"))]
        flagged = [r for r in rows if r.get("outlier")]
        assert flagged and all(r["intent"] is None for r in flagged)

    def test_evaluate_prints_scores(self, workspace, capsys, tmp_path):
        pred = str(tmp_path / "pred.jsonl")
        rows = [json.loads(x) for x in open(workspace["unlabeled"])]
        with open(pred, "w") as fh:
            for r in rows:
                cluster = -1 if r.get("outlier") else hash(r["intent"]) % 3
                fh.write(json.dumps({"id": r["id"], "cluster": cluster}) + "\n")
        assert run("evaluate", "--truth", workspace["unlabeled"], "--pred", pred) == 0
        scores = json.loads(capsys.readouterr().out.strip())
        assert set(scores) == {"score_c", "score_ari", "score"}

    def test_missing_file_is_data_error(self, tmp_path):
        assert run("evaluate", "--truth", "/nope.jsonl", "--pred", "/nope2.jsonl") == 2


class TestClusterCommand:
    def test_cluster_on_emb1(self, tmp_path):
        out = str(tmp_path / "d")
        run("synth", "--intents", "3", "--per-intent", "10", "--sigma", "0.05",
            "--out", out, "--seed", "1")
        cl_out = str(tmp_path / "cl")
        assert run("cluster", "--embeddings", os.path.join(out, "oracle.emb1"),
                   "--max-eps", "0.4", "--xi", "0.05", "--min-samples", "5",
                   "--out", cl_out) == 0
        rows = [json.loads(x) for x in open(os.path.join(cl_out, "partition.jsonl"))]
        assert len(rows) == 30
        assert {r["cluster"] for r in rows} - {-1}


class TestEnsembleCommand:
    def test_ensemble_writes_outputs(self, workspace, capsys):
        code = run("ensemble", "--labeled", workspace["labeled"],
                   "--unlabeled", workspace["unlabeled"],
                   "--outlier-source", workspace["source"],
                   "--config", workspace["config"], "--seed", "5",
                   "--out", workspace["out"])
        assert code == 0
        report = json.load(open(os.path.join(workspace["out"], "report.json")))
        assert report["config"]["master_seed"] == 5
        assert report["partition_path"] == "partition.jsonl"
        assert len(report["base_models"]) == 2
        assert report["consensus"]["function"] == "BOKV"
        assert report["consensus_test_scores"] is not None
        out = capsys.readouterr().out
        assert "score" in out

    def test_ensemble_deterministic_bytes(self, workspace, tmp_path):
        args = ["ensemble", "--labeled", workspace["labeled"],
                "--unlabeled", workspace["unlabeled"],
                "--outlier-source", workspace["source"],
                "--config", workspace["config"], "--seed", "7"]
        out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        assert run(*args, "--out", out1) == 0
        assert run(*args, "--out", out2) == 0
        for name in ("partition.jsonl", "report.json"):
            b1 = open(os.path.join(out1, name), "rb").read()
            b2 = open(os.path.join(out2, name), "rb").read()
            assert b1 == b2

    def test_bad_config_key_is_data_error(self, workspace, tmp_path):
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            json.dump({"k_modelz": 2}, fh)
        assert run("ensemble", "--labeled", workspace["labeled"],
                   "--unlabeled", workspace["unlabeled"],
                   "--outlier-source", workspace["source"],
                   "--config", bad, "--out", str(tmp_path / "x")) == 2


class TestTrainAndBaseline:
    def test_train_writes_artifacts(self, workspace):
        code = run("train", "--labeled", workspace["labeled"],
                   "--outlier-source", workspace["source"],
                   "--config", workspace["config"], "--seed", "2",
                   "--out", workspace["out"])
        assert code == 0
        payload = json.load(open(os.path.join(workspace["out"], "artifacts.json")))
        assert len(payload["models"]) == 2
        assert payload["models"][0]["encoder"]["W"]

    def test_baseline_kmeans(self, workspace, capsys):
        code = run("baseline-kmeans", "--labeled", workspace["labeled"],
                   "--unlabeled", workspace["unlabeled"],
                   "--config", workspace["config"], "--seed", "2",
                   "--out", workspace["out"])
        assert code == 0
        scores = json.load(open(os.path.join(workspace["out"], "scores.json")))
        assert 0.0 <= scores["score"] <= 1.0


class TestSweepCommands:
    def test_sweep_alpha(self, workspace, capsys):
        code = run("sweep-alpha", "--labeled", workspace["labeled"],
                   "--unlabeled", workspace["unlabeled"],
                   "--outlier-source", workspace["source"],
                   "--alphas", "0.5", "--reps", "2",
                   "--config", workspace["config"], "--out", workspace["out"])
        assert code == 0
        lines = open(os.path.join(workspace["out"], "alpha_sweep.csv")).read().splitlines()
        assert lines[0] == "alpha,mean_score,var_score" and len(lines) == 2

    def test_sweep_outliers(self, workspace):
        code = run("sweep-outliers", "--labeled", workspace["labeled"],
                   "--unlabeled", workspace["unlabeled_clean"],
                   "--outlier-source", workspace["source"],
                   "--ratios", "0.0,0.5",
                   "--config", workspace["config"], "--out", workspace["out"])
        assert code == 0
        lines = open(os.path.join(workspace["out"], "outlier_sweep.csv")).read().splitlines()
        assert len(lines) == 3

    def test_sweep_size(self, workspace):
        code = run("sweep-size", "--labeled", workspace["labeled"],
                   "--unlabeled", workspace["unlabeled"],
                   "--outlier-source", workspace["source"],
                   "--o-values", "4", "--reps", "2",
                   "--config", workspace["config"], "--out", workspace["out"])
        assert code == 0
        lines = open(os.path.join(workspace["out"], "size_sweep.csv")).read().splitlines()
        assert lines[0] == "o,mean_rel_improvement,median_rel_improvement,wilcoxon_p"
        assert len(lines) == 2
