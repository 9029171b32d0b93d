import csv
import io
import json

import pytest

from gnno.cli import main
from gnno.config import ConfigError, build_config, dump_config, load_config, parse_pairs
from gnno.pipeline import PipelineError, build_inputs, compare_samplers, run_pipeline

SMALL = {
    "synth_items": "60",
    "synth_blocks": "4",
    "synth_users": "150",
    "synth_length": "10",
    "epochs": "2",
    "embedding_dim": "8",
    "batch_size": "256",
    "candidate_set_size": "50",
    "k_values": "5,20",
    "analysis_max_pairs": "200",
}


def small_config(tmp_path, **extra):
    return build_config({**SMALL, "out": str(tmp_path / "run"), **extra})


def small_args(tmp_path, *extra):
    args = ["--out", str(tmp_path / "run")]
    for k, v in SMALL.items():
        args += ["--set", f"{k}={v}"]
    return args + list(extra)


class TestConfig:
    def test_parse_comments_and_blanks(self):
        pairs = parse_pairs(["# header", "", "epochs = 4  # trailing", "seed=3"])
        assert pairs == {"epochs": "4", "seed": "3"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_pairs(["epochs 4"])

    def test_preset_then_override(self):
        cfg = build_config({"preset": "toys", "neg_rand": "3"})
        s = cfg.train.sampler
        assert (s.neg_hard, s.neg_rand, s.pace_c, s.lambda_max) == (2, 3, 0.05, 0.2)

    def test_unknown_key_and_preset(self):
        with pytest.raises(ConfigError, match="bogus"):
            build_config({"bogus": "1"})
        with pytest.raises(ConfigError):
            build_config({"preset": "games"})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="epochs"):
            build_config({"epochs": "many"})
        with pytest.raises(ConfigError):
            build_config({"candidate_set_size": "3", "k_values": "5"})

    def test_seed_propagates(self):
        cfg = build_config({"seed": "7"})
        assert cfg.train.seed == cfg.eval.seed == cfg.analysis.seed == 7

    def test_dump_roundtrip(self, tmp_path):
        cfg = build_config({"preset": "phones", "window": "4", "k_values": "1,10", "delimiter": "\\t"})
        path = tmp_path / "c.conf"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("epochs = 4\nseed = 1\n")
        assert load_config(path, {"epochs": "9"}).train.epochs == 9

    def test_shipped_config_loads(self):
        cfg = load_config("configs/synthetic.conf")
        assert cfg.train.sampler.neg_hard == 9 and cfg.eval.candidate_set_size == 500


class TestPipeline:
    def test_all_stages_then_cached(self, tmp_path):
        cfg = small_config(tmp_path)
        results = run_pipeline(cfg)
        assert [r.stage for r in results] == ["ingest", "graph", "overlap", "train", "eval", "analyze"]
        assert not any(r.skipped for r in results)
        root = tmp_path / "run"
        for name in ["corpus/sequences.txt", "graph.tsv", "overlap.tsv", "model.npz", "eval_test.json",
                     "analysis/summary.json", "analysis/epoch_0000.csv", "manifest.json", "train_log.jsonl"]:
            assert (root / name).exists(), name
        manifest = json.loads((root / "manifest.json").read_text())
        for stage, entry in manifest["stages"].items():
            assert entry["seed"] == 0 and entry["config_hash"]
        audit = manifest["stages"]["train"]["info"]["audit"]
        assert audit["draws"] > 0 and audit["over_lambda"] == 0 and audit["self_samples"] == 0
        report = json.loads((root / "eval_test.json").read_text())
        assert report["config"]["seed"] == 0 and set(report["metrics"]) == {"HR@5", "HR@20", "NDCG@5", "NDCG@20"}

        again = run_pipeline(cfg)
        assert all(r.skipped for r in again)

    def test_missing_prerequisite(self, tmp_path):
        cfg = small_config(tmp_path)
        with pytest.raises(PipelineError, match="'ingest'"):
            run_pipeline(cfg, ["eval"])
        run_pipeline(cfg, ["ingest", "graph", "overlap"])
        with pytest.raises(PipelineError, match="run stage 'train' first"):
            run_pipeline(cfg, ["eval"])

    def test_stale_hash_needs_force(self, tmp_path):
        run_pipeline(small_config(tmp_path), ["ingest", "graph"])
        changed = small_config(tmp_path, window="2")
        with pytest.raises(PipelineError, match="different config"):
            run_pipeline(changed, ["graph"])
        results = run_pipeline(changed, ["graph"], force=True)
        assert not results[0].skipped
        with pytest.raises(PipelineError, match="different config"):
            run_pipeline(small_config(tmp_path), ["overlap"])

    def test_downstream_only(self, tmp_path):
        run_pipeline(small_config(tmp_path), ["ingest", "graph", "overlap"])
        results = run_pipeline(small_config(tmp_path), ["train"])
        assert [r.stage for r in results] == ["train"] and not results[0].skipped

    def test_ingest_log_with_kcore(self, tmp_path):
        log = tmp_path / "log.tsv"
        lines = [f"u{u}\ti{(u + t) % 6}\t{t}" for u in range(12) for t in range(6)]
        lines += ["lonely\tz\t1", "broken line"]
        log.write_text("\n".join(lines) + "\n")
        cfg = small_config(tmp_path, data=str(log), kcore="3", candidate_set_size="5", k_values="1,5")
        results = run_pipeline(cfg, ["ingest"])
        info = results[0].info
        assert info["errors"] == 1 and info["items"] == 6 and info["users"] == 12
        assert (tmp_path / "run" / "ingest_errors.txt").exists()


class TestCompare:
    def test_table_shape(self, tmp_path):
        cfg = small_config(tmp_path)
        inputs = build_inputs(cfg)
        result = compare_samplers(cfg, ["uniform", "dns", "gnno"], seeds=[0, 1], inputs=inputs)
        assert len(result.runs) == 6
        assert [r["sampler"] for r in result.table] == ["uniform", "dns", "gnno"]
        assert result.columns == ["HR@5", "NDCG@5", "HR@20", "NDCG@20"]
        for row in result.table:
            assert row["runs"] == 2
            assert all(set(row[c]) == {"mean", "std"} for c in result.columns)
        buf = io.StringIO()
        result.to_csv(buf)
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
        assert len(rows) == 4 and rows[0][:3] == ["sampler", "runs", "HR@5_mean"]

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            compare_samplers(small_config(tmp_path), [])


class TestCli:
    def test_run_and_rerun(self, tmp_path, capsys):
        assert main(["run", *small_args(tmp_path)]) == 0
        assert main(["run", *small_args(tmp_path)]) == 0
        assert capsys.readouterr().out.count("cached") == 6

    def test_stage_commands(self, tmp_path):
        args = small_args(tmp_path)
        for cmd in ["ingest", "build-graph", "build-overlap", "train", "eval", "analyze"]:
            assert main([cmd, *args]) == 0, cmd

    def test_prerequisite_error(self, tmp_path, capsys):
        assert main(["eval", *small_args(tmp_path)]) == 1
        assert "run stage" in capsys.readouterr().err

    def test_usage_errors(self, tmp_path):
        assert main([]) == 1
        assert main(["run", "--set", "epochs"]) == 1
        assert main(["run", *small_args(tmp_path), "--stages", "fly"]) == 1
        assert main(["compare", *small_args(tmp_path), "--samplers", ""]) == 1
        assert main(["train", "--set", "nope=1"]) == 1

    @pytest.mark.filterwarnings("ignore:5-core filtering")
    def test_data_error(self, tmp_path):
        log = tmp_path / "empty.tsv"
        log.write_text("u\ti\t1\n")
        assert main(["ingest", *small_args(tmp_path), "--input", str(log)]) == 2
        assert main(["ingest", *small_args(tmp_path), "--input", str(tmp_path / "missing.tsv")]) == 2

    def test_compare(self, tmp_path, capsys):
        assert main(["compare", *small_args(tmp_path), "--samplers", "uniform,gnno", "--seeds", "0,1"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert [line.split()[0] for line in out] == ["uniform", "gnno"]
        data = json.loads((tmp_path / "run" / "compare.json").read_text())
        assert len(data["runs"]) == 4

    def test_synth_data_then_ingest(self, tmp_path):
        log = tmp_path / "data" / "synth.tsv"
        assert main(["synth-data", *small_args(tmp_path), "--output", str(log)]) == 0
        assert len(log.read_text().splitlines()) == 150 * 10
        assert main(["ingest", *small_args(tmp_path), "--input", str(log), "--set", "kcore=1"]) == 0
