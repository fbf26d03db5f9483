"""Configuration handling, synthetic generation, benchmark table, and the
command-line pipeline."""

import numpy as np
import pytest

from intentgc.bench import bench_conv, doubling_ratios, format_table
from intentgc.cli import main
from intentgc.config import (RunConfig, fingerprint, normalized_text,
                             parse_config)
from intentgc.errors import ConfigError
from intentgc.graph import load_graph, load_schema
from intentgc.synth import SyntheticSpec, gen_synthetic


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = parse_config("")
        assert cfg.learning_rate == 0.0001
        assert cfg.batch_size == 200
        assert cfg.margin == 0.3
        assert cfg.q == 2
        assert cfg.rho == 10
        assert cfg.n_filters == 3
        assert cfg.negatives_per_edge == 5
        assert cfg.momentum == 0.9
        assert cfg.stddev_network == 0.8
        assert cfg.stddev_embedding == 0.4
        assert cfg.dense_widths == (110, 800, 300, 100)
        assert cfg.hot_threshold == 20_000

    def test_parse_overrides_and_comments(self):
        cfg = parse_config("# comment\n\nrho = 4\ndense_widths = 8,16,4\nmargin = 1.5\n")
        assert cfg.rho == 4
        assert cfg.dense_widths == (8, 16, 4)
        assert cfg.margin == 1.5

    def test_unknown_key_is_error(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("learning_rat = 0.1\n")

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("batch_size = -5\n")
        with pytest.raises(ConfigError):
            parse_config("mode = sideways\n")
        with pytest.raises(ConfigError):
            parse_config("rho = ten\n")

    def test_fingerprint_stable_and_sensitive(self):
        a, b = RunConfig(), RunConfig()
        assert fingerprint(a) == fingerprint(b)
        b.rho = 9
        assert fingerprint(a) != fingerprint(b)
        assert len(fingerprint(a)) == 12

    def test_normalized_text_sorted(self):
        lines = normalized_text(RunConfig()).splitlines()
        assert lines == sorted(lines)


class TestGenSynthetic:
    def test_deterministic_bytes(self, tmp_path):
        spec = SyntheticSpec(n_users=30, n_items=30, seed=5)
        a = gen_synthetic(spec, tmp_path / "a")
        b = gen_synthetic(spec, tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_loads_back_and_counts(self, tmp_path):
        spec = SyntheticSpec(n_users=24, n_items=30, aux_types=2, seed=1)
        paths = gen_synthetic(spec, tmp_path)
        graph, _ = load_graph(paths["graph"])
        assert graph.node_counts[:2] == [24, 30]
        assert len(graph.aux_edges) == 2
        schema = load_schema(paths["schema"])
        assert schema.encoded_width("user") == spec.encoded_width

    def test_zero_noise_labels_stay_in_block(self, tmp_path):
        spec = SyntheticSpec(n_users=20, n_items=20, blocks=2, noise=0.0, seed=2)
        paths = gen_synthetic(spec, tmp_path)
        graph, _ = load_graph(paths["graph"])
        for u, v in graph.labeled_edges:
            assert u % 2 == v % 2

    def test_split_is_disjoint_and_users_keep_train_edges(self, tmp_path):
        spec = SyntheticSpec(n_users=25, n_items=25, seed=3)
        paths = gen_synthetic(spec, tmp_path)
        graph, iddict = load_graph(paths["graph"])
        train = {tuple(e) for e in graph.labeled_edges}
        test = set()
        for line in paths["test_pairs"].read_text().splitlines():
            u, v = line.split("\t")
            test.add((iddict.lookup("user", u), iddict.lookup("item", v)))
        assert test and not (train & test)
        train_users = {u for u, _ in train}
        assert {u for u, _ in test} <= train_users

    def test_categories_cross_blocks(self, tmp_path):
        spec = SyntheticSpec(n_users=16, n_items=40, blocks=2, seed=4)
        paths = gen_synthetic(spec, tmp_path)
        graph, _ = load_graph(paths["graph"])
        for cat in np.unique(graph.leaf_category):
            blocks = {int(i) % 2 for i in np.flatnonzero(graph.leaf_category == cat)}
            assert blocks == {0, 1}

    @pytest.mark.parametrize("gen_seed", [1, 2, 3])
    def test_full_noise_leaves_labels_uninformative(self, tmp_path, gen_seed):
        # noise 0.5 corrupts every edge, so a trained model cannot beat a
        # coin flip on the held-out pairs
        from intentgc.evalinfer import infer_all, load_pairs, ranking_auc
        from intentgc.graph import load_features
        from intentgc.trainer import train
        from intentgc.translate import translate
        spec = SyntheticSpec(n_users=100, n_items=100, blocks=2, aux_types=1,
                             noise=0.5, feature_noise=0.25, aux_links_per_node=8,
                             seed=gen_seed, embed_dim=8, cont_width=4,
                             edges_per_user=8)
        paths = gen_synthetic(spec, tmp_path / f"s{gen_seed}")
        graph, iddict = load_graph(paths["graph"])
        schema = load_schema(paths["schema"])
        store = load_features(paths["features"], schema, graph, iddict)
        test_pairs = load_pairs(paths["test_pairs"], iddict, "user", "item")
        cfg = RunConfig(q=1, rho=5, n_filters=3, epochs=15, learning_rate=0.05,
                        momentum=0.9, batch_size=200, margin=1.0,
                        negatives_per_edge=3, stddev_network=0.5,
                        stddev_embedding=0.4, conv_act="tanh", dense_act="relu",
                        dense_widths=(12, 16, 8), seed=11)
        tg = translate(graph, rho=cfg.rho, hot_threshold=cfg.hot_threshold)
        params, _ = train(graph, tg, store, schema, cfg)
        users = infer_all("user", tg, store, schema, params, cfg)
        items = infer_all("item", tg, store, schema, params, cfg)
        got = ranking_auc(test_pairs, users, items, negatives_per_user=20, seed=99)
        assert abs(got - 0.5) < 0.05


class TestBench:
    def test_table_shape_and_monotone(self):
        rows = bench_conv(m_values=(32, 64), passes=6, rho=4)
        assert len(rows) == 4
        for mode in ("bitwise", "vectorwise"):
            mine = sorted((r for r in rows if r.mode == mode), key=lambda r: r.m)
            assert mine[0].ns_per_op < mine[1].ns_per_op
        table = format_table(rows)
        assert table.startswith("mode\tm\tns_per_op\tanalytic_madds")
        assert len(table.strip().splitlines()) == 5

    def test_doubling_ratios_helper(self):
        rows = bench_conv(m_values=(32, 64), passes=6, rho=4)
        assert len(doubling_ratios(rows, "bitwise")) == 1


SMALL_CONFIG = """\
rho = 3
q = 1
n_filters = 2
epochs = 2
batch_size = 32
negatives_per_edge = 2
learning_rate = 0.01
stddev_network = 0.3
stddev_embedding = 0.3
dense_widths = 12,8,4
hot_threshold = 1000
neg_per_user = 5
"""


@pytest.fixture()
def dataset(tmp_path):
    spec = SyntheticSpec(n_users=30, n_items=30, seed=11, edges_per_user=6)
    paths = gen_synthetic(spec, tmp_path / "data")
    cfg_path = tmp_path / "config.txt"
    cfg_path.write_text(SMALL_CONFIG)
    return paths, cfg_path, tmp_path


class TestCliPipeline:
    def run(self, *argv):
        return main(list(argv))

    def test_full_pipeline_then_idempotent_rerun(self, dataset, capsys):
        paths, cfg_path, tmp_path = dataset
        outdir = tmp_path / "run"
        argv = ["--config", str(cfg_path), "pipeline",
                "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                "--schema", str(paths["schema"]), "--test", str(paths["test_pairs"]),
                "--outdir", str(outdir)]
        assert self.run(*argv) == 0
        out1 = capsys.readouterr().out
        assert "translate: wrote" in out1 and "train: wrote" in out1
        report1 = (outdir / "eval_report.txt").read_bytes()

        assert self.run(*argv) == 0
        out2 = capsys.readouterr().out
        assert "translate: skipped" in out2
        assert "train: skipped" in out2
        assert "infer: skipped" in out2
        assert "eval: skipped" in out2
        assert (outdir / "eval_report.txt").read_bytes() == report1

    def test_corrupted_checkpoint_fails_with_checksum_error(self, dataset, capsys):
        paths, cfg_path, tmp_path = dataset
        outdir = tmp_path / "run"
        argv = ["--config", str(cfg_path), "pipeline",
                "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                "--schema", str(paths["schema"]), "--outdir", str(outdir)]
        assert self.run(*argv) == 0
        capsys.readouterr()
        ckpt = outdir / "checkpoint.bin"
        blob = bytearray(ckpt.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        ckpt.write_bytes(bytes(blob))
        code = self.run("--config", str(cfg_path), "infer",
                        "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                        "--schema", str(paths["schema"]),
                        "--translated", str(outdir / "translated.txt"),
                        "--checkpoint", str(ckpt),
                        "--out-users", str(tmp_path / "u.tsv"),
                        "--out-items", str(tmp_path / "i.tsv"))
        assert code == 2
        assert "checksum mismatch" in capsys.readouterr().err

    def test_stale_fingerprint_refused(self, dataset, capsys):
        paths, cfg_path, tmp_path = dataset
        outdir = tmp_path / "run"
        base = ["pipeline", "--graph", str(paths["graph"]),
                "--features", str(paths["features"]), "--schema", str(paths["schema"]),
                "--outdir", str(outdir)]
        assert self.run("--config", str(cfg_path), *base) == 0
        capsys.readouterr()
        code = self.run("--config", str(cfg_path), "--seed", "99", "train",
                        "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                        "--schema", str(paths["schema"]),
                        "--translated", str(outdir / "translated.txt"),
                        "--out", str(tmp_path / "ck2.bin"))
        assert code == 1
        assert "fingerprint" in capsys.readouterr().err

    def test_config_error_exit_code(self, dataset, capsys):
        paths, _, tmp_path = dataset
        bad = tmp_path / "bad.txt"
        bad.write_text("nonsense_key = 1\n")
        code = self.run("--config", str(bad), "translate",
                        "--graph", str(paths["graph"]), "--out", str(tmp_path / "t.txt"))
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_gen_and_bench_subcommands(self, tmp_path, capsys):
        assert self.run("gen", "--out", str(tmp_path / "d"), "--users", "10",
                        "--items", "10", "--edges-per-user", "3") == 0
        capsys.readouterr()
        cfg = tmp_path / "bench.txt"
        cfg.write_text("bench_m = 32,64\nbench_passes = 6\n")
        assert self.run("--config", str(cfg), "bench") == 0
        out = capsys.readouterr().out
        assert out.startswith("mode\tm")

    def test_missing_graph_is_runtime_error(self, tmp_path, capsys):
        code = self.run("translate", "--graph", str(tmp_path / "nope.txt"),
                        "--out", str(tmp_path / "t.txt"))
        assert code == 2

    def test_eval_rejects_test_pairs_seen_in_training(self, dataset, capsys):
        paths, cfg_path, tmp_path = dataset
        outdir = tmp_path / "run"
        assert self.run("--config", str(cfg_path), "pipeline",
                        "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                        "--schema", str(paths["schema"]), "--outdir", str(outdir)) == 0
        capsys.readouterr()
        leaky = tmp_path / "leaky.tsv"
        graph, iddict = load_graph(paths["graph"])
        u, v = graph.labeled_edges[0]
        names_u = iddict.names("user")
        names_i = iddict.names("item")
        leaky.write_text(f"{names_u[u]}\t{names_i[v]}\n")
        code = self.run("--config", str(cfg_path), "eval",
                        "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                        "--schema", str(paths["schema"]),
                        "--translated", str(outdir / "translated.txt"),
                        "--checkpoint", str(outdir / "checkpoint.bin"),
                        "--test", str(leaky))
        assert code == 1
        assert "disjoint" in capsys.readouterr().err

    def test_standalone_eval_matches_pipeline_report(self, dataset, capsys):
        paths, cfg_path, tmp_path = dataset
        outdir = tmp_path / "run"
        assert self.run("--config", str(cfg_path), "pipeline",
                        "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                        "--schema", str(paths["schema"]), "--test", str(paths["test_pairs"]),
                        "--outdir", str(outdir)) == 0
        capsys.readouterr()
        code = self.run("--config", str(cfg_path), "eval",
                        "--graph", str(paths["graph"]), "--features", str(paths["features"]),
                        "--schema", str(paths["schema"]),
                        "--translated", str(outdir / "translated.txt"),
                        "--checkpoint", str(outdir / "checkpoint.bin"),
                        "--test", str(paths["test_pairs"]))
        assert code == 0
        report = capsys.readouterr().out
        assert report == (outdir / "eval_report.txt").read_text()
