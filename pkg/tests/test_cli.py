from __future__ import annotations

import json

import numpy as np
import pytest
import yaml

from mor.cli import main
from mor.config import load_config
from mor.embeddings import write_embeddings
from mor.errors import ConfigError
from mor.evaluation import load_run

rng = np.random.default_rng(2024)


def tiny_world(root):
    """Small mixed corpus: chunked docs, propositions, sub-queries, two
    retrievers (BM25 + dense). Returns the config path."""
    docs = [
        {"id": "d1#0", "text": "solar panels convert light", "chunk_of": "d1"},
        {"id": "d1#1", "text": "photovoltaic cells and silicon wafers", "chunk_of": "d1"},
        {"id": "d2", "text": "wind turbines convert motion"},
        {"id": "d3", "text": "geothermal heat from the ground"},
        {"id": "d4", "text": "tidal energy from ocean currents"},
        {"id": "d5", "text": "hydroelectric dams store water"},
    ]
    queries = [
        {"id": "q1", "text": "how do solar panels work"},
        {"id": "q2", "text": "energy from water movement"},
        {"id": "q3", "text": "underground heat sources"},
    ]
    qrels = ["q1 0 d1 2", "q2 0 d4 1", "q2 0 d5 1", "q3 0 d3 1", "q3 0 d2 0"]
    props = [
        {"id": "d2", "units": [
            {"id": "d2-p0", "text": "wind turbines spin"},
            {"id": "d2-p1", "text": "motion becomes electricity"}]},
        {"id": "d3", "units": [{"id": "d3-p0", "text": "heat rises from the ground"}]},
    ]
    subqs = [
        {"id": "q2", "units": [
            {"id": "q2-s0", "text": "tidal power"},
            {"id": "q2-s1", "text": "hydroelectric power"}]},
    ]

    (root / "corpus.jsonl").write_text(
        "\n".join(json.dumps(d) for d in docs) + "\n")
    (root / "queries.jsonl").write_text(
        "\n".join(json.dumps(q) for q in queries) + "\n")
    (root / "qrels.tsv").write_text("\n".join(qrels) + "\n")
    (root / "props.jsonl").write_text(
        "\n".join(json.dumps(p) for p in props) + "\n")
    (root / "subqs.jsonl").write_text(
        "\n".join(json.dumps(s) for s in subqs) + "\n")

    (root / "spaces").mkdir(exist_ok=True)
    dim = 8
    doc_ids = [d["id"] for d in docs]
    write_embeddings(root / "spaces" / "m-doc.morv", doc_ids,
                     rng.normal(size=(len(doc_ids), dim)).astype(np.float32))
    write_embeddings(root / "spaces" / "m-query.morv", [q["id"] for q in queries],
                     rng.normal(size=(len(queries), dim)).astype(np.float32))

    config = {
        "dataset": {
            "corpus": "corpus.jsonl", "queries": "queries.jsonl",
            "qrels": "qrels.tsv", "propositions": "props.jsonl",
            "subqueries": "subqs.jsonl",
        },
        "spaces": {"m/doc": "spaces/m-doc.morv", "m/query": "spaces/m-query.morv"},
        "pool": [
            {"name": "bm25", "kind": "sparse-bm25", "granularity": "q-d",
             "params": {"k1": 1.2, "b": 0.75}},
            {"name": "bm25", "kind": "sparse-bm25", "granularity": "sq-p"},
            {"name": "m", "kind": "dense", "granularity": "q-d",
             "params": {"query_space": "m/query", "doc_space": "m/doc"}},
        ],
        "fusion": {"modes": ["mor-pre", "mor-post", "rrf", "route-oracle"],
                   "seed": 11, "run_depth": 10},
        "eval": {"metrics": ["ndcg@5", "ndcg@20"]},
        "cache_dir": "cache",
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    return path


class TestIndexCommand:
    def test_second_run_hits_cache(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        assert main(["index", "--config", str(cfg)]) == 0
        first = capsys.readouterr().out
        assert "built" in first and "cache hit" not in first
        assert main(["index", "--config", str(cfg)]) == 0
        second = capsys.readouterr().out
        assert "cache hit" in second

    def test_corpus_edit_triggers_rebuild(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        main(["index", "--config", str(cfg)])
        capsys.readouterr()
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(corpus.read_text().replace("silicon", "monocrystalline"))
        main(["index", "--config", str(cfg)])
        out = capsys.readouterr().out
        assert "built: bm25" in out  # content hash changed for the docs side

    def test_env_var_overrides_cache_dir(self, tmp_path, monkeypatch, capsys):
        cfg = tiny_world(tmp_path)
        alt = tmp_path / "elsewhere"
        monkeypatch.setenv("MOR_CACHE_DIR", str(alt))
        main(["index", "--config", str(cfg)])
        capsys.readouterr()
        assert alt.exists() and any(alt.iterdir())

    def test_clusterings_use_the_corpus_size_rule(self, tmp_path):
        from mor.pipeline import Engine
        from mor.signals import choose_k

        cfg = tiny_world(tmp_path)
        engine = Engine(load_config(cfg))
        for member in engine.members:
            clustering = engine.clustering_for(member.signal_index)
            n = len(member.signal_index)
            assert clustering.k == min(choose_k(n), n)

    def test_qrels_referencing_unknown_query_rejected(self, tmp_path):
        from mor.errors import ValidationError
        from mor.pipeline import Engine

        cfg = tiny_world(tmp_path)
        with open(tmp_path / "qrels.tsv", "a") as fh:
            fh.write("q99 0 d1 1\n")
        with pytest.raises(ValidationError, match="q99"):
            Engine(load_config(cfg))


class TestFuseCommand:
    def test_emits_one_run_per_mode_with_tags(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        out = tmp_path / "out"
        assert main(["fuse", "--config", str(cfg), "--out", str(out)]) == 0
        capsys.readouterr()
        for mode in ("mor-pre", "mor-post", "rrf", "route-oracle"):
            assert (out / f"run-{mode}.trec").exists()
        line = (out / "run-mor-post.trec").read_text().splitlines()[0]
        assert line.endswith("mor-post(0.1,0.3,0.6)")
        assert (out / "signals.tsv").exists()
        assert (out / "weights-mor-pre.tsv").exists()

    def test_runs_are_valid_trec_and_collapse_chunks(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        out = tmp_path / "out"
        main(["fuse", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        parsed = load_run(out / "run-mor-pre.trec")
        assert set(parsed) == {"q1", "q2", "q3"}
        docs = {d for ranking in parsed.values() for d, _ in ranking}
        assert "d1" in docs and "d1#0" not in docs  # chunks mapped to original

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["fuse", "--config", str(cfg), "--out", str(out1)])
        main(["fuse", "--config", str(cfg), "--out", str(out2)])
        capsys.readouterr()
        for mode in ("mor-pre", "mor-post", "rrf", "route-oracle"):
            a = (out1 / f"run-{mode}.trec").read_bytes()
            b = (out2 / f"run-{mode}.trec").read_bytes()
            assert a == b

    def test_route_oracle_without_qrels_is_config_error(self, tmp_path):
        cfg = tiny_world(tmp_path)
        tree = yaml.safe_load(cfg.read_text())
        del tree["dataset"]["qrels"]
        cfg.write_text(yaml.safe_dump(tree))
        with pytest.raises(ConfigError, match="route-oracle"):
            load_config(cfg)

    def test_missing_space_is_config_error(self, tmp_path):
        cfg = tiny_world(tmp_path)
        tree = yaml.safe_load(cfg.read_text())
        tree["pool"][2]["params"]["doc_space"] = "m/ghost"
        cfg.write_text(yaml.safe_dump(tree))
        with pytest.raises(ConfigError, match="m/ghost"):
            load_config(cfg)

    def test_cli_reports_config_errors_with_exit_2(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        tree = yaml.safe_load(cfg.read_text())
        tree["dataset"]["corpus"] = "missing.jsonl"
        cfg.write_text(yaml.safe_dump(tree))
        assert main(["fuse", "--config", str(cfg)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_set_overrides_coefficients(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        out = tmp_path / "out"
        main(["fuse", "--config", str(cfg), "--out", str(out),
              "--set", "fusion.coefficients=[0.2, 0.3, 0.5]",
              "--set", "fusion.modes=[mor-post]"])
        capsys.readouterr()
        line = (out / "run-mor-post.trec").read_text().splitlines()[0]
        assert line.endswith("mor-post(0.2,0.3,0.5)")


class TestEvalCommand:
    def test_reports_and_comparison(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        out = tmp_path / "out"
        main(["fuse", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "ndcg@20" in printed
        assert (out / "comparison.txt").exists()
        assert (out / "report-run-mor-post.tsv").exists()

    def test_route_oracle_dominates_components_at_file_level(self, tmp_path, capsys):
        from mor.corpus import load_qrels
        from mor.evaluation import evaluate_run

        cfg = tiny_world(tmp_path)
        out = tmp_path / "out"
        main(["fuse", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        qrels = load_qrels(tmp_path / "qrels.tsv")
        oracle = evaluate_run(out / "run-route-oracle.trec", qrels, ("ndcg@20",))
        for mode in ("mor-pre", "mor-post", "rrf"):
            other = evaluate_run(out / f"run-{mode}.trec", qrels, ("ndcg@20",))
            assert oracle.aggregates["ndcg@20"] >= other.aggregates["ndcg@20"] - 1e-9


class TestSweepCommand:
    def test_emits_runs_and_retained_fractions(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out),
                     "--set", "sweep.thresholds=[0, 50, 95, 100]"]) == 0
        capsys.readouterr()
        rows = (out / "sweep.tsv").read_text().splitlines()
        assert rows[0].startswith("threshold\tmean_retained_fraction")
        assert len(rows) == 5
        for t in ("0", "50", "95", "100"):
            assert (out / f"run-mor-pre-t{t}.trec").exists()
        t0 = float(rows[1].split("\t")[1])
        t100 = float(rows[4].split("\t")[1])
        assert t0 == 1.0
        assert t100 <= t0


class TestSimulateHumans:
    def test_requires_domain_labels(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        tree = yaml.safe_load(cfg.read_text())
        tree["simulation"] = {
            "domains": ["solar"], "reference_space": "m/doc",
            "reference_query_space": "m/query",
        }
        cfg.write_text(yaml.safe_dump(tree))
        assert main(["simulate-humans", "--config", str(cfg)]) == 2
        assert "domain" in capsys.readouterr().err

    def test_writes_weight_matrix_and_ndcg_table(self, tmp_path, capsys):
        cfg = tiny_world(tmp_path)
        # give queries domain labels
        queries = [
            {"id": "q1", "text": "how do solar panels work", "domain": "solar"},
            {"id": "q2", "text": "energy from water movement", "domain": "water"},
            {"id": "q3", "text": "underground heat sources", "domain": "water"},
        ]
        (tmp_path / "queries.jsonl").write_text(
            "\n".join(json.dumps(q) for q in queries) + "\n")
        tree = yaml.safe_load(cfg.read_text())
        tree["simulation"] = {
            "domains": ["solar", "water"], "reference_space": "m/doc",
            "reference_query_space": "m/query", "seed": 5,
        }
        cfg.write_text(yaml.safe_dump(tree))
        out = tmp_path / "out"
        assert main(["simulate-humans", "--config", str(cfg), "--out", str(out)]) == 0
        capsys.readouterr()
        matrix = (out / "expert-weights.tsv").read_text().splitlines()
        assert matrix[0] == "expert\tsolar\twater"
        assert len(matrix) == 3
        table = (out / "domain-ndcg.tsv").read_text().splitlines()
        tags = {line.split("\t")[0] for line in table[1:]}
        assert tags == {"mor-post", "humans", "mor+humans"}
