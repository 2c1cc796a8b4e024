"""Command-line entry point: index | fuse | eval | simulate-humans | sweep.

Each subcommand takes --config (YAML), --out (output directory), and
repeatable --set key=value overrides. Outputs are TREC run files, TSV
weight/signal dumps, and evaluation reports.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig, load_config
from .corpus import Query, load_qrels
from .errors import ConfigError, ContractError, MorError
from .evaluation import evaluate_run, format_comparison, write_report_tsv, write_run
from .fusion import WeightAllocation, fuse, weight_post
from .pipeline import Engine, QueryResult
from .retrievers import RetrieverSpec


def _write_weights_tsv(path: Path, rows: list[tuple[str, str, str, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id\tretriever\tgranularity\tweight\n")
        for query_id, name, granularity, weight in sorted(rows):
            fh.write(f"{query_id}\t{name}\t{granularity}\t{weight:.6g}\n")


def _write_signals_tsv(path: Path, results: list[QueryResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id\tretriever\tgranularity\tv_pre\ti_moran\tv_post\n")
        for result in sorted(results, key=lambda r: r.query_id):
            for label, bundle in result.signals.items():
                name, granularity = label.split("/", 1)
                fh.write(
                    f"{result.query_id}\t{name}\t{granularity}\t"
                    f"{bundle.v_pre:.6g}\t{bundle.i_moran:.6g}\t{bundle.v_post:.6g}\n"
                )


def _split_label(label: str) -> tuple[str, str]:
    name, _, granularity = label.partition("/")
    return name, granularity


def cmd_index(config: PipelineConfig, out_dir: Path) -> int:
    engine = Engine(config)
    events = engine.build_indexes()
    for kind, key, hit in events:
        print(f"{'cache hit' if hit else 'built'}: {kind} {key}")
    print(f"indexed {len(engine.corpus)} docs, {len(engine.queries)} queries, "
          f"{len(engine.members)} pool members")
    return 0


def _emit_mode_outputs(engine: Engine, results: list[QueryResult], mode: str,
                       out_dir: Path, threshold: float | None) -> Path:
    tag = engine.run_tag(mode)
    rankings: dict[str, list[tuple[str, float]]] = {}
    weight_rows: list[tuple[str, str, str, float]] = []
    retained: list[float] = []
    depth = engine.config.fusion.run_depth
    for result in results:
        run, allocation, fraction = engine.fused_run(result, mode, threshold)
        rankings[result.query_id] = [(d, s) for d, s, _ in run.ranked[:depth]]
        retained.append(fraction)
        if allocation is not None:
            for label, weight in allocation.weights.items():
                name, granularity = _split_label(label)
                weight_rows.append((result.query_id, name, granularity, weight))
    run_path = out_dir / f"run-{mode}.trec"
    write_run(run_path, rankings, tag)
    if weight_rows:
        _write_weights_tsv(out_dir / f"weights-{mode}.tsv", weight_rows)
    if threshold is not None:
        mean_retained = sum(retained) / len(retained) if retained else 0.0
        with open(out_dir / f"retained-{mode}.tsv", "w", encoding="utf-8") as fh:
            fh.write("threshold\tmean_retained_fraction\n")
            fh.write(f"{threshold:g}\t{mean_retained:.6f}\n")
    return run_path


def cmd_fuse(config: PipelineConfig, out_dir: Path) -> int:
    engine = Engine(config)
    results = engine.compute_all()
    out_dir.mkdir(parents=True, exist_ok=True)
    for mode in config.fusion.modes:
        path = _emit_mode_outputs(engine, results, mode, out_dir,
                                  config.fusion.prereject_threshold)
        print(f"wrote {path}")
    if config.fusion.dump_signals:
        _write_signals_tsv(out_dir / "signals.tsv", results)
    return 0


def cmd_eval(config: PipelineConfig, out_dir: Path, runs: Sequence[Path] = ()) -> int:
    if config.dataset.qrels is None:
        raise ConfigError("eval requires dataset.qrels")
    qrels = load_qrels(config.dataset.qrels)
    run_paths = list(runs) or sorted(out_dir.glob("run-*.trec"))
    if not run_paths:
        raise ConfigError(f"no run files found under {out_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = {}
    for run_path in run_paths:
        tag = run_path.stem
        report = evaluate_run(run_path, qrels, config.eval.metrics, run_tag=tag)
        report.metadata["config_hash"] = config.config_hash
        write_report_tsv(report, out_dir / f"report-{tag}.tsv")
        reports[tag] = report
    table = format_comparison(reports)
    (out_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _expert_specs(config: PipelineConfig) -> list[RetrieverSpec]:
    sim = config.simulation
    if not sim.domains:
        raise ConfigError("simulation.domains is empty")
    if not sim.reference_space or not sim.reference_query_space:
        raise ConfigError("simulation.reference_space and reference_query_space are required")
    return [
        RetrieverSpec(
            name=f"expert-{domain}",
            kind="oracle-human",
            granularity="q-d",
            embedding_space=sim.reference_space,
            params={
                "domain": domain,
                "reference_space": sim.reference_space,
                "reference_query_space": sim.reference_query_space,
                "seed": sim.seed,
            },
        )
        for domain in sim.domains
    ]


def simulate_humans(config: PipelineConfig) -> dict:
    """Expert-in-the-pool simulation; returns the artifacts for emission.

    Builds one oracle expert per domain, fuses {base pool + experts} with
    post-retrieval weights, and collects the per-domain mean expert weight
    matrix plus three comparison runs (base pool, equal-weight experts,
    combined pool).
    """
    if config.dataset.qrels is None:
        raise ConfigError("simulate-humans requires dataset.qrels")
    experts = _expert_specs(config)
    combined = PipelineConfig(
        dataset=config.dataset,
        spaces=config.spaces,
        pool=list(config.pool) + experts,
        fusion=config.fusion,
        sweep=config.sweep,
        eval=config.eval,
        simulation=config.simulation,
        cache_dir=config.cache_dir,
        config_hash=config.config_hash,
    )
    combined.validate()
    engine = Engine(combined)
    for query in engine.queries:
        if query.domain is None:
            raise ContractError(f"query {query.query_id!r} lacks a domain label")

    expert_labels = [spec.label for spec in experts]
    base_labels = [spec.label for spec in config.pool]
    a, b, c = config.fusion.coefficients
    domains = list(config.simulation.domains)

    results = engine.compute_all()
    by_domain: dict[str, list[QueryResult]] = {d: [] for d in domains}
    queries_by_id: dict[str, Query] = {q.query_id: q for q in engine.queries}
    weight_sums = {e: dict.fromkeys(domains, 0.0) for e in expert_labels}
    domain_counts = dict.fromkeys(domains, 0)

    runs: dict[str, dict[str, list[tuple[str, float]]]] = {
        "mor-post": {}, "humans": {}, "mor+humans": {},
    }
    depth = config.fusion.run_depth
    for result in results:
        domain = queries_by_id[result.query_id].domain
        if domain not in by_domain:
            raise ContractError(f"query domain {domain!r} not in simulation.domains")
        by_domain[domain].append(result)
        domain_counts[domain] += 1

        allocation = weight_post(result.query_id, result.signals, a, b, c)
        for label in expert_labels:
            weight_sums[label][domain] += allocation.weights[label]

        combined_run = fuse(result.doc_scores, allocation)
        runs["mor+humans"][result.query_id] = [
            (d, s) for d, s, _ in combined_run.ranked[:depth]
        ]

        expert_scores = {lb: result.doc_scores[lb] for lb in expert_labels}
        equal = WeightAllocation(result.query_id, dict.fromkeys(expert_labels, 1.0), "mean")
        humans_run = fuse(expert_scores, equal)
        runs["humans"][result.query_id] = [(d, s) for d, s, _ in humans_run.ranked[:depth]]

        if base_labels:
            base_alloc = weight_post(
                result.query_id,
                {lb: result.signals[lb] for lb in base_labels}, a, b, c,
            )
            base_run = fuse({lb: result.doc_scores[lb] for lb in base_labels}, base_alloc)
            runs["mor-post"][result.query_id] = [
                (d, s) for d, s, _ in base_run.ranked[:depth]
            ]

    weight_matrix = {
        expert: {
            domain: (weight_sums[expert][domain] / domain_counts[domain]
                     if domain_counts[domain] else 0.0)
            for domain in domains
        }
        for expert in expert_labels
    }
    return {
        "engine": engine,
        "domains": domains,
        "expert_labels": expert_labels,
        "weight_matrix": weight_matrix,
        "runs": runs,
        "queries_by_id": queries_by_id,
    }


def cmd_simulate_humans(config: PipelineConfig, out_dir: Path) -> int:
    artifacts = simulate_humans(config)
    engine: Engine = artifacts["engine"]
    domains: list[str] = artifacts["domains"]
    out_dir.mkdir(parents=True, exist_ok=True)

    matrix_path = out_dir / "expert-weights.tsv"
    with open(matrix_path, "w", encoding="utf-8") as fh:
        fh.write("expert\t" + "\t".join(domains) + "\n")
        for expert, row in artifacts["weight_matrix"].items():
            fh.write(expert + "\t" + "\t".join(f"{row[d]:.6g}" for d in domains) + "\n")

    k = engine.metric_depth()
    metric = f"ndcg@{k}"
    ndcg_path = out_dir / "domain-ndcg.tsv"
    queries_by_id = artifacts["queries_by_id"]
    with open(ndcg_path, "w", encoding="utf-8") as fh:
        fh.write("run\t" + "\t".join(domains) + "\toverall\n")
        for tag, rankings in artifacts["runs"].items():
            if not rankings:
                continue
            write_run(out_dir / f"run-sim-{tag}.trec", rankings, tag)
            report = evaluate_run(rankings, engine.qrels, (metric,), run_tag=tag)
            cells = []
            for domain in domains:
                qids = [q for q in report.per_query
                        if queries_by_id[q].domain == domain
                        and q not in report.metadata["no_relevant"]]
                mean = (sum(report.per_query[q][metric] for q in qids) / len(qids)
                        if qids else 0.0)
                cells.append(f"{mean:.4f}")
            fh.write(tag + "\t" + "\t".join(cells)
                     + f"\t{report.aggregates[metric]:.4f}\n")
    print(f"wrote {matrix_path} and {ndcg_path}")
    return 0


def cmd_sweep(config: PipelineConfig, out_dir: Path) -> int:
    mode = config.sweep.mode
    if mode not in ("mor-pre", "mor-post"):
        raise ConfigError(f"sweep.mode must be a weighted mode, got {mode!r}")
    engine = Engine(config)
    results = engine.compute_all()
    out_dir.mkdir(parents=True, exist_ok=True)

    qrels = engine.qrels
    metric_k = engine.metric_depth()
    rows: list[tuple[float, float, float]] = []
    for threshold in config.sweep.thresholds:
        rankings: dict[str, list[tuple[str, float]]] = {}
        fractions: list[float] = []
        for result in results:
            run, _, fraction = engine.fused_run(result, mode, threshold)
            rankings[result.query_id] = [
                (d, s) for d, s, _ in run.ranked[:config.fusion.run_depth]
            ]
            fractions.append(fraction)
        tag = f"{engine.run_tag(mode)}@t{threshold:g}"
        write_run(out_dir / f"run-{mode}-t{threshold:g}.trec", rankings, tag)
        mean_fraction = sum(fractions) / len(fractions) if fractions else 0.0
        ndcg = float("nan")
        if qrels is not None:
            report = evaluate_run(rankings, qrels, (f"ndcg@{metric_k}",), run_tag=tag)
            ndcg = report.aggregates[f"ndcg@{metric_k}"]
        rows.append((threshold, mean_fraction, ndcg))

    sweep_path = out_dir / "sweep.tsv"
    with open(sweep_path, "w", encoding="utf-8") as fh:
        fh.write(f"threshold\tmean_retained_fraction\tndcg@{metric_k}\n")
        for threshold, fraction, ndcg in rows:
            fh.write(f"{threshold:g}\t{fraction:.6f}\t{ndcg:.6f}\n")
    print(f"wrote {sweep_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mor",
        description="Retriever-mixture pipeline: index, fuse, evaluate, simulate, sweep.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("index", "fuse", "eval", "simulate-humans", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="pipeline config YAML")
        p.add_argument("--out", default=None, help="output directory (default: <config dir>/out)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (dotted path)")
        if name == "eval":
            p.add_argument("--run", dest="runs", action="append", default=[],
                           help="run file to evaluate (repeatable; default: out dir)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        out_dir = Path(args.out) if args.out else Path(args.config).parent / "out"
        if args.command == "index":
            return cmd_index(config, out_dir)
        if args.command == "fuse":
            return cmd_fuse(config, out_dir)
        if args.command == "eval":
            return cmd_eval(config, out_dir, [Path(r) for r in args.runs])
        if args.command == "simulate-humans":
            return cmd_simulate_humans(config, out_dir)
        if args.command == "sweep":
            return cmd_sweep(config, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except MorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
