"""Command-line front end.

Subcommands mirror the pipeline stages: gen-topo, simulate, mine-dag, embed,
train, diagnose, evaluate, weak-links, report. Every failure exits nonzero
after printing the stage that failed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import gnn
from .association import build_dag, load_dag, mine_cooccurrence, save_dag
from .baselines import (
    KIND_FOREST,
    KIND_MLP,
    ForestHyperparams,
    MlpHyperparams,
    diagnose_forest,
    diagnose_mlp,
    load_forest,
    load_mlp,
    peek_model_kind,
    save_forest,
    save_mlp,
    train_fc_gnn,
    train_forest,
    train_mlp,
)
from .embedding import build_vocab, load_embedding, save_embedding, token_sequences, train_skipgram
from .gnn import KIND_DAG_GNN, KIND_FC_GNN, GnnHyperparams, load_model, save_model
from .harness import (
    StageError,
    _stage,
    load_config,
    parse_result_table,
    report,
    run_experiment,
    standard_config,
)
from .ingestion import (
    ALL_DAY,
    DEFAULT_WINDOW_SECONDS,
    AlarmLog,
    clean,
    extract_sample,
    parse_log,
    split_by_scenario,
)
from .simulator import (
    SCENARIO_HOURS,
    Scenario,
    ScenarioSpec,
    default_catalog,
    generate_scenario,
    load_catalog,
    load_labels,
    make_cause_mix,
    merge_scenarios,
    save_catalog,
    save_labels,
)
from .topology import TopologySpec, find_weak_links, generate_man_topology, load_topology, save_topology


def _load_clean_log(path: str) -> AlarmLog:
    result = parse_log(path)
    if result.skipped:
        print(f"note: skipped {result.skipped} malformed records", file=sys.stderr)
    return clean(result.log)


def _load_samples(log_path: str, labels_path: str, window_seconds: float):
    log = _load_clean_log(log_path)
    labels = load_labels(labels_path)
    samples = split_by_scenario(log, labels, window_seconds)[ALL_DAY]
    return log, samples


def cmd_gen_topo(args: argparse.Namespace) -> int:
    spec = TopologySpec(
        n_core=args.cores,
        n_agg=args.aggs,
        n_bs=args.base_stations,
        cross_link_prob=args.cross_prob,
        seed=args.seed,
    )
    g = generate_man_topology(spec)
    save_topology(g, args.out)
    print(f"wrote {args.out}: {len(g.devices)} devices, {len(g.links)} links")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    topo = load_topology(args.topology)
    if args.catalog:
        catalog = load_catalog(args.catalog)
    else:
        catalog = default_catalog(args.hop_prob)
    kinds = {d.kind for d in topo.devices}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def make_spec(scn: Scenario, episodes: int, rare_mass: float, tag: str) -> ScenarioSpec:
        return ScenarioSpec(
            name=scn,
            time_range=SCENARIO_HOURS[scn],
            n_episodes=episodes,
            cause_mix=make_cause_mix(catalog, rare_mass, kinds),
            noise_rate=args.noise,
            seed=args.seed + (0 if tag == "off" else 1),
        )

    if args.scenario == "AllDay":
        n_off = args.episodes * 3 // 5
        n_peak = args.episodes - n_off
        log_off, labels_off = generate_scenario(
            topo, catalog, make_spec(Scenario.OffPeak, n_off, 0.05, "off"), window_seconds=args.window_seconds
        )
        log_peak, labels_peak = generate_scenario(
            topo, catalog, make_spec(Scenario.Peak, n_peak, 0.5, "peak"), window_seconds=args.window_seconds
        )
        log, labels = merge_scenarios(log_off, labels_off, log_peak, labels_peak)
    else:
        scn = Scenario.OffPeak if args.scenario == "OffPeak" else Scenario.Peak
        default_mass = 0.05 if scn is Scenario.OffPeak else 0.5
        rare_mass = default_mass if args.rare_mass is None else args.rare_mass
        log, labels = generate_scenario(
            topo,
            catalog,
            make_spec(scn, args.episodes, rare_mass, "off"),
            window_seconds=args.window_seconds,
        )

    from .ingestion import write_log

    write_log(log, out / "alarms.log")
    save_labels(labels, out / "labels.csv")
    save_catalog(catalog, out / "catalog.json")
    print(f"wrote {out}/alarms.log: {len(log.records)} records, {len(labels)} labeled episodes")
    return 0


def cmd_mine_dag(args: argparse.Namespace) -> int:
    _, samples = _load_samples(args.log, args.labels, args.window_seconds)
    stats = mine_cooccurrence(samples)
    dag = build_dag(stats, args.min_support, args.min_confidence)
    save_dag(dag, args.out)
    print(f"wrote {args.out}: {len(dag.vertices)} vertices, {len(dag.edges)} edges")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    log, samples = _load_samples(args.log, args.labels, args.window_seconds)
    vocab = build_vocab([log])
    sequences = token_sequences(samples, vocab)
    emb = train_skipgram(
        sequences,
        vocab.size,
        dim=args.dim,
        window=args.token_window,
        negatives=args.negatives,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
    )
    save_embedding(emb, vocab, args.out)
    print(f"wrote {args.out}: {vocab.size} tokens, dim {emb.dim}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    _, samples = _load_samples(args.log, args.labels, args.window_seconds)
    labels = [s.label for s in samples if s.label is not None]
    classes = args.classes if args.classes else max(labels) + 1

    if args.method == KIND_FOREST:
        if not args.catalog:
            raise ValueError("train forest requires --catalog")
        catalog = load_catalog(args.catalog)
        hp = ForestHyperparams(n_trees=args.n_trees, max_depth=args.max_depth, seed=args.seed)
        model = train_forest(samples, catalog, hp)
        save_forest(model, args.out)
    elif not args.dag or not args.embedding:
        raise ValueError(f"train {args.method} requires --dag and --embedding")
    elif args.method == KIND_MLP:
        dag = load_dag(args.dag)
        emb, vocab = load_embedding(args.embedding)
        hp = MlpHyperparams(
            classes=classes, hidden=args.hidden, lr=args.lr, epochs=args.epochs, seed=args.seed
        )
        model = train_mlp(dag.vertices, samples, hp, emb, vocab)
        save_mlp(model, args.out)
    else:
        dag = load_dag(args.dag)
        emb, vocab = load_embedding(args.embedding)
        hp = GnnHyperparams(
            classes=classes,
            layers=args.layers,
            hidden=args.hidden_gnn,
            heads=args.heads,
            lr=args.lr,
            epochs=args.epochs,
            seed=args.seed,
        )
        if args.method == KIND_DAG_GNN:
            model = gnn.train(dag, samples, hp, emb, vocab)
        else:
            model = train_fc_gnn(dag.vertices, samples, hp, emb, vocab)
        save_model(model, args.out)
    print(f"wrote {args.out}: {args.method} trained on {len(samples)} windows")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    log = _load_clean_log(args.log)
    sample = extract_sample(log, args.record_id, args.window_seconds)
    kind = peek_model_kind(args.model)
    if kind == KIND_FOREST:
        result = diagnose_forest(load_forest(args.model), sample)
    elif kind == KIND_MLP:
        if not args.embedding:
            raise ValueError("mlp models require --embedding")
        emb, vocab = load_embedding(args.embedding)
        result = diagnose_mlp(load_mlp(args.model), sample, emb, vocab)
    elif kind in (KIND_DAG_GNN, KIND_FC_GNN):
        if not args.embedding:
            raise ValueError("attention models require --embedding")
        emb, vocab = load_embedding(args.embedding)
        result = gnn.diagnose(load_model(args.model), sample, emb, vocab)
    else:
        raise ValueError(f"unknown model kind: {kind}")

    names = {}
    if args.catalog:
        catalog = load_catalog(args.catalog)
        names = {c.id: c.name for c in catalog.causes}
    ranked = sorted(enumerate(result.distribution), key=lambda kv: (-kv[1], kv[0]))
    print(f"diagnosis for record {args.record_id} ({len(sample.records)} records in window):")
    for cid, p in ranked[:3]:
        label = names.get(cid, f"cause {cid}")
        marker = "*" if cid == result.cause else " "
        print(f" {marker} {label}: {p:.3f}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.config:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
    else:
        config = standard_config(args.seed if args.seed is not None else 0)
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    result = run_experiment(config, out_dir=args.out_dir, progress=progress)
    print(report(result.table, fmt="text"), end="")
    return 0


def cmd_weak_links(args: argparse.Namespace) -> int:
    g = load_topology(args.topology)
    links = find_weak_links(g)
    kind_of = {d.id: d.kind.value for d in g.devices}
    print(f"{len(links)} single points of failure:")
    for u, v in links:
        print(f"  {u} ({kind_of[u]}) -- {v} ({kind_of[v]})")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    table = parse_result_table(Path(args.results).read_text(encoding="utf-8"))
    print(report(table, fmt=args.fmt), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netdiag", description="Alarm-flood root cause diagnosis toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add_window(sp: argparse.ArgumentParser) -> None:
        sp.add_argument(
            "--window-seconds",
            type=float,
            default=DEFAULT_WINDOW_SECONDS,
            help="half-width of the diagnosis window around each root alarm",
        )

    sp = sub.add_parser("gen-topo", help="generate a metro access-network topology")
    sp.add_argument("--cores", type=int, default=3)
    sp.add_argument("--aggs", type=int, default=6)
    sp.add_argument("--base-stations", type=int, default=18)
    sp.add_argument("--cross-prob", type=float, default=0.15)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_topo)

    sp = sub.add_parser("simulate", help="generate an alarm log with labeled failure episodes")
    sp.add_argument("--topology", required=True)
    sp.add_argument("--scenario", choices=["AllDay", "OffPeak", "Peak"], default="AllDay")
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--noise", type=float, default=0.06, help="noise alarms per minute network-wide")
    sp.add_argument("--rare-mass", type=float, default=None, help="probability mass on rare causes")
    sp.add_argument("--hop-prob", type=float, default=0.7)
    sp.add_argument("--catalog", default=None, help="existing fault catalog JSON to reuse")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    add_window(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("mine-dag", help="mine the device association DAG from labeled windows")
    sp.add_argument("--log", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--min-support", type=float, default=0.02)
    sp.add_argument("--min-confidence", type=float, default=0.3)
    sp.add_argument("--out", required=True)
    add_window(sp)
    sp.set_defaults(func=cmd_mine_dag)

    sp = sub.add_parser("embed", help="train the alarm-name token embedding")
    sp.add_argument("--log", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--dim", type=int, default=24)
    sp.add_argument("--token-window", type=int, default=4)
    sp.add_argument("--negatives", type=int, default=5)
    sp.add_argument("--epochs", type=int, default=3)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    add_window(sp)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("train", help="train a diagnosis model")
    sp.add_argument("method", choices=[KIND_DAG_GNN, KIND_FC_GNN, KIND_MLP, KIND_FOREST])
    sp.add_argument("--log", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--dag", default=None, help="association DAG (gnn and mlp methods)")
    sp.add_argument("--embedding", default=None, help="embedding checkpoint (gnn and mlp methods)")
    sp.add_argument("--catalog", default=None, help="fault catalog (forest method)")
    sp.add_argument("--classes", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=120)
    sp.add_argument("--lr", type=float, default=0.02)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--heads", type=int, default=2)
    sp.add_argument("--hidden-gnn", type=int, default=16)
    sp.add_argument("--hidden", type=int, default=48)
    sp.add_argument("--n-trees", type=int, default=64)
    sp.add_argument("--max-depth", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    add_window(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("diagnose", help="rank root causes for one alarm window")
    sp.add_argument("--model", required=True)
    sp.add_argument("--log", required=True)
    sp.add_argument("--record-id", type=int, required=True)
    sp.add_argument("--embedding", default=None)
    sp.add_argument("--catalog", default=None, help="for printing cause names")
    add_window(sp)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("evaluate", help="run the full pipeline and score every method")
    sp.add_argument("--config", default=None, help="experiment config JSON")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", default=None)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("weak-links", help="list links whose loss splits the network")
    sp.add_argument("--topology", required=True)
    sp.set_defaults(func=cmd_weak_links)

    sp = sub.add_parser("report", help="render a results csv as a text table")
    sp.add_argument("--results", required=True)
    sp.add_argument("--fmt", choices=["text", "csv"], default="text")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _stage(args.command):
            return args.func(args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
