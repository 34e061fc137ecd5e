"""End-to-end experiment pipeline and result reporting.

One run generates OffPeak and Peak alarm logs on a shared topology, merges and
cleans them, builds labeled diagnosis windows, splits each scenario's episodes
into train/test, mines the association DAG and trains the alarm-name embedding
on training data only, fits all four diagnosis methods on the combined
training set, and scores them on each scenario's held-out windows.

Because the combined (AllDay) test set is exactly the union of the OffPeak and
Peak test sets, each method's AllDay accuracy is a weighted average of its two
scenario accuracies and always lies between them.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import gnn
from .association import AssociationDag, build_dag, mine_cooccurrence, save_dag
from .baselines import (
    ForestHyperparams,
    ForestModel,
    MlpHyperparams,
    MlpModel,
    forest_features,
    forest_predict_batch,
    mlp_forward_batch,
    save_forest,
    save_mlp,
    train_fc_gnn,
    train_forest,
    train_mlp,
)
from .embedding import (
    DEFAULT_FEATURE_CONFIG,
    EmbeddingMatrix,
    FeatureConfig,
    Vocabulary,
    build_vocab,
    pooled_features,
    save_embedding,
    token_sequences,
    train_skipgram,
    vertex_features,
)
from .gnn import GnnHyperparams, GnnModel, save_model
from .ingestion import (
    ALL_DAY,
    DEFAULT_WINDOW_SECONDS,
    OFF_PEAK,
    PEAK,
    SCENARIO_NAMES,
    AlarmLog,
    DiagnosisSample,
    clean,
    scenario_of_timestamp,
    split_by_scenario,
)
from .simulator import (
    FaultCatalog,
    Scenario,
    SCENARIO_HOURS,
    ScenarioSpec,
    default_catalog,
    generate_scenario,
    make_cause_mix,
    merge_scenarios,
    save_catalog,
    save_labels,
)
from .topology import TopologyGraph, TopologySpec, generate_man_topology, save_topology
from .util import derive_rng, derive_seed

METHODS = ("dag-gnn", "fc-gnn", "mlp", "forest")


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - tag and re-raise with context
        raise StageError(name, str(exc)) from exc


@dataclass(frozen=True)
class MiningConfig:
    min_support: float = 0.02
    min_confidence: float = 0.3


@dataclass(frozen=True)
class EmbeddingTrainConfig:
    dim: int = 24
    window: int = 4
    negatives: int = 5
    epochs: int = 3
    lr: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    topology: TopologySpec = TopologySpec(n_core=6, n_agg=6, n_bs=12, cross_link_prob=0.15, seed=7)
    hop_prob: float = 0.75
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    off_peak_episodes: int = 420
    peak_episodes: int = 280
    off_peak_noise: float = 0.06
    peak_noise: float = 0.06
    off_peak_rare_mass: float = 0.05
    peak_rare_mass: float = 0.5
    train_fraction: float = 0.8
    mining: MiningConfig = MiningConfig()
    embedding: EmbeddingTrainConfig = EmbeddingTrainConfig()
    gnn: GnnHyperparams = GnnHyperparams(classes=8, epochs=120, seed=0)
    mlp: MlpHyperparams = MlpHyperparams(classes=8, epochs=250, seed=0)
    forest: ForestHyperparams = ForestHyperparams()
    feature_config: FeatureConfig = DEFAULT_FEATURE_CONFIG

    def validate(self) -> None:
        self.topology.validate()
        if not 0.0 < self.hop_prob <= 1.0:
            raise ValueError("hop_prob must lie in (0, 1]")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")
        if self.off_peak_episodes < 1 or self.peak_episodes < 1:
            raise ValueError("both scenarios need at least one episode")
        if self.off_peak_noise < 0 or self.peak_noise < 0:
            raise ValueError("noise rates must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentConfig":
        return cls(
            seed=int(payload["seed"]),
            topology=TopologySpec(**payload["topology"]),
            hop_prob=float(payload["hop_prob"]),
            window_seconds=float(payload["window_seconds"]),
            off_peak_episodes=int(payload["off_peak_episodes"]),
            peak_episodes=int(payload["peak_episodes"]),
            off_peak_noise=float(payload["off_peak_noise"]),
            peak_noise=float(payload["peak_noise"]),
            off_peak_rare_mass=float(payload["off_peak_rare_mass"]),
            peak_rare_mass=float(payload["peak_rare_mass"]),
            train_fraction=float(payload["train_fraction"]),
            mining=MiningConfig(**payload["mining"]),
            embedding=EmbeddingTrainConfig(**payload["embedding"]),
            gnn=GnnHyperparams(**payload["gnn"]),
            mlp=MlpHyperparams(**payload["mlp"]),
            forest=ForestHyperparams(**payload["forest"]),
            feature_config=FeatureConfig.from_json_dict(payload["feature_config"]),
        )


def standard_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(seed=seed)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_json_dict(), indent=2), encoding="utf-8")


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    method: str
    scenario: str
    accuracy: float
    n_test: int


@dataclass(frozen=True)
class RecallRow:
    method: str
    scenario: str
    cause_id: int
    support: int
    recall: float | None


@dataclass(frozen=True)
class ResultTable:
    rows: tuple[ResultRow, ...]
    recalls: tuple[RecallRow, ...] = ()
    # Wall-clock training times are diagnostic only: they are shown in the text
    # report but kept out of the csv serialization and out of scores(), so the
    # canonical form of a table is reproducible across identically-seeded runs.
    timings: tuple[tuple[str, float], ...] = ()

    def row(self, method: str, scenario: str) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.scenario == scenario:
                return r
        raise KeyError(f"no result for ({method}, {scenario})")

    def accuracy(self, method: str, scenario: str) -> float:
        return self.row(method, scenario).accuracy

    @property
    def methods(self) -> tuple[str, ...]:
        out: list[str] = []
        for r in self.rows:
            if r.method not in out:
                out.append(r.method)
        return tuple(out)

    @property
    def scenarios(self) -> tuple[str, ...]:
        out: list[str] = []
        for r in self.rows:
            if r.scenario not in out:
                out.append(r.scenario)
        return tuple(out)

    def scores(self) -> tuple:
        """Everything except wall-clock timings, for determinism comparisons."""
        return (self.rows, self.recalls)


def report(table: ResultTable, fmt: str = "text") -> str:
    """Render the result table; csv output round-trips via parse_result_table."""
    if fmt == "csv":
        lines = ["method,scenario,accuracy,n_test"]
        for r in table.rows:
            lines.append(f"{r.method},{r.scenario},{r.accuracy!r},{r.n_test}")
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format: {fmt}")
    w_m = max(len("method"), max((len(m) for m in table.methods), default=0))
    lines = []
    header = f"{'scenario':<8}  {'method':<{w_m}}  {'accuracy':>8}  {'n_test':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    for scenario in table.scenarios:
        for method in table.methods:
            r = table.row(method, scenario)
            lines.append(f"{scenario:<8}  {method:<{w_m}}  {100.0 * r.accuracy:>7.1f}%  {r.n_test:>6}")
        lines.append("")
    if table.timings:
        timings = "  ".join(f"{m}={secs:.1f}s" for m, secs in table.timings)
        lines.append(f"train seconds: {timings}")
    return "\n".join(lines) + "\n"


def render_recall_csv(table: ResultTable) -> str:
    lines = ["method,scenario,cause_id,support,recall"]
    for r in table.recalls:
        recall = "" if r.recall is None else repr(r.recall)
        lines.append(f"{r.method},{r.scenario},{r.cause_id},{r.support},{recall}")
    return "\n".join(lines) + "\n"


def parse_result_table(text: str) -> ResultTable:
    """Inverse of report(fmt="csv"); timings are diagnostic and not carried."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "method,scenario,accuracy,n_test":
        raise ValueError("not a result-table csv")
    rows = []
    for ln in lines[1:]:
        method, scenario, acc, n_test = ln.split(",")
        rows.append(
            ResultRow(method=method, scenario=scenario, accuracy=float(acc), n_test=int(n_test))
        )
    return ResultTable(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    table: ResultTable
    topology: TopologyGraph
    catalog: FaultCatalog
    log: AlarmLog
    labels: tuple[tuple[int, int], ...]
    dag: AssociationDag
    vocab: Vocabulary
    embedding: EmbeddingMatrix
    models: Mapping[str, object]
    train_sizes: Mapping[str, int]
    test_sizes: Mapping[str, int]


def _split_episodes(
    samples: Sequence[DiagnosisSample], fraction: float, seed: int, tag: str
) -> tuple[list[DiagnosisSample], list[DiagnosisSample]]:
    rng = derive_rng(seed, "train-test-split", tag)
    order = rng.permutation(len(samples))
    n_train = int(round(fraction * len(samples)))
    train = [samples[i] for i in sorted(order[:n_train].tolist())]
    test = [samples[i] for i in sorted(order[n_train:].tolist())]
    return train, test


def _train_log(samples: Sequence[DiagnosisSample]) -> AlarmLog:
    by_id = {r.record_id: r for s in samples for r in s.records}
    return AlarmLog.from_records(by_id.values())


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """Run the full generate → mine → embed → train → evaluate pipeline."""

    def note(msg: str) -> None:
        if progress is not None:
            progress(msg)

    config.validate()

    with _stage("generate"):
        note("generating topology and scenario logs")
        topo = generate_man_topology(config.topology)
        catalog = default_catalog(config.hop_prob)
        kinds_present = {d.kind for d in topo.devices}
        specs = {
            Scenario.OffPeak: ScenarioSpec(
                name=Scenario.OffPeak,
                time_range=SCENARIO_HOURS[Scenario.OffPeak],
                n_episodes=config.off_peak_episodes,
                cause_mix=make_cause_mix(catalog, config.off_peak_rare_mass, kinds_present),
                noise_rate=config.off_peak_noise,
                seed=derive_seed(config.seed, "scenario-seed", Scenario.OffPeak.value),
            ),
            Scenario.Peak: ScenarioSpec(
                name=Scenario.Peak,
                time_range=SCENARIO_HOURS[Scenario.Peak],
                n_episodes=config.peak_episodes,
                cause_mix=make_cause_mix(catalog, config.peak_rare_mass, kinds_present),
                noise_rate=config.peak_noise,
                seed=derive_seed(config.seed, "scenario-seed", Scenario.Peak.value),
            ),
        }
        log_off, labels_off = generate_scenario(
            topo, catalog, specs[Scenario.OffPeak], window_seconds=config.window_seconds
        )
        log_peak, labels_peak = generate_scenario(
            topo, catalog, specs[Scenario.Peak], window_seconds=config.window_seconds
        )
        log, labels = merge_scenarios(log_off, labels_off, log_peak, labels_peak)

    with _stage("clean"):
        log = clean(log)

    with _stage("split"):
        note("extracting diagnosis windows")
        buckets = split_by_scenario(log, labels, config.window_seconds)
        for name in (OFF_PEAK, PEAK):
            if not buckets[name]:
                raise ValueError(f"empty scenario cell: {name}")
        train_parts: dict[str, list[DiagnosisSample]] = {}
        test_parts: dict[str, list[DiagnosisSample]] = {}
        for name in (OFF_PEAK, PEAK):
            tr, te = _split_episodes(buckets[name], config.train_fraction, config.seed, name)
            if not tr or not te:
                raise ValueError(f"empty scenario cell after split: {name}")
            train_parts[name], test_parts[name] = tr, te
        train_all = train_parts[OFF_PEAK] + train_parts[PEAK]
        test_sets = {
            ALL_DAY: test_parts[OFF_PEAK] + test_parts[PEAK],
            OFF_PEAK: test_parts[OFF_PEAK],
            PEAK: test_parts[PEAK],
        }

    with _stage("mine"):
        note(f"mining association DAG from {len(train_all)} training windows")
        stats = mine_cooccurrence(train_all)
        dag = build_dag(stats, config.mining.min_support, config.mining.min_confidence)

    with _stage("embed"):
        note("training alarm-name embedding")
        train_log = _train_log(train_all)
        vocab = build_vocab([train_log])
        sequences = token_sequences(train_all, vocab)
        embedding = train_skipgram(
            sequences,
            vocab.size,
            dim=config.embedding.dim,
            window=config.embedding.window,
            negatives=config.embedding.negatives,
            epochs=config.embedding.epochs,
            lr=config.embedding.lr,
            seed=derive_seed(config.seed, "embedding-seed"),
        )

    classes = max(c.id for c in catalog.causes) + 1
    models: dict[str, object] = {}
    timings: dict[str, float] = {}

    def timed(method: str, fn: Callable[[], object]) -> None:
        note(f"training {method}")
        t0 = time.perf_counter()
        models[method] = fn()
        timings[method] = time.perf_counter() - t0

    vertices = dag.vertices
    hp_gnn = replace(config.gnn, classes=classes, seed=derive_seed(config.seed, "train-seed", "dag-gnn"))
    hp_fc = replace(config.gnn, classes=classes, seed=derive_seed(config.seed, "train-seed", "fc-gnn"))
    hp_mlp = replace(config.mlp, classes=classes, seed=derive_seed(config.seed, "train-seed", "mlp"))
    hp_forest = replace(config.forest, seed=derive_seed(config.seed, "train-seed", "forest"))

    with _stage("train:dag-gnn"):
        timed(
            "dag-gnn",
            lambda: gnn.train(dag, train_all, hp_gnn, embedding, vocab, config.feature_config),
        )
    with _stage("train:fc-gnn"):
        timed(
            "fc-gnn",
            lambda: train_fc_gnn(vertices, train_all, hp_fc, embedding, vocab, config.feature_config),
        )
    with _stage("train:mlp"):
        timed(
            "mlp",
            lambda: train_mlp(vertices, train_all, hp_mlp, embedding, vocab, config.feature_config),
        )
    with _stage("train:forest"):
        timed("forest", lambda: train_forest(train_all, catalog, hp_forest))

    with _stage("evaluate"):
        note("scoring held-out windows")
        eval_samples = test_sets[ALL_DAY]
        y_true = np.array([s.label for s in eval_samples], dtype=np.int64)
        scen = np.array([scenario_of_timestamp(s.root().timestamp) for s in eval_samples])

        feats = [
            vertex_features(s, embedding, vocab, vertices, config.feature_config)
            for s in eval_samples
        ]
        pooled = np.stack(
            [pooled_features(s, embedding, vocab, vertices, config.feature_config) for s in eval_samples]
        )
        forest_model: ForestModel = models["forest"]  # type: ignore[assignment]
        forest_x = np.stack([forest_features(s, forest_model.cause_names) for s in eval_samples])

        preds: dict[str, np.ndarray] = {}
        dag_model: GnnModel = models["dag-gnn"]  # type: ignore[assignment]
        fc_model: GnnModel = models["fc-gnn"]  # type: ignore[assignment]
        mlp_model: MlpModel = models["mlp"]  # type: ignore[assignment]
        preds["dag-gnn"] = gnn.forward_batch(dag_model, feats).argmax(axis=1)
        preds["fc-gnn"] = gnn.forward_batch(fc_model, feats).argmax(axis=1)
        preds["mlp"] = mlp_forward_batch(mlp_model, pooled).argmax(axis=1)
        preds["forest"] = forest_predict_batch(forest_model, forest_x)

        masks = {
            ALL_DAY: np.ones(len(eval_samples), dtype=bool),
            OFF_PEAK: scen == OFF_PEAK,
            PEAK: scen == PEAK,
        }
        rows: list[ResultRow] = []
        recalls: list[RecallRow] = []
        for method in METHODS:
            for scenario in SCENARIO_NAMES:
                mask = masks[scenario]
                correct = preds[method][mask] == y_true[mask]
                rows.append(
                    ResultRow(
                        method=method,
                        scenario=scenario,
                        accuracy=float(correct.mean()),
                        n_test=int(mask.sum()),
                    )
                )
                for cid in range(classes):
                    cls_mask = mask & (y_true == cid)
                    support = int(cls_mask.sum())
                    recall = (
                        float((preds[method][cls_mask] == cid).mean()) if support else None
                    )
                    recalls.append(
                        RecallRow(
                            method=method,
                            scenario=scenario,
                            cause_id=cid,
                            support=support,
                            recall=recall,
                        )
                    )
        table = ResultTable(
            rows=tuple(rows),
            recalls=tuple(recalls),
            timings=tuple((m, timings[m]) for m in METHODS),
        )

    result = ExperimentResult(
        config=config,
        table=table,
        topology=topo,
        catalog=catalog,
        log=log,
        labels=tuple(labels),
        dag=dag,
        vocab=vocab,
        embedding=embedding,
        models=models,
        train_sizes={
            ALL_DAY: len(train_all),
            OFF_PEAK: len(train_parts[OFF_PEAK]),
            PEAK: len(train_parts[PEAK]),
        },
        test_sizes={name: len(test_sets[name]) for name in SCENARIO_NAMES},
    )
    if out_dir is not None:
        with _stage("write"):
            _write_artifacts(result, Path(out_dir))
    return result


def _write_artifacts(result: ExperimentResult, out: Path) -> None:
    from .ingestion import write_log

    out.mkdir(parents=True, exist_ok=True)
    save_config(result.config, out / "config.json")
    save_topology(result.topology, out / "topology.json")
    save_catalog(result.catalog, out / "catalog.json")
    write_log(result.log, out / "alarms.log")
    save_labels(result.labels, out / "labels.csv")
    save_dag(result.dag, out / "dag.json")
    save_embedding(result.embedding, result.vocab, out / "embedding.bin")
    save_model(result.models["dag-gnn"], out / "model-dag-gnn.bin")  # type: ignore[arg-type]
    save_model(result.models["fc-gnn"], out / "model-fc-gnn.bin")  # type: ignore[arg-type]
    save_mlp(result.models["mlp"], out / "model-mlp.bin")  # type: ignore[arg-type]
    save_forest(result.models["forest"], out / "model-forest.bin")  # type: ignore[arg-type]
    (out / "results.csv").write_text(report(result.table, fmt="csv"), encoding="utf-8")
    (out / "recalls.csv").write_text(render_recall_csv(result.table), encoding="utf-8")
    (out / "report.txt").write_text(report(result.table, fmt="text"), encoding="utf-8")


def method_gap(table: ResultTable, method_a: str, method_b: str, scenario: str) -> float:
    """Accuracy difference (a minus b) in one scenario."""
    return table.accuracy(method_a, scenario) - table.accuracy(method_b, scenario)


def scenario_drop(table: ResultTable, method: str) -> float:
    """How much accuracy falls from OffPeak to Peak for one method."""
    return table.accuracy(method, OFF_PEAK) - table.accuracy(method, PEAK)
