"""Root-cause diagnosis toolkit for telecom alarm floods.

The pipeline: generate (or parse) alarm logs on an access-network topology,
extract diagnosis windows around root alarms, mine a device association DAG
from co-occurrence statistics, embed alarm-name tokens, and classify each
window's root cause with an attention network over the DAG — benchmarked
against a fully connected attention variant, a pooled-feature MLP, and a
random forest.
"""

from .association import (
    AssociationDag,
    CooccurrenceStats,
    RecoveryScore,
    break_cycles,
    build_dag,
    dag_from_json,
    dag_recovery_score,
    dag_to_json,
    load_dag,
    mine_cooccurrence,
    save_dag,
)
from .baselines import (
    ForestHyperparams,
    ForestModel,
    MlpHyperparams,
    MlpModel,
    TreeNode,
    best_split,
    catalog_name_sets,
    complete_edges,
    diagnose_forest,
    diagnose_mlp,
    forest_features,
    forest_predict_batch,
    load_forest,
    load_mlp,
    mlp_forward_batch,
    mlp_gradients,
    mlp_loss,
    peek_model_kind,
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
    VertexFeatures,
    Vocabulary,
    build_vocab,
    feature_dim,
    load_embedding,
    pooled_features,
    save_embedding,
    skipgram_pair_grads,
    skipgram_pair_loss,
    token_sequences,
    tokenize,
    train_skipgram,
    vertex_features,
)
from .gnn import (
    Diagnosis,
    GnnGradients,
    GnnHyperparams,
    GnnModel,
    attention_maps,
    diagnose,
    forward,
    forward_batch,
    gradients,
    load_model,
    loss,
    save_model,
    train,
    vertex_representations,
)
from .harness import (
    METHODS,
    ExperimentConfig,
    ExperimentResult,
    RecallRow,
    ResultRow,
    ResultTable,
    StageError,
    load_config,
    method_gap,
    parse_result_table,
    render_recall_csv,
    report,
    run_experiment,
    save_config,
    scenario_drop,
    standard_config,
)
from .ingestion import (
    ALL_DAY,
    DEFAULT_SCHEMA,
    DEFAULT_WINDOW_SECONDS,
    OFF_PEAK,
    PEAK,
    SCENARIO_NAMES,
    AlarmLog,
    AlarmRecord,
    DiagnosisSample,
    LogSchema,
    ParseResult,
    Severity,
    clean,
    extract_sample,
    format_record,
    hour_of,
    load_schema,
    parse_log,
    save_schema,
    scenario_of_timestamp,
    split_by_scenario,
    write_log,
)
from .simulator import (
    FailureEpisode,
    FaultCatalog,
    Rarity,
    RootCause,
    Scenario,
    ScenarioSpec,
    default_catalog,
    generate_scenario,
    inject_failure,
    load_catalog,
    load_labels,
    make_cause_mix,
    merge_scenarios,
    save_catalog,
    save_labels,
    separable_catalog,
)
from .topology import (
    Device,
    DeviceKind,
    TopologyGraph,
    TopologySpec,
    find_weak_links,
    generate_man_topology,
    load_topology,
    save_topology,
    validate,
)
from .util import derive_rng, derive_seed, stable_hash64

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
