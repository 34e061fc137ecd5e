"""Run the full benchmark pipeline and compare all four diagnosis methods.

One call generates off-peak and peak traffic on a shared topology, mines the
association graph and trains the embedding on training windows only, fits all
four methods, and scores them on held-out windows per scenario. The point of
the comparison: methods that ignore network structure hold up while faults
look like the training mix, but lose ground at peak hours when rare faults
surge — the structure-aware attention model degrades the least.
"""

from netdiag.baselines import ForestHyperparams, MlpHyperparams
from netdiag.gnn import GnnHyperparams
from netdiag.harness import (
    EmbeddingTrainConfig,
    ExperimentConfig,
    method_gap,
    report,
    run_experiment,
    scenario_drop,
)
from netdiag.ingestion import PEAK
from netdiag.topology import TopologySpec

# A reduced copy of the standard benchmark config; takes about a minute on a
# laptop CPU. Run `netdiag evaluate` for the full-size version, and average
# several seeds before reading anything into small differences.
config = ExperimentConfig(
    seed=0,
    topology=TopologySpec(n_core=3, n_agg=4, n_bs=8, cross_link_prob=0.2, seed=3),
    off_peak_episodes=240,
    peak_episodes=160,
    gnn=GnnHyperparams(classes=8, hidden=16, heads=2, epochs=120, seed=0),
    mlp=MlpHyperparams(classes=8, hidden=48, epochs=250, seed=0),
    forest=ForestHyperparams(n_trees=64, max_depth=8, seed=0),
    embedding=EmbeddingTrainConfig(dim=16, epochs=2),
)

result = run_experiment(config, progress=lambda msg: print(f"  ... {msg}"))
print()
print(report(result.table, fmt="text"))

table = result.table
print("peak-hour gap of the attention model over each baseline:")
for other in ("fc-gnn", "mlp", "forest"):
    print(f"  vs {other:<7} {100 * method_gap(table, 'dag-gnn', other, PEAK):+.1f}pp")

print("\noff-peak -> peak accuracy drop (smaller is better):")
for method in ("dag-gnn", "fc-gnn", "mlp", "forest"):
    print(f"  {method:<8} {100 * scenario_drop(table, method):+.1f}pp")
