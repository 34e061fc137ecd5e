"""Mine the device-association graph out of raw alarm co-occurrence.

Alarms that repeatedly fire together across failure windows reveal which
devices influence which. Counting co-occurrence, thresholding on support and
confidence, orienting edges by who alarms first, and breaking any remaining
cycles yields a directed acyclic graph — the structural backbone the
attention-based diagnosis model runs on.
"""

from netdiag.association import build_dag, dag_recovery_score, mine_cooccurrence
from netdiag.ingestion import DiagnosisSample
from netdiag.simulator import default_catalog, inject_failure
from netdiag.topology import TopologySpec, generate_man_topology

# A single-core tree makes the ground truth easy to read: propagation can only
# flow outward from the core, so every mined edge should point root-to-leaf.
tree = generate_man_topology(TopologySpec(n_core=1, n_agg=3, n_bs=6, cross_link_prob=0.0, seed=2))
cat = default_catalog(hop_prob=0.7)
cause = cat.cause(2)  # a cause that emits alarms on every device kind

episodes, samples = [], []
for i in range(100):
    ep = inject_failure(tree, cat, cause, root=0, t0=1000.0 * i, seed=i, start_record_id=i * 10_000)
    episodes.append(ep)
    samples.append(DiagnosisSample(records=ep.records, root_record=ep.records[0].record_id, label=cause.id))

# 1. Count, per pair of devices, how often both alarm inside the same window.
stats = mine_cooccurrence(samples)
print(f"{stats.n_samples} windows, {len(stats.device_count)} devices seen, "
      f"{len(stats.pair_count)} co-occurring pairs")

# 2. Keep pairs with enough support and confidence; orient by median first-alarm
#    time; drop the weakest edge of any cycle that survives.
dag = build_dag(stats, min_support=0.2, min_confidence=0.5)
print(f"\nmined graph: {len(dag.vertices)} vertices, {len(dag.edges)} directed edges")
for src, dst, conf in sorted(dag.edges):
    print(f"  {src} -> {dst}   confidence {conf:.2f}")

# 3. Score the mined edges against the links the injected floods actually
#    traversed. At 70% hop probability the deepest links are crossed in only
#    half the episodes, yet a hundred windows recover the shape reliably.
score = dag_recovery_score(dag, tree, episodes)
print(f"\nrecovery vs ground truth: precision {score.precision:.2f}, recall {score.recall:.2f}")
