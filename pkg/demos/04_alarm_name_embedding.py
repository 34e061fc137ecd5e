"""Learn a shared vector space for heterogeneous alarm-name text.

Alarm names are free-form vendor text. Training a small skip-gram model on the
token streams of each device teaches it which words appear in the same fault
contexts, giving every alarm a fixed-length vector — the content half of the
features the diagnosis models consume.
"""

import numpy as np

from netdiag.embedding import build_vocab, token_sequences, train_skipgram
from netdiag.ingestion import ALL_DAY, clean, split_by_scenario
from netdiag.simulator import (
    SCENARIO_HOURS,
    Scenario,
    ScenarioSpec,
    default_catalog,
    generate_scenario,
    make_cause_mix,
)
from netdiag.topology import TopologySpec, generate_man_topology

g = generate_man_topology(TopologySpec(n_core=3, n_agg=4, n_bs=8, cross_link_prob=0.2, seed=3))
cat = default_catalog(hop_prob=0.75)
spec = ScenarioSpec(
    name=Scenario.OffPeak,
    time_range=SCENARIO_HOURS[Scenario.OffPeak],
    n_episodes=80,
    cause_mix=make_cause_mix(cat, rare_mass=0.05, kinds_present={d.kind for d in g.devices}),
    noise_rate=0.06,
    seed=5,
)
log, labels = generate_scenario(g, cat, spec)
samples = split_by_scenario(clean(log), labels)[ALL_DAY]

# 1. Vocabulary: every word that appears in any alarm name, most frequent
#    first, with a reserved slot for unseen words.
vocab = build_vocab([log])
print(f"{len(samples)} windows, vocabulary of {vocab.size} tokens")
print("most frequent tokens:", ", ".join(vocab.tokens[1:9]))

# 2. Token sequences follow each device's alarms in time order, so words that
#    co-occur in the same fault context become skip-gram training pairs.
sequences = token_sequences(samples, vocab)
emb = train_skipgram(sequences, vocab.size, dim=24, window=4, negatives=5, epochs=3, lr=0.05, seed=9)

# 3. Nearest neighbours in cosine distance: words from the same fault templates
#    land close together even though no label ever told the model that.
vectors = emb.input_vectors / np.linalg.norm(emb.input_vectors, axis=1, keepdims=True)
for probe in ("fan", "sync", "signal"):
    idx = vocab.tokens.index(probe)
    sims = vectors @ vectors[idx]
    ranked = np.argsort(-sims)
    neighbours = [vocab.tokens[j] for j in ranked if j != idx and vocab.tokens[j] != "<unk>"][:4]
    print(f"  '{probe}' is closest to: {', '.join(neighbours)}")
