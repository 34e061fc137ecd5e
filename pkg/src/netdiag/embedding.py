"""Unified fault embedding: alarm-token vectors plus per-device features.

Alarm names are lowercased and split on non-alphanumerics into tokens; a
skip-gram model with negative sampling turns co-alarming token streams into
vectors, and each device in a diagnosis window gets the mean of its token
vectors concatenated with scaled side statistics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingestion import AlarmLog, DiagnosisSample
from .util import canonical_json, checkpoint_bytes, parse_checkpoint, sha256_hex

UNK_TOKEN = "<unk>"
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

EMBEDDING_MAGIC = b"NDEM"


def tokenize(name: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(name.lower()) if t]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # tokens[0] is the unknown-token sentinel

    def __post_init__(self) -> None:
        if not self.tokens or self.tokens[0] != UNK_TOKEN:
            raise ValueError(f"tokens[0] must be {UNK_TOKEN!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens")

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, name: str) -> list[int]:
        idx = self.index_of
        return [idx.get(t, 0) for t in tokenize(name)]

    def fingerprint(self) -> str:
        return sha256_hex("\n".join(self.tokens).encode("utf-8"))


def build_vocab(logs: Iterable[AlarmLog], min_count: int = 1) -> Vocabulary:
    """Token inventory ordered by (frequency desc, token asc); rare ones fold into UNK."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[str, int] = {}
    for log in logs:
        for rec in log.records:
            for tok in tokenize(rec.alarm_name):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(tokens=(UNK_TOKEN, *kept))


def token_sequences(samples: Sequence[DiagnosisSample], vocab: Vocabulary) -> list[list[int]]:
    """One token sequence per (sample, device), records in time order."""
    sequences: list[list[int]] = []
    for sample in samples:
        per_device: dict[int, list[int]] = {}
        for rec in sorted(sample.records, key=lambda r: (r.timestamp, r.record_id)):
            toks = vocab.encode(rec.alarm_name)
            if toks:
                per_device.setdefault(rec.device_id, []).extend(toks)
        for dev in sorted(per_device):
            sequences.append(per_device[dev])
    return sequences


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    input_vectors: np.ndarray  # (V, d)
    output_vectors: np.ndarray  # (V, d)

    def __post_init__(self) -> None:
        if self.input_vectors.shape != self.output_vectors.shape:
            raise ValueError("input/output shape mismatch")
        if self.input_vectors.ndim != 2:
            raise ValueError("expected 2-d matrices")
        if not (np.isfinite(self.input_vectors).all() and np.isfinite(self.output_vectors).all()):
            raise ValueError("non-finite embedding values")

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.input_vectors.shape[0]


def init_matrices(n_tokens: int, dim: int, seed: int) -> EmbeddingMatrix:
    from .util import derive_rng

    rng = derive_rng(seed, "embedding-init")
    bound = 0.5 / dim
    return EmbeddingMatrix(
        input_vectors=rng.uniform(-bound, bound, size=(n_tokens, dim)),
        output_vectors=rng.uniform(-bound, bound, size=(n_tokens, dim)),
    )


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -35.0, 35.0)))


def skipgram_pair_loss(
    input_vectors: np.ndarray,
    output_vectors: np.ndarray,
    center: int,
    context: int,
    negatives: Sequence[int],
) -> float:
    """Negative-sampling loss for one (center, context) pair."""
    v = input_vectors[center]
    pos = float(np.log(_sigmoid(output_vectors[context] @ v)))
    neg = float(np.sum(np.log(_sigmoid(-(output_vectors[list(negatives)] @ v)))))
    return -(pos + neg)


def skipgram_pair_grads(
    input_vectors: np.ndarray,
    output_vectors: np.ndarray,
    center: int,
    context: int,
    negatives: Sequence[int],
) -> tuple[np.ndarray, np.ndarray]:
    """Dense gradients of skipgram_pair_loss w.r.t. both matrices."""
    d_in = np.zeros_like(input_vectors)
    d_out = np.zeros_like(output_vectors)
    v = input_vectors[center]
    u_o = output_vectors[context]
    negs = np.asarray(list(negatives), dtype=np.int64)
    u_n = output_vectors[negs]
    g_pos = _sigmoid(u_o @ v) - 1.0
    g_neg = _sigmoid(u_n @ v)
    d_in[center] = g_pos * u_o + g_neg @ u_n
    d_out[context] += g_pos * v
    np.add.at(d_out, negs, g_neg[:, None] * v)
    return d_in, d_out


def train_skipgram(
    sequences: Sequence[Sequence[int]],
    n_tokens: int,
    dim: int = 32,
    window: int = 4,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.05,
    seed: int = 0,
) -> EmbeddingMatrix:
    """SGD skip-gram with negative sampling over token sequences.

    One gradient step per (center, context) pair; negatives drawn from the
    unigram distribution raised to 0.75. Fully deterministic under seed.
    """
    if dim < 1 or window < 1 or negatives < 1 or epochs < 0 or lr < 0:
        raise ValueError("bad hyperparameters")
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    pairs: list[tuple[int, int]] = []
    counts = np.zeros(n_tokens, dtype=np.float64)
    for seq in sequences:
        for tok in seq:
            if not 0 <= tok < n_tokens:
                raise ValueError(f"token index out of range: {tok}")
            counts[tok] += 1
        for i, center in enumerate(seq):
            lo = max(0, i - window)
            hi = min(len(seq), i + window + 1)
            for j in range(lo, hi):
                if j != i:
                    pairs.append((center, seq[j]))
    if not pairs:
        raise ValueError("no training pairs: sequence set is empty or all length one")

    observed = np.flatnonzero(counts)
    q = counts[observed] ** 0.75
    q /= q.sum()

    from .util import derive_rng

    matrices = init_matrices(n_tokens, dim, seed)
    inp = matrices.input_vectors.copy()
    out = matrices.output_vectors.copy()
    rng = derive_rng(seed, "embedding-train")
    pair_arr = np.asarray(pairs, dtype=np.int64)
    n_pairs = len(pairs)
    for _epoch in range(epochs):
        order = rng.permutation(n_pairs)
        negs_all = observed[rng.choice(len(observed), size=(n_pairs, negatives), p=q)]
        centers = pair_arr[order, 0]
        contexts = pair_arr[order, 1]
        for k in range(n_pairs):
            c = centers[k]
            o = contexts[k]
            negs = negs_all[k]
            v = inp[c]
            u_o = out[o]
            u_n = out[negs]
            g_pos = _sigmoid(u_o @ v) - 1.0
            g_neg = _sigmoid(u_n @ v)
            d_v = g_pos * u_o + g_neg @ u_n
            out[o] -= lr * g_pos * v
            np.add.at(out, negs, (-lr) * g_neg[:, None] * v)
            inp[c] -= lr * d_v
    return EmbeddingMatrix(input_vectors=inp, output_vectors=out)


@dataclass(frozen=True)
class FeatureConfig:
    """Caps used to scale side features into [0, 1]."""

    record_count_cap: int = 32
    distinct_alarm_cap: int = 16
    severity_cap: int = 4
    global_record_cap: int = 256
    global_distinct_cap: int = 64

    def validate(self) -> None:
        for v in (
            self.record_count_cap,
            self.distinct_alarm_cap,
            self.severity_cap,
            self.global_record_cap,
            self.global_distinct_cap,
        ):
            if v < 1:
                raise ValueError("feature caps must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "record_count_cap": self.record_count_cap,
            "distinct_alarm_cap": self.distinct_alarm_cap,
            "severity_cap": self.severity_cap,
            "global_record_cap": self.global_record_cap,
            "global_distinct_cap": self.global_distinct_cap,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "FeatureConfig":
        return cls(**{k: int(v) for k, v in payload.items()})


DEFAULT_FEATURE_CONFIG = FeatureConfig()

N_SIDE_FEATURES = 3


@dataclass(frozen=True, eq=False)
class VertexFeatures:
    """Per-device feature vectors for every vertex of one DAG vertex set."""

    vectors: Mapping[int, np.ndarray]
    dim: int
    n_dropped: int = 0


def feature_dim(embedding: EmbeddingMatrix) -> int:
    return embedding.dim + N_SIDE_FEATURES


def vertex_features(
    sample: DiagnosisSample,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
    dag_vertices: Sequence[int],
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
) -> VertexFeatures:
    """Mean token vector per device plus [record count, max severity, distinct names].

    Every DAG vertex gets an entry (zeros when silent); sample devices outside
    the vertex set are dropped and only counted.
    """
    config.validate()
    if vocab.size != embedding.n_tokens:
        raise ValueError("vocabulary and embedding disagree on token count")
    d = embedding.dim
    vset = set(dag_vertices)
    per_dev: dict[int, list] = {v: [] for v in vset}
    dropped: set[int] = set()
    for rec in sample.records:
        if rec.device_id in vset:
            per_dev[rec.device_id].append(rec)
        else:
            dropped.add(rec.device_id)
    vectors: dict[int, np.ndarray] = {}
    for dev in sorted(vset):
        recs = per_dev[dev]
        vec = np.zeros(d + N_SIDE_FEATURES, dtype=np.float64)
        token_ids: list[int] = []
        names: set[str] = set()
        max_rank = 0
        for rec in recs:
            token_ids.extend(vocab.encode(rec.alarm_name))
            if rec.alarm_name:
                names.add(rec.alarm_name)
            if rec.severity.rank > max_rank:
                max_rank = rec.severity.rank
        if token_ids:
            vec[:d] = embedding.input_vectors[token_ids].mean(axis=0)
        vec[d] = min(1.0, len(recs) / config.record_count_cap)
        vec[d + 1] = min(1.0, max_rank / config.severity_cap)
        vec[d + 2] = min(1.0, len(names) / config.distinct_alarm_cap)
        vectors[dev] = vec
    return VertexFeatures(vectors=vectors, dim=d + N_SIDE_FEATURES, n_dropped=len(dropped))


def pooled_features(
    sample: DiagnosisSample,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
    dag_vertices: Sequence[int],
    config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
) -> np.ndarray:
    """Mean of all vertex features plus global side features (for flat models)."""
    vf = vertex_features(sample, embedding, vocab, dag_vertices, config)
    stacked = np.stack([vf.vectors[v] for v in sorted(vf.vectors)])
    names = {r.alarm_name for r in sample.records if r.alarm_name}
    max_rank = max((r.severity.rank for r in sample.records), default=0)
    side = np.array(
        [
            min(1.0, len(sample.records) / config.global_record_cap),
            min(1.0, max_rank / config.severity_cap),
            min(1.0, len(names) / config.global_distinct_cap),
        ],
        dtype=np.float64,
    )
    return np.concatenate([stacked.mean(axis=0), side])


def embedding_header(embedding: EmbeddingMatrix, vocab: Vocabulary) -> dict:
    return {
        "n_tokens": embedding.n_tokens,
        "dim": embedding.dim,
        "vocab_sha256": vocab.fingerprint(),
        "tokens": list(vocab.tokens),
    }


def embedding_bytes(embedding: EmbeddingMatrix, vocab: Vocabulary) -> bytes:
    return checkpoint_bytes(
        EMBEDDING_MAGIC,
        embedding_header(embedding, vocab),
        [embedding.input_vectors, embedding.output_vectors],
    )


def save_embedding(embedding: EmbeddingMatrix, vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_bytes(embedding_bytes(embedding, vocab))


def load_embedding(path: str | Path, vocab: Vocabulary | None = None) -> tuple[EmbeddingMatrix, Vocabulary]:
    header, arrays = parse_checkpoint(Path(path).read_bytes(), EMBEDDING_MAGIC)
    stored_vocab = Vocabulary(tokens=tuple(header["tokens"]))
    if stored_vocab.fingerprint() != header["vocab_sha256"]:
        raise ValueError("vocabulary hash mismatch in embedding checkpoint")
    if vocab is not None and vocab.fingerprint() != header["vocab_sha256"]:
        raise ValueError("embedding checkpoint was trained with a different vocabulary")
    emb = EmbeddingMatrix(input_vectors=arrays[0], output_vectors=arrays[1])
    if emb.n_tokens != header["n_tokens"] or emb.dim != header["dim"]:
        raise ValueError("embedding checkpoint header/array mismatch")
    return emb, stored_vocab
