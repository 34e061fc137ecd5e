"""Reference methods the DAG attention model is compared against.

Three alternatives with deliberately different inductive biases:

* ``fc-gnn`` — the same attention network run on a complete directed graph,
  so message passing sees every device as every other device's neighbor.
* ``mlp`` — a two-hidden-layer ELU network on pooled (order-free) features.
* ``forest`` — a random forest over per-cause alarm-name indicator counts
  plus coarse global statistics, trained from scratch with Gini splits.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import (
    DEFAULT_FEATURE_CONFIG,
    EmbeddingMatrix,
    FeatureConfig,
    Vocabulary,
    pooled_features,
)
from .gnn import (
    KIND_FC_GNN,
    MODEL_MAGIC,
    Diagnosis,
    GnnHyperparams,
    GnnModel,
    _train_on_graph,
    diagnosis_from_probs,
)
from .ingestion import DiagnosisSample
from .simulator import FaultCatalog
from .util import checkpoint_bytes, derive_rng, parse_checkpoint

KIND_MLP = "mlp"
KIND_FOREST = "forest"


# ---------------------------------------------------------------------------
# Fully connected attention variant
# ---------------------------------------------------------------------------


def complete_edges(vertices: Sequence[int]) -> list[tuple[int, int]]:
    return [(u, v) for u in vertices for v in vertices if u != v]


def train_fc_gnn(
    vertices: Sequence[int],
    samples: Sequence[DiagnosisSample],
    hp: GnnHyperparams,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
    feature_config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    chunk_size: int = 256,
) -> GnnModel:
    """Same training loop as the DAG model, but on a complete directed graph."""
    if len(set(vertices)) != len(vertices):
        raise ValueError("duplicate vertices")
    return _train_on_graph(
        KIND_FC_GNN,
        tuple(vertices),
        complete_edges(sorted(vertices)),
        samples,
        hp,
        embedding,
        vocab,
        feature_config,
        chunk_size,
    )


# ---------------------------------------------------------------------------
# Pooled-feature MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpHyperparams:
    classes: int
    hidden: int = 64
    lr: float = 0.01
    epochs: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.lr < 0 or self.epochs < 0:
            raise ValueError("lr and epochs must be >= 0")


@dataclass(frozen=True, eq=False)
class MlpModel:
    classes: int
    input_dim: int
    hidden: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    vertices: tuple[int, ...]
    vocab_sha256: str
    feature_config: FeatureConfig
    train_losses: tuple[float, ...] = ()

    @property
    def kind(self) -> str:
        return KIND_MLP


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def mlp_forward_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected (batch, {model.input_dim}) inputs")
    a1 = _elu(X @ model.w1 + model.b1)
    a2 = _elu(a1 @ model.w2 + model.b2)
    logits = a2 @ model.w3 + model.b3
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    return expl / expl.sum(axis=1, keepdims=True)


def mlp_loss(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    probs = mlp_forward_batch(model, X)
    return float(-np.log(probs[np.arange(len(y)), y]).mean())


def mlp_gradients(model: MlpModel, X: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of mlp_loss for each parameter, keyed by field name."""
    B = len(y)
    z1 = X @ model.w1 + model.b1
    a1 = _elu(z1)
    z2 = a1 @ model.w2 + model.b2
    a2 = _elu(z2)
    logits = a2 @ model.w3 + model.b3
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    dw3 = a2.T @ dlogits
    db3 = dlogits.sum(axis=0)
    dz2 = (dlogits @ model.w3.T) * _elu_grad(z2)
    dw2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ model.w2.T) * _elu_grad(z1)
    dw1 = X.T @ dz1
    db1 = dz1.sum(axis=0)
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}


def _mlp_init(hp: MlpHyperparams, input_dim: int) -> list[np.ndarray]:
    rng = derive_rng(hp.seed, "mlp-init")
    dims = [(input_dim, hp.hidden), (hp.hidden, hp.hidden), (hp.hidden, hp.classes)]
    params: list[np.ndarray] = []
    for d_in, d_out in dims:
        lim = np.sqrt(6.0 / (d_in + d_out))
        params.append(rng.uniform(-lim, lim, size=(d_in, d_out)))
        params.append(np.zeros(d_out))
    return params


def train_mlp(
    vertices: Sequence[int],
    samples: Sequence[DiagnosisSample],
    hp: MlpHyperparams,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
    feature_config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
) -> MlpModel:
    """Full-batch Adam on pooled features over the given device vertex set."""
    hp.validate()
    feature_config.validate()
    if len(samples) < hp.classes:
        raise ValueError(f"need at least {hp.classes} samples, got {len(samples)}")
    vertices = tuple(sorted(vertices))
    X = np.stack([pooled_features(s, embedding, vocab, vertices, feature_config) for s in samples])
    y = np.zeros(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.label is None:
            raise ValueError("training sample without label")
        if not 0 <= s.label < hp.classes:
            raise ValueError(f"label {s.label} outside [0, {hp.classes})")
        y[i] = s.label

    params = _mlp_init(hp, X.shape[1])
    names = ["w1", "b1", "w2", "b2", "w3", "b3"]
    m_mom = [np.zeros_like(p) for p in params]
    v_mom = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    def build(ps: list[np.ndarray], losses: tuple[float, ...]) -> MlpModel:
        return MlpModel(
            classes=hp.classes,
            input_dim=X.shape[1],
            hidden=hp.hidden,
            w1=ps[0],
            b1=ps[1],
            w2=ps[2],
            b2=ps[3],
            w3=ps[4],
            b3=ps[5],
            vertices=vertices,
            vocab_sha256=vocab.fingerprint(),
            feature_config=feature_config,
            train_losses=losses,
        )

    losses: list[float] = []
    for step in range(hp.epochs):
        model = build(params, ())
        losses.append(mlp_loss(model, X, y))
        grads = mlp_gradients(model, X, y)
        t = step + 1
        for i, name in enumerate(names):
            g = grads[name]
            m_mom[i] = beta1 * m_mom[i] + (1 - beta1) * g
            v_mom[i] = beta2 * v_mom[i] + (1 - beta2) * (g * g)
            m_hat = m_mom[i] / (1 - beta1**t)
            v_hat = v_mom[i] / (1 - beta2**t)
            params[i] = params[i] - hp.lr * m_hat / (np.sqrt(v_hat) + eps)
    final = build(params, ())
    losses.append(mlp_loss(final, X, y))
    return build(params, tuple(losses))


def diagnose_mlp(
    model: MlpModel,
    sample: DiagnosisSample,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
) -> Diagnosis:
    if vocab.fingerprint() != model.vocab_sha256:
        raise ValueError("model was trained with a different vocabulary")
    x = pooled_features(sample, embedding, vocab, model.vertices, model.feature_config)
    return diagnosis_from_probs(mlp_forward_batch(model, x[None, :])[0])


def mlp_bytes(model: MlpModel) -> bytes:
    header = {
        "kind": KIND_MLP,
        "classes": model.classes,
        "input_dim": model.input_dim,
        "hidden": model.hidden,
        "vertices": list(model.vertices),
        "vocab_sha256": model.vocab_sha256,
        "feature_config": model.feature_config.to_json_dict(),
        "train_losses": list(model.train_losses),
    }
    arrays = [model.w1, model.b1, model.w2, model.b2, model.w3, model.b3]
    return checkpoint_bytes(MODEL_MAGIC, header, arrays)


def save_mlp(model: MlpModel, path: str | Path) -> None:
    Path(path).write_bytes(mlp_bytes(model))


def load_mlp(path: str | Path, vocab: Vocabulary | None = None) -> MlpModel:
    header, arrays = parse_checkpoint(Path(path).read_bytes(), MODEL_MAGIC)
    if header["kind"] != KIND_MLP:
        raise ValueError(f"not an mlp checkpoint: kind={header['kind']}")
    if vocab is not None and vocab.fingerprint() != header["vocab_sha256"]:
        raise ValueError("checkpoint was trained with a different vocabulary")
    return MlpModel(
        classes=int(header["classes"]),
        input_dim=int(header["input_dim"]),
        hidden=int(header["hidden"]),
        w1=arrays[0],
        b1=arrays[1],
        w2=arrays[2],
        b2=arrays[3],
        w3=arrays[4],
        b3=arrays[5],
        vertices=tuple(int(v) for v in header["vertices"]),
        vocab_sha256=header["vocab_sha256"],
        feature_config=FeatureConfig.from_json_dict(header["feature_config"]),
        train_losses=tuple(float(x) for x in header["train_losses"]),
    )


# ---------------------------------------------------------------------------
# Random forest on alarm-name indicator counts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestHyperparams:
    n_trees: int = 64
    max_depth: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")


@dataclass(frozen=True)
class TreeNode:
    """Either an internal test (feature <= threshold goes left) or a leaf."""

    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_class: int | None = None

    def predict_one(self, x: np.ndarray) -> int:
        node = self
        while node.leaf_class is None:
            node = node.left if x[node.feature] <= node.threshold else node.right  # type: ignore[assignment]
        return node.leaf_class

    def to_json_dict(self) -> dict:
        if self.leaf_class is not None:
            return {"c": self.leaf_class}
        return {
            "f": self.feature,
            "t": self.threshold,
            "l": self.left.to_json_dict(),  # type: ignore[union-attr]
            "r": self.right.to_json_dict(),  # type: ignore[union-attr]
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TreeNode":
        if "c" in payload:
            return cls(leaf_class=int(payload["c"]))
        return cls(
            feature=int(payload["f"]),
            threshold=float(payload["t"]),
            left=cls.from_json_dict(payload["l"]),
            right=cls.from_json_dict(payload["r"]),
        )


@dataclass(frozen=True, eq=False)
class ForestModel:
    classes: int
    cause_names: tuple[frozenset[str], ...]  # alarm-name set per cause id
    trees: tuple[TreeNode, ...]
    train_accuracy: float = 0.0

    @property
    def kind(self) -> str:
        return KIND_FOREST

    @property
    def n_features(self) -> int:
        return self.classes + 3


def catalog_name_sets(catalog: FaultCatalog) -> tuple[frozenset[str], ...]:
    """Alarm names each cause can emit (over all device kinds), indexed by cause id."""
    n = max(c.id for c in catalog.causes) + 1
    sets: list[set[str]] = [set() for _ in range(n)]
    for (cid, _), names in catalog.alarm_templates.items():
        sets[cid].update(names)
    return tuple(frozenset(s) for s in sets)


def forest_features(sample: DiagnosisSample, cause_names: Sequence[frozenset[str]]) -> np.ndarray:
    """Per-cause count of records whose alarm name the cause can emit, plus
    [record count, distinct names, max severity rank]."""
    x = np.zeros(len(cause_names) + 3, dtype=np.float64)
    names = set()
    max_rank = 0
    for rec in sample.records:
        for cid, nameset in enumerate(cause_names):
            if rec.alarm_name in nameset:
                x[cid] += 1.0
        if rec.alarm_name:
            names.add(rec.alarm_name)
        if rec.severity.rank > max_rank:
            max_rank = rec.severity.rank
    x[-3] = float(len(sample.records))
    x[-2] = float(len(names))
    x[-1] = float(max_rank)
    return x


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def best_split(
    X: np.ndarray, y: np.ndarray, feature_ids: Sequence[int], n_classes: int
) -> tuple[int, float, float] | None:
    """Lowest weighted-Gini split among the given features.

    Returns (feature, threshold, weighted_gini); ties break on the smallest
    (gini, feature, threshold) triple. None when no feature admits a split.
    """
    n = len(y)
    best: tuple[float, int, float] | None = None
    for f in sorted(feature_ids):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        left = np.zeros(n_classes)
        right = np.bincount(ys, minlength=n_classes).astype(np.float64)
        for i in range(n - 1):
            left[ys[i]] += 1
            right[ys[i]] -= 1
            if xs[i] == xs[i + 1]:
                continue
            n_left = i + 1
            w = (n_left * _gini(left) + (n - n_left) * _gini(right)) / n
            thr = (xs[i] + xs[i + 1]) / 2.0
            cand = (w, f, thr)
            if best is None or cand < best:
                best = cand
    if best is None:
        return None
    w, f, thr = best
    return f, thr, w


def _majority(y: np.ndarray, n_classes: int) -> int:
    return int(np.bincount(y, minlength=n_classes).argmax())


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    depth: int,
    max_depth: int,
    n_classes: int,
    n_subsample: int,
    rng: np.random.Generator,
) -> TreeNode:
    if depth >= max_depth or len(y) < 2 or len(np.unique(y)) == 1:
        return TreeNode(leaf_class=_majority(y, n_classes))
    feats = sorted(rng.choice(X.shape[1], size=n_subsample, replace=False).tolist())
    parent = _gini(np.bincount(y, minlength=n_classes).astype(np.float64))
    found = best_split(X, y, feats, n_classes)
    if found is None:
        return TreeNode(leaf_class=_majority(y, n_classes))
    f, thr, w = found
    if w >= parent - 1e-12:
        return TreeNode(leaf_class=_majority(y, n_classes))
    mask = X[:, f] <= thr
    left = _grow_tree(X[mask], y[mask], depth + 1, max_depth, n_classes, n_subsample, rng)
    right = _grow_tree(X[~mask], y[~mask], depth + 1, max_depth, n_classes, n_subsample, rng)
    return TreeNode(feature=f, threshold=thr, left=left, right=right)


def train_forest(
    samples: Sequence[DiagnosisSample],
    catalog: FaultCatalog,
    hp: ForestHyperparams = ForestHyperparams(),
) -> ForestModel:
    """Bootstrap-aggregated Gini trees with per-node sqrt feature subsampling."""
    hp.validate()
    catalog.validate()
    if not samples:
        raise ValueError("no training samples")
    cause_names = catalog_name_sets(catalog)
    classes = len(cause_names)
    X = np.stack([forest_features(s, cause_names) for s in samples])
    y = np.zeros(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.label is None:
            raise ValueError("training sample without label")
        if not 0 <= s.label < classes:
            raise ValueError(f"label {s.label} outside [0, {classes})")
        y[i] = s.label
    n = len(y)
    n_subsample = max(1, int(np.sqrt(X.shape[1])))
    trees = []
    for t in range(hp.n_trees):
        rng = derive_rng(hp.seed, "forest-tree", t)
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[idx], y[idx], 0, hp.max_depth, classes, n_subsample, rng))
    model = ForestModel(classes=classes, cause_names=cause_names, trees=tuple(trees))
    acc = float(np.mean(forest_predict_batch(model, X) == y))
    return ForestModel(classes=classes, cause_names=cause_names, trees=tuple(trees), train_accuracy=acc)


def forest_votes(model: ForestModel, x: np.ndarray) -> np.ndarray:
    votes = np.zeros(model.classes, dtype=np.float64)
    for tree in model.trees:
        votes[tree.predict_one(x)] += 1.0
    return votes / len(model.trees)


def forest_predict_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    return np.array([int(np.argmax(forest_votes(model, x))) for x in X], dtype=np.int64)


def diagnose_forest(model: ForestModel, sample: DiagnosisSample) -> Diagnosis:
    x = forest_features(sample, model.cause_names)
    return diagnosis_from_probs(forest_votes(model, x))


def forest_bytes(model: ForestModel) -> bytes:
    header = {
        "kind": KIND_FOREST,
        "classes": model.classes,
        "cause_names": [sorted(s) for s in model.cause_names],
        "trees": [t.to_json_dict() for t in model.trees],
        "train_accuracy": model.train_accuracy,
    }
    return checkpoint_bytes(MODEL_MAGIC, header, [])


def save_forest(model: ForestModel, path: str | Path) -> None:
    Path(path).write_bytes(forest_bytes(model))


def load_forest(path: str | Path) -> ForestModel:
    header, _ = parse_checkpoint(Path(path).read_bytes(), MODEL_MAGIC)
    if header["kind"] != KIND_FOREST:
        raise ValueError(f"not a forest checkpoint: kind={header['kind']}")
    return ForestModel(
        classes=int(header["classes"]),
        cause_names=tuple(frozenset(s) for s in header["cause_names"]),
        trees=tuple(TreeNode.from_json_dict(t) for t in header["trees"]),
        train_accuracy=float(header["train_accuracy"]),
    )


def peek_model_kind(path: str | Path) -> str:
    header, _ = parse_checkpoint(Path(path).read_bytes(), MODEL_MAGIC)
    return str(header["kind"])
