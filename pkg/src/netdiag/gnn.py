"""Attention message passing over the mined device DAG.

Each vertex attends over its DAG in-neighbors plus itself, per head:
score(u, v) = LeakyReLU(a . [W x_u || W x_v]), attention = softmax over the
neighborhood of v, and the new representation is ELU of the attention-weighted
sum of transformed neighbor features. Head outputs are concatenated between
layers and averaged at the last one; the mean over vertices feeds a linear
softmax readout that names the root cause.

Everything is dense numpy with explicit reverse-mode gradients so training is
bit-deterministic and finite-difference checkable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .association import AssociationDag
from .embedding import (
    DEFAULT_FEATURE_CONFIG,
    EmbeddingMatrix,
    FeatureConfig,
    VertexFeatures,
    Vocabulary,
    feature_dim,
    vertex_features,
)
from .ingestion import DiagnosisSample
from .util import canonical_json, checkpoint_bytes, derive_rng, parse_checkpoint, sha256_hex

MODEL_MAGIC = b"NDMD"

KIND_DAG_GNN = "dag-gnn"
KIND_FC_GNN = "fc-gnn"


@dataclass(frozen=True)
class GnnHyperparams:
    classes: int
    layers: int = 2
    hidden: int = 16
    heads: int = 2
    leaky_slope: float = 0.2
    lr: float = 0.02
    epochs: int = 150
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ValueError("layers, hidden, and heads must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.lr < 0 or self.epochs < 0:
            raise ValueError("lr and epochs must be >= 0")


@dataclass(frozen=True, eq=False)
class _Graph:
    """Edge arrays with self-loops, sorted by destination for segment ops."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    seg_starts: np.ndarray  # first edge index per destination vertex
    src_order: np.ndarray  # permutation sorting edges by source vertex
    src_seg_starts: np.ndarray


def _build_graph(n: int, edges: Sequence[tuple[int, int]]) -> _Graph:
    src = np.array([u for u, _ in edges] + list(range(n)), dtype=np.int64)
    dst = np.array([v for _, v in edges] + list(range(n)), dtype=np.int64)
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    seg_starts = np.searchsorted(dst, np.arange(n))
    src_order = np.lexsort((dst, src))
    src_seg_starts = np.searchsorted(src[src_order], np.arange(n))
    return _Graph(
        n=n, src=src, dst=dst, seg_starts=seg_starts, src_order=src_order, src_seg_starts=src_seg_starts
    )


@dataclass(frozen=True, eq=False)
class GnnModel:
    kind: str
    classes: int
    layers: int
    hidden: int
    heads: int
    leaky_slope: float
    input_dim: int
    layer_w: tuple[np.ndarray, ...]  # per layer: (heads, in_dim, hidden)
    layer_a: tuple[np.ndarray, ...]  # per layer: (heads, 2 * hidden)
    out_w: np.ndarray  # (hidden, classes)
    out_b: np.ndarray  # (classes,)
    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    vocab_sha256: str
    feature_config: FeatureConfig
    train_losses: tuple[float, ...] = ()

    @cached_property
    def graph(self) -> _Graph:
        index = {v: i for i, v in enumerate(self.vertices)}
        return _build_graph(len(self.vertices), [(index[u], index[v]) for u, v in self.edges])

    @cached_property
    def vertex_index(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.vertices)}


@dataclass(frozen=True)
class Diagnosis:
    cause: int
    distribution: tuple[float, ...]

    def __post_init__(self) -> None:
        if abs(sum(self.distribution) - 1.0) > 1e-6:
            raise ValueError("distribution must sum to 1")
        if self.cause != int(np.argmax(self.distribution)):
            raise ValueError("cause must be the argmax of the distribution")


def diagnosis_from_probs(probs: np.ndarray) -> Diagnosis:
    # np.argmax already returns the lowest index on ties.
    return Diagnosis(cause=int(np.argmax(probs)), distribution=tuple(float(p) for p in probs))


@dataclass(frozen=True, eq=False)
class GnnGradients:
    layer_w: tuple[np.ndarray, ...]
    layer_a: tuple[np.ndarray, ...]
    out_w: np.ndarray
    out_b: np.ndarray


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, slope)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def _layer_forward(
    W: np.ndarray,
    A: np.ndarray,
    graph: _Graph,
    X: np.ndarray,
    slope: float,
    last: bool,
    cache: list | None,
):
    """One attention layer over the batch; X is (B, n, in_dim)."""
    heads = W.shape[0]
    h = W.shape[2]
    outputs = []
    for t in range(heads):
        Z = X @ W[t]  # (B, n, h)
        zs = Z[:, graph.src, :]
        zd = Z[:, graph.dst, :]
        s = zs @ A[t, :h] + zd @ A[t, h:]  # (B, E)
        e = _leaky(s, slope)
        m = np.maximum.reduceat(e, graph.seg_starts, axis=1)  # (B, n)
        ex = np.exp(e - m[:, graph.dst])
        den = np.add.reduceat(ex, graph.seg_starts, axis=1)
        alpha = ex / den[:, graph.dst]  # (B, E)
        M = np.add.reduceat(alpha[:, :, None] * zs, graph.seg_starts, axis=1)  # (B, n, h)
        outputs.append(_elu(M))
        if cache is not None:
            cache.append((Z, s, alpha, M))
    if last:
        return sum(outputs) / heads
    return np.concatenate(outputs, axis=2)


def _forward_batch(
    layer_w: Sequence[np.ndarray],
    layer_a: Sequence[np.ndarray],
    out_w: np.ndarray,
    out_b: np.ndarray,
    graph: _Graph,
    X: np.ndarray,
    slope: float,
    want_cache: bool = False,
):
    """Returns (probs, readout, vertex reps, caches)."""
    caches: list | None = [] if want_cache else None
    h_cur = X
    inputs: list[np.ndarray] = []
    n_layers = len(layer_w)
    for li in range(n_layers):
        inputs.append(h_cur)
        layer_cache: list | None = [] if want_cache else None
        h_cur = _layer_forward(
            layer_w[li], layer_a[li], graph, h_cur, slope, last=(li == n_layers - 1), cache=layer_cache
        )
        if want_cache:
            caches.append(layer_cache)  # type: ignore[union-attr]
    r = h_cur.mean(axis=1)  # (B, h)
    logits = r @ out_w + out_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    return probs, r, h_cur, (inputs, caches)


def _backward_batch(
    layer_w: Sequence[np.ndarray],
    layer_a: Sequence[np.ndarray],
    out_w: np.ndarray,
    graph: _Graph,
    slope: float,
    probs: np.ndarray,
    r: np.ndarray,
    y: np.ndarray,
    inputs: Sequence[np.ndarray],
    caches: Sequence[Sequence[tuple]],
):
    """Gradients of the summed cross-entropy over the batch (not yet averaged)."""
    B, n = probs.shape[0], graph.n
    n_layers = len(layer_w)
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0  # (B, C)
    d_out_w = r.T @ dlogits
    d_out_b = dlogits.sum(axis=0)
    dr = dlogits @ out_w.T  # (B, h)
    dH = np.broadcast_to(dr[:, None, :] / n, (B, n, dr.shape[1])).copy()

    d_layer_w = [np.zeros_like(w) for w in layer_w]
    d_layer_a = [np.zeros_like(a) for a in layer_a]
    for li in range(n_layers - 1, -1, -1):
        W, A = layer_w[li], layer_a[li]
        heads, _, h = W.shape
        X_in = inputs[li]
        dX = np.zeros_like(X_in)
        last = li == n_layers - 1
        for t in range(heads):
            Z, s, alpha, M = caches[li][t]
            if last:
                dOut = dH / heads
            else:
                dOut = dH[:, :, t * h : (t + 1) * h]
            dM = dOut * _elu_grad(M)  # (B, n, h)
            zs = Z[:, graph.src, :]
            dmsg = dM[:, graph.dst, :]  # (B, E, h)
            dalpha = np.einsum("beh,beh->be", dmsg, zs)
            dzs = alpha[:, :, None] * dmsg
            t1 = alpha * dalpha
            S = np.add.reduceat(t1, graph.seg_starts, axis=1)  # (B, n)
            de = t1 - alpha * S[:, graph.dst]
            ds = de * _leaky_grad(s, slope)  # (B, E)
            zd = Z[:, graph.dst, :]
            d_layer_a[li][t, :h] += np.einsum("be,beh->h", ds, zs)
            d_layer_a[li][t, h:] += np.einsum("be,beh->h", ds, zd)
            dzs += ds[:, :, None] * A[t, :h]
            dzd = ds[:, :, None] * A[t, h:]
            dZ = np.add.reduceat(dzd, graph.seg_starts, axis=1)
            dZ += np.add.reduceat(dzs[:, graph.src_order, :], graph.src_seg_starts, axis=1)
            d_layer_w[li][t] += np.einsum("bnd,bnh->dh", X_in, dZ)
            dX += dZ @ W[t].T
        dH = dX
    return d_layer_w, d_layer_a, d_out_w, d_out_b


def assemble_features(model: GnnModel, features: Sequence[VertexFeatures]) -> np.ndarray:
    X = np.zeros((len(features), len(model.vertices), model.input_dim), dtype=np.float64)
    for b, vf in enumerate(features):
        if vf.dim != model.input_dim:
            raise ValueError(f"feature dim {vf.dim} does not match model input dim {model.input_dim}")
        for i, v in enumerate(model.vertices):
            vec = vf.vectors.get(v)
            if vec is None:
                raise ValueError(f"features missing model vertex {v}")
            X[b, i] = vec
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    return X


def forward_batch(model: GnnModel, features: Sequence[VertexFeatures]) -> np.ndarray:
    X = assemble_features(model, features)
    probs, _, _, _ = _forward_batch(
        model.layer_w, model.layer_a, model.out_w, model.out_b, model.graph, X, model.leaky_slope
    )
    return probs


def forward(model: GnnModel, features: VertexFeatures) -> Diagnosis:
    return diagnosis_from_probs(forward_batch(model, [features])[0])


def vertex_representations(model: GnnModel, features: VertexFeatures) -> np.ndarray:
    """Pre-readout vertex representations, (n_vertices, hidden)."""
    X = assemble_features(model, [features])
    _, _, reps, _ = _forward_batch(
        model.layer_w, model.layer_a, model.out_w, model.out_b, model.graph, X, model.leaky_slope
    )
    return reps[0]


def attention_maps(model: GnnModel, features: VertexFeatures) -> list[list[np.ndarray]]:
    """Per layer and head, dense (n, n) attention with alpha[dst, src] entries."""
    X = assemble_features(model, [features])
    _, _, _, (_, caches) = _forward_batch(
        model.layer_w, model.layer_a, model.out_w, model.out_b, model.graph, X, model.leaky_slope, want_cache=True
    )
    g = model.graph
    maps: list[list[np.ndarray]] = []
    for layer_cache in caches:  # type: ignore[union-attr]
        per_head = []
        for (_, _, alpha, _) in layer_cache:
            dense = np.zeros((g.n, g.n))
            dense[g.dst, g.src] = alpha[0]
            per_head.append(dense)
        maps.append(per_head)
    return maps


def _batch_arrays(model: GnnModel, batch: Sequence[tuple[VertexFeatures, int]]) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise ValueError("empty batch")
    X = assemble_features(model, [vf for vf, _ in batch])
    y = np.array([int(label) for _, label in batch], dtype=np.int64)
    if y.min() < 0 or y.max() >= model.classes:
        raise ValueError("label outside class range")
    return X, y


def loss(model: GnnModel, batch: Sequence[tuple[VertexFeatures, int]]) -> float:
    """Mean cross-entropy of the batch."""
    X, y = _batch_arrays(model, batch)
    probs, _, _, _ = _forward_batch(
        model.layer_w, model.layer_a, model.out_w, model.out_b, model.graph, X, model.leaky_slope
    )
    return float(-np.log(probs[np.arange(len(y)), y]).mean())


def gradients(model: GnnModel, batch: Sequence[tuple[VertexFeatures, int]]) -> GnnGradients:
    """Exact gradients of loss() for every trainable parameter."""
    X, y = _batch_arrays(model, batch)
    probs, r, _, (inputs, caches) = _forward_batch(
        model.layer_w, model.layer_a, model.out_w, model.out_b, model.graph, X, model.leaky_slope, want_cache=True
    )
    dw, da, dow, dob = _backward_batch(
        model.layer_w, model.layer_a, model.out_w, model.graph, model.leaky_slope, probs, r, y, inputs, caches
    )
    B = len(batch)
    return GnnGradients(
        layer_w=tuple(g / B for g in dw),
        layer_a=tuple(g / B for g in da),
        out_w=dow / B,
        out_b=dob / B,
    )


def _init_params(hp: GnnHyperparams, input_dim: int):
    rng = derive_rng(hp.seed, "gnn-init")
    layer_w, layer_a = [], []
    d_in = input_dim
    for _ in range(hp.layers):
        lim_w = np.sqrt(6.0 / (d_in + hp.hidden))
        layer_w.append(rng.uniform(-lim_w, lim_w, size=(hp.heads, d_in, hp.hidden)))
        lim_a = np.sqrt(6.0 / (2 * hp.hidden + 1))
        layer_a.append(rng.uniform(-lim_a, lim_a, size=(hp.heads, 2 * hp.hidden)))
        d_in = hp.hidden * hp.heads
    lim_o = np.sqrt(6.0 / (hp.hidden + hp.classes))
    out_w = rng.uniform(-lim_o, lim_o, size=(hp.hidden, hp.classes))
    out_b = np.zeros(hp.classes)
    return layer_w, layer_a, out_w, out_b


def dag_fingerprint(vertices: Sequence[int], edges: Sequence[tuple[int, int]]) -> str:
    payload = canonical_json({"vertices": list(vertices), "edges": [list(e) for e in sorted(edges)]})
    return sha256_hex(payload.encode("utf-8"))


def _train_on_graph(
    kind: str,
    vertices: Sequence[int],
    edges: Sequence[tuple[int, int]],
    samples: Sequence[DiagnosisSample],
    hp: GnnHyperparams,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
    feature_config: FeatureConfig,
    chunk_size: int,
) -> GnnModel:
    hp.validate()
    feature_config.validate()
    if len(samples) < hp.classes:
        raise ValueError(f"need at least {hp.classes} samples, got {len(samples)}")
    labels = []
    for s in samples:
        if s.label is None:
            raise ValueError("training sample without label")
        if not 0 <= s.label < hp.classes:
            raise ValueError(f"label {s.label} outside [0, {hp.classes})")
        labels.append(s.label)
    present = set(labels)
    missing = sorted(set(range(hp.classes)) - present)
    if missing:
        warnings.warn(f"classes absent from training set: {missing}", stacklevel=2)

    vertices = tuple(sorted(vertices))
    index = {v: i for i, v in enumerate(vertices)}
    graph = _build_graph(len(vertices), [(index[u], index[v]) for u, v in edges])
    feats = [vertex_features(s, embedding, vocab, vertices, feature_config) for s in samples]
    input_dim = feature_dim(embedding)
    X = np.zeros((len(samples), len(vertices), input_dim), dtype=np.float64)
    for b, vf in enumerate(feats):
        for i, v in enumerate(vertices):
            X[b, i] = vf.vectors[v]
    y = np.array(labels, dtype=np.int64)

    layer_w, layer_a, out_w, out_b = _init_params(hp, input_dim)
    params: list[np.ndarray] = [*layer_w, *layer_a, out_w, out_b]
    m_mom = [np.zeros_like(p) for p in params]
    v_mom = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    B = len(samples)

    def loss_and_grads() -> tuple[float, list[np.ndarray]]:
        L = hp.layers
        total_loss = 0.0
        acc = [np.zeros_like(p) for p in params]
        for lo in range(0, B, chunk_size):
            hi = min(B, lo + chunk_size)
            Xc, yc = X[lo:hi], y[lo:hi]
            probs, r, _, (inputs, caches) = _forward_batch(
                params[:L], params[L : 2 * L], params[-2], params[-1], graph, Xc, hp.leaky_slope, want_cache=True
            )
            total_loss += float(-np.log(probs[np.arange(hi - lo), yc]).sum())
            dw, da, dow, dob = _backward_batch(
                params[:L], params[L : 2 * L], params[-2], graph, hp.leaky_slope, probs, r, yc, inputs, caches
            )
            for i in range(L):
                acc[i] += dw[i]
                acc[L + i] += da[i]
            acc[-2] += dow
            acc[-1] += dob
        return total_loss / B, [g / B for g in acc]

    losses: list[float] = []
    for step in range(hp.epochs):
        loss_value, grads = loss_and_grads()
        losses.append(loss_value)
        t = step + 1
        for i, (p, g) in enumerate(zip(params, grads)):
            m_mom[i] = beta1 * m_mom[i] + (1 - beta1) * g
            v_mom[i] = beta2 * v_mom[i] + (1 - beta2) * (g * g)
            m_hat = m_mom[i] / (1 - beta1**t)
            v_hat = v_mom[i] / (1 - beta2**t)
            params[i] = p - hp.lr * m_hat / (np.sqrt(v_hat) + eps)
    final_loss, _ = loss_and_grads()
    losses.append(final_loss)

    L = hp.layers
    return GnnModel(
        kind=kind,
        classes=hp.classes,
        layers=hp.layers,
        hidden=hp.hidden,
        heads=hp.heads,
        leaky_slope=hp.leaky_slope,
        input_dim=input_dim,
        layer_w=tuple(params[:L]),
        layer_a=tuple(params[L : 2 * L]),
        out_w=params[-2],
        out_b=params[-1],
        vertices=vertices,
        edges=tuple(sorted((u, v) for u, v in edges)),
        vocab_sha256=vocab.fingerprint(),
        feature_config=feature_config,
        train_losses=tuple(losses),
    )


def train(
    dag: AssociationDag,
    samples: Sequence[DiagnosisSample],
    hp: GnnHyperparams,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
    feature_config: FeatureConfig = DEFAULT_FEATURE_CONFIG,
    chunk_size: int = 256,
) -> GnnModel:
    """Full-batch training (Adam-style moments, Glorot init) on the DAG structure."""
    return _train_on_graph(
        KIND_DAG_GNN,
        dag.vertices,
        [(u, v) for u, v, _ in dag.edges],
        samples,
        hp,
        embedding,
        vocab,
        feature_config,
        chunk_size,
    )


def diagnose(
    model: GnnModel,
    sample: DiagnosisSample,
    embedding: EmbeddingMatrix,
    vocab: Vocabulary,
) -> Diagnosis:
    """vertex_features composed with forward; rejects a mismatched vocabulary."""
    if vocab.fingerprint() != model.vocab_sha256:
        raise ValueError("model was trained with a different vocabulary")
    vf = vertex_features(sample, embedding, vocab, model.vertices, model.feature_config)
    return forward(model, vf)


def model_header(model: GnnModel) -> dict:
    return {
        "kind": model.kind,
        "classes": model.classes,
        "layers": model.layers,
        "hidden": model.hidden,
        "heads": model.heads,
        "leaky_slope": model.leaky_slope,
        "input_dim": model.input_dim,
        "vertices": list(model.vertices),
        "edges": [list(e) for e in model.edges],
        "dag_sha256": dag_fingerprint(model.vertices, model.edges),
        "vocab_sha256": model.vocab_sha256,
        "feature_config": model.feature_config.to_json_dict(),
        "train_losses": list(model.train_losses),
    }


def model_bytes(model: GnnModel) -> bytes:
    arrays = [*model.layer_w, *model.layer_a, model.out_w, model.out_b]
    return checkpoint_bytes(MODEL_MAGIC, model_header(model), arrays)


def save_model(model: GnnModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(
    path: str | Path,
    dag: AssociationDag | None = None,
    vocab: Vocabulary | None = None,
) -> GnnModel:
    header, arrays = parse_checkpoint(Path(path).read_bytes(), MODEL_MAGIC)
    if header["kind"] not in (KIND_DAG_GNN, KIND_FC_GNN):
        raise ValueError(f"not an attention model checkpoint: kind={header['kind']}")
    vertices = tuple(int(v) for v in header["vertices"])
    edges = tuple((int(u), int(v)) for u, v in header["edges"])
    if dag_fingerprint(vertices, edges) != header["dag_sha256"]:
        raise ValueError("DAG hash mismatch in checkpoint")
    if dag is not None:
        want = dag_fingerprint(
            tuple(sorted(dag.vertices)), tuple(sorted((u, v) for u, v, _ in dag.edges))
        )
        if header["kind"] == KIND_DAG_GNN and want != header["dag_sha256"]:
            raise ValueError("checkpoint was trained on a different DAG")
    if vocab is not None and vocab.fingerprint() != header["vocab_sha256"]:
        raise ValueError("checkpoint was trained with a different vocabulary")
    L = int(header["layers"])
    model = GnnModel(
        kind=header["kind"],
        classes=int(header["classes"]),
        layers=L,
        hidden=int(header["hidden"]),
        heads=int(header["heads"]),
        leaky_slope=float(header["leaky_slope"]),
        input_dim=int(header["input_dim"]),
        layer_w=tuple(arrays[:L]),
        layer_a=tuple(arrays[L : 2 * L]),
        out_w=arrays[-2],
        out_b=arrays[-1],
        vertices=vertices,
        edges=edges,
        vocab_sha256=header["vocab_sha256"],
        feature_config=FeatureConfig.from_json_dict(header["feature_config"]),
        train_losses=tuple(float(x) for x in header["train_losses"]),
    )
    return model
