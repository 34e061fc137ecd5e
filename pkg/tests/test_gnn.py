import math

import numpy as np
import pytest

from helpers import finite_difference, rel_err
from netdiag.association import AssociationDag
from netdiag.embedding import DEFAULT_FEATURE_CONFIG, VertexFeatures, vertex_features
from netdiag.gnn import (
    KIND_DAG_GNN,
    Diagnosis,
    GnnHyperparams,
    GnnModel,
    assemble_features,
    attention_maps,
    diagnose,
    diagnosis_from_probs,
    forward,
    forward_batch,
    gradients,
    load_model,
    loss,
    model_bytes,
    save_model,
    train,
    vertex_representations,
)
from netdiag.ingestion import AlarmLog, AlarmRecord, DiagnosisSample, Severity
from netdiag.util import derive_rng


def tiny_model(
    vertices,
    edges,
    input_dim=4,
    classes=3,
    layers=2,
    hidden=3,
    heads=2,
    seed=0,
    vocab_sha256="unused",
):
    rng = derive_rng(seed, "test-model")
    layer_w, layer_a = [], []
    d_in = input_dim
    for _ in range(layers):
        layer_w.append(rng.normal(0.0, 0.5, size=(heads, d_in, hidden)))
        layer_a.append(rng.normal(0.0, 0.5, size=(heads, 2 * hidden)))
        d_in = hidden * heads
    return GnnModel(
        kind=KIND_DAG_GNN,
        classes=classes,
        layers=layers,
        hidden=hidden,
        heads=heads,
        leaky_slope=0.2,
        input_dim=input_dim,
        layer_w=tuple(layer_w),
        layer_a=tuple(layer_a),
        out_w=rng.normal(0.0, 0.5, size=(hidden, classes)),
        out_b=rng.normal(0.0, 0.1, size=classes),
        vertices=tuple(sorted(vertices)),
        edges=tuple(sorted(edges)),
        vocab_sha256=vocab_sha256,
        feature_config=DEFAULT_FEATURE_CONFIG,
    )


def random_features(model, rng):
    return VertexFeatures(
        vectors={v: rng.normal(0.0, 1.0, size=model.input_dim) for v in model.vertices},
        dim=model.input_dim,
    )


def naive_forward(model, vf):
    """Straightforward per-vertex loop re-implementation of the forward pass."""
    verts = list(model.vertices)
    idx = {v: i for i, v in enumerate(verts)}
    n = len(verts)
    H = [np.asarray(vf.vectors[v], dtype=np.float64) for v in verts]
    in_nbrs = {i: {i} for i in range(n)}
    for u, v in model.edges:
        in_nbrs[idx[v]].add(idx[u])
    all_alphas = []
    for li in range(model.layers):
        W, A = model.layer_w[li], model.layer_a[li]
        heads, _, h = W.shape
        outs = []
        layer_alphas = []
        for t in range(heads):
            Z = [Hv @ W[t] for Hv in H]
            new = []
            dense = np.zeros((n, n))
            for v in range(n):
                nbrs = sorted(in_nbrs[v])
                scores = []
                for u in nbrs:
                    s = float(np.concatenate([Z[u], Z[v]]) @ A[t])
                    scores.append(s if s >= 0 else model.leaky_slope * s)
                mx = max(scores)
                ex = [math.exp(s - mx) for s in scores]
                den = sum(ex)
                msg = np.zeros(h)
                for e_val, u in zip(ex, nbrs):
                    dense[v, u] = e_val / den
                    msg += (e_val / den) * Z[u]
                new.append(np.where(msg > 0, msg, np.expm1(np.minimum(msg, 0.0))))
            outs.append(new)
            layer_alphas.append(dense)
        all_alphas.append(layer_alphas)
        if li == model.layers - 1:
            H = [sum(outs[t][v] for t in range(heads)) / heads for v in range(n)]
        else:
            H = [np.concatenate([outs[t][v] for t in range(heads)]) for v in range(n)]
    r = sum(H) / n
    logits = r @ model.out_w + model.out_b
    ex = np.exp(logits - logits.max())
    return ex / ex.sum(), np.stack(H), all_alphas


class TestForwardOracle:
    def test_matches_naive_loop_implementation(self):
        rng = derive_rng(41, "gnn-oracle")
        for trial in range(20):
            n = int(rng.integers(1, 7))
            verts = tuple(range(10, 10 + n))
            possible = [(u, v) for u in verts for v in verts if u < v]
            edges = [e for e in possible if rng.random() < 0.5]
            model = tiny_model(
                verts,
                edges,
                input_dim=int(rng.integers(2, 6)),
                layers=int(rng.integers(1, 4)),
                hidden=int(rng.integers(1, 5)),
                heads=int(rng.integers(1, 4)),
                seed=trial,
            )
            vf = random_features(model, rng)
            probs = forward_batch(model, [vf])[0]
            reps = vertex_representations(model, vf)
            maps = attention_maps(model, vf)
            want_probs, want_reps, want_alphas = naive_forward(model, vf)
            assert rel_err(probs, want_probs) < 1e-10
            assert rel_err(reps, want_reps) < 1e-10
            for li in range(model.layers):
                for t in range(model.heads):
                    assert rel_err(maps[li][t], want_alphas[li][t]) < 1e-10

    def test_batch_equals_stacked_singles(self):
        rng = derive_rng(42, "gnn-batch")
        model = tiny_model((1, 2, 3, 4), [(1, 2), (2, 3), (1, 4)])
        fs = [random_features(model, rng) for _ in range(5)]
        batched = forward_batch(model, fs)
        singles = np.stack([forward_batch(model, [f])[0] for f in fs])
        np.testing.assert_allclose(batched, singles, rtol=1e-12, atol=1e-15)

    def test_probabilities_sum_to_one(self):
        rng = derive_rng(43, "gnn-probs")
        model = tiny_model((1, 2, 3), [(1, 2), (1, 3)], classes=5)
        probs = forward_batch(model, [random_features(model, rng) for _ in range(8)])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert (probs >= 0).all()

    def test_vertex_relabeling_invariance(self):
        rng = derive_rng(44, "gnn-relabel")
        verts = (1, 2, 3, 4)
        edges = [(1, 2), (2, 3), (3, 4), (1, 4)]
        model = tiny_model(verts, edges, seed=5)
        vf = random_features(model, rng)
        # Reverse the id order: 1->40, 2->30, 3->20, 4->10.
        phi = {1: 40, 2: 30, 3: 20, 4: 10}
        relabeled = GnnModel(
            kind=model.kind,
            classes=model.classes,
            layers=model.layers,
            hidden=model.hidden,
            heads=model.heads,
            leaky_slope=model.leaky_slope,
            input_dim=model.input_dim,
            layer_w=model.layer_w,
            layer_a=model.layer_a,
            out_w=model.out_w,
            out_b=model.out_b,
            vertices=tuple(sorted(phi.values())),
            edges=tuple(sorted((phi[u], phi[v]) for u, v in edges)),
            vocab_sha256=model.vocab_sha256,
            feature_config=model.feature_config,
        )
        vf2 = VertexFeatures(vectors={phi[v]: vec for v, vec in vf.vectors.items()}, dim=vf.dim)
        np.testing.assert_allclose(
            forward_batch(model, [vf]), forward_batch(relabeled, [vf2]), rtol=1e-10
        )


class TestAttention:
    def test_rows_sum_to_one_over_neighborhood(self):
        rng = derive_rng(45, "gnn-attn")
        model = tiny_model((1, 2, 3, 4, 5), [(1, 3), (2, 3), (3, 4), (1, 5), (4, 5)], layers=2)
        maps = attention_maps(model, random_features(model, rng))
        in_sets = {i: {i} for i in range(5)}
        index = model.vertex_index
        for u, v in model.edges:
            in_sets[index[v]].add(index[u])
        for layer_maps in maps:
            for dense in layer_maps:
                for v in range(5):
                    assert abs(dense[v].sum() - 1.0) < 1e-9
                    assert set(np.flatnonzero(dense[v] > 0)) <= in_sets[v]

    def test_isolated_vertex_attends_to_itself(self):
        rng = derive_rng(46, "gnn-self")
        model = tiny_model((7, 8), [], layers=1)
        maps = attention_maps(model, random_features(model, rng))
        np.testing.assert_allclose(maps[0][0], np.eye(2))


class TestLocality:
    def build(self, layers):
        # Chain 1 -> 2 -> 3 -> 4 plus an isolated vertex 9.
        return tiny_model((1, 2, 3, 4, 9), [(1, 2), (2, 3), (3, 4)], layers=layers, seed=8)

    def perturbed(self, vf, vertex, rng):
        vectors = {v: vec.copy() for v, vec in vf.vectors.items()}
        vectors[vertex] = vectors[vertex] + rng.normal(0.0, 1.0, size=vectors[vertex].shape)
        return VertexFeatures(vectors=vectors, dim=vf.dim)

    def test_one_layer_sees_exactly_in_neighbors(self):
        rng = derive_rng(47, "gnn-local1")
        model = self.build(layers=1)
        vf = random_features(model, rng)
        base = vertex_representations(model, vf)
        i3 = model.vertex_index[3]
        # Perturbing 1 (two hops upstream) or 4 (downstream) leaves vertex 3 alone.
        for outside in (1, 4, 9):
            reps = vertex_representations(model, self.perturbed(vf, outside, rng))
            np.testing.assert_array_equal(reps[i3], base[i3])
        # Perturbing its in-neighbor 2 or itself moves it.
        for inside in (2, 3):
            reps = vertex_representations(model, self.perturbed(vf, inside, rng))
            assert not np.array_equal(reps[i3], base[i3])

    def test_two_layers_reach_two_hops(self):
        rng = derive_rng(48, "gnn-local2")
        model = self.build(layers=2)
        vf = random_features(model, rng)
        base = vertex_representations(model, vf)
        i4 = model.vertex_index[4]
        reps = vertex_representations(model, self.perturbed(vf, 2, rng))  # 2 -> 3 -> 4
        assert not np.array_equal(reps[i4], base[i4])
        reps = vertex_representations(model, self.perturbed(vf, 1, rng))  # three hops away
        np.testing.assert_array_equal(reps[i4], base[i4])
        reps = vertex_representations(model, self.perturbed(vf, 9, rng))
        np.testing.assert_array_equal(reps[i4], base[i4])


class TestGradients:
    def batch_for(self, model, rng, size=3):
        return [
            (random_features(model, rng), int(rng.integers(0, model.classes)))
            for _ in range(size)
        ]

    def test_all_parameters_match_finite_differences(self):
        rng = derive_rng(49, "gnn-fd")
        model = tiny_model(
            (1, 2, 3, 4, 5), [(1, 2), (2, 3), (3, 4), (1, 4), (4, 5)], layers=2, hidden=3, heads=2
        )
        batch = self.batch_for(model, rng)
        grads = gradients(model, batch)

        def f():
            return loss(model, batch)

        for li in range(model.layers):
            fd_w = finite_difference(f, model.layer_w[li])
            assert rel_err(grads.layer_w[li], fd_w) < 1e-6, f"layer_w[{li}]"
            fd_a = finite_difference(f, model.layer_a[li])
            assert rel_err(grads.layer_a[li], fd_a) < 1e-6, f"layer_a[{li}]"
        assert rel_err(grads.out_w, finite_difference(f, model.out_w)) < 1e-6
        assert rel_err(grads.out_b, finite_difference(f, model.out_b)) < 1e-6

    def test_single_head_single_layer_fd(self):
        rng = derive_rng(50, "gnn-fd1")
        model = tiny_model((1, 2, 3), [(1, 2), (1, 3)], layers=1, hidden=2, heads=1, classes=2)
        batch = self.batch_for(model, rng, size=4)
        grads = gradients(model, batch)

        def f():
            return loss(model, batch)

        assert rel_err(grads.layer_w[0], finite_difference(f, model.layer_w[0])) < 1e-6
        assert rel_err(grads.layer_a[0], finite_difference(f, model.layer_a[0])) < 1e-6
        assert rel_err(grads.out_w, finite_difference(f, model.out_w)) < 1e-6
        assert rel_err(grads.out_b, finite_difference(f, model.out_b)) < 1e-6

    def test_gradient_is_batch_mean(self):
        rng = derive_rng(51, "gnn-gmean")
        model = tiny_model((1, 2), [(1, 2)], layers=1, hidden=2, heads=1)
        b1 = self.batch_for(model, rng, size=1)
        b2 = self.batch_for(model, rng, size=1)
        g_both = gradients(model, b1 + b2)
        g1 = gradients(model, b1)
        g2 = gradients(model, b2)
        np.testing.assert_allclose(g_both.out_b, (g1.out_b + g2.out_b) / 2, rtol=1e-12)

    def test_empty_batch_rejected(self):
        model = tiny_model((1,), [])
        with pytest.raises(ValueError, match="empty batch"):
            gradients(model, [])

    def test_label_out_of_range(self):
        rng = derive_rng(52, "gnn-lbl")
        model = tiny_model((1,), [], classes=3)
        vf = random_features(model, rng)
        with pytest.raises(ValueError, match="label outside"):
            loss(model, [(vf, 3)])


class TestDiagnosisType:
    def test_tie_goes_to_lowest_class(self):
        d = diagnosis_from_probs(np.array([0.4, 0.4, 0.2]))
        assert d.cause == 0

    def test_distribution_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Diagnosis(cause=0, distribution=(0.9, 0.3))

    def test_cause_must_be_argmax(self):
        with pytest.raises(ValueError, match="argmax"):
            Diagnosis(cause=1, distribution=(0.7, 0.3))


class TestAssembleFeatures:
    def test_missing_vertex_rejected(self):
        model = tiny_model((1, 2), [(1, 2)])
        vf = VertexFeatures(vectors={1: np.zeros(model.input_dim)}, dim=model.input_dim)
        with pytest.raises(ValueError, match="missing model vertex"):
            assemble_features(model, [vf])

    def test_wrong_dim_rejected(self):
        model = tiny_model((1,), [])
        vf = VertexFeatures(vectors={1: np.zeros(2)}, dim=2)
        with pytest.raises(ValueError, match="does not match model input dim"):
            assemble_features(model, [vf])

    def test_non_finite_rejected(self):
        model = tiny_model((1,), [])
        vf = VertexFeatures(vectors={1: np.full(model.input_dim, np.inf)}, dim=model.input_dim)
        with pytest.raises(ValueError, match="non-finite"):
            assemble_features(model, [vf])


def device_sample(idx, device, name, t0=0.0):
    recs = (
        AlarmRecord(record_id=idx * 10, timestamp=t0, device_id=device, alarm_name=name, severity=Severity.Major),
    )
    return DiagnosisSample(records=recs, root_record=idx * 10, label=None)


class TestTraining:
    @pytest.fixture()
    def setup(self, tiny_vocab, tiny_embedding):
        # Chain 1 -> 2 -> 3: the two class-defining devices occupy structurally
        # different positions, so the wiring alone can separate the labels.
        dag = AssociationDag(vertices=(1, 2, 3), edges=((1, 2, 0.9), (2, 3, 0.8)))
        # Which DEVICE carries the alarm decides the class; the name is shared.
        samples = []
        for i in range(12):
            dev = 1 if i % 2 == 0 else 3
            s = device_sample(i, dev, "fan")
            samples.append(DiagnosisSample(records=s.records, root_record=s.root_record, label=i % 2))
        hp = GnnHyperparams(classes=2, layers=2, hidden=6, heads=2, lr=0.05, epochs=50, seed=3)
        return dag, samples, hp, tiny_embedding, tiny_vocab

    def test_structural_task_is_learnable(self, setup):
        dag, samples, hp, embedding, vocab = setup
        model = train(dag, samples, hp, embedding, vocab)
        correct = 0
        for s in samples:
            if diagnose(model, s, embedding, vocab).cause == s.label:
                correct += 1
        assert correct == len(samples)

    def test_automorphic_positions_are_provably_indistinguishable(self, tiny_vocab, tiny_embedding):
        """Swapping devices 1 and 2 is a graph automorphism of 1->3<-2, and the
        readout is a vertex mean, so identical alarms on 1 vs on 2 yield the
        SAME output distribution — no amount of training can split them."""
        dag = AssociationDag(vertices=(1, 2, 3), edges=((1, 3, 0.9), (2, 3, 0.8)))
        samples = []
        for i in range(8):
            dev = 1 if i % 2 == 0 else 2
            s = device_sample(i, dev, "fan")
            samples.append(DiagnosisSample(records=s.records, root_record=s.root_record, label=i % 2))
        hp = GnnHyperparams(classes=2, layers=2, hidden=6, heads=2, lr=0.05, epochs=30, seed=3)
        model = train(dag, samples, hp, tiny_embedding, tiny_vocab)
        d0 = diagnose(model, samples[0], tiny_embedding, tiny_vocab)
        d1 = diagnose(model, samples[1], tiny_embedding, tiny_vocab)
        np.testing.assert_allclose(d0.distribution, d1.distribution, rtol=1e-9)

    def test_losses_recorded_and_decreasing(self, setup):
        dag, samples, hp, embedding, vocab = setup
        model = train(dag, samples, hp, embedding, vocab)
        assert len(model.train_losses) == hp.epochs + 1
        assert model.train_losses[-1] < model.train_losses[0]

    def test_deterministic_to_the_byte(self, setup):
        dag, samples, hp, embedding, vocab = setup
        a = train(dag, samples, hp, embedding, vocab)
        b = train(dag, samples, hp, embedding, vocab)
        assert model_bytes(a) == model_bytes(b)

    def test_chunked_training_close_to_full_batch(self, setup):
        dag, samples, hp, embedding, vocab = setup
        small_hp = GnnHyperparams(classes=2, layers=1, hidden=4, heads=1, lr=0.05, epochs=10, seed=3)
        a = train(dag, samples, small_hp, embedding, vocab, chunk_size=4)
        b = train(dag, samples, small_hp, embedding, vocab, chunk_size=1000)
        np.testing.assert_allclose(a.out_w, b.out_w, rtol=1e-8)

    def test_epochs_zero_keeps_init(self, setup):
        dag, samples, _, embedding, vocab = setup
        hp = GnnHyperparams(classes=2, epochs=0, seed=3)
        model = train(dag, samples, hp, embedding, vocab)
        assert len(model.train_losses) == 1

    def test_missing_class_warns(self, setup):
        dag, samples, hp, embedding, vocab = setup
        biased = [DiagnosisSample(records=s.records, root_record=s.root_record, label=0) for s in samples]
        with pytest.warns(UserWarning, match="classes absent"):
            train(dag, biased, hp, embedding, vocab)

    def test_unlabeled_sample_rejected(self, setup):
        dag, samples, hp, embedding, vocab = setup
        bad = samples[:-1] + [DiagnosisSample(records=samples[-1].records, root_record=samples[-1].root_record)]
        with pytest.raises(ValueError, match="without label"):
            train(dag, bad, hp, embedding, vocab)

    def test_too_few_samples_rejected(self, setup):
        dag, samples, hp, embedding, vocab = setup
        with pytest.raises(ValueError, match="need at least"):
            train(dag, samples[:1], hp, embedding, vocab)


class TestCheckpoint:
    @pytest.fixture()
    def trained(self, tiny_vocab, tiny_embedding):
        dag = AssociationDag(vertices=(1, 2), edges=((1, 2, 0.5),))
        samples = []
        for i in range(6):
            s = device_sample(i, 1 + i % 2, "power" if i % 2 else "fan")
            samples.append(DiagnosisSample(records=s.records, root_record=s.root_record, label=i % 2))
        hp = GnnHyperparams(classes=2, layers=1, hidden=4, heads=1, epochs=5, seed=1)
        return train(dag, samples, hp, tiny_embedding, tiny_vocab), dag, tiny_vocab

    def test_round_trip_bytes_identical(self, trained, tmp_path):
        model, _, _ = trained
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert model_bytes(loaded) == path.read_bytes()
        assert loaded.kind == KIND_DAG_GNN
        assert loaded.vertices == model.vertices
        assert loaded.train_losses == model.train_losses

    def test_loaded_model_predicts_identically(self, trained, tmp_path):
        model, _, _ = trained
        rng = derive_rng(53, "gnn-ckpt")
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        vf = random_features(model, rng)
        np.testing.assert_array_equal(forward_batch(model, [vf]), forward_batch(loaded, [vf]))

    def test_dag_argument_validated(self, trained, tmp_path):
        model, dag, _ = trained
        path = tmp_path / "model.bin"
        save_model(model, path)
        assert load_model(path, dag=dag).vertices == model.vertices
        other = AssociationDag(vertices=(1, 2, 3), edges=((1, 2, 0.5),))
        with pytest.raises(ValueError, match="different DAG"):
            load_model(path, dag=other)

    def test_vocab_argument_validated(self, trained, tmp_path, tiny_vocab):
        model, _, vocab = trained
        path = tmp_path / "model.bin"
        save_model(model, path)
        assert load_model(path, vocab=vocab).vocab_sha256 == model.vocab_sha256
        from netdiag.embedding import Vocabulary

        with pytest.raises(ValueError, match="different vocabulary"):
            load_model(path, vocab=Vocabulary(tokens=("<unk>", "other")))

    def test_tampered_structure_rejected(self, trained, tmp_path):
        model, _, _ = trained
        import json
        import struct

        raw = model_bytes(model)
        header_len = struct.unpack("<I", raw[4:8])[0]
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
        header["edges"] = []
        new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        tampered = raw[:4] + struct.pack("<I", len(new_header)) + new_header + raw[8 + header_len :]
        path = tmp_path / "tampered.bin"
        path.write_bytes(tampered)
        with pytest.raises(ValueError, match="DAG hash mismatch"):
            load_model(path)


class TestDiagnose:
    def test_wrong_vocab_rejected(self, tiny_vocab, tiny_embedding):
        from netdiag.embedding import Vocabulary

        model = tiny_model((1,), [], input_dim=tiny_embedding.dim + 3, vocab_sha256=tiny_vocab.fingerprint())
        other = Vocabulary(tokens=("<unk>", "zz"))
        s = device_sample(0, 1, "fan")
        with pytest.raises(ValueError, match="different vocabulary"):
            diagnose(model, s, tiny_embedding, other)

    def test_end_to_end_diagnosis(self, tiny_vocab, tiny_embedding):
        model = tiny_model(
            (1, 2), [(1, 2)], input_dim=tiny_embedding.dim + 3, classes=4, vocab_sha256=tiny_vocab.fingerprint()
        )
        s = device_sample(0, 1, "fan")
        d = diagnose(model, s, tiny_embedding, tiny_vocab)
        assert 0 <= d.cause < 4
        assert abs(sum(d.distribution) - 1.0) < 1e-9

    def test_forward_matches_diagnose(self, tiny_vocab, tiny_embedding):
        model = tiny_model(
            (1, 2), [(1, 2)], input_dim=tiny_embedding.dim + 3, vocab_sha256=tiny_vocab.fingerprint()
        )
        s = device_sample(0, 2, "clock sync")
        vf = vertex_features(s, tiny_embedding, tiny_vocab, model.vertices, model.feature_config)
        assert diagnose(model, s, tiny_embedding, tiny_vocab) == forward(model, vf)
