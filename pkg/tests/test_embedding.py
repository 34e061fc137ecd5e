import numpy as np
import pytest

from helpers import finite_difference, rel_err
from netdiag.embedding import (
    DEFAULT_FEATURE_CONFIG,
    N_SIDE_FEATURES,
    EmbeddingMatrix,
    FeatureConfig,
    Vocabulary,
    build_vocab,
    feature_dim,
    init_matrices,
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
from netdiag.ingestion import AlarmLog, AlarmRecord, DiagnosisSample, Severity


def rec(rid, ts, dev, name, sev=Severity.Major):
    return AlarmRecord(rid, float(ts), dev, name, sev)


def sample_of(*records):
    ordered = tuple(sorted(records, key=lambda r: (r.timestamp, r.record_id)))
    return DiagnosisSample(records=ordered, root_record=ordered[0].record_id)


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("CRC Errors-Rising!") == ["crc", "errors", "rising"]

    def test_numbers_kept(self):
        assert tokenize("port 42 down") == ["port", "42", "down"]

    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("--- ---") == []


class TestVocabulary:
    def test_unk_required_first(self):
        with pytest.raises(ValueError, match="<unk>"):
            Vocabulary(tokens=("alarm", "<unk>"))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Vocabulary(tokens=("<unk>", "a", "a"))

    def test_encode_unknown_maps_to_zero(self, tiny_vocab):
        assert tiny_vocab.encode("alarm zzz") == [tiny_vocab.index_of["alarm"], 0]

    def test_fingerprint_tracks_tokens(self, tiny_vocab):
        other = Vocabulary(tokens=tiny_vocab.tokens + ("extra",))
        assert tiny_vocab.fingerprint() != other.fingerprint()
        assert tiny_vocab.fingerprint() == Vocabulary(tokens=tiny_vocab.tokens).fingerprint()


class TestBuildVocab:
    def test_frequency_then_alpha_order(self):
        log = AlarmLog.from_records(
            [
                rec(0, 0, 1, "beta beta"),
                rec(1, 1, 1, "alpha beta"),
                rec(2, 2, 1, "gamma alpha"),
            ]
        )
        vocab = build_vocab([log])
        # beta: 3, alpha: 2, gamma: 1
        assert vocab.tokens == ("<unk>", "beta", "alpha", "gamma")

    def test_min_count_folds_rare(self):
        log = AlarmLog.from_records([rec(0, 0, 1, "aa aa bb")])
        vocab = build_vocab([log], min_count=2)
        assert vocab.tokens == ("<unk>", "aa")
        assert vocab.encode("bb") == [0]

    def test_multiple_logs_pool_counts(self):
        log1 = AlarmLog.from_records([rec(0, 0, 1, "xx")])
        log2 = AlarmLog.from_records([rec(0, 0, 1, "xx yy")])
        vocab = build_vocab([log1, log2], min_count=2)
        assert vocab.tokens == ("<unk>", "xx")

    def test_bad_min_count(self):
        with pytest.raises(ValueError):
            build_vocab([], min_count=0)


class TestTokenSequences:
    def test_per_device_time_order(self, tiny_vocab):
        s = sample_of(
            rec(0, 10, 2, "clock sync"),
            rec(1, 5, 1, "power"),
            rec(2, 20, 1, "fan"),
        )
        seqs = token_sequences([s], tiny_vocab)
        ix = tiny_vocab.index_of
        assert seqs == [
            [ix["power"], ix["fan"]],  # device 1 first (sorted), records in time order
            [ix["clock"], ix["sync"]],
        ]

    def test_blank_names_skipped(self, tiny_vocab):
        s = sample_of(rec(0, 0, 1, ""), rec(1, 1, 1, "fan"))
        assert token_sequences([s], tiny_vocab) == [[tiny_vocab.index_of["fan"]]]

    def test_sample_boundaries_not_crossed(self, tiny_vocab):
        s1 = sample_of(rec(0, 0, 1, "fan"))
        s2 = sample_of(rec(0, 0, 1, "power"))
        seqs = token_sequences([s1, s2], tiny_vocab)
        assert len(seqs) == 2


class TestSkipgramGradients:
    def test_matches_finite_differences(self):
        m = init_matrices(6, 5, seed=9)
        inp = m.input_vectors.copy()
        out = m.output_vectors.copy()
        center, context, negatives = 1, 3, [0, 4, 4, 5]
        g_in, g_out = skipgram_pair_grads(inp, out, center, context, negatives)
        fd_in = finite_difference(lambda: skipgram_pair_loss(inp, out, center, context, negatives), inp)
        fd_out = finite_difference(lambda: skipgram_pair_loss(inp, out, center, context, negatives), out)
        assert rel_err(g_in, fd_in) < 1e-6
        assert rel_err(g_out, fd_out) < 1e-6

    def test_context_in_negatives_accumulates(self):
        m = init_matrices(4, 3, seed=2)
        inp, out = m.input_vectors.copy(), m.output_vectors.copy()
        g_in, g_out = skipgram_pair_grads(inp, out, 0, 1, [1, 2])
        fd_out = finite_difference(lambda: skipgram_pair_loss(inp, out, 0, 1, [1, 2]), out)
        assert rel_err(g_out, fd_out) < 1e-6
        assert g_in.shape == inp.shape


class TestTrainSkipgram:
    def make_sequences(self):
        # Two "topics" that never mix: tokens 1-3 vs 4-6.
        return [[1, 2, 3, 1, 2], [3, 1, 2], [4, 5, 6, 4], [6, 5, 4, 5]] * 3

    def test_deterministic(self):
        seqs = self.make_sequences()
        a = train_skipgram(seqs, n_tokens=7, dim=8, epochs=2, seed=5)
        b = train_skipgram(seqs, n_tokens=7, dim=8, epochs=2, seed=5)
        assert np.array_equal(a.input_vectors, b.input_vectors)
        assert np.array_equal(a.output_vectors, b.output_vectors)

    def test_seed_changes_result(self):
        seqs = self.make_sequences()
        a = train_skipgram(seqs, n_tokens=7, dim=8, epochs=1, seed=5)
        b = train_skipgram(seqs, n_tokens=7, dim=8, epochs=1, seed=6)
        assert not np.array_equal(a.input_vectors, b.input_vectors)

    def test_training_reduces_objective(self):
        seqs = self.make_sequences()
        trained = train_skipgram(seqs, n_tokens=7, dim=8, window=2, epochs=8, seed=3)
        init = init_matrices(7, 8, seed=3)

        def mean_loss(m):
            # Fixed probe set: each observed pair against fixed negatives.
            probes = [(1, 2, [4, 5]), (2, 3, [5, 6]), (4, 5, [1, 2]), (5, 6, [2, 3])]
            return np.mean(
                [
                    skipgram_pair_loss(m.input_vectors, m.output_vectors, c, o, negs)
                    for c, o, negs in probes
                ]
            )

        assert mean_loss(trained) < mean_loss(init)

    def test_cooccurring_tokens_closer_than_separated(self):
        seqs = self.make_sequences()
        m = train_skipgram(seqs, n_tokens=7, dim=8, window=2, epochs=10, seed=4)

        def cos(a, b):
            va, vb = m.input_vectors[a], m.input_vectors[b]
            return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))

        assert cos(1, 2) > cos(1, 4)
        assert cos(4, 5) > cos(5, 2)

    def test_rejects_empty_and_bad_tokens(self):
        with pytest.raises(ValueError, match="no training pairs"):
            train_skipgram([[1]], n_tokens=3)
        with pytest.raises(ValueError, match="out of range"):
            train_skipgram([[1, 99]], n_tokens=3)
        with pytest.raises(ValueError, match="bad hyperparameters"):
            train_skipgram([[1, 2]], n_tokens=3, dim=0)

    def test_epochs_zero_returns_init(self):
        m = train_skipgram([[1, 2]], n_tokens=3, dim=4, epochs=0, seed=8)
        init = init_matrices(3, 4, seed=8)
        assert np.array_equal(m.input_vectors, init.input_vectors)


class TestVertexFeatures:
    def test_dimensions_and_coverage(self, tiny_vocab, tiny_embedding):
        s = sample_of(rec(0, 0, 1, "fan"), rec(1, 1, 3, "power sync"))
        vf = vertex_features(s, tiny_embedding, tiny_vocab, dag_vertices=[1, 2, 3])
        assert set(vf.vectors) == {1, 2, 3}
        assert vf.dim == tiny_embedding.dim + N_SIDE_FEATURES
        assert all(v.shape == (vf.dim,) for v in vf.vectors.values())

    def test_silent_vertex_is_zero(self, tiny_vocab, tiny_embedding):
        s = sample_of(rec(0, 0, 1, "fan"))
        vf = vertex_features(s, tiny_embedding, tiny_vocab, dag_vertices=[1, 2])
        assert np.array_equal(vf.vectors[2], np.zeros(vf.dim))

    def test_mean_token_vector_by_hand(self, tiny_vocab, tiny_embedding):
        s = sample_of(
            rec(0, 0, 5, "fan power", Severity.Minor),
            rec(1, 1, 5, "sync", Severity.Critical),
        )
        vf = vertex_features(s, tiny_embedding, tiny_vocab, dag_vertices=[5])
        ix = tiny_vocab.index_of
        expected = tiny_embedding.input_vectors[[ix["fan"], ix["power"], ix["sync"]]].mean(axis=0)
        d = tiny_embedding.dim
        np.testing.assert_allclose(vf.vectors[5][:d], expected)
        cfg = DEFAULT_FEATURE_CONFIG
        assert vf.vectors[5][d] == 2 / cfg.record_count_cap
        assert vf.vectors[5][d + 1] == Severity.Critical.rank / cfg.severity_cap
        assert vf.vectors[5][d + 2] == 2 / cfg.distinct_alarm_cap

    def test_side_features_capped_at_one(self, tiny_vocab, tiny_embedding):
        cfg = FeatureConfig(record_count_cap=2, distinct_alarm_cap=1, severity_cap=1)
        records = [rec(i, i, 7, f"fan {i}") for i in range(5)]
        s = sample_of(*records)
        vf = vertex_features(s, tiny_embedding, tiny_vocab, dag_vertices=[7], config=cfg)
        d = tiny_embedding.dim
        assert vf.vectors[7][d] == 1.0
        assert vf.vectors[7][d + 1] <= 1.0
        assert vf.vectors[7][d + 2] == 1.0

    def test_devices_outside_vertex_set_counted(self, tiny_vocab, tiny_embedding):
        s = sample_of(rec(0, 0, 1, "fan"), rec(1, 1, 9, "power"), rec(2, 2, 8, "sync"))
        vf = vertex_features(s, tiny_embedding, tiny_vocab, dag_vertices=[1])
        assert vf.n_dropped == 2

    def test_vocab_embedding_mismatch(self, tiny_vocab):
        bad = init_matrices(tiny_vocab.size + 1, 4, seed=0)
        s = sample_of(rec(0, 0, 1, "fan"))
        with pytest.raises(ValueError, match="disagree"):
            vertex_features(s, bad, tiny_vocab, dag_vertices=[1])


class TestPooledFeatures:
    def test_equals_mean_of_vertex_features_plus_side(self, tiny_vocab, tiny_embedding):
        s = sample_of(
            rec(0, 0, 1, "fan", Severity.Critical),
            rec(1, 1, 2, "power sync"),
            rec(2, 2, 1, "clock"),
        )
        verts = [1, 2, 4]
        pooled = pooled_features(s, tiny_embedding, tiny_vocab, verts)
        vf = vertex_features(s, tiny_embedding, tiny_vocab, verts)
        stacked = np.stack([vf.vectors[v] for v in sorted(vf.vectors)])
        np.testing.assert_allclose(pooled[: vf.dim], stacked.mean(axis=0))
        cfg = DEFAULT_FEATURE_CONFIG
        assert pooled[vf.dim] == 3 / cfg.global_record_cap
        assert pooled[vf.dim + 1] == Severity.Critical.rank / cfg.severity_cap
        assert pooled[vf.dim + 2] == 3 / cfg.global_distinct_cap  # 3 distinct names
        assert pooled.shape == (vf.dim + 3,)

    def test_feature_dim_helper(self, tiny_embedding):
        assert feature_dim(tiny_embedding) == tiny_embedding.dim + N_SIDE_FEATURES


class TestEmbeddingIO:
    def test_round_trip(self, tiny_vocab, tiny_embedding, tmp_path):
        path = tmp_path / "embedding.bin"
        save_embedding(tiny_embedding, tiny_vocab, path)
        loaded, vocab = load_embedding(path)
        assert vocab == tiny_vocab
        assert np.array_equal(loaded.input_vectors, tiny_embedding.input_vectors)
        assert np.array_equal(loaded.output_vectors, tiny_embedding.output_vectors)

    def test_round_trip_bytes_identical(self, tiny_vocab, tiny_embedding, tmp_path):
        from netdiag.embedding import embedding_bytes

        path = tmp_path / "embedding.bin"
        save_embedding(tiny_embedding, tiny_vocab, path)
        loaded, vocab = load_embedding(path)
        assert embedding_bytes(loaded, vocab) == path.read_bytes()

    def test_wrong_vocab_rejected(self, tiny_vocab, tiny_embedding, tmp_path):
        path = tmp_path / "embedding.bin"
        save_embedding(tiny_embedding, tiny_vocab, path)
        other = Vocabulary(tokens=("<unk>", "different"))
        with pytest.raises(ValueError, match="different vocabulary"):
            load_embedding(path, vocab=other)

    def test_matching_vocab_accepted(self, tiny_vocab, tiny_embedding, tmp_path):
        path = tmp_path / "embedding.bin"
        save_embedding(tiny_embedding, tiny_vocab, path)
        loaded, _ = load_embedding(path, vocab=tiny_vocab)
        assert loaded.n_tokens == tiny_vocab.size

    def test_non_finite_rejected(self):
        bad = np.full((2, 3), np.nan)
        with pytest.raises(ValueError, match="non-finite"):
            EmbeddingMatrix(input_vectors=bad, output_vectors=np.zeros((2, 3)))
