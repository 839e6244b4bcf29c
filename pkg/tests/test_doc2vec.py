"""Paragraph-vector model: tree output layer, training, inference, files."""

import numpy as np
import pytest

from weakbias.corpus import SideLabel, vocabulary_from_counts
from weakbias.doc2vec import (
    PvdmConfig,
    PvdmModel,
    hs_probability,
    infer_document,
    load_embeddings,
    load_model,
    nearest_words,
    path_gradients,
    position_loss,
    save_embeddings,
    save_model,
    train_pvdm,
)
from weakbias.errors import InputError

from helpers import make_corpus, two_topic_corpus


def tiny_model(word_counts, dim=8, seed=0, zero_nodes=False):
    """Model with random vectors over a fixed vocabulary, no training."""
    vocab = vocabulary_from_counts(word_counts, 1)
    rng = np.random.default_rng(seed)
    nodes = (
        np.zeros((vocab.n_inner_nodes, dim))
        if zero_nodes
        else rng.normal(size=(vocab.n_inner_nodes, dim))
    )
    return PvdmModel(
        word_vectors=rng.normal(size=(len(vocab), dim)),
        node_vectors=nodes,
        doc_vectors=np.zeros((0, dim)),
        vocabulary=vocab,
        config=PvdmConfig(dim=dim, min_count=1),
    )


class TestHsProbability:
    def test_zero_nodes_give_half_per_code_bit(self):
        """With all-zero inner nodes every branch is a coin flip."""
        model = tiny_model({"a": 5, "b": 3, "c": 2, "d": 1}, zero_nodes=True)
        ctx = np.random.default_rng(1).normal(size=model.dim)
        for word in model.vocabulary.words:
            code_len = len(model.vocabulary.huffman_code(word))
            assert hs_probability(model, ctx, word) == pytest.approx(0.5**code_len)

    def test_two_word_vocabulary_sums_to_one(self):
        model = tiny_model({"a": 5, "b": 1})
        ctx = np.random.default_rng(2).normal(size=model.dim)
        total = sum(hs_probability(model, ctx, w) for w in ("a", "b"))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_leaf_probabilities_sum_to_one(self):
        """Sigmoid pairs on each inner node make the leaves a distribution."""
        rng = np.random.default_rng(3)
        counts = {f"w{i}": int(rng.integers(1, 40)) for i in range(17)}
        model = tiny_model(counts, dim=12, seed=4)
        for trial in range(5):
            ctx = rng.normal(size=model.dim) * 3.0
            total = sum(
                hs_probability(model, ctx, w) for w in model.vocabulary.words
            )
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_single_word_vocabulary_is_certain(self):
        model = tiny_model({"only": 3})
        assert hs_probability(model, np.zeros(model.dim), "only") == 1.0

    def test_unknown_word_is_an_error(self):
        model = tiny_model({"a": 2, "b": 1})
        with pytest.raises(InputError, match="vocabulary"):
            hs_probability(model, np.zeros(model.dim), "zzz")

    def test_probability_in_open_interval(self):
        model = tiny_model({"a": 2, "b": 1, "c": 1})
        ctx = np.full(model.dim, 10.0)
        for w in ("a", "b", "c"):
            p = hs_probability(model, ctx, w)
            assert 0.0 < p < 1.0


def analytic_position_grads(doc_vec, ctx_words, nodes, bits):
    """Gradients of position_loss routed exactly as the trainer routes them."""
    m = len(ctx_words) + 1
    context = (doc_vec + ctx_words.sum(axis=0)) / m
    _, grad_context, grad_nodes = path_gradients(context, nodes, bits)
    return grad_context / m, np.tile(grad_context / m, (len(ctx_words), 1)), grad_nodes


class TestGradients:
    def test_position_gradients_match_finite_differences(self):
        """Central differences on the pure loss agree with the update rule."""
        rng = np.random.default_rng(7)
        dim, n_ctx, path_len = 6, 4, 3
        step = 1e-5
        for trial in range(5):
            doc = rng.normal(size=dim)
            ctx_words = rng.normal(size=(n_ctx, dim))
            nodes = rng.normal(size=(path_len, dim))
            bits = rng.integers(0, 2, size=path_len).astype(np.uint8)
            g_doc, g_words, g_nodes = analytic_position_grads(
                doc, ctx_words, nodes, bits
            )

            def fd(setter):
                def loss_with(eps):
                    d, c, nd = doc.copy(), ctx_words.copy(), nodes.copy()
                    setter(d, c, nd, eps)
                    return position_loss(d, c, nd, bits)

                return (loss_with(step) - loss_with(-step)) / (2 * step)

            for j in range(dim):
                got = fd(lambda d, c, nd, e, j=j: d.__setitem__(j, d[j] + e))
                assert got == pytest.approx(g_doc[j], rel=1e-5, abs=1e-9)
            for i in range(n_ctx):
                for j in range(dim):
                    got = fd(
                        lambda d, c, nd, e, i=i, j=j: c.__setitem__(
                            (i, j), c[i, j] + e
                        )
                    )
                    assert got == pytest.approx(g_words[i, j], rel=1e-5, abs=1e-9)
            for i in range(path_len):
                for j in range(dim):
                    got = fd(
                        lambda d, c, nd, e, i=i, j=j: nd.__setitem__(
                            (i, j), nd[i, j] + e
                        )
                    )
                    assert got == pytest.approx(g_nodes[i, j], rel=1e-5, abs=1e-9)

    def test_duplicate_context_words_scale_the_gradient(self):
        """A word appearing twice in the window gets twice the update."""
        rng = np.random.default_rng(8)
        dim = 5
        doc = rng.normal(size=dim)
        word = rng.normal(size=dim)
        nodes = rng.normal(size=(2, dim))
        bits = np.array([0, 1], dtype=np.uint8)
        step = 1e-6
        ctx_words = np.stack([word, word])
        up = position_loss(doc, np.stack([word + step, word + step]), nodes, bits)
        down = position_loss(doc, np.stack([word - step, word - step]), nodes, bits)
        fd_total = (up - down) / (2 * step)  # directional: all-ones direction
        g_doc, g_words, _ = analytic_position_grads(doc, ctx_words, nodes, bits)
        assert fd_total == pytest.approx(g_words.sum(), rel=1e-4)


class TestTraining:
    def config(self, **kw):
        defaults = dict(
            dim=16, window=4, epochs=8, min_count=1, seed=3, initial_lr=0.05
        )
        defaults.update(kw)
        return PvdmConfig(**defaults)

    def test_zero_epochs_returns_initialization(self):
        corpus = two_topic_corpus(n_docs=10)
        a = train_pvdm(corpus, self.config(epochs=0))
        b = train_pvdm(corpus, self.config(epochs=0))
        np.testing.assert_array_equal(a.word_vectors, b.word_vectors)
        assert np.all(a.node_vectors == 0.0)
        assert a.epoch_losses == []

    def test_same_seed_bit_identical(self):
        corpus = two_topic_corpus(n_docs=12)
        a = train_pvdm(corpus, self.config())
        b = train_pvdm(corpus, self.config())
        np.testing.assert_array_equal(a.word_vectors, b.word_vectors)
        np.testing.assert_array_equal(a.node_vectors, b.node_vectors)
        np.testing.assert_array_equal(a.doc_vectors, b.doc_vectors)
        assert a.epoch_losses == b.epoch_losses

    def test_different_seed_differs(self):
        corpus = two_topic_corpus(n_docs=12)
        a = train_pvdm(corpus, self.config(seed=1))
        b = train_pvdm(corpus, self.config(seed=2))
        assert not np.array_equal(a.doc_vectors, b.doc_vectors)

    def test_loss_decreases(self):
        corpus = two_topic_corpus(n_docs=30, tokens_per_doc=30)
        model = train_pvdm(corpus, self.config(epochs=6))
        losses = model.epoch_losses
        assert losses[5] <= losses[1]
        for before, after in zip(losses, losses[1:]):
            assert after <= before * 1.01

    def test_documents_without_vocab_tokens_are_skipped(self):
        rows = [
            ("d1", "alpha alpha beta alpha beta", SideLabel.LEFT),
            ("d2", "???", SideLabel.RIGHT),
        ]
        corpus = make_corpus(rows)
        with pytest.warns(UserWarning, match="1 of 2"):
            model = train_pvdm(corpus, self.config(epochs=2))
        assert model.doc_vectors.shape[0] == 2

    def test_empty_corpus_is_an_error(self):
        from weakbias.corpus import Corpus

        with pytest.raises(InputError):
            train_pvdm(Corpus(4, []), self.config())

    def test_float64_mode(self):
        corpus = two_topic_corpus(n_docs=8)
        model = train_pvdm(corpus, self.config(epochs=2), dtype=np.float64)
        assert model.word_vectors.dtype == np.float64

    def test_lockfree_workers_close_to_single_thread(self):
        """Racing workers stay finite and land near the sequential loss."""
        corpus = two_topic_corpus(n_docs=60, tokens_per_doc=25)
        cfg = self.config(epochs=6)
        single = train_pvdm(corpus, cfg)
        multi = train_pvdm(corpus, cfg, workers=2)
        assert np.all(np.isfinite(multi.word_vectors))
        assert np.all(np.isfinite(multi.doc_vectors))
        assert multi.epoch_losses[-1] <= single.epoch_losses[-1] * 1.05


@pytest.fixture(scope="module")
def inference_model():
    return train_pvdm(
        two_topic_corpus(n_docs=40, tokens_per_doc=30),
        PvdmConfig(dim=16, window=4, epochs=10, min_count=1, seed=5, initial_lr=0.05),
    )


@pytest.fixture(scope="module")
def ranking_model():
    return train_pvdm(
        two_topic_corpus(n_docs=60, tokens_per_doc=30),
        PvdmConfig(dim=16, window=4, epochs=12, min_count=1, seed=6, initial_lr=0.05),
    )


class TestInference:
    @pytest.fixture()
    def model(self, inference_model):
        return inference_model

    def test_deterministic_given_seed(self, model):
        tokens = ["red0", "red1", "red2"]
        a = infer_document(model, tokens, seed=9)
        b = infer_document(model, tokens, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_model_untouched_by_inference(self, model):
        before = model.word_vectors.copy()
        nodes_before = model.node_vectors.copy()
        infer_document(model, ["red0", "blue1", "red3"])
        np.testing.assert_array_equal(model.word_vectors, before)
        np.testing.assert_array_equal(model.node_vectors, nodes_before)

    def test_no_vocab_tokens_is_an_error(self, model):
        with pytest.raises(InputError, match="in-vocabulary"):
            infer_document(model, ["zzz", "qqq"])

    def test_inferred_vector_lands_near_its_topic(self, model):
        """Re-embedding a training document finds same-topic neighbours."""
        hits = 0
        for row in range(0, 20, 2):
            doc_id = f"d{row:04d}"
            tokens = [s.tokens for s in two_topic_corpus(n_docs=40, tokens_per_doc=30) if s.id == doc_id][0]
            vec = infer_document(model, tokens, steps=30)
            sims = model.doc_vectors @ vec
            sims = sims / (
                np.linalg.norm(model.doc_vectors, axis=1) * np.linalg.norm(vec) + 1e-12
            )
            nearest = int(np.argmax(sims))
            hits += 1 if nearest % 2 == row % 2 else 0
        assert hits >= 8

    def test_single_step_runs(self, model):
        vec = infer_document(model, ["red0"], steps=1)
        assert vec.shape == (16,)


class TestNearestWords:
    @pytest.fixture()
    def model(self, ranking_model):
        return ranking_model

    def test_returns_n_ranked_pairs(self, model):
        result = nearest_words(model, ["red0"], n=5)
        assert len(result) == 5
        sims = [s for _, s in result]
        assert sims == sorted(sims, reverse=True)
        assert all(-1.000001 <= s <= 1.000001 for s in sims)

    def test_query_tokens_excluded(self, model):
        result = nearest_words(model, ["red0"], n=10)
        assert "red0" not in [w for w, _ in result]

    def test_single_word_query_ranks_its_topic_first(self, model):
        """The 7 other red words should beat every blue word."""
        result = nearest_words(model, ["red0"], n=7)
        assert all(w.startswith("red") for w, _ in result)

    def test_average_embedding_mode(self, model):
        result = nearest_words(model, ["red0", "red1", "red2"], n=5, embed="average")
        red = sum(1 for w, _ in result if w.startswith("red"))
        assert red >= 4

    def test_zero_n_gives_empty(self, model):
        assert nearest_words(model, ["red0"], n=0) == []

    def test_unknown_mode_is_an_error(self, model):
        with pytest.raises(InputError, match="embed"):
            nearest_words(model, ["red0"], embed="other")


class TestModelFiles:
    @pytest.fixture()
    def trained(self):
        return train_pvdm(
            two_topic_corpus(n_docs=10, tokens_per_doc=15),
            PvdmConfig(dim=8, window=3, epochs=3, min_count=1, seed=2),
        )

    def test_save_load_save_is_byte_identical(self, trained, tmp_path):
        p1, p2 = tmp_path / "m1.pvdm", tmp_path / "m2.pvdm"
        save_model(trained, str(p1))
        save_model(load_model(str(p1)), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_matches(self, trained, tmp_path):
        path = tmp_path / "m.pvdm"
        save_model(trained, str(path))
        loaded = load_model(str(path))
        np.testing.assert_array_equal(
            loaded.word_vectors, trained.word_vectors.astype(np.float32)
        )
        assert loaded.vocabulary.words == trained.vocabulary.words
        assert loaded.vocabulary.counts == trained.vocabulary.counts
        for w in trained.vocabulary.words:
            assert loaded.vocabulary.huffman_code(w) == trained.vocabulary.huffman_code(w)

    def test_zero_document_model_round_trips(self, trained, tmp_path):
        trained.doc_vectors = np.zeros((0, trained.dim), dtype=np.float32)
        path = tmp_path / "m.pvdm"
        save_model(trained, str(path))
        loaded = load_model(str(path))
        assert loaded.doc_vectors.shape == (0, trained.dim)

    def test_truncated_file_is_an_error(self, trained, tmp_path):
        path = tmp_path / "m.pvdm"
        save_model(trained, str(path))
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(InputError, match="truncated|trailing"):
            load_model(str(path))

    def test_bad_magic_is_an_error(self, trained, tmp_path):
        path = tmp_path / "m.pvdm"
        save_model(trained, str(path))
        data = path.read_bytes()
        path.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(InputError, match="magic"):
            load_model(str(path))

    def test_embedding_sidecar_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = {f"s{i}": rng.normal(size=6).astype(np.float32) for i in range(4)}
        path = tmp_path / "emb.jsonl"
        save_embeddings(table, str(path))
        loaded = load_embeddings(str(path))
        assert set(loaded) == set(table)
        for key in table:
            np.testing.assert_array_equal(loaded[key], table[key])
