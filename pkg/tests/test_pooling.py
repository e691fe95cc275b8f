import numpy as np
import numpy.testing as npt
import pytest

from clspool import rng as R
from clspool.encoder import CLSTrace
from clspool.pooling import (AttentionPoolHead, ClassifierHead, LSTMPoolHead,
                             attention_pool, classify, last_cls_pool, lstm_pool)
from clspool.tensor import Tensor


def trace_of(*rows):
    return CLSTrace([Tensor(np.asarray(r, dtype=float)) for r in rows])


def random_trace(rng, L, H):
    return trace_of(*[rng.normal(size=H) for _ in range(L)])


# ---------------------------------------------------------------------------
# reference oracles


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_lstm(vectors, head):
    """Step-by-step scalar-level LSTM cell oracle."""
    p = {k: v.data for k, v in head.params.items()}
    H = head.H
    h = np.zeros(H)
    c = np.zeros(H)
    for x in vectors:
        i = sigmoid(x @ p["lstm/W_i"] + h @ p["lstm/U_i"] + p["lstm/b_i"])
        f = sigmoid(x @ p["lstm/W_f"] + h @ p["lstm/U_f"] + p["lstm/b_f"])
        g = np.tanh(x @ p["lstm/W_g"] + h @ p["lstm/U_g"] + p["lstm/b_g"])
        o = sigmoid(x @ p["lstm/W_o"] + h @ p["lstm/U_o"] + p["lstm/b_o"])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


def reference_attention(vectors, head):
    """Brute-force softmax + weighted-sum oracle."""
    q = head.params["attnpool/q"].data
    W = head.params["attnpool/W_h"].data
    s = np.array([q @ v for v in vectors])
    e = np.exp(s - s.max())
    alpha = e / e.sum()
    combined = sum(a * v for a, v in zip(alpha, vectors))
    return W.T @ combined, alpha


# ---------------------------------------------------------------------------


class TestLastPool:
    def test_definition(self):
        t = trace_of([1.0, 2.0], [3.0, 4.0], [5.0, 6.0])
        npt.assert_array_equal(last_cls_pool(t).data, [5.0, 6.0])

    def test_singleton(self):
        t = trace_of([7.0, 8.0])
        npt.assert_array_equal(last_cls_pool(t).data, [7.0, 8.0])

    def test_empty_trace(self):
        with pytest.raises(ValueError, match="nonempty"):
            last_cls_pool(CLSTrace([]))

    def test_matches_attention_with_identity_when_single_layer(self):
        rng = np.random.default_rng(0)
        head = AttentionPoolHead(4, rng)
        head.params["attnpool/W_h"].data = np.eye(4)
        t = random_trace(rng, 1, 4)
        npt.assert_allclose(attention_pool(t, head).data, last_cls_pool(t).data,
                            atol=1e-12)


class TestLSTMPool:
    def test_zero_parameters_give_zero_output(self):
        head = LSTMPoolHead(4, np.random.default_rng(0))
        for p in head.params.values():
            p.data[:] = 0.0
        t = trace_of([1.0, -2.0, 3.0, 0.5], [4.0, 4.0, 4.0, 4.0])
        npt.assert_array_equal(lstm_pool(t, head).data, np.zeros(4))

    def test_single_step_matches_reference_cell(self):
        rng = np.random.default_rng(1)
        head = LSTMPoolHead(5, rng)
        v = rng.normal(size=5)
        npt.assert_allclose(lstm_pool(trace_of(v), head).data,
                            reference_lstm([v], head), atol=1e-12)

    def test_matches_reference_over_trace(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            L = int(rng.integers(1, 8))
            H = int(rng.integers(2, 12))
            head = LSTMPoolHead(H, rng)
            vectors = [rng.normal(size=H) for _ in range(L)]
            npt.assert_allclose(lstm_pool(trace_of(*vectors), head).data,
                                reference_lstm(vectors, head), atol=1e-10)

    def test_reversal_changes_output(self):
        rng = np.random.default_rng(3)
        head = LSTMPoolHead(6, rng)
        vectors = [rng.normal(size=6) for _ in range(4)]
        fwd = lstm_pool(trace_of(*vectors), head).data
        rev = lstm_pool(trace_of(*vectors[::-1]), head).data
        assert np.abs(fwd - rev).max() > 1e-6

    def test_order_sensitivity_across_seeds(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            head = LSTMPoolHead(6, rng)
            vectors = [rng.normal(size=6) for _ in range(4)]
            fwd = lstm_pool(trace_of(*vectors), head).data
            rev = lstm_pool(trace_of(*vectors[::-1]), head).data
            if np.abs(fwd - rev).max() > 1e-8:
                hits += 1
        assert hits >= 19

    def test_empty_trace(self):
        head = LSTMPoolHead(3, np.random.default_rng(0))
        with pytest.raises(ValueError, match="nonempty"):
            lstm_pool(CLSTrace([]), head)


class TestAttentionPool:
    def test_single_layer(self):
        rng = np.random.default_rng(4)
        head = AttentionPoolHead(3, rng)
        v = rng.normal(size=3)
        o, w = attention_pool(trace_of(v), head, return_weights=True)
        npt.assert_allclose(w.data, [[1.0]], atol=1e-15)
        npt.assert_allclose(o.data, head.params["attnpool/W_h"].data.T @ v, atol=1e-12)

    def test_zero_query_gives_uniform_mean(self):
        rng = np.random.default_rng(5)
        head = AttentionPoolHead(3, rng)
        head.params["attnpool/q"].data[:] = 0.0
        vectors = [rng.normal(size=3) for _ in range(4)]
        o, w = attention_pool(trace_of(*vectors), head, return_weights=True)
        npt.assert_allclose(w.data, 0.25, atol=1e-15)
        npt.assert_allclose(o.data,
                            head.params["attnpool/W_h"].data.T @ np.mean(vectors, axis=0),
                            atol=1e-12)

    def test_worked_example(self):
        head = AttentionPoolHead(2, np.random.default_rng(0))
        head.params["attnpool/q"].data = np.array([1.0, 0.0])
        head.params["attnpool/W_h"].data = np.eye(2)
        t = trace_of([0.0, 4.0], [np.log(3.0), 0.0])
        o, w = attention_pool(t, head, return_weights=True)
        npt.assert_allclose(w.data, [[0.25, 0.75]], atol=1e-12)
        npt.assert_allclose(o.data, [0.75 * np.log(3.0), 1.0], atol=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            L = int(rng.integers(1, 9))
            H = int(rng.integers(2, 17))
            head = AttentionPoolHead(H, rng)
            vectors = [rng.normal(size=H) for _ in range(L)]
            o = attention_pool(trace_of(*vectors), head).data
            expect, _ = reference_attention(vectors, head)
            npt.assert_allclose(o, expect, atol=1e-10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        head = AttentionPoolHead(5, rng)
        vectors = [rng.normal(size=5) for _ in range(6)]
        base = attention_pool(trace_of(*vectors), head).data
        for _ in range(5):
            perm = rng.permutation(6)
            out = attention_pool(trace_of(*[vectors[i] for i in perm]), head).data
            npt.assert_allclose(out, base, atol=1e-10)

    def test_query_scaling_preserves_argmax(self):
        rng = np.random.default_rng(8)
        for seed in range(10):
            head = AttentionPoolHead(4, np.random.default_rng(seed))
            vectors = [rng.normal(size=4) for _ in range(5)]
            _, w = attention_pool(trace_of(*vectors), head, return_weights=True)
            base = int(np.argmax(w.data))
            for c in (0.1, 2.0, 17.0):
                head.params["attnpool/q"].data *= c
                _, w2 = attention_pool(trace_of(*vectors), head, return_weights=True)
                assert int(np.argmax(w2.data)) == base
                head.params["attnpool/q"].data /= c

    def test_convex_hull_with_identity_projection(self):
        rng = np.random.default_rng(9)
        head = AttentionPoolHead(4, rng)
        head.params["attnpool/W_h"].data = np.eye(4)
        vectors = [rng.normal(size=4) for _ in range(5)]
        o = attention_pool(trace_of(*vectors), head).data
        stacked = np.stack(vectors)
        assert np.all(o >= stacked.min(axis=0) - 1e-12)
        assert np.all(o <= stacked.max(axis=0) + 1e-12)

    def test_empty_trace(self):
        head = AttentionPoolHead(3, np.random.default_rng(0))
        with pytest.raises(ValueError, match="nonempty"):
            attention_pool(CLSTrace([]), head)


class TestClassifier:
    def test_zero_weights_uniform(self):
        head = ClassifierHead(4, 3, np.random.default_rng(0))
        head.params["classifier/W_o"].data[:] = 0.0
        y = classify(Tensor(np.ones(4)), head)
        npt.assert_allclose(y.data, [1 / 3] * 3, atol=1e-15)

    def test_log_bias_ratios(self):
        head = ClassifierHead(4, 3, np.random.default_rng(0))
        head.params["classifier/W_o"].data[:] = 0.0
        head.params["classifier/b_o"].data = np.log([1.0, 2.0, 3.0]) - 0.37
        y = classify(Tensor(np.zeros(4)), head)
        npt.assert_allclose(y.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_sums_to_one_random(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            head = ClassifierHead(6, 4, rng)
            y = classify(Tensor(rng.normal(size=6)), head)
            assert abs(y.data.sum() - 1.0) < 1e-12
            assert np.all(y.data >= 0)

    def test_dropout_only_when_training(self):
        rng = np.random.default_rng(11)
        head = ClassifierHead(4, 2, rng)
        o = Tensor(rng.normal(size=4))
        eval_y = classify(o, head).data
        train_y = classify(o, head, p_drop=0.5, rng=np.random.default_rng(0),
                           training=True).data
        npt.assert_allclose(classify(o, head).data, eval_y)
        assert not np.allclose(train_y, eval_y)


class TestGradients:
    def test_head_parameters_pass_finite_difference(self):
        from clspool.gradcheck import run_gradcheck
        ok, results = run_gradcheck(seeds=3, coords_per_param=1)
        assert ok, results
