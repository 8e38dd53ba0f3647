import zlib

import numpy as np
import pytest

from cegl.errors import ConfigError, FormatError, NumericError, TruncatedFileError
from cegl.graph import SegmentGraph, SimilarityConfig, build_graph
from cegl.dataio import FeatureMatrix
from cegl.model import (
    AGGREGATOR_KINDS,
    READOUT_KINDS,
    GateWeights,
    ModelParams,
    TrainConfig,
    aggregate_neighbors,
    attention_readout,
    backward,
    classify,
    flatten_gradients,
    flatten_params,
    forward,
    init_params,
    layer_forward,
    load_checkpoint,
    loss,
    save_checkpoint,
    sgd_step,
    train,
    unflatten_params,
    zero_gradients,
)
from cegl.numerics import finite_diff_grad, make_rng, sigmoid


def random_graph(rng, n=None, d=None, label=None):
    n = n or int(rng.integers(2, 7))
    d = d or int(rng.integers(2, 6))
    values = rng.standard_normal((n, d))
    seg = FeatureMatrix("v", values)
    return build_graph(seg, SimilarityConfig(), weak_label=label)


def permute_graph(g, perm):
    return SegmentGraph(
        node_features=g.node_features[perm],
        edge_weights=g.edge_weights[np.ix_(perm, perm)],
        global_frame_offset=g.global_frame_offset,
        weak_label=g.weak_label,
    )


def check_gradients(g, params, y, rtol=1e-4, atol=1e-8):
    cache = forward(g, params)
    analytic = flatten_gradients(params, backward(cache, g, params, y))

    def f(vec):
        return loss(forward(g, unflatten_params(vec, params)).prediction, y)

    numeric = finite_diff_grad(f, flatten_params(params), eps=1e-5)
    err = np.abs(analytic - numeric)
    bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.flatnonzero(err > bound)
    assert bad.size == 0, f"gradient mismatch at flat indices {bad[:5]}: " \
        f"analytic {analytic[bad[:5]]}, numeric {numeric[bad[:5]]}"


class TestInitParams:
    def test_deterministic(self):
        a = init_params((4, 3, 2), seed=5)
        b = init_params((4, 3, 2), seed=5)
        assert np.array_equal(flatten_params(a), flatten_params(b))

    def test_zero_scale_gives_half_probability(self):
        params = init_params((3, 4, 4), init_scale=0.0, seed=1)
        g = random_graph(make_rng(2), n=4, d=3)
        assert forward(g, params).prediction == 0.5

    def test_uniform_bounds(self):
        params = init_params((8, 4, 4), seed=3)
        for w, fan_in in [
            (params.transforms[0], 16),
            (params.transforms[1], 8),
            (params.gates[0].update, 16),
            (params.gates[1].candidate, 8),
            (params.attn_transform, 4),
            (params.attn_vector, 4),
            (params.clf_weights, 4),
        ]:
            assert np.abs(w).max() < 1.0 / np.sqrt(fan_in)
        assert params.clf_bias == 0.0

    def test_invalid(self):
        with pytest.raises(ConfigError):
            init_params((4, 0, 2))
        with pytest.raises(ConfigError):
            init_params((4, 3), aggregator_kind="median")
        with pytest.raises(ConfigError):
            init_params((4, 3), readout_kind="lstm")


def scripted_gated(edge_w, h, gates):
    """Plain per-node sequential evaluation of the gated recurrence."""
    n, d = h.shape
    out = np.zeros_like(h)
    for i in range(n):
        state = h[i].copy()
        for j in range(n):
            if j == i:
                continue
            msg = edge_w[i, j] * h[j]
            gate_in = np.concatenate([state, msg])
            z = 1.0 / (1.0 + np.exp(-(gates.update @ gate_in)))
            r = 1.0 / (1.0 + np.exp(-(gates.reset @ gate_in)))
            cand = np.tanh(gates.candidate @ np.concatenate([r * state, msg]))
            state = (1.0 - z) * state + z * cand
        out[i] = state
    return out


class TestAggregateNeighbors:
    def test_single_node_mean_and_maxpool_zero(self):
        g = build_graph(FeatureMatrix("v", np.array([[1.0, -2.0]])), SimilarityConfig())
        h = g.node_features
        assert np.array_equal(aggregate_neighbors(g, h, kind="mean"), np.zeros((1, 2)))
        assert np.array_equal(aggregate_neighbors(g, h, kind="maxpool"), np.zeros((1, 2)))

    def test_single_node_gated_keeps_state(self):
        g = build_graph(FeatureMatrix("v", np.array([[1.0, -2.0]])), SimilarityConfig())
        gates = GateWeights(*(make_rng(1).standard_normal((3, 2, 4))))
        out = aggregate_neighbors(g, g.node_features, gates, kind="gated")
        assert np.array_equal(out, g.node_features)

    def test_two_identical_nodes_mean(self):
        g = build_graph(FeatureMatrix("v", np.array([[1.0, 2.0], [1.0, 2.0]])), SimilarityConfig())
        out = aggregate_neighbors(g, g.node_features, kind="mean")
        assert np.allclose(out[0], g.node_features[1], atol=1e-15)

    def test_mean_with_all_zero_edges(self):
        feats = np.array([[1.0, 0.0], [-1.0, 0.0]])  # opposite, cosine clamps to 0
        g = build_graph(FeatureMatrix("v", feats), SimilarityConfig())
        assert g.edge_weights.sum() == 0.0
        out = aggregate_neighbors(g, g.node_features, kind="mean")
        assert np.array_equal(out, np.zeros((2, 2)))

    def test_gated_matches_scripted_recurrence(self):
        rng = make_rng(7)
        g = random_graph(rng, n=3, d=4)
        gates = GateWeights(
            rng.standard_normal((4, 8)),
            rng.standard_normal((4, 8)),
            rng.standard_normal((4, 8)),
        )
        got = aggregate_neighbors(g, g.node_features, gates, kind="gated")
        want = scripted_gated(g.edge_weights, g.node_features, gates)
        assert np.allclose(got, want, rtol=0, atol=1e-12)

    def test_maxpool_matches_elementwise(self):
        rng = make_rng(8)
        g = random_graph(rng, n=4, d=3)
        got = aggregate_neighbors(g, g.node_features, kind="maxpool")
        for i in range(4):
            others = [g.edge_weights[i, j] * g.node_features[j] for j in range(4) if j != i]
            assert np.array_equal(got[i], np.max(others, axis=0))

    def test_shape_mismatch(self):
        g = random_graph(make_rng(9), n=3)
        with pytest.raises(ValueError):
            aggregate_neighbors(g, np.zeros((5, g.feature_dim)), kind="mean")


class TestLayerForward:
    def test_zero_weights_zero_output(self):
        g = random_graph(make_rng(10), n=3, d=4)
        out = layer_forward(g, g.node_features, np.zeros((5, 8)), kind="mean")
        assert np.array_equal(out, np.zeros((3, 5)))

    def test_selector_of_self_half(self):
        g = build_graph(FeatureMatrix("v", np.abs(make_rng(11).standard_normal((3, 2))) + 0.5),
                        SimilarityConfig())
        transform = np.hstack([np.eye(2), np.zeros((2, 2))])
        out = layer_forward(g, g.node_features, transform, kind="mean")
        assert np.allclose(out, g.node_features, atol=1e-15)

    def test_matches_direct_formula(self):
        rng = make_rng(12)
        g = random_graph(rng, n=4, d=3)
        transform = rng.standard_normal((5, 6))
        out = layer_forward(g, g.node_features, transform, kind="mean")
        msgs = aggregate_neighbors(g, g.node_features, kind="mean")
        for i in range(4):
            stacked = np.concatenate([g.node_features[i], msgs[i]])
            assert np.allclose(out[i], np.maximum(transform @ stacked, 0.0), atol=1e-12)


class TestAttentionReadout:
    def test_two_identical_nodes(self):
        h = np.array([[2.0, 2.0], [2.0, 2.0]])
        h_g, alpha = attention_readout(h, np.eye(2), np.ones(2))
        assert np.allclose(alpha, [0.5, 0.5], atol=1e-15)
        # literal 1/n factor: (1/2) * (0.5+0.5) * (2,2) = (1,1)
        assert np.allclose(h_g, [1.0, 1.0], atol=1e-15)

    def test_single_node(self):
        h = np.array([[3.0, -1.0]])
        h_g, alpha = attention_readout(h, np.eye(2), np.ones(2))
        assert np.array_equal(alpha, [1.0])
        assert np.allclose(h_g, h[0], atol=1e-15)

    def test_matches_scripted(self):
        rng = make_rng(13)
        h = rng.standard_normal((4, 3))
        wa = rng.standard_normal((2, 3))
        u = rng.standard_normal(2)
        h_g, alpha = attention_readout(h, wa, u)
        scores = np.array([u @ np.tanh(wa @ h[i]) for i in range(4)])
        e = np.exp(scores - scores.max())
        want_alpha = e / e.sum()
        want_hg = (want_alpha[:, None] * h).sum(axis=0) / 4
        assert np.allclose(alpha, want_alpha, atol=1e-12)
        assert np.allclose(h_g, want_hg, atol=1e-12)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-12)


class TestClassifyAndLoss:
    def test_zero_head(self):
        params = init_params((2, 2), init_scale=0.0)
        assert classify(np.zeros(2), params) == 0.5

    def test_bias_only(self):
        params = init_params((2, 2), init_scale=0.0)
        params.clf_bias = np.log(3.0)
        assert classify(np.zeros(2), params) == pytest.approx(0.75, abs=1e-15)

    def test_matches_manual_dot(self):
        rng = make_rng(14)
        params = init_params((3, 4, 2), seed=2)
        h_g = rng.standard_normal(2)
        want = 1.0 / (1.0 + np.exp(-(params.clf_weights @ h_g + params.clf_bias)))
        assert classify(h_g, params) == pytest.approx(want, abs=1e-15)

    def test_loss_values(self):
        assert loss(0.5, 0) == pytest.approx(np.log(2.0), abs=1e-12)
        assert loss(0.5, 1) == pytest.approx(np.log(2.0), abs=1e-12)
        assert loss(0.75, 1) == pytest.approx(-np.log(0.75), abs=1e-12)
        assert loss(1.0 - 1e-12, 1) < 1e-10
        assert np.isfinite(loss(0.0, 1))


class TestForward:
    def test_zero_params_half(self):
        g = random_graph(make_rng(15), n=4, d=3)
        for agg in AGGREGATOR_KINDS:
            for readout in READOUT_KINDS:
                params = init_params((3, 4, 2), agg, readout, init_scale=0.0)
                assert forward(g, params).prediction == 0.5

    def test_single_node_graph_all_kinds(self):
        g = build_graph(FeatureMatrix("v", np.array([[0.5, -1.5, 2.0]])), SimilarityConfig())
        for agg in AGGREGATOR_KINDS:
            for readout in READOUT_KINDS:
                params = init_params((3, 4, 2), agg, readout, seed=4)
                cache = forward(g, params)
                assert 0.0 < cache.prediction < 1.0

    def test_matches_scripted_three_node_mean_attention(self):
        rng = make_rng(16)
        g = random_graph(rng, n=3, d=3)
        params = init_params((3, 4, 2), "mean", "attention", seed=6)

        h = g.node_features
        w = g.edge_weights
        for transform in params.transforms:
            deg = w.sum(axis=1)
            msgs = np.where(deg[:, None] > 0, (w @ h) / np.maximum(deg, 1e-300)[:, None], 0.0)
            h = np.maximum(np.hstack([h, msgs]) @ transform.T, 0.0)
        scores = np.tanh(h @ params.attn_transform.T) @ params.attn_vector
        e = np.exp(scores - scores.max())
        alpha = e / e.sum()
        h_g = (alpha[:, None] * h).sum(axis=0) / 3
        want = 1.0 / (1.0 + np.exp(-(params.clf_weights @ h_g + params.clf_bias)))

        assert forward(g, params).prediction == pytest.approx(want, abs=1e-12)

    def test_dimension_mismatch(self):
        g = random_graph(make_rng(17), n=3, d=4)
        with pytest.raises(ValueError):
            forward(g, init_params((3, 4, 2)))


class TestBackward:
    def test_bias_gradient_is_residual(self):
        rng = make_rng(18)
        g = random_graph(rng, n=4, d=3)
        params = init_params((3, 4, 2), "mean", "attention", seed=7)
        cache = forward(g, params)
        grads = backward(cache, g, params, 1)
        assert grads.clf_bias == cache.prediction - 1

    def test_unused_gate_branch_gets_zero_gradient(self):
        g = random_graph(make_rng(19), n=4, d=3)
        params = init_params((3, 4, 2), "mean", "attention", seed=8)
        grads = backward(forward(g, params), g, params, 0)
        for gw in grads.gates:
            assert not gw.update.any()
            assert not gw.reset.any()
            assert not gw.candidate.any()

    def test_unused_attention_branch_gets_zero_gradient(self):
        g = random_graph(make_rng(20), n=4, d=3)
        params = init_params((3, 4, 2), "mean", "mean", seed=9)
        grads = backward(forward(g, params), g, params, 0)
        assert not grads.attn_transform.any()
        assert not grads.attn_vector.any()

    def test_stale_cache_rejected(self):
        rng = make_rng(21)
        g1 = random_graph(rng, n=3, d=3)
        g2 = random_graph(rng, n=3, d=3)
        params = init_params((3, 4, 2))
        cache = forward(g1, params)
        with pytest.raises(ConfigError, match="stale"):
            backward(cache, g2, params, 1)

    @pytest.mark.parametrize("agg", AGGREGATOR_KINDS)
    @pytest.mark.parametrize("readout", READOUT_KINDS)
    def test_gradients_match_finite_differences(self, agg, readout):
        seed = zlib.crc32(f"{agg}/{readout}".encode())
        rng = make_rng(seed)
        for trial in range(3):
            g = random_graph(rng)
            params = init_params(
                (g.feature_dim, int(rng.integers(2, 7)), int(rng.integers(2, 7))),
                agg,
                readout,
                seed=int(rng.integers(0, 1000)),
            )
            check_gradients(g, params, y=trial % 2)

    def test_gradients_with_unaveraged_attention(self):
        rng = make_rng(77)
        for trial in range(3):
            g = random_graph(rng)
            params = init_params(
                (g.feature_dim, 4, 3),
                "mean",
                "attention",
                seed=int(rng.integers(0, 1000)),
                attention_averaged=False,
            )
            check_gradients(g, params, y=trial % 2)


class TestSgdStep:
    def test_zero_lr_keeps_params(self):
        params = init_params((3, 4, 2), seed=1)
        g = random_graph(make_rng(22), n=3, d=3)
        grads = backward(forward(g, params), g, params, 1)
        updated = sgd_step(params, grads, 0.0)
        assert np.array_equal(flatten_params(updated), flatten_params(params))

    def test_scalar_arithmetic(self):
        params = init_params((2, 1), init_scale=0.0)
        params.clf_bias = 1.0
        grads = zero_gradients(params)
        grads.clf_bias = 2.0
        assert sgd_step(params, grads, 0.1).clf_bias == pytest.approx(0.8)

    def test_converges_on_quadratic(self):
        # minimize (b - 3)^2 through the bias alone
        params = init_params((2, 1), init_scale=0.0)
        for _ in range(200):
            grads = zero_gradients(params)
            grads.clf_bias = 2.0 * (params.clf_bias - 3.0)
            params = sgd_step(params, grads, 0.1)
        assert params.clf_bias == pytest.approx(3.0, abs=1e-8)

    def test_nonfinite_gradient_aborts(self):
        params = init_params((3, 4, 2))
        grads = zero_gradients(params)
        grads.clf_weights[0] = np.nan
        with pytest.raises(NumericError):
            sgd_step(params, grads, 0.1)


def toy_training_set():
    a = build_graph(FeatureMatrix("a", np.array([[2.0, 0.0]] * 3)), SimilarityConfig())
    b = build_graph(FeatureMatrix("b", np.array([[0.0, 2.0]] * 3)), SimilarityConfig())
    return [(a, 1), (b, 0)]


class TestTrain:
    def test_loss_decreases_on_separable_toy(self):
        graphs = toy_training_set()
        params = init_params((2, 4, 3), "mean", "attention", seed=3)
        cfg = TrainConfig(learning_rate=0.1, batch_size=8, epochs=12, seed=1)
        _, history = train(graphs, params, cfg)
        for earlier, later in zip(history[:10], history[1:11]):
            assert later < earlier

    def test_deterministic(self):
        graphs = toy_training_set()
        cfg = TrainConfig(learning_rate=0.05, batch_size=1, epochs=5, seed=9)
        out1, hist1 = train(graphs, init_params((2, 4, 3), seed=3), cfg)
        out2, hist2 = train(graphs, init_params((2, 4, 3), seed=3), cfg)
        assert np.array_equal(flatten_params(out1), flatten_params(out2))
        assert hist1 == hist2

    def test_epochs_zero_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)

    def test_feature_dim_mismatch(self):
        g1 = build_graph(FeatureMatrix("a", np.ones((2, 2))), SimilarityConfig())
        g2 = build_graph(FeatureMatrix("b", np.ones((2, 3))), SimilarityConfig())
        params = init_params((2, 3, 2))
        with pytest.raises(ConfigError):
            train([(g1, 0), (g2, 1)], params, TrainConfig(epochs=1))

    def test_single_class_warns(self, caplog):
        g = build_graph(FeatureMatrix("a", np.ones((2, 2))), SimilarityConfig())
        params = init_params((2, 3, 2))
        with caplog.at_level("WARNING"):
            train([(g, 1), (g, 1)], params, TrainConfig(epochs=1))
        assert any("single class" in r.message for r in caplog.records)

    def test_class_weighting_runs(self):
        graphs = toy_training_set() + [toy_training_set()[0]]
        params = init_params((2, 4, 3), seed=3)
        cfg = TrainConfig(learning_rate=0.05, epochs=2, seed=1, class_weighting=True)
        _, history = train(graphs, params, cfg)
        assert len(history) == 2


class TestPermutationProperties:
    def test_mean_and_maxpool_permutation_invariant(self):
        rng = make_rng(23)
        for agg in ("mean", "maxpool"):
            for readout in READOUT_KINDS:
                for _ in range(5):
                    g = random_graph(rng)
                    params = init_params((g.feature_dim, 5, 4), agg, readout, seed=11)
                    base = forward(g, params).prediction
                    perm = rng.permutation(g.n)
                    permuted = forward(permute_graph(g, perm), params).prediction
                    assert abs(base - permuted) <= 1e-9

    def test_gated_is_bitwise_reproducible(self):
        rng = make_rng(24)
        g = random_graph(rng, n=5, d=4)
        params = init_params((4, 5, 4), "gated", "attention", seed=12)
        runs = {forward(g, params).prediction for _ in range(5)}
        assert len(runs) == 1

    def test_zero_edges_zero_mean_messages(self):
        feats = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
        g = build_graph(FeatureMatrix("v", feats), SimilarityConfig())
        # orthogonal/opposite directions leave only clamped zero edges
        assert g.edge_weights.max() == 0.0
        msgs = aggregate_neighbors(g, g.node_features, kind="mean")
        assert np.array_equal(msgs, np.zeros_like(feats))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(
            (5, 6, 4), "gated", "attention", seed=21, a_dim=3, attention_averaged=False
        )
        sim = SimilarityConfig(metric="knn_cosine", knn_k=4)
        path = tmp_path / "m.cegm"
        save_checkpoint(params, path, similarity=sim)
        loaded, sim_back = load_checkpoint(path)
        assert np.array_equal(flatten_params(loaded), flatten_params(params))
        assert loaded.layer_dims == params.layer_dims
        assert loaded.aggregator_kind == "gated"
        assert loaded.readout_kind == "attention"
        assert loaded.a_dim == 3
        assert loaded.attention_averaged is False
        assert sim_back == sim

    def test_corrupted_magic(self, tmp_path):
        params = init_params((3, 3, 2), seed=1)
        path = tmp_path / "m.cegm"
        save_checkpoint(params, path)
        bad = tmp_path / "bad.cegm"
        bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(bad)

    def test_truncated(self, tmp_path):
        params = init_params((3, 3, 2), seed=1)
        path = tmp_path / "m.cegm"
        save_checkpoint(params, path)
        trunc = tmp_path / "t.cegm"
        trunc.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(trunc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.cegm")


def test_full_model_loss_gradient_on_four_node_graph():
    # The finite-difference checker applied to the whole pipeline loss.
    rng = make_rng(25)
    g = random_graph(rng, n=4, d=3)
    params = init_params((3, 4, 3), "gated", "attention", seed=13)
    check_gradients(g, params, y=1)
