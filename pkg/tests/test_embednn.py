import numpy as np
import pytest

from linksched import ConfigurationError, LayoutConfig, generate_layout
from linksched import embednn as nn
from linksched.graph import QuantizerSpec, Topology, build_graph

from conftest import make_channel

SPEC = QuantizerSpec.for_layout_config(2, 2.0, 65.0, 500.0)
FULL = Topology.fully_connected()


def small_arch(**kw):
    defaults = dict(embed_dim=4, iterations=2, bits=2, hidden=6, topology=FULL)
    defaults.update(kw)
    return nn.ArchConfig(**defaults)


def graph_and_channel(num_pairs=5, seed=21, topology=FULL, bits=2):
    layout, ch = make_channel(num_pairs, seed=seed)
    spec = QuantizerSpec.for_layout_config(bits, 2.0, 65.0, 500.0)
    return build_graph(layout, spec, topology), ch


def reference_embed(graph, ep):
    """Loop-based reimplementation of the mean-field iterations."""
    L = graph.num_nodes
    p = ep.embed_dim
    mu = {v: np.zeros(p) for v in range(L)}
    for _ in range(ep.iterations):
        nxt = {}
        for v in range(L):
            nbrs = graph.in_neighbors(v)
            edge_sum = np.zeros(ep.feat_dim)
            mu_sum = np.zeros(p)
            for pos, u in enumerate(nbrs):
                e = graph.edge_feat[graph.in_indptr[v] + pos]
                edge_sum = edge_sum + e
                mu_sum = mu_sum + mu[u]
            pre = ep.w_node @ graph.node_feat[v] + ep.w_edge @ edge_sum + ep.w_neighbor @ mu_sum
            nxt[v] = np.maximum(0.0, pre)
        mu = nxt
    return np.stack([mu[v] for v in range(L)])


def reference_classifier(mu, cp, mode="train"):
    """Scalar-loop classifier forward, including batch normalization."""
    n, _ = mu.shape
    H = cp.hidden
    h = np.zeros((n, H))
    for i in range(n):
        for j in range(H):
            h[i, j] = float(np.dot(cp.w_hidden[j], mu[i])) + cp.b_hidden[j]
    if mode == "train":
        mean = [sum(h[i, j] for i in range(n)) / n for j in range(H)]
        var = [sum((h[i, j] - mean[j]) ** 2 for i in range(n)) / n for j in range(H)]
    else:
        mean, var = cp.bn_mean, cp.bn_var
    out = np.zeros((n, 2))
    for i in range(n):
        act = np.zeros(H)
        for j in range(H):
            xh = (h[i, j] - mean[j]) / np.sqrt(var[j] + nn.BN_EPS)
            act[j] = max(0.0, cp.bn_scale[j] * xh + cp.bn_shift[j])
        logits = [float(np.dot(cp.w_out[k], act)) + cp.b_out[k] for k in range(2)]
        m = max(logits)
        exp = [np.exp(l - m) for l in logits]
        s = sum(exp)
        out[i] = [e / s for e in exp]
    return out


class TestEmbed:
    def test_zero_params_zero_embeddings(self):
        graph, _ = graph_and_channel()
        ep = nn.EmbeddingParams(
            w_node=np.zeros((4, 4)), w_edge=np.zeros((4, 4)),
            w_neighbor=np.zeros((4, 4)), iterations=2,
        )
        assert np.all(nn.embed(graph, ep) == 0.0)

    def test_single_iteration_ignores_neighbor_map(self):
        graph, _ = graph_and_channel()
        params = nn.init_params(small_arch(iterations=1), seed=1)
        mu_a = nn.embed(graph, params.embed)
        params.embed.w_neighbor[...] = np.random.default_rng(0).normal(size=(4, 4))
        mu_b = nn.embed(graph, params.embed)
        np.testing.assert_array_equal(mu_a, mu_b)

    def test_matches_reference_implementation(self):
        for seed in range(5):
            graph, _ = graph_and_channel(num_pairs=4, seed=seed)
            params = nn.init_params(small_arch(), seed=seed)
            np.testing.assert_allclose(
                nn.embed(graph, params.embed),
                reference_embed(graph, params.embed),
                rtol=1e-12, atol=1e-14,
            )

    def test_matches_reference_on_knn(self):
        graph, _ = graph_and_channel(num_pairs=8, seed=3, topology=Topology.knn(3))
        params = nn.init_params(small_arch(iterations=3), seed=9)
        np.testing.assert_allclose(
            nn.embed(graph, params.embed),
            reference_embed(graph, params.embed),
            rtol=1e-12, atol=1e-14,
        )

    def test_embeddings_nonnegative(self):
        for seed in range(10):
            graph, _ = graph_and_channel(num_pairs=6, seed=seed)
            params = nn.init_params(small_arch(), seed=seed)
            assert np.all(nn.embed(graph, params.embed) >= 0.0)

    def test_dimension_mismatch_rejected(self):
        graph, _ = graph_and_channel(bits=3)
        params = nn.init_params(small_arch(), seed=0)  # expects 2^2 features
        with pytest.raises(ConfigurationError):
            nn.embed(graph, params.embed)

    def test_t_hop_locality_on_knn(self):
        # perturbing a node outside the 2-hop in-neighborhood leaves the
        # embedding bit-identical
        rng = np.random.default_rng(0)
        hits = 0
        for seed in range(100):
            layout = generate_layout(LayoutConfig(num_pairs=12, seed=seed))
            graph = build_graph(layout, SPEC, Topology.knn(2))
            params = nn.init_params(small_arch(), seed=seed)
            mu = nn.embed(graph, params.embed)
            v = int(rng.integers(12))
            one_hop = set(graph.in_neighbors(v).tolist())
            two_hop = set(one_hop)
            for u in one_hop:
                two_hop |= set(graph.in_neighbors(u).tolist())
            outside = [w for w in range(12) if w not in two_hop and w != v]
            if not outside:
                continue
            hits += 1
            w = outside[0]
            graph.node_feat[w] = np.roll(graph.node_feat[w], 1)
            sl = slice(graph.in_indptr[w], graph.in_indptr[w + 1])
            graph.edge_feat[sl] = np.roll(graph.edge_feat[sl], 1, axis=1)
            graph.edge_hist[w] = graph.edge_feat[sl].sum(axis=0)
            mu_after = nn.embed(graph, params.embed)
            assert np.array_equal(mu[v], mu_after[v])
        assert hits >= 50

    def test_permutation_equivariance(self):
        for seed in range(100):
            layout = generate_layout(LayoutConfig(num_pairs=6, seed=seed))
            graph = build_graph(layout, SPEC, FULL)
            params = nn.init_params(small_arch(), seed=seed)
            perm = np.random.default_rng(seed).permutation(6)
            permuted_layout = type(layout)(
                tx_pos=layout.tx_pos[perm], rx_pos=layout.rx_pos[perm],
                config=layout.config, weights=layout.weights[perm],
            )
            graph_p = build_graph(permuted_layout, SPEC, FULL)
            mu = nn.embed(graph, params.embed)
            mu_p = nn.embed(graph_p, params.embed)
            np.testing.assert_allclose(mu_p, mu[perm], rtol=1e-10, atol=1e-12)


class TestClassify:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        params = nn.init_params(small_arch(), seed=2)
        probs = nn.classify(rng.normal(size=(9, 4)), params.clf, mode="train")
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs > 0) and np.all(probs < 1)

    def test_zero_output_layer_uniform(self):
        rng = np.random.default_rng(1)
        params = nn.init_params(small_arch(), seed=3)
        params.clf.w_out[...] = 0.0
        probs = nn.classify(rng.normal(size=(5, 4)), params.clf, mode="eval")
        np.testing.assert_allclose(probs, 0.5, atol=1e-12)

    def test_matches_reference_scalar_loop(self):
        rng = np.random.default_rng(4)
        params = nn.init_params(small_arch(), seed=5)
        mu = rng.normal(size=(8, 4))
        for mode in ("train", "eval"):
            ref = reference_classifier(mu, params.clf, mode=mode)
            mine = nn.classify(mu, params.clf.__class__(
                w_hidden=params.clf.w_hidden, b_hidden=params.clf.b_hidden,
                bn_scale=params.clf.bn_scale, bn_shift=params.clf.bn_shift,
                bn_mean=params.clf.bn_mean.copy(), bn_var=params.clf.bn_var.copy(),
                w_out=params.clf.w_out, b_out=params.clf.b_out,
            ), mode=mode)
            np.testing.assert_allclose(mine, ref, atol=1e-12)

    def test_eval_before_training_uses_init_stats(self):
        params = nn.init_params(small_arch(), seed=6)
        rng = np.random.default_rng(2)
        probs = nn.classify(rng.normal(size=(4, 4)), params.clf, mode="eval")
        assert probs.shape == (4, 2)
        np.testing.assert_array_equal(params.clf.bn_mean, np.zeros(6))

    def test_train_mode_updates_running_stats(self):
        params = nn.init_params(small_arch(), seed=7)
        before = params.clf.bn_mean.copy()
        rng = np.random.default_rng(3)
        nn.classify(rng.normal(size=(16, 4)) + 5.0, params.clf, mode="train")
        assert not np.array_equal(before, params.clf.bn_mean)

    def test_eval_deterministic(self):
        graph, _ = graph_and_channel()
        params = nn.init_params(small_arch(), seed=8)
        a = nn.forward(graph, params, mode="eval").probs
        b = nn.forward(graph, params, mode="eval").probs
        np.testing.assert_array_equal(a, b)


class TestLosses:
    def test_supervised_perfect_prediction(self):
        labels = np.array([1, 0, 1])
        probs = np.array([[1e-12, 1 - 1e-12], [1 - 1e-12, 1e-12], [1e-12, 1 - 1e-12]])
        loss, _ = nn.supervised_loss(probs, labels)
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_supervised_uniform_prediction(self):
        L = 7
        probs = np.full((L, 2), 0.5)
        loss, dlogits = nn.supervised_loss(probs, np.ones(L, dtype=int))
        assert loss == pytest.approx(L * np.log(2.0), rel=1e-12)
        assert dlogits.shape == (L, 2)

    def test_supervised_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(6, 2))
        labels = rng.integers(0, 2, size=6)

        def loss_of(lg):
            e = np.exp(lg - lg.max(axis=1, keepdims=True))
            probs = e / e.sum(axis=1, keepdims=True)
            return nn.supervised_loss(probs, labels)[0]

        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        _, dlogits = nn.supervised_loss(probs, labels)
        h = 1e-6
        for i in range(6):
            for j in range(2):
                lp, lm = logits.copy(), logits.copy()
                lp[i, j] += h
                lm[i, j] -= h
                fd = (loss_of(lp) - loss_of(lm)) / (2 * h)
                assert abs(fd - dlogits[i, j]) < 1e-5 * max(1.0, abs(fd))

    def test_unsupervised_penalty_vanishes_when_inactive(self):
        _, ch = make_channel(4, seed=2)
        probs = np.column_stack([np.ones(4) - 1e-15, np.full(4, 1e-15)])
        loss_pen, _ = nn.unsupervised_loss(probs, ch, w_loss=0.5)
        loss_no, _ = nn.unsupervised_loss(probs, ch, w_loss=0.0)
        assert loss_pen == pytest.approx(loss_no, rel=1e-6)

    def test_unsupervised_full_activation_penalized_by_rate(self):
        # strong mutual interference: an exhaustive-search schedule beats
        # full activation on the rate term alone
        from linksched.baselines import brute_force_optimal

        _, ch = make_channel(5, seed=33)
        opt = brute_force_optimal(ch)
        if opt.rho.sum() == 5:
            pytest.skip("instance has no interference conflict")
        eps = 1e-3
        full = np.column_stack([np.full(5, eps), np.full(5, 1 - eps)])
        orac = np.column_stack([1 - (opt.rho * (1 - 2 * eps) + eps), opt.rho * (1 - 2 * eps) + eps])
        loss_full, _ = nn.unsupervised_loss(full, ch, w_loss=0.0)
        loss_orac, _ = nn.unsupervised_loss(orac, ch, w_loss=0.0)
        assert loss_full > loss_orac

    def test_unsupervised_gradient_vs_finite_differences(self):
        _, ch = make_channel(6, seed=8)
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(6, 2))

        def loss_of(lg):
            e = np.exp(lg - lg.max(axis=1, keepdims=True))
            probs = e / e.sum(axis=1, keepdims=True)
            return nn.unsupervised_loss(probs, ch, w_loss=0.01)[0]

        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        _, dlogits = nn.unsupervised_loss(probs, ch, w_loss=0.01)
        h = 1e-6
        worst = 0.0
        for i in range(6):
            for j in range(2):
                lp, lm = logits.copy(), logits.copy()
                lp[i, j] += h
                lm[i, j] -= h
                fd = (loss_of(lp) - loss_of(lm)) / (2 * h)
                denom = max(abs(fd), abs(dlogits[i, j]), 1e-8)
                worst = max(worst, abs(fd - dlogits[i, j]) / denom)
        assert worst < 1e-5


def full_model_gradcheck(seed, mode_loss, topology=FULL, h=1e-6, atol=5e-7):
    """Central-difference check of every parameter; returns worst error.

    Coordinates whose +-h evaluations land on different ReLU pieces are
    skipped (the difference quotient does not estimate a derivative
    there); below ``atol`` the quotient is roundoff, not signal.
    """
    layout = generate_layout(LayoutConfig(num_pairs=5, seed=seed))
    graph = build_graph(layout, SPEC, topology)
    _, ch = make_channel(5, seed=seed)
    params = nn.init_params(small_arch(topology=topology), seed=seed)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=5)

    def loss_and_masks():
        fp = nn.forward(graph, params, mode="train")
        masks = [m > 0 for c in fp.embed_caches for m in c.mu_steps[1:]]
        masks.append(fp.clf_cache.relu_out > 0)
        if mode_loss == "sup":
            return nn.supervised_loss(fp.probs, labels)[0], masks
        return nn.unsupervised_loss(fp.probs, ch, w_loss=0.01)[0], masks

    grads = nn.ModelGrads(params)
    fp = nn.forward(graph, params, mode="train")
    if mode_loss == "sup":
        _, dlogits = nn.supervised_loss(fp.probs, labels)
    else:
        _, dlogits = nn.unsupervised_loss(fp.probs, ch, w_loss=0.01)
    nn.backward(fp, dlogits, grads)

    worst = 0.0
    for name, arr in nn.param_items(params):
        analytic = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + h
            lp, masks_p = loss_and_masks()
            arr[ix] = orig - h
            lm, masks_m = loss_and_masks()
            arr[ix] = orig
            if any(not np.array_equal(a, b) for a, b in zip(masks_p, masks_m)):
                continue
            fd = (lp - lm) / (2 * h)
            err = abs(analytic[ix] - fd)
            if err > atol:
                worst = max(worst, err / max(abs(analytic[ix]), abs(fd)))
    return worst


class TestBackward:
    def test_neighbor_map_gradient_zero_when_single_iteration(self):
        graph, ch = graph_and_channel()
        params = nn.init_params(small_arch(iterations=1), seed=4)
        grads = nn.ModelGrads(params)
        fp = nn.forward(graph, params, mode="train")
        _, dlogits = nn.supervised_loss(fp.probs, np.array([1, 0, 1, 0, 1]))
        nn.backward(fp, dlogits, grads)
        assert np.all(grads["w_neighbor"] == 0.0)
        assert np.any(grads["w_node"] != 0.0)

    def test_gradients_accumulate(self):
        graph, _ = graph_and_channel()
        params = nn.init_params(small_arch(), seed=5)
        labels = np.array([1, 0, 1, 0, 1])
        grads = nn.ModelGrads(params)
        fp = nn.forward(graph, params, mode="train")
        _, dlogits = nn.supervised_loss(fp.probs, labels)
        nn.backward(fp, dlogits, grads)
        once = {k: v.copy() for k, v in grads.arrays.items()}
        nn.backward(fp, dlogits, grads)
        for name, arr in grads.arrays.items():
            np.testing.assert_allclose(arr, 2 * once[name], rtol=1e-12)

    def test_full_model_gradient_check_supervised(self):
        assert full_model_gradcheck(11, "sup") < 1e-4

    def test_full_model_gradient_check_unsupervised(self):
        assert full_model_gradcheck(12, "unsup") < 1e-4

    def test_full_model_gradient_check_knn(self):
        assert full_model_gradcheck(13, "sup", topology=Topology.knn(2)) < 1e-4


class TestAdam:
    def test_zero_gradient_no_change(self):
        params = nn.init_params(small_arch(), seed=6)
        snapshot = {n: a.copy() for n, a in nn.param_items(params)}
        opt = nn.Adam(params)
        opt.step(params, nn.ModelGrads(params))
        for name, arr in nn.param_items(params):
            np.testing.assert_array_equal(arr, snapshot[name])

    def test_first_step_is_signed_lr(self):
        # from zero moments, one step moves each coordinate by about
        # -lr * sign(g) (exact: lr * g / (|g| + eps * sqrt(1 - beta2)^-...))
        params = nn.init_params(small_arch(), seed=7)
        snapshot = {n: a.copy() for n, a in nn.param_items(params)}
        opt = nn.Adam(params, nn.AdamConfig(lr=1e-3))
        grads = nn.ModelGrads(params)
        rng = np.random.default_rng(0)
        for name in grads.arrays:
            grads.arrays[name][...] = rng.normal(size=grads.arrays[name].shape)
        opt.step(params, grads)
        for name, arr in nn.param_items(params):
            delta = arr - snapshot[name]
            g = grads[name]
            expected = -1e-3 * g / (np.abs(g) + 1e-8)
            np.testing.assert_allclose(delta, expected, rtol=1e-6, atol=1e-12)

    def test_constant_gradient_step_magnitude_approaches_lr(self):
        params = nn.init_params(small_arch(), seed=8)
        opt = nn.Adam(params, nn.AdamConfig(lr=1e-3))
        grads = nn.ModelGrads(params)
        for name in grads.arrays:
            grads.arrays[name][...] = 0.37
        prev = params.embed.w_node.copy()
        for _ in range(200):
            prev = params.embed.w_node.copy()
            opt.step(params, grads)
        step = np.abs(params.embed.w_node - prev)
        np.testing.assert_allclose(step, 1e-3, rtol=1e-3)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = nn.init_params(small_arch(), seed=9)
        params.clf.bn_mean[...] = np.random.default_rng(1).normal(size=6)
        path = tmp_path / "model.ckpt"
        nn.save_checkpoint(path, params, extra={"note": "x", "config_hash": "abc"})
        loaded, extra = nn.load_checkpoint(path)
        assert extra == {"note": "x", "config_hash": "abc"}
        assert loaded.arch == params.arch
        for name in nn.PARAM_NAMES:
            np.testing.assert_array_equal(
                nn.param_array(loaded, name), nn.param_array(params, name)
            )
        for name in nn.RUNNING_STAT_NAMES:
            np.testing.assert_array_equal(
                getattr(loaded.clf, name), getattr(params.clf, name)
            )

    def test_save_is_byte_deterministic(self, tmp_path):
        params = nn.init_params(small_arch(), seed=10)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        nn.save_checkpoint(a, params, extra={"k": 1})
        nn.save_checkpoint(b, params, extra={"k": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ConfigurationError):
            nn.load_checkpoint(path)


class TestInitScaling:
    def test_degree_correction_bounds_iterate_growth(self):
        layout = generate_layout(LayoutConfig(num_pairs=50, seed=1))
        spec3 = QuantizerSpec.for_layout_config(3, 2.0, 65.0, 500.0)
        graph = build_graph(layout, spec3, FULL)
        arch = nn.ArchConfig(embed_dim=32, iterations=2, bits=3, hidden=64, topology=FULL)
        params = nn.init_params(arch, seed=0, degree=49)
        mu = nn.embed(graph, params.embed)
        assert np.sqrt((mu ** 2).sum(axis=1)).mean() < 50.0

    def test_seed_pins_weights(self):
        a = nn.init_params(small_arch(), seed=11, degree=9)
        b = nn.init_params(small_arch(), seed=11, degree=9)
        for name in nn.PARAM_NAMES:
            np.testing.assert_array_equal(nn.param_array(a, name), nn.param_array(b, name))
