import math

import numpy as np
import pytest

from omniair.autodiff import Tensor, grad_check
from omniair.topology import (
    HybridGraph,
    KIND_GEO,
    KIND_SEM,
    build_hybrid_graph,
    compute_ranks,
    dynamic_attention,
    edge_weights,
    fuse_gate,
    normalize_weights,
    prune_mask,
    semantic_knn,
)


def edge_params(d, d_prime, rng=None, zero=False):
    rng = rng or np.random.default_rng(0)

    def make(shape):
        data = np.zeros(shape) if zero else rng.normal(size=shape) * 0.4
        return Tensor(data, requires_grad=True)

    return {
        "attn.we": make((2 * d, d_prime)),
        "attn.a": make((d_prime,)),
        "edge_gate.w": make((2 * d + 1,)),
        "edge_gate.b": make((1,)),
        "beta_mlp.w1": make((d, 16)),
        "beta_mlp.b1": make((16,)),
        "beta_mlp.w2": make((16, 1)),
        "beta_mlp.b2": make((1,)),
    }


def line_graph(n, k=2):
    """Small deterministic test graph over n collinear equatorial stations."""
    points = np.stack([np.zeros(n), np.arange(n, dtype=np.float64)], axis=1)
    vectors = np.arange(n, dtype=np.float64).reshape(-1, 1) * np.ones((1, 3))
    return build_hybrid_graph(points, vectors, k_geo=k, k_sem=0, kappa_km=100.0), points


class TestGraphBuild:
    def test_small_n_rejected(self):
        points = np.zeros((3, 2))
        with pytest.raises(ValueError):
            build_hybrid_graph(points, np.zeros((3, 2)), k_geo=2, k_sem=1, kappa_km=100.0)

    def test_tie_broken_by_index_with_equal_embeddings(self):
        points = np.stack([np.zeros(3), np.array([0.0, 1.0, 2.0])], axis=1)
        vectors = np.ones((3, 4))
        g = build_hybrid_graph(points, vectors, k_geo=1, k_sem=1, kappa_km=100.0)
        # node 0: geo -> 1; sem ties (all equal) -> lowest non-excluded index 2
        assert list(g.dst[0:2]) == [1, 2]
        assert list(g.kind[0:2]) == [KIND_GEO, KIND_SEM]
        g2 = build_hybrid_graph(points, vectors, k_geo=1, k_sem=1, kappa_km=100.0)
        assert np.array_equal(g.dst, g2.dst)

    def test_identical_coordinates_full_weight(self):
        points = np.array([[10.0, 20.0], [10.0, 20.0], [0.0, 0.0], [50.0, 50.0]])
        vectors = np.arange(4.0).reshape(-1, 1) * np.ones((1, 2))
        g = build_hybrid_graph(points, vectors, k_geo=1, k_sem=1, kappa_km=100.0)
        assert g.dst[0] == 1 and g.km[0] == 0.0 and g.w_static[0] == 1.0

    def test_semantic_edges_beat_all_non_selected(self):
        # brute-force all-pairs distance oracle over 20 random stations
        rng = np.random.default_rng(4)
        points = np.stack([rng.uniform(-60, 60, 20), rng.uniform(-170, 170, 20)], axis=1)
        vectors = rng.normal(size=(20, 8))
        k_geo, k_sem = 4, 3
        g = build_hybrid_graph(points, vectors, k_geo, k_sem, kappa_km=100.0)
        d2 = ((vectors[:, None, :] - vectors[None, :, :]) ** 2).sum(axis=2)
        for i in range(20):
            edges = slice(g.offsets[i], g.offsets[i + 1])
            geo = g.dst[edges][g.kind[edges] == KIND_GEO]
            sem = g.dst[edges][g.kind[edges] == KIND_SEM]
            allowed = set(range(20)) - set(geo) - {i}
            worst_selected = max(d2[i, j] for j in sem)
            best_unselected = min(d2[i, j] for j in allowed - set(sem))
            assert worst_selected <= best_unselected + 1e-12

    def test_no_duplicate_targets(self):
        rng = np.random.default_rng(5)
        points = np.stack([rng.uniform(-60, 60, 15), rng.uniform(-170, 170, 15)], axis=1)
        vectors = rng.normal(size=(15, 4))
        g = build_hybrid_graph(points, vectors, 5, 4, 100.0)
        for i in range(15):
            targets = g.dst[g.offsets[i] : g.offsets[i + 1]]
            assert len(set(targets)) == len(targets)
            assert i not in targets

    def test_semantic_knn_excludes(self):
        vectors = np.array([[0.0], [0.1], [0.2], [5.0]])
        idx, dist = semantic_knn(vectors, 1, [set(), {0}, set(), set()])
        assert idx[0, 0] == 1
        assert idx[1, 0] == 2  # 0 excluded
        assert dist[3, 0] == pytest.approx(4.8)


class TestDynamicAttention:
    def test_zero_score_vector_gives_zero(self):
        params = edge_params(3, 4, zero=True)
        rng = np.random.default_rng(1)
        h = Tensor(rng.normal(size=(2, 5, 3)))
        alpha = dynamic_attention(h, h, params)
        np.testing.assert_array_equal(alpha.data, 0.0)

    def test_saturates_to_unit_range(self):
        params = edge_params(1, 1)
        params["attn.we"] = Tensor(np.full((2, 1), 100.0), requires_grad=True)
        params["attn.a"] = Tensor(np.array([100.0]), requires_grad=True)
        h = Tensor(np.ones((1, 2, 1)))
        alpha = dynamic_attention(h, h, params)
        assert np.all(np.abs(alpha.data) <= 1.0)
        assert alpha.data[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_matches_hand_rolled_scalar(self):
        # D=2, D'=2 case recomputed with explicit scalar arithmetic
        rng = np.random.default_rng(7)
        we = rng.normal(size=(4, 2))
        a = rng.normal(size=2)
        hi = rng.normal(size=2)
        hj = rng.normal(size=2)
        params = edge_params(2, 2)
        params["attn.we"] = Tensor(we, requires_grad=True)
        params["attn.a"] = Tensor(a, requires_grad=True)
        alpha = dynamic_attention(
            Tensor(hi.reshape(1, 1, 2)), Tensor(hj.reshape(1, 1, 2)), params
        )
        cat = np.concatenate([hi, hj])
        pre = np.array([sum(cat[r] * we[r, c] for r in range(4)) for c in range(2)])
        act = np.array([v if v > 0 else 0.1 * v for v in pre])
        expected = math.tanh(a[0] * act[0] + a[1] * act[1])
        assert alpha.data[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        params = edge_params(3, 4)
        with pytest.raises(ValueError):
            dynamic_attention(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 2))), params)


class TestFuseGate:
    def test_zero_params_average(self):
        params = edge_params(3, 4, zero=True)
        rng = np.random.default_rng(2)
        h = Tensor(rng.normal(size=(2, 6, 3)))
        w_static = rng.uniform(0.1, 1.0, size=6)
        alpha = Tensor(rng.uniform(-1, 1, size=(2, 6)))
        g, w_dyn = fuse_gate(h, h, w_static, alpha, params)
        np.testing.assert_allclose(g.data, 0.5, rtol=1e-15)
        np.testing.assert_allclose(w_dyn.data, (w_static + alpha.data) / 2, rtol=1e-12)

    def test_gate_limits(self):
        params = edge_params(2, 2, zero=True)
        h = Tensor(np.zeros((1, 3, 2)))
        w_static = np.array([0.9, 0.5, 0.1])
        alpha = Tensor(np.array([[-0.7, 0.2, 0.3]]))
        params["edge_gate.b"] = Tensor(np.array([60.0]), requires_grad=True)
        _, w_dyn = fuse_gate(h, h, w_static, alpha, params)
        np.testing.assert_allclose(w_dyn.data[0], w_static, atol=1e-12)  # g -> 1
        params["edge_gate.b"] = Tensor(np.array([-60.0]), requires_grad=True)
        _, w_dyn = fuse_gate(h, h, w_static, alpha, params)
        np.testing.assert_allclose(w_dyn.data, alpha.data, atol=1e-12)  # g -> 0


class TestRanksAndMask:
    def _graph(self):
        offsets = np.array([0, 3, 5])
        dst = np.array([1, 2, 3, 0, 3])
        return HybridGraph(2, offsets, dst, np.zeros(5, np.int8), np.ones(5), np.ones(5), cross=True)

    def test_ranks_are_segment_permutations(self):
        g = self._graph()
        rng = np.random.default_rng(0)
        w = rng.normal(size=(3, 5))
        r = compute_ranks(w, g, mode="abs")
        for b in range(3):
            assert sorted(r[b, 0:3]) == [1, 2, 3]
            assert sorted(r[b, 3:5]) == [1, 2]
        assert np.array_equal(r, compute_ranks(w, g, mode="abs"))

    def test_abs_vs_signed_mode(self):
        g = self._graph()
        w = np.array([[-5.0, 4.0, 1.0, 2.0, -3.0]])
        r_abs = compute_ranks(w, g, mode="abs")
        r_signed = compute_ranks(w, g, mode="signed")
        assert list(r_abs[0, :3]) == [1, 2, 3]
        assert list(r_signed[0, :3]) == [3, 1, 2]
        assert list(r_abs[0, 3:]) == [2, 1]
        assert list(r_signed[0, 3:]) == [1, 2]

    def test_rank_tie_by_target_index(self):
        g = self._graph()
        w = np.array([[0.5, 0.5, 0.5, 1.0, 1.0]])
        r = compute_ranks(w, g, mode="abs")
        assert list(r[0]) == [1, 2, 3, 1, 2]  # dst order 1,2,3 then 0,3

    def test_mask_analytic_values(self):
        g = self._graph()
        beta = Tensor(np.array([[2.0, 1.5]]))
        ranks = np.array([[1, 2, 3, 1, 2]])
        m = prune_mask(ranks, beta, g, eta=10.0)
        sig = lambda x: 1.0 / (1.0 + math.exp(-x))
        np.testing.assert_allclose(
            m.data[0],
            [sig(10.0), sig(0.0), sig(-10.0), sig(5.0), sig(-5.0)],
            rtol=1e-12,
        )
        assert m.data[0, 1] == pytest.approx(0.5)
        assert m.data[0, 2] == pytest.approx(4.5398e-5, rel=1e-4)

    def test_mask_strictly_decreasing_in_rank(self):
        g = self._graph()
        beta = Tensor(np.full((1, 2), 1.7))
        ranks = np.array([[1, 2, 3, 1, 2]])
        m = prune_mask(ranks, beta, g, eta=4.0).data[0]
        assert m[0] > m[1] > m[2]

    def test_hard_topk_limit(self):
        # large eta with beta = k + 0.5 reproduces exact top-k retention
        rng = np.random.default_rng(8)
        n, per = 6, 8
        offsets = np.arange(n + 1) * per
        dst = np.tile(np.arange(per) + 10, n)
        g = HybridGraph(n, offsets, dst, np.zeros(n * per, np.int8),
                        np.ones(n * per), np.ones(n * per), cross=True)
        w = Tensor(rng.normal(size=(1, n * per)))
        k = 3
        ranks = compute_ranks(w.data, g, mode="abs")
        beta = Tensor(np.full((1, n), k + 0.5))
        m = prune_mask(ranks, beta, g, eta=50.0).data[0]
        assert np.all((m < 1e-4) | (m > 1 - 1e-4))
        kept = m > 0.5
        for i in range(n):
            seg = slice(offsets[i], offsets[i + 1])
            top = np.argsort(-np.abs(w.data[0, seg]))[:k]
            expected = np.zeros(per, dtype=bool)
            expected[top] = True
            assert np.array_equal(kept[seg], expected)


class TestNormalization:
    def _graph(self):
        offsets = np.array([0, 3, 5])
        dst = np.array([1, 2, 3, 0, 3])
        return HybridGraph(2, offsets, dst, np.zeros(5, np.int8), np.ones(5), np.ones(5), cross=True)

    def test_abs_sum_bounded_by_one(self):
        g = self._graph()
        rng = np.random.default_rng(3)
        w = Tensor(rng.normal(size=(4, 5)))
        m = Tensor(rng.uniform(0, 1, size=(4, 5)))
        wt = normalize_weights(w, m, g, mode="abs").data
        for b in range(4):
            assert np.abs(wt[b, 0:3]).sum() <= 1.0 + 1e-9
            assert np.abs(wt[b, 3:5]).sum() <= 1.0 + 1e-9

    def test_plain_mode_sum(self):
        g = self._graph()
        w = Tensor(np.array([[1.0, 2.0, 3.0, 1.0, 1.0]]))
        m = Tensor(np.ones((1, 5)))
        wt = normalize_weights(w, m, g, mode="plain", eps=0.0).data
        np.testing.assert_allclose(wt[0, 0:3], [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)

    def test_signed_weights_survive_abs_mode(self):
        # candidates that cancel in a plain sum stay finite under abs
        g = self._graph()
        w = Tensor(np.array([[1.0, -1.0, 0.5, 1.0, -1.0]]))
        m = Tensor(np.ones((1, 5)))
        wt = normalize_weights(w, m, g, mode="abs").data
        assert np.isfinite(wt).all()
        assert np.abs(wt[0, 3:5]).sum() == pytest.approx(1.0, rel=1e-6)


class TestPruningGradient:
    """Gradient flow through the soft mask, against finite differences."""

    def _toy(self, norm_mode, rng_seed=0):
        # 5-node toy graph, fixed dynamic weights, beta as the only variable
        rng = np.random.default_rng(rng_seed)
        n, per = 5, 4
        offsets = np.arange(n + 1) * per
        dst = np.tile(np.arange(per) + 100, n)
        g = HybridGraph(n, offsets, dst, np.zeros(n * per, np.int8),
                        np.ones(n * per), np.ones(n * per), cross=True)
        w_dyn = rng.normal(size=(1, n * per))
        ranks = compute_ranks(w_dyn, g, mode="abs")
        beta0 = rng.uniform(1.0, 3.0, size=(1, n))
        return g, w_dyn, ranks, beta0

    def _loss_grad(self, g, w_dyn, ranks, beta_val, coeff, eta, norm_mode):
        beta = Tensor(beta_val, requires_grad=True)
        m = prune_mask(ranks, beta, g, eta)
        wt = normalize_weights(Tensor(w_dyn), m, g, eps=1e-8, mode=norm_mode)
        loss = (wt * Tensor(coeff)).sum()
        loss.backward()
        return float(loss.data), beta.grad.copy()

    def test_reverse_mode_matches_finite_differences(self):
        eta = 4.0
        for norm_mode in ("abs", "plain"):
            g, w_dyn, ranks, beta0 = self._toy(norm_mode)
            coeff = np.random.default_rng(1).normal(size=w_dyn.shape)
            _, analytic = self._loss_grad(g, w_dyn, ranks, beta0, coeff, eta, norm_mode)
            eps = 1e-6
            for i in range(beta0.shape[1]):
                hi = beta0.copy()
                hi[0, i] += eps
                lo = beta0.copy()
                lo[0, i] -= eps
                fhi, _ = self._loss_grad(g, w_dyn, ranks, hi, coeff, eta, norm_mode)
                flo, _ = self._loss_grad(g, w_dyn, ranks, lo, coeff, eta, norm_mode)
                numeric = (fhi - flo) / (2 * eps)
                assert abs(analytic[0, i] - numeric) / max(1.0, abs(numeric)) < 1e-6

    def test_threshold_gradient_formula_for_scale_free_loss(self):
        # The closed-form threshold gradient sum_j dL/dw~ * w~ * (1-m) * eta
        # drops the normalization-denominator path; it is exact when the loss
        # is locally orthogonal to the weight vector within each node. Build
        # such a loss and require all three quantities to agree.
        eta = 4.0
        g, w_dyn, ranks, beta0 = self._toy("plain", rng_seed=3)
        beta = Tensor(beta0, requires_grad=True)
        m = prune_mask(ranks, beta, g, eta)
        wt = normalize_weights(Tensor(w_dyn), m, g, eps=1e-8, mode="plain")
        # per node, coefficients orthogonal to w~ at the evaluation point
        rng = np.random.default_rng(9)
        coeff = rng.normal(size=w_dyn.shape)
        for i in range(g.n_nodes):
            seg = slice(g.offsets[i], g.offsets[i + 1])
            row = wt.data[0, seg]
            c = coeff[0, seg]
            coeff[0, seg] = c - row * (c @ row) / (row @ row)
        loss = (wt * Tensor(coeff)).sum()
        loss.backward()
        analytic = beta.grad.copy()

        formula = np.zeros_like(beta0)
        for i in range(g.n_nodes):
            seg = slice(g.offsets[i], g.offsets[i + 1])
            formula[0, i] = (coeff[0, seg] * wt.data[0, seg] * (1 - m.data[0, seg]) * eta).sum()
        np.testing.assert_allclose(analytic, formula, rtol=1e-6, atol=1e-12)

        eps = 1e-6
        for i in range(g.n_nodes):
            hi = beta0.copy()
            hi[0, i] += eps
            lo = beta0.copy()
            lo[0, i] -= eps
            fhi, _ = self._loss_grad(g, w_dyn, ranks, hi, coeff, eta, "plain")
            flo, _ = self._loss_grad(g, w_dyn, ranks, lo, coeff, eta, "plain")
            numeric = (fhi - flo) / (2 * eps)
            assert abs(analytic[0, i] - numeric) / max(1.0, abs(numeric)) < 1e-6


class TestEdgeWeightsPipeline:
    def test_zero_features_zero_params_proportional_to_static(self, tiny_state):
        d = tiny_state.cfg.d_model
        params = edge_params(d, 8, zero=True)
        n = tiny_state.n_stations
        h = Tensor(np.zeros((1, n, d)))
        out = edge_weights(h, tiny_state.graph, params, k_max=5.0, eta=10.0)
        g = tiny_state.graph
        # gate 0.5 and alpha 0 make w_dyn = w_static / 2
        np.testing.assert_allclose(out["w_dyn"].data[0], g.w_static / 2, rtol=1e-12)
        wt = out["w_tilde"].data[0]
        for i in range(n):
            seg = slice(g.offsets[i], g.offsets[i + 1])
            expected = g.w_static[seg] * out["mask"].data[0, seg]
            expected = expected / np.abs(expected).sum() if expected.any() else expected
            got = wt[seg] / np.abs(wt[seg]).sum()
            np.testing.assert_allclose(got, expected / np.abs(expected).sum(), rtol=1e-9)

    def test_structure_fixed_after_updates(self, tiny_cfg, tiny_dataset):
        # edge lists identical before and after training steps
        from omniair.data import chrono_split
        from omniair.training import train_model

        stations, frame = tiny_dataset
        cfg = type(tiny_cfg)(**{**tiny_cfg.to_dict(), "max_epochs": 2})
        result = train_model(cfg, stations, frame)
        train, _, _ = chrono_split(frame)
        from omniair.model import build_state

        fresh = build_state(cfg, stations, train)
        assert np.array_equal(result.state.graph.dst, fresh.graph.dst)
        assert np.array_equal(result.state.graph.offsets, fresh.graph.offsets)
        assert np.array_equal(result.state.graph.kind, fresh.graph.kind)

    def test_edge_weight_gradcheck(self):
        d = 4
        params = edge_params(d, 3, rng=np.random.default_rng(11))
        offsets = np.array([0, 2, 4, 6])
        dst = np.array([1, 2, 0, 2, 0, 1])
        g = HybridGraph(3, offsets, dst, np.zeros(6, np.int8),
                        np.ones(6), np.full(6, 0.7))
        h_data = np.random.default_rng(12).normal(size=(2, 3, d))

        def f():
            out = edge_weights(Tensor(h_data), g, params, k_max=2.0, eta=5.0)
            return (out["w_tilde"] * out["w_tilde"]).sum()

        err = grad_check(f, params, samples_per_param=None)
        assert err < 1e-6
