import math

import numpy as np
import pytest

import hopprompt.encoder as enc
import hopprompt.prompt as pr
from hopprompt import graphstore as gs
from hopprompt import numcore as nc
from hopprompt.errors import CheckpointError, ParameterError, SplitError

from tests._oracles import assert_grads_close, finite_diff
from tests.conftest import encoder_config


def small_node_setup(seed=0, n=14, h=None):
    g = gs.random_labeled_graph(n, 2 * n, 2, 5, seed=seed)
    cfg = enc.EncoderConfig(layers=2, dims=[5, 6, 6])
    params = enc.init_encoder(cfg, np.random.default_rng(seed))
    return g, cfg, params


class TestInitGamma:
    def test_formula_example(self):
        hop = pr.init_gamma(0.1, 2)
        np.testing.assert_allclose(hop.gamma.data, [[0.1, 0.09, 0.81]], atol=1e-15)

    def test_single_layer(self):
        hop = pr.init_gamma(0.5, 1)
        np.testing.assert_allclose(hop.gamma.data, [[0.5, 0.5]], atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    @pytest.mark.parametrize("layers", [1, 2, 3, 4, 5, 6])
    def test_sums_to_one(self, alpha, layers):
        hop = pr.init_gamma(alpha, layers)
        assert abs(hop.gamma.data.sum() - 1.0) < 1e-12

    def test_range_checks(self):
        with pytest.raises(ParameterError):
            pr.init_gamma(-0.1, 2)
        with pytest.raises(ParameterError):
            pr.init_gamma(1.1, 2)
        with pytest.raises(ParameterError):
            pr.init_gamma(0.5, 0)


class TestTokens:
    def test_node_tokens_match_full_graph_rows(self):
        g, cfg, params = small_node_setup(seed=1)
        adj = gs.normalize_adjacency(g)
        stack = enc.encoder_forward(adj, g.features, cfg, params)
        for v in [0, 3, 9]:
            tok = pr.node_tokens(g, params, cfg, v, adj=adj)
            assert len(tok.tokens) == cfg.layers + 1
            for l, t in enumerate(tok.tokens):
                np.testing.assert_allclose(t.data[0], stack[l].data[v], atol=1e-10)

    def test_isolated_node_tokens_use_own_features_only(self):
        g = gs.Graph(
            num_nodes=3,
            edges=gs.canonical_edges([(0, 1)], 3),
            features=nc.Tensor(np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]])),
            labels=np.array([0, 1, 0]),
            num_classes=2,
        )
        cfg = enc.EncoderConfig(layers=1, dims=[2, 4])
        params = enc.init_encoder(cfg, np.random.default_rng(2))
        tok = pr.node_tokens(g, params, cfg, 2)
        # the isolated node's normalized ego adjacency is [[1.0]]
        h0 = g.features.data[2:3] @ params.w_in.data
        np.testing.assert_allclose(tok.tokens[0].data, h0, atol=1e-12)
        np.testing.assert_allclose(tok.tokens[1].data,
                                   h0 @ params.layers[0].w0.data, atol=1e-12)

    def test_graph_tokens_mean_pool(self):
        g, cfg, params = small_node_setup(seed=3)
        item, _ = gs.ego_network(g, 0, 2)
        adj = gs.normalize_adjacency(item)
        stack = enc.encoder_forward(adj, item.features, cfg, params)
        tok = pr.graph_tokens(item, params, cfg)
        for l, t in enumerate(tok.tokens):
            np.testing.assert_allclose(t.data[0], stack[l].data.mean(axis=0), atol=1e-12)

    def test_graph_tokens_single_node(self):
        g = gs.Graph(num_nodes=1, edges=np.zeros((0, 2), dtype=np.int64),
                     features=nc.Tensor([[0.3, -0.7]]), labels=None,
                     num_classes=2, graph_label=1)
        cfg = enc.EncoderConfig(layers=1, dims=[2, 3])
        params = enc.init_encoder(cfg, np.random.default_rng(4))
        tok = pr.graph_tokens(g, params, cfg)
        adj = gs.normalize_adjacency(g)
        stack = enc.encoder_forward(adj, g.features, cfg, params)
        for l, t in enumerate(tok.tokens):
            np.testing.assert_allclose(t.data, stack[l].data, atol=1e-15)
        assert tok.label == 1

    def test_isomorphic_graphs_same_tokens(self):
        feats = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
        mk = lambda: gs.Graph(
            num_nodes=3, edges=gs.canonical_edges([(0, 1), (1, 2)], 3),
            features=nc.Tensor(feats), labels=None, num_classes=2, graph_label=0)
        cfg = enc.EncoderConfig(layers=1, dims=[2, 3])
        params = enc.init_encoder(cfg, np.random.default_rng(5))
        a = pr.graph_tokens(mk(), params, cfg)
        b = pr.graph_tokens(mk(), params, cfg)
        for ta, tb in zip(a.tokens, b.tokens):
            np.testing.assert_array_equal(ta.data, tb.data)


def make_tokens(rows_per_layer, label=None):
    return pr.TaskTokens(tokens=[nc.Tensor([r]) for r in rows_per_layer], label=label)


class TestClassPrompts:
    def test_single_item_anchor_equals_token(self):
        t0 = make_tokens([[1.0, 2.0], [3.0, 4.0]], label=0)
        t1 = make_tokens([[5.0, 6.0], [7.0, 8.0]], label=1)
        prompts = pr.init_class_prompts([t0, t1], [0, 1], encoder_layers=1,
                                        num_classes=2)
        np.testing.assert_array_equal(prompts.anchors[0].data, [[1, 2], [5, 6]])
        np.testing.assert_array_equal(prompts.anchors[1].data, [[3, 4], [7, 8]])
        np.testing.assert_array_equal(prompts.theta[0].data, np.zeros((2, 2)))

    def test_opposite_tokens_cancel(self):
        t0 = make_tokens([[1.0, -1.0]], label=0)
        t1 = make_tokens([[-1.0, 1.0]], label=0)
        t2 = make_tokens([[1.0, 1.0]], label=1)
        prompts = pr.init_class_prompts([t0, t1, t2], [0, 0, 1],
                                        encoder_layers=0, num_classes=2)
        np.testing.assert_array_equal(prompts.anchors[0].data[0], [0.0, 0.0])

    def test_empty_class_named(self):
        t0 = make_tokens([[1.0, 0.0]], label=0)
        with pytest.raises(SplitError, match="class 1"):
            pr.init_class_prompts([t0], [0], encoder_layers=0, num_classes=2)

    def test_anchors_track_embedding_changes(self):
        # after the encoder moves, recomputed anchors move with it
        g, cfg, params = small_node_setup(seed=6)
        adj = gs.normalize_adjacency(g)
        ids = np.array([0, 1, 2, 3])
        y = np.array([0, 0, 1, 1])
        stack = enc.encoder_forward(adj, g.features, cfg, params)
        mats = [nc.gather_rows(h, ids) for h in stack.layers]
        before = pr.anchors_from_matrices(mats, y, 2)[1].data.copy()
        params.layers[0].w0.data = params.layers[0].w0.data * 1.5
        stack = enc.encoder_forward(adj, g.features, cfg, params)
        mats = [nc.gather_rows(h, ids) for h in stack.layers]
        after = pr.anchors_from_matrices(mats, y, 2)[1].data
        assert np.abs(before - after).max() > 1e-6


class TestHopScores:
    def test_matching_prompt_scores_one(self):
        tok = make_tokens([[1.0, 0.0, 0.0]])
        prompts = pr.ClassPromptSet(
            anchors=[nc.Tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])],
            theta=[nc.Tensor(np.zeros((2, 3)))],
        )
        scores = pr.hop_scores(tok, prompts)
        np.testing.assert_allclose(scores[0].data, [[1.0, 0.0]], atol=1e-15)

    def test_scores_bounded(self):
        rng = np.random.default_rng(7)
        tok = make_tokens([rng.standard_normal(4) for _ in range(3)])
        prompts = pr.ClassPromptSet(
            anchors=[nc.Tensor(rng.standard_normal((5, 4))) for _ in range(3)],
            theta=[nc.Tensor(np.zeros((5, 4))) for _ in range(3)],
        )
        for s in pr.hop_scores(tok, prompts):
            assert (np.abs(s.data) <= 1.0 + 1e-12).all()

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(8)
        token_rows = [rng.standard_normal(4) for _ in range(2)]
        anchors = [rng.standard_normal((3, 4)) for _ in range(2)]
        offs = [rng.standard_normal((3, 4)) for _ in range(2)]
        tok = make_tokens(token_rows)
        prompts = pr.ClassPromptSet(anchors=[nc.Tensor(a) for a in anchors],
                                    theta=[nc.Tensor(o) for o in offs])
        scores = pr.hop_scores(tok, prompts)
        for l in range(2):
            for cls in range(3):
                u = token_rows[l]
                v = anchors[l][cls] + offs[l][cls]
                want = (u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
                assert abs(scores[l].data[0, cls] - want) < 1e-12


class TestAggregateAndPredict:
    def test_one_hot_gamma(self):
        scores = [np.array([0.9, 0.1]), np.array([0.2, 0.8]), np.array([0.3, 0.4])]
        combined, pred = pr.aggregate_and_predict(scores, [0.0, 1.0, 0.0])
        np.testing.assert_allclose(combined, scores[1])
        assert pred == 1

    def test_identical_layers_scale_invariant_argmax(self):
        row = np.array([0.2, 0.7, 0.1])
        for weights in ([1, 1, 1], [0.1, 0.09, 0.81]):
            combined, pred = pr.aggregate_and_predict([row, row, row], weights)
            np.testing.assert_allclose(combined, row * sum(weights))
            assert pred == 1

    def test_hand_example(self):
        s = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.5, 0.5])]
        combined, pred = pr.aggregate_and_predict(s, [0.1, 0.09, 0.81])
        np.testing.assert_allclose(combined, [0.1 + 0.405, 0.09 + 0.405])
        assert pred == 0

    def test_tie_breaks_to_lowest_index(self):
        combined, pred = pr.aggregate_and_predict([np.array([0.5, 0.5])], [1.0])
        assert pred == 0


class TestDownstreamLoss:
    def test_equal_scores_give_ln2_per_item_per_layer(self):
        prompts = pr.ClassPromptSet(
            anchors=[nc.Tensor([[1.0, 1.0], [1.0, 1.0]])],
            theta=[nc.Tensor(np.zeros((2, 2)))],
        )
        one = [make_tokens([[1.0, 0.0]], label=0)]
        assert pr.downstream_loss(one, prompts, tau=1.0).item() == pytest.approx(
            math.log(2), abs=1e-12)
        # the loss sums per-item terms
        two = one + [make_tokens([[0.0, 1.0]], label=1)]
        assert pr.downstream_loss(two, prompts, tau=1.0).item() == pytest.approx(
            2 * math.log(2), abs=1e-12)

    def test_layer_sum_scaling(self):
        rng = np.random.default_rng(9)
        rows = rng.standard_normal(3)
        anchor = rng.standard_normal((2, 3))
        for layers in (1, 3):
            toks = [pr.TaskTokens(tokens=[nc.Tensor([rows])] * layers, label=0)]
            prompts = pr.ClassPromptSet(
                anchors=[nc.Tensor(anchor)] * layers,
                theta=[nc.Tensor(np.zeros((2, 3)))] * layers,
            )
            loss = pr.downstream_loss(toks, prompts, tau=0.5)
            if layers == 1:
                single = loss.item()
        assert loss.item() == pytest.approx(3 * single, abs=1e-12)

    def test_gradient_wrt_theta(self):
        rng = np.random.default_rng(10)
        toks = [make_tokens([rng.standard_normal(4) for _ in range(2)], label=i % 2)
                for i in range(4)]
        anchors = [nc.Tensor(rng.standard_normal((2, 4))) for _ in range(2)]
        theta = [nc.Tensor(rng.standard_normal((2, 4)) * 0.1, requires_grad=True)
                 for _ in range(2)]

        def forward():
            prompts = pr.ClassPromptSet(anchors=anchors, theta=theta)
            return pr.downstream_loss(toks, prompts, tau=0.5)

        grads = nc.backward(forward())
        for l in range(2):
            fd = finite_diff(lambda: forward().item(), [theta[l]])[0]
            assert_grads_close(grads.get(theta[l]), fd, label=f"dTheta{l}")


class TestRunPromptTune:
    def test_zero_lr_equals_prototype_classifier(self, synth_h90, ckpt_h90):
        split = gs.kshot_split(synth_h90, 5, seed=0)
        tcfg = pr.PromptTuneConfig(lr=0.0, epochs=8, seed=0, alpha=0.5,
                                   glora_mode="full")
        _params, result = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        oracle = _prototype_oracle(ckpt_h90, synth_h90, split, alpha=0.5)
        assert result.test_accuracy == pytest.approx(oracle)

    def test_zero_init_matches_prototype_before_training(self, synth_h90, ckpt_h90):
        split = gs.kshot_split(synth_h90, 5, seed=1)
        tcfg = pr.PromptTuneConfig(epochs=0, seed=0, alpha=0.3, glora_mode="full")
        _params, result = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        oracle = _prototype_oracle(ckpt_h90, synth_h90, split, alpha=0.3)
        assert result.test_accuracy == pytest.approx(oracle)

    def test_deterministic(self, synth_h90, ckpt_h90):
        split = gs.kshot_split(synth_h90, 5, seed=2)
        tcfg = pr.PromptTuneConfig(epochs=15, seed=7, lr=5e-4)
        _p1, r1 = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        _p2, r2 = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        assert r1.test_accuracy == r2.test_accuracy
        assert r1.train_losses == r2.train_losses

    def test_beats_random_on_homophilous_graph(self, synth_h90, ckpt_h90):
        split = gs.kshot_split(synth_h90, 5, seed=3)
        tcfg = pr.PromptTuneConfig(epochs=60, seed=0, lr=5e-4, alpha=0.5)
        _params, result = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        random_baseline = 1.0 / synth_h90.num_classes
        assert result.test_accuracy >= random_baseline + 0.30

    def test_loss_decreases_early(self, synth_h10, ckpt_h10):
        split = gs.kshot_split(synth_h10, 5, seed=4)
        tcfg = pr.PromptTuneConfig(epochs=10, seed=0, lr=1e-3, alpha=0.9)
        _params, result = pr.run_prompt_tune(ckpt_h10, synth_h10, split, tcfg)
        assert result.train_losses[-1] < result.train_losses[0]

    def test_frozen_base_never_moves(self, synth_h90, ckpt_h90):
        split = gs.kshot_split(synth_h90, 5, seed=5)
        tcfg = pr.PromptTuneConfig(epochs=10, seed=0, lr=1e-3)
        params, _result = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        reloaded, _cfg = enc.checkpoint_load(ckpt_h90)
        assert params.w_in.data.tobytes() == reloaded.w_in.data.tobytes()
        for a, b in zip(params.layers, reloaded.layers):
            assert a.w0.data.tobytes() == b.w0.data.tobytes()

    def test_incompatible_checkpoint(self, ckpt_h90):
        g = gs.random_labeled_graph(10, 20, 2, 9, seed=11)
        split = gs.kshot_split(g, 1, seed=0)
        with pytest.raises(CheckpointError):
            pr.run_prompt_tune(ckpt_h90, g, split, pr.PromptTuneConfig(epochs=1))

    def test_prediction_scale_invariance(self):
        rng = np.random.default_rng(12)
        token_rows = [rng.standard_normal(5) for _ in range(3)]
        prompts = pr.ClassPromptSet(
            anchors=[nc.Tensor(rng.standard_normal((4, 5))) for _ in range(3)],
            theta=[nc.Tensor(np.zeros((4, 5))) for _ in range(3)],
        )
        gamma = pr.init_gamma(0.3, 2)
        base_scores = pr.hop_scores(make_tokens(token_rows), prompts)
        _, base_pred = pr.aggregate_and_predict(base_scores, gamma)
        for c in (0.5, 2.0, 10.0):
            scaled = make_tokens([c * r for r in token_rows])
            scores = pr.hop_scores(scaled, prompts)
            _, pred = pr.aggregate_and_predict(scores, gamma)
            assert pred == base_pred

    def test_graph_task_tuning(self, tmp_path):
        base = gs.random_labeled_graph(60, 240, 3, 8, seed=13, class_sep=1.5)
        items = gs.build_graph_task(base, hops=1)
        cfg = enc.EncoderConfig(layers=2, dims=[8, 16, 16])
        import hopprompt.pretrain as pt
        pt.run_pretrain(items, cfg, pt.PretrainConfig(epochs=20, lr=5e-3, seed=0),
                        out_path=tmp_path / "g.dagp")
        split = gs.kshot_split(items, 3, seed=0)
        tcfg = pr.PromptTuneConfig(epochs=25, seed=0, lr=1e-3, glora_mode="full")
        _params, result = pr.run_prompt_tune(tmp_path / "g.dagp", items, split, tcfg)
        assert result.test_accuracy >= 1.0 / 3

    def test_edge_subset_mode_runs(self, synth_h90, ckpt_h90):
        split = gs.kshot_split(synth_h90, 5, seed=6)
        tcfg = pr.PromptTuneConfig(epochs=10, seed=0, lr=1e-3,
                                   glora_mode="edge_subset")
        _params, result = pr.run_prompt_tune(ckpt_h90, synth_h90, split, tcfg)
        assert 0.0 <= result.test_accuracy <= 1.0
        assert result.trainable_encoder > 0


@pytest.mark.parametrize("name,shots", [("web-tiny", 2), ("syn-h10", 5),
                                        ("syn-h90", 5), ("ego-tiny", 2)])
def test_loss_strictly_decreases_on_bundled_fixtures(name, shots, tmp_path):
    # trainability: at least one grid learning rate drives the loss strictly
    # down over the first 10 epochs
    data = gs.load_dataset(f"datasets/{name}")
    feature_dim = (data.graphs[0] if isinstance(data, gs.GraphSet)
                   else data).num_features
    cfg = enc.EncoderConfig(layers=2, dims=[feature_dim, 32, 32])
    import hopprompt.pretrain as pt
    pt.run_pretrain(data, cfg, pt.PretrainConfig(epochs=30, lr=5e-3, seed=0,
                                                 batch_size=512),
                    out_path=tmp_path / "m.dagp")
    split = gs.kshot_split(data, shots, seed=0)
    for lr in (1e-3, 5e-4, 1e-4):
        tcfg = pr.PromptTuneConfig(lr=lr, epochs=10, seed=0, alpha=0.5,
                                   patience=None)
        _p, res = pr.run_prompt_tune(tmp_path / "m.dagp", data, split, tcfg)
        if all(b < a for a, b in zip(res.train_losses, res.train_losses[1:])):
            return
    pytest.fail(f"no grid lr drove the loss strictly down on {name}")


def _prototype_oracle(ckpt, g, split, alpha):
    """Frozen-encoder prototype classifier computed with plain numpy."""
    params, cfg = enc.checkpoint_load(ckpt)
    adj = gs.normalize_adjacency(g)
    stack = enc.encoder_forward(adj, g.features, cfg, params)
    gamma = pr.init_gamma(alpha, cfg.layers).gamma.data[0]
    y_train = g.labels[split.train_ids]
    correct = 0
    for idx, node in enumerate(split.test_ids):
        combined = np.zeros(g.num_classes)
        for l, h in enumerate(stack.layers):
            hd = h.data
            anchors = np.stack([hd[split.train_ids][y_train == c].mean(axis=0)
                                for c in range(g.num_classes)])
            u = hd[node]
            sims = anchors @ u / (np.linalg.norm(anchors, axis=1) * np.linalg.norm(u))
            combined += gamma[l] * sims
        correct += int(np.argmax(combined) == g.labels[node])
    return correct / len(split.test_ids)
