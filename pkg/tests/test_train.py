"""Loss contract, Adam semantics (including loss scaling), the training
loop, and the metric computations."""

import numpy as np
import pytest

from castnet import metrics
from castnet import model as M
from castnet import tensor as T
from castnet.errors import (
    ConfigError,
    DegenerateEval,
    DivergenceError,
    EmptyEval,
    ShapeMismatch,
)
from castnet.train import (
    AdamState,
    TrainConfig,
    adam_step,
    bce_with_logits,
    train,
)
from conftest import tiny_model_cfg


@pytest.fixture(autouse=True)
def fresh_graph():
    T.reset_graph()
    yield
    T.reset_graph()


class TestBceWithLogits:
    def test_symmetry_point(self):
        assert abs(bce_with_logits(0.0, 1) - np.log(2.0)) < 1e-12

    def test_confident_wrong_fixture(self):
        expected = np.log1p(np.exp(-2.0)) + 2.0
        assert abs(bce_with_logits(2.0, 0) - expected) < 1e-12
        assert abs(bce_with_logits(2.0, 0) - 2.126928) < 1e-6

    def test_finite_at_extreme_logits(self):
        for z in (1e4, -1e4):
            for y in (0, 1):
                assert np.isfinite(bce_with_logits(z, y))
        assert bce_with_logits(1e4, 1) < 1e-12

    def test_matches_naive_sigmoid_form(self):
        # the naive form cancels catastrophically near |z|~17 in float64,
        # so the oracle runs in extended precision
        rng = np.random.default_rng(0)
        for z in rng.uniform(-20, 20, 200):
            for y in (0, 1):
                zl = np.longdouble(z)
                s = 1.0 / (1.0 + np.exp(-zl))
                naive = float(-(y * np.log(s) + (1 - y) * np.log(1 - s)))
                assert abs(bce_with_logits(z, y) - naive) < 1e-9

    def test_convex_in_logit(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = sorted(rng.uniform(-15, 15, 2))
            y = int(rng.integers(0, 2))
            mid = bce_with_logits((a + b) / 2.0, y)
            assert mid <= (bce_with_logits(a, y) + bce_with_logits(b, y)) / 2.0 + 1e-12

    def test_tensor_path_gradient_is_sigmoid_minus_label(self):
        for z0, y in ((0.7, 1), (-1.3, 0), (2.0, 1)):
            T.reset_graph()
            z = T.Tensor([z0], requires_grad=True)
            grads = T.backward(bce_with_logits(z, y))
            expected = 1.0 / (1.0 + np.exp(-z0)) - y
            np.testing.assert_allclose(grads.of(z).data, [expected], atol=1e-12)

    def test_label_validated(self):
        with pytest.raises(ConfigError):
            bce_with_logits(0.0, 2)


def _grad_map_for(params, arrays):
    gm = T.GradientMap()
    for p, arr in zip(params, arrays):
        if p.node_id is None:
            p.node_id = T._new_node_id()
        gm[p.node_id] = T.Tensor(arr)
    return gm


class TestAdamStep:
    def test_zero_gradient_no_movement(self):
        p = T.Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState()
        cfg = TrainConfig(weight_decay=0.0)
        applied = adam_step([p], _grad_map_for([p], [np.zeros(2)]), state, cfg)
        assert applied
        assert state.step_count == 1
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        m, v = state.moments[p.node_id]
        np.testing.assert_array_equal(m, 0.0)
        np.testing.assert_array_equal(v, 0.0)

    def test_first_step_closed_form(self):
        g = np.array([0.3, -1.7, 4.0])
        p = T.Tensor([1.0, 1.0, 1.0], requires_grad=True)
        state = AdamState()
        cfg = TrainConfig(lr=1e-4, weight_decay=0.0)
        adam_step([p], _grad_map_for([p], [g.copy()]), state, cfg)
        expected = 1.0 - cfg.lr * g / (np.abs(g) + cfg.adam_eps)
        np.testing.assert_allclose(p.data, expected, atol=1e-15)
        # every coordinate moved by ~ lr in the direction opposing g
        np.testing.assert_allclose(np.abs(1.0 - p.data), cfg.lr, rtol=1e-6)

    def test_weight_decay_pulls_toward_zero(self):
        p = T.Tensor([10.0], requires_grad=True)
        state = AdamState()
        cfg = TrainConfig(lr=1e-2, weight_decay=0.1)
        adam_step([p], _grad_map_for([p], [np.zeros(1)]), state, cfg)
        assert p.data[0] < 10.0

    def test_non_finite_gradient_skips_update(self):
        p = T.Tensor([1.0], requires_grad=True)
        state = AdamState()
        state.step_count = 5
        cfg = TrainConfig()
        applied = adam_step([p], _grad_map_for([p], [np.array([np.nan])]), state, cfg)
        assert not applied
        assert state.step_count == 5
        assert not state.moments
        np.testing.assert_array_equal(p.data, [1.0])

    def test_unscale_divides_before_moments(self):
        g = np.array([0.5])
        runs = []
        for scale in (1.0, 1024.0):
            p = T.Tensor([1.0], requires_grad=True)
            state = AdamState()
            cfg = TrainConfig(loss_scale=scale, weight_decay=0.0)
            for step in range(3):
                adam_step([p], _grad_map_for([p], [g * scale]), state, cfg)
            runs.append(p.data.copy())
        np.testing.assert_allclose(runs[0], runs[1], atol=1e-12)

    def test_shape_mismatch(self):
        p = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeMismatch):
            adam_step([p], _grad_map_for([p], [np.zeros(3)]), AdamState(), TrainConfig())


class TestAccuracy:
    def test_hand_counted_fixture(self):
        tp, tn, fp, fn, acc = metrics.accuracy(
            [0.9, 0.8, 0.6, 0.4, 0.2, 0.1], [1, 1, 1, 1, 0, 0])
        assert (tp, fn, tn, fp) == (3, 1, 2, 0)
        assert abs(acc - 5.0 / 6.0) < 1e-12

    def test_perfect_split(self):
        _, _, _, _, acc = metrics.accuracy([0.9, 0.1], [1, 0])
        assert acc == 1.0

    def test_tie_classifies_positive(self):
        tp, tn, fp, fn, _ = metrics.accuracy([0.5, 0.5], [1, 0])
        assert (tp, fp) == (1, 1)
        assert (tn, fn) == (0, 0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyEval):
            metrics.accuracy([], [])

    def test_invariant_under_monotone_transform_fixing_half(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(0, 1, 60)
        labels = rng.integers(0, 2, 60)
        labels[0], labels[1] = 0, 1
        base = metrics.accuracy(scores, labels)
        warped = 0.5 + (scores - 0.5) ** 3 * 4.0  # strictly increasing, fixes 0.5
        assert metrics.accuracy(warped, labels) == base


def mann_whitney_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (2 * wins + ties) / (2 * len(pos) * len(neg))


class TestRocAuc:
    def test_perfect_separation(self):
        _, auc = metrics.roc_auc([0.9, 0.8, 0.4, 0.3], [1, 1, 0, 0])
        assert auc == 1.0

    def test_three_quarters_fixture(self):
        _, auc = metrics.roc_auc([0.9, 0.3, 0.8, 0.4], [1, 0, 0, 1])
        assert auc == 0.75

    def test_all_tied_scores(self):
        _, auc = metrics.roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert auc == 0.5

    def test_exact_match_with_pairwise_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(2, 101))
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 1, 0  # both classes present
            # quantized scores force plenty of ties
            scores = np.round(rng.uniform(0, 1, n), 2)
            _, auc = metrics.roc_auc(scores, labels)
            assert auc == mann_whitney_oracle(scores, labels)

    def test_curve_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(23)
        scores = rng.uniform(0, 1, 50)
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        points, _ = metrics.roc_auc(scores, labels)
        assert points[0] == (0.0, 0.0)
        assert points[-1] == (1.0, 1.0)
        fprs = [p[0] for p in points]
        tprs = [p[1] for p in points]
        assert fprs == sorted(fprs)
        assert tprs == sorted(tprs)

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateEval):
            metrics.roc_auc([0.4, 0.6], [1, 1])

    def test_invariant_under_strictly_increasing_transform(self):
        rng = np.random.default_rng(29)
        scores = rng.uniform(0, 1, 80)
        labels = rng.integers(0, 2, 80)
        labels[:2] = [0, 1]
        _, base = metrics.roc_auc(scores, labels)
        _, warped = metrics.roc_auc(2 * scores - scores ** 2, labels)
        assert warped == base


class TestTrainLoop:
    def test_single_epoch_artifacts(self, tiny_dataset, tmp_path):
        cfg = TrainConfig(max_epochs=1, batch_size=4, seed=0)
        res = train(tiny_dataset["model_cfg"], tiny_dataset["manifest"],
                    tiny_dataset["manifest"], cfg, tmp_path / "run")
        assert len(res.history) == 1
        assert res.best_epoch == 1
        assert (tmp_path / "run" / "best.ckpt").exists()
        assert (tmp_path / "run" / "history.tsv").exists()
        header = (tmp_path / "run" / "history.tsv").read_text().splitlines()[0]
        assert header == "epoch\ttrain_loss\tval_loss\tval_auc"

    def test_fixed_seed_bitwise_deterministic(self, tiny_dataset, tmp_path):
        cfg = TrainConfig(max_epochs=2, batch_size=4, seed=3)
        res1 = train(tiny_dataset["model_cfg"], tiny_dataset["manifest"],
                     tiny_dataset["manifest"], cfg, tmp_path / "a")
        res2 = train(tiny_dataset["model_cfg"], tiny_dataset["manifest"],
                     tiny_dataset["manifest"], cfg, tmp_path / "b")
        h1 = (tmp_path / "a" / "history.tsv").read_bytes()
        h2 = (tmp_path / "b" / "history.tsv").read_bytes()
        assert h1 == h2
        c1 = (tmp_path / "a" / "best.ckpt").read_bytes()
        c2 = (tmp_path / "b" / "best.ckpt").read_bytes()
        assert c1 == c2
        assert res1.best_epoch == res2.best_epoch

    def test_checkpoint_saved_only_on_strict_improvement(self, tiny_dataset, tmp_path):
        cfg = TrainConfig(max_epochs=3, batch_size=4, seed=1)
        res = train(tiny_dataset["model_cfg"], tiny_dataset["manifest"],
                    tiny_dataset["manifest"], cfg, tmp_path / "run")
        best = min(r.val_loss for r in res.history)
        assert res.best_val_loss == best
        first_best = next(r.epoch for r in res.history if r.val_loss == best)
        assert res.best_epoch == first_best

    def test_divergence_raises_exit_contract(self, tiny_dataset, tmp_path):
        cfg = TrainConfig(max_epochs=3, batch_size=4, seed=0, lr=1e200)
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            train(tiny_dataset["model_cfg"], tiny_dataset["manifest"],
                  tiny_dataset["manifest"], cfg, tmp_path / "run")

    def test_loss_scale_invariance(self, tiny_dataset, tmp_path):
        results = []
        for scale in (1.0, 1024.0):
            cfg = TrainConfig(max_epochs=3, batch_size=4, seed=5, loss_scale=scale)
            res = train(tiny_dataset["model_cfg"], tiny_dataset["manifest"],
                        tiny_dataset["manifest"], cfg, tmp_path / f"s{int(scale)}")
            results.append(res.params.named_parameters())
        for name in results[0]:
            np.testing.assert_allclose(results[0][name].data, results[1][name].data,
                                       atol=1e-9, err_msg=name)


class TestEvaluate:
    def test_zero_classifier_scores_half(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=9)
        params.classifier_w.data[:] = 0.0
        params.classifier_b.data[:] = 0.0
        ckpt = tmp_path / "zero.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        report = metrics.evaluate(ckpt, tiny_dataset["manifest"])
        assert all(s == 0.5 for s in report.scores)
        assert report.auc == 0.5
        assert report.tp + report.fp == report.n_videos  # ties classify positive

    def test_reports_are_reproducible(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=10)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        r1 = metrics.evaluate(ckpt, tiny_dataset["manifest"])
        r2 = metrics.evaluate(ckpt, tiny_dataset["manifest"])
        assert r1.scores == r2.scores
        assert r1.auc == r2.auc

    def test_uses_test_split_of_mixed_manifest(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=11)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        report = metrics.evaluate(ckpt, tiny_dataset["manifest"])
        assert report.n_videos == 6  # n_test of the tiny dataset

    def test_parallel_eval_matches_serial(self, tiny_dataset, tmp_path, monkeypatch):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=12)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        serial = metrics.evaluate(ckpt, tiny_dataset["manifest"])
        monkeypatch.setenv("CAST_THREADS", "4")
        parallel = metrics.evaluate(ckpt, tiny_dataset["manifest"])
        assert serial.scores == parallel.scores

    def test_mode_override(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=13)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        frame = metrics.evaluate(ckpt, tiny_dataset["manifest"], "frame_mean")
        clip = metrics.evaluate(ckpt, tiny_dataset["manifest"], "clip")
        assert frame.scores != clip.scores  # sigmoid nonlinearity separates modes
