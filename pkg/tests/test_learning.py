import numpy as np
import pytest
from scipy.optimize import approx_fprime

from hslsim.bounds import beta_bounds, lemma2_cd_bound
from hslsim.data import make_logistic_objective, make_quadratic_objective
from hslsim.errors import ConfigError, DivergenceError
from hslsim.learning import (
    PAPER_PRESETS,
    LogisticShard,
    Objective,
    QuadraticShard,
    TrainConfig,
    evaluate,
    local_sgd,
    quadratic_constants,
    run_experiment,
)
from hslsim.metrics import consensus_distance
from hslsim.rng import stream
from hslsim.topology import TopologyConfig, sample_effective


def toy_quadratic():
    eye = np.eye(2)
    return Objective("quadratic", [QuadraticShard(eye, np.array(b, float)) for b in ([1, 0], [0, 1], [2, 2])])


class TestShards:
    def test_quadratic_gradient_matches_finite_difference(self, rng):
        s = QuadraticShard(rng.standard_normal((6, 3)), rng.standard_normal(6))
        x = rng.standard_normal(3)
        assert np.allclose(s.grad(x), approx_fprime(x, s.loss, 1e-7), atol=1e-5)

    def test_logistic_gradient_matches_finite_difference(self, rng):
        s = LogisticShard(rng.standard_normal((30, 4)), rng.integers(0, 2, 30).astype(float), l2=0.1)
        x = rng.standard_normal(4)
        assert np.allclose(s.grad(x), approx_fprime(x, s.loss, 1e-7), atol=1e-5)

    def test_minibatch_unbiased(self, rng):
        s = QuadraticShard(rng.standard_normal((5, 2)), rng.standard_normal(5))
        x = rng.standard_normal(2)
        # average over every possible single-row batch equals the full gradient
        assert np.allclose(np.mean([s.grad(x, np.array([r])) for r in range(5)], axis=0), s.grad(x))

    def test_logistic_loss_extreme_scores_finite(self):
        s = LogisticShard(np.array([[1000.0], [-1000.0]]), np.array([0.0, 1.0]))
        assert np.isfinite(s.loss(np.array([1.0])))
        assert s.loss(np.array([1.0])) == pytest.approx(1000.0)


class TestObjective:
    def test_global_gradients_match_local_mean(self, rng):
        obj = make_logistic_objective(7, 300, 3, rng, l2=0.05)
        X = rng.standard_normal((4, 4))
        for row, g in zip(X, obj.global_grads(X)):
            assert np.allclose(g, obj.local_grads(row).mean(axis=0), atol=1e-12)
            assert obj.global_loss(row) == pytest.approx(np.mean([s.loss(row) for s in obj.shards]))

    def test_quadratic_global_loss_matches_shards(self, rng):
        obj = make_quadratic_objective(4, 3, 5, rng, shared_matrix=False)
        x = rng.standard_normal(3)
        assert obj.global_loss(x) == pytest.approx(np.mean([s.loss(x) for s in obj.shards]), rel=1e-12)

    def test_mismatched_dims(self):
        with pytest.raises(ConfigError):
            Objective("quadratic", [QuadraticShard(np.eye(2), np.zeros(2)), QuadraticShard(np.eye(3), np.zeros(3))])


class TestLocalSGD:
    def setup_method(self):
        gen = np.random.default_rng(0)
        self.shard = QuadraticShard(gen.standard_normal((8, 3)), gen.standard_normal(8))
        self.x = gen.standard_normal(3)

    def test_full_batch_single_step(self):
        A, b = self.shard.A, self.shard.b
        x1, g = local_sgd(self.x, self.shard, 1, 0.05, 8, stream(0))
        assert np.array_equal(x1, self.x - 0.05 * (A.T @ (A @ self.x - b)))
        assert not g.is_stochastic

    def test_zero_step_size(self):
        x1, _ = local_sgd(self.x, self.shard, 4, 0.0, 2, stream(0))
        assert np.array_equal(x1, self.x)

    def test_three_unrolled_steps(self):
        A, b, eta = self.shard.A, self.shard.b, 0.03
        x = self.x.copy()
        for _ in range(3):
            x = x - eta * (A.T @ (A @ x - b))
        x3, _ = local_sgd(self.x, self.shard, 3, eta, 100, stream(0))
        assert np.allclose(x3, x, rtol=0, atol=1e-12)

    def test_minibatch_uses_stream(self):
        a, ga = local_sgd(self.x, self.shard, 2, 0.1, 2, stream(5, 1))
        b, _ = local_sgd(self.x, self.shard, 2, 0.1, 2, stream(5, 1))
        assert np.array_equal(a, b)
        assert ga.is_stochastic

    def test_does_not_mutate_input(self):
        x = self.x.copy()
        local_sgd(x, self.shard, 2, 0.1, 8, stream(0))
        assert np.array_equal(x, self.x)

    def test_errors(self):
        with pytest.raises(ConfigError):
            local_sgd(self.x, self.shard, 0, 0.1, 1, stream(0))


class TestEvaluate:
    def test_hand_worked_quadratic(self):
        out = evaluate(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]), toy_quadratic())
        assert out["mean_loss"] == pytest.approx(8 / 9, abs=1e-12)
        assert out["mean_grad_norm_sq"] == pytest.approx(4 / 3, abs=1e-12)
        assert out["accuracy"] is None

    def test_minimizer_has_zero_gradient(self, rng):
        obj = make_quadratic_objective(5, 4, 6, rng)
        Q, c, _ = obj._quad_terms()
        x_star = np.linalg.solve(Q, c)
        assert evaluate(np.tile(x_star, (5, 1)), obj)["mean_grad_norm_sq"] < 1e-12

    @pytest.mark.parametrize("label", [0.0, 1.0])
    def test_zero_model_scores_majority_share(self, rng, label):
        shard = LogisticShard(rng.standard_normal((10, 3)), np.full(10, label))
        obj = Objective("logistic", [shard], rng.standard_normal((40, 3)), np.full(40, label))
        assert evaluate(np.zeros((2, 3)), obj)["accuracy"] == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            evaluate(np.zeros((3, 5)), toy_quadratic())


class TestRunExperiment:
    def test_zero_step_full_budget_stays_put(self, rng):
        obj = make_quadratic_objective(6, 3, 5, rng)
        x0 = (0.5, -1.0, 2.0)
        cfg = TrainConfig(TopologyConfig.hsl(6, 3, 6, 2, 3), rounds=1, step_size=0.0, x0=x0)
        res = run_experiment(cfg, obj)
        assert np.allclose(res.models, np.tile(x0, (6, 1)), atol=1e-15)
        assert res.metrics[0].cd_post == pytest.approx(0.0, abs=1e-30)
        assert res.metrics[0].cdr is None

    def test_fedavg_exact_consensus(self, rng):
        obj = make_logistic_objective(10, 500, 3, rng)
        res = run_experiment(TrainConfig(TopologyConfig.fedavg_star(10), rounds=5, batch_size=8, step_size=0.3), obj)
        for m in res.metrics:
            assert m.cd_post == 0.0
            assert m.cdr == 0.0

    def test_homogeneous_convergence(self, rng):
        obj = make_quadratic_objective(20, 5, 10, rng, heterogeneity=0.0)
        L = quadratic_constants(obj, np.zeros(5), 200).L
        cfg = TrainConfig(TopologyConfig.hsl(20, 4, 2, 1, 1), rounds=200, local_steps=3,
                          batch_size=10, step_size=1 / (20 * L))
        res = run_experiment(cfg, obj)
        losses = [m.mean_loss for m in res.metrics]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert res.metrics[-1].mean_grad_norm_sq < 1e-8

    def test_deterministic(self, rng):
        obj = make_logistic_objective(12, 600, 4, rng)
        cfg = TrainConfig(TopologyConfig.hsl(12, 3, 4, 2, 2), rounds=4, batch_size=4, step_size=0.2, seed=9,
                          log_spectral_gap=True)
        a, b = run_experiment(cfg, obj), run_experiment(cfg, obj)
        assert a.metrics == b.metrics
        assert np.array_equal(a.models, b.models)
        assert all(0 <= m.spectral_gap <= 1 for m in a.metrics)

    def test_accuracy_only_on_eval_rounds(self, rng):
        obj = make_logistic_objective(8, 400, 3, rng)
        res = run_experiment(TrainConfig(TopologyConfig.el_local(8, 2), rounds=5, eval_every=2, batch_size=4), obj)
        assert [m.accuracy is not None for m in res.metrics] == [False, True, False, True, True]

    def test_divergence_names_round(self, rng):
        obj = make_quadratic_objective(4, 2, 3, rng, condition=4.0)
        cfg = TrainConfig(TopologyConfig.el_local(4, 1), rounds=400, local_steps=5, batch_size=3, step_size=5.0)
        with pytest.raises(DivergenceError) as info:
            run_experiment(cfg, obj)
        assert 0 < info.value.round < 400
        assert str(info.value.round) in str(info.value)

    def test_average_preserved_in_expectation(self, rng):
        n, d = 30, 4
        X = rng.standard_normal((n, d))
        cfg = TopologyConfig.hsl(n, 5, 3, 2, 2)
        means = np.stack([(sample_effective(cfg, s, 0) @ X).mean(axis=0) for s in range(1000)])
        se = means.std(axis=0, ddof=1) / np.sqrt(1000)
        assert np.all(np.abs(means.mean(axis=0) - X.mean(axis=0)) <= 3 * se)

    def test_lemma2_bound_after_burn_in(self):
        obj = make_quadratic_objective(20, 5, 10, stream(3, 0), heterogeneity=1.0)
        topo = TopologyConfig.hsl(20, 4, 2, 1, 1)
        cfg = TrainConfig(topo, rounds=200, local_steps=1, batch_size=10, step_size="theorem1")
        res = run_experiment(cfg, obj)
        b = beta_bounds(20, 4, 2, 1, 1)
        bound = lemma2_cd_bound(b, res.step_size, 0.0, res.max_heterogeneity_sq)
        assert res.max_heterogeneity_sq > 0
        for m in res.metrics[100:]:
            # the bound is stated for the pairwise spread, which is 2·CD
            assert 2 * m.cd_post <= bound

    def test_theorem1_requires_full_batch_quadratic(self, rng):
        obj = make_quadratic_objective(6, 3, 5, rng)
        with pytest.raises(ConfigError, match="full-batch"):
            run_experiment(TrainConfig(TopologyConfig.hsl(6, 3, 2, 1, 1), rounds=2, batch_size=1,
                                       step_size="theorem1"), obj)
        with pytest.raises(ConfigError, match="HSL"):
            run_experiment(TrainConfig(TopologyConfig.el_local(6, 2), rounds=2, batch_size=5,
                                       step_size="theorem1"), obj)

    def test_node_count_mismatch(self, rng):
        obj = make_quadratic_objective(5, 3, 5, rng)
        with pytest.raises(ConfigError, match="shards"):
            run_experiment(TrainConfig(TopologyConfig.el_local(6, 2), rounds=1), obj)

    @pytest.mark.parametrize("kw", [dict(rounds=0), dict(local_steps=0), dict(batch_size=0),
                                    dict(step_size=-1.0), dict(step_size="fast"), dict(eval_every=0)])
    def test_train_config_validation(self, kw):
        base = dict(topology=TopologyConfig.el_local(6, 2), rounds=3)
        with pytest.raises(ConfigError):
            TrainConfig(**{**base, **kw})


def test_presets_recorded():
    assert PAPER_PRESETS["cifar10"] == {"step_size": 0.01, "batch_size": 128, "local_steps": 3}
    assert PAPER_PRESETS["agnews"] == {"step_size": 0.05, "batch_size": 64, "local_steps": 5}


def test_consensus_distance_used_consistently(rng):
    obj = make_logistic_objective(10, 300, 3, rng)
    res = run_experiment(TrainConfig(TopologyConfig.el_local(10, 3), rounds=2, batch_size=5), obj)
    assert res.metrics[-1].cd_post == pytest.approx(consensus_distance(res.models))
