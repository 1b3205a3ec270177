import numpy as np
import pytest

from hslsim.data import make_logistic_objective, make_quadratic_objective, partition_dirichlet
from hslsim.errors import ConfigError


class TestDirichletPartition:
    def test_single_node(self, rng):
        labels = rng.integers(0, 3, size=50)
        (part,) = partition_dirichlet(labels, 1, 0.5, rng)
        assert np.array_equal(part, np.arange(50))

    def test_every_index_exactly_once(self, rng):
        labels = rng.integers(0, 5, size=1000)
        parts = partition_dirichlet(labels, 37, 0.3, rng)
        assert all(len(p) > 0 for p in parts)
        assert np.array_equal(np.sort(np.concatenate(parts)), np.arange(1000))

    def test_large_alpha_is_near_iid(self, rng):
        labels = rng.integers(0, 2, size=10_000)
        parts = partition_dirichlet(labels, 10, 1e6, rng)
        global_share = labels.mean()
        for p in parts:
            assert abs(labels[p].mean() - global_share) < 0.02

    def test_alpha_one_is_heterogeneous(self):
        shares = []
        for seed in range(50):
            gen = np.random.default_rng(seed)
            labels = np.repeat(np.arange(10), 600)
            for p in partition_dirichlet(labels, 100, 1.0, gen):
                shares.append(np.bincount(labels[p], minlength=10).max() / len(p))
        assert np.mean(shares) > 0.15

    def test_tiny_alpha_still_fills_every_node(self, rng):
        labels = rng.integers(0, 2, size=120)
        parts = partition_dirichlet(labels, 100, 1e-3, rng)
        assert min(len(p) for p in parts) >= 1

    @pytest.mark.parametrize("labels, n_s, alpha", [([], 3, 1.0), ([0, 1], 3, 1.0), ([0, 1], 2, 0.0)])
    def test_errors(self, rng, labels, n_s, alpha):
        with pytest.raises(ConfigError):
            partition_dirichlet(np.array(labels), n_s, alpha, rng)


class TestSyntheticObjectives:
    def test_quadratic_shared_matrix_spectrum(self, rng):
        obj = make_quadratic_objective(5, 4, 10, rng, condition=3.0)
        eig = np.linalg.eigvalsh(obj.shards[0].A.T @ obj.shards[0].A)
        assert np.allclose(eig, np.linspace(1, 3, 4))
        assert all(s.A is obj.shards[0].A for s in obj.shards)

    def test_quadratic_heterogeneity_constant_in_x(self, rng):
        obj = make_quadratic_objective(6, 3, 8, rng)
        h = [obj.heterogeneity_sq(rng.standard_normal(3)) for _ in range(5)]
        assert np.allclose(h, h[0], rtol=1e-10)
        assert h[0] > 0

    def test_homogeneous_quadratic(self, rng):
        obj = make_quadratic_objective(6, 3, 8, rng, heterogeneity=0.0)
        assert obj.heterogeneity_sq(np.ones(3)) == pytest.approx(0.0, abs=1e-20)

    def test_rows_below_dim_rejected(self, rng):
        with pytest.raises(ConfigError):
            make_quadratic_objective(3, 5, 4, rng)

    def test_logistic_shapes(self, rng):
        obj = make_logistic_objective(20, 2000, 5, rng, n_test=300)
        assert obj.dim == 6 and obj.n_nodes == 20
        assert sum(s.size for s in obj.shards) == 2000
        assert obj.test_X.shape == (300, 6)
        assert np.all(obj.test_X[:, -1] == 1.0)
