import math

import numpy as np
import pytest
from scipy import stats

from saeb import SpecError
from saeb.effects import (
    ar1_grad,
    ar1_logdensity,
    ar1_quadform,
    center,
    iid_grad,
    iid_logdensity,
    icar_grad,
    icar_logdensity,
    icar_quadform,
    rw1_grad,
    rw1_logdensity,
    rw1_quadform,
    rw1_structure_matrix,
    structure_matrix,
)
from saeb.panel import graph_from_neighbor_dict
from saeb.simulate import random_planar_graph, sample_rw1

LOG_2PI = math.log(2 * math.pi)


def pair_graph():
    return graph_from_neighbor_dict({1: [2], 2: [1]})


def path3_graph():
    return graph_from_neighbor_dict({1: [2], 2: [1, 3], 3: [2]})


class TestCenter:
    def test_basic(self):
        np.testing.assert_allclose(center([1.0, 2.0, 3.0]), [-1.0, 0.0, 1.0])

    def test_already_centered(self):
        w = np.array([-0.5, 0.5])
        np.testing.assert_allclose(center(w), w)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=17)
        np.testing.assert_allclose(center(center(w)), center(w), atol=1e-15)
        assert abs(center(w).sum()) < 1e-12


class TestIcar:
    def test_two_nodes(self):
        w = np.array([1.0, -1.0])
        assert icar_quadform(w, pair_graph()) == pytest.approx(4.0)
        expected = 0.5 * (math.log(1.0) - LOG_2PI) - 2.0
        assert icar_logdensity(w, 1.0, pair_graph()) == pytest.approx(expected)

    def test_zero_field(self, portugal_graph):
        w = np.zeros(portugal_graph.num_regions)
        assert icar_quadform(w, portugal_graph) == 0.0

    def test_three_node_path(self):
        w = np.array([1.0, 0.0, -1.0])
        value = icar_logdensity(w, 2.0, path3_graph())
        assert value == pytest.approx(-2.0 + math.log(1.0 / math.pi))

    def test_level_shift_invariance(self, portugal_graph):
        rng = np.random.default_rng(1)
        w = center(rng.normal(size=portugal_graph.num_regions))
        shifted = center(w + 3.7)
        assert icar_logdensity(w, 2.5, portugal_graph) == pytest.approx(
            icar_logdensity(shifted, 2.5, portugal_graph))

    def test_sum_to_zero_required(self, portugal_graph):
        w = np.ones(portugal_graph.num_regions)
        with pytest.raises(SpecError):
            icar_logdensity(w, 1.0, portugal_graph)

    def test_quadform_equals_structure_matrix(self):
        rng = np.random.default_rng(2)
        for j in (3, 5, 8, 10):
            graph = random_planar_graph(j, rng)
            Q = structure_matrix(graph)
            for _ in range(5):
                w = rng.normal(size=j)
                assert icar_quadform(w, graph) == pytest.approx(
                    float(w @ Q @ w), abs=1e-12)


class TestRw1:
    def test_zero_field(self):
        assert rw1_quadform(np.zeros(5)) == 0.0

    def test_linear_field(self):
        w = np.array([-1.0, 0.0, 1.0])
        value = rw1_logdensity(w, 1.0)
        assert value == pytest.approx(-1.0 + math.log(1.0 / (2 * math.pi)))

    def test_prior_draw_quadform_matches_recomputation(self):
        # independent one-liner oracle on a centered draw
        rng = np.random.default_rng(3)
        w = sample_rw1(12, 4.0, rng)
        oracle = sum((w[t] - w[t - 1]) ** 2 for t in range(1, 12))
        assert rw1_quadform(w) == pytest.approx(oracle, rel=1e-12)

    def test_too_short(self):
        with pytest.raises(SpecError):
            rw1_logdensity(np.array([1.0]), 1.0)

    def test_quadform_equals_structure_matrix(self):
        rng = np.random.default_rng(4)
        w = center(rng.normal(size=9))
        R = rw1_structure_matrix(9)
        assert rw1_quadform(w) == pytest.approx(float(w @ R @ w), abs=1e-12)


class TestAr1:
    def test_matches_multivariate_normal(self):
        # dual route: dense AR(1) covariance through scipy
        rho, tau, T = 0.7, 2.5, 6
        idx = np.arange(T)
        cov = rho ** np.abs(idx[:, None] - idx[None, :]) / (tau * (1 - rho**2))
        rng = np.random.default_rng(5)
        for _ in range(5):
            w = rng.normal(size=T)
            oracle = stats.multivariate_normal(mean=np.zeros(T), cov=cov).logpdf(w)
            assert ar1_logdensity(w, tau, rho) == pytest.approx(oracle, rel=1e-10)

    def test_invalid_rho(self):
        with pytest.raises(SpecError):
            ar1_logdensity(np.zeros(4), 1.0, 1.0)


class TestIid:
    def test_single_zero(self):
        assert iid_logdensity(np.array([0.0]), 1.0) == pytest.approx(
            0.5 * math.log(1.0 / (2 * math.pi)))

    def test_pair(self):
        value = iid_logdensity(np.array([1.0, -1.0]), 2.0)
        assert value == pytest.approx(2 * 0.5 * math.log(2.0 / (2 * math.pi)) - 2.0)

    def test_additivity(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=336)
        total = sum(iid_logdensity(x[i:i + 1], 3.0) for i in range(x.size))
        assert iid_logdensity(x, 3.0) == pytest.approx(total, rel=1e-12)

    def test_invalid_precision(self):
        with pytest.raises(SpecError):
            iid_logdensity(np.zeros(3), 0.0)


class TestGradients:
    """Analytic gradients against central finite differences (step 1e-6)."""

    @staticmethod
    def finite_diff(fn, w, step=1e-6):
        grad = np.zeros_like(w)
        for i in range(w.size):
            up, down = w.copy(), w.copy()
            up[i] += step
            down[i] -= step
            grad[i] = (fn(up) - fn(down)) / (2 * step)
        return grad

    def test_icar_grad(self, portugal_graph):
        rng = np.random.default_rng(7)
        tau = 2.3
        # evaluate the unconstrained quadratic part off the constraint
        def logdens(w):
            rank = portugal_graph.num_regions - 1
            return (0.5 * rank * (math.log(tau) - LOG_2PI)
                    - 0.5 * tau * icar_quadform(w, portugal_graph))

        for _ in range(5):
            w = rng.normal(size=portugal_graph.num_regions)
            grad = icar_grad(w, tau, portugal_graph)
            fd = self.finite_diff(logdens, w)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-7)

    def test_rw1_grad(self):
        rng = np.random.default_rng(8)
        tau = 4.0

        def logdens(w):
            return -0.5 * tau * rw1_quadform(w)

        for _ in range(5):
            w = rng.normal(size=12)
            np.testing.assert_allclose(rw1_grad(w, tau),
                                       self.finite_diff(logdens, w),
                                       rtol=1e-6, atol=1e-7)

    def test_ar1_grad(self):
        rng = np.random.default_rng(9)
        tau, rho = 1.7, 0.85

        def logdens(w):
            return -0.5 * tau * ar1_quadform(w, rho)

        for _ in range(5):
            w = rng.normal(size=10)
            np.testing.assert_allclose(ar1_grad(w, tau, rho),
                                       self.finite_diff(logdens, w),
                                       rtol=1e-6, atol=1e-7)

    def test_iid_grad(self):
        rng = np.random.default_rng(10)
        tau = 0.8

        def logdens(x):
            return iid_logdensity(x, tau)

        for _ in range(5):
            x = rng.normal(size=20)
            np.testing.assert_allclose(iid_grad(x, tau),
                                       self.finite_diff(logdens, x),
                                       rtol=1e-6, atol=1e-7)
