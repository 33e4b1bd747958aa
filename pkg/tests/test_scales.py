import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as quad

from gffcoupling.errors import DomainError
from gffcoupling.lattice import TorusGrid
from gffcoupling.scales import (
    ScaleGrid,
    ScaleParams,
    c_hat,
    c_increment,
    cdot_hat,
    diagonal,
    gff_path,
    q_hat,
    q_integral,
    sample_gaussian,
    scale_length,
)


def params(n=16, m=1.0):
    return ScaleParams(m, TorusGrid(n))


def dense_operator(n, m):
    """``eps^-2 * (-Laplacian) + m^2`` as an ``n^2 x n^2`` matrix on sites."""
    N = n * n
    A = np.zeros((N, N))
    for i in range(n):
        for j in range(n):
            a = i * n + j
            A[a, a] = 4 * n * n + m * m
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                A[a, ((i + di) % n) * n + (j + dj) % n] -= n * n
    return A


class TestMultipliers:
    def test_trivial_values(self):
        p = params()
        assert c_hat(p, 1.0, (0.0, 0.0)) == 0.5
        assert c_hat(p, math.inf, (0.0, 0.0)) == 1.0
        assert q_hat(p, 1.0, (0.0, 0.0)) == 0.5
        assert cdot_hat(p, 1.0, (0.0, 0.0)) == 0.25

    def test_small_t_limit(self):
        assert np.allclose(q_hat(params(), 1e-14), 1.0, atol=1e-8)

    @pytest.mark.parametrize("t", [0.0, -1.0, math.nan])
    def test_bad_scale(self, t):
        with pytest.raises(DomainError):
            c_hat(params(), t)
        with pytest.raises(DomainError):
            q_hat(params(), t)

    def test_q_rejects_infinity(self):
        with pytest.raises(DomainError):
            q_hat(params(), math.inf)

    def test_mass_must_be_positive(self):
        for m in (0.0, -1.0, math.inf):
            with pytest.raises(DomainError):
                ScaleParams(m, TorusGrid(4))

    def test_q_squared_is_cdot(self):
        p = params(8, 0.7)
        for t in (1e-4, 0.3, 10.0):
            np.testing.assert_array_equal(q_hat(p, t) ** 2, cdot_hat(p, t))

    @settings(max_examples=20, deadline=None)
    @given(
        a=st.integers(-4, 3),
        b=st.integers(-4, 3),
        m=st.floats(0.1, 5.0),
        ta=st.floats(1e-3, 5.0),
        width=st.floats(1e-3, 50.0),
    )
    def test_cdot_integrates_to_increment(self, a, b, m, ta, width):
        p = params(8, m)
        k = (2 * np.pi * a, 2 * np.pi * b)
        tb = ta + width
        value, _ = quad.quad(lambda t: cdot_hat(p, t, k), ta, tb, epsabs=1e-12, epsrel=1e-12, limit=200)
        assert abs(value - (c_hat(p, tb, k) - c_hat(p, ta, k))) < 1e-8

    def test_cdot_integrates_to_full_covariance(self):
        p = params(8, 1.3)
        k = (2 * np.pi, -4 * np.pi)
        value, _ = quad.quad(lambda t: cdot_hat(p, t, k), 0, math.inf, epsabs=1e-13)
        assert abs(value - c_hat(p, math.inf, k)) < 1e-8

    def test_q_integral_by_quadrature(self):
        p = params(4, 0.9)
        exact = q_integral(p, 0.05, 2.0)
        k1, k2 = p.grid.frequencies()
        for idx in [(0, 0), (1, 2), (3, 3)]:
            k = (k1[idx], k2[idx])
            value, _ = quad.quad(lambda t: q_hat(p, t, k), 0.05, 2.0, epsabs=1e-13)
            assert abs(value - exact[idx]) < 1e-10

    def test_monotone_in_t(self):
        p = params(8)
        ts = [1e-3, 0.1, 1.0, 10.0, math.inf]
        cs = [c_hat(p, t) for t in ts]
        assert all(np.all(b > a) for a, b in zip(cs, cs[1:]))

    def test_increment_from_zero(self):
        p = params(8)
        np.testing.assert_array_equal(c_increment(p, 0, 1.0), c_hat(p, 1.0))


class TestDiagonal:
    def test_matches_real_space_inverse(self):
        n, m = 8, 0.8
        G = np.linalg.inv(dense_operator(n, m))
        # c(x, x) = eps^-2 * G(x, x) with the volume-normalised transform
        assert abs(diagonal(params(n, m)) - G[0, 0] * n * n) < 1e-10

    def test_log_slope(self):
        logs, diag = [], []
        for n in (16, 32, 64, 128, 256):
            logs.append(math.log(n))
            diag.append(diagonal(params(n)))
        slope = np.polyfit(logs, diag, 1)[0]
        # spectral-sum value, cross-checked against the dense inverse above
        assert slope == pytest.approx(0.15926529447846588, rel=1e-12)
        assert abs(slope * 2 * math.pi - 1) < 0.1


class TestScaleLength:
    def test_values(self):
        assert scale_length(params(4, 2.0), 0.25) == 0.5
        assert scale_length(params(4, 1.0), 100) == 1.0
        assert scale_length(params(4, 1.0), 0) == 0.0

    @settings(max_examples=30)
    @given(s=st.floats(0, 100), d=st.floats(0, 100), m=st.floats(0.1, 10))
    def test_nondecreasing(self, s, d, m):
        p = params(4, m)
        assert scale_length(p, s + d) >= scale_length(p, s)


class TestSampler:
    def test_zero_multiplier(self):
        p = params(8)
        f = sample_gaussian(p, np.zeros((8, 8)), np.random.default_rng(0))
        assert not np.any(f.values)

    def test_negative_multiplier_rejected(self):
        with pytest.raises(DomainError):
            sample_gaussian(params(4), -np.ones((4, 4)), 0)

    def test_callable_multiplier(self):
        p = params(8)
        a = sample_gaussian(p, lambda k1, k2: 1 / (1 + k1**2 + k2**2), np.random.default_rng(1), 3)
        b = sample_gaussian(p, 1 / (1 + p.grid.abs_k2()), np.random.default_rng(1), 3)
        np.testing.assert_array_equal(a, b)

    def test_two_point_function(self):
        n, R = 16, 10000
        p = params(n)
        cov = c_hat(p, math.inf)
        phi = sample_gaussian(p, cov, np.random.default_rng(11), R)
        kernel = np.fft.ifft2(cov).real * n * n  # sum_k c(k) e^{ik.x}
        for d in [(0, 0), (1, 0), (3, 5), (8, 8)]:
            prod = phi[:, 0, 0] * phi[:, d[0], d[1]]
            se = prod.std(ddof=1) / math.sqrt(R)
            assert abs(prod.mean() - kernel[d]) <= 3 * se

    def test_spectral_variance(self):
        n, R = 8, 4000
        p = params(n, 0.5)
        cov = c_hat(p, 2.0)
        phi = sample_gaussian(p, cov, np.random.default_rng(12), R)
        power = np.abs(np.fft.fft2(phi) / n**2) ** 2
        se = power.std(axis=0, ddof=1) / math.sqrt(R)
        z = (power.mean(axis=0) - cov) / se
        assert np.max(np.abs(z)) < 4.5  # 64 modes


class TestScaleGrid:
    def test_dyadic(self):
        sg = ScaleGrid.dyadic(128.0, 2.0**-4, 1)
        assert sg.times == tuple(2.0**j for j in range(-4, 8))
        assert len(ScaleGrid.dyadic(128.0, 2.0**-4, 2)) == 2 * 11 + 1

    def test_invalid(self):
        for times in [(), (0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (1.0, math.inf)]:
            with pytest.raises(DomainError):
                ScaleGrid(times)

    def test_index(self):
        sg = ScaleGrid.dyadic(128.0, 2.0**-20, 2)
        assert sg.index(0.0) == 0
        assert sg.index(128.0) == len(sg)
        assert sg.nodes[sg.index(2.0**-19)] == 2.0**-19
        with pytest.raises(DomainError):
            sg.index(0.3)

    def test_refine_and_points(self):
        sg = ScaleGrid.dyadic(8.0, 1.0, 1)
        fine = sg.refine()
        assert set(sg.times) <= set(fine.times) and len(fine) == 2 * len(sg)
        np.testing.assert_allclose(np.diff(np.log(fine.times)), math.log(2) / 2)
        assert 0.1 in sg.with_points(0.1).times
        with pytest.raises(DomainError):
            sg.with_points(9.0)


class TestGffPath:
    def test_deterministic(self):
        p, sg = params(8), ScaleGrid.dyadic(128.0, 2.0**-6, 1)
        a = gff_path(p, sg, np.random.default_rng(3), 2)
        b = gff_path(p, sg, np.random.default_rng(3), 2)
        np.testing.assert_array_equal(a.fields, b.fields)

    def test_small_scale_covariance(self):
        n, R = 16, 10000
        p, sg = params(n), ScaleGrid.dyadic(128.0, 2.0**-6, 1)
        path = gff_path(p, sg, np.random.default_rng(21), R)
        for t in (2.0**-4, 1.0):
            Y = path.small_scales(t)
            kernel = np.fft.ifft2(c_hat(p, t)).real * n * n
            for d in [(0, 0), (1, 0), (2, 3)]:
                prod = Y[:, 0, 0] * Y[:, d[0], d[1]]
                se = prod.std(ddof=1) / math.sqrt(R)
                assert abs(prod.mean() - kernel[d]) <= 3 * se
            # Phi_t has the complementary covariance
            phi_t = path.at(t)
            prod = phi_t[:, 0, 0] ** 2
            exact = diagonal(p) - diagonal(p, t)
            assert abs(prod.mean() - exact) <= 3 * prod.std(ddof=1) / math.sqrt(R)

    def test_increments_independent(self):
        R = 10000
        p, sg = params(8), ScaleGrid.dyadic(128.0, 2.0**-4, 1)
        inc = gff_path(p, sg, np.random.default_rng(22), R).increments()
        a, b = inc[:, 2, 0, 0], inc[:, 5, 0, 0]
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 3 / math.sqrt(R)

    def test_terminal_variance_bound(self):
        for n in (8, 32):
            p = params(n)
            T = 128.0
            total = float(np.sum(c_hat(p, math.inf) - c_hat(p, T)))
            assert total <= n * n / (p.m**4 * T)
            assert total <= float(np.sum(1 / (T * p.symbol() ** 2)))

    def test_semigroup_consistency(self):
        # Phi_t plus an independent (c_t - c_s) increment has the law of Phi_s
        n, R = 8, 10000
        p = params(n)
        s, t = 0.25, 2.0
        rng = np.random.default_rng(23)
        phi_t = sample_gaussian(p, c_hat(p, math.inf) - c_hat(p, t), rng, R)
        phi_s = phi_t + sample_gaussian(p, c_increment(p, s, t), rng, R)
        v = phi_s[:, 0, 0] ** 2
        assert abs(v.mean() - (diagonal(p) - diagonal(p, s))) <= 3 * v.std(ddof=1) / math.sqrt(R)
