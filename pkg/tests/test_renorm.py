import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gffcoupling.errors import DegenerateWeightsError
from gffcoupling.lattice import TorusGrid, integrate
from gffcoupling.potential import Model, ModelParams, grad_v0, v0
from gffcoupling.renorm import (
    draw_small_scales,
    grad_vt_estimate,
    gradient_mean,
    l1_gradient_diagnostic,
    vt_estimate,
)
from gffcoupling.scales import ScaleParams

PHI_2X2 = np.array([[0.3, -0.5], [1.1, 0.0]])

# 40-point-per-axis tensor Gauss-Hermite rule in the eigenbasis of c_1 on the
# 2x2 torus (beta = pi, m = 1, lam = 1); order 30 agrees to ~1e-6
QUADRATURE = {
    "liouville": (1.5580611394032227, [1.185717508490864, 0.35680202744152073, 3.602280120622649, 0.7521118192998161]),
    "sinh-gordon": (2.1738484454251474, [0.44861435633688934, -2.2627326258409783, 3.6965388086546245, -0.522235092460289]),
}


def mp(model="liouville", n=8, beta=math.pi, lam=1.0):
    return ModelParams(Model(model), beta, ScaleParams(1.0, TorusGrid(n)), lam)


class TestValue:
    def test_t_zero_is_exact(self):
        phi = np.random.default_rng(0).standard_normal((8, 8))
        est = vt_estimate(phi, 0, mp())
        assert est.value == v0(phi, mp())
        assert est.std_error == 0

    @pytest.mark.parametrize("model", ["liouville", "sinh-gordon"])
    def test_against_quadrature(self, model):
        est = vt_estimate(PHI_2X2, 1.0, mp(model, n=2), 200000, np.random.default_rng(1))
        assert abs(est.value - QUADRATURE[model][0]) <= 3 * est.std_error
        assert est.reliable

    def test_jensen(self):
        params = mp()
        phi = np.random.default_rng(2).standard_normal((8, 8))
        zeta = draw_small_scales(params, 0.5, 4096, np.random.default_rng(3))
        est = vt_estimate(phi, 0.5, params, zeta=zeta)
        plain = v0(phi + zeta, params)
        assert est.value <= plain.mean() + 3 * plain.std(ddof=1) / math.sqrt(4096)

    def test_batched_shapes(self):
        phi = np.zeros((3, 8, 8))
        est = vt_estimate(phi, 1.0, mp(), 64, np.random.default_rng(4))
        assert np.shape(est.value) == (3,) and np.shape(est.ess) == (3,)

    def test_se_scales_like_root_n(self):
        params = mp()
        phi = 0.5 * np.random.default_rng(5).standard_normal((8, 8))
        a = vt_estimate(phi, 1.0, params, 4096, np.random.default_rng(6)).std_error
        b = vt_estimate(phi, 1.0, params, 8192, np.random.default_rng(7)).std_error
        assert abs((a / b) / math.sqrt(2) - 1) < 0.2

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_degenerate_weights(self):
        # v0 so large that every weight underflows to 0
        params = mp(lam=1e308)
        with pytest.raises(DegenerateWeightsError):
            vt_estimate(np.full((8, 8), 5.0), 1.0, params, 16, np.random.default_rng(8))

    def test_midpoint_convexity(self):
        params = mp()
        rng = np.random.default_rng(9)
        for _ in range(5):
            phi, psi = rng.standard_normal((2, 8, 8))
            mid = vt_estimate((phi + psi) / 2, 1.0, params, 4096, rng)
            a = vt_estimate(phi, 1.0, params, 4096, rng)
            b = vt_estimate(psi, 1.0, params, 4096, rng)
            se = math.sqrt(mid.std_error**2 + (a.std_error**2 + b.std_error**2) / 4)
            assert mid.value <= (a.value + b.value) / 2 + 3 * se


class TestGradient:
    def test_t_zero_is_exact(self):
        phi = np.random.default_rng(10).standard_normal((8, 8))
        np.testing.assert_array_equal(grad_vt_estimate(phi, 0, mp()).value, grad_v0(phi, mp()))

    @pytest.mark.parametrize("model", ["liouville", "sinh-gordon"])
    def test_against_quadrature(self, model):
        est = grad_vt_estimate(PHI_2X2, 1.0, mp(model, n=2), 200000, np.random.default_rng(11))
        expected = np.array(QUADRATURE[model][1]).reshape(2, 2)
        assert np.all(np.abs(est.value - expected) <= 3 * est.std_error)

    def test_finite_difference_common_random_numbers(self):
        params = mp(n=8)
        rng = np.random.default_rng(12)
        phi, g = rng.standard_normal((2, 8, 8))
        zeta = draw_small_scales(params, 0.5, 4096, rng)
        h = 1e-4
        fd = (vt_estimate(phi + h * g, 0.5, params, zeta=zeta).value - vt_estimate(phi - h * g, 0.5, params, zeta=zeta).value) / (2 * h)
        grad = grad_vt_estimate(phi, 0.5, params, zeta=zeta).value
        assert abs(fd - integrate(grad * g)) < 1e-2 * abs(fd)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 3.0))
    def test_liouville_positive(self, seed, scale):
        rng = np.random.default_rng(seed)
        phi = scale * rng.standard_normal((8, 8))
        assert np.all(grad_vt_estimate(phi, 1.0, mp(), 64, rng).value > 0)

    def test_sinh_gordon_odd_with_mirrored_draws(self):
        params = mp("sinh-gordon")
        rng = np.random.default_rng(13)
        phi = rng.standard_normal((8, 8))
        zeta = draw_small_scales(params, 1.0, 256, rng)
        a = grad_vt_estimate(phi, 1.0, params, zeta=zeta).value
        b = grad_vt_estimate(-phi, 1.0, params, zeta=-zeta).value
        np.testing.assert_allclose(a, -b, atol=1e-12)

    def test_flow_inner_loop_matches(self):
        params = mp()
        rng = np.random.default_rng(14)
        phi = rng.standard_normal((2, 8, 8))
        zeta = draw_small_scales(params, 1.0, 128, rng, (2,))
        est = grad_vt_estimate(phi, 1.0, params, zeta=zeta)
        g, ess = gradient_mean(phi, 1.0, params, zeta)
        np.testing.assert_allclose(g, est.value, rtol=1e-12)
        np.testing.assert_allclose(ess, est.ess, rtol=1e-12)
        assert np.all((ess > 0) & (ess <= 128 + 1e-9))


class TestL1Diagnostic:
    def test_t_zero_liouville_ratio_one(self):
        params = mp()
        phi = np.random.default_rng(15).standard_normal((8, 8))
        rep = l1_gradient_diagnostic(phi, 0, params, grad_vt_estimate(phi, 0, params))
        assert rep["ratio"] == pytest.approx(1.0, rel=1e-12)

    def test_t_zero_sinh_gordon_at_most_one(self):
        params = mp("sinh-gordon")
        phi = np.random.default_rng(16).standard_normal((8, 8))
        rep = l1_gradient_diagnostic(phi, 0, params, grad_vt_estimate(phi, 0, params))
        assert rep["ratio"] <= 1.0

    def test_smoothed_ratio_at_most_one(self):
        for model in ("liouville", "sinh-gordon"):
            params = mp(model)
            rng = np.random.default_rng(17)
            phi = rng.standard_normal((8, 8))
            for t in (0.01, 0.5, 4.0):
                rep = l1_gradient_diagnostic(phi, t, params, grad_vt_estimate(phi, t, params, 4096, rng))
                assert rep["ratio_smoothed"] <= 1.0 + 0.05

    def test_sweep_stable_across_eps(self):
        # reported constant: max ratio over t at n = 16 and 32
        maxima = []
        for n in (16, 32):
            params = mp(n=n)
            rng = np.random.default_rng(18)
            phi = np.zeros((n, n))
            ratios = [
                l1_gradient_diagnostic(phi, t, params, grad_vt_estimate(phi, t, params, 1024, rng))["ratio"]
                for t in 2.0 ** np.arange(-12, 3)
            ]
            maxima.append(max(ratios))
        assert all(np.isfinite(maxima))
        assert max(maxima) / min(maxima) <= 3
