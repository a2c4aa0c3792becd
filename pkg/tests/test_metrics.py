"""Sample-quality metrics, the binned ratio oracle, and the error bound."""

import numpy as np
import pytest

from pdgm import backward, metrics, pdmp
from pdgm.errors import OracleGap
from pdgm.streams import stream


class TestMmd:
    def test_identical_samples(self):
        x = stream(0).standard_normal((500, 2))
        assert metrics.mmd(x, x.copy()) <= 1e-12

    def test_same_law_small(self):
        x = stream(1).standard_normal((5000, 2))
        y = stream(2).standard_normal((5000, 2))
        assert metrics.mmd(x, y) <= 0.02

    def test_shifted_law_large(self):
        x = stream(3).standard_normal((2000, 2))
        y = x + np.array([3.0, 0.0])
        assert metrics.mmd(x, y) >= 0.2

    def test_symmetry(self):
        x = stream(4).standard_normal((300, 2))
        y = stream(5).standard_normal((400, 2)) + 0.5
        assert abs(metrics.mmd(x, y) - metrics.mmd(y, x)) <= 1e-12

    def test_median_bandwidth_positive(self):
        x = stream(6).standard_normal((100, 2))
        y = stream(7).standard_normal((100, 2))
        assert metrics.median_bandwidth(x, y) > 0


class TestWasserstein2:
    def test_identical_samples(self):
        x = stream(8).standard_normal((200, 2))
        assert metrics.wasserstein2(x, x.copy()) <= 1e-9

    def test_pure_shift(self):
        x = stream(9).standard_normal((256, 2))
        y = x + np.array([1.0, 0.0])
        assert abs(metrics.wasserstein2(x, y) - 1.0) <= 1e-9

    def test_one_dimension_sorted_coupling(self):
        rng = stream(10)
        x = rng.standard_normal((300, 1))
        y = rng.standard_normal((300, 1)) + 2.0
        expected = float(np.sqrt(np.mean((np.sort(x[:, 0]) - np.sort(y[:, 0])) ** 2)))
        assert abs(metrics.wasserstein2(x, y) - expected) <= 1e-10

    def test_large_input_subsamples_with_warning(self):
        rng = stream(11)
        x = rng.standard_normal((1500, 2))
        y = rng.standard_normal((1500, 2))
        with pytest.warns(UserWarning):
            w = metrics.wasserstein2(x, y)
        assert 0.0 <= w <= 1.0


@pytest.fixture(scope="module")
def stationary_oracle():
    spec = pdmp.ProcessSpec("zzp", 1, t_f=5.0, lambda_r=1.0)
    x0 = stream(12).standard_normal((50_000, 1))
    oracle = metrics.build_ratio_oracle(spec, x0, stream(13), n_paths=100_000)
    return spec, oracle


@pytest.fixture(scope="module")
def g_integral_setup():
    spec = pdmp.ProcessSpec("zzp", 1, t_f=5.0, lambda_r=1.0)
    rng = stream(14)
    x0 = rng.standard_normal((20_000, 1))
    oracle = metrics.build_ratio_oracle(spec, x0, stream(15), n_paths=200_000)
    return spec, x0, oracle


class TestRatioOracle:
    def test_stationary_ratios_near_one(self, stationary_oracle):
        # started from the invariant law, the true flip ratio is 1 everywhere
        _, oracle = stationary_oracle
        xs = np.linspace(-1.5, 1.5, 21)
        r, ok = oracle.lookup(xs, np.ones_like(xs), np.full_like(xs, 2.5))
        errs = np.abs(r[ok] - 1.0)
        assert ok.mean() > 0.8
        assert np.median(errs) <= 0.1

    def test_symmetry_reciprocal(self, stationary_oracle):
        # the count table gives r(x,+1,t) = 1 / r(x,-1,t) by construction
        _, oracle = stationary_oracle
        xs = np.linspace(-1.0, 1.0, 11)
        t = np.full_like(xs, 2.5)
        r_plus, ok_p = oracle.lookup(xs, np.ones_like(xs), t)
        r_minus, ok_m = oracle.lookup(xs, -np.ones_like(xs), t)
        both = ok_p & ok_m
        assert np.allclose(r_plus[both] * r_minus[both], 1.0, atol=1e-9)

    def test_sparse_bins_flagged(self, stationary_oracle):
        _, oracle = stationary_oracle
        r, ok = oracle.lookup(np.array([50.0]), np.array([1.0]),
                              np.array([2.5]))
        assert not ok[0]


class TestGIntegral:
    def test_exact_model_gives_zero(self, g_integral_setup):
        spec, x0, oracle = g_integral_setup
        # compare the oracle to itself: g vanishes identically
        model = _OracleAsModel(spec, oracle)
        res = metrics.zzp_g_integral(model, oracle, spec, x0, stream(16),
                                     n_paths=500)
        assert res.bound_mc == 0.0
        assert res.m_hat == 0.0

    def test_constant_offset_matches_closed_form(self, g_integral_setup):
        # s = 1 + eps against the stationary truth r = 1:
        # E[integral of g] = 2 eps T_f (lambda_r + 1/sqrt(2 pi))
        spec, x0, oracle = g_integral_setup
        eps = 0.3
        exact = _OracleAsModel(spec, oracle)
        model = _OffsetModel(spec, oracle, eps)
        res = metrics.zzp_g_integral(model, oracle, spec, x0, stream(17),
                                     n_paths=2000)
        closed = 2.0 * eps * spec.t_f * (spec.lambda_r + 1.0 / np.sqrt(2 * np.pi))
        mean_integral = np.nanmean(res.integrals)
        se = np.nanstd(res.integrals, ddof=1) / np.sqrt(np.sum(np.isfinite(res.integrals)))
        # the oracle itself carries binning noise, so allow a wide margin
        assert abs(mean_integral - closed) <= max(5 * se, 0.15 * closed)
        assert 0.0 < res.bound_mc <= 2.0
        assert abs(res.m_hat - eps) <= 0.1
        # sanity: the exact model's integral stays near zero in comparison
        res0 = metrics.zzp_g_integral(exact, oracle, spec, x0, stream(18),
                                      n_paths=500)
        assert np.nanmean(res0.integrals) < 0.1 * closed

    def test_unavailable_fraction_reported(self, g_integral_setup):
        spec, _, oracle = g_integral_setup
        model = _OracleAsModel(spec, oracle)
        x_far = np.full((200, 1), 50.0)  # outside the binned range
        with pytest.raises(OracleGap):
            metrics.zzp_g_integral(model, oracle, spec, x_far, stream(19),
                                   n_paths=200, max_gap=0.01)


class _OracleAsModel:
    """Adapter: reads ratios straight from the oracle table (NaN -> 1)."""

    def __init__(self, spec, oracle):
        self.spec = spec
        self.oracle = oracle

    def ratios(self, x, v, t):
        x = np.atleast_2d(x)
        n, d = x.shape
        out = np.ones((n, d))
        for i in range(d):
            r, ok = self.oracle.lookup(x[:, i], v[:, i], np.broadcast_to(t, (n,)))
            out[ok, i] = r[ok]
        return out


class _OffsetModel(_OracleAsModel):
    def __init__(self, spec, oracle, eps):
        super().__init__(spec, oracle)
        self.eps = eps

    def ratios(self, x, v, t):
        return super().ratios(x, v, t) + self.eps


class TestTvBound:
    def test_zero_model_error(self):
        assert metrics.tv_bound_eq9(c=1.0, gamma=1.0, t_f=2.0, m=0.0, d=3) == (
            pytest.approx(np.exp(-2.0)))

    def test_pinned_value(self):
        # c=0 kills the mixing term; 4 * m * t_f * d = 4 * 1 * 1 * 2 = 8
        assert metrics.tv_bound_eq9(c=0.0, gamma=1.0, t_f=1.0, m=1.0, d=2) == 8.0

    def test_monotone_in_m_and_t(self):
        a = metrics.tv_bound_eq9(c=1.0, gamma=0.5, t_f=1.0, m=0.1, d=2)
        b = metrics.tv_bound_eq9(c=1.0, gamma=0.5, t_f=1.0, m=0.2, d=2)
        assert b > a
        # larger horizon shrinks the mixing term but grows the model term
        small_m = [metrics.tv_bound_eq9(1.0, 1.0, t, 0.0, 2) for t in (1.0, 5.0)]
        assert small_m[1] < small_m[0]
