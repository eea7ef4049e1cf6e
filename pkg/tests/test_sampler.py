import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from deformtab.errors import ConfigError
from deformtab.sampler import (
    DeformationParams,
    SamplerConfig,
    check_params,
    derive_seed,
    factor_min,
    make_rng,
    sample_params,
    truncated_normal,
)

# Moments of N(2, 0.7^2) truncated to [1, 5], from the closed-form truncated normal.
TN_MEAN = 2.1089742936539984
TN_STD = 0.6074751631754053


def test_truncated_moments_match_closed_form():
    dist = stats.truncnorm((1 - 2) / 0.7, (5 - 2) / 0.7, loc=2, scale=0.7)
    assert dist.mean() == pytest.approx(TN_MEAN, abs=1e-12)
    assert dist.std() == pytest.approx(TN_STD, abs=1e-12)


class TestTruncatedNormal:
    def draws(self, n, *args, seed=0):
        rng = make_rng(seed)
        return np.array([truncated_normal(*args, rng) for _ in range(n)])

    def test_axis_distribution(self):
        x = self.draws(100_000, 2.0, 0.7, 1.0, 5.0)
        assert x.min() >= 1.0 and x.max() <= 5.0
        # 4 standard errors
        assert x.mean() == pytest.approx(TN_MEAN, abs=4 * TN_STD / np.sqrt(x.size))
        assert x.std() == pytest.approx(TN_STD, abs=0.01)
        assert stats.kstest(x, stats.truncnorm(-1 / 0.7, 3 / 0.7, loc=2, scale=0.7).cdf).pvalue > 1e-3

    def test_symmetric_case(self):
        x = self.draws(100_000, 0.0, 1.0, -1.0, 1.0, seed=5)
        assert abs(x.mean()) < 0.01

    def test_narrow_window(self):
        x = self.draws(200, 2.0, 0.7, 2.0 - 1e-3, 2.0)
        assert x.min() >= 2.0 - 1e-3 and x.max() <= 2.0

    def test_degenerate_truncation(self):
        with pytest.raises(ConfigError):
            truncated_normal(0.0, 1.0, 10.0, 11.0, make_rng(0))

    def test_bad_bounds(self):
        with pytest.raises(ConfigError):
            truncated_normal(0.0, 1.0, 1.0, 1.0, make_rng(0))
        with pytest.raises(ConfigError):
            truncated_normal(0.0, 0.0, -1.0, 1.0, make_rng(0))


class TestSampleParams:
    def test_same_seed_same_params(self):
        a = sample_params(99, 200.0, (300, 200))
        b = sample_params(99, 200.0, (300, 200))
        assert a == b

    def test_invariants_over_many_draws(self):
        seen_wave = seen_cyl = 0
        for seed in range(5000):
            p = sample_params(seed, 200.0, (320, 240))
            assert check_params(p) == []
            seen_wave += p.wave is not None
            seen_cyl += p.cylinder is not None
            if p.wave is not None:
                assert p.s * p.wave.amplitude <= p.wave.wavelength <= 800
            if p.cylinder is not None:
                assert p.cylinder.width == 320
        # enable probability 0.5 each, 5 standard deviations
        assert abs(seen_wave - 2500) < 180 and abs(seen_cyl - 2500) < 180

    def test_shadow_gated_on_luminance(self):
        assert sample_params(1, 120.0, (100, 100)).shadow is None
        bright = sample_params(1, 120.5, (100, 100))
        assert bright.shadow is not None
        assert 0.6 <= bright.shadow.cb <= 0.9 and 0.1 <= bright.shadow.eb <= 0.3

    def test_shadow_center_near_a_corner(self):
        w, h = 200, 100
        radius = 0.15 * np.hypot(w, h)
        corners = np.array([(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)])
        for seed in range(300):
            c = np.array(sample_params(seed, 250.0, (w, h)).shadow.center)
            assert np.hypot(*(corners - c).T).min() <= radius + 1e-9

    def test_luminance_does_not_shift_other_draws(self):
        dark = sample_params(7, 10.0, (100, 100))
        bright = sample_params(7, 250.0, (100, 100))
        assert dark.wave == bright.wave and dark.cylinder == bright.cylinder

    def test_params_dict_round_trip(self):
        p = sample_params(3, 250.0, (100, 80))
        assert DeformationParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p


class TestFactorRange:
    @given(st.floats(1, 5), st.floats(1, 5))
    def test_nonincreasing(self, a, b):
        lo, hi = sorted((a, b))
        assert factor_min(hi) <= factor_min(lo)

    def test_endpoints(self):
        assert factor_min(1.0) == pytest.approx(0.7)
        assert factor_min(5.0) == pytest.approx(0.5)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            SamplerConfig.from_dict({"amplitude": [10, 20], "bogus": 1})

    @pytest.mark.parametrize("doc", [
        {"amplitude": [5, 20]},
        {"edge_brightness": [0.1, 0.5]},
        {"axis_range": [0.5, 5]},
        {"wave_probability": 1.5},
    ])
    def test_outside_limits(self, doc):
        with pytest.raises(ConfigError):
            SamplerConfig.from_dict(doc)

    def test_subrange_accepted(self):
        cfg = SamplerConfig.from_dict({"amplitude": [20, 30], "wave_probability": 1.0})
        p = sample_params(0, 0.0, (100, 100), cfg)
        assert 20 <= p.wave.amplitude <= 30

    def test_round_trip(self):
        cfg = SamplerConfig.from_dict({"amplitude": [20, 30]})
        assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


class TestSeeds:
    def test_derive_seed_deterministic_and_distinct(self):
        seeds = {derive_seed(1, i, v) for i in range(20) for v in range(20)}
        assert len(seeds) == 400
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)

    def test_streams_independent_of_other_draw_counts(self):
        s = derive_seed(5, 1)
        ref = make_rng(s).random(4)
        other = make_rng(derive_seed(5, 0))
        other.random(1000)
        np.testing.assert_array_equal(make_rng(s).random(4), ref)

    @settings(max_examples=20)
    @given(st.integers(0, 2**63), st.integers(0, 1000))
    def test_seed_fits_64_bits(self, master, index):
        assert 0 <= derive_seed(master, index) < 2**64
