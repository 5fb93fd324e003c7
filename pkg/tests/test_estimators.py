from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offab.estimators import (
    DegenerateWeightsError,
    EmptyWindowError,
    EstimatorConfig,
    estimate,
    importance_weights,
)
from offab.policyspace import Policy

from conftest import make_dataset, uniform_policy


def _window(propensities, rewards, actions=None, d=1, K=2):
    n = len(propensities)
    return make_dataset(
        timestamps=np.arange(n),
        contexts=np.zeros((n, d)),
        actions=actions if actions is not None else np.zeros(n, dtype=int),
        propensities=propensities,
        rewards=rewards,
        K=K,
    )


def _random_pair(seed, n=40, k=3, d=2):
    data = np.random.default_rng(seed)
    logging = Policy(weights=data.uniform(-2, 2, (k, d)), temperature=1.0, floor=0.1)
    target = Policy(weights=data.uniform(-4, 4, (k, d)), temperature=0.5, floor=float(data.uniform(0, 0.5)))
    contexts = data.standard_normal((n, d))
    from offab.policyspace import action_probability_matrix

    probs = action_probability_matrix(logging, contexts)
    actions = np.array([data.choice(k, p=row) for row in probs])
    window = make_dataset(
        timestamps=np.arange(n),
        contexts=contexts,
        actions=actions,
        propensities=probs[np.arange(n), actions],
        rewards=data.uniform(0.0, 1.0, n),
        K=k,
    )
    return target, window


class TestImportanceWeights:
    def test_identity_policy_gives_unit_weights(self):
        # uniform target over K=2 with propensities logged as exactly 0.5
        window = _window([0.5, 0.5, 0.5], [1.0, 0.0, 1.0])
        weights = importance_weights(uniform_policy(1, 2), window)
        assert np.all(weights == 1.0)

    def test_definition(self):
        # scores [ln 1.5, 0] give pi(0|x) = 1.5 / 2.5 = 0.6; logged propensity 0.3 -> w = 2
        policy = Policy(weights=np.array([[np.log(1.5)], [0.0]]), temperature=1.0, floor=0.0)
        window = make_dataset([0], [[1.0]], [0], [0.3], [1.0])
        weights = importance_weights(policy, window)
        assert weights[0] == pytest.approx(2.0, rel=1e-12)

    def test_floored_weight_bound_is_tight(self):
        # both policies floored at 0.1 with K=2: max p = 0.95, min p = 0.05, ratio 19
        target = Policy(weights=np.array([[1000.0], [0.0]]), temperature=0.05, floor=0.1)
        logging = Policy(weights=np.array([[0.0], [1000.0]]), temperature=0.05, floor=0.1)
        from offab.policyspace import action_probabilities

        mu = action_probabilities(logging, [1.0])
        window = make_dataset([0], [[1.0]], [0], [mu[0]], [1.0])
        weights = importance_weights(target, window)
        assert weights[0] == pytest.approx(19.0, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        window = _window([0.5], [1.0])
        with pytest.raises(ValueError, match="does not match"):
            importance_weights(uniform_policy(3, 2), window)


class TestEstimate:
    def test_identity_equals_empirical_mean(self):
        window = _window([0.5, 0.5, 0.5], [1.0, 0.0, 1.0])
        policy = uniform_policy(1, 2)
        for kind in ("IS", "CIS", "NCIS"):
            config = EstimatorConfig(kind=kind, cap=1.0, bootstrap_resamples=0)
            assert estimate(policy, window, config).value == pytest.approx(2 / 3, abs=1e-12)

    def test_hand_computed_weighted_sums(self):
        # uniform target (pi = 0.5) against propensities [0.25, 1.0, 0.5] -> weights [2, 0.5, 1]
        window = _window([0.25, 1.0, 0.5], [1.0, 1.0, 0.0])
        policy = uniform_policy(1, 2)
        is_value = estimate(policy, window, EstimatorConfig(kind="IS", bootstrap_resamples=0)).value
        cis = estimate(policy, window, EstimatorConfig(kind="CIS", cap=1.0, bootstrap_resamples=0))
        ncis = estimate(policy, window, EstimatorConfig(kind="NCIS", cap=1.0, bootstrap_resamples=0))
        assert is_value == pytest.approx((2.0 + 0.5) / 3, abs=1e-9)
        assert cis.value == pytest.approx((1.0 + 0.5) / 3, abs=1e-9)
        assert ncis.value == pytest.approx(1.5 / 2.5, abs=1e-9)
        assert cis.capped_fraction == pytest.approx(1 / 3)
        assert cis.max_weight == pytest.approx(2.0)

    def test_ess_of_raw_weights(self):
        window = _window([0.25, 1.0, 0.5], [1.0, 1.0, 0.0])
        result = estimate(uniform_policy(1, 2), window, EstimatorConfig(kind="IS", bootstrap_resamples=0))
        assert result.ess == pytest.approx(12.25 / 5.25, abs=1e-9)
        assert 0 < result.ess <= result.n

    def test_all_zero_rewards(self):
        window = _window([0.25, 0.5], [0.0, 0.0])
        for kind in ("IS", "CIS", "NCIS"):
            config = EstimatorConfig(kind=kind, bootstrap_resamples=0)
            assert estimate(uniform_policy(1, 2), window, config).value == 0.0

    def test_empty_window(self):
        window = _window([], [])
        with pytest.raises(EmptyWindowError, match="empty window"):
            estimate(uniform_policy(1, 2), window, EstimatorConfig())

    def test_degenerate_ncis(self):
        # saturated zero-floor policy puts probability 0 on every logged action
        policy = Policy(weights=np.array([[1000.0], [0.0]]), temperature=0.05, floor=0.0)
        window = make_dataset([0, 1], [[1.0], [1.0]], [1, 1], [0.5, 0.5], [1.0, 1.0])
        with pytest.raises(DegenerateWeightsError, match="degenerate weights"):
            estimate(policy, window, EstimatorConfig(kind="NCIS", bootstrap_resamples=0))

    def test_is_unaffected_by_cap(self):
        window = _window([0.01, 0.5], [1.0, 1.0])
        a = estimate(uniform_policy(1, 2), window, EstimatorConfig(kind="IS", cap=1.0, bootstrap_resamples=0))
        b = estimate(uniform_policy(1, 2), window, EstimatorConfig(kind="IS", cap=1e9, bootstrap_resamples=0))
        assert a.value == b.value
        assert a.capped_fraction == 0.0


class TestBootstrap:
    def test_deterministic_given_seed(self):
        target, window = _random_pair(3)
        config = EstimatorConfig(kind="NCIS", bootstrap_resamples=100, seed=42)
        first = estimate(target, window, config)
        second = estimate(target, window, config)
        assert (first.ci_lo, first.ci_hi) == (second.ci_lo, second.ci_hi)

    def test_different_seed_different_ci(self):
        target, window = _random_pair(3)
        a = estimate(target, window, EstimatorConfig(kind="NCIS", bootstrap_resamples=100, seed=1))
        b = estimate(target, window, EstimatorConfig(kind="NCIS", bootstrap_resamples=100, seed=2))
        assert (a.ci_lo, a.ci_hi) != (b.ci_lo, b.ci_hi)
        assert a.value == b.value

    def test_constant_rewards_identity_policy_zero_width(self):
        window = _window([0.5] * 8, [0.7] * 8)
        config = EstimatorConfig(kind="NCIS", bootstrap_resamples=64, seed=5)
        result = estimate(uniform_policy(1, 2), window, config)
        assert result.ci_lo == result.ci_hi == pytest.approx(result.value)

    def test_ci_brackets_value(self):
        for seed in range(8):
            target, window = _random_pair(seed)
            for kind in ("IS", "CIS", "NCIS"):
                config = EstimatorConfig(kind=kind, cap=5.0, bootstrap_resamples=50, seed=seed)
                result = estimate(target, window, config)
                assert result.ci_lo <= result.value <= result.ci_hi

    def test_disabled_when_zero_resamples(self):
        target, window = _random_pair(1)
        result = estimate(target, window, EstimatorConfig(bootstrap_resamples=0))
        assert result.ci_lo is None and result.ci_hi is None


class TestProperties:
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_capping_direction_and_equality(self, seed):
        target, window = _random_pair(seed)
        is_value = estimate(target, window, EstimatorConfig(kind="IS", bootstrap_resamples=0)).value
        previous = float("-inf")
        for cap in (0.5, 1.0, 5.0, 20.0):
            cis = estimate(target, window, EstimatorConfig(kind="CIS", cap=cap, bootstrap_resamples=0)).value
            assert cis <= is_value + 1e-12
            assert cis >= previous - 1e-12  # nondecreasing in the cap
            previous = cis
        max_w = importance_weights(target, window).max()
        at_max = estimate(target, window, EstimatorConfig(kind="CIS", cap=max_w, bootstrap_resamples=0)).value
        assert at_max == pytest.approx(is_value, abs=1e-12)

    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_ncis_is_a_convex_combination_of_rewards(self, seed):
        target, window = _random_pair(seed)
        value = estimate(target, window, EstimatorConfig(kind="NCIS", cap=10.0, bootstrap_resamples=0)).value
        assert window.rewards.min() - 1e-12 <= value <= window.rewards.max() + 1e-12

    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        alpha=st.floats(min_value=0.1, max_value=10.0),
        beta=st.floats(min_value=-5.0, max_value=5.0),
    )
    @settings(max_examples=30, deadline=None)
    def test_ncis_reward_affine_equivariance(self, seed, alpha, beta):
        target, window = _random_pair(seed)
        config = EstimatorConfig(kind="NCIS", cap=10.0, bootstrap_resamples=0)
        base = estimate(target, window, config).value
        transformed = make_dataset(
            timestamps=window.timestamps,
            contexts=window.contexts,
            actions=window.actions,
            propensities=window.propensities,
            rewards=alpha * window.rewards + beta,
            K=window.K,
        )
        assert estimate(target, transformed, config).value == pytest.approx(
            alpha * base + beta, rel=1e-9, abs=1e-9
        )

    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_identity_policy_all_kinds_equal_mean(self, seed):
        data = np.random.default_rng(seed)
        n = 20
        policy = uniform_policy(1, 3)
        window = make_dataset(
            timestamps=np.arange(n),
            contexts=data.standard_normal((n, 1)),
            actions=data.integers(0, 3, n),
            propensities=np.full(n, 1 / 3),
            rewards=data.uniform(0, 1, n),
            K=3,
        )
        for kind in ("IS", "CIS", "NCIS"):
            config = EstimatorConfig(kind=kind, cap=100.0, bootstrap_resamples=0)
            assert estimate(policy, window, config).value == pytest.approx(
                window.rewards.mean(), abs=1e-12
            )


class TestConfigValidation:
    def test_bad_kind(self):
        with pytest.raises(ValueError, match="kind"):
            EstimatorConfig(kind="DR")

    def test_bad_cap(self):
        with pytest.raises(ValueError, match="cap"):
            EstimatorConfig(cap=0.0)

    def test_bad_ci_level(self):
        with pytest.raises(ValueError, match="ci_level"):
            EstimatorConfig(ci_level=1.0)

    def test_dict_round_trip(self):
        config = EstimatorConfig(kind="CIS", cap=7.0, bootstrap_resamples=13, ci_level=0.9, seed=5)
        assert EstimatorConfig.from_dict(config.to_dict()) == config
