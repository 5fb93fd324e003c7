"""Synthetic contextual-bandit environment with exact ground-truth values.

A finite set of contexts, Bernoulli rewards per (context, action), and a
known stochastic logging policy. Because everything is enumerable, the true
value of any target policy is computed exactly, which is what lets offline
estimates be checked against an oracle instead of another estimate.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gasearch import random_variant
from .logstore import LogDataset
from .policyspace import Policy, action_probability_matrix, builtin_space, decode

MIN_LOGGING_FLOOR = 0.05

# Structure of the desk-scale scenario is drawn once from this fixed seed;
# SimConfig.seed only drives log generation.
_SCENARIO_STRUCTURE_SEED = 90210
_SCENARIO_C, _SCENARIO_D, _SCENARIO_K = 5, 4, 3


@dataclass(frozen=True)
class SimConfig:
    """Fully specified environment: contexts, reward means, logging policy."""

    context_vectors: np.ndarray  # C x d
    context_probs: np.ndarray  # C
    reward_means: np.ndarray  # C x K, Bernoulli parameters
    logging_policy: Policy
    seed: int = 0

    def __post_init__(self) -> None:
        vectors = np.array(self.context_vectors, dtype=np.float64)
        probs = np.array(self.context_probs, dtype=np.float64)
        means = np.array(self.reward_means, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("context_vectors must be a C x d matrix")
        c, d = vectors.shape
        if probs.shape != (c,):
            raise ValueError("context_probs must have one entry per context")
        if (probs < 0.0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("context_probs must be nonnegative and sum to 1")
        if means.ndim != 2 or means.shape[0] != c:
            raise ValueError("reward_means must be a C x K matrix")
        if (means < 0.0).any() or (means > 1.0).any():
            raise ValueError("reward_means must lie in [0, 1]")
        if not np.isfinite(vectors).all():
            raise ValueError("context_vectors must be finite")
        k = means.shape[1]
        if self.logging_policy.K != k or self.logging_policy.d != d:
            raise ValueError(
                f"logging policy shape ({self.logging_policy.K}, {self.logging_policy.d}) "
                f"does not match environment (K={k}, d={d})"
            )
        if self.logging_policy.floor < MIN_LOGGING_FLOOR:
            raise ValueError(
                f"logging policy floor must be >= {MIN_LOGGING_FLOOR} to bound importance weights"
            )
        for name, arr in (("context_vectors", vectors), ("context_probs", probs), ("reward_means", means)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def C(self) -> int:
        return self.context_vectors.shape[0]

    @property
    def d(self) -> int:
        return self.context_vectors.shape[1]

    @property
    def K(self) -> int:
        return self.reward_means.shape[1]

    def to_dict(self) -> dict:
        return {
            "context_vectors": [[float(v) for v in row] for row in self.context_vectors],
            "context_probs": [float(v) for v in self.context_probs],
            "reward_means": [[float(v) for v in row] for row in self.reward_means],
            "logging_policy": self.logging_policy.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        for key in ("context_vectors", "context_probs", "reward_means", "logging_policy"):
            if key not in data:
                raise ValueError(f"simulator config is missing {key!r}")
        return cls(
            context_vectors=np.array(data["context_vectors"], dtype=np.float64),
            context_probs=np.array(data["context_probs"], dtype=np.float64),
            reward_means=np.array(data["reward_means"], dtype=np.float64),
            logging_policy=Policy.from_dict(data["logging_policy"]),
            seed=int(data.get("seed", 0)),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"simulator config not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def generate_logs(config: SimConfig, n: int, t0: int = 0) -> LogDataset:
    """Draw ``n`` records under the logging policy; timestamps t0, t0+1, ...

    The recorded propensity is the exact logging probability of the chosen
    action, computed by the same code path the estimators use.
    """
    if n < 0:
        raise ValueError("record count must be >= 0")
    probs = action_probability_matrix(config.logging_policy, config.context_vectors)
    rng = np.random.default_rng(config.seed)
    ctx = rng.choice(config.C, size=n, p=config.context_probs)
    action_u = rng.random(n)
    cumulative = np.cumsum(probs, axis=1)
    actions = np.minimum((action_u[:, None] > cumulative[ctx]).sum(axis=1), config.K - 1)
    reward_u = rng.random(n)
    rewards = (reward_u < config.reward_means[ctx, actions]).astype(np.float64)
    return LogDataset(
        d=config.d,
        K=config.K,
        timestamps=t0 + np.arange(n, dtype=np.int64),
        contexts=config.context_vectors[ctx] if n > 0 else np.empty((0, config.d)),
        actions=actions,
        propensities=probs[ctx, actions],
        rewards=rewards,
    )


def true_value(config: SimConfig, policy: Policy) -> float:
    """Exact expected reward of ``policy`` in this environment (no sampling)."""
    probs = action_probability_matrix(policy, config.context_vectors)
    return float(np.einsum("c,ck,ck->", config.context_probs, probs, config.reward_means))


def shift_rewards(config: SimConfig, delta: float) -> SimConfig:
    """Environment after a product change: all reward means moved by delta, clamped to [0, 1]."""
    if not math.isfinite(delta):
        raise ValueError("delta must be finite")
    return dataclasses.replace(config, reward_means=np.clip(config.reward_means + delta, 0.0, 1.0))


def default_scenario(seed: int = 0) -> SimConfig:
    """Desk-scale scenario: 5 contexts, d=4, K=3, logging floor 0.1.

    Context vectors, reward means, and the logging policy are fixed (drawn
    once from an internal seed); ``seed`` only controls log generation.
    """
    rng = np.random.default_rng(_SCENARIO_STRUCTURE_SEED)
    c, d, k = _SCENARIO_C, _SCENARIO_D, _SCENARIO_K
    context_vectors = rng.standard_normal((c, d))
    reward_means = rng.uniform(0.1, 0.9, size=(c, k))
    space = builtin_space(d, k)
    logging = decode(space, random_variant(space, rng))
    logging = dataclasses.replace(logging, floor=0.1)
    return SimConfig(
        context_vectors=context_vectors,
        context_probs=np.full(c, 1.0 / c),
        reward_means=reward_means,
        logging_policy=logging,
        seed=seed,
    )
