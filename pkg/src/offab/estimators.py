"""Off-policy value estimators over a log window.

Three estimators of a target policy's expected reward from logged data:

* ``IS``    mean of  w_i * r_i                        (unbiased, high variance)
* ``CIS``   mean of  min(w_i, M) * r_i                (cap trades bias for variance)
* ``NCIS``  sum(min(w_i, M) * r_i) / sum(min(w_i, M)) (self-normalized)

where ``w_i = pi(a_i | x_i) / mu(a_i | x_i)`` is the importance weight of the
target policy against the logging propensity. Confidence intervals come from
a seeded percentile bootstrap that re-runs the full estimator per resample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .logstore import LogDataset
from .policyspace import Policy, action_probability_matrix

KINDS = ("IS", "CIS", "NCIS")

_MAX_RESAMPLE_RETRIES = 100


class EmptyWindowError(ValueError):
    """Estimation was asked for on a window with no records."""


class DegenerateWeightsError(ValueError):
    """All capped weights are zero, so the normalized estimate is undefined."""


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "NCIS"
    cap: float = 100.0
    bootstrap_resamples: int = 200
    ci_level: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind: {self.kind!r}")
        if not self.cap > 0.0:
            raise ValueError(f"cap must be > 0, got {self.cap}")
        if self.bootstrap_resamples < 0:
            raise ValueError("bootstrap_resamples must be >= 0")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError(f"ci_level must lie in (0, 1), got {self.ci_level}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cap": self.cap,
            "bootstrap_resamples": self.bootstrap_resamples,
            "ci_level": self.ci_level,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        return cls(
            kind=data.get("kind", "NCIS"),
            cap=float(data.get("cap", 100.0)),
            bootstrap_resamples=int(data.get("bootstrap_resamples", 200)),
            ci_level=float(data.get("ci_level", 0.95)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class Estimate:
    """Point estimate plus weight diagnostics and an optional bootstrap CI."""

    value: float
    ess: float
    n: int
    max_weight: float
    capped_fraction: float
    ci_lo: float | None = None
    ci_hi: float | None = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "ess": self.ess,
            "n": self.n,
            "max_weight": self.max_weight,
            "capped_fraction": self.capped_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Estimate":
        return cls(
            value=float(data["value"]),
            ess=float(data["ess"]),
            n=int(data["n"]),
            max_weight=float(data["max_weight"]),
            capped_fraction=float(data["capped_fraction"]),
            ci_lo=None if data.get("ci_lo") is None else float(data["ci_lo"]),
            ci_hi=None if data.get("ci_hi") is None else float(data["ci_hi"]),
        )


def importance_weights(policy: Policy, window: LogDataset) -> np.ndarray:
    """Per-record weights pi(a_i | x_i) / mu(a_i | x_i)."""
    if window.K != policy.K or window.d != policy.d:
        raise ValueError(
            f"policy shape ({policy.K}, {policy.d}) does not match dataset (K={window.K}, d={window.d})"
        )
    probs = action_probability_matrix(policy, window.contexts)
    pi = probs[np.arange(len(window)), window.actions]
    return pi / window.propensities


def _point_value(kind: str, capped: np.ndarray, rewards: np.ndarray) -> float:
    if kind == "NCIS":
        denom = capped.sum()
        if denom == 0.0:
            raise DegenerateWeightsError("degenerate weights")
        return float((capped * rewards).sum() / denom)
    return float((capped * rewards).mean())


def estimate(policy: Policy, window: LogDataset, config: EstimatorConfig) -> Estimate:
    """Run the configured estimator over the window."""
    n = len(window)
    if n == 0:
        raise EmptyWindowError("empty window")
    weights = importance_weights(policy, window)
    rewards = window.rewards
    if config.kind == "IS":
        capped = weights
        capped_fraction = 0.0
    else:
        capped = np.minimum(weights, config.cap)
        capped_fraction = float(np.mean(weights > config.cap))
    value = _point_value(config.kind, capped, rewards)

    sum_sq = float((capped * capped).sum())
    ess = float(capped.sum() ** 2 / sum_sq) if sum_sq > 0.0 else 0.0

    ci_lo = ci_hi = None
    if config.bootstrap_resamples > 0:
        ci_lo, ci_hi = _bootstrap_ci(config, capped, rewards, value)

    return Estimate(
        value=value,
        ess=ess,
        n=n,
        max_weight=float(weights.max()),
        capped_fraction=capped_fraction,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
    )


def _bootstrap_ci(
    config: EstimatorConfig, capped: np.ndarray, rewards: np.ndarray, value: float
) -> tuple[float, float]:
    """Seeded percentile bootstrap over record indices.

    Each resample recomputes the full estimator. Normalized resamples whose
    weight sum lands on zero are redrawn (deterministically, from the same
    stream) so the CI is always built from exactly B values.
    """
    n = len(rewards)
    b = config.bootstrap_resamples
    rng = np.random.default_rng(config.seed)
    indices = rng.integers(0, n, size=(b, n))
    numer = capped * rewards
    if config.kind == "NCIS":
        denom = capped[indices].sum(axis=1)
        retries = 0
        while True:
            bad = np.flatnonzero(denom == 0.0)
            if bad.size == 0:
                break
            retries += 1
            if retries > _MAX_RESAMPLE_RETRIES:
                raise DegenerateWeightsError("degenerate weights in bootstrap resamples")
            indices[bad] = rng.integers(0, n, size=(bad.size, n))
            denom[bad] = capped[indices[bad]].sum(axis=1)
        values = numer[indices].sum(axis=1) / denom
    else:
        values = numer[indices].mean(axis=1)
    alpha = 1.0 - config.ci_level
    lo = float(np.quantile(values, alpha / 2.0))
    hi = float(np.quantile(values, 1.0 - alpha / 2.0))
    return min(lo, value), max(hi, value)
