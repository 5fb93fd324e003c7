"""Hyperparameter space declaration and the linear-softmax policy family.

A space is an ordered list of named genes (continuous, integer, or
categorical). A variant assigns one in-range value to every gene. The
built-in space decodes a variant straight into a policy: a temperature
softmax over linear action scores, mixed with a uniform exploration floor so
every action keeps probability at least ``floor / K``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"

FEATURE_MAPS = ("identity", "l2_normalized")

WEIGHT_RANGE = (-5.0, 5.0)
TEMPERATURE_RANGE = (0.05, 5.0)
FLOOR_RANGE = (0.0, 0.5)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class HyperparameterSpec:
    """One named gene: a closed interval or an explicit value list."""

    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    values: tuple | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("hyperparameter name must be non-empty")
        if self.kind not in (CONTINUOUS, INTEGER, CATEGORICAL):
            raise ValueError(f"unknown hyperparameter kind: {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.values:
                raise ValueError(f"categorical {self.name!r} needs a non-empty value list")
            if len(set(self.values)) != len(self.values):
                raise ValueError(f"categorical {self.name!r} has duplicate values")
            object.__setattr__(self, "values", tuple(self.values))
        else:
            if self.lo is None or self.hi is None:
                raise ValueError(f"{self.kind} {self.name!r} needs lo and hi bounds")
            if self.lo > self.hi:
                raise ValueError(f"{self.name!r}: lo must be <= hi")
            if self.kind == INTEGER and (int(self.lo) != self.lo or int(self.hi) != self.hi):
                raise ValueError(f"integer {self.name!r} needs integer bounds")

    def contains(self, value) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.values
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if self.kind == INTEGER and int(value) != value:
            return False
        return math.isfinite(float(value)) and self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        if self.kind == CATEGORICAL:
            return {"name": self.name, "kind": self.kind, "values": list(self.values)}
        return {"name": self.name, "kind": self.kind, "range": [self.lo, self.hi]}

    @classmethod
    def from_dict(cls, data: dict) -> "HyperparameterSpec":
        kind = data.get("kind")
        if kind == CATEGORICAL:
            return cls(name=data.get("name", ""), kind=kind, values=tuple(data.get("values", ())))
        rng = data.get("range")
        if not isinstance(rng, (list, tuple)) or len(rng) != 2:
            raise ValueError(f"spec {data.get('name')!r} needs a two-element 'range'")
        return cls(name=data.get("name", ""), kind=kind, lo=rng[0], hi=rng[1])


@dataclass(frozen=True)
class HyperparameterSpace:
    """Ordered, uniquely named genes defining the variant genome."""

    specs: tuple[HyperparameterSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        if len(self.specs) < 1:
            raise ValueError("a space needs at least one hyperparameter")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("hyperparameter names must be unique")

    @property
    def n(self) -> int:
        return len(self.specs)

    def validate_assignments(self, assignments) -> None:
        if len(assignments) != self.n:
            raise ValueError(f"expected {self.n} assignments, got {len(assignments)}")
        for spec, value in zip(self.specs, assignments):
            if not spec.contains(value):
                raise ValueError(f"assignment {value!r} out of range for {spec.name!r}")

    def to_dict(self) -> dict:
        return {"specs": [s.to_dict() for s in self.specs]}

    @classmethod
    def from_dict(cls, data: dict) -> "HyperparameterSpace":
        specs = data.get("specs")
        if not isinstance(specs, list):
            raise ValueError("space document needs a 'specs' list")
        return cls(tuple(HyperparameterSpec.from_dict(s) for s in specs))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "HyperparameterSpace":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"space file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _canonical(value) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean assignments are not supported")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def variant_id(assignments) -> str:
    """64-bit FNV-1a over the canonical rendering of the assignments."""
    payload = "|".join(_canonical(v) for v in assignments).encode("utf-8")
    h = _FNV_OFFSET
    for byte in payload:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return format(h, "016x")


@dataclass(frozen=True)
class Variant:
    """One full assignment of values to a space, identified by a stable hash."""

    id: str
    assignments: tuple

    def to_dict(self) -> dict:
        return {"id": self.id, "assignments": list(self.assignments)}


def make_variant(space: HyperparameterSpace, assignments) -> Variant:
    """Validate assignments against the space and attach the stable id."""
    assignments = tuple(assignments)
    space.validate_assignments(assignments)
    return Variant(id=variant_id(assignments), assignments=assignments)


@dataclass(frozen=True)
class Policy:
    """Linear-softmax policy: p(a|x) = (1-floor) * softmax(theta phi(x) / tau)_a + floor / K."""

    weights: np.ndarray
    temperature: float
    floor: float
    feature_map: str = "identity"

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError("policy weights must be a K x d matrix")
        if not np.isfinite(weights).all():
            raise ValueError("policy weights must be finite")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        if not (self.temperature > 0.0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.floor <= 0.5:
            raise ValueError(f"floor must lie in [0, 0.5], got {self.floor}")
        if self.feature_map not in FEATURE_MAPS:
            raise ValueError(f"unknown feature map: {self.feature_map!r}")

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def to_dict(self) -> dict:
        return {
            "weights": [[float(v) for v in row] for row in self.weights],
            "temperature": self.temperature,
            "floor": self.floor,
            "feature_map": self.feature_map,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        for key in ("weights", "temperature", "floor"):
            if key not in data:
                raise ValueError(f"policy is missing {key!r}")
        return cls(
            weights=np.array(data["weights"], dtype=np.float64),
            temperature=float(data["temperature"]),
            floor=float(data["floor"]),
            feature_map=data.get("feature_map", "identity"),
        )


def builtin_space(d: int, K: int) -> HyperparameterSpace:
    """Canonical policy space: K*d weight genes, temperature, floor, feature map."""
    if d < 1:
        raise ValueError(f"context dimension must be >= 1, got {d}")
    if K < 2:
        raise ValueError(f"action count must be >= 2, got {K}")
    specs = [
        HyperparameterSpec(f"w_{a}_{j}", CONTINUOUS, lo=WEIGHT_RANGE[0], hi=WEIGHT_RANGE[1])
        for a in range(K)
        for j in range(d)
    ]
    specs.append(HyperparameterSpec("temperature", CONTINUOUS, lo=TEMPERATURE_RANGE[0], hi=TEMPERATURE_RANGE[1]))
    specs.append(HyperparameterSpec("floor", CONTINUOUS, lo=FLOOR_RANGE[0], hi=FLOOR_RANGE[1]))
    specs.append(HyperparameterSpec("feature_map", CATEGORICAL, values=FEATURE_MAPS))
    return HyperparameterSpace(tuple(specs))


def _policy_layout(space: HyperparameterSpace) -> tuple[int, int]:
    """Check the space follows the builtin layout and return (d, K)."""
    names = [s.name for s in space.specs]
    if names[-3:] != ["temperature", "floor", "feature_map"]:
        raise ValueError("space does not follow the policy layout (trailing temperature/floor/feature_map)")
    weight_names = names[:-3]
    if not weight_names:
        raise ValueError("space has no weight genes")
    max_a = max_j = -1
    for name in weight_names:
        parts = name.split("_")
        if len(parts) != 3 or parts[0] != "w":
            raise ValueError(f"unexpected weight gene name: {name!r}")
        max_a = max(max_a, int(parts[1]))
        max_j = max(max_j, int(parts[2]))
    k, d = max_a + 1, max_j + 1
    expected = [f"w_{a}_{j}" for a in range(k) for j in range(d)]
    if weight_names != expected:
        raise ValueError("weight genes are not in row-major w_<action>_<feature> order")
    return d, k


def decode(space: HyperparameterSpace, variant: Variant) -> Policy:
    """Turn a variant of the builtin-layout space into a concrete policy."""
    space.validate_assignments(variant.assignments)
    d, k = _policy_layout(space)
    values = variant.assignments
    weights = np.array(values[: k * d], dtype=np.float64).reshape(k, d)
    return Policy(
        weights=weights,
        temperature=float(values[k * d]),
        floor=float(values[k * d + 1]),
        feature_map=values[k * d + 2],
    )


def encode(space: HyperparameterSpace, policy: Policy) -> Variant:
    """Write policy parameters back into genes (inverse of :func:`decode`)."""
    d, k = _policy_layout(space)
    if policy.weights.shape != (k, d):
        raise ValueError(f"policy weights {policy.weights.shape} do not match space ({k}, {d})")
    assignments = [float(v) for v in policy.weights.reshape(-1)]
    assignments.extend([float(policy.temperature), float(policy.floor), policy.feature_map])
    return make_variant(space, tuple(assignments))


def action_probability_matrix(policy: Policy, contexts) -> np.ndarray:
    """Action probabilities for a batch of contexts, shape (m, K).

    Rows are computed independently (no cross-row blocking), so a single
    context produces bit-identical probabilities whether it is evaluated
    alone or inside a batch.
    """
    x = np.asarray(contexts, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != policy.d:
        raise ValueError(f"contexts must have shape (m, {policy.d})")
    if not np.isfinite(x).all():
        raise ValueError("contexts must be finite")
    if policy.feature_map == "l2_normalized":
        norms = np.sqrt(np.einsum("md,md->m", x, x))
        scale = np.where(norms > 0.0, norms, 1.0)
        x = x / scale[:, None]
    scores = np.einsum("md,kd->mk", x, policy.weights)
    z = scores / policy.temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    base = e / e.sum(axis=1, keepdims=True)
    return (1.0 - policy.floor) * base + policy.floor / policy.K


def action_probabilities(policy: Policy, context) -> np.ndarray:
    """Action probabilities for one context, shape (K,)."""
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 1:
        raise ValueError("context must be a flat vector")
    return action_probability_matrix(policy, context[None, :])[0]
