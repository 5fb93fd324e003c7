"""Generational genetic algorithm over a hyperparameter space.

Tournament selection, uniform crossover, Gaussian/clamp mutation, and
elitism. All randomness for the individual filling slot ``s`` of generation
``g`` derives from ``(seed, g, s)``, so results do not depend on evaluation
order and fitness calls may run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .policyspace import (
    CATEGORICAL,
    INTEGER,
    HyperparameterSpace,
    Variant,
    make_variant,
)


class SearchError(RuntimeError):
    """The search could not get off the ground (no viable individual)."""


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 32
    generations: int = 20
    tournament_size: int = 3
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # None resolves to 1/n for an n-gene space
    mutation_sigma_fraction: float = 0.1
    elitism: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in [1, population_size]")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError("crossover_prob must lie in [0, 1]")
        if self.mutation_prob is not None and not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if not self.mutation_sigma_fraction > 0.0:
            raise ValueError("mutation_sigma_fraction must be > 0")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must lie in [0, population_size)")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "generations": self.generations,
            "tournament_size": self.tournament_size,
            "crossover_prob": self.crossover_prob,
            "mutation_prob": self.mutation_prob,
            "mutation_sigma_fraction": self.mutation_sigma_fraction,
            "elitism": self.elitism,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GAConfig":
        return cls(
            population_size=int(data.get("population_size", 32)),
            generations=int(data.get("generations", 20)),
            tournament_size=int(data.get("tournament_size", 3)),
            crossover_prob=float(data.get("crossover_prob", 0.9)),
            mutation_prob=None if data.get("mutation_prob") is None else float(data["mutation_prob"]),
            mutation_sigma_fraction=float(data.get("mutation_sigma_fraction", 0.1)),
            elitism=int(data.get("elitism", 1)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class SearchResult:
    best_variant: Variant
    best_fitness: float
    history: tuple[tuple[float, float], ...]  # per generation: (best, mean)
    evaluations: int


def _slot_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, slot)))


def random_variant(space: HyperparameterSpace, rng: np.random.Generator) -> Variant:
    """Uniform in-range draw for every gene."""
    values = []
    for spec in space.specs:
        if spec.kind == CATEGORICAL:
            values.append(spec.values[int(rng.integers(0, len(spec.values)))])
        elif spec.kind == INTEGER:
            values.append(int(rng.integers(int(spec.lo), int(spec.hi) + 1)))
        else:
            values.append(float(rng.uniform(spec.lo, spec.hi)))
    return make_variant(space, tuple(values))


def _clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def _mutate_genes(genes: list, space: HyperparameterSpace, mutation_prob: float,
                  sigma_fraction: float, rng: np.random.Generator) -> list:
    out = []
    for value, spec in zip(genes, space.specs):
        if rng.random() >= mutation_prob:
            out.append(value)
            continue
        if spec.kind == CATEGORICAL:
            out.append(spec.values[int(rng.integers(0, len(spec.values)))])
        elif spec.kind == INTEGER:
            moved = value + rng.normal(0.0, sigma_fraction * (spec.hi - spec.lo))
            out.append(int(_clamp(int(np.rint(moved)), int(spec.lo), int(spec.hi))))
        else:
            moved = value + rng.normal(0.0, sigma_fraction * (spec.hi - spec.lo))
            out.append(float(_clamp(moved, spec.lo, spec.hi)))
    return out


def _tournament(population: list[Variant], scores: list[float], size: int,
                rng: np.random.Generator) -> Variant:
    picks = rng.integers(0, len(population), size=size)
    best = None
    for i in picks:
        candidate = population[int(i)]
        key = (-scores[int(i)], candidate.id)
        if best is None or key < best[0]:
            best = (key, candidate)
    return best[1]


def _breed(population: list[Variant], scores: list[float], space: HyperparameterSpace,
           config: GAConfig, mutation_prob: float, generation: int) -> list[Variant]:
    ranked = sorted(range(len(population)), key=lambda i: (-scores[i], population[i].id))
    children = [population[i] for i in ranked[: config.elitism]]
    for slot in range(config.elitism, config.population_size):
        rng = _slot_rng(config.seed, generation, slot)
        first = _tournament(population, scores, config.tournament_size, rng)
        second = _tournament(population, scores, config.tournament_size, rng)
        if rng.random() < config.crossover_prob:
            genes = [a if rng.random() < 0.5 else b
                     for a, b in zip(first.assignments, second.assignments)]
        else:
            genes = list(first.assignments)
        genes = _mutate_genes(genes, space, mutation_prob, config.mutation_sigma_fraction, rng)
        children.append(make_variant(space, tuple(genes)))
    return children


def evolve(space: HyperparameterSpace, fitness: Callable[[Variant], float],
           config: GAConfig) -> SearchResult:
    """Maximize ``fitness`` over the space; returns the best-ever individual.

    A fitness call that raises (or returns NaN) scores that individual at
    -inf and the search continues. Fitness values are cached by variant id
    for the lifetime of this call only.
    """
    mutation_prob = config.mutation_prob if config.mutation_prob is not None else 1.0 / space.n
    cache: dict[str, float] = {}
    evaluations = 0

    def scored(variant: Variant) -> float:
        nonlocal evaluations
        if variant.id in cache:
            return cache[variant.id]
        try:
            value = float(fitness(variant))
        except Exception:
            value = float("-inf")
        if math.isnan(value):
            value = float("-inf")
        evaluations += 1
        cache[variant.id] = value
        return value

    population = [random_variant(space, _slot_rng(config.seed, 0, slot))
                  for slot in range(config.population_size)]
    best_variant: Variant | None = None
    best_fitness = float("-inf")
    history: list[tuple[float, float]] = []

    scores: list[float] = []
    for generation in range(config.generations):
        if generation > 0:
            population = _breed(population, scores, space, config, mutation_prob, generation)
        scores = [scored(v) for v in population]
        if generation == 0 and all(s == float("-inf") for s in scores):
            raise SearchError("every individual in the initial population failed fitness evaluation")
        for variant, score in zip(population, scores):
            if score > best_fitness or (score == best_fitness and
                                        (best_variant is None or variant.id < best_variant.id)):
                best_variant, best_fitness = variant, score
        history.append((max(scores), sum(scores) / len(scores)))

    return SearchResult(
        best_variant=best_variant,
        best_fitness=best_fitness,
        history=tuple(history),
        evaluations=evaluations,
    )
