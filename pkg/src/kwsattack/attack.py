"""
Genetic search for adversarial clips against a black-box classifier.

The engine only ever calls ``oracle.predict(clip)`` (or the batched
``oracle.predict_many(clips)`` when the oracle offers it). Every candidate
keeps the high byte of each sample of the original clip; ``lsb_project`` is
the single place that enforces this.

Randomness: one ``numpy`` PCG64 stream per population slot, keyed by
``SeedSequence(seed, spawn_key=(generation, slot))``. Each slot's draws
(subset and deltas at initialisation; parent picks, crossover mask and
mutation afterwards) come only from its own stream, so results do not
depend on evaluation or breeding order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .audio_io import AudioClip
from .errors import InvalidConfig, InvalidTarget
from .noise import NoiseReport, noise_metrics


@dataclass(frozen=True)
class AttackConfig:
    population_size: int = 20
    max_iter: int = 500
    temperature: float = 0.01
    mutation_prob: float = 0.005
    mutation_span: int = 255
    perturb_fraction: float = 0.1
    elite_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise InvalidConfig("population_size must be >= 1")
        if self.max_iter < 1:
            raise InvalidConfig("max_iter must be >= 1")
        if not self.temperature > 0:
            raise InvalidConfig("temperature must be > 0")
        if not 0 <= self.mutation_prob <= 1:
            raise InvalidConfig("mutation_prob must be in [0, 1]")
        if not 0 <= self.mutation_span <= 255:
            raise InvalidConfig("mutation_span must be in [0, 255]")
        if not 0 < self.perturb_fraction <= 1:
            raise InvalidConfig("perturb_fraction must be in (0, 1]")
        if not 0 <= self.elite_count < self.population_size:
            raise InvalidConfig("elite_count must be in [0, population_size)")


@dataclass
class Candidate:
    clip: AudioClip
    fitness: Optional[float] = None


@dataclass
class Population:
    members: List[Candidate]
    generation: int = 0

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class Goal:
    """``targeted``: maximise P(label). Otherwise minimise P(label) (label = source)."""

    label: int
    targeted: bool = True
    source: Optional[int] = None  # original's classification, when known

    @classmethod
    def target(cls, t: int, source: Optional[int] = None) -> "Goal":
        return cls(int(t), True, source)

    @classmethod
    def untargeted(cls, source: int) -> "Goal":
        return cls(int(source), False, int(source))

    def reached(self, probs: np.ndarray) -> bool:
        top = int(np.argmax(probs))
        return top == self.label if self.targeted else top != self.label


@dataclass(frozen=True)
class AttackResult:
    adversarial: AudioClip
    success: bool
    iterations_used: int
    queries_used: int
    source_label: int
    target_label: Optional[int]  # None for untargeted attacks
    noise: NoiseReport
    best_fitness: List[float] = field(default_factory=list, repr=False)
    final_probs: Optional[np.ndarray] = field(default=None, repr=False)


def slot_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, slot)))


def lsb_project(original: AudioClip, candidate) -> AudioClip:
    """Clamp each sample into the 256-value window sharing the original's high byte."""
    orig = np.asarray(original.samples, dtype=np.int32)
    cand = np.asarray(getattr(candidate, "samples", candidate), dtype=np.int64)
    if cand.shape != orig.shape:
        raise ValueError("original and candidate lengths differ")
    base = (orig >> 8) << 8
    return original.with_samples(np.clip(cand, base, base + 255).astype(np.int16))


def satisfies_lsb(original: AudioClip, candidate: AudioClip) -> bool:
    a = np.asarray(original.samples, dtype=np.int32) >> 8
    b = np.asarray(candidate.samples, dtype=np.int32) >> 8
    return bool(np.array_equal(a, b))


def initialize_population(original: AudioClip, config: AttackConfig,
                          rng_seed: Optional[int] = None) -> Population:
    """Slot 0 is the untouched original; other slots perturb a fresh random subset."""
    seed = config.seed if rng_seed is None else rng_seed
    n = len(original)
    k = max(1, math.ceil(config.perturb_fraction * n))
    base = np.asarray(original.samples, dtype=np.int64)
    members = [Candidate(original)]
    for slot in range(1, config.population_size):
        rng = slot_rng(seed, 0, slot)
        idx = rng.choice(n, size=k, replace=False)
        x = base.copy()
        x[idx] += rng.integers(-config.mutation_span, config.mutation_span + 1, size=k)
        members.append(Candidate(lsb_project(original, x)))
    return Population(members, 0)


def query_oracle(oracle, clips: Sequence[AudioClip]) -> np.ndarray:
    batched = getattr(oracle, "predict_many", None)
    if batched is not None:
        return np.asarray(batched(list(clips)), dtype=np.float64)
    return np.stack([np.asarray(oracle.predict(c), dtype=np.float64) for c in clips])


def fitness_from_probs(probs: np.ndarray, goal: Goal) -> np.ndarray:
    p = probs[:, goal.label]
    return p.copy() if goal.targeted else 1.0 - p


def compute_fitness(population: Population, oracle, goal: Goal) -> np.ndarray:
    """One oracle query per member; also stores each member's fitness."""
    probs = query_oracle(oracle, [m.clip for m in population.members])
    scores = fitness_from_probs(probs, goal)
    for m, s in zip(population.members, scores):
        m.fitness = float(s)
    return scores


def selection_probs(scores, temperature: float) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def crossover(parent1: Candidate, parent2: Candidate, rng: np.random.Generator) -> Candidate:
    a = parent1.clip.samples
    b = parent2.clip.samples
    if a.shape != b.shape:
        raise ValueError("parents differ in length")
    take_first = rng.random(a.shape[0]) < 0.5
    return Candidate(parent1.clip.with_samples(np.where(take_first, a, b)))


def mutate(child: Candidate, config: AttackConfig, rng: np.random.Generator,
           original: AudioClip) -> Candidate:
    """Per-sample noise with probability ``mutation_prob``, then re-projected onto ``original``."""
    x = np.asarray(child.clip.samples, dtype=np.int64)
    hit = np.flatnonzero(rng.random(x.shape[0]) < config.mutation_prob)
    if hit.size == 0:
        return Candidate(child.clip)
    x = x.copy()
    x[hit] += rng.integers(-config.mutation_span, config.mutation_span + 1, size=hit.size)
    return Candidate(lsb_project(original, x))


def next_generation(population: Population, scores: np.ndarray, original: AudioClip,
                    config: AttackConfig) -> Population:
    members = population.members
    gen = population.generation + 1
    order = np.argsort(-np.asarray(scores), kind="stable")
    new = [Candidate(members[i].clip) for i in order[:config.elite_count]]
    probs = selection_probs(scores, config.temperature)
    for slot in range(config.elite_count, config.population_size):
        rng = slot_rng(config.seed, gen, slot)
        i, j = rng.choice(len(members), size=2, replace=True, p=probs)
        child = crossover(members[i], members[j], rng)
        new.append(mutate(child, config, rng, original))
    return Population(new, gen)


def _run(original: AudioClip, oracle, config: AttackConfig, goal_for) -> AttackResult:
    population = initialize_population(original, config)
    history: List[float] = []
    goal = None
    best_clip, best_probs, success = original, None, False
    iters = 0
    while iters < config.max_iter:
        probs = query_oracle(oracle, [m.clip for m in population.members])
        iters += 1
        if goal is None:
            # slot 0 is the original clip: validates the request without an extra query
            goal = goal_for(probs[0])
        scores = fitness_from_probs(probs, goal)
        for m, s in zip(population.members, scores):
            m.fitness = float(s)
        best = int(np.argmax(scores))
        history.append(float(scores[best]))
        best_clip, best_probs = population.members[best].clip, probs[best]
        if goal.reached(best_probs):
            success = True
            break
        if iters < config.max_iter:
            population = next_generation(population, scores, original, config)
    return AttackResult(
        adversarial=best_clip,
        success=success,
        iterations_used=iters,
        queries_used=iters * config.population_size,
        source_label=goal.source,
        target_label=goal.label if goal.targeted else None,
        noise=noise_metrics(original, best_clip),
        best_fitness=history,
        final_probs=best_probs,
    )


def run_targeted_attack(original: AudioClip, target: int, model,
                        config: AttackConfig = AttackConfig()) -> AttackResult:
    """Search until the best member is classified as ``target`` or ``max_iter`` runs out."""

    def goal_for(p0):
        k = len(p0)
        if not 0 <= int(target) < k:
            raise InvalidTarget(f"target index {target} outside [0, {k})")
        current = int(np.argmax(p0))
        if current == int(target):
            raise InvalidTarget(f"original is already classified as target {target}")
        return Goal.target(target, source=current)

    return _run(original, model, config, goal_for)


def run_untargeted_attack(original: AudioClip, model, config: AttackConfig = AttackConfig(),
                          source: Optional[int] = None) -> AttackResult:
    """Search until the best member leaves the source class.

    ``source`` defaults to the model's current classification of ``original``;
    when given, the original must be classified as it.
    """

    def goal_for(p0):
        current = int(np.argmax(p0))
        if source is not None and current != int(source):
            raise InvalidTarget(
                f"original is classified as {current}, not its source label {source}")
        return Goal.untargeted(current)

    return _run(original, model, config, goal_for)
