"""Real-valued generational GA over normalized genotypes.

Randomness is drawn from streams keyed by ``(seed, purpose, generation,
slot)``, so a child depends only on the parent population and its own slot.
Evaluation order and worker count therefore never change the outcome.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalDivergence
from .network import Genotype, genotype_length, layout

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "spikebalance.checkpoint/1"
WORST_FITNESS = -1.0

_INIT, _BREED = 1, 2


@dataclass(frozen=True)
class EAConfig:
    pop_size: int = 100
    generations: int = 100
    elite_fraction: float = 0.1
    mutation_std: float = 0.05
    mutation_prob: float = 0.3
    crossover_prob: float = 0.5
    tournament_size: int = 3
    flag_redraw_prob: float = 0.05
    seed: int = 0
    n_inter: int = 2

    def __post_init__(self):
        if self.pop_size < 2:
            raise ConfigError(f"ea.pop_size must be >= 2, got {self.pop_size}")
        if self.generations < 0:
            raise ConfigError(f"ea.generations must be >= 0, got {self.generations}")
        if not 0.0 <= self.elite_fraction <= 1.0:
            raise ConfigError(f"ea.elite_fraction must be in [0, 1], got {self.elite_fraction}")
        if self.mutation_std < 0:
            raise ConfigError(f"ea.mutation_std must be >= 0, got {self.mutation_std}")
        for name in ("mutation_prob", "crossover_prob", "flag_redraw_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"ea.{name} must be in [0, 1], got {getattr(self, name)}")
        if self.tournament_size < 1:
            raise ConfigError(f"ea.tournament_size must be >= 1, got {self.tournament_size}")

    @property
    def n_elite(self):
        if self.elite_fraction <= 0:
            return 0
        return min(self.pop_size, max(1, int(round(self.elite_fraction * self.pop_size))))


@dataclass(frozen=True)
class Individual:
    genotype: Genotype
    fitness: float | None = None

    @property
    def evaluated(self):
        return self.fitness is not None


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best: float
    mean: float
    std: float
    evaluations: int


def stream(seed, purpose, generation, slot):
    return np.random.default_rng([int(seed), purpose, int(generation), int(slot)])


def init_population(cfg):
    n_genes = genotype_length(cfg.n_inter)
    return [Individual(Genotype(stream(cfg.seed, _INIT, 0, k).random(n_genes), cfg.n_inter))
            for k in range(cfg.pop_size)]


class Evaluator:
    """Maps genotypes to fitness, optionally across worker processes.

    Results come back in input order whatever the worker count.
    """

    def __init__(self, fn, workers=1):
        self.fn = fn
        self.workers = max(1, int(workers))
        self._pool = None

    def __call__(self, genotypes):
        genotypes = list(genotypes)
        if self.workers == 1 or len(genotypes) < 2:
            return [_safe_eval(self.fn, g) for g in genotypes]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.workers)
        chunk = max(1, math.ceil(len(genotypes) / (4 * self.workers)))
        return list(self._pool.map(_safe_eval, [self.fn] * len(genotypes), genotypes,
                                   chunksize=chunk))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _safe_eval(fn, genotype):
    try:
        value = float(fn(genotype))
    except (NumericalDivergence, FloatingPointError, OverflowError) as err:
        log.warning("evaluation diverged, scoring %s: %s", WORST_FITNESS, err)
        return WORST_FITNESS
    if not math.isfinite(value):
        log.warning("non-finite fitness %r, scoring %s", value, WORST_FITNESS)
        return WORST_FITNESS
    return value


def _as_evaluator(evaluate):
    return evaluate if isinstance(evaluate, Evaluator) else Evaluator(evaluate)


def evaluate_population(pop, evaluate):
    """Score every unevaluated individual; returns (population, evaluations)."""
    evaluate = _as_evaluator(evaluate)
    todo = [i for i, ind in enumerate(pop) if not ind.evaluated]
    scores = evaluate([pop[i].genotype for i in todo])
    pop = list(pop)
    for i, f in zip(todo, scores):
        pop[i] = replace(pop[i], fitness=f)
    return pop, len(todo)


def ranked(pop):
    """Best first; ties keep population order."""
    return sorted(pop, key=lambda ind: -ind.fitness)


def _tournament(rng, fitness, size):
    idx = rng.integers(0, len(fitness), size)
    # lowest index wins ties
    best = idx[0]
    for i in idx[1:]:
        if fitness[i] > fitness[best] or (fitness[i] == fitness[best] and i < best):
            best = i
    return best


def breed(parents, cfg, generation, slot):
    """One child for ``slot`` of the next generation."""
    rng = stream(cfg.seed, _BREED, generation, slot)
    genes = np.stack([p.genotype.genes for p in parents])
    fitness = np.array([p.fitness for p in parents])
    lay = layout(cfg.n_inter)
    flags = np.zeros(genes.shape[1], dtype=bool)
    flags[lay["flag"]] = True

    child = genes[_tournament(rng, fitness, cfg.tournament_size)].copy()
    if rng.random() < cfg.crossover_prob:
        mate = genes[_tournament(rng, fitness, cfg.tournament_size)]
        take = rng.random(child.size) < 0.5
        child[take] = mate[take]
    hit = (rng.random(child.size) < cfg.mutation_prob) & ~flags
    noise = rng.normal(0.0, 1.0, child.size) * cfg.mutation_std
    child[hit] += noise[hit]
    redraw = (rng.random(child.size) < cfg.flag_redraw_prob) & flags
    child[redraw] = rng.random(child.size)[redraw]
    np.clip(child, 0.0, 1.0, out=child)
    return Individual(Genotype(child, cfg.n_inter))


def _stats(generation, pop, evaluations):
    f = np.array([ind.fitness for ind in pop])
    return GenerationStats(generation, float(f.max()), float(f.mean()), float(f.std()),
                           evaluations)


def step_generation(pop, evaluate, cfg, generation=0):
    """Evaluate ``pop`` and breed its successor.

    Returns ``(next_population, stats)`` where the stats describe ``pop``.
    Elites are carried over with their fitness, so they are never rescored.
    """
    pop, n_eval = evaluate_population(pop, evaluate)
    stats = _stats(generation, pop, n_eval)
    top = sorted(range(len(pop)), key=lambda i: -pop[i].fitness)[:cfg.n_elite]
    elites = [pop[i] for i in sorted(top)]
    children = [breed(pop, cfg, generation, slot)
                for slot in range(len(elites), cfg.pop_size)]
    return elites + children, stats


@dataclass
class EvolutionResult:
    best: Individual
    history: list = field(default_factory=list)
    population: list = field(default_factory=list)


def _write_checkpoint(path, generation, pop, history, cfg):
    best = ranked([p for p in pop if p.evaluated])[0] if any(p.evaluated for p in pop) else None
    data = {
        "schema": CHECKPOINT_SCHEMA,
        "config": asdict(cfg),
        "generation": generation,
        "population": [{"genes_hex": [float(g).hex() for g in ind.genotype.genes],
                        "fitness": ind.fitness} for ind in pop],
        "history": [asdict(h) for h in history],
        "best": None if best is None else best.genotype.to_dict(fitness=best.fitness),
    }
    tmp = Path(path).with_suffix(".tmp")
    tmp.write_text(json.dumps(data) + "\n")
    tmp.replace(path)


def _read_checkpoint(path, cfg):
    data = json.loads(Path(path).read_text())
    if data.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"{path}: not a checkpoint file")
    if data["config"] != asdict(cfg):
        raise ConfigError(f"{path}: checkpoint was written with a different EA config")
    pop = [Individual(Genotype(np.array([float.fromhex(h) for h in d["genes_hex"]]), cfg.n_inter),
                      d["fitness"]) for d in data["population"]]
    history = [GenerationStats(**h) for h in data["history"]]
    return data["generation"], pop, history


def run_evolution(cfg, evaluate, checkpoint=None, on_generation=None):
    """Run ``cfg.generations`` rounds of selection and variation.

    The history has one row per generation ``0..generations``; the last row
    scores the final population. With ``checkpoint`` set, state is written
    after every generation and an existing file is resumed from.
    """
    evaluate = _as_evaluator(evaluate)
    start, pop, history = 0, init_population(cfg), []
    if checkpoint is not None and Path(checkpoint).exists():
        start, pop, history = _read_checkpoint(checkpoint, cfg)
        log.info("resuming from generation %d", start)

    for gen in range(start, cfg.generations):
        pop, stats = step_generation(pop, evaluate, cfg, gen)
        history.append(stats)
        if on_generation is not None:
            on_generation(stats)
        if checkpoint is not None:
            _write_checkpoint(checkpoint, gen + 1, pop, history, cfg)

    if len(history) == cfg.generations:
        pop, n_eval = evaluate_population(pop, evaluate)
        stats = _stats(cfg.generations, pop, n_eval)
        history.append(stats)
        if on_generation is not None:
            on_generation(stats)
        if checkpoint is not None:
            _write_checkpoint(checkpoint, cfg.generations, pop, history, cfg)
    best = ranked(pop)[0]
    return EvolutionResult(best, history, pop)
