"""Black-box feature-space evasion attack driven by a genetic algorithm.

An individual is a fixed-length integer vector of manipulations. Gene ``j >= 0``
adds feature ``j``; gene ``~j`` (that is ``-j - 1``) removes feature ``j``, so
feature 0 stays expressible in both directions. Fitness is the target's
malware score and is minimised.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from ._validation import check_binary_matrix
from .features import SparseBinaryVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManipulationSpace:
    addable: np.ndarray
    removable: np.ndarray

    @property
    def genes(self):
        return np.concatenate([self.addable, ~self.removable]).astype(np.int64)

    def __len__(self):
        return int(self.addable.size + self.removable.size)

    def contains(self, genes):
        genes = np.asarray(genes, dtype=np.int64)
        return np.where(genes >= 0, np.isin(genes, self.addable), np.isin(~genes, self.removable))


@dataclass
class GaConfig:
    population_size: int = 100
    generations: int = 50
    tournament_size: int = 3
    crossover_prob: float = 0.7
    mutation_prob: float = 1.0
    per_gene_mutation_prob: Optional[float] = None  # None means 1 / budget
    early_stop: bool = True
    seed: int = 0

    def validate(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in [1, population_size]")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("crossover_prob", "mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class AttackResult:
    best_individual: np.ndarray
    best_score: float
    evaded: bool
    generations_run: int
    query_count: int
    adversarial: SparseBinaryVector
    history: List[float] = field(default_factory=list)


def _row_indices(x):
    if isinstance(x, SparseBinaryVector):
        return np.asarray(x.indices, dtype=np.int64), x.dimension
    X = check_binary_matrix(x)
    if X.shape[0] != 1:
        raise ValueError("expected a single sample")
    return np.sort(X.indices.astype(np.int64)), X.shape[1]


def build_manipulation_space(goodware, feature_space, x):
    """Additions come from goodware features absent in ``x``; removals are the
    features of ``x`` whose category allows removal."""
    active, d = _row_indices(x)
    if d != feature_space.dimension:
        raise ValueError("target dimension differs from the feature space")
    G = check_binary_matrix(goodware, d)
    if G.shape[0] == 0:
        raise ValueError("goodware pool is empty")
    pool = np.unique(G.indices).astype(np.int64)
    addable = np.setdiff1d(pool, active)
    add_only = feature_space.add_only_mask()
    removable = active[~add_only[active]]
    if addable.size + removable.size == 0:
        raise ValueError("empty manipulation space")
    return ManipulationSpace(addable, removable)


def init_population(space, budget, config, rng):
    """Uniform genes, 90% additions when both kinds exist."""
    n, P = len(space), config.population_size
    if n == 0:
        raise ValueError("empty manipulation space")
    if space.addable.size and space.removable.size:
        use_add = rng.random((P, budget)) < 0.9
        adds = space.addable[rng.integers(space.addable.size, size=(P, budget))]
        rems = ~space.removable[rng.integers(space.removable.size, size=(P, budget))]
        return np.where(use_add, adds, rems).astype(np.int64)
    genes = space.genes
    return genes[rng.integers(genes.size, size=(P, budget))]


def apply_manipulations(x, individual):
    """Set semantics: additions insert, removals erase, repeats are idempotent."""
    active, d = _row_indices(x)
    return SparseBinaryVector(tuple(_apply(active, individual).tolist()), d)


def _apply(active, genes):
    genes = np.asarray(genes, dtype=np.int64)
    out = np.union1d(active, genes[genes >= 0])
    return np.setdiff1d(out, ~genes[genes < 0], assume_unique=True)


class _CountingOracle:
    def __init__(self, oracle, active, d, budget):
        self.oracle = oracle
        self.active = active
        self.d = d
        self.budget = budget
        self.queries = 0

    def __call__(self, individuals):
        rows = [_apply(self.active, ind) for ind in individuals]
        for r in rows:
            # every candidate stays inside the budget
            changed = np.setxor1d(r, self.active).size
            assert changed <= self.budget, "candidate exceeds the manipulation budget"
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([r.size for r in rows])
        data = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        X = sp.csr_matrix((np.ones(data.size), data, indptr), shape=(len(rows), self.d))
        self.queries += len(rows)
        return np.asarray(self.oracle(X), dtype=np.float64).ravel()


def fitness(oracle, x, individual):
    """Score of ``x`` after applying ``individual``; lower is better for the attacker."""
    active, d = _row_indices(x)
    return float(_CountingOracle(oracle, active, d, len(individual))([individual])[0])


def crossover(a, b, rng, prob=1.0, swap_mask=None):
    """Swap a uniformly random subset of positions between two parents."""
    a, b = np.array(a, copy=True), np.array(b, copy=True)
    if a.shape != b.shape:
        raise ValueError("parents differ in length")
    if swap_mask is None:
        if rng.random() >= prob:
            return a, b
        swap_mask = rng.random(a.shape[0]) < 0.5
    swap_mask = np.asarray(swap_mask, dtype=bool)
    a[swap_mask], b[swap_mask] = b[swap_mask], a[swap_mask].copy()
    return a, b


def mutate(individual, space, rng, per_gene_prob):
    """Replace each gene with probability ``per_gene_prob`` by a different valid gene."""
    genes = space.genes
    if genes.size < 2:
        raise ValueError("mutation needs at least two genes in the space")
    out = np.array(individual, copy=True)
    hit = np.flatnonzero(rng.random(out.shape[0]) < per_gene_prob)
    if hit.size == 0:
        return out
    pos = {int(g): i for i, g in enumerate(genes)}
    for i in hit:
        cur = pos[int(out[i])]
        r = int(rng.integers(genes.size - 1))
        out[i] = genes[r + 1 if r >= cur else r]
    return out


def tournament_select(fitnesses, size, rng):
    """Index of the fittest (lowest) of ``size`` contestants drawn with replacement."""
    fitnesses = np.asarray(fitnesses)
    contestants = rng.integers(fitnesses.shape[0], size=size)
    return int(contestants[np.argmin(fitnesses[contestants])])


def run_attack(oracle, x, budget, space, config=None, threshold=0.5):
    """Evolve manipulations of ``x`` that lower ``oracle``'s score.

    ``oracle`` maps a CSR batch to malware scores; a candidate evades when
    its score falls below ``threshold``. The best individual ever evaluated
    is reported.
    """
    config = config or GaConfig()
    config.validate()
    active, d = _row_indices(x)
    counting = _CountingOracle(oracle, active, d, budget)
    if len(space) == 0 or budget < 1:
        score = float(counting([np.empty(0, dtype=np.int64)])[0])
        return AttackResult(np.empty(0, dtype=np.int64), score, score < threshold, 0,
                            counting.queries, SparseBinaryVector(tuple(active.tolist()), d),
                            [score])
    rng = np.random.default_rng(config.seed)
    per_gene = config.per_gene_mutation_prob
    if per_gene is None:
        per_gene = 1.0 / budget
    can_mutate = len(space) >= 2

    pop = init_population(space, budget, config, rng)
    fit = counting(pop)
    b = int(np.argmin(fit))
    best, best_score = pop[b].copy(), float(fit[b])
    history = [best_score]
    gens = 0
    P = config.population_size
    while gens < config.generations and not (config.early_stop and best_score < threshold):
        parents = [tournament_select(fit, config.tournament_size, rng) for _ in range(P)]
        off = pop[parents].copy()
        off_fit = fit[parents].copy()
        dirty = np.zeros(P, dtype=bool)
        for i in range(0, P - 1, 2):
            if rng.random() < config.crossover_prob:
                off[i], off[i + 1] = crossover(off[i], off[i + 1], rng)
                dirty[i] = dirty[i + 1] = True
        if can_mutate:
            for i in range(P):
                if rng.random() < config.mutation_prob:
                    child = mutate(off[i], space, rng, per_gene)
                    if not np.array_equal(child, off[i]):
                        off[i] = child
                        dirty[i] = True
        redo = np.flatnonzero(dirty)
        if redo.size:
            off_fit[redo] = counting(off[redo])
        pop, fit = off, off_fit
        gens += 1
        b = int(np.argmin(fit))
        if fit[b] < best_score:
            best, best_score = pop[b].copy(), float(fit[b])
        history.append(best_score)
    adv = SparseBinaryVector(tuple(_apply(active, best).tolist()), d)
    return AttackResult(best, best_score, best_score < threshold, gens, counting.queries, adv,
                        history)


@dataclass
class AttackCampaign:
    """Per-budget TPR under attack and per-sample records."""

    tpr: Dict[int, float]
    records: List[dict]

    def to_dict(self):
        return {"tpr": {str(k): v for k, v in self.tpr.items()}, "records": self.records}

    @classmethod
    def from_dict(cls, doc):
        return cls({int(k): float(v) for k, v in doc["tpr"].items()}, list(doc["records"]))


def attack_dataset(system, malware, goodware, feature_space, budgets=(25, 50, 100),
                   config=None, threshold=None):
    """TPR of ``system`` on ``malware`` before and after budgeted attacks.

    Budget 0 reports clean TPR without running the search. Samples the system
    already misses count as misses at every budget.
    """
    config = config or GaConfig()
    if threshold is None:
        threshold = getattr(system, "threshold", 0.5)
    M = check_binary_matrix(malware, feature_space.dimension)
    G = check_binary_matrix(goodware, feature_space.dimension)
    n = M.shape[0]
    if n == 0:
        raise ValueError("no malware samples to attack")
    clean = np.asarray(system.malware_score(M), dtype=np.float64)
    detected = clean >= threshold
    pool = G[:0]
    pool_idx = np.unique(G.indices)
    if pool_idx.size:
        pool = sp.csr_matrix((np.ones(pool_idx.size), pool_idx, [0, pool_idx.size]),
                             shape=(1, feature_space.dimension))
    tpr, records = {}, []
    for budget in budgets:
        budget = int(budget)
        still = detected.copy()
        if budget > 0:
            for i in np.flatnonzero(detected):
                x = M[i]
                seed = int(np.random.SeedSequence([config.seed, budget, int(i)]).generate_state(1)[0])
                cfg = GaConfig(**{**config.__dict__, "seed": seed})
                try:
                    space = build_manipulation_space(pool, feature_space, x)
                except ValueError:
                    space = ManipulationSpace(np.empty(0, np.int64), np.empty(0, np.int64))
                res = run_attack(system.malware_score, x, budget, space, cfg, threshold)
                still[i] = not res.evaded
                rec = {"sample": int(i), "budget": budget, "evaded": bool(res.evaded),
                       "final_score": res.best_score, "queries": res.query_count,
                       "generations": res.generations_run}
                records.append(rec)
                logger.info(json.dumps(rec, sort_keys=True))
        tpr[budget] = float(still.sum() / n)
    return AttackCampaign(tpr, records)
