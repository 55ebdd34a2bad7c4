"""Genetic programming over behavior trees.

Tournament selection, subtree crossover, three mutation operators (node
mutation, node addition, node deletion) and elitism, driven by an episode
budget: every evaluation of a newly generated tree is one episode.
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from evobt.bt import (
    LEAF_TYPES,
    BTNode,
    Fallback,
    Parallel,
    Sequence,
    SkillRegistry,
    count_nodes,
    depth,
    get_subtree,
    insert_child,
    iter_paths,
    random_tree,
    replace_subtree,
)
from evobt.fitness import EvalConfig, FitnessReport, evaluate
from evobt.text import serialize
from evobt.world import get_profile

MUTATION_KINDS = ("node_mutation", "node_addition", "node_deletion")


class ConfigError(ValueError):
    pass


class EmptyPopulation(ValueError):
    pass


@dataclass(frozen=True)
class GPConfig:
    population_size: int = 30
    episode_budget: int = 8000
    crossover_prob: float = 0.40
    mutation_prob: float = 0.60
    elitism_fraction: float = 0.10
    mutation_split: dict = field(default_factory=lambda: {
        "node_mutation": 0.30, "node_addition": 0.40, "node_deletion": 0.30,
    })
    tournament_size: int = 3
    max_nodes: int = 25
    max_depth: int = 7
    allow_parallel: bool = False
    init_max_depth: int = 3
    max_generations: int = 8000
    target_J: Optional[float] = None
    max_retries: int = 10
    allow_identical: bool = False

    __hash__ = object.__hash__

    def check(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.episode_budget < 1:
            raise ConfigError("episode_budget must be >= 1")
        if not math.isclose(self.crossover_prob + self.mutation_prob, 1.0, abs_tol=1e-9):
            raise ConfigError("crossover_prob + mutation_prob must equal 1")
        if set(self.mutation_split) != set(MUTATION_KINDS):
            raise ConfigError(f"mutation_split keys must be {MUTATION_KINDS}")
        if any(v < 0 for v in self.mutation_split.values()) or not math.isclose(
                sum(self.mutation_split.values()), 1.0, abs_tol=1e-9):
            raise ConfigError("mutation_split must be nonnegative and sum to 1")
        if not 0.0 <= self.elitism_fraction < 1.0:
            raise ConfigError("elitism_fraction must be in [0, 1)")
        if self.tournament_size < 2:
            raise ConfigError("tournament_size must be >= 2")
        if self.max_nodes < 1 or self.max_depth < 1 or self.init_max_depth < 1:
            raise ConfigError("structural caps must be positive")
        if self.init_max_depth > self.max_depth:
            raise ConfigError("init_max_depth cannot exceed max_depth")
        if self.max_generations < 0 or self.max_retries < 0:
            raise ConfigError("max_generations and max_retries must be nonnegative")

    @property
    def elite_count(self) -> int:
        return math.ceil(self.elitism_fraction * self.population_size)


@dataclass(frozen=True)
class Individual:
    tree: BTNode
    report: FitnessReport
    key: str

    @classmethod
    def of(cls, tree: BTNode, report: FitnessReport) -> "Individual":
        return cls(tree, report, serialize(tree))

    @property
    def J(self) -> float:
        return self.report.mean_J

    @property
    def nodes(self) -> int:
        return count_nodes(self.tree)


def rank_key(ind: Individual) -> tuple:
    """Sort key: higher J first, then fewer nodes, then smaller key."""
    return (-ind.J, ind.nodes, ind.key)


@dataclass(frozen=True)
class TraceRow:
    episode: int
    best_J: float
    best_key: str
    generation: int
    best_nodes: int


@dataclass
class EvolutionTrace:
    rows: list = field(default_factory=list)
    generations: int = 0
    crossover_draws: int = 0
    mutation_draws: int = 0
    mutation_kinds: dict = field(default_factory=lambda: dict.fromkeys(MUTATION_KINDS, 0))

    def episodes_to(self, target: float) -> Optional[int]:
        """First episode index at which the best-so-far reaches ``target``."""
        for row in self.rows:
            if row.best_J >= target:
                return row.episode
        return None

    @property
    def best_J(self) -> float:
        return self.rows[-1].best_J if self.rows else -math.inf


def fits(tree: BTNode, cfg: GPConfig) -> bool:
    return count_nodes(tree) <= cfg.max_nodes and depth(tree) <= cfg.max_depth


def tournament_select(population: list, k: int, rng: random.Random) -> Individual:
    if not population:
        raise EmptyPopulation("cannot select from an empty population")
    if k < 1:
        raise ValueError("tournament size must be >= 1")
    n = len(population)
    return min((population[rng.randrange(n)] for _ in range(k)), key=rank_key)


def crossover(parent_a: BTNode, parent_b: BTNode, rng: random.Random,
              cfg: GPConfig = GPConfig()) -> tuple:
    """Swap uniformly chosen subtrees of the two parents."""
    paths_a = list(iter_paths(parent_a))
    paths_b = list(iter_paths(parent_b))
    for _ in range(cfg.max_retries + 1):
        pa, pb = rng.choice(paths_a), rng.choice(paths_b)
        sub_a, sub_b = get_subtree(parent_a, pa), get_subtree(parent_b, pb)
        child_a = replace_subtree(parent_a, pa, sub_b)
        child_b = replace_subtree(parent_b, pb, sub_a)
        ok_a, ok_b = fits(child_a, cfg), fits(child_b, cfg)
        if ok_a and ok_b:
            return child_a, child_b
    return (child_a if ok_a else parent_a), (child_b if ok_b else parent_b)


def _control_kinds(cfg: GPConfig) -> list:
    return [Sequence, Fallback, Parallel] if cfg.allow_parallel else [Sequence, Fallback]


def _fresh_control(kind, children, rng):
    children = tuple(children)
    if kind is Parallel:
        return Parallel(rng.randint(1, len(children)), children)
    return kind(children)


def _node_mutation(tree, cfg, leaves, rng):
    path = rng.choice(list(iter_paths(tree)))
    node = get_subtree(tree, path)
    if isinstance(node, LEAF_TYPES):
        choices = [leaf for leaf in leaves if leaf != node]
        new = rng.choice(choices)
    else:
        kinds = [k for k in _control_kinds(cfg) if k is not type(node)]
        if not node.children:
            kinds = [k for k in kinds if k is not Parallel]
        new = _fresh_control(rng.choice(kinds), node.children, rng)
    return replace_subtree(tree, path, new)


def _node_addition(tree, cfg, leaves, rng):
    leaf = rng.choice(leaves)
    if isinstance(tree, LEAF_TYPES):
        children = [tree, leaf] if rng.random() < 0.5 else [leaf, tree]
        return _fresh_control(rng.choice(_control_kinds(cfg)), children, rng)
    controls = [p for p in iter_paths(tree) if not isinstance(get_subtree(tree, p), LEAF_TYPES)]
    path = rng.choice(controls)
    parent = get_subtree(tree, path)
    return insert_child(tree, path, rng.randint(0, len(parent.children)), leaf)


def _node_deletion(tree, cfg, leaves, rng):
    paths = list(iter_paths(tree))[1:]
    if not paths:
        # nothing below the root: swap the lone leaf for another
        return rng.choice([leaf for leaf in leaves if leaf != tree])
    path = rng.choice(paths)
    parent_path = path[:-1]
    parent = get_subtree(tree, parent_path)
    children = parent.children[:path[-1]] + parent.children[path[-1] + 1:]
    if not children:
        new_parent = rng.choice(leaves)
    elif isinstance(parent, Parallel):
        new_parent = Parallel(min(parent.z, len(children)), children)
    else:
        new_parent = type(parent)(children)
    return replace_subtree(tree, parent_path, new_parent)


_OPERATORS = {
    "node_mutation": _node_mutation,
    "node_addition": _node_addition,
    "node_deletion": _node_deletion,
}


def choose_mutation_kind(cfg: GPConfig, rng: random.Random) -> str:
    r = rng.random()
    acc = 0.0
    for kind in MUTATION_KINDS:
        acc += cfg.mutation_split[kind]
        if r < acc:
            return kind
    return MUTATION_KINDS[-1]


def mutate_with_kind(tree: BTNode, cfg: GPConfig, registry: SkillRegistry,
                     rng: random.Random, leaves: Optional[list] = None) -> tuple:
    """Apply one randomly chosen mutation; returns (offspring, kind)."""
    if leaves is None:
        leaves = registry.leaves()
    kind = choose_mutation_kind(cfg, rng)
    op = _OPERATORS[kind]
    for _ in range(cfg.max_retries + 1):
        child = op(tree, cfg, leaves, rng)
        if fits(child, cfg):
            return child, kind
    return tree, kind


def mutate(tree: BTNode, cfg: GPConfig, registry: SkillRegistry, rng: random.Random,
           leaves: Optional[list] = None) -> BTNode:
    return mutate_with_kind(tree, cfg, registry, rng, leaves)[0]


def gate_seeds(candidates: Iterable, evaluator: Callable[[BTNode], FitnessReport],
               threshold: float) -> list:
    """Keep, in order, the candidates whose mean fitness reaches ``threshold``."""
    passed = []
    for tree in candidates:
        report = evaluator(tree)
        if report.mean_J >= threshold:
            passed.append(Individual.of(tree, report))
    return passed


def empty_tree_threshold(eval_cfg: EvalConfig) -> float:
    """Deterministic fitness of the empty Sequence: the default seed gate."""
    det_cfg = replace(eval_cfg, profile=get_profile("det"))
    return evaluate(Sequence(), det_cfg).mean_J


class _Stop(Exception):
    pass


class Evolution:
    """One evolutionary run. Use :func:`evolve` unless you need the internals."""

    def __init__(self, cfg: GPConfig, eval_cfg: EvalConfig, master_seed: int = 0,
                 registry: Optional[SkillRegistry] = None, on_episode: Optional[Callable] = None):
        cfg.check()
        self.cfg = cfg
        self.eval_cfg = eval_cfg
        self.master_seed = master_seed
        self.registry = registry or eval_cfg.registry or SkillRegistry.default(eval_cfg.scenario.tables)
        self.leaves = self.registry.leaves()
        self.rng = random.Random(master_seed)
        self.trace = EvolutionTrace()
        self.cache: dict = {}
        self.episodes = 0
        self.generation = 0
        self.best: Optional[Individual] = None
        self.on_episode = on_episode

    # -- evaluation ----------------------------------------------------
    def _eval_seed(self) -> int:
        if self.eval_cfg.deterministic:
            return self.eval_cfg.master_seed
        # fresh rollouts per evaluation so re-evaluating a key is meaningful
        text = f"{self.eval_cfg.master_seed}|{self.master_seed}|{self.episodes}"
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")

    def report_for(self, tree: BTNode) -> FitnessReport:
        key = serialize(tree)
        if self.eval_cfg.deterministic and key in self.cache:
            return self.cache[key]
        if self.episodes >= self.cfg.episode_budget:
            raise _Stop
        self.episodes += 1
        report = evaluate(tree, self.eval_cfg, self._eval_seed())
        if self.eval_cfg.deterministic:
            self.cache[key] = report
        ind = Individual(tree, report, key)
        if self.best is None or rank_key(ind) < rank_key(self.best):
            self.best = ind
        row = TraceRow(self.episodes, self.best.J, self.best.key, self.generation, self.best.nodes)
        self.trace.rows.append(row)
        if self.on_episode:
            self.on_episode(row)
        if self.cfg.target_J is not None and self.best.J >= self.cfg.target_J:
            raise _Stop
        return report

    def individual(self, tree: BTNode) -> Individual:
        return Individual.of(tree, self.report_for(tree))

    # -- loop ----------------------------------------------------------
    def initial_population(self, seeds, threshold) -> list:
        pop = []
        if seeds:
            if threshold is None:
                threshold = empty_tree_threshold(self.eval_cfg)
            survivors = []
            for tree in seeds:
                if len(survivors) >= self.cfg.population_size:
                    break
                survivors.extend(gate_seeds([tree], self.report_for, threshold))
            pop.extend(survivors)
        while len(pop) < self.cfg.population_size:
            tree = random_tree(self.rng, self.registry, self.cfg.init_max_depth,
                               self.cfg.allow_parallel, leaves=self.leaves)
            pop.append(self.individual(tree))
        return pop

    def next_generation(self, pop: list) -> list:
        cfg = self.cfg
        ranked = sorted(pop, key=rank_key)
        new, seen = [], set()
        for ind in ranked:
            if len(new) == cfg.elite_count:
                break
            if cfg.allow_identical or ind.key not in seen:
                new.append(ind)
                seen.add(ind.key)
        # bound on rejected duplicates before identical offspring are let in
        patience = 10 * cfg.population_size
        while len(new) < cfg.population_size:
            if self.rng.random() < cfg.crossover_prob:
                self.trace.crossover_draws += 1
                pa = tournament_select(pop, cfg.tournament_size, self.rng)
                pb = tournament_select(pop, cfg.tournament_size, self.rng)
                # one offspring per slot, so crossover_prob is the share of
                # offspring made by crossover
                children = crossover(pa.tree, pb.tree, self.rng, cfg)[:1]
            else:
                self.trace.mutation_draws += 1
                parent = tournament_select(pop, cfg.tournament_size, self.rng)
                child, kind = mutate_with_kind(parent.tree, cfg, self.registry, self.rng, self.leaves)
                self.trace.mutation_kinds[kind] += 1
                children = (child,)
            for child in children:
                key = serialize(child)
                if key in seen and not cfg.allow_identical and patience > 0:
                    patience -= 1
                    continue
                seen.add(key)
                new.append(Individual(child, self.report_for(child), key))
        return new

    def run(self, seeds=None, threshold=None) -> tuple:
        try:
            pop = self.initial_population(seeds, threshold)
            while self.generation < self.cfg.max_generations:
                self.generation += 1
                pop = self.next_generation(pop)
                self.trace.generations = self.generation
        except _Stop:
            self.trace.generations = self.generation
        return self.best, self.trace


def evolve(cfg: GPConfig, eval_cfg: EvalConfig, seeds: Optional[list] = None,
           master_seed: int = 0, threshold: Optional[float] = None,
           registry: Optional[SkillRegistry] = None, on_episode=None) -> tuple:
    """Run one evolution and return ``(best_individual, trace)``.

    ``seeds`` are gated at ``threshold`` (default: fitness of the empty tree)
    before entering the initial population; gate evaluations consume budget.
    """
    run = Evolution(cfg, eval_cfg, master_seed, registry, on_episode)
    return run.run(seeds, threshold)
