"""Behavior-tree evolution workbench: simulate, score and evolve BTs, optionally seeded by an LLM."""

from evobt.bt import (
    Action,
    Condition,
    Fallback,
    Parallel,
    Sequence,
    SkillRegistry,
    Status,
    count_nodes,
    random_tree,
    tick,
)
from evobt.fitness import EvalConfig, FitnessWeights, evaluate, run_episode, score
from evobt.text import ParseError, extract_tree, parse, serialize, validate

__version__ = "0.1.0"
