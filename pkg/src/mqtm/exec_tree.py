"""Execution trees: every configuration reachable under all measurement outcomes.

Nodes are configurations, arcs are labelled with outcomes and weighted by
their Born probabilities. A machine with ``k`` heads measures ``k``-qubit
observables, so a node has at most ``2^k`` children. Children are ordered
by descending eigenvalue and the tree is expanded breadth first.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .machine import (
    ZERO,
    AncillaPolicy,
    Configuration,
    MachineSpec,
    Runtime,
    _finish_step,
    _prepare_step,
    format_outcome,
    new_run,
    run,
)
from .quantum_core import MeasurementRecord, StateVector, ValidationError, outcome_distribution

DEFAULT_MIN_PATH_PROBABILITY = 1e-6


@dataclass(eq=False)
class TreeNode:
    """One configuration of the tree.

    ``observable`` is the observable the transition out of this node measures
    (``None`` at halted nodes). ``children`` maps an outcome to ``(edge
    probability, child)``. ``truncated`` marks nodes left unexpanded because
    of the depth or probability limit.
    """

    configuration: Configuration
    depth: int
    path_probability: float
    outcome_path: tuple
    runtime: Runtime
    observable: str | None = None
    children: dict = field(default_factory=dict)
    halted: bool = False
    truncated: bool = False

    @property
    def register(self) -> StateVector:
        return self.runtime.register

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self):
        """Nodes in breadth-first order (children by descending outcome)."""
        queue = deque([self])
        while queue:
            node = queue.popleft()
            yield node
            queue.extend(child for _, child in node.children.values())


def _expand(node: TreeNode) -> None:
    rt = node.runtime.copy()
    prepared = _prepare_step(rt)
    if prepared is None:
        node.halted = True
        return
    tr, cells, qubits = prepared
    obs = rt.machine.observables[tr.observable]
    node.observable = tr.observable
    branches = sorted(outcome_distribution(rt.register, obs, qubits), key=lambda b: -b[0])
    for ev, p, post in branches:
        child_rt = rt.copy()
        _finish_step(child_rt, tr, cells, MeasurementRecord(obs.name, qubits, ev, p), post)
        child = TreeNode(child_rt.config, node.depth + 1, node.path_probability * p,
                         node.outcome_path + (ev,), child_rt)
        node.children[ev] = (p, child)


def build_tree(machine: MachineSpec, input_state: StateVector | None = None, *,
               ancilla_policy: AncillaPolicy = ZERO, max_depth: int = 10,
               min_path_probability: float = DEFAULT_MIN_PATH_PROBABILITY,
               input_offset: int = 0) -> TreeNode:
    """Breadth-first execution tree of ``machine`` on ``input_state``.

    Expansion stops at halted nodes, at ``max_depth`` transitions and below
    ``min_path_probability``. Only the zero ancilla policy gives a
    well-defined tree.
    """
    if not ancilla_policy.deterministic:
        raise ValidationError("execution trees need the deterministic zero ancilla policy")
    if max_depth < 0:
        raise ValidationError("max_depth must be non-negative")
    if not 0 < min_path_probability <= 1:
        raise ValidationError("min_path_probability must lie in (0, 1]")
    rt = new_run(machine, input_state, input_offset, ancilla_policy)
    root = TreeNode(rt.config, 0, 1.0, (), rt)
    queue = deque([root])
    while queue:
        node = queue.popleft()
        if (node.configuration.state, node.configuration.last_outcome) not in machine.delta:
            node.halted = True
            continue
        if node.depth >= max_depth or node.path_probability < min_path_probability:
            node.truncated = True
            continue
        _expand(node)
        queue.extend(child for _, child in node.children.values())
    return root


def termination_probability_bounds(tree: TreeNode) -> tuple[float, float]:
    """``(lower, upper)``: halted mass, and halted mass plus the truncated frontier."""
    lower = frontier = 0.0
    for node in tree.walk():
        if node.halted:
            lower += node.path_probability
        elif node.truncated:
            frontier += node.path_probability
    lower = min(lower, 1.0)
    return lower, min(lower + frontier, 1.0)


def depth_masses(tree: TreeNode) -> list[float]:
    """For each depth d, total path probability of depth-d nodes plus leaves above d.

    Every entry equals 1 up to rounding when the tree is consistent.
    """
    by_depth: dict[int, float] = {}
    leaves_at: dict[int, float] = {}
    deepest = 0
    for node in tree.walk():
        deepest = max(deepest, node.depth)
        by_depth[node.depth] = by_depth.get(node.depth, 0.0) + node.path_probability
        if node.is_leaf:
            leaves_at[node.depth] = leaves_at.get(node.depth, 0.0) + node.path_probability
    out, above = [], 0.0
    for d in range(deepest + 1):
        out.append(by_depth.get(d, 0.0) + above)
        above += leaves_at.get(d, 0.0)
    return out


def max_children(tree: TreeNode) -> int:
    return max(len(node.children) for node in tree.walk())


def sample_path(machine: MachineSpec, input_state: StateVector | None, rng: np.random.Generator,
                max_steps: int = 10_000, ancilla_policy: AncillaPolicy = ZERO,
                input_offset: int = 0) -> tuple:
    """One root-to-leaf (or truncated) path as a tuple of StepRecords."""
    rt = new_run(machine, input_state, input_offset, ancilla_policy)
    return run(rt, rng, max_steps).trace


def format_node(node: TreeNode) -> str:
    cfg = node.configuration
    path = ",".join(format_outcome(v) for v in node.outcome_path) or "-"
    status = "halted" if node.halted else "truncated" if node.truncated else node.observable
    return (f"{node.depth} {cfg.state} {format_outcome(cfg.last_outcome)} {path} "
            f"{node.path_probability:.12g} {status}")


def dump_tree(tree: TreeNode) -> str:
    """One line per node, breadth first: depth, state, last outcome, path, probability, status."""
    return "\n".join(format_node(n) for n in tree.walk()) + "\n"


def _dyadic(p: float, max_exponent: int = 48) -> Fraction | None:
    f = Fraction(p).limit_denominator(1 << max_exponent)
    if abs(float(f) - p) > 1e-12 or f.denominator & (f.denominator - 1):
        return None
    return f


def exact_termination_bounds(tree: TreeNode) -> tuple[Fraction, Fraction] | None:
    """Bounds as exact fractions when every edge probability is dyadic, else ``None``."""
    exact = {id(tree): Fraction(1)}
    lower = frontier = Fraction(0)
    for node in tree.walk():
        mass = exact[id(node)]
        if node.halted:
            lower += mass
        elif node.truncated:
            frontier += mass
        for p, child in node.children.values():
            q = _dyadic(p)
            if q is None:
                return None
            exact[id(child)] = mass * q
    return lower, lower + frontier
