"""Top-down gated testing over a hypothesis tree, plus bottom-up baselines.

The engine walks the tree breadth-first: the root is tested first and a
node's children are tested only when the node is rejected, so every
non-rejection prunes its whole branch.  Thresholds come either from a fixed
nominal alpha or from an adaptive per-depth schedule, optionally recomputed
on the surviving subtree after each completed depth; p-values within a
sibling group can additionally be adjusted before comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from . import adjust
from .errorload import AlphaSchedule, recompute_after_pruning
from .tree import HypothesisTree


class GateError(ValueError):
    """Invalid inputs to the testing engine."""


PSource = Callable[[str], float]


@dataclass(frozen=True, slots=True)
class GateVariant:
    """How thresholds are chosen and whether sibling groups are adjusted."""

    name: str
    thresholds: str = "fixed"          # "fixed" | "adaptive"
    prune: bool = False
    local_adjust: str | None = None    # None | "hommel" | "bh"


UNADJUSTED = GateVariant("unadjusted")
LOCAL_HOMMEL = GateVariant("local_hommel", local_adjust="hommel")
LOCAL_BH = GateVariant("local_bh", local_adjust="bh")
ADAPTIVE = GateVariant("adaptive", thresholds="adaptive")
ADAPTIVE_HOMMEL = GateVariant("adaptive_hommel", thresholds="adaptive", local_adjust="hommel")
ADAPTIVE_PRUNED = GateVariant("adaptive_pruned", thresholds="adaptive", prune=True)

VARIANTS: dict[str, GateVariant] = {
    v.name: v
    for v in (UNADJUSTED, LOCAL_HOMMEL, LOCAL_BH, ADAPTIVE, ADAPTIVE_HOMMEL, ADAPTIVE_PRUNED)
}

_LOCAL_ADJUSTERS = {"hommel": adjust.adjust_hommel, "bh": adjust.adjust_bh}


@dataclass(frozen=True, slots=True)
class NodeOutcome:
    node_id: str
    tested: bool
    p_value: float | None = None
    p_adjusted: float | None = None
    alpha_applied: float | None = None
    rejected: bool = False


@dataclass(frozen=True)
class ResultTree:
    """Outcomes of one gated run; only tested nodes carry entries."""

    variant: str
    alpha: float
    outcomes: dict[str, NodeOutcome]
    nodes_tested: int
    leaves_tested: int
    rejections_by_depth: dict[int, int]

    @property
    def total_rejections(self) -> int:
        return sum(self.rejections_by_depth.values())

    def outcome(self, node_id: str) -> NodeOutcome:
        return self.outcomes.get(node_id, NodeOutcome(node_id, tested=False))

    def rejected_ids(self) -> list[str]:
        return [nid for nid, o in self.outcomes.items() if o.rejected]


def _validated_p(p_source: PSource, node_id: str) -> float:
    try:
        p = float(p_source(node_id))
    except KeyError:
        raise GateError(f"p-value source has no value for reachable node {node_id!r}")
    if math.isnan(p) or not 0.0 <= p <= 1.0:
        raise GateError(f"p-value for node {node_id!r} outside [0, 1]: {p}")
    return p


def run_topdown(
    tree: HypothesisTree,
    p_source: PSource,
    variant: GateVariant = UNADJUSTED,
    *,
    alpha: float = 0.05,
    schedule: AlphaSchedule | None = None,
) -> ResultTree:
    """Run the gated procedure and return per-node outcomes.

    ``p_source`` maps a node id to its p-value and is consulted lazily, only
    for nodes whose every ancestor was rejected.  Adaptive variants require
    a schedule covering the tree's depth; the pruning variant recomputes it
    on the surviving subtree after each completed depth.
    """
    if not 0.0 <= alpha <= 1.0:
        raise GateError("alpha must lie in [0, 1]")
    adaptive = variant.thresholds == "adaptive"
    if adaptive:
        if schedule is None:
            raise GateError(f"variant {variant.name!r} requires an alpha schedule")
        if schedule.max_depth() < tree.max_depth:
            raise GateError("schedule is shorter than the tree is deep")

    outcomes: dict[str, NodeOutcome] = {}
    rejections_by_depth: dict[int, int] = {}
    leaves_tested = 0
    working = tree
    sched = schedule
    frontier = [tree.root]
    depth = 1
    while frontier:
        threshold = sched.alpha_at(depth) if adaptive else alpha
        next_frontier: list[str] = []
        non_rejected: list[str] = []
        for parent_id, group in _sibling_groups(tree, frontier):
            raw = [_validated_p(p_source, nid) for nid in group]
            if variant.local_adjust is None or len(group) == 1:
                adjusted = raw
            else:
                adjusted = list(_LOCAL_ADJUSTERS[variant.local_adjust](raw))
            for nid, p, pa in zip(group, raw, adjusted):
                rejected = bool(pa <= threshold)
                outcomes[nid] = NodeOutcome(nid, True, p, pa, threshold, rejected)
                node = tree.nodes[nid]
                if node.is_leaf:
                    leaves_tested += 1
                if rejected:
                    rejections_by_depth[depth] = rejections_by_depth.get(depth, 0) + 1
                    next_frontier.extend(node.children)
                else:
                    non_rejected.append(nid)
        if variant.prune and next_frontier:
            working = working.prune_below(
                [nid for nid in non_rejected if tree.nodes[nid].children]
            )
            sched = recompute_after_pruning(sched, working, depth)
        depth += 1
        frontier = next_frontier

    result = ResultTree(
        variant=variant.name,
        alpha=alpha,
        outcomes=outcomes,
        nodes_tested=len(outcomes),
        leaves_tested=leaves_tested,
        rejections_by_depth=rejections_by_depth,
    )
    _check_gating(result, tree)
    return result


def _sibling_groups(
    tree: HypothesisTree, frontier: list[str]
) -> list[tuple[str | None, list[str]]]:
    groups: dict[str | None, list[str]] = {}
    for nid in frontier:
        groups.setdefault(tree.nodes[nid].parent, []).append(nid)
    return list(groups.items())


def _check_gating(result: ResultTree, tree: HypothesisTree) -> None:
    # every tested non-root node must sit under a rejected parent
    for nid, out in result.outcomes.items():
        parent = tree.nodes[nid].parent
        if out.tested and parent is not None:
            if not result.outcome(parent).rejected:
                raise AssertionError(
                    f"gating violated: {nid!r} tested under non-rejected parent"
                )


def run_bottom_up(
    leaf_pvalues: Mapping[str, float], method: str, alpha: float = 0.05
) -> set[str]:
    """Test all leaves at once with a global adjustment; return rejections."""
    if method not in ("bu_hommel", "bu_bh"):
        raise GateError(f"unknown bottom-up method: {method!r}")
    ids = list(leaf_pvalues)
    raw = np.array([leaf_pvalues[i] for i in ids], dtype=float)
    adjusted = (
        adjust.adjust_hommel(raw) if method == "bu_hommel" else adjust.adjust_bh(raw)
    )
    return {nid for nid, pa in zip(ids, adjusted) if pa <= alpha}


@dataclass(frozen=True, slots=True)
class RunScore:
    """Error and discovery metrics of one run against a truth-labeled tree."""

    any_false_rejection_node: bool
    any_false_rejection_leaf: bool
    true_rejections_node: int
    true_rejections_leaf: int
    false_rejections_node: int
    false_rejections_leaf: int
    n_null_nodes: int
    n_non_null_nodes: int
    n_null_leaves: int
    n_non_null_leaves: int
    nodes_tested: int
    leaves_tested: int

    @property
    def power_node(self) -> float:
        return (
            self.true_rejections_node / self.n_non_null_nodes
            if self.n_non_null_nodes
            else 0.0
        )

    @property
    def power_leaf(self) -> float:
        return (
            self.true_rejections_leaf / self.n_non_null_leaves
            if self.n_non_null_leaves
            else 0.0
        )

    @property
    def false_rejection_prop_node(self) -> float:
        return (
            self.false_rejections_node / self.n_null_nodes if self.n_null_nodes else 0.0
        )

    @property
    def false_rejection_prop_leaf(self) -> float:
        return (
            self.false_rejections_leaf / self.n_null_leaves
            if self.n_null_leaves
            else 0.0
        )


def score_result(result: ResultTree, tree: HypothesisTree) -> RunScore:
    """Score one run; the tree must carry is_null labels on every node."""
    rejected = {nid for nid, o in result.outcomes.items() if o.rejected}
    return score_rejections(rejected, tree, result.nodes_tested, result.leaves_tested)


def score_rejections(
    rejected: Iterable[str],
    tree: HypothesisTree,
    nodes_tested: int = 0,
    leaves_tested: int = 0,
) -> RunScore:
    """Score an arbitrary rejection set (gate output or bottom-up baseline)."""
    rejected = set(rejected)
    tn = fn = tl = fl = 0
    null_nodes = non_null_nodes = null_leaves = non_null_leaves = 0
    for nid, node in tree.nodes.items():
        if node.is_null is None:
            raise GateError(f"tree is not truth-labeled at node {nid!r}")
        hit = nid in rejected
        if node.is_null:
            null_nodes += 1
            null_leaves += node.is_leaf
            if hit:
                fn += 1
                fl += node.is_leaf
        else:
            non_null_nodes += 1
            non_null_leaves += node.is_leaf
            if hit:
                tn += 1
                tl += node.is_leaf
    return RunScore(
        any_false_rejection_node=fn > 0,
        any_false_rejection_leaf=fl > 0,
        true_rejections_node=tn,
        true_rejections_leaf=tl,
        false_rejections_node=fn,
        false_rejections_leaf=fl,
        n_null_nodes=null_nodes,
        n_non_null_nodes=non_null_nodes,
        n_null_leaves=null_leaves,
        n_non_null_leaves=non_null_leaves,
        nodes_tested=nodes_tested,
        leaves_tested=leaves_tested,
    )
