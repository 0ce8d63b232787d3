"""Power model, error-load calculus, and adaptive alpha schedules.

The testing procedure only reaches a node after rejecting every ancestor,
so the chance of falsely rejecting at depth ``l`` is governed by two
quantities computed from estimated per-node rejection probabilities:

* exposure at depth ``l``: sum over the depth's nodes of the product of
  theta over strict ancestors (how many tests the gate is expected to run
  there), which is the denominator of the adjusted threshold; and
* error load ``G_l``: the same sum with each node's own theta included
  (how many rejections are expected there).  When the total error load is
  at most 1, testing everything at the nominal alpha already controls the
  family-wise error rate and no adjustment is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

from scipy.stats import norm

from .tree import HypothesisTree, TreeError


class ScheduleError(ValueError):
    """Inconsistent inputs to schedule computations."""


@dataclass(frozen=True, slots=True)
class PowerModel:
    """Planning power model for a two-arm equal-allocation comparison.

    ``d_hat`` is the standardized effect size assumed when estimating the
    chance that a node's test rejects.
    """

    d_hat: float
    alpha: float = 0.05
    allocation: float = 0.5

    def __post_init__(self):
        if self.d_hat < 0:
            raise ScheduleError("d_hat must be non-negative")
        if not 0.0 < self.alpha < 0.5:
            raise ScheduleError("alpha must lie in (0, 0.5)")
        if not 0.0 < self.allocation < 1.0:
            raise ScheduleError("allocation must lie in (0, 1)")


def power_normal_approx(model: PowerModel, n_total: int | float) -> float:
    """Normal-approximation power of a two-sided level-alpha test.

    With ``n_total`` units split between arms at the model's allocation the
    test statistic has drift ``d_hat * sqrt(n_total * q * (1-q))``, which is
    the familiar ``d_hat * sqrt(n/4)`` at a 50/50 split.  The result is
    floored at alpha so a null node never contributes less than its test
    size.
    """
    if n_total < 2:
        raise ScheduleError("n_total must be at least 2")
    return _power_cached(model.d_hat, model.alpha, model.allocation, float(n_total))


@lru_cache(maxsize=65536)
def _power_cached(d_hat: float, alpha: float, allocation: float, n_total: float) -> float:
    q = allocation
    z = norm.ppf(1.0 - alpha / 2.0)
    theta = norm.cdf(d_hat * math.sqrt(n_total * q * (1.0 - q)) - z)
    return max(float(theta), alpha)


@dataclass(frozen=True, slots=True)
class DepthSchedule:
    depth: int
    n_nodes: int
    theta_hat: float      # mean estimated rejection probability at this depth
    exposure: float       # sum over nodes of prod(theta) over strict ancestors
    error_load: float     # exposure with each node's own theta included
    alpha_adj: float


@dataclass(frozen=True, slots=True)
class AlphaSchedule:
    """Per-depth thresholds for the gated procedure."""

    alpha: float
    depths: tuple[DepthSchedule, ...]
    gating_sufficient: bool
    model: PowerModel | None = None

    @property
    def total_error_load(self) -> float:
        return sum(row.error_load for row in self.depths)

    def alpha_at(self, depth: int) -> float:
        for row in self.depths:
            if row.depth == depth:
                return row.alpha_adj
        raise ScheduleError(f"schedule has no row for depth {depth}")

    def max_depth(self) -> int:
        return max(row.depth for row in self.depths)


def _schedule_rows(
    counts: Sequence[int],
    exposures: Sequence[float],
    loads: Sequence[float],
    theta_means: Sequence[float],
    alpha: float,
) -> AlphaSchedule:
    gating = sum(loads) <= 1.0
    rows = []
    for i, (count, exposure, load, theta) in enumerate(
        zip(counts, exposures, loads, theta_means)
    ):
        depth = i + 1
        if gating or depth == 1:
            a_adj = alpha
        else:
            a_adj = min(alpha, alpha / exposure) if exposure > 0 else alpha
        rows.append(DepthSchedule(depth, count, theta, exposure, load, a_adj))
    return AlphaSchedule(alpha, tuple(rows), gating)


def error_load_regular(
    k: int, L: int, thetas: Sequence[float]
) -> tuple[list[float], float]:
    """Per-level error loads for a regular k-ary tree.

    ``thetas[l-1]`` is the common rejection probability at depth ``l``
    (depth 1 is the root).  ``G_1`` equals the root theta and successive
    levels satisfy ``G_{l+1} = k * theta_{l+1} * G_l``.
    """
    if len(thetas) < L:
        raise ScheduleError("need one theta per level")
    for t in thetas[:L]:
        if not 0.0 < t <= 1.0:
            raise ScheduleError("thetas must lie in (0, 1]")
    loads = [float(thetas[0])]
    for depth in range(2, L + 1):
        loads.append(loads[-1] * k * float(thetas[depth - 1]))
    return loads, sum(loads)


def error_load_irregular(
    tree: HypothesisTree, theta: Mapping[str, float]
) -> list[float]:
    """Per-depth exposure of an irregular tree.

    Entry ``l-1`` is the sum over depth-``l`` nodes of the product of theta
    over each node's strict ancestors; thetas must be supplied for every
    non-leaf node.  For a regular tree this equals the per-level error load
    divided by the depth's own theta.
    """
    reach = _reach_products(tree, theta)
    out = [0.0] * tree.max_depth
    for nid, r in reach.items():
        out[tree.nodes[nid].depth - 1] += r
    return out


def _reach_products(
    tree: HypothesisTree, theta: Mapping[str, float]
) -> dict[str, float]:
    reach: dict[str, float] = {tree.root: 1.0}
    for depth in range(1, tree.max_depth):
        for nid in tree.nodes_at_depth(depth):
            node = tree.nodes[nid]
            if not node.children:
                continue
            if nid not in theta:
                raise ScheduleError(f"missing theta for non-leaf node {nid!r}")
            down = reach[nid] * theta[nid]
            for child in node.children:
                reach[child] = down
    return reach


def schedule_from_thetas(
    counts: Sequence[int], thetas: Sequence[float], alpha: float
) -> AlphaSchedule:
    """Schedule for a tree summarized by per-depth node counts and thetas."""
    if len(counts) != len(thetas):
        raise ScheduleError("counts and thetas must have equal length")
    exposures = []
    loads = []
    reach = 1.0
    for count, theta in zip(counts, thetas):
        exposures.append(count * reach)
        reach *= theta
        loads.append(count * reach)
    return _schedule_rows(counts, exposures, loads, list(thetas), alpha)


def adaptive_schedule(tree: HypothesisTree, model: PowerModel) -> AlphaSchedule:
    """Adaptive per-depth thresholds for a hypothesis tree.

    Each node's theta comes from the power model at the node's unit count.
    When the total error load is at most 1 every depth keeps the nominal
    alpha; otherwise depth ``l`` is tested at ``alpha / exposure_l``, capped
    at alpha, with the root always at alpha.
    """
    theta = {
        nid: power_normal_approx(model, node.n_units)
        for nid, node in tree.nodes.items()
    }
    reach = _reach_products(tree, theta)
    depths = range(1, tree.max_depth + 1)
    counts, exposures, loads, means = [], [], [], []
    for depth in depths:
        ids = tree.nodes_at_depth(depth)
        counts.append(len(ids))
        exposures.append(sum(reach[nid] for nid in ids))
        loads.append(sum(reach[nid] * theta[nid] for nid in ids))
        means.append(sum(theta[nid] for nid in ids) / len(ids) if ids else 0.0)
    schedule = _schedule_rows(counts, exposures, loads, means, model.alpha)
    return AlphaSchedule(
        schedule.alpha, schedule.depths, schedule.gating_sufficient, model
    )


def recompute_after_pruning(
    schedule: AlphaSchedule,
    surviving_tree: HypothesisTree,
    depth_completed: int,
) -> AlphaSchedule:
    """Recompute the schedule on the subtree that survived a testing round.

    Thresholds for depths at or above ``depth_completed`` are preserved
    (those tests already ran); deeper depths are recomputed on the surviving
    nodes, so their thresholds can only rise toward the alpha cap.
    """
    if schedule.model is None:
        raise ScheduleError("schedule carries no power model to recompute with")
    if depth_completed < 1:
        raise ScheduleError("depth_completed must be at least 1")
    try:
        fresh = adaptive_schedule(surviving_tree, schedule.model)
    except TreeError as exc:
        raise ScheduleError(f"surviving tree is not a consistent subtree: {exc}")
    rows = []
    for row in fresh.depths:
        if row.depth <= depth_completed:
            rows.append(
                DepthSchedule(
                    row.depth,
                    row.n_nodes,
                    row.theta_hat,
                    row.exposure,
                    row.error_load,
                    schedule.alpha_at(row.depth),
                )
            )
        else:
            rows.append(row)
    return AlphaSchedule(fresh.alpha, tuple(rows), fresh.gating_sufficient, fresh.model)
