"""Monte Carlo studies of the gated procedure's operating characteristics.

Three study designs are provided:

* a weak-control study on all-null regular trees with lazily drawn uniform
  p-values, recording the family-wise error rate and testing effort;
* a strong-control study that draws per-node p-values directly (uniform at
  null nodes, Beta(a, 1) at non-null nodes with the shape calibrated to a
  planning power model) and compares gated variants against bottom-up
  baselines on the same draws; and
* a block-data study shaped like a 44-block five-site education trial,
  running real permutation tests on freshly generated outcomes each
  replicate.

Replicate ``r`` of a study seeds its generator from ``(seed, r)``, so runs
are reproducible and independent of any parallel scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import gate
from .errorload import PowerModel, adaptive_schedule, power_normal_approx
from .gate import GateVariant, run_bottom_up, run_topdown, score_rejections, score_result
from .permtest import Block, TestSpec, permutation_pvalue
from .tree import HypothesisTree, build_from_paths, build_regular


class SimError(ValueError):
    """Invalid simulation configuration."""


TD_METHODS: dict[str, GateVariant] = {
    "td": gate.UNADJUSTED,
    "td_hommel": gate.LOCAL_HOMMEL,
    "td_bh": gate.LOCAL_BH,
    "td_adapt": gate.ADAPTIVE,
    "td_adapt_hommel": gate.ADAPTIVE_HOMMEL,
    "td_adapt_pruned": gate.ADAPTIVE_PRUNED,
}
BU_METHODS = ("bu_hommel", "bu_bh")

STRONG_DEFAULT_METHODS = (
    "td",
    "td_hommel",
    "td_adapt",
    "td_adapt_hommel",
    "td_adapt_pruned",
    "bu_hommel",
    "bu_bh",
)
DPP_DEFAULT_METHODS = (
    "td",
    "td_hommel",
    "td_bh",
    "td_adapt",
    "td_adapt_pruned",
    "bu_hommel",
)


def worker_count(n_tasks: int | None = None) -> int:
    """Worker cap from the TREEGATE_THREADS environment variable (default 1)."""
    raw = os.environ.get("TREEGATE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SimError(f"TREEGATE_THREADS is not an integer: {raw!r}")
    n = max(1, n)
    if n_tasks is not None:
        n = min(n, n_tasks)
    return n


def _indicator_se(p_hat: float, replicates: int) -> float:
    return math.sqrt(p_hat * (1.0 - p_hat) / replicates)


# ---------------------------------------------------------------------------
# weak control
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class WeakSummary:
    """All-null operating characteristics of the unadjusted gate.

    ``mean_tests`` counts, per replicate, the root test plus one for each
    rejection below the root (each such rejection is what authorizes the
    next round of testing); ``mean_nodes_tested`` is the plain count of
    nodes whose p-value was drawn.
    """

    k: int
    L: int
    alpha: float
    replicates: int
    seed: int
    fwer: float
    fwer_se: float
    mean_tests: float
    mean_nodes_tested: float
    max_nodes_tested: int


def simulate_weak(
    k: int, L: int, alpha: float = 0.05, replicates: int = 10_000, seed: int = 0
) -> WeakSummary:
    """All-null study on a regular k-ary tree with L levels (root depth 1).

    P-values are independent uniforms drawn lazily, only for nodes whose
    ancestors were all rejected, so enormous trees cost almost nothing per
    replicate.
    """
    if replicates < 100:
        raise SimError("replicates must be at least 100")
    tree = build_regular(k, L)
    fwer_hits = 0
    tests_sum = 0.0
    tested_sum = 0
    tested_max = 0
    for rep in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, L, rep]))
        result = run_topdown(
            tree, lambda nid: rng.random(), gate.UNADJUSTED, alpha=alpha
        )
        rejections = result.total_rejections
        root_rejected = result.outcome(tree.root).rejected
        fwer_hits += rejections > 0
        tests_sum += 1 + rejections - (1 if root_rejected else 0)
        tested_sum += result.nodes_tested
        tested_max = max(tested_max, result.nodes_tested)
    fwer = fwer_hits / replicates
    return WeakSummary(
        k=k,
        L=L,
        alpha=alpha,
        replicates=replicates,
        seed=seed,
        fwer=fwer,
        fwer_se=_indicator_se(fwer, replicates),
        mean_tests=tests_sum / replicates,
        mean_nodes_tested=tested_sum / replicates,
        max_nodes_tested=tested_max,
    )


# ---------------------------------------------------------------------------
# strong control (p-value draws)
# ---------------------------------------------------------------------------


def calibrate_beta_shape(target_power: float, alpha: float) -> float:
    """Shape ``a`` such that a Beta(a, 1) p-value rejects at rate
    ``target_power`` when compared to ``alpha``: ``a = ln(power)/ln(alpha)``."""
    if not 0.0 < target_power < 1.0:
        raise SimError("target_power must lie strictly inside (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise SimError("alpha must lie strictly inside (0, 1)")
    return math.log(target_power) / math.log(alpha)


@dataclass(frozen=True, slots=True)
class MethodSummary:
    """Operating characteristics of one method across replicates."""

    method: str
    replicates: int
    fwer_node: float
    fwer_node_se: float
    fwer_leaf: float
    fwer_leaf_se: float
    power_node: float
    power_leaf: float
    true_rejections_node: float
    true_rejections_leaf: float
    false_rejection_prop_node: float
    false_rejection_prop_leaf: float
    mean_nodes_tested: float
    mean_leaves_tested: float


@dataclass(frozen=True)
class SimSummary:
    kind: str
    params: dict
    methods: dict[str, MethodSummary]


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    """One strong-control scenario on a regular tree.

    ``d`` drives both the Beta calibration of non-null p-values and, unless
    ``d_hat`` is given, the planning power model behind the adaptive
    schedule.  ``placement`` spreads the non-null leaves evenly across the
    tree ("scattered") or packs them under shared ancestors ("contiguous").
    ``internal_power`` selects how non-null internal nodes are calibrated:
    from the power model at the node's aggregate size ("model") or with the
    effect attenuated by the node's non-null leaf fraction ("diluted").
    """

    k: int
    L: int
    units_per_leaf: int
    null_proportion: float
    d: float | None = None
    alpha: float = 0.05
    replicates: int = 2000
    methods: tuple[str, ...] = STRONG_DEFAULT_METHODS
    seed: int = 0
    placement: str = "contiguous"
    internal_power: str = "model"
    d_hat: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.null_proportion <= 1.0:
            raise SimError("null_proportion must lie in [0, 1]")
        if self.replicates < 100:
            raise SimError("replicates must be at least 100")
        if self.d is None and self.null_proportion < 1.0:
            raise SimError("an effect size d is required when non-null leaves exist")
        if self.placement not in ("contiguous", "scattered"):
            raise SimError(f"unknown placement: {self.placement!r}")
        if self.internal_power not in ("model", "diluted"):
            raise SimError(f"unknown internal_power: {self.internal_power!r}")
        unknown = [
            m for m in self.methods if m not in TD_METHODS and m not in BU_METHODS
        ]
        if unknown:
            raise SimError(f"unknown methods: {unknown}")
        if not self.methods:
            raise SimError("empty method set")


def _non_null_leaves(leaf_ids: Sequence[str], null_proportion: float, placement: str):
    n = len(leaf_ids)
    m = round((1.0 - null_proportion) * n)
    if m == 0:
        return []
    if placement == "contiguous":
        return list(leaf_ids[:m])
    return [leaf_ids[(i * n) // m] for i in range(m)]


def _beta_inverse_exponents(
    tree: HypothesisTree, config: ScenarioConfig, model: PowerModel
) -> np.ndarray:
    """Per-node exponent 1/a so that U**(1/a) draws the node's p-value.

    Null nodes keep exponent 1 (uniform).  Non-null nodes get the Beta
    shape calibrated at the nominal alpha to the power model evaluated at
    the node's aggregate unit count.
    """
    exponents = np.ones(len(tree.nodes))
    for i, (nid, node) in enumerate(tree.nodes.items()):
        if node.is_null is not False:
            continue
        d_gen = model.d_hat
        if config.internal_power == "diluted" and not node.is_leaf:
            non_null_share = sum(
                1
                for leaf in tree.leaves
                if tree.nodes[leaf].is_null is False
                and tree.nodes[leaf].blocks <= node.blocks
            ) / sum(1 for leaf in tree.leaves if tree.nodes[leaf].blocks <= node.blocks)
            d_gen = model.d_hat * non_null_share
        power = power_normal_approx(replace(model, d_hat=d_gen), node.n_units)
        a = calibrate_beta_shape(power, config.alpha) if power < 1.0 else 1e-12
        exponents[i] = 1.0 / a
    return exponents


def _summarize(method: str, sums: dict, replicates: int) -> MethodSummary:
    fw_n = sums["fwer_node"] / replicates
    fw_l = sums["fwer_leaf"] / replicates
    return MethodSummary(
        method=method,
        replicates=replicates,
        fwer_node=fw_n,
        fwer_node_se=_indicator_se(fw_n, replicates),
        fwer_leaf=fw_l,
        fwer_leaf_se=_indicator_se(fw_l, replicates),
        power_node=sums["power_node"] / replicates,
        power_leaf=sums["power_leaf"] / replicates,
        true_rejections_node=sums["tr_node"] / replicates,
        true_rejections_leaf=sums["tr_leaf"] / replicates,
        false_rejection_prop_node=sums["frp_node"] / replicates,
        false_rejection_prop_leaf=sums["frp_leaf"] / replicates,
        mean_nodes_tested=sums["nodes_tested"] / replicates,
        mean_leaves_tested=sums["leaves_tested"] / replicates,
    )


_SCORE_KEYS = (
    "fwer_node",
    "fwer_leaf",
    "power_node",
    "power_leaf",
    "tr_node",
    "tr_leaf",
    "frp_node",
    "frp_leaf",
    "nodes_tested",
    "leaves_tested",
)


def _score_to_tuple(score) -> tuple:
    return (
        float(score.any_false_rejection_node),
        float(score.any_false_rejection_leaf),
        score.power_node,
        score.power_leaf,
        float(score.true_rejections_node),
        float(score.true_rejections_leaf),
        score.false_rejection_prop_node,
        score.false_rejection_prop_leaf,
        float(score.nodes_tested),
        float(score.leaves_tested),
    )


def simulate_strong(config: ScenarioConfig) -> SimSummary:
    """Run one p-value-draw scenario for every configured method.

    All top-down variants and the bottom-up baselines see the same p-value
    draws within a replicate, so method comparisons are paired.
    """
    tree = build_regular(config.k, config.L, config.units_per_leaf)
    non_null = _non_null_leaves(
        tree.leaves, config.null_proportion, config.placement
    )
    labeled = tree.label_truth(non_null)
    d_plan = config.d_hat if config.d_hat is not None else (config.d or 0.0)
    model = PowerModel(d_hat=d_plan, alpha=config.alpha)
    schedule = adaptive_schedule(tree, model)
    exponents = _beta_inverse_exponents(labeled, config, model)

    node_ids = list(tree.nodes)
    leaf_set = set(tree.leaves)
    leaf_positions = [i for i, nid in enumerate(node_ids) if nid in leaf_set]
    accum = {m: dict.fromkeys(_SCORE_KEYS, 0.0) for m in config.methods}

    for rep in range(config.replicates):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, rep]))
        draws = rng.random(len(node_ids)) ** exponents
        p_by_node = dict(zip(node_ids, draws))
        leaf_p = {node_ids[i]: draws[i] for i in leaf_positions}
        for method in config.methods:
            if method in TD_METHODS:
                result = run_topdown(
                    tree,
                    p_by_node.__getitem__,
                    TD_METHODS[method],
                    alpha=config.alpha,
                    schedule=schedule,
                )
                score = score_result(result, labeled)
            else:
                rejected = run_bottom_up(leaf_p, method, config.alpha)
                score = score_rejections(
                    rejected,
                    labeled,
                    nodes_tested=len(leaf_p),
                    leaves_tested=len(leaf_p),
                )
            sums = accum[method]
            for key, value in zip(_SCORE_KEYS, _score_to_tuple(score)):
                sums[key] += value

    methods = {
        m: _summarize(m, accum[m], config.replicates) for m in config.methods
    }
    params = {
        "k": config.k,
        "L": config.L,
        "units_per_leaf": config.units_per_leaf,
        "d": config.d,
        "d_hat": d_plan,
        "null_proportion": config.null_proportion,
        "placement": config.placement,
        "internal_power": config.internal_power,
        "alpha": config.alpha,
        "replicates": config.replicates,
        "seed": config.seed,
        "sum_error_load": schedule.total_error_load,
        "n_non_null_leaves": len(non_null),
    }
    return SimSummary(kind="strong", params=params, methods=methods)


# ---------------------------------------------------------------------------
# block-data study (44-block five-site layout)
# ---------------------------------------------------------------------------


def dpp_default_layout() -> tuple[tuple[int, ...], ...]:
    """Cohort block counts per college: 44 blocks over five colleges.

    The real study's exact cohort composition is not public, so this is a
    documented surrogate: each college runs three cohorts of at most four
    blocks, with block totals (9, 9, 9, 9, 8).
    """
    return ((4, 4, 1), (4, 4, 1), (4, 4, 1), (4, 4, 1), (4, 3, 1))


def _layout_rows(layout, students_per_block: int):
    rows = []
    block_no = 0
    for c, cohorts in enumerate(layout, start=1):
        for y, n_blocks in enumerate(cohorts, start=1):
            for _ in range(n_blocks):
                block_no += 1
                block_id = f"B{block_no:02d}"
                rows.append((block_id, (f"C{c}", f"Y{y}", block_id), students_per_block))
    return rows


def generate_dpp_data(
    layout: Sequence[Sequence[int]] | None,
    d: float,
    seed: int,
    *,
    students_per_block: int = 50,
    control_mean: float = 10.0,
    control_sd: float = 3.0,
    rep: int = 0,
) -> tuple[HypothesisTree, list[Block], set[str]]:
    """Generate one dataset for the 44-block five-site layout.

    Control potential outcomes are Normal(control_mean, control_sd**2); the
    nine blocks of the first college receive an additive treatment effect of
    ``d * control_sd`` and treatment is assigned to exactly half of each
    block.  Returns the hypothesis tree, the block data, and the set of
    truly non-null block ids.
    """
    layout = tuple(tuple(c) for c in (layout or dpp_default_layout()))
    total_blocks = sum(sum(c) for c in layout)
    if total_blocks != 44:
        raise SimError(f"layout holds {total_blocks} blocks, expected 44")
    if sum(layout[0]) != 9:
        raise SimError("the first college must hold the 9 non-null blocks")
    rows = _layout_rows(layout, students_per_block)
    tree = build_from_paths(rows)
    non_null = {bid for bid, path, _ in rows if path[0] == "C1"}

    rng = np.random.default_rng(np.random.SeedSequence([seed, rep, 0xDA7A]))
    tau = d * control_sd
    m = students_per_block // 2
    blocks = []
    for bid, _, n in rows:
        y0 = rng.normal(control_mean, control_sd, n)
        y1 = y0 + (tau if bid in non_null else 0.0)
        treatment = np.zeros(n, dtype=np.int8)
        treatment[rng.permutation(n)[:m]] = 1
        outcome = np.where(treatment == 1, y1, y0)
        blocks.append(Block(bid, treatment, outcome))
    return tree, blocks, non_null


@dataclass(frozen=True, slots=True)
class DppConfig:
    """Replication settings for the 44-block study."""

    d: float
    replicates: int = 500
    alpha: float = 0.05
    seed: int = 0
    n_perms: int = 500
    statistic: str = "rank"
    sides: str = "two"
    methods: tuple[str, ...] = DPP_DEFAULT_METHODS
    d_hat: float | None = None
    layout: tuple[tuple[int, ...], ...] | None = None
    students_per_block: int = 50

    def __post_init__(self):
        if self.replicates < 100:
            raise SimError("replicates must be at least 100")
        unknown = [
            m for m in self.methods if m not in TD_METHODS and m not in BU_METHODS
        ]
        if unknown:
            raise SimError(f"unknown methods: {unknown}")


def _dpp_replicates(config: DppConfig, rep_range) -> list[dict[str, tuple]]:
    layout = config.layout or dpp_default_layout()
    rows = _layout_rows(layout, config.students_per_block)
    tree = build_from_paths(rows)
    labeled = tree.label_truth(
        {bid for bid, path, _ in rows if path[0] == "C1"}
    )
    model = PowerModel(
        d_hat=config.d_hat if config.d_hat is not None else config.d,
        alpha=config.alpha,
    )
    schedule = adaptive_schedule(tree, model)
    spec = TestSpec(
        statistic=config.statistic,
        sides=config.sides,
        n_perms=config.n_perms,
        seed=config.seed,
    )
    needs_bu = any(m in BU_METHODS for m in config.methods)

    out = []
    for rep in rep_range:
        _, blocks, _ = generate_dpp_data(
            layout,
            config.d,
            config.seed,
            students_per_block=config.students_per_block,
            rep=rep,
        )
        by_id = {b.block_id: b for b in blocks}
        cache: dict[str, float] = {}

        def p_source(nid: str, _rep=rep) -> float:
            if nid not in cache:
                node_blocks = [by_id[b] for b in sorted(tree.nodes[nid].blocks)]
                cache[nid] = permutation_pvalue(
                    node_blocks, spec, stream_key=f"{_rep}/{nid}"
                )
            return cache[nid]

        scores: dict[str, tuple] = {}
        for method in config.methods:
            if method in TD_METHODS:
                result = run_topdown(
                    tree,
                    p_source,
                    TD_METHODS[method],
                    alpha=config.alpha,
                    schedule=schedule,
                )
                score = score_result(result, labeled)
            else:
                leaf_p = {nid: p_source(nid) for nid in tree.leaves}
                rejected = run_bottom_up(leaf_p, method, config.alpha)
                score = score_rejections(
                    rejected, labeled, nodes_tested=len(leaf_p), leaves_tested=len(leaf_p)
                )
            scores[method] = _score_to_tuple(score)
        out.append(scores)
    return out


def simulate_dpp(config: DppConfig) -> SimSummary:
    """Run the 44-block study; honors TREEGATE_THREADS for replicate workers.

    Every method within a replicate shares one dataset and one cache of
    node p-values, so method comparisons are paired; results are identical
    for any worker count.
    """
    workers = worker_count(config.replicates)
    if workers <= 1:
        per_rep = _dpp_replicates(config, range(config.replicates))
    else:
        chunks = np.array_split(np.arange(config.replicates), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(_dpp_replicates, [config] * len(chunks), [c.tolist() for c in chunks])
            )
        per_rep = [rep_scores for part in parts for rep_scores in part]

    accum = {m: dict.fromkeys(_SCORE_KEYS, 0.0) for m in config.methods}
    for rep_scores in per_rep:
        for method, values in rep_scores.items():
            sums = accum[method]
            for key, value in zip(_SCORE_KEYS, values):
                sums[key] += value
    methods = {m: _summarize(m, accum[m], config.replicates) for m in config.methods}
    layout = config.layout or dpp_default_layout()
    params = {
        "d": config.d,
        "d_hat": config.d_hat if config.d_hat is not None else config.d,
        "alpha": config.alpha,
        "replicates": config.replicates,
        "seed": config.seed,
        "n_perms": config.n_perms,
        "statistic": config.statistic,
        "sides": config.sides,
        "blocks": sum(sum(c) for c in layout),
        "students_per_block": config.students_per_block,
    }
    return SimSummary(kind="dpp", params=params, methods=methods)
