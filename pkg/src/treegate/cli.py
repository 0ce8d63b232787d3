"""Command-line front end: data ingestion, gated analysis, schedules, sims.

Three subcommands:

* ``test``            run the gated procedure on a block-level CSV dataset
* ``alpha-schedule``  compute the adaptive per-depth thresholds for a node
                      size table
* ``simulate``        run one of the Monte Carlo studies from a key=value
                      config file

Outputs are plain JSON/CSV/DOT and are byte-identical for identical inputs,
flags, and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import gate, sim
from .errorload import PowerModel, adaptive_schedule
from .gate import NodeOutcome, ResultTree
from .permtest import Block, DegenerateBlockError, TestSpec, permutation_pvalue
from .tree import HypothesisTree, TreeError, TreeNode, build_from_paths

SCHEMA_VERSION = 1
REQUIRED_COLUMNS = ("unit_id", "block_id", "treatment", "outcome")


class CliError(Exception):
    """Input problem reported to the user with a non-zero exit."""


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    tree: HypothesisTree
    blocks: list[Block]

    def blocks_under(self, node_id: str) -> list[Block]:
        wanted = self.tree.nodes[node_id].blocks
        return [b for b in self.blocks if b.block_id in wanted]


def read_dataset(path: str) -> Dataset:
    """Parse a unit-level CSV into blocks and the hierarchy tree.

    Required columns: unit_id, block_id, treatment (0/1), outcome.  Any
    further columns are ordered hierarchy levels, constant within a block;
    without them a star tree over the blocks is used.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty file")
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise CliError(f"{path}: missing required columns {missing}")
        col = {name: header.index(name) for name in REQUIRED_COLUMNS}
        hierarchy_cols = [
            (i, name) for i, name in enumerate(header) if name not in REQUIRED_COLUMNS
        ]

        order: list[str] = []
        treatment: dict[str, list[int]] = {}
        outcome: dict[str, list[float]] = {}
        paths: dict[str, tuple[str, ...]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise CliError(f"{path}:{lineno}: expected {len(header)} fields")
            bid = row[col["block_id"]].strip()
            if not bid:
                raise CliError(f"{path}:{lineno}: empty block_id")
            t_raw = row[col["treatment"]].strip()
            if t_raw not in ("0", "1"):
                raise CliError(
                    f"{path}:{lineno}: treatment must be 0 or 1, got {t_raw!r}"
                )
            try:
                y = float(row[col["outcome"]])
            except ValueError:
                raise CliError(f"{path}:{lineno}: outcome is not a number")
            if not np.isfinite(y):
                raise CliError(f"{path}:{lineno}: outcome is not finite")
            levels = tuple(row[i].strip() for i, _ in hierarchy_cols)
            if bid not in treatment:
                order.append(bid)
                treatment[bid] = []
                outcome[bid] = []
                paths[bid] = levels
            elif paths[bid] != levels:
                raise CliError(
                    f"{path}:{lineno}: hierarchy columns change within block {bid!r}"
                )
            treatment[bid].append(int(t_raw))
            outcome[bid].append(y)

    if not order:
        raise CliError(f"{path}: no data rows")
    degenerate = [
        bid for bid in order if not 0 < sum(treatment[bid]) < len(treatment[bid])
    ]
    if degenerate:
        raise CliError(
            f"{path}: blocks without both treated and control units: {degenerate}"
        )
    rows = [(bid, (*paths[bid], bid), len(treatment[bid])) for bid in order]
    try:
        tree = build_from_paths(rows)
    except TreeError as exc:
        raise CliError(f"{path}: {exc}")
    blocks = [
        Block(bid, np.array(treatment[bid], dtype=np.int8), np.array(outcome[bid]))
        for bid in order
    ]
    return Dataset(tree, blocks)


def read_node_sizes(path: str) -> HypothesisTree:
    """Parse a node-size table (node_id, parent_id, n_units) into a tree.

    ``parent_id`` is empty for the root; internal ``n_units`` may be left
    blank, in which case they are derived from the leaves.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CliError(f"{path}: empty file")
        wanted = ["node_id", "parent_id", "n_units"]
        if [h for h in wanted if h not in header]:
            raise CliError(f"{path}: header must contain {wanted}")
        idx = {name: header.index(name) for name in wanted}
        entries: list[tuple[str, str, str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            entries.append(
                (
                    row[idx["node_id"]].strip(),
                    row[idx["parent_id"]].strip(),
                    row[idx["n_units"]].strip(),
                )
            )
    if not entries:
        raise CliError(f"{path}: no data rows")

    children: dict[str, list[str]] = {nid: [] for nid, _, _ in entries}
    given: dict[str, str] = {}
    parent_of: dict[str, str | None] = {}
    roots = []
    for nid, parent, units in entries:
        if nid in given:
            raise CliError(f"{path}: duplicate node id {nid!r}")
        given[nid] = units
        parent_of[nid] = parent or None
        if parent:
            if parent not in children:
                raise CliError(f"{path}: node {nid!r} references unknown parent {parent!r}")
            children[parent].append(nid)
        else:
            roots.append(nid)
    if len(roots) != 1:
        raise CliError(f"{path}: expected exactly one root row, found {len(roots)}")

    depth: dict[str, int] = {}

    def resolve_depth(nid: str) -> int:
        if nid not in depth:
            parent = parent_of[nid]
            depth[nid] = 1 if parent is None else resolve_depth(parent) + 1
        return depth[nid]

    units: dict[str, int] = {}
    blocks: dict[str, frozenset[str]] = {}

    def resolve(nid: str) -> None:
        kids = children[nid]
        for kid in kids:
            resolve(kid)
        if not kids:
            if not given[nid]:
                raise CliError(f"{path}: leaf {nid!r} needs an explicit n_units")
            units[nid] = int(given[nid])
            blocks[nid] = frozenset({nid})
        else:
            total = sum(units[k] for k in kids)
            if given[nid] and int(given[nid]) != total:
                raise CliError(
                    f"{path}: node {nid!r} n_units {given[nid]} != children sum {total}"
                )
            units[nid] = total
            blocks[nid] = frozenset().union(*(blocks[k] for k in kids))

    resolve(roots[0])
    if len(units) != len(entries):
        orphans = sorted(set(given) - set(units))
        raise CliError(f"{path}: nodes unreachable from the root: {orphans}")
    nodes = {
        nid: TreeNode(
            id=nid,
            parent=parent_of[nid],
            children=tuple(children[nid]),
            depth=resolve_depth(nid),
            blocks=blocks[nid],
            n_units=units[nid],
        )
        for nid, _, _ in entries
    }
    try:
        return HypothesisTree(nodes, roots[0])
    except TreeError as exc:
        raise CliError(f"{path}: malformed tree: {exc}")


# ---------------------------------------------------------------------------
# result serialization
# ---------------------------------------------------------------------------


def result_to_json(result: ResultTree, tree: HypothesisTree, extra: dict | None = None) -> str:
    nodes = []
    for nid in tree.nodes:
        node = tree.nodes[nid]
        out = result.outcome(nid)
        nodes.append(
            {
                "id": nid,
                "parent": node.parent,
                "depth": node.depth,
                "tested": out.tested,
                "p": out.p_value,
                "p_adjusted": out.p_adjusted,
                "alpha_applied": out.alpha_applied,
                "rejected": out.rejected,
            }
        )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "variant": result.variant,
        "alpha": result.alpha,
        **(extra or {}),
        "nodes": nodes,
    }
    return json.dumps(doc, indent=2) + "\n"


def result_from_json(text: str) -> ResultTree:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise CliError(f"unsupported schema_version: {doc.get('schema_version')!r}")
    outcomes = {}
    rejections_by_depth: dict[int, int] = {}
    leaves_tested = 0
    has_child = {n["parent"] for n in doc["nodes"] if n["parent"] is not None}
    for n in doc["nodes"]:
        if not n["tested"]:
            continue
        outcomes[n["id"]] = NodeOutcome(
            n["id"], True, n["p"], n["p_adjusted"], n["alpha_applied"], n["rejected"]
        )
        if n["rejected"]:
            rejections_by_depth[n["depth"]] = rejections_by_depth.get(n["depth"], 0) + 1
        if n["id"] not in has_child:
            leaves_tested += 1
    return ResultTree(
        variant=doc["variant"],
        alpha=doc["alpha"],
        outcomes=outcomes,
        nodes_tested=len(outcomes),
        leaves_tested=leaves_tested,
        rejections_by_depth=rejections_by_depth,
    )


def result_to_dot(
    result: ResultTree, tree: HypothesisTree, pruned: str = "omit"
) -> str:
    """Graphviz rendering of one run; rejected nodes are drawn filled.

    ``pruned`` controls untested subtrees: "omit" drops them, "collapse"
    replaces each with a single dashed placeholder under its tested parent.
    """
    if pruned not in ("omit", "collapse"):
        raise CliError(f"unknown pruned mode: {pruned!r}")
    lines = ["digraph gated_tests {", '  node [shape=ellipse, fontsize=10];']
    for nid in tree.nodes:
        out = result.outcome(nid)
        if not out.tested:
            continue
        label = f"{nid}\\np={out.p_value:.4g}"
        style = (
            'style=filled, fillcolor="#c7e9c0", peripheries=2'
            if out.rejected
            else 'style=filled, fillcolor="#f0f0f0"'
        )
        lines.append(f'  "{nid}" [label="{label}", {style}];')
    for nid in tree.nodes:
        out = result.outcome(nid)
        if not out.tested:
            continue
        node = tree.nodes[nid]
        if node.parent is not None and result.outcome(node.parent).tested:
            lines.append(f'  "{node.parent}" -> "{nid}";')
        if pruned == "collapse" and node.children and not out.rejected:
            skipped = _count_descendants(tree, nid)
            lines.append(
                f'  "{nid}:pruned" [label="{skipped} untested", shape=box, style=dashed];'
            )
            lines.append(f'  "{nid}" -> "{nid}:pruned" [style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _count_descendants(tree: HypothesisTree, nid: str) -> int:
    stack = list(tree.nodes[nid].children)
    count = 0
    while stack:
        cur = stack.pop()
        count += 1
        stack.extend(tree.nodes[cur].children)
    return count


def result_to_csv(result: ResultTree, tree: HypothesisTree) -> str:
    rows = [["id", "parent", "depth", "tested", "p", "p_adjusted", "alpha_applied", "rejected"]]
    for nid in tree.nodes:
        node = tree.nodes[nid]
        out = result.outcome(nid)
        rows.append(
            [
                nid,
                node.parent or "",
                node.depth,
                int(out.tested),
                "" if out.p_value is None else repr(out.p_value),
                "" if out.p_adjusted is None else repr(out.p_adjusted),
                "" if out.alpha_applied is None else repr(out.alpha_applied),
                int(out.rejected),
            ]
        )
    return "\n".join(",".join(str(c) for c in row) for row in rows) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_test(args) -> int:
    dataset = read_dataset(args.data)
    variant = gate.VARIANTS[args.variant]
    schedule = None
    if variant.thresholds == "adaptive":
        model = PowerModel(d_hat=args.d_hat, alpha=args.alpha)
        schedule = adaptive_schedule(dataset.tree, model)
    spec = TestSpec(
        statistic=args.statistic, n_perms=args.n_perms, seed=args.seed
    )
    cache: dict[str, float] = {}

    def p_source(nid: str) -> float:
        if nid not in cache:
            try:
                cache[nid] = permutation_pvalue(
                    dataset.blocks_under(nid), spec, stream_key=nid
                )
            except DegenerateBlockError as exc:
                raise CliError(f"degenerate blocks under node {nid!r}: {exc.block_ids}")
        return cache[nid]

    result = gate.run_topdown(
        dataset.tree, p_source, variant, alpha=args.alpha, schedule=schedule
    )
    extra = {"statistic": args.statistic, "n_perms": args.n_perms, "seed": args.seed}
    if args.format == "json":
        _write(result_to_json(result, dataset.tree, extra), args.out)
    elif args.format == "dot":
        _write(result_to_dot(result, dataset.tree, args.dot_pruned), args.out)
    else:
        _write(result_to_csv(result, dataset.tree), args.out)
    return 0


def cmd_alpha_schedule(args) -> int:
    tree = read_node_sizes(args.sizes)
    schedule = adaptive_schedule(tree, PowerModel(d_hat=args.d_hat, alpha=args.alpha))
    rows = [["depth", "n_nodes", "theta_hat", "error_load", "alpha_adj", "gating_sufficient"]]
    for row in schedule.depths:
        rows.append(
            [
                row.depth,
                row.n_nodes,
                f"{row.theta_hat:.9f}",
                f"{row.error_load:.9f}",
                f"{row.alpha_adj:.9f}",
                int(schedule.gating_sufficient),
            ]
        )
    _write("\n".join(",".join(str(c) for c in r) for r in rows) + "\n", args.out)
    return 0


_CONFIG_TYPES = {
    "k": int,
    "L": int,
    "units_per_leaf": int,
    "alpha": float,
    "replicates": int,
    "seed": int,
    "d": float,
    "d_hat": float,
    "null_proportion": float,
    "placement": str,
    "internal_power": str,
    "methods": str,
    "n_perms": int,
    "statistic": str,
    "sides": str,
    "students_per_block": int,
}

_CONFIG_KEYS = {
    "weak": ("k", "L", "alpha", "replicates", "seed"),
    "strong": (
        "k",
        "L",
        "units_per_leaf",
        "d",
        "d_hat",
        "null_proportion",
        "placement",
        "internal_power",
        "alpha",
        "replicates",
        "seed",
        "methods",
    ),
    "dpp": (
        "d",
        "d_hat",
        "alpha",
        "replicates",
        "seed",
        "n_perms",
        "statistic",
        "sides",
        "methods",
        "students_per_block",
    ),
}


def read_config(path: str, kind: str) -> dict:
    """Parse a key=value config file; keys must be valid for the sim kind."""
    allowed = _CONFIG_KEYS[kind]
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in allowed:
                raise CliError(
                    f"{path}:{lineno}: invalid key {key!r} for kind {kind!r} "
                    f"(allowed: {', '.join(allowed)})"
                )
            try:
                out[key] = _CONFIG_TYPES[key](value)
            except ValueError:
                raise CliError(f"{path}:{lineno}: bad value for {key!r}: {value!r}")
    if "methods" in out:
        out["methods"] = tuple(m.strip() for m in out["methods"].split(",") if m.strip())
    return out


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (int, float)) else str(x)


def weak_summary_csv(summary: sim.WeakSummary) -> str:
    header = "k,L,alpha,replicates,seed,fwer,fwer_se,mean_tests,mean_nodes_tested"
    row = ",".join(
        [
            str(summary.k),
            str(summary.L),
            _fmt(summary.alpha),
            str(summary.replicates),
            str(summary.seed),
            _fmt(summary.fwer),
            _fmt(summary.fwer_se),
            _fmt(summary.mean_tests),
            _fmt(summary.mean_nodes_tested),
        ]
    )
    return header + "\n" + row + "\n"


def strong_summary_csv(summary: sim.SimSummary) -> str:
    """One row per scenario: FWER per method plus the discovery comparison."""
    p = summary.params
    header = ["k", "d", "null_proportion", "sum_error_load"]
    values = [
        str(p["k"]),
        _fmt(p["d"]) if p["d"] is not None else "",
        _fmt(p["null_proportion"]),
        _fmt(p["sum_error_load"]),
    ]
    for method, ms in summary.methods.items():
        header.append(f"fwer_{method}")
        values.append(_fmt(ms.fwer_node))
    for method, ms in summary.methods.items():
        disc = (
            ms.true_rejections_leaf
            if method in sim.BU_METHODS
            else ms.true_rejections_node
        )
        header.append(f"disc_{method}")
        values.append(_fmt(disc))
    if "td_adapt_pruned" in summary.methods and "bu_hommel" in summary.methods:
        bu = summary.methods["bu_hommel"].true_rejections_leaf
        td = summary.methods["td_adapt_pruned"].true_rejections_node
        header.append("ratio_td_adapt_pruned_vs_bu_hommel")
        values.append(_fmt(td / bu) if bu > 0 else "inf")
    return ",".join(header) + "\n" + ",".join(values) + "\n"


def dpp_summary_csv(summary: sim.SimSummary) -> str:
    """Metric-by-method table mirroring the block-data study layout."""
    methods = list(summary.methods)
    rows = [["metric", *methods]]
    metric_fields = [
        ("nodes_tested", "mean_nodes_tested"),
        ("node_fwer", "fwer_node"),
        ("node_false_rej_prop", "false_rejection_prop_node"),
        ("node_power", "power_node"),
        ("node_true_rejections", "true_rejections_node"),
        ("leaves_tested", "mean_leaves_tested"),
        ("leaf_power", "power_leaf"),
        ("leaf_true_rejections", "true_rejections_leaf"),
        ("leaf_fwer", "fwer_leaf"),
        ("leaf_false_rej_prop", "false_rejection_prop_leaf"),
    ]
    for label, attr in metric_fields:
        rows.append([label, *[_fmt(getattr(summary.methods[m], attr)) for m in methods]])
    return "\n".join(",".join(row) for row in rows) + "\n"


def cmd_simulate(args) -> int:
    overrides = read_config(args.config, args.kind) if args.config else {}
    if args.kind == "weak":
        for key in ("k", "L"):
            if key not in overrides:
                raise CliError(f"weak simulation config requires {key}")
        summary = sim.simulate_weak(**overrides)
        _write(weak_summary_csv(summary), args.out)
    elif args.kind == "strong":
        for key in ("k", "L", "units_per_leaf", "null_proportion"):
            if key not in overrides:
                raise CliError(f"strong simulation config requires {key}")
        config = sim.ScenarioConfig(**overrides)
        summary = sim.simulate_strong(config)
        _write(strong_summary_csv(summary), args.out)
    else:
        if "d" not in overrides:
            raise CliError("dpp simulation config requires d")
        config = sim.DppConfig(**overrides)
        summary = sim.simulate_dpp(config)
        _write(dpp_summary_csv(summary), args.out)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treegate",
        description="Top-down gated hypothesis testing for block-randomized experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run the gated procedure on a CSV dataset")
    t.add_argument("data", help="unit-level CSV (unit_id, block_id, treatment, outcome, hierarchy...)")
    t.add_argument("--variant", default="unadjusted", choices=sorted(gate.VARIANTS))
    t.add_argument("--statistic", default="rank", choices=("mean_diff", "rank", "energy"))
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--d-hat", type=float, default=None, help="planning effect size for adaptive variants")
    t.add_argument("--n-perms", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--format", default="json", choices=("json", "dot", "csv"))
    t.add_argument("--dot-pruned", default="omit", choices=("omit", "collapse"),
                   help="DOT only: drop untested subtrees or collapse each into one placeholder")
    t.add_argument("--out", default=None, help="output path (default stdout)")
    t.set_defaults(func=cmd_test)

    a = sub.add_parser("alpha-schedule", help="adaptive thresholds for a node size table")
    a.add_argument("sizes", help="CSV with node_id, parent_id, n_units")
    a.add_argument("--d-hat", type=float, required=True)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_alpha_schedule)

    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("kind", choices=("weak", "strong", "dpp"))
    s.add_argument("--config", required=True, help="key=value config file")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is cmd_test:
        variant = gate.VARIANTS[args.variant]
        if variant.thresholds == "adaptive" and args.d_hat is None:
            parser.error(f"--d-hat is required for variant {args.variant!r}")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
