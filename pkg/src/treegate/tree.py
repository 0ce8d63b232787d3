"""Rooted hypothesis trees over experimental blocks.

Every leaf carries exactly one experimental block; every internal node
represents the union of the blocks beneath it.  The null hypothesis at a
node asserts "no treatment effect in any unit under this node", so a node
is null exactly when all of its descendant leaves are null.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence


class TreeError(ValueError):
    """Malformed tree input or structurally inconsistent tree."""


@dataclass(frozen=True, slots=True)
class TreeNode:
    """One hypothesis node.  Depth is 1 at the root.

    ``is_null`` is a simulation-only truth label: None means unlabeled.
    """

    id: str
    parent: str | None
    children: tuple[str, ...]
    depth: int
    blocks: frozenset[str]
    n_units: int
    is_null: bool | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


class HypothesisTree:
    """Immutable rooted tree of hypotheses.

    Nodes are kept in insertion order (breadth-first for the built-in
    constructors) so traversals and tie-breaks are reproducible.  Trees are
    never mutated after construction; relabeling returns a new tree.
    """

    def __init__(
        self, nodes: Mapping[str, TreeNode], root: str, *, group_leaves_ok: bool = False
    ):
        self.nodes: dict[str, TreeNode] = dict(nodes)
        self.root = root
        self._group_leaves_ok = group_leaves_ok
        self._validate()
        by_depth: dict[int, list[str]] = {}
        for nid, node in self.nodes.items():
            by_depth.setdefault(node.depth, []).append(nid)
        self._by_depth = {d: tuple(ids) for d, ids in sorted(by_depth.items())}
        self.max_depth = max(self._by_depth)
        self.leaves: tuple[str, ...] = tuple(
            nid for nid, n in self.nodes.items() if n.is_leaf
        )

    # -- structure ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TreeError(f"unknown node id: {node_id!r}") from None

    def nodes_at_depth(self, depth: int) -> tuple[str, ...]:
        return self._by_depth.get(depth, ())

    def ancestors(self, node_id: str) -> tuple[str, ...]:
        """Proper ancestors of a node, root first."""
        chain = []
        cur = self.node(node_id).parent
        while cur is not None:
            chain.append(cur)
            cur = self.nodes[cur].parent
        return tuple(reversed(chain))

    def _validate(self) -> None:
        roots = [nid for nid, n in self.nodes.items() if n.parent is None]
        if len(roots) != 1:
            raise TreeError(f"expected exactly one root, found {len(roots)}")
        if roots[0] != self.root:
            raise TreeError("declared root does not match the parentless node")
        for nid, node in self.nodes.items():
            if node.parent is not None:
                parent = self.nodes.get(node.parent)
                if parent is None:
                    raise TreeError(f"node {nid!r} references missing parent")
                if nid not in parent.children:
                    raise TreeError(f"node {nid!r} missing from parent's children")
                if node.depth != parent.depth + 1:
                    raise TreeError(f"node {nid!r} depth inconsistent with parent")
            if node.is_leaf:
                if len(node.blocks) != 1 and not self._group_leaves_ok:
                    raise TreeError(f"leaf {nid!r} must hold exactly one block")
            else:
                kids = [self.nodes.get(c) for c in node.children]
                if any(k is None for k in kids):
                    raise TreeError(f"node {nid!r} references missing child")
                if sum(k.n_units for k in kids) != node.n_units:
                    raise TreeError(f"node {nid!r}: children unit counts do not sum")
                if sum(len(k.blocks) for k in kids) != len(node.blocks) or any(
                    not k.blocks <= node.blocks for k in kids
                ):
                    raise TreeError(f"node {nid!r}: children do not partition blocks")
        if self.nodes[self.root].depth != 1:
            raise TreeError("root must have depth 1")

    # -- derived trees -----------------------------------------------------

    def label_truth(self, non_null_leaves: Iterable[str]) -> "HypothesisTree":
        """Return a copy with is_null set from a set of non-null leaf blocks.

        A node is non-null iff at least one descendant leaf carries a block
        in ``non_null_leaves``; parents are therefore the conjunction of
        their children.
        """
        wanted = set(non_null_leaves)
        known = {b for nid in self.leaves for b in self.nodes[nid].blocks}
        unknown = wanted - known
        if unknown:
            raise TreeError(f"unknown block ids: {sorted(unknown)}")
        non_null: set[str] = set()
        for nid in self.leaves:
            if self.nodes[nid].blocks & wanted:
                non_null.add(nid)
                cur = self.nodes[nid].parent
                while cur is not None and cur not in non_null:
                    non_null.add(cur)
                    cur = self.nodes[cur].parent
        relabeled = {
            nid: replace(node, is_null=nid not in non_null)
            for nid, node in self.nodes.items()
        }
        return HypothesisTree(relabeled, self.root)

    def prune_below(self, stop_nodes: Iterable[str]) -> "HypothesisTree":
        """Drop all strict descendants of the given nodes.

        The stop nodes themselves survive with their block sets intact, so
        the result may contain terminal group nodes.  Used after a testing
        round to remove the subtrees of non-rejected nodes.
        """
        stops = set(stop_nodes)
        dead: set[str] = set()
        stack = [c for nid in stops for c in self.node(nid).children]
        while stack:
            cur = stack.pop()
            if cur in dead:
                continue
            dead.add(cur)
            stack.extend(self.nodes[cur].children)
        kept = {}
        for nid, node in self.nodes.items():
            if nid in dead:
                continue
            if nid in stops and node.children:
                node = replace(node, children=())
            kept[nid] = node
        return HypothesisTree(kept, self.root, group_leaves_ok=True)

    def non_null_count(self, depth: int) -> int:
        return sum(
            1 for nid in self.nodes_at_depth(depth) if self.nodes[nid].is_null is False
        )

    def exposed_null_count(self, depth: int) -> int:
        """Count true nulls at a depth whose parent is non-null.

        The root counts as exposed when it is null itself.
        """
        count = 0
        for nid in self.nodes_at_depth(depth):
            node = self.nodes[nid]
            if node.is_null is not True:
                continue
            if node.parent is None or self.nodes[node.parent].is_null is False:
                count += 1
        return count


def build_regular(k: int, L: int, units_per_leaf: int = 1) -> HypothesisTree:
    """Complete k-ary tree with L levels (root at depth 1).

    Level ``l`` holds ``k**(l-1)`` nodes; the ``k**(L-1)`` leaves each carry
    one block whose id equals the leaf's node id.  Node ids are the usual
    breadth-first numbering "1", "2", ...
    """
    if k < 2:
        raise TreeError("branching factor k must be at least 2")
    if L < 2:
        raise TreeError("tree must have at least 2 levels")
    if units_per_leaf < 1:
        raise TreeError("units_per_leaf must be at least 1")

    level_start = [1]
    for depth in range(1, L):
        level_start.append(level_start[-1] + k ** (depth - 1))
    total = level_start[-1] + k ** (L - 1) - 1

    blocks: list[frozenset[str]] = [frozenset()] * (total + 1)
    units = [0] * (total + 1)
    nodes: dict[str, TreeNode] = {}
    for i in range(total, 0, -1):
        first_child = k * (i - 1) + 2
        is_leaf = first_child > total
        if is_leaf:
            blocks[i] = frozenset({str(i)})
            units[i] = units_per_leaf
        else:
            kids = range(first_child, first_child + k)
            blocks[i] = frozenset().union(*(blocks[c] for c in kids))
            units[i] = sum(units[c] for c in kids)
    for i in range(1, total + 1):
        depth = 1
        while depth < L and i >= level_start[depth]:
            depth += 1
        first_child = k * (i - 1) + 2
        children = (
            tuple(str(c) for c in range(first_child, first_child + k))
            if first_child <= total
            else ()
        )
        parent = str((i - 2) // k + 1) if i > 1 else None
        nodes[str(i)] = TreeNode(
            id=str(i),
            parent=parent,
            children=children,
            depth=depth,
            blocks=blocks[i],
            n_units=units[i],
        )
    return HypothesisTree(nodes, "1")


def build_from_paths(
    rows: Sequence[tuple[str, Sequence[str], int]],
) -> HypothesisTree:
    """Irregular tree from (block_id, path, n_units) rows.

    A path lists the labels from just below the root down to the block's own
    slot (e.g. ``("CollegeA", "Cohort1", "B07")``); every strict prefix
    becomes an internal group node and the block becomes a leaf, whose node
    id is the block id.  An empty path attaches the block directly to the
    root.  A block whose full path is a strict prefix of another block's
    path would have to act as both a block and a group, which is rejected.
    """
    if not rows:
        raise TreeError("no blocks given")
    seen_blocks: set[str] = set()
    paths: list[tuple[str, tuple[str, ...], int]] = []
    for block_id, path, n_units in rows:
        if block_id in seen_blocks:
            raise TreeError(f"duplicate block id: {block_id!r}")
        seen_blocks.add(block_id)
        if n_units < 1:
            raise TreeError(f"block {block_id!r}: n_units must be at least 1")
        paths.append((block_id, tuple(path), n_units))

    group_prefixes: set[tuple[str, ...]] = set()
    for _, path, _ in paths:
        for cut in range(1, len(path)):
            group_prefixes.add(path[:cut])
    bad = sorted(
        block_id for block_id, path, _ in paths if path and path in group_prefixes
    )
    if bad:
        raise TreeError(f"block(s) whose path is also a group: {bad}")

    def group_id(prefix: tuple[str, ...]) -> str:
        return "/".join(prefix)

    root_id = "root"
    children: dict[str, list[str]] = {root_id: []}
    blocks: dict[str, set[str]] = {root_id: set()}
    units: dict[str, int] = {root_id: 0}
    depth: dict[str, int] = {root_id: 1}
    parent: dict[str, str | None] = {root_id: None}

    for block_id, path, n_units in paths:
        cur = root_id
        for cut in range(1, len(path)):
            gid = group_id(path[:cut])
            if gid in seen_blocks or gid == root_id:
                raise TreeError(f"group id collides with another node id: {gid!r}")
            if gid not in children:
                children[gid] = []
                blocks[gid] = set()
                units[gid] = 0
                depth[gid] = depth[cur] + 1
                parent[gid] = cur
                children[cur].append(gid)
            cur = gid
        children[cur].append(block_id)
        children[block_id] = []
        blocks[block_id] = {block_id}
        units[block_id] = n_units
        depth[block_id] = depth[cur] + 1
        parent[block_id] = cur
        for anc in (root_id, *(group_id(path[:c]) for c in range(1, len(path)))):
            blocks[anc].add(block_id)
            units[anc] += n_units

    order = sorted(children, key=lambda nid: depth[nid])
    nodes = {
        nid: TreeNode(
            id=nid,
            parent=parent[nid],
            children=tuple(children[nid]),
            depth=depth[nid],
            blocks=frozenset(blocks[nid]),
            n_units=units[nid],
        )
        for nid in order
    }
    return HypothesisTree(nodes, root_id)


def label_truth(tree: HypothesisTree, non_null_leaves: Iterable[str]) -> HypothesisTree:
    """Functional alias for :meth:`HypothesisTree.label_truth`."""
    return tree.label_truth(non_null_leaves)
