"""Seeded Louvain community detection over the similarity graph.

Negative combined weights are clamped to 0 (modularity with negative
weights is ill-defined).  The run is fully deterministic: node visit order
is a permutation drawn from the configured seed, and local-move ties break
toward the lowest community id.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .simgraph import SimilarityGraph

UNASSIGNED = None

_MOVE_TOL = 1e-9


@dataclass
class Partition:
    """doc id -> dense group id (0..G-1) or UNASSIGNED."""

    assignment: dict[str, int | None] = field(default_factory=dict)

    def groups(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = defaultdict(list)
        for node, group in self.assignment.items():
            if group is not UNASSIGNED:
                out[group].append(node)
        return dict(out)

    def unassigned(self) -> list[str]:
        return [n for n, g in self.assignment.items() if g is UNASSIGNED]

    def group_count(self) -> int:
        return len({g for g in self.assignment.values() if g is not UNASSIGNED})


@dataclass
class ClusterConfig:
    d_seed_threshold: float = 0.8
    resolution: float = 1.0
    rng_seed: int = 0
    min_group_size: int = 2


@dataclass(frozen=True)
class MoveRecord:
    level: int
    node: str | int
    source: int
    target: int
    gain: float


@dataclass
class LouvainTrace:
    """Optional diagnostics: per-pass modularity and the local-move log."""

    modularity_per_pass: list[float] = field(default_factory=list)
    moves: list[MoveRecord] = field(default_factory=list)


def _clamped_adjacency(graph: SimilarityGraph) -> dict[str, dict[str, float]]:
    adj: dict[str, dict[str, float]] = {node: {} for node in graph.nodes}
    for (a, b), (_, s) in graph.edges.items():
        w = max(s, 0.0)
        if w > 0.0:
            adj[a][b] = w
            adj[b][a] = w
    return adj


def seed_components(graph: SimilarityGraph, threshold: float) -> Partition:
    """Connected components of the subgraph of edges with d >= threshold.

    Isolated nodes become singleton seed groups; ids are dense in order of
    first appearance over the graph's node order.
    """
    adj: dict[str, list[str]] = {node: [] for node in graph.nodes}
    for (a, b), (features, _) in graph.edges.items():
        if features.d >= threshold:
            adj[a].append(b)
            adj[b].append(a)
    assignment: dict[str, int | None] = {}
    next_group = 0
    for start in graph.nodes:
        if start in assignment:
            continue
        queue = [start]
        assignment[start] = next_group
        while queue:
            node = queue.pop()
            for nb in sorted(adj[node]):
                if nb not in assignment:
                    assignment[nb] = next_group
                    queue.append(nb)
        next_group += 1
    return Partition(assignment)


def modularity(graph: SimilarityGraph, partition: Partition, resolution: float = 1.0) -> float:
    """Q = sum_c [ W_c/W - resolution * (S_c / 2W)^2 ] over clamped weights.

    Unassigned nodes count as their own singleton communities.  An empty or
    zero-weight graph has Q = 0.
    """
    adj = _clamped_adjacency(graph)
    total = sum(sum(nbrs.values()) for nbrs in adj.values()) / 2.0
    if total == 0.0:
        return 0.0
    community: dict[str, object] = {}
    for node in graph.nodes:
        group = partition.assignment.get(node, UNASSIGNED)
        community[node] = group if group is not UNASSIGNED else ("solo", node)
    intra: dict[object, float] = defaultdict(float)
    degree_sum: dict[object, float] = defaultdict(float)
    for node in graph.nodes:
        degree_sum[community[node]] += sum(adj[node].values())
    for node in graph.nodes:
        for nb, w in adj[node].items():
            if node < nb and community[node] == community[nb]:
                intra[community[node]] += w
    q = 0.0
    for com in degree_sum:
        q += intra.get(com, 0.0) / total - resolution * (degree_sum[com] / (2.0 * total)) ** 2
    return q


def _one_level(order: list, adj: dict, self_loops: dict, node2com: dict,
               total: float, resolution: float,
               move_log: list[MoveRecord] | None, level: int) -> bool:
    degree = {
        u: 2.0 * self_loops.get(u, 0.0) + sum(adj[u].values()) for u in order
    }
    com_tot: dict[int, float] = defaultdict(float)
    for u in order:
        com_tot[node2com[u]] += degree[u]

    moved_any = False
    while True:
        moved_this_sweep = False
        for u in order:
            c_old = node2com[u]
            k_u = degree[u]
            neigh: dict[int, float] = defaultdict(float)
            for v, w in adj[u].items():
                if v != u:
                    neigh[node2com[v]] += w
            com_tot[c_old] -= k_u
            gain_old = neigh.get(c_old, 0.0) / total - resolution * com_tot[c_old] * k_u / (
                2.0 * total * total
            )
            best_c, best_gain = c_old, gain_old
            # ascending community ids + strict improvement = lowest id wins ties
            for c in sorted(neigh):
                if c == c_old:
                    continue
                gain = neigh[c] / total - resolution * com_tot[c] * k_u / (2.0 * total * total)
                if gain > best_gain + _MOVE_TOL:
                    best_c, best_gain = c, gain
            com_tot[best_c] += k_u
            if best_c != c_old:
                node2com[u] = best_c
                moved_this_sweep = True
                moved_any = True
                if move_log is not None:
                    move_log.append(
                        MoveRecord(level=level, node=u, source=c_old, target=best_c,
                                   gain=best_gain - gain_old)
                    )
        if not moved_this_sweep:
            break
    return moved_any


def _aggregate(adj: dict, self_loops: dict, node2com: dict) -> tuple[dict, dict, dict]:
    labels = {c: i for i, c in enumerate(sorted(set(node2com.values())))}
    new_adj: dict[int, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    new_self: dict[int, float] = defaultdict(float)
    for u, loop in self_loops.items():
        new_self[labels[node2com[u]]] += loop
    for u, nbrs in adj.items():
        cu = labels[node2com[u]]
        for v, w in nbrs.items():
            if not u < v:
                continue
            cv = labels[node2com[v]]
            if cu == cv:
                new_self[cu] += w
            else:
                new_adj[cu][cv] += w
                new_adj[cv][cu] += w
    plain_adj = {c: dict(nbrs) for c, nbrs in new_adj.items()}
    for c in labels.values():
        plain_adj.setdefault(c, {})
        new_self.setdefault(c, 0.0)
    return plain_adj, dict(new_self), labels


def _finalize(assignment: dict[str, int], node_order: tuple[str, ...],
              min_group_size: int) -> Partition:
    sizes: dict[int, int] = defaultdict(int)
    for group in assignment.values():
        sizes[group] += 1
    relabel: dict[int, int] = {}
    final: dict[str, int | None] = {}
    for node in node_order:
        group = assignment[node]
        if sizes[group] < min_group_size:
            final[node] = UNASSIGNED
            continue
        if group not in relabel:
            relabel[group] = len(relabel)
        final[node] = relabel[group]
    return Partition(final)


def louvain(graph: SimilarityGraph, seed: Partition, config: ClusterConfig | None = None,
            trace: LouvainTrace | None = None) -> Partition:
    """Two-phase Louvain (local moves + aggregation) initialized from seed.

    Groups smaller than min_group_size end up UNASSIGNED.  Identical
    (graph, seed, config) always produce the identical partition.
    """
    config = config or ClusterConfig()
    nodes = list(graph.nodes)
    if not nodes:
        return Partition({})
    missing = [n for n in nodes if n not in seed.assignment]
    if missing:
        raise ValueError(f"seed partition does not cover nodes: {missing}")

    # dense initial communities from the seed; unassigned seeds are singletons
    label_of: dict[object, int] = {}
    node2com: dict = {}
    for node in nodes:
        group = seed.assignment[node]
        key = ("g", group) if group is not UNASSIGNED else ("solo", node)
        if key not in label_of:
            label_of[key] = len(label_of)
        node2com[node] = label_of[key]

    adj = _clamped_adjacency(graph)
    self_loops: dict = {node: 0.0 for node in nodes}
    total = sum(sum(nbrs.values()) for nbrs in adj.values()) / 2.0

    original_to_current: dict[str, object] = {node: node for node in nodes}

    def project() -> dict[str, int]:
        return {o: node2com[original_to_current[o]] for o in nodes}

    if total > 0.0:
        rng = random.Random(config.rng_seed)
        level = 0
        current = list(nodes)
        while True:
            order = sorted(current, key=str)
            rng.shuffle(order)
            moved = _one_level(order, adj, self_loops, node2com, total,
                               config.resolution,
                               trace.moves if trace is not None else None, level)
            if trace is not None:
                trace.modularity_per_pass.append(
                    modularity(graph, _finalize(project(), graph.nodes, 1),
                               config.resolution)
                )
            if not moved:
                break
            adj, self_loops, labels = _aggregate(adj, self_loops, node2com)
            for o in nodes:
                original_to_current[o] = labels[node2com[original_to_current[o]]]
            current = sorted(adj)
            node2com = {c: c for c in current}
            level += 1

    return _finalize(project(), graph.nodes, config.min_group_size)


# ---------------------------------------------------------------------------
# partition export


def save_partition(partition: Partition, path: str | Path,
                   metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        for node, group in partition.assignment.items():
            label = "UNASSIGNED" if group is UNASSIGNED else str(group)
            fh.write(f"{node}\t{label}\n")


def load_partition(path: str | Path) -> tuple[Partition, dict[str, str]]:
    assignment: dict[str, int | None] = {}
    metadata: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                metadata[key] = value
                continue
            node, label = line.split("\t")
            assignment[node] = UNASSIGNED if label == "UNASSIGNED" else int(label)
    return Partition(assignment), metadata
