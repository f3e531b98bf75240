"""Similarity graphs: Louvain communities, force-directed layout, GraphML/DOT export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .similarity import RadiusVector, SimilarityMatrix

GAIN_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...]  # a < b, sorted
    radius: np.ndarray
    popularity_rank: np.ndarray | None = None
    labels: tuple[str, ...] | None = None
    mode: str = "user"

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for a, b, _ in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def total_weight(self) -> float:
        return math.fsum(w for _, _, w in self.edges)


def build_graph(
    sim: SimilarityMatrix,
    radii: RadiusVector,
    threshold: float = 0.0,
    popularity_rank: np.ndarray | None = None,
    labels: Sequence[str] | None = None,
) -> SimilarityGraph:
    """One weighted edge per stored pair with similarity > threshold."""
    expect = "user" if sim.mode == "user_user" else "item"
    if radii.mode != expect:
        raise ValueError(f"{radii.mode} radii do not match a {sim.mode} matrix")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    edges = tuple((a, b, w) for (a, b), w in sorted(sim.pairs.items()) if w > threshold)
    return SimilarityGraph(
        sim.size,
        edges,
        np.asarray(radii.radii),
        None if popularity_rank is None else np.asarray(popularity_rank),
        None if labels is None else tuple(labels),
        expect,
    )


def modularity(graph: SimilarityGraph, membership: Sequence[int]) -> float:
    """Q = sum_c [L_c / m - (d_c / 2m)^2], recomputed from scratch."""
    m = graph.total_weight()
    if m == 0:
        return 0.0
    internal: dict[int, float] = {}
    degree: dict[int, float] = {}
    for a, b, w in graph.edges:
        ca, cb = membership[a], membership[b]
        if ca == cb:
            internal[ca] = internal.get(ca, 0.0) + w
        degree[ca] = degree.get(ca, 0.0) + w
        degree[cb] = degree.get(cb, 0.0) + w
    return math.fsum(internal.get(c, 0.0) / m - (d / (2 * m)) ** 2 for c, d in degree.items())


@dataclass
class CommunityAssignment:
    membership: tuple[int, ...]
    modularity: float
    pass_modularity: list[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return max(self.membership) + 1 if self.membership else 0

    def sizes(self) -> list[int]:
        return np.bincount(self.membership, minlength=self.count).tolist()


class _Level:
    """Weighted graph at one aggregation level.

    ``adj[u]`` maps neighbors v != u to edge weight; ``loops[u]`` is the
    weight folded inside super-node u (each original edge once).
    """

    def __init__(self, adj: list[dict[int, float]], loops: list[float]) -> None:
        self.adj = adj
        self.loops = loops
        self.k = [math.fsum(a.values()) + 2.0 * l for a, l in zip(adj, loops)]

    @classmethod
    def from_graph(cls, graph: SimilarityGraph) -> "_Level":
        adj: list[dict[int, float]] = [{} for _ in range(graph.n)]
        for a, b, w in graph.edges:
            adj[a][b] = adj[a].get(b, 0.0) + w
            adj[b][a] = adj[b].get(a, 0.0) + w
        return cls(adj, [0.0] * graph.n)

    def aggregate(self, comm: list[int]) -> "_Level":
        size = max(comm) + 1
        adj: list[dict[int, float]] = [{} for _ in range(size)]
        loops = [0.0] * size
        for u, nbrs in enumerate(self.adj):
            cu = comm[u]
            loops[cu] += self.loops[u]
            for v, w in nbrs.items():
                cv = comm[v]
                if cu == cv:
                    if u < v:
                        loops[cu] += w
                else:
                    adj[cu][cv] = adj[cu].get(cv, 0.0) + w
        return _Level(adj, loops)


def _local_moves(level: _Level, comm: list[int], order: Sequence[int], m: float) -> bool:
    """Sweep nodes in ``order`` until a full sweep moves nothing; True if any moved."""
    tot: dict[int, float] = {}
    for u, c in enumerate(comm):
        tot[c] = tot.get(c, 0.0) + level.k[u]
    moved_any = False
    while True:
        moved = False
        for u in order:
            cu, ku = comm[u], level.k[u]
            links: dict[int, float] = {}
            for v, w in level.adj[u].items():
                links[comm[v]] = links.get(comm[v], 0.0) + w
            tot[cu] -= ku
            # m * (modularity gain of inserting u into c)
            stay = links.get(cu, 0.0) - tot[cu] * ku / (2.0 * m)
            gains = {c: links[c] - tot[c] * ku / (2.0 * m) for c in links if c != cu}
            best_c = cu
            if gains:
                top = max(gains.values())
                if top > stay + GAIN_EPS:
                    best_c = min(c for c, g in gains.items() if g >= top - GAIN_EPS)
            tot[best_c] = tot.get(best_c, 0.0) + ku
            if best_c != cu:
                comm[u] = best_c
                moved = moved_any = True
        if not moved:
            return moved_any


def _renumber(comm: list[int]) -> list[int]:
    ids: dict[int, int] = {}
    return [ids.setdefault(c, len(ids)) for c in comm]


def louvain(graph: SimilarityGraph, seed: int = 0) -> CommunityAssignment:
    """Two-phase Louvain modularity optimization (resolution 1).

    Each level visits nodes in a seeded permutation; a node joins the
    neighboring community with the largest positive gain, ties going to the
    lowest community id. Converged levels are aggregated into super-nodes.
    When aggregation stops improving, a node-level sweep on the original
    graph runs once more; if it moves anything, aggregation resumes from
    the refined partition. The result is therefore also stable under
    single-node moves.
    """
    if graph.n < 1:
        raise ValueError("graph has no nodes")
    rng = np.random.default_rng(seed)
    m = graph.total_weight()
    base = _Level.from_graph(graph)
    member = list(range(graph.n))
    history = [modularity(graph, member)]
    if m == 0:
        return CommunityAssignment(tuple(member), 0.0, history)

    level, node_of = base, list(range(graph.n))  # node_of: original node -> level node
    while True:
        comm = list(range(len(level.adj)))
        order = rng.permutation(len(level.adj)).tolist()
        if _local_moves(level, comm, order, m):
            comm = _renumber(comm)
            member = [comm[node_of[u]] for u in range(graph.n)]
            node_of = member
            level = level.aggregate(comm)
            history.append(modularity(graph, member))
            continue
        # no move at this level: refine at node granularity
        refined = list(member)
        if not _local_moves(base, refined, rng.permutation(graph.n).tolist(), m):
            break
        member = _renumber(refined)
        history.append(modularity(graph, member))
        node_of = member
        level = base.aggregate(member)

    member = _renumber(member)
    return CommunityAssignment(tuple(member), modularity(graph, member), history)


@dataclass(frozen=True, eq=False)
class LayoutResult:
    positions: np.ndarray  # (n, 2)
    iterations: int
    seed: int


def layout(
    graph: SimilarityGraph,
    iterations: int = 100,
    seed: int = 0,
    *,
    repulsion: float = 1.0,
    initial_temperature: float = 0.1,
) -> LayoutResult:
    """Fruchterman-Reingold layout from seeded positions in the unit square.

    Attraction w * d^2 / k along edges, repulsion ``repulsion`` * k^2 / d
    between all pairs (k = sqrt(1/n)); per-iteration displacement is capped
    by a temperature cooling linearly to 0.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    rng = np.random.default_rng(seed)
    n = graph.n
    pos = rng.random((n, 2))
    if n > 1 and iterations > 0:
        k = math.sqrt(1.0 / n)
        ea = np.array([e[0] for e in graph.edges], dtype=np.int64)
        eb = np.array([e[1] for e in graph.edges], dtype=np.int64)
        ew = np.array([e[2] for e in graph.edges], dtype=np.float64)
        for it in range(iterations):
            temp = initial_temperature * (1.0 - it / iterations)
            delta = pos[:, None, :] - pos[None, :, :]
            dist = np.maximum(np.sqrt((delta**2).sum(axis=2)), 1e-9)
            np.fill_diagonal(dist, np.inf)
            disp = (delta * (repulsion * k * k / dist**2)[:, :, None]).sum(axis=1)
            if len(ea):
                d_e = pos[ea] - pos[eb]
                l_e = np.maximum(np.sqrt((d_e**2).sum(axis=1)), 1e-9)
                pull = d_e * (ew * l_e / k)[:, None]
                np.add.at(disp, ea, -pull)
                np.add.at(disp, eb, pull)
            length = np.maximum(np.sqrt((disp**2).sum(axis=1)), 1e-12)
            pos += disp * (np.minimum(length, temp) / length)[:, None]
    # jitter coincident nodes apart deterministically
    if n > 1 and len(np.unique(pos, axis=0)) < n:
        pos += rng.uniform(-1e-6, 1e-6, size=pos.shape)
    return LayoutResult(pos, iterations, seed)


def _num(x: float) -> str:
    return format(float(x), ".17g")


def to_graphml(
    graph: SimilarityGraph,
    communities: CommunityAssignment | None = None,
    positions: LayoutResult | None = None,
) -> str:
    keys = [
        '  <key id="label" for="node" attr.name="label" attr.type="string"/>',
        '  <key id="radius" for="node" attr.name="radius" attr.type="int"/>',
    ]
    if graph.popularity_rank is not None:
        keys.append('  <key id="rank" for="node" attr.name="popularity_rank" attr.type="int"/>')
    if communities is not None:
        keys.append('  <key id="community" for="node" attr.name="community" attr.type="int"/>')
    if positions is not None:
        keys.append('  <key id="x" for="node" attr.name="x" attr.type="double"/>')
        keys.append('  <key id="y" for="node" attr.name="y" attr.type="double"/>')
    keys.append('  <key id="weight" for="edge" attr.name="weight" attr.type="double"/>')
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns"'
        ' xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance"'
        ' xsi:schemaLocation="http://graphml.graphdrawing.org/xmlns'
        ' http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd">',
        *keys,
        f'  <graph id="{graph.mode}_similarity" edgedefault="undirected">',
    ]
    for u in range(graph.n):
        label = graph.labels[u] if graph.labels else str(u)
        out.append(f'    <node id="n{u}">')
        out.append(f'      <data key="label">{escape(label)}</data>')
        out.append(f'      <data key="radius">{int(graph.radius[u])}</data>')
        if graph.popularity_rank is not None:
            out.append(f'      <data key="rank">{int(graph.popularity_rank[u])}</data>')
        if communities is not None:
            out.append(f'      <data key="community">{communities.membership[u]}</data>')
        if positions is not None:
            x, y = positions.positions[u]
            out.append(f'      <data key="x">{_num(x)}</data>')
            out.append(f'      <data key="y">{_num(y)}</data>')
        out.append("    </node>")
    for k, (a, b, w) in enumerate(graph.edges):
        out.append(f'    <edge id="e{k}" source="n{a}" target="n{b}">')
        out.append(f'      <data key="weight">{_num(w)}</data>')
        out.append("    </edge>")
    out += ["  </graph>", "</graphml>"]
    return "\n".join(out) + "\n"


def to_dot(
    graph: SimilarityGraph,
    communities: CommunityAssignment | None = None,
    positions: LayoutResult | None = None,
) -> str:
    out = [f"graph {graph.mode}_similarity {{"]
    for u in range(graph.n):
        attrs = [f"label={quoteattr(graph.labels[u] if graph.labels else str(u))}", f"radius={int(graph.radius[u])}"]
        if communities is not None:
            attrs.append(f"community={communities.membership[u]}")
        if positions is not None:
            x, y = positions.positions[u]
            attrs.append(f'pos="{_num(x)},{_num(y)}!"')
        out.append(f"  n{u} [{', '.join(attrs)}];")
    for a, b, w in graph.edges:
        out.append(f"  n{a} -- n{b} [weight={_num(w)}];")
    out.append("}")
    return "\n".join(out) + "\n"


def export_graph(
    graph: SimilarityGraph,
    path: str | Path,
    communities: CommunityAssignment | None = None,
    positions: LayoutResult | None = None,
    fmt: str = "graphml",
) -> Path:
    if fmt == "graphml":
        text = to_graphml(graph, communities, positions)
    elif fmt == "dot":
        text = to_dot(graph, communities, positions)
    else:
        raise ValueError(f"unknown graph format {fmt!r}")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path
