"""Second-order network translation of the heterogeneous graph.

Auxiliary relationships (user-word, item-brand, ...) are folded into direct
same-type relationships: two users are similar when they share auxiliary
neighbors of one type, with the count of shared neighbors as the edge weight.
Very-high-degree auxiliary nodes are pruned before counting, since
co-adjacency to a node almost everyone touches is weak evidence of
similarity. Each node then keeps its top-rho neighbors per relation type,
padded to exactly rho entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphFormatError
from .graph import ITEM, USER, TypedGraph

DEFAULT_HOT_THRESHOLD = 20_000


class PairWeights:
    """Sparse symmetric same-type weight matrix with a zero diagonal.

    Entries are stored once per unordered pair under the key (min, max).
    """

    def __init__(self, n: int, counts: dict[tuple[int, int], int] | None = None):
        self.n = n
        self.counts = counts if counts is not None else {}

    def get(self, i: int, j: int) -> int:
        if i == j:
            return 0
        key = (i, j) if i < j else (j, i)
        return self.counts.get(key, 0)

    def neighbors_of(self, i: int) -> list[tuple[int, int]]:
        """(neighbor, weight) pairs of node i, unordered."""
        out = []
        for (a, b), w in self.counts.items():
            if a == i:
                out.append((b, w))
            elif b == i:
                out.append((a, w))
        return out

    def __len__(self):
        return len(self.counts)


def second_order_proximity(graph: TypedGraph, aux_type: int, side: str,
                           hot_threshold: int = DEFAULT_HOT_THRESHOLD) -> PairWeights:
    """Count shared aux_type neighbors for every same-side node pair.

    Only auxiliary nodes with side-degree strictly below ``hot_threshold``
    contribute. The join enumerates pairs per auxiliary node (inverted
    index), so cost is the sum of squared retained degrees rather than the
    full pairwise matrix.
    """
    if aux_type < 2:
        raise ValueError("aux_type must be an auxiliary type (>= 2)")
    if hot_threshold < 1:
        raise ValueError("hot_threshold must be >= 1")
    n = graph.side_count(side)
    edges = graph.aux_edges.get(aux_type, {}).get(side)
    weights = PairWeights(n)
    if edges is None or not edges.size:
        return weights

    # inverted index: aux node -> sorted side-node members
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    side_nodes = edges[order, 0]
    aux_nodes = edges[order, 1]
    boundaries = np.flatnonzero(np.diff(aux_nodes)) + 1
    counts = weights.counts
    for members in np.split(side_nodes, boundaries):
        members = np.unique(members)
        deg = len(members)
        if deg < 2 or deg >= hot_threshold:
            continue
        for ai in range(deg):
            a = int(members[ai])
            for bi in range(ai + 1, deg):
                key = (a, int(members[bi]))
                counts[key] = counts.get(key, 0) + 1
    return weights


@dataclass
class Neighborhood:
    """Fixed-size neighbor lists for every node under one relation type.

    ``neighbors`` is (n, rho) int and ``weights`` (n, rho) float; entries are
    sorted by descending weight with ties broken by ascending node index.
    Nodes with fewer than rho genuine neighbors are padded by replicating
    their strongest neighbor (weight 0), and isolated nodes by themselves.
    """

    neighbors: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    @property
    def rho(self) -> int:
        return self.neighbors.shape[1]


def build_neighborhoods(weights: PairWeights, rho: int) -> Neighborhood:
    """Keep each node's top-rho neighbors by weight and pad to exactly rho."""
    if rho < 1:
        raise ValueError("rho must be >= 1")
    n = weights.n
    neighbors = np.zeros((n, rho), dtype=np.int64)
    out_weights = np.zeros((n, rho), dtype=np.float64)

    per_node: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for (a, b), w in weights.counts.items():
        per_node[a].append((b, w))
        per_node[b].append((a, w))

    for i in range(n):
        ranked = sorted(per_node[i], key=lambda nw: (-nw[1], nw[0]))[:rho]
        k = len(ranked)
        if k == 0:
            neighbors[i, :] = i          # self sentinel, weight 0
            continue
        for j, (node, w) in enumerate(ranked):
            neighbors[i, j] = node
            out_weights[i, j] = w
        if k < rho:
            neighbors[i, k:] = ranked[0][0]   # replicate strongest, weight 0
    return Neighborhood(neighbors=neighbors, weights=out_weights)


@dataclass
class RelationType:
    """One generated same-type relation: which side and which auxiliary
    type it came from, plus the per-node neighborhoods."""

    side: str
    aux_type: int
    neighborhood: Neighborhood


@dataclass
class TranslatedGraph:
    """User-item graph after translation: per-relation neighborhoods for
    each side plus the labeled edges, copied unchanged from the source."""

    user_relations: list[RelationType]
    item_relations: list[RelationType]
    labeled_edges: np.ndarray
    n_users: int
    n_items: int

    def relations(self, side: str) -> list[RelationType]:
        return self.user_relations if side == USER else self.item_relations

    @property
    def n_relation_types(self) -> int:
        return len(self.user_relations) + len(self.item_relations)


def _thresh(hot_threshold, graph, aux_type) -> int:
    if isinstance(hot_threshold, dict):
        name = graph.type_names[aux_type]
        return int(hot_threshold.get(name, DEFAULT_HOT_THRESHOLD))
    return int(hot_threshold)


def translate(graph: TypedGraph, rho: int,
              hot_threshold=DEFAULT_HOT_THRESHOLD) -> TranslatedGraph:
    """Build the translated user-item graph from every (aux type, side) pair.

    ``hot_threshold`` is an int applied to all auxiliary types, or a dict
    keyed by auxiliary type name. A relation type exists for every side an
    auxiliary type touches, even when pruning leaves its weights empty.
    """
    relations = {USER: [], ITEM: []}
    for side in (USER, ITEM):
        for aux_type in graph.aux_types_for_side(side):
            weights = second_order_proximity(
                graph, aux_type, side, _thresh(hot_threshold, graph, aux_type))
            relations[side].append(RelationType(
                side=side, aux_type=aux_type,
                neighborhood=build_neighborhoods(weights, rho)))
    return TranslatedGraph(
        user_relations=relations[USER],
        item_relations=relations[ITEM],
        labeled_edges=graph.labeled_edges.copy(),
        n_users=graph.n_users,
        n_items=graph.n_items,
    )


# ---------------------------------------------------------------------------
# file format: `#relation <side> <aux-type-name>` then one line per node,
# `nodeId<TAB>neighborId:weight(,neighborId:weight)*` with dense indices.

def save_translated(tg: TranslatedGraph, graph: TypedGraph, path,
                    fingerprint: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fingerprint:
            fh.write(f"#fingerprint {fingerprint}\n")
        for side in (USER, ITEM):
            for rel in tg.relations(side):
                fh.write(f"#relation {side} {graph.type_names[rel.aux_type]}\n")
                nb = rel.neighborhood
                for i in range(nb.n):
                    entries = ",".join(
                        f"{nb.neighbors[i, j]}:{nb.weights[i, j]:g}" for j in range(nb.rho))
                    fh.write(f"{i}\t{entries}\n")


def load_translated(path, graph: TypedGraph) -> tuple[TranslatedGraph, str]:
    """Read a translated-graph file; labeled edges are bound from ``graph``."""
    relations = {USER: [], ITEM: []}
    fingerprint = ""
    current = None   # (side, aux_type, rows)

    def flush():
        if current is None:
            return
        side, aux_type, rows = current
        n = graph.side_count(side)
        if len(rows) != n:
            raise GraphFormatError(
                f"relation {side}/{graph.type_names[aux_type]} has {len(rows)} rows, expected {n}", path)
        if n == 0:
            relations[side].append(RelationType(
                side=side, aux_type=aux_type,
                neighborhood=Neighborhood(
                    neighbors=np.zeros((0, 1), dtype=np.int64),
                    weights=np.zeros((0, 1), dtype=np.float64))))
            return
        rho = len(rows[0][1])
        neighbors = np.zeros((n, rho), dtype=np.int64)
        weights = np.zeros((n, rho), dtype=np.float64)
        for node, pairs in rows:
            if len(pairs) != rho:
                raise GraphFormatError(f"ragged neighborhood for node {node}", path)
            for j, (nbr, w) in enumerate(pairs):
                neighbors[node, j] = nbr
                weights[node, j] = w
        relations[side].append(RelationType(
            side=side, aux_type=aux_type,
            neighborhood=Neighborhood(neighbors=neighbors, weights=weights)))

    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#fingerprint"):
                fingerprint = line.split(None, 1)[1] if " " in line else ""
                continue
            if line.startswith("#relation"):
                parts = line.split()
                if len(parts) != 3 or parts[1] not in (USER, ITEM):
                    raise GraphFormatError("expected `#relation <user|item> <aux-type>`", path, ln)
                flush()
                try:
                    aux_type = graph.type_names.index(parts[2])
                except ValueError:
                    raise GraphFormatError(f"unknown aux type {parts[2]!r}", path, ln) from None
                current = (parts[1], aux_type, [])
                continue
            if current is None:
                raise GraphFormatError("data line before any #relation header", path, ln)
            try:
                node_s, entries = line.split("\t")
                node = int(node_s)
                pairs = []
                for ent in entries.split(","):
                    nbr, w = ent.split(":")
                    pairs.append((int(nbr), float(w)))
            except ValueError:
                raise GraphFormatError("expected nodeId<TAB>nbr:w(,nbr:w)*", path, ln) from None
            n_side = graph.side_count(current[0])
            if not 0 <= node < n_side or any(not 0 <= p[0] < n_side for p in pairs):
                raise GraphFormatError("node index out of range", path, ln)
            current[2].append((node, pairs))
    flush()

    return TranslatedGraph(
        user_relations=relations[USER],
        item_relations=relations[ITEM],
        labeled_edges=graph.labeled_edges.copy(),
        n_users=graph.n_users,
        n_items=graph.n_items,
    ), fingerprint
