"""Shared test fixtures: tiny graphs, schemas, and independent oracles."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from intentgc.graph import (FeatureField, FeatureSchema, FeatureStore,
                            RoleFeatures, TypedGraph)


def make_graph(n_users, n_items, labeled=(), aux=None, n_aux=None,
               categories=None, weights=None):
    """Build a TypedGraph in memory.

    ``aux`` maps aux-type name -> {"user": [(u, a), ...], "item": [...]};
    ``n_aux`` maps aux-type name -> node count.
    """
    aux = aux or {}
    n_aux = n_aux or {}
    type_names = ["user", "item"] + list(aux.keys())
    node_counts = [n_users, n_items] + [n_aux.get(name, 0) for name in aux]
    aux_edges = {}
    for t, name in enumerate(type_names[2:], start=2):
        aux_edges[t] = {
            side: np.array(pairs, dtype=np.int64).reshape(-1, 2)
            for side, pairs in aux[name].items()
        }
    if categories is None:
        categories = [0] * n_items
    if weights is None:
        weights = [1.0] * n_items
    g = TypedGraph(
        type_names=type_names,
        node_counts=node_counts,
        labeled_edges=np.array(labeled, dtype=np.int64).reshape(-1, 2),
        aux_edges=aux_edges,
        leaf_category=np.array(categories, dtype=np.int64),
        item_weight=np.array(weights, dtype=np.float64),
        category_names=[f"c{c}" for c in range(int(max(categories, default=-1)) + 1)],
    )
    g.validate()
    return g


def random_hin(rng, max_side=40, max_aux_nodes=25, edge_p=0.15):
    """A random two-sided graph with one auxiliary type, for property tests."""
    n_users = int(rng.integers(1, max_side))
    n_items = int(rng.integers(1, max_side))
    n_w = int(rng.integers(1, max_aux_nodes))
    pairs = {"user": [], "item": []}
    for side, n in (("user", n_users), ("item", n_items)):
        mask = rng.random((n, n_w)) < edge_p
        for i, a in zip(*np.nonzero(mask)):
            pairs[side].append((int(i), int(a)))
    return make_graph(n_users, n_items, aux={"w": pairs}, n_aux={"w": n_w})


def brute_force_proximity(graph, aux_type, side, hot_threshold):
    """Independent oracle: enumerate all node pairs and intersect adjacency
    sets, skipping auxiliary nodes whose side-degree reaches the threshold."""
    edges = graph.aux_edges.get(aux_type, {}).get(side)
    adj = defaultdict(set)
    members = defaultdict(set)
    if edges is not None:
        for s, a in edges:
            adj[int(s)].add(int(a))
            members[int(a)].add(int(s))
    hot = {a for a, mem in members.items() if len(mem) >= hot_threshold}
    n = graph.side_count(side)
    out = {}
    for i in range(n):
        for j in range(i + 1, n):
            c = len((adj[i] & adj[j]) - hot)
            if c:
                out[(i, j)] = c
    return out


def brute_force_proximity_dense(graph, aux_type, side, hot_threshold):
    """Matrix-form oracle for larger graphs: 0/1 biadjacency product."""
    n = graph.side_count(side)
    edges = graph.aux_edges.get(aux_type, {}).get(side)
    if edges is None or not edges.size:
        return {}
    n_aux = graph.node_counts[aux_type]
    a = np.zeros((n, n_aux), dtype=np.int64)
    a[edges[:, 0], edges[:, 1]] = 1
    keep = a.sum(axis=0) < hot_threshold
    w = a[:, keep] @ a[:, keep].T
    out = {}
    for i, j in zip(*np.nonzero(np.triu(w, k=1))):
        out[(int(i), int(j))] = int(w[i, j])
    return out


def act_scalar(x, kind):
    if kind == "relu":
        return x if x > 0 else 0.0
    if kind == "tanh":
        import math
        return math.tanh(x)
    return x


def conv_vectorwise_oracle(self_vec, aggs, w, theta, act="relu"):
    """Scalar-arithmetic evaluation of the vector-wise convolution, written
    independently of the tensor engine (plain python floats)."""
    m = len(self_vec)
    n_filters = len(w)
    out = []
    for c in range(m):
        total = 0.0
        for i in range(n_filters):
            g = w[i][0] * self_vec[c]
            for r, agg in enumerate(aggs):
                g += w[i][r + 1] * agg[c]
            total += theta[i] * act_scalar(g, act)
        out.append(act_scalar(total, act))
    return out


def channel_shared_conv1d(stacked, w, theta, act="relu"):
    """Reference: a 1-D convolution over the neighbor axis whose kernel
    weights are identical across the m channels.

    ``stacked`` is ((1+T), m): row 0 the self vector, rows 1.. the per-
    relation aggregated neighborhoods. Each local filter i is a kernel of
    length 1+T slid over the neighbor axis (one valid position), applied
    with the same weights to every channel; a second 1-D layer merges the
    L feature maps per channel.
    """
    axis_len = len(stacked)
    m = len(stacked[0])
    feature_maps = []
    for kernel in w:                      # kernel: length 1+T
        fmap = []
        for c in range(m):                # same kernel for every channel
            acc = sum(kernel[j] * stacked[j][c] for j in range(axis_len))
            fmap.append(act_scalar(acc, act))
        feature_maps.append(fmap)
    return [
        act_scalar(sum(theta[i] * feature_maps[i][c] for i in range(len(w))), act)
        for c in range(m)
    ]


def id_schema(n_users, n_items, dim=4, extra_cont=0):
    """Schema with one per-node id embedding and optional continuous noise."""
    def fields(n):
        out = [FeatureField(name="id", kind="discrete-single", vocab_size=n, embed_dim=dim)]
        if extra_cont:
            out.append(FeatureField(name="x", kind="continuous", width=extra_cont))
        return tuple(out)
    return FeatureSchema(user=fields(n_users), item=fields(n_items))


def id_features(graph, rng=None, extra_cont=0):
    """FeatureStore where each node's id feature is its own index."""
    def role_feats(n):
        cont = {}
        if extra_cont:
            vals = (rng.standard_normal((n, extra_cont)) if rng is not None
                    else np.zeros((n, extra_cont)))
            cont["x"] = vals
        return RoleFeatures(cont=cont, single={"id": np.arange(n, dtype=np.int64)}, multi={})
    return FeatureStore(user=role_feats(graph.n_users), item=role_feats(graph.n_items))
