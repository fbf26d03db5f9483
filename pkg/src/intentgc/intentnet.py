"""The dual-tower architecture: neighborhood aggregation, vector-wise
convolution, the bit-wise dense baseline, and the trailing dense stack.

A tower embeds a node by expanding its q-hop neighborhood tree (rho neighbors
per relation type per hop), encoding the leaf features, then applying the
convolution layers bottom-up followed by fully-connected layers. Vector-wise
layers combine the self vector and each relation's aggregated neighborhood
with scalar filter weights shared across feature dimensions, so they preserve
width and avoid the quadratic cost of the dense-on-concatenation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import encode_batch
from .errors import ShapeError
from .graph import FeatureSchema, FeatureStore
from .numcore import Tape, Var
from .params import (BITWISE, BoundConv, BoundTower, TowerParams, VECTORWISE,
                     bind_tower)
from .translate import TranslatedGraph


def aggregate(tape: Tape, neighbor_vectors: Var) -> Var:
    """Pool a (k, m) stack of neighbor vectors into their elementwise mean."""
    if neighbor_vectors.value.shape[0] < 1:
        raise ShapeError("aggregate: need at least one neighbor vector")
    return tape.mean_rows(neighbor_vectors)


def conv_vectorwise(tape: Tape, self_vec: Var, aggregated: list[Var],
                    layer: BoundConv, act: str = "relu") -> Var:
    """Vector-wise convolution: L local filters mix the self vector with each
    relation's aggregated neighborhood by scalar weights, then a merge layer
    combines the filter outputs. Output width equals input width."""
    w, theta = layer.w, layer.theta
    n_filters, cols = w.value.shape
    if cols != len(aggregated) + 1:
        raise ShapeError(
            f"conv_vectorwise: layer expects {cols - 1} relation types, got {len(aggregated)}")
    for a in aggregated:
        if a.value.shape != self_vec.value.shape:
            raise ShapeError("conv_vectorwise: aggregated width mismatch")
    merged = None
    for i in range(n_filters):
        acc = tape.scale(self_vec, tape.elem(w, i, 0))
        for r, agg in enumerate(aggregated):
            acc = tape.add(acc, tape.scale(agg, tape.elem(w, i, r + 1)))
        g_i = tape.act(acc, act)
        term = tape.scale(g_i, tape.elem(theta, 0, i))
        merged = term if merged is None else tape.add(merged, term)
    return tape.act(merged, act)


def conv_bitwise(tape: Tape, self_vec: Var, aggregated: Var,
                 weight: Var, act: str = "relu") -> Var:
    """Baseline convolution: dense transform of CONCAT(self, neighborhood)."""
    m = self_vec.value.shape[1]
    if weight.value.shape != (m, 2 * m):
        raise ShapeError(f"conv_bitwise: weight must be ({m}, {2 * m}), got {weight.value.shape}")
    if aggregated.value.shape != self_vec.value.shape:
        raise ShapeError("conv_bitwise: aggregated width mismatch")
    cat = tape.concat_cols([self_vec, aggregated])
    return tape.act(tape.matmul(cat, weight, transpose_b=True), act)


def _apply_conv(tape, h_self, aggs, layer: BoundConv, mode, act):
    if mode == VECTORWISE:
        return conv_vectorwise(tape, h_self, aggs, layer, act)
    # the baseline is defined for a single neighborhood: average the
    # per-relation aggregates so parameter counts stay comparable
    acc = aggs[0]
    for a in aggs[1:]:
        acc = tape.add(acc, a)
    if len(aggs) > 1:
        acc = tape.scale(acc, 1.0 / len(aggs))
    return conv_bitwise(tape, h_self, acc, layer.weight, act)


def tower_forward_batch(
    tape: Tape,
    side: str,
    nodes: np.ndarray,
    tg: TranslatedGraph,
    store: FeatureStore,
    schema: FeatureSchema,
    tower: TowerParams | BoundTower,
    mode: str = VECTORWISE,
    conv_act: str = "relu",
    dense_act: str = "relu",
    weighted_agg: bool = False,
) -> Var:
    """Embed a batch of nodes of one side; returns (len(nodes), out_width).

    The whole q-hop tree is laid out level by level: level d holds the
    level-(d-1) nodes followed by each relation's neighbor block, so the
    convolution at each level is a pair of row slices plus a grouped mean.
    ``weighted_agg`` pools neighbors by their proximity weight instead of
    uniformly. With no relation types the tower degrades to the
    convolution-free path.
    """
    bound = tower if isinstance(tower, BoundTower) else bind_tower(tape, tower)
    nodes = np.asarray(nodes, dtype=np.intp)
    rels = tg.relations(side)
    q = len(bound.conv) if rels else 0

    levels = [nodes]
    for _ in range(q):
        cur = levels[-1]
        parts = [cur] + [rel.neighborhood.neighbors[cur].reshape(-1) for rel in rels]
        levels.append(np.concatenate(parts))

    h = encode_batch(tape, side, levels[-1], store, schema, bound.embed)
    for depth in range(q, 0, -1):
        prev = levels[depth - 1]
        n_prev = len(prev)
        h_self = tape.slice_rows(h, 0, n_prev)
        aggs = []
        off = n_prev
        for rel in rels:
            rho = rel.neighborhood.rho
            block = tape.slice_rows(h, off, off + n_prev * rho)
            pool_w = rel.neighborhood.weights[prev].reshape(-1) if weighted_agg else None
            aggs.append(tape.mean_groups(block, rho, weights=pool_w))
            off += n_prev * rho
        h = _apply_conv(tape, h_self, aggs, bound.conv[q - depth], mode, conv_act)

    last = len(bound.dense) - 1
    for i, (w, b) in enumerate(bound.dense):
        h = tape.add(tape.matmul(h, w), b)
        if i < last:
            h = tape.act(h, dense_act)   # final layer stays linear
    return h


def tower_forward(
    side: str,
    node: int,
    tg: TranslatedGraph,
    store: FeatureStore,
    schema: FeatureSchema,
    tower: TowerParams,
    mode: str = VECTORWISE,
    conv_act: str = "relu",
    dense_act: str = "relu",
    weighted_agg: bool = False,
    dtype=np.float64,
) -> np.ndarray:
    """Embedding of a single node as a plain 1-D array (inference path)."""
    tape = Tape(dtype=dtype)
    out = tower_forward_batch(
        tape, side, np.array([node]), tg, store, schema, tower,
        mode=mode, conv_act=conv_act, dense_act=dense_act,
        weighted_agg=weighted_agg)
    return out.value[0].copy()


# ---------------------------------------------------------------------------
# analytic multiply-add counts

@dataclass(frozen=True)
class FlopCount:
    """Multiply-add counts per node for a q-stacked tower (activations and
    copies excluded). ``per_conv_op`` covers one aggregation plus one
    convolution on a single-relation neighborhood."""

    mode: str
    m: int
    rho: int
    n_filters: int
    q: int
    per_conv_op: int
    conv_ops: int
    dense_madds: int

    @property
    def conv_madds(self) -> int:
        return self.per_conv_op * self.conv_ops

    @property
    def total(self) -> int:
        return self.conv_madds + self.dense_madds


def conv_op_count(rho: int, q: int) -> int:
    """Convolution ops per node for a q-stacked tower with rho neighbors:
    layer r of q processes the (q-r)-hop subtree, giving
    sum_{r=1..q} (rho^(q-r+1) - 1)/(rho - 1) ops in total."""
    if q == 0:
        return 0
    if rho == 1:
        return q * (q + 1) // 2
    return (sum(rho ** k for k in range(1, q + 1)) - q) // (rho - 1)


def count_flops(mode: str, m: int, rho: int, n_filters: int, q: int) -> FlopCount:
    """Analytic multiply-add count per node, per mode.

    One vector-wise conv op costs m*rho (aggregate) + 2*n_filters*m (local
    filters on self + neighborhood) + n_filters*m (merge); the bit-wise
    baseline costs m*rho + 2*m*m. The trailing dense stack is modeled as
    three m-wide layers for both modes.
    """
    if min(m, rho, n_filters, q) < 1 and q != 0:
        raise ValueError("m, rho, n_filters must be >= 1 and q >= 0")
    if mode == VECTORWISE:
        per_op = m * rho + 2 * n_filters * m + n_filters * m
    elif mode == BITWISE:
        per_op = m * rho + 2 * m * m
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return FlopCount(
        mode=mode, m=m, rho=rho, n_filters=n_filters, q=q,
        per_conv_op=per_op,
        conv_ops=conv_op_count(rho, q),
        dense_madds=3 * m * m,
    )
