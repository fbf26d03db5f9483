"""Dual-tower training: tuple sampling, weighted in-category negative
sampling, max-margin triplet loss, and momentum optimization.

Each labeled (user, item) edge expands into several training tuples by
drawing negative items from the positive item's leaf category, weighted by
item popularity and re-drawn when the candidate is itself a positive for the
user. Both item towers (positive and negative) share the item parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import CategoryExhaustedError, ConfigError, NonFiniteError
from .graph import ITEM, USER, FeatureSchema, FeatureStore, TypedGraph
from .intentnet import tower_forward_batch
from .numcore import Tape, Var
from .params import (MODES, ModelParams, VECTORWISE, bind_tower, bound_leaves,
                     init_params, named_arrays, save_checkpoint)
from .translate import TranslatedGraph

log = logging.getLogger("intentgc.trainer")

RETRY_LIMIT = 50


@dataclass(frozen=True)
class TrainTuple:
    """One training instance: the negative shares the positive's leaf
    category and is not itself a positive item for the user."""

    user: int
    positive: int
    negative: int


@dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    momentum: float = 0.9
    batch_size: int = 200
    margin: float = 0.3
    q: int = 2
    rho: int = 10
    n_filters: int = 3
    negatives_per_edge: int = 5
    epochs: int = 10
    stddev_network: float = 0.8
    stddev_embedding: float = 0.4
    precision: str = "f64"
    conv_act: str = "relu"
    dense_act: str = "relu"
    mode: str = VECTORWISE
    dense_widths: tuple[int, ...] = (110, 800, 300, 100)
    seed: int = 0
    checkpoint_every: int = 0         # epochs between checkpoints; 0 = final only
    weighted_aggregation: int = 0     # 1 pools neighbors by proximity weight

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def validate(self) -> None:
        positive = ["learning_rate", "batch_size", "q_nonneg", "rho", "n_filters",
                    "negatives_per_edge", "epochs", "stddev_network", "stddev_embedding"]
        for name in positive:
            if name == "q_nonneg":
                if self.q < 0:
                    raise ConfigError("q must be >= 0")
                continue
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.momentum < 0 or self.momentum >= 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.precision not in ("f64", "f32"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for act in (self.conv_act, self.dense_act):
            if act not in ("relu", "tanh", "identity"):
                raise ConfigError(f"unknown activation {act!r}")
        if len(self.dense_widths) < 2 or any(w < 1 for w in self.dense_widths):
            raise ConfigError("dense_widths needs at least input and output widths")


# ---------------------------------------------------------------------------
# negative sampling

class NegativeSampler:
    """Weighted in-category negative item sampler.

    Per leaf category, items are drawn proportionally to their popularity
    weight; draws forming a positive pair with the target user are discarded
    and re-sampled up to a bounded retry count.
    """

    def __init__(self, graph: TypedGraph):
        self._labeled = graph.labeled_pair_set()
        self._category_of = graph.leaf_category
        self._items: dict[int, np.ndarray] = {}
        self._cum: dict[int, np.ndarray] = {}
        for cat in np.unique(graph.leaf_category):
            members = np.flatnonzero(graph.leaf_category == cat)
            weights = graph.item_weight[members]
            keep = weights > 0
            members, weights = members[keep], weights[keep]
            self._items[int(cat)] = members
            self._cum[int(cat)] = np.cumsum(weights)
        self.skipped = 0

    def sample(self, user: int, positive: int, rng: np.random.Generator,
               retries: int = RETRY_LIMIT) -> int:
        cat = int(self._category_of[positive])
        items = self._items.get(cat)
        if items is None or len(items) < 2:
            raise CategoryExhaustedError(
                f"category {cat} has fewer than 2 items with positive weight")
        cum = self._cum[cat]
        total = cum[-1]
        for _ in range(retries):
            r = rng.random() * total
            candidate = int(items[np.searchsorted(cum, r, side="right")])
            if (user, candidate) not in self._labeled:
                return candidate
        raise CategoryExhaustedError(
            f"no valid negative for user {user} in category {cat} after {retries} draws")


def sample_negative(user: int, positive: int, graph: TypedGraph,
                    rng: np.random.Generator) -> int:
    """One-shot convenience wrapper around :class:`NegativeSampler`."""
    return NegativeSampler(graph).sample(user, positive, rng)


# ---------------------------------------------------------------------------
# loss

def triplet_loss(tape: Tape, z_u: Var, z_v: Var, z_neg: Var, delta: float) -> Var:
    """Row-wise max-margin loss: max{0, z_u . z_neg - z_u . z_v + delta}."""
    if delta < 0:
        raise ConfigError("margin must be >= 0")
    raw = tape.add(tape.dot_rows(z_u, z_neg), tape.scale(tape.dot_rows(z_u, z_v), -1.0))
    shifted = tape.add(raw, tape.const(np.full((raw.value.shape[0], 1), float(delta))))
    return tape.hinge(shifted)


def batch_loss_and_grads(
    tg: TranslatedGraph,
    store: FeatureStore,
    schema: FeatureSchema,
    params: ModelParams,
    batch: np.ndarray,
    config: TrainConfig,
    want_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Mean triplet loss over a (B, 3) batch of (user, pos, neg) tuples.

    Positive and negative items run through the shared item tower in one
    pass. Returns gradients keyed like :func:`intentgc.params.named_arrays`
    when requested (absent entries mean an all-zero gradient).
    """
    tape = Tape(dtype=config.dtype)
    bu = bind_tower(tape, params.user)
    bi = bind_tower(tape, params.item)
    n = batch.shape[0]
    weighted = bool(config.weighted_aggregation)
    z_u = tower_forward_batch(
        tape, USER, batch[:, 0], tg, store, schema, bu,
        mode=params.mode, conv_act=config.conv_act, dense_act=config.dense_act,
        weighted_agg=weighted)
    z_items = tower_forward_batch(
        tape, ITEM, np.concatenate([batch[:, 1], batch[:, 2]]), tg, store, schema, bi,
        mode=params.mode, conv_act=config.conv_act, dense_act=config.dense_act,
        weighted_agg=weighted)
    z_v = tape.slice_rows(z_items, 0, n)
    z_neg = tape.slice_rows(z_items, n, 2 * n)
    loss = tape.mean_rows(triplet_loss(tape, z_u, z_v, z_neg, config.margin))
    value = float(loss.value[0, 0])
    if not want_grads:
        return value, None
    tape.backward(loss)
    leaves = {**bound_leaves(USER, bu), **bound_leaves(ITEM, bi)}
    grads = {name: var.grad for name, var in leaves.items() if var.grad is not None}
    return value, grads


def momentum_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    learning_rate: float,
    momentum: float,
) -> None:
    """Classical momentum update in place: v <- mu*v - lr*grad; p <- p + v."""
    for name, p in arrays.items():
        v = velocity[name]
        v *= momentum
        g = grads.get(name)
        if g is not None:
            v -= learning_rate * g
        p += v


# ---------------------------------------------------------------------------
# training loop

def make_tuples(graph: TypedGraph, sampler: NegativeSampler, config: TrainConfig,
                rng: np.random.Generator) -> np.ndarray:
    """One epoch of tuples: |E| uniform edge draws with replacement, each
    expanded into ``negatives_per_edge`` tuples (skipping exhausted draws)."""
    edges = graph.labeled_edges
    draws = rng.integers(0, len(edges), size=len(edges))
    out = []
    for e in draws:
        u, v = int(edges[e, 0]), int(edges[e, 1])
        for _ in range(config.negatives_per_edge):
            try:
                out.append((u, v, sampler.sample(u, v, rng)))
            except CategoryExhaustedError:
                sampler.skipped += 1
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def train(
    graph: TypedGraph,
    tg: TranslatedGraph,
    store: FeatureStore,
    schema: FeatureSchema,
    config: TrainConfig,
    val_pairs: np.ndarray | None = None,
    checkpoint_path=None,
    fingerprint: str = "",
    progress=None,
    threads: int = 1,
) -> tuple[ModelParams, list[dict]]:
    """Train both towers; returns (params, per-epoch history).

    ``progress`` is an optional callable receiving one formatted line per
    epoch (``epoch <n> loss <v> [val_auc <v>]``); the module logger always
    gets it. Evaluation of ``val_pairs`` uses ranking AUC with negatives
    drawn from the full item set. Runs single-threaded by default for
    reproducibility; gradients within a batch are summed once per batch on
    one thread (single-writer parameters).
    """
    config.validate()
    if not len(graph.labeled_edges):
        raise ConfigError("cannot train on a graph with no labeled edges")

    rng = np.random.default_rng(config.seed)
    params = init_params(
        schema,
        n_relations={USER: len(tg.user_relations), ITEM: len(tg.item_relations)},
        rng=rng,
        mode=config.mode,
        q=config.q,
        n_filters=config.n_filters,
        dense_widths=tuple(config.dense_widths),
        stddev_network=config.stddev_network,
        stddev_embedding=config.stddev_embedding,
        dtype=config.dtype,
    )
    arrays = named_arrays(params)
    velocity = {name: np.zeros_like(a) for name, a in arrays.items()}
    sampler = NegativeSampler(graph)
    history: list[dict] = []

    with threadpool_limits(limits=threads):
        for epoch in range(1, config.epochs + 1):
            tuples = make_tuples(graph, sampler, config, rng)
            if not len(tuples):
                raise ConfigError("all sampled tuples were skipped; check categories")
            losses = []
            for lo in range(0, len(tuples), config.batch_size):
                batch = tuples[lo:lo + config.batch_size]
                try:
                    value, grads = batch_loss_and_grads(
                        tg, store, schema, params, batch, config)
                except NonFiniteError as exc:
                    raise NonFiniteError(
                        f"non-finite loss in epoch {epoch}, batch {lo // config.batch_size}: "
                        f"{exc} (consider smaller init stddevs or learning rate)") from exc
                momentum_step(arrays, grads, velocity, config.learning_rate, config.momentum)
                losses.append(value)
            entry = {"epoch": epoch, "loss": float(np.mean(losses)),
                     "skipped_tuples": sampler.skipped}
            line = f"epoch {epoch} loss {entry['loss']:.6f}"
            if val_pairs is not None and len(val_pairs):
                entry["val_auc"] = _validation_auc(
                    tg, store, schema, params, config, val_pairs)
                line += f" val_auc {entry['val_auc']:.4f}"
            history.append(entry)
            log.info(line)
            if progress is not None:
                progress(line)
            if checkpoint_path is not None and config.checkpoint_every and (
                    epoch % config.checkpoint_every == 0):
                save_checkpoint(params, checkpoint_path, fingerprint,
                                meta={"epoch": epoch})
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path, fingerprint,
                        meta={"epoch": config.epochs})
    return params, history


def _validation_auc(tg, store, schema, params, config, pairs):
    from .evalinfer import infer_all, ranking_auc
    users = infer_all(USER, tg, store, schema, params, config)
    items = infer_all(ITEM, tg, store, schema, params, config)
    return ranking_auc(pairs, users, items, negatives_per_user=20,
                       seed=config.seed + 1)
