"""Batch inference, K-nearest-neighbor retrieval, and ranking metrics.

Similarity everywhere is the raw inner product (the score the training
objective optimizes). Rankings break score ties by ascending item index so
every metric is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import EvalError
from .graph import FeatureSchema, FeatureStore
from .intentnet import tower_forward_batch
from .numcore import Tape
from .params import ModelParams
from .translate import TranslatedGraph


@dataclass
class EmbeddingStore:
    """All embeddings of one side, one row per node."""

    role: str
    matrix: np.ndarray

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


def infer_all(side: str, tg: TranslatedGraph, store: FeatureStore,
              schema: FeatureSchema, params: ModelParams, config,
              chunk: int = 1024) -> EmbeddingStore:
    """Run the tower over every node of a side (deterministic, read-only)."""
    n = tg.n_users if side == "user" else tg.n_items
    tower = params.tower(side)
    out = np.zeros((n, tower.output_width), dtype=config.dtype)
    for lo in range(0, n, chunk):
        nodes = np.arange(lo, min(lo + chunk, n))
        tape = Tape(dtype=config.dtype)
        z = tower_forward_batch(
            tape, side, nodes, tg, store, schema, tower,
            mode=params.mode, conv_act=config.conv_act, dense_act=config.dense_act,
            weighted_agg=bool(getattr(config, "weighted_aggregation", 0)))
        out[lo:lo + len(nodes)] = z.value
    return EmbeddingStore(role=side, matrix=out)


def save_embeddings(store: EmbeddingStore, path, names: list[str] | None = None,
                    fingerprint: str = "") -> None:
    """Text export: ``nodeId<TAB>v1,v2,...`` per node, after an optional
    ``#fingerprint`` header line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fingerprint:
            fh.write(f"#fingerprint {fingerprint}\n")
        for i, row in enumerate(store.matrix):
            node = names[i] if names and i < len(names) else str(i)
            fh.write(node + "\t" + ",".join(f"{x:.17g}" for x in row) + "\n")


# ---------------------------------------------------------------------------
# ranking

def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending index."""
    return np.argsort(-scores, kind="stable")


def rank_of(scores: np.ndarray, target_pos: int) -> int:
    """1-based rank of position ``target_pos`` under rank_order's ordering."""
    s = scores[target_pos]
    better = int(np.sum(scores > s))
    tied_before = int(np.sum(scores[:target_pos] == s))
    return better + tied_before + 1


def knn_exact(query: np.ndarray, items: np.ndarray, k: int) -> np.ndarray:
    scores = items @ query
    return rank_order(scores)[: min(k, len(scores))]


class SignRandomProjectionIndex:
    """Approximate top-k search: sign-random-projection buckets with
    multi-probe lookup and exact inner-product re-ranking of candidates.

    Items hash to the sign pattern of ``n_bits`` random projections in each
    of ``n_tables`` tables. A query probes its own bucket plus every bucket
    reached by flipping subsets (size <= ``max_flip``) of its ``flip_bits``
    least-confident bits, then ranks the collected candidates by their true
    inner product. Deeper probing trades candidate-set size for recall;
    the defaults hold recall@50 >= 0.9 on random 100-dim corpora.
    """

    def __init__(self, items: np.ndarray, n_bits: int = 8, n_tables: int = 16,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        n, d = items.shape
        self._items = items
        self.n_bits = n_bits
        self._planes = rng.standard_normal((n_tables, d, n_bits))
        self._powers = (1 << np.arange(n_bits)).astype(np.int64)
        self._tables: list[dict[int, np.ndarray]] = []
        for t in range(n_tables):
            codes = ((items @ self._planes[t]) > 0) @ self._powers
            table: dict[int, list[int]] = {}
            for idx, code in enumerate(codes):
                table.setdefault(int(code), []).append(idx)
            self._tables.append({c: np.array(v, dtype=np.int64)
                                 for c, v in table.items()})

    def _probe_codes(self, projections: np.ndarray, flip_bits: int,
                     max_flip: int) -> list[int]:
        base = int((projections > 0) @ self._powers)
        order = np.argsort(np.abs(projections))[: min(flip_bits, self.n_bits)]
        codes = [base]
        for r in range(1, max_flip + 1):
            for combo in combinations(order, r):
                code = base
                for b in combo:
                    code ^= int(self._powers[b])
                codes.append(code)
        return codes

    def candidates(self, query: np.ndarray, flip_bits: int = 5,
                   max_flip: int = 2) -> np.ndarray:
        found = []
        for t, table in enumerate(self._tables):
            projections = query @ self._planes[t]
            for code in self._probe_codes(projections, flip_bits, max_flip):
                hit = table.get(code)
                if hit is not None:
                    found.append(hit)
        if not found:
            return np.arange(len(self._items))    # degenerate fallback
        return np.unique(np.concatenate(found))

    def query(self, query: np.ndarray, k: int, flip_bits: int = 5,
              max_flip: int = 2) -> np.ndarray:
        cand = self.candidates(query, flip_bits, max_flip)
        scores = self._items[cand] @ query
        top = rank_order(scores)[: min(k, len(cand))]
        return cand[top]


def knn(query: np.ndarray, item_store: EmbeddingStore, k: int,
        method: str = "exact",
        index: SignRandomProjectionIndex | None = None) -> np.ndarray:
    """Top-k item indices for a query embedding by descending inner product.

    ``k`` above the item count returns the full ranking. The approximate
    method builds (and caches on the store) a sign-random-projection index.
    """
    if k < 1:
        raise EvalError("k must be >= 1")
    if method == "exact":
        return knn_exact(query, item_store.matrix, k)
    if method != "approximate":
        raise EvalError(f"unknown knn method {method!r}")
    if index is None:
        index = getattr(item_store, "_lsh", None)
        if index is None:
            index = SignRandomProjectionIndex(item_store.matrix)
            item_store._lsh = index
    return index.query(query, k)


# ---------------------------------------------------------------------------
# metrics

def auc(scored: list[tuple[float, int]] | np.ndarray) -> float:
    """Probability a random positive outranks a random negative, ties as 1/2.

    Accepts (score, label) pairs with label 1 for positives, 0 for negatives.
    """
    arr = np.asarray(scored, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or not len(arr):
        raise EvalError("auc expects (score, label) pairs")
    scores, labels = arr[:, 0], arr[:, 1].astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvalError("auc needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0   # average rank, 1-based
        i = j + 1
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class EvalSet:
    """Held-out positive pairs plus the candidate item universe for ranking."""

    pairs: np.ndarray                                   # (P, 2) of (user, item)
    candidates: np.ndarray | None = None                # default: all items

    def universe(self, n_items: int) -> np.ndarray:
        if self.candidates is None:
            return np.arange(n_items)
        return np.asarray(self.candidates, dtype=np.int64)


def scaled_mrr(eval_set: EvalSet, user_store: EmbeddingStore,
               item_store: EmbeddingStore) -> float:
    """Mean over test pairs of 1/ceil(rank/100), rank from the full exact
    inner-product ranking of the candidate universe (rank 1 = best)."""
    if not len(eval_set.pairs):
        raise EvalError("scaled_mrr needs at least one test pair")
    universe = eval_set.universe(len(item_store))
    items = item_store.matrix[universe]
    pos_of = {int(node): i for i, node in enumerate(universe)}
    total = 0.0
    for u, v in eval_set.pairs:
        if int(v) not in pos_of:
            raise EvalError(f"test item {int(v)} not in the candidate universe")
        scores = items @ user_store.matrix[int(u)]
        rank = rank_of(scores, pos_of[int(v)])
        total += 1.0 / -(-rank // 100)    # ceil(rank / 100)
    return total / len(eval_set.pairs)


def ranking_auc(pairs: np.ndarray, user_store: EmbeddingStore,
                item_store: EmbeddingStore, negatives_per_user: int = 50,
                seed: int = 0) -> float:
    """AUC of held-out pairs against uniform non-positive items, compared
    within each user and micro-averaged over all (positive, negative) pairs.

    Scores are only comparable within one user's candidate list (user norms
    shift every score of a list together), so cross-user score comparisons
    would say nothing about ranking quality.
    """
    rng = np.random.default_rng(seed)
    pos_by_user: dict[int, set[int]] = {}
    for u, v in pairs:
        pos_by_user.setdefault(int(u), set()).add(int(v))
    n_items = len(item_store)
    wins = 0.0
    total = 0
    for u, positives in sorted(pos_by_user.items()):
        if len(positives) >= n_items:
            continue       # no negatives exist for this user
        user_vec = user_store.matrix[u]
        pos_scores = np.array([item_store.matrix[v] @ user_vec
                               for v in sorted(positives)])
        neg_scores = np.empty(negatives_per_user * len(positives))
        drawn = 0
        while drawn < len(neg_scores):
            cand = int(rng.integers(0, n_items))
            if cand in positives:
                continue
            neg_scores[drawn] = item_store.matrix[cand] @ user_vec
            drawn += 1
        diff = pos_scores[:, None] - neg_scores[None, :]
        wins += float(np.sum(diff > 0) + 0.5 * np.sum(diff == 0))
        total += diff.size
    if total == 0:
        raise EvalError("ranking_auc needs at least one scoreable user")
    return wins / total


def load_pairs(path, iddict, user_type: str, item_type: str) -> np.ndarray:
    """Read ``userId<TAB>itemId`` lines into dense index pairs."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            u, v = line.split("\t")
            out.append((iddict.lookup(user_type, u), iddict.lookup(item_type, v)))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def eval_report(auc_value: float | None, mrr_value: float | None,
                n_pairs: int, n_users: int, n_items: int,
                negatives_per_user: int, seed: int, fingerprint: str) -> str:
    """Fixed-field evaluation report."""
    lines = [
        "intentgc eval report",
        f"fingerprint: {fingerprint}",
        "auc-negatives: uniform over non-positive items per test user",
        f"neg-per-user: {negatives_per_user}",
        f"seed: {seed}",
        f"test-pairs: {n_pairs}",
        f"users: {n_users}",
        f"items: {n_items}",
        f"auc: {'n/a' if auc_value is None else format(auc_value, '.6f')}",
        f"mrr: {'n/a' if mrr_value is None else format(mrr_value, '.6f')}",
    ]
    return "\n".join(lines) + "\n"
