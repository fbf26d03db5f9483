"""Synthetic dataset generator: planted block-and-taste user-item graphs.

Users and items split round-robin into blocks, and within a block every node
carries a latent taste position on a circle; planted edges connect a user to
same-block items within a small taste window. Auxiliary nodes are
block-aligned taste clusters, so second-order translation recovers
neighborhoods of same-block, similar-taste nodes.

``noise`` measures label corruption: each edge is rewired to a uniformly
random item with probability ``min(1, 2 * noise)``, so 0 plants every edge
in-block and 0.5 leaves the labels fully uninformative. The held-out test
split draws from planted (uncorrupted) edges so evaluation measures signal
recovery; with nothing planted it falls back to the random edges.

Leaf categories deliberately cut across blocks so in-category negative
sampling produces informative contrasts. Everything is a pure function of
the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import FeatureField, FeatureSchema, save_schema


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 200
    blocks: int = 2
    aux_types: int = 1
    aux_nodes_per_type: int = 60
    edges_per_user: int = 10
    aux_links_per_node: int = 3
    noise: float = 0.1
    taste_window: float = 0.08
    feature_noise: float = 0.7
    n_categories: int = 4
    test_fraction: float = 0.3
    embed_dim: int = 8
    cont_width: int = 4
    seed: int = 7

    @property
    def encoded_width(self) -> int:
        return self.embed_dim + self.cont_width

    @property
    def rewire_prob(self) -> float:
        return min(1.0, 2.0 * self.noise)


def _taste(index: int, blocks: int, n: int) -> float:
    """Latent position in [0, 1): nodes of a block form a uniform grid."""
    per_block = (n + blocks - 1) // blocks
    return (index // blocks) / per_block


def _circ(a: float, b: float) -> float:
    d = abs(a - b)
    return min(d, 1.0 - d)


def _window_members(block: int, taste: float, n: int, blocks: int,
                    window: float) -> np.ndarray:
    members = np.arange(block, n, blocks)
    keep = [i for i in members if _circ(taste, _taste(int(i), blocks, n)) <= window]
    return np.array(keep if keep else members, dtype=np.int64)


def _draw_labels(rng, spec: SyntheticSpec):
    """(user, item, planted) triples: planted edges stay in the user's block
    and taste window, rewired ones are uniform over all items."""
    edges = {}
    for u in range(spec.n_users):
        block = u % spec.blocks
        taste = _taste(u, spec.blocks, spec.n_users)
        pool = _window_members(block, taste, spec.n_items, spec.blocks,
                               spec.taste_window)
        for _ in range(spec.edges_per_user):
            if rng.random() < spec.rewire_prob:
                v, planted = int(rng.integers(0, spec.n_items)), False
            else:
                v, planted = int(pool[rng.integers(0, len(pool))]), True
            edges.setdefault((u, v), planted)
    return sorted((u, v, planted) for (u, v), planted in edges.items())


def _draw_aux_links(rng, spec: SyntheticSpec, n_side: int):
    """Each node links to its nearest same-block taste clusters, with each
    link uniformly rewired at the corruption rate."""
    n_aux = spec.aux_nodes_per_type
    links = set()
    for s in range(n_side):
        block = s % spec.blocks
        taste = _taste(s, spec.blocks, n_side)
        same_block = np.arange(block, n_aux, spec.blocks)
        dist = [_circ(taste, _taste(int(a), spec.blocks, n_aux)) for a in same_block]
        nearest = same_block[np.argsort(dist, kind="stable")][: spec.aux_links_per_node]
        for a in nearest:
            if rng.random() < spec.rewire_prob:
                a = rng.integers(0, n_aux)
            links.add((s, int(a)))
    return sorted(links)


def gen_synthetic(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    """Write graph, feature, schema, and held-out test-pair files.

    Returns the path of each artifact. Byte-identical output for equal specs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(spec.seed).spawn(3 + spec.aux_types)
    rng_labels, rng_split, rng_feats = (np.random.default_rng(s) for s in streams[:3])

    labels = _draw_labels(rng_labels, spec)

    # hold out planted edges per user, always keeping one training edge;
    # with nothing planted (fully corrupted labels) fall back to any edge
    by_user: dict[int, list[tuple[int, bool]]] = {}
    for u, v, planted in labels:
        by_user.setdefault(u, []).append((v, planted))
    train_edges, test_pairs = [], []
    for u in sorted(by_user):
        entries = by_user[u]
        eligible = [j for j, (_, planted) in enumerate(entries) if planted]
        if not eligible:
            eligible = list(range(len(entries)))
        take = min(int(round(spec.test_fraction * len(entries))),
                   len(eligible), len(entries) - 1)
        picked = set(rng_split.choice(eligible, size=take, replace=False).tolist()) if take else set()
        for j, (v, _) in enumerate(entries):
            (test_pairs if j in picked else train_edges).append((u, v))

    aux_edges = {}
    for k in range(spec.aux_types):
        rng_aux = np.random.default_rng(streams[3 + k])
        aux_edges[f"a{k}"] = {
            "user": _draw_aux_links(rng_aux, spec, spec.n_users),
            "item": _draw_aux_links(rng_aux, spec, spec.n_items),
        }

    weights = rng_feats.integers(1, 11, spec.n_items)

    def taste_features(rng, n):
        # first two columns hint at the node's taste angle, corrupted by
        # per-node noise; remaining columns are pure distractors
        t = np.array([_taste(i, spec.blocks, n) for i in range(n)])
        cols = [np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)]
        x = np.stack(cols, axis=1)[:, : spec.cont_width]
        x = x + spec.feature_noise * rng.standard_normal(x.shape)
        if spec.cont_width > 2:
            x = np.concatenate(
                [x, rng.standard_normal((n, spec.cont_width - 2))], axis=1)
        return x

    cont_user = taste_features(rng_feats, spec.n_users)
    cont_item = taste_features(rng_feats, spec.n_items)

    paths = {
        "graph": out / "graph.txt",
        "features": out / "features.tsv",
        "schema": out / "schema.json",
        "test_pairs": out / "test_pairs.tsv",
    }

    with open(paths["graph"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#nodes user {spec.n_users}\n")
        fh.write(f"#nodes item {spec.n_items}\n")
        for name in aux_edges:
            fh.write(f"#nodes {name} {spec.aux_nodes_per_type}\n")
        for name, sides in aux_edges.items():
            for side, prefix in (("user", "u"), ("item", "i")):
                fh.write(f"#edges {side} {name}\n")
                for s, a in sides[side]:
                    fh.write(f"{prefix}{s}\t{name}_{a}\n")
        fh.write("#labels\n")
        for u, v in train_edges:
            fh.write(f"u{u}\ti{v}\n")
        fh.write("#category\n")
        for i in range(spec.n_items):
            cat = (i // spec.blocks) % spec.n_categories
            fh.write(f"i{i}\tc{cat}\t{weights[i]}\n")

    schema = FeatureSchema(
        user=(
            FeatureField(name="id", kind="discrete-single",
                         vocab_size=spec.n_users, embed_dim=spec.embed_dim),
            FeatureField(name="x", kind="continuous", width=spec.cont_width),
        ),
        item=(
            FeatureField(name="id", kind="discrete-single",
                         vocab_size=spec.n_items, embed_dim=spec.embed_dim),
            FeatureField(name="x", kind="continuous", width=spec.cont_width),
        ),
    )
    save_schema(schema, paths["schema"])

    with open(paths["features"], "w", encoding="utf-8", newline="\n") as fh:
        for u in range(spec.n_users):
            xs = ",".join(f"{x:.17g}" for x in cont_user[u])
            fh.write(f"user\tu{u}\tid={u}\tx={xs}\n")
        for i in range(spec.n_items):
            xs = ",".join(f"{x:.17g}" for x in cont_item[i])
            fh.write(f"item\ti{i}\tid={i}\tx={xs}\n")

    with open(paths["test_pairs"], "w", encoding="utf-8", newline="\n") as fh:
        for u, v in test_pairs:
            fh.write(f"u{u}\ti{v}\n")

    return paths
