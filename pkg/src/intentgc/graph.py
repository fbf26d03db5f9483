"""Typed heterogeneous graph: in-memory model, file ingestion, feature schema.

Node types are indexed 0..R-1 with types 0 and 1 reserved for users and items;
types >= 2 are auxiliary (words, brands, shops, ...). Node indices are dense
and 0-based per type; files carry string ids that are mapped on load through a
persisted dictionary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphFormatError, SchemaError

USER = "user"
ITEM = "item"
ROLES = (USER, ITEM)

CONTINUOUS = "continuous"
DISCRETE_SINGLE = "discrete-single"
DISCRETE_MULTI = "discrete-multi"
FIELD_KINDS = (CONTINUOUS, DISCRETE_SINGLE, DISCRETE_MULTI)


# ---------------------------------------------------------------------------
# feature schema

@dataclass(frozen=True)
class FeatureField:
    """One declared node feature: continuous values pass through, discrete
    ids go through an embedding table (index 0 is the out-of-vocabulary
    bucket), and multi-valued discrete sets average their member embeddings."""

    name: str
    kind: str
    width: int = 1          # continuous only
    vocab_size: int = 0     # discrete only
    embed_dim: int = 0      # discrete only

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CONTINUOUS:
            if self.width < 1:
                raise SchemaError(f"field {self.name!r}: width must be >= 1")
        else:
            if self.vocab_size < 1:
                raise SchemaError(f"field {self.name!r}: vocab_size must be >= 1")
            if self.embed_dim < 1:
                raise SchemaError(f"field {self.name!r}: embed_dim must be >= 1")

    @property
    def encoded_width(self) -> int:
        return self.width if self.kind == CONTINUOUS else self.embed_dim


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered field lists for user and item nodes."""

    user: tuple[FeatureField, ...]
    item: tuple[FeatureField, ...]

    def fields(self, role: str) -> tuple[FeatureField, ...]:
        if role == USER:
            return self.user
        if role == ITEM:
            return self.item
        raise SchemaError(f"unknown role {role!r}")

    def encoded_width(self, role: str) -> int:
        return sum(f.encoded_width for f in self.fields(role))

    def __post_init__(self):
        for role in ROLES:
            names = [f.name for f in self.fields(role)]
            if len(set(names)) != len(names):
                raise SchemaError(f"{role} schema has duplicate field names")


def load_schema(path) -> FeatureSchema:
    """Read a schema from JSON: {"user": [field, ...], "item": [field, ...]}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for role in ROLES:
        if role not in raw:
            raise SchemaError(f"schema file missing {role!r} section")
        fields = []
        for entry in raw[role]:
            try:
                fields.append(FeatureField(**entry))
            except TypeError as exc:
                raise SchemaError(f"bad field entry {entry!r}: {exc}") from None
        out[role] = tuple(fields)
    return FeatureSchema(user=out[USER], item=out[ITEM])


def save_schema(schema: FeatureSchema, path) -> None:
    raw = {}
    for role in ROLES:
        entries = []
        for f in schema.fields(role):
            e = {"name": f.name, "kind": f.kind}
            if f.kind == CONTINUOUS:
                e["width"] = f.width
            else:
                e["vocab_size"] = f.vocab_size
                e["embed_dim"] = f.embed_dim
            entries.append(e)
        raw[role] = entries
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# id dictionary

class IdDictionary:
    """Maps string ids to dense 0-based indices, per node type (plus the
    pseudo-type "category"). Assignment order is first appearance."""

    def __init__(self):
        self._maps: dict[str, dict[str, int]] = {}

    def assign(self, type_name: str, string_id: str, limit: int | None = None) -> int:
        table = self._maps.setdefault(type_name, {})
        idx = table.get(string_id)
        if idx is None:
            idx = len(table)
            if limit is not None and idx >= limit:
                raise KeyError(string_id)
            table[string_id] = idx
        return idx

    def lookup(self, type_name: str, string_id: str) -> int:
        try:
            return self._maps[type_name][string_id]
        except KeyError:
            raise KeyError(f"{type_name} id {string_id!r} not in dictionary") from None

    def names(self, type_name: str) -> list[str]:
        """String ids of a type in dense-index order."""
        table = self._maps.get(type_name, {})
        out = [""] * len(table)
        for s, i in table.items():
            out[i] = s
        return out

    def size(self, type_name: str) -> int:
        return len(self._maps.get(type_name, {}))


def save_dictionary(d: IdDictionary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for type_name in sorted(d._maps):
            for string_id, idx in sorted(d._maps[type_name].items(), key=lambda kv: kv[1]):
                fh.write(f"{type_name}\t{string_id}\t{idx}\n")


def load_dictionary(path) -> IdDictionary:
    d = IdDictionary()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError("expected typeName<TAB>stringId<TAB>index", path, ln)
            type_name, string_id, idx = parts
            table = d._maps.setdefault(type_name, {})
            if int(idx) != len(table):
                raise GraphFormatError(f"non-dense index {idx} for {type_name}", path, ln)
            table[string_id] = int(idx)
    return d


# ---------------------------------------------------------------------------
# typed graph

@dataclass
class TypedGraph:
    """The original heterogeneous graph, immutable after load.

    ``aux_edges[aux_type][side]`` is an (E, 2) int array of (side_node,
    aux_node) pairs; adjacency is undirected, stored once per pair.
    """

    type_names: list[str]
    node_counts: list[int]
    labeled_edges: np.ndarray                       # (E, 2) of (user, item)
    aux_edges: dict[int, dict[str, np.ndarray]]
    leaf_category: np.ndarray                       # (n_items,) int
    item_weight: np.ndarray                         # (n_items,) float
    category_names: list[str] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return self.node_counts[0]

    @property
    def n_items(self) -> int:
        return self.node_counts[1]

    @property
    def n_types(self) -> int:
        return len(self.type_names)

    def side_count(self, side: str) -> int:
        return self.node_counts[0 if side == USER else 1]

    def labeled_pair_set(self) -> set[tuple[int, int]]:
        if not hasattr(self, "_pair_set"):
            self._pair_set = {(int(u), int(v)) for u, v in self.labeled_edges}
        return self._pair_set

    def aux_types_for_side(self, side: str) -> list[int]:
        """Auxiliary type ids with at least one edge on the given side, ascending."""
        return sorted(
            t for t, sides in self.aux_edges.items()
            if side in sides and len(sides[side])
        )

    def validate(self) -> None:
        if len(self.type_names) < 2:
            raise GraphFormatError("graph needs at least user and item types")
        if self.labeled_edges.size:
            if self.labeled_edges[:, 0].min() < 0 or self.labeled_edges[:, 0].max() >= self.n_users:
                raise GraphFormatError("labeled edge user index out of range")
            if self.labeled_edges[:, 1].min() < 0 or self.labeled_edges[:, 1].max() >= self.n_items:
                raise GraphFormatError("labeled edge item index out of range")
        for aux_type, sides in self.aux_edges.items():
            if not 2 <= aux_type < self.n_types:
                raise GraphFormatError(f"aux edges reference non-auxiliary type {aux_type}")
            for side, edges in sides.items():
                if not edges.size:
                    continue
                if edges[:, 0].max() >= self.side_count(side) or edges[:, 0].min() < 0:
                    raise GraphFormatError(f"{side} index out of range in aux type {aux_type}")
                if edges[:, 1].max() >= self.node_counts[aux_type] or edges[:, 1].min() < 0:
                    raise GraphFormatError(f"aux index out of range in aux type {aux_type}")
        if len(self.leaf_category) != self.n_items or len(self.item_weight) != self.n_items:
            raise GraphFormatError("every item needs a leaf category and weight")
        if self.item_weight.size and self.item_weight.min() < 0:
            raise GraphFormatError("item weights must be non-negative")


# ---------------------------------------------------------------------------
# graph file parsing

def _resolve(iddict, type_name, token, limit, path, ln):
    try:
        return iddict.assign(type_name, token, limit=limit)
    except KeyError:
        raise GraphFormatError(
            f"{type_name} id {token!r} exceeds declared count {limit}", path, ln
        ) from None


def load_graph(path, iddict: IdDictionary | None = None) -> tuple[TypedGraph, IdDictionary]:
    """Parse a graph file; returns the graph and the string-id dictionary.

    Sections: ``#nodes <type> <count>`` (first two declare user and item
    types), ``#edges <a> <b>`` with one endpoint auxiliary, ``#labels`` for
    user-item edges, ``#category`` for ``item<TAB>category<TAB>weight`` rows.
    """
    if iddict is None:
        iddict = IdDictionary()
    type_names: list[str] = []
    node_counts: list[int] = []
    type_ids: dict[str, int] = {}
    labeled: list[tuple[int, int]] = []
    aux_pairs: dict[int, dict[str, list[tuple[int, int]]]] = {}
    categories: dict[int, tuple[int, float]] = {}
    section = None

    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                head = line.split()
                if head[0] == "#nodes":
                    if len(head) != 3:
                        raise GraphFormatError("expected `#nodes <type> <count>`", path, ln)
                    name, count = head[1], head[2]
                    if name in type_ids:
                        raise GraphFormatError(f"duplicate node type {name!r}", path, ln)
                    if not count.isdigit():
                        raise GraphFormatError(f"bad node count {count!r}", path, ln)
                    type_ids[name] = len(type_names)
                    type_names.append(name)
                    node_counts.append(int(count))
                    section = None
                elif head[0] == "#edges":
                    if len(head) != 3:
                        raise GraphFormatError("expected `#edges <type-a> <type-b>`", path, ln)
                    for t in head[1:]:
                        if t not in type_ids:
                            raise GraphFormatError(f"undeclared node type {t!r}", path, ln)
                    ta, tb = type_ids[head[1]], type_ids[head[2]]
                    if (ta < 2) == (tb < 2):
                        raise GraphFormatError(
                            "edges must join a user/item type with an auxiliary type "
                            "(user-item pairs belong under #labels)", path, ln)
                    section = ("edges", head[1], head[2], ta, tb)
                elif head[0] == "#labels":
                    section = ("labels",)
                elif head[0] == "#category":
                    section = ("category",)
                else:
                    raise GraphFormatError(f"unknown section header {head[0]!r}", path, ln)
                continue

            parts = line.split("\t")
            if section is None:
                raise GraphFormatError("data line outside any section", path, ln)
            if section[0] == "edges":
                if len(parts) != 2:
                    raise GraphFormatError("expected srcId<TAB>dstId", path, ln)
                _, na, nb, ta, tb = section
                ia = _resolve(iddict, na, parts[0], node_counts[ta], path, ln)
                ib = _resolve(iddict, nb, parts[1], node_counts[tb], path, ln)
                if ta < 2:
                    side, aux_type, pair = (USER if ta == 0 else ITEM), tb, (ia, ib)
                else:
                    side, aux_type, pair = (USER if tb == 0 else ITEM), ta, (ib, ia)
                aux_pairs.setdefault(aux_type, {}).setdefault(side, []).append(pair)
            elif section[0] == "labels":
                if len(parts) != 2:
                    raise GraphFormatError("expected userId<TAB>itemId", path, ln)
                u = _resolve(iddict, type_names[0], parts[0], node_counts[0], path, ln)
                v = _resolve(iddict, type_names[1], parts[1], node_counts[1], path, ln)
                labeled.append((u, v))
            else:  # category
                if len(parts) != 3:
                    raise GraphFormatError("expected itemId<TAB>categoryId<TAB>weight", path, ln)
                v = _resolve(iddict, type_names[1], parts[0], node_counts[1], path, ln)
                c = iddict.assign("category", parts[1])
                try:
                    w = float(parts[2])
                except ValueError:
                    raise GraphFormatError(f"bad weight {parts[2]!r}", path, ln) from None
                if not np.isfinite(w) or w < 0:
                    raise GraphFormatError(f"weight must be finite and >= 0, got {parts[2]}", path, ln)
                if v in categories:
                    raise GraphFormatError(f"duplicate category line for item {parts[0]!r}", path, ln)
                categories[v] = (c, w)

    if len(type_names) < 2:
        raise GraphFormatError("graph must declare user and item node types", path)
    n_items = node_counts[1]
    missing = [i for i in range(n_items) if i not in categories]
    if missing:
        names = iddict.names(type_names[1])
        shown = names[missing[0]] if missing[0] < len(names) else str(missing[0])
        raise GraphFormatError(
            f"{len(missing)} items missing #category lines (first: {shown!r})", path)

    leaf_category = np.array([categories[i][0] for i in range(n_items)], dtype=np.int64)
    item_weight = np.array([categories[i][1] for i in range(n_items)], dtype=np.float64)
    graph = TypedGraph(
        type_names=type_names,
        node_counts=node_counts,
        labeled_edges=np.array(labeled, dtype=np.int64).reshape(-1, 2),
        aux_edges={
            t: {s: np.array(p, dtype=np.int64).reshape(-1, 2) for s, p in sides.items()}
            for t, sides in aux_pairs.items()
        },
        leaf_category=leaf_category,
        item_weight=item_weight,
        category_names=iddict.names("category"),
    )
    graph.validate()
    return graph, iddict


def write_graph(graph: TypedGraph, path, iddict: IdDictionary) -> None:
    """Serialize a graph back to the text format (edge-set equal on reload)."""
    names = {t: iddict.names(name) for t, name in enumerate(graph.type_names)}
    cat_names = iddict.names("category")

    def name_of(type_id, idx):
        table = names[type_id]
        return table[idx] if idx < len(table) else str(idx)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, (name, count) in enumerate(zip(graph.type_names, graph.node_counts)):
            fh.write(f"#nodes {name} {count}\n")
        for aux_type in sorted(graph.aux_edges):
            for side_id, side in ((0, USER), (1, ITEM)):
                edges = graph.aux_edges[aux_type].get(side)
                if edges is None or not edges.size:
                    continue
                fh.write(f"#edges {graph.type_names[side_id]} {graph.type_names[aux_type]}\n")
                for a, b in edges:
                    fh.write(f"{name_of(side_id, a)}\t{name_of(aux_type, b)}\n")
        fh.write("#labels\n")
        for u, v in graph.labeled_edges:
            fh.write(f"{name_of(0, u)}\t{name_of(1, v)}\n")
        fh.write("#category\n")
        for i in range(graph.n_items):
            cat = cat_names[graph.leaf_category[i]]
            fh.write(f"{name_of(1, i)}\t{cat}\t{graph.item_weight[i]:g}\n")


# ---------------------------------------------------------------------------
# raw feature records

@dataclass
class RoleFeatures:
    """Column-oriented raw features for every node of one role."""

    cont: dict[str, np.ndarray]            # field -> (N, width) float
    single: dict[str, np.ndarray]          # field -> (N,) int
    multi: dict[str, list[np.ndarray]]     # field -> per-node int arrays


@dataclass
class FeatureStore:
    user: RoleFeatures
    item: RoleFeatures

    def role(self, role: str) -> RoleFeatures:
        return self.user if role == USER else self.item


def _parse_record(fields, tokens, path, ln):
    seen = {}
    for tok in tokens:
        if "=" not in tok:
            raise GraphFormatError(f"expected field=value, got {tok!r}", path, ln)
        key, val = tok.split("=", 1)
        if key in seen:
            raise GraphFormatError(f"duplicate field {key!r}", path, ln)
        seen[key] = val
    unknown = set(seen) - {f.name for f in fields}
    if unknown:
        raise GraphFormatError(f"unknown feature fields {sorted(unknown)}", path, ln)
    missing = {f.name for f in fields} - set(seen)
    if missing:
        raise GraphFormatError(f"missing feature fields {sorted(missing)}", path, ln)
    return seen


def load_features(path, schema: FeatureSchema, graph: TypedGraph,
                  iddict: IdDictionary) -> FeatureStore:
    """Parse the per-node feature file against the schema.

    Every user and item node must have exactly one record carrying every
    schema field. Discrete values are non-negative integers (ids above
    vocab_size fall into the OOV bucket at encode time); continuous values
    must be finite.
    """
    role_of_type = {graph.type_names[0]: USER, graph.type_names[1]: ITEM}
    stores = {}
    filled = {}
    for role in ROLES:
        n = graph.side_count(role)
        fields = schema.fields(role)
        stores[role] = RoleFeatures(
            cont={f.name: np.zeros((n, f.width)) for f in fields if f.kind == CONTINUOUS},
            single={f.name: np.zeros(n, dtype=np.int64) for f in fields if f.kind == DISCRETE_SINGLE},
            multi={f.name: [np.empty(0, dtype=np.int64)] * n for f in fields if f.kind == DISCRETE_MULTI},
        )
        filled[role] = np.zeros(n, dtype=bool)

    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise GraphFormatError("expected typeName<TAB>nodeId<TAB>field=value...", path, ln)
            type_name, node_id = parts[0], parts[1]
            role = role_of_type.get(type_name)
            if role is None:
                raise GraphFormatError(f"features only apply to user/item types, got {type_name!r}", path, ln)
            limit = graph.side_count(role)
            try:
                idx = iddict.assign(type_name, node_id, limit=limit)
            except KeyError:
                raise GraphFormatError(
                    f"{type_name} id {node_id!r} exceeds declared count {limit}", path, ln) from None
            if filled[role][idx]:
                raise GraphFormatError(f"duplicate feature record for {node_id!r}", path, ln)
            filled[role][idx] = True
            record = _parse_record(schema.fields(role), parts[2:], path, ln)
            store = stores[role]
            for f in schema.fields(role):
                val = record[f.name]
                try:
                    if f.kind == CONTINUOUS:
                        vec = np.array([float(x) for x in val.split(",")]) if val else np.zeros(0)
                        if vec.size != f.width:
                            raise GraphFormatError(
                                f"field {f.name!r} expects {f.width} values, got {vec.size}", path, ln)
                        if not np.all(np.isfinite(vec)):
                            raise GraphFormatError(f"non-finite value in field {f.name!r}", path, ln)
                        store.cont[f.name][idx] = vec
                    elif f.kind == DISCRETE_SINGLE:
                        store.single[f.name][idx] = int(val)
                    else:
                        ids = [int(x) for x in val.split(",") if x != ""]
                        store.multi[f.name][idx] = np.array(sorted(ids), dtype=np.int64)
                except ValueError:
                    raise GraphFormatError(f"bad value {val!r} for field {f.name!r}", path, ln) from None

    for role in ROLES:
        if schema.fields(role) and not filled[role].all():
            idx = int(np.flatnonzero(~filled[role])[0])
            raise GraphFormatError(f"no feature record for {role} index {idx}", path)
    return FeatureStore(user=stores[USER], item=stores[ITEM])


def write_features(store: FeatureStore, schema: FeatureSchema, graph: TypedGraph,
                   iddict: IdDictionary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for type_id, role in ((0, USER), (1, ITEM)):
            type_name = graph.type_names[type_id]
            names = iddict.names(type_name)
            rf = store.role(role)
            for idx in range(graph.side_count(role)):
                cols = []
                for f in schema.fields(role):
                    if f.kind == CONTINUOUS:
                        cols.append(f"{f.name}=" + ",".join(f"{x:.17g}" for x in rf.cont[f.name][idx]))
                    elif f.kind == DISCRETE_SINGLE:
                        cols.append(f"{f.name}={rf.single[f.name][idx]}")
                    else:
                        cols.append(f"{f.name}=" + ",".join(str(x) for x in rf.multi[f.name][idx]))
                node = names[idx] if idx < len(names) else str(idx)
                fh.write("\t".join([type_name, node] + cols) + "\n")
