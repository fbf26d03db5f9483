"""Node feature encoding: raw records to dense input vectors.

Continuous fields pass through verbatim. Discrete fields are replaced by a
row of their embedding table (ids at or above vocab_size fall into the
out-of-vocabulary bucket at index 0); multi-valued fields take the mean of
their member rows, with the empty set encoding to zeros. Blocks concatenate
in schema order, and gradients flow back into the embedding tables.
"""

from __future__ import annotations

import numpy as np

from .errors import SchemaError
from .graph import CONTINUOUS, DISCRETE_SINGLE, FeatureSchema, FeatureStore
from .numcore import Tape, Var


def _clamp_oov(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    return np.where((ids >= 0) & (ids < vocab_size), ids, 0)


def encode_batch(
    tape: Tape,
    role: str,
    nodes: np.ndarray,
    store: FeatureStore,
    schema: FeatureSchema,
    embed_vars: dict[str, Var],
) -> Var:
    """Encode the given nodes of one role as a (len(nodes), width) matrix."""
    nodes = np.asarray(nodes, dtype=np.intp)
    rf = store.role(role)
    blocks: list[Var] = []
    for f in schema.fields(role):
        if f.kind == CONTINUOUS:
            blocks.append(tape.const(rf.cont[f.name][nodes]))
            continue
        table = embed_vars.get(f.name)
        if table is None:
            raise SchemaError(f"no embedding table bound for field {f.name!r}")
        if table.value.shape != (f.vocab_size, f.embed_dim):
            raise SchemaError(
                f"embedding table {f.name!r} has shape {table.value.shape}, "
                f"schema says {(f.vocab_size, f.embed_dim)}")
        if f.kind == DISCRETE_SINGLE:
            ids = _clamp_oov(rf.single[f.name][nodes], f.vocab_size)
            blocks.append(tape.take_rows(table, ids))
        else:
            sets = [_clamp_oov(rf.multi[f.name][n], f.vocab_size) for n in nodes]
            blocks.append(tape.rows_mean_sets(table, sets))
    if not blocks:
        raise SchemaError(f"{role} schema has no fields")
    return tape.concat_cols(blocks) if len(blocks) > 1 else blocks[0]


def encode_record(
    tape: Tape,
    record: dict,
    fields,
    embed_vars: dict[str, Var],
) -> Var:
    """Encode a single raw record (field name -> value) as a 1-row vector.

    Continuous values are floats or float sequences; discrete-single an int;
    discrete-multi an int sequence.
    """
    blocks: list[Var] = []
    for f in fields:
        if f.name not in record:
            raise SchemaError(f"record missing field {f.name!r}")
        val = record[f.name]
        if f.kind == CONTINUOUS:
            vec = np.atleast_1d(np.asarray(val, dtype=np.float64))
            if vec.size != f.width:
                raise SchemaError(f"field {f.name!r} expects width {f.width}, got {vec.size}")
            blocks.append(tape.const(vec.reshape(1, -1)))
        elif f.kind == DISCRETE_SINGLE:
            ids = _clamp_oov(np.array([int(val)]), f.vocab_size)
            blocks.append(tape.take_rows(embed_vars[f.name], ids))
        else:
            ids = _clamp_oov(np.asarray(list(val), dtype=np.int64), f.vocab_size)
            blocks.append(tape.rows_mean_sets(embed_vars[f.name], [ids]))
    if not blocks:
        raise SchemaError("schema has no fields")
    return tape.concat_cols(blocks) if len(blocks) > 1 else blocks[0]
