"""Trainable parameters for the dual towers, plus the checkpoint container."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ConfigError
from .graph import CONTINUOUS, FeatureSchema, ITEM, USER
from .numcore import Tape, Var

VECTORWISE = "vectorwise"
BITWISE = "bitwise"
MODES = (VECTORWISE, BITWISE)


@dataclass
class ConvLayerParams:
    """One vector-wise convolution layer.

    ``w[i, 0]`` is local filter i's weight for the self vector and
    ``w[i, r+1]`` its weight for the r-th relation's aggregated neighborhood;
    ``theta[0, i]`` merges filter outputs. All weights are scalars shared
    across every node of the graph.
    """

    w: np.ndarray        # (L, T+1)
    theta: np.ndarray    # (1, L)

    @property
    def n_filters(self) -> int:
        return self.w.shape[0]

    @property
    def n_relations(self) -> int:
        return self.w.shape[1] - 1


@dataclass
class BitwiseLayerParams:
    """One baseline dense-on-concatenation convolution layer; (m, 2m)."""

    weight: np.ndarray


@dataclass
class TowerParams:
    """All trainable state of one tower: q convolution layers, the trailing
    dense stack, and the feature-embedding tables."""

    conv: list
    dense_w: list[np.ndarray]
    dense_b: list[np.ndarray]
    embed: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def q(self) -> int:
        return len(self.conv)

    @property
    def input_width(self) -> int:
        return self.dense_w[0].shape[0]

    @property
    def output_width(self) -> int:
        return self.dense_w[-1].shape[1]


@dataclass
class ModelParams:
    user: TowerParams
    item: TowerParams
    mode: str = VECTORWISE

    def tower(self, side: str) -> TowerParams:
        return self.user if side == USER else self.item


def named_arrays(model: ModelParams) -> dict[str, np.ndarray]:
    """Flat, deterministically ordered view of every trainable array."""
    out: dict[str, np.ndarray] = {}
    for side in (USER, ITEM):
        tower = model.tower(side)
        for i, layer in enumerate(tower.conv):
            if isinstance(layer, ConvLayerParams):
                out[f"{side}.conv{i}.w"] = layer.w
                out[f"{side}.conv{i}.theta"] = layer.theta
            else:
                out[f"{side}.conv{i}.weight"] = layer.weight
        for i, (w, b) in enumerate(zip(tower.dense_w, tower.dense_b)):
            out[f"{side}.dense{i}.w"] = w
            out[f"{side}.dense{i}.b"] = b
        for name in sorted(tower.embed):
            out[f"{side}.embed.{name}"] = tower.embed[name]
    return out


def init_params(
    schema: FeatureSchema,
    n_relations: dict[str, int],
    rng: np.random.Generator,
    mode: str = VECTORWISE,
    q: int = 2,
    n_filters: int = 3,
    dense_widths: tuple[int, ...] = (110, 800, 300, 100),
    stddev_network: float = 0.8,
    stddev_embedding: float = 0.4,
    dtype=np.float64,
) -> ModelParams:
    """Draw fresh zero-mean Gaussian parameters for both towers.

    The first dense width must equal each side's encoded feature width
    (vector-wise convolutions preserve dimensionality). Draw order is fixed
    so a seeded generator yields identical parameters across runs.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    towers = {}
    for side in (USER, ITEM):
        width = schema.encoded_width(side)
        if width != dense_widths[0]:
            raise ConfigError(
                f"{side} encoded feature width {width} != dense input width {dense_widths[0]}")
        conv: list = []
        for _ in range(q):
            if mode == VECTORWISE:
                conv.append(ConvLayerParams(
                    w=rng.normal(0.0, stddev_network, (n_filters, n_relations[side] + 1)).astype(dtype),
                    theta=rng.normal(0.0, stddev_network, (1, n_filters)).astype(dtype),
                ))
            else:
                conv.append(BitwiseLayerParams(
                    weight=rng.normal(0.0, stddev_network, (width, 2 * width)).astype(dtype)))
        dense_w = [
            rng.normal(0.0, stddev_network, (a, b)).astype(dtype)
            for a, b in zip(dense_widths[:-1], dense_widths[1:])
        ]
        dense_b = [np.zeros((1, b), dtype=dtype) for b in dense_widths[1:]]
        embed = {}
        for f in schema.fields(side):
            if f.kind != CONTINUOUS:
                embed[f.name] = rng.normal(
                    0.0, stddev_embedding, (f.vocab_size, f.embed_dim)).astype(dtype)
        towers[side] = TowerParams(conv=conv, dense_w=dense_w, dense_b=dense_b, embed=embed)
    return ModelParams(user=towers[USER], item=towers[ITEM], mode=mode)


# ---------------------------------------------------------------------------
# tape binding

@dataclass
class BoundConv:
    w: Var | None = None
    theta: Var | None = None
    weight: Var | None = None


@dataclass
class BoundTower:
    conv: list[BoundConv]
    dense: list[tuple[Var, Var]]
    embed: dict[str, Var]


def bind_tower(tape: Tape, tower: TowerParams) -> BoundTower:
    """Wrap a tower's arrays as tape leaves for one forward/backward cycle."""
    conv = []
    for layer in tower.conv:
        if isinstance(layer, ConvLayerParams):
            conv.append(BoundConv(w=tape.leaf(layer.w), theta=tape.leaf(layer.theta)))
        else:
            conv.append(BoundConv(weight=tape.leaf(layer.weight)))
    dense = [(tape.leaf(w), tape.leaf(b)) for w, b in zip(tower.dense_w, tower.dense_b)]
    embed = {name: tape.leaf(t) for name, t in sorted(tower.embed.items())}
    return BoundTower(conv=conv, dense=dense, embed=embed)


def bound_leaves(side: str, bound: BoundTower) -> dict[str, Var]:
    """Leaf Vars of a bound tower under the same names as named_arrays()."""
    out: dict[str, Var] = {}
    for i, layer in enumerate(bound.conv):
        if layer.weight is not None:
            out[f"{side}.conv{i}.weight"] = layer.weight
        else:
            out[f"{side}.conv{i}.w"] = layer.w
            out[f"{side}.conv{i}.theta"] = layer.theta
    for i, (w, b) in enumerate(bound.dense):
        out[f"{side}.dense{i}.w"] = w
        out[f"{side}.dense{i}.b"] = b
    for name, var in bound.embed.items():
        out[f"{side}.embed.{name}"] = var
    return out


# ---------------------------------------------------------------------------
# checkpoint container: magic line, JSON header (named array directory),
# raw little-endian array bytes, sha256 trailer.

_MAGIC = b"IGC-CKPT-1\n"


def save_checkpoint(model: ModelParams, path, fingerprint: str = "",
                    meta: dict | None = None) -> None:
    arrays = named_arrays(model)
    header = {
        "mode": model.mode,
        "fingerprint": fingerprint,
        "meta": meta or {},
        "arrays": [
            {"name": name, "shape": list(a.shape), "dtype": str(a.dtype)}
            for name, a in arrays.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    body = b"".join(np.ascontiguousarray(a).tobytes() for a in arrays.values())
    payload = _MAGIC + len(header_bytes).to_bytes(8, "little") + header_bytes + body
    digest = hashlib.sha256(payload).hexdigest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(f"sha256 {digest}\n".encode("ascii"))


def load_checkpoint(path) -> tuple[ModelParams, str, dict]:
    """Read a checkpoint; returns (params, fingerprint, meta).

    Raises :class:`CheckpointError` on a bad magic, truncation, or checksum
    mismatch.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    trailer_at = blob.rfind(b"sha256 ")
    if trailer_at < 0:
        raise CheckpointError(f"{path}: missing checksum trailer")
    payload, trailer = blob[:trailer_at], blob[trailer_at:]
    expect = trailer.split()[1].decode("ascii") if len(trailer.split()) == 2 else ""
    if hashlib.sha256(payload).hexdigest() != expect:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt checkpoint)")
    off = len(_MAGIC)
    header_len = int.from_bytes(payload[off:off + 8], "little")
    off += 8
    header = json.loads(payload[off:off + header_len].decode("utf-8"))
    off += header_len

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        arrays[entry["name"]] = np.frombuffer(
            payload[off:off + nbytes], dtype=dt).reshape(shape).copy()
        off += nbytes
    if off != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after arrays")

    towers = {}
    for side in (USER, ITEM):
        conv: list = []
        for i in range(64):
            if f"{side}.conv{i}.w" in arrays:
                conv.append(ConvLayerParams(
                    w=arrays[f"{side}.conv{i}.w"], theta=arrays[f"{side}.conv{i}.theta"]))
            elif f"{side}.conv{i}.weight" in arrays:
                conv.append(BitwiseLayerParams(weight=arrays[f"{side}.conv{i}.weight"]))
            else:
                break
        dense_w, dense_b = [], []
        for i in range(64):
            if f"{side}.dense{i}.w" not in arrays:
                break
            dense_w.append(arrays[f"{side}.dense{i}.w"])
            dense_b.append(arrays[f"{side}.dense{i}.b"])
        if not dense_w:
            raise CheckpointError(f"{path}: no dense layers for side {side!r}")
        prefix = f"{side}.embed."
        embed = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        towers[side] = TowerParams(conv=conv, dense_w=dense_w, dense_b=dense_b, embed=embed)
    model = ModelParams(user=towers[USER], item=towers[ITEM], mode=header["mode"])
    return model, header.get("fingerprint", ""), header.get("meta", {})
