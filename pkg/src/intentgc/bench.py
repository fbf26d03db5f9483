"""Micro-benchmark: vector-wise vs bit-wise convolution layer timings.

Times one full convolution layer (neighborhood aggregation plus the
transform) on a batch of nodes, for both modes across a width sweep. The
sweep is measured in interleaved passes so machine noise hits every cell
alike, with warmup passes first and the median per cell reported, alongside
the analytic multiply-add counts. Runs pinned to one BLAS thread.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .intentnet import count_flops

BATCH = 32


@dataclass(frozen=True)
class BenchRow:
    mode: str
    m: int
    ns_per_op: float          # median wall time per node per conv layer
    analytic_madds: int       # multiply-adds per conv op at this m

    @property
    def ns_per_madd(self) -> float:
        return self.ns_per_op / self.analytic_madds


def _make_kernels(rng, m, rho, n_filters, batch):
    selfv = rng.standard_normal((batch, m))
    neigh = rng.standard_normal((rho, batch, m))
    dense = rng.standard_normal((m, 2 * m))
    w = rng.standard_normal((n_filters, 2))
    theta = rng.standard_normal(n_filters)

    def bitwise():
        agg = neigh.mean(axis=0)
        cat = np.concatenate([selfv, agg], axis=1)
        return np.maximum(cat @ dense.T, 0.0)

    def vectorwise():
        agg = neigh.mean(axis=0)
        acc = None
        for i in range(n_filters):
            g = w[i, 0] * selfv + w[i, 1] * agg
            np.maximum(g, 0.0, out=g)
            acc = theta[i] * g if acc is None else acc + theta[i] * g
        return np.maximum(acc, 0.0)

    return {"bitwise": bitwise, "vectorwise": vectorwise}


def bench_conv(
    m_values=(128, 256, 512),
    rho: int = 10,
    n_filters: int = 3,
    q: int = 2,
    passes: int = 40,
    seed: int = 0,
    target_seconds: float = 0.012,
) -> list[BenchRow]:
    """Median ns per conv op (per node) for each mode and width.

    ``q`` only affects the analytic per-node totals callers may derive via
    :func:`count_flops`; the timed unit is a single layer application.
    """
    if passes < 5:
        raise ValueError("passes must be >= 5")
    rng = np.random.default_rng(seed)
    kernels = {m: _make_kernels(rng, m, rho, n_filters, BATCH) for m in m_values}
    cells = [(m, mode) for m in m_values for mode in ("bitwise", "vectorwise")]
    samples: dict[tuple, list[float]] = {c: [] for c in cells}

    with threadpool_limits(limits=1):
        inner: dict[tuple, int] = {}
        for m, mode in cells:
            fn = kernels[m][mode]
            fn()
            t0 = time.perf_counter()
            fn()
            dt = time.perf_counter() - t0
            inner[(m, mode)] = max(3, int(target_seconds / max(dt, 1e-8)))
        for _ in range(max(3, passes // 8)):        # warmup sweeps
            for m, mode in cells:
                kernels[m][mode]()
        for _ in range(passes):
            for m, mode in cells:
                fn = kernels[m][mode]
                n = inner[(m, mode)]
                t0 = time.perf_counter()
                for _ in range(n):
                    fn()
                samples[(m, mode)].append((time.perf_counter() - t0) / n)

    rows = []
    for m, mode in cells:
        per_call = float(np.median(samples[(m, mode)]))
        rows.append(BenchRow(
            mode=mode, m=m,
            ns_per_op=per_call / BATCH * 1e9,
            analytic_madds=count_flops(mode, m, rho, n_filters, max(q, 1)).per_conv_op,
        ))
    return rows


def format_table(rows: list[BenchRow]) -> str:
    """Machine-readable TSV: mode, m, median ns/op, analytic madds/op."""
    out = ["mode\tm\tns_per_op\tanalytic_madds"]
    for r in rows:
        out.append(f"{r.mode}\t{r.m}\t{r.ns_per_op:.1f}\t{r.analytic_madds}")
    return "\n".join(out) + "\n"


def doubling_ratios(rows: list[BenchRow], mode: str) -> list[float]:
    """Time ratios between consecutive widths of one mode (sorted by m)."""
    mine = sorted((r for r in rows if r.mode == mode), key=lambda r: r.m)
    return [b.ns_per_op / a.ns_per_op for a, b in zip(mine, mine[1:])]
