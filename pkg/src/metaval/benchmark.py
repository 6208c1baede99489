"""Timing comparison between the compiled greedy kernels and the numpy
fallback. Both backends are imported directly (bypassing the import-time
dispatch in selection.py) so a single process can race them and confirm
they pick identical sequences while it is at it.
"""

from __future__ import annotations

import time

import numpy as np

from . import _kernels_py

try:
    from . import _kernels_cy  # type: ignore[attr-defined]
except ImportError:
    _kernels_cy = None


def _random_block(rng: np.random.Generator, n: int):
    z = rng.standard_normal((n, 8))
    g = rng.standard_normal((n, 4))
    pair = (z @ z.T) * (g @ g.T)
    sim = z @ z.T
    return np.ascontiguousarray(pair), np.ascontiguousarray(sim)


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(sizes=(100, 200, 400), per_class: int = 10, repeats: int = 3, seed: int = 0):
    """Race both backends on identical blocks; returns one row per (kernel, n).

    Each row carries the numpy time, the compiled time (None when the
    extension is absent), and the speedup. Raises if the two backends ever
    disagree on the picked sequence.
    """
    rows = []
    for n in sizes:
        rng = np.random.default_rng(seed + n)
        pair, sim = _random_block(rng, n)
        cands = np.arange(n, dtype=np.int64)
        k = min(per_class, n)

        def info_py():
            return _kernels_py.greedy_info_block(pair, cands, k)

        def gain_py():
            return _kernels_py.greedy_gain_block(sim, cands, k, np.zeros(n, dtype=np.uint8))

        for name, py_fn in (("info", info_py), ("gain", gain_py)):
            row = {"kernel": name, "n": n, "numpy_s": _time(py_fn, repeats),
                   "compiled_s": None, "speedup": None}
            if _kernels_cy is not None:
                if name == "info":
                    def cy_fn():
                        return _kernels_cy.greedy_info_block(pair, cands, k)
                else:
                    def cy_fn():
                        return _kernels_cy.greedy_gain_block(
                            sim, cands, k, np.zeros(n, dtype=np.uint8)
                        )
                if list(py_fn()) != list(cy_fn()):
                    raise AssertionError(f"backend disagreement on {name} kernel at n={n}")
                row["compiled_s"] = _time(cy_fn, repeats)
                row["speedup"] = row["numpy_s"] / row["compiled_s"]
            rows.append(row)
    return rows


def format_rows(rows) -> str:
    lines = [f"{'kernel':<8}{'n':>6}{'numpy [ms]':>14}{'compiled [ms]':>16}{'speedup':>10}"]
    for r in rows:
        comp = f"{1e3 * r['compiled_s']:.3f}" if r["compiled_s"] is not None else "absent"
        speed = f"{r['speedup']:.2f}x" if r["speedup"] is not None else "-"
        lines.append(
            f"{r['kernel']:<8}{r['n']:>6}{1e3 * r['numpy_s']:>14.3f}{comp:>16}{speed:>10}"
        )
    return "\n".join(lines)
