"""Numpy fallback for the greedy selection kernels.

Same contract as _kernels_cy; selection.py picks whichever is available
(METAVAL_PURE_PY=1 forces this one). Both operate on positions within a
precomputed pairwise matrix and break ties toward the lowest position,
which callers arrange to be the lowest original sample index.

Candidate totals in the coverage kernel are compensated (Neumaier) sums
accumulated in ascending row order. Mutually-covering candidate pairs tie
EXACTLY under this objective, so scores must be order-canonical floats or
the lowest-index tie-break degenerates into rounding noise; plain
np.sum's reduction tree shifts with the candidate and is not enough.
"""

from __future__ import annotations

import numpy as np


def _neumaier_columns(vals: np.ndarray) -> np.ndarray:
    """Column sums, sequential top-to-bottom with Neumaier compensation."""
    sums = np.zeros(vals.shape[1])
    comp = np.zeros(vals.shape[1])
    for r in range(vals.shape[0]):
        x = vals[r]
        t = sums + x
        comp += np.where(np.abs(sums) >= np.abs(x), (sums - t) + x, (x - t) + sums)
        sums = t
    return sums + comp


def greedy_info_block(pair_blk: np.ndarray, cands: np.ndarray, k: int) -> np.ndarray:
    """Greedy coverage maximization over one class block.

    The objective of a set S is sum over non-selected rows i of
    max_{j in S} pair[i, j]; each step adds the candidate maximizing the
    objective of the grown set, lowest position on exact ties. A running
    per-row max makes each candidate evaluation linear.
    """
    m = pair_blk.shape[0]
    cands = np.asarray(cands, dtype=np.int64)
    selected = np.zeros(m, dtype=bool)
    curmax = np.full(m, -np.inf)
    picks = []
    for _ in range(int(k)):
        avail = cands[~selected[cands]]
        if avail.size == 0:
            break
        rows = np.flatnonzero(~selected)
        vals = np.maximum(curmax[rows, None], pair_blk[np.ix_(rows, avail)])
        # the candidate's own row leaves the sum once it is selected
        vals[np.searchsorted(rows, avail), np.arange(avail.size)] = 0.0
        totals = _neumaier_columns(vals)
        best = int(avail[np.argmax(totals)])
        picks.append(best)
        selected[best] = True
        np.maximum(curmax, pair_blk[:, best], out=curmax)
    return np.asarray(picks, dtype=np.int64)


def greedy_gain_block(
    sim: np.ndarray,
    cands: np.ndarray,
    k: int,
    selected: np.ndarray,
) -> np.ndarray:
    """Greedy maximization of a selected-vs-rest similarity sum.

    Marginal gain of candidate a given selected set S is
    sum_{i unselected, i != a} sim[a, i] - sum_{i in S} sim[a, i],
    evaluated as one compensated pass over rows ascending (sign flipped on
    selected rows) so that gains equal in real arithmetic, like the two
    members of a two-sample class, come out equal in floats and fall to
    the lowest-index tie-break. `selected` (uint8 flags) is updated in
    place so a caller can chain calls over candidate groups sharing one
    matrix.
    """
    cands = np.asarray(cands, dtype=np.int64)
    picks = []
    for _ in range(int(k)):
        avail = cands[selected[cands] == 0]
        if avail.size == 0:
            break
        signs = np.where(selected == 0, 1.0, -1.0)
        vals = (sim[avail] * signs[None, :]).T
        vals[avail, np.arange(avail.size)] = 0.0
        gains = _neumaier_columns(vals)
        best = int(avail[np.argmax(gains)])
        picks.append(best)
        selected[best] = 1
    return np.asarray(picks, dtype=np.int64)
