"""Rank of binary matrices over GF(2)."""

import math

import numpy as np


def _pack_rows(mats: np.ndarray) -> np.ndarray:
    """(N, M, Q) 0/1 array -> (N, M) uint64, column 0 in the most significant used bit."""
    q = mats.shape[-1]
    if q > 64:
        raise ValueError("at most 64 columns supported")
    weights = np.left_shift(np.uint64(1), np.arange(q - 1, -1, -1, dtype=np.uint64))
    return (mats.astype(np.uint64) * weights).sum(axis=-1, dtype=np.uint64)


def gf2_rank_batch(mats) -> np.ndarray:
    """Ranks of a stack of binary matrices, shape (N, M, Q) -> (N,).

    Gauss-Jordan elimination run on all matrices at once, one column per step.
    """
    mats = np.asarray(mats)
    if mats.ndim != 3:
        raise ValueError("expected a (N, M, Q) stack")
    n, m, q = mats.shape
    rows = _pack_rows(mats & 1)
    used = np.zeros((n, m), dtype=bool)
    ranks = np.zeros(n, dtype=np.int64)
    for j in range(q):
        bit = np.uint64(1) << np.uint64(q - 1 - j)
        has = (rows & bit) != 0
        cand = has & ~used
        idx = np.flatnonzero(cand.any(axis=1))
        if idx.size == 0:
            continue
        piv = cand[idx].argmax(axis=1)
        prow = rows[idx, piv]
        elim = has[idx]
        elim[np.arange(idx.size), piv] = False
        rows[idx] ^= np.where(elim, prow[:, None], np.uint64(0))
        used[idx, piv] = True
        ranks[idx] += 1
    return ranks


def gf2_rank(matrix) -> int:
    matrix = np.asarray(matrix)
    return int(gf2_rank_batch(matrix[None])[0])


def rank_probability(r: int, m: int, q: int) -> float:
    """Probability that a uniform random m x q binary matrix has rank r."""
    if r < 0 or r > min(m, q):
        return 0.0
    log2p = r * (q + m - r) - m * q
    prod = 1.0
    for i in range(r):
        prod *= (1.0 - 2.0 ** (i - q)) * (1.0 - 2.0 ** (i - m)) / (1.0 - 2.0 ** (i - r))
    return math.ldexp(prod, log2p)
