"""Compiled inner loops (numba) for the bit cascade, the coincidence sweep and
Berlekamp-Massey."""

import numpy as np
from numba import njit


@njit(cache=True)
def pair_stage_packed(data, nbits, von_neumann):
    """One debiasing stage over MSB-first packed bits.

    Returns ``(packed_out, out_bits)``.  Rejected pairs write a zero at the
    current output position, which the next accepted bit overwrites by OR.
    """
    npairs = nbits // 2
    out = np.zeros(npairs // 8 + 1, dtype=np.uint8)
    k = 0
    for p in range(npairs):
        i = 2 * p
        byte = data[i >> 3]
        shift = 7 - (i & 7)
        b0 = (byte >> shift) & 1
        b1 = (byte >> (shift - 1)) & 1
        if von_neumann:
            keep = b0 ^ b1
            val = b0
        else:
            keep = b0
            val = b1
        out[k >> 3] |= (val & keep) << (7 - (k & 7))
        k += keep
    return out[: (k + 7) // 8], k


@njit(cache=True)
def coincidence_sweep(a, b, width_ps, k_max):
    """Two-pointer count of lags ``b[j] - a[i]`` into ``2 * k_max + 1`` bins."""
    counts = np.zeros(2 * k_max + 1, dtype=np.int64)
    reach = (k_max + 0.5) * width_ps
    lo = 0
    nb = b.size
    for i in range(a.size):
        ta = a[i]
        while lo < nb and b[lo] < ta - reach:
            lo += 1
        j = lo
        while j < nb and b[j] <= ta + reach:
            lag = b[j] - ta
            mag = np.floor(abs(lag) / width_ps + 0.5)
            if mag <= k_max:
                k = int(mag)
                if lag < 0:
                    k = -k
                counts[k + k_max] += 1
            j += 1
    return counts


@njit(cache=True)
def _parity64(x):
    x ^= x >> np.uint64(32)
    x ^= x >> np.uint64(16)
    x ^= x >> np.uint64(8)
    x ^= x >> np.uint64(4)
    x ^= x >> np.uint64(2)
    x ^= x >> np.uint64(1)
    return x & np.uint64(1)


@njit(cache=True)
def berlekamp_massey(blocks):
    """Linear complexity of each row of a 0/1 uint8 matrix.

    Polynomials and the reversed block are packed 64 bits per word (bit i in
    word i // 64), so each discrepancy is an AND and a parity over at most
    ``L / 64 + 1`` words.  Reading the reversed block from offset
    ``m - 1 - n`` lines ``s[n - i]`` up with coefficient ``c[i]``.
    """
    nblocks, m = blocks.shape
    nw = (m + 1 + 63) // 64
    one = np.uint64(1)
    out = np.empty(nblocks, dtype=np.int64)
    rev = np.zeros(nw + 2, dtype=np.uint64)
    c = np.zeros(nw, dtype=np.uint64)
    bb = np.zeros(nw, dtype=np.uint64)
    t = np.zeros(nw, dtype=np.uint64)
    for r in range(nblocks):
        rev[:] = 0
        for j in range(m):
            if blocks[r, m - 1 - j]:
                rev[j >> 6] |= one << np.uint64(j & 63)
        c[:] = 0
        bb[:] = 0
        c[0] = one
        bb[0] = one
        length = 0
        last = -1
        for n in range(m):
            o = m - 1 - n
            q = o >> 6
            sh = np.uint64(o & 63)
            acc = np.uint64(0)
            for k in range((length >> 6) + 1):
                w = rev[q + k] >> sh
                if sh:
                    w |= rev[q + k + 1] << (np.uint64(64) - sh)
                acc ^= c[k] & w
            if _parity64(acc):
                t[:] = c
                shift = n - last
                ws = shift >> 6
                bs = np.uint64(shift & 63)
                for k in range(nw - 1, ws - 1, -1):
                    v = bb[k - ws] << bs
                    if bs and k - ws - 1 >= 0:
                        v |= bb[k - ws - 1] >> (np.uint64(64) - bs)
                    c[k] ^= v
                if 2 * length <= n:
                    length = n + 1 - length
                    last = n
                    bb[:] = t
        out[r] = length
    return out
