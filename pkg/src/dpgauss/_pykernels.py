"""Pure numpy versions of the compiled scoring kernels.

Same signatures and results as ``_kernels``. Work is done in row blocks so
peak memory stays at ``O(block * k * d^2)``.
"""

import numpy as np

_BLOCK = 64


def _spectral_block(mats, linv, rows):
    # C[b, j] = Linv_j @ A_i @ Linv_j^T for i in rows
    C = np.einsum("jab,ibc,jdc->ijad", linv, mats[rows], linv, optimize=True)
    C = (C + np.swapaxes(C, -1, -2)) / 2
    ev = np.linalg.eigvalsh(C)
    lo, hi = ev[..., 0], ev[..., -1]
    with np.errstate(divide="ignore"):
        dist = np.maximum(hi - 1.0, 1.0 / lo - 1.0)
    return np.where(lo > 0, dist, np.inf)


def spectral_dist_matrix(mats, linv):
    k = mats.shape[0]
    out = np.zeros((k, k))
    for start in range(0, k, _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, k))
        out[rows] = _spectral_block(mats, linv, rows)
    out = np.triu(out, 1)
    return out + out.T


def spectral_within_counts(mats, linv, radius):
    D = spectral_dist_matrix(mats, linv)
    return np.count_nonzero(D <= radius, axis=1).astype(np.int64)


def euclid_within_counts(points, radius):
    k = points.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    sq = np.sum(points * points, axis=1)
    r2 = radius * radius
    for start in range(0, k, 4 * _BLOCK):
        blk = points[start:start + 4 * _BLOCK]
        d2 = sq[start:start + len(blk), None] - 2 * blk @ points.T + sq[None, :]
        # exact differences near the boundary to avoid cancellation error
        near = np.abs(d2 - r2) <= 1e-9 * (r2 + sq.max() + 1.0)
        if np.any(near):
            bi, bj = np.nonzero(near)
            diff = blk[bi] - points[bj]
            d2[bi, bj] = np.sum(diff * diff, axis=1)
        d2[np.arange(len(blk)), np.arange(start, start + len(blk))] = 0.0
        counts[start:start + len(blk)] = np.count_nonzero(d2 <= r2, axis=1)
    return counts
