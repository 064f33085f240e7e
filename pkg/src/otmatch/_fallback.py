"""Pure numpy implementation of the compiled two-marginal IPFP loop.

Same signature and in-place semantics as ``_kernels.ipfp2``; every
log-sum-exp runs over the full matrix, so ``tau`` is accepted and ignored.
"""
import numpy as np
from scipy.special import logsumexp


def ipfp2(C, la, lb, f, g, eps, damp_f, damp_g, balanced, tol, max_iter,
          tau=100.0):
    if max_iter < 1:
        raise ValueError("max_iter must be positive")
    C = np.asarray(C)
    la = np.asarray(la)
    lb = np.asarray(lb)
    wa = np.exp(la)
    change = np.inf
    for it in range(max_iter):
        fold = f.copy()
        gold = g.copy()
        f[:] = -damp_f * eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
        g[:] = -damp_g * eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
        if balanced:
            mean = wa @ f
            f -= mean
            g += mean
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            return it + 1, change, 2
        change = max(np.abs(f - fold).max(), np.abs(g - gold).max())
        if change < tol:
            return it + 1, change, 0
    return max_iter, change, 1
