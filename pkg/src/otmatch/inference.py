"""
Nonparametric bootstrap for any scalar estimator.

Replicate ``b`` draws its resampling indices from a Philox generator keyed
by the master seed and advanced by ``b`` jumps, so every replicate is
reproducible on its own and independent of execution order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InputError, NumericalError, OTMatchError
from .measures import Dataset

__all__ = ["BootstrapSummary", "child_generator", "resample_indices", "bootstrap"]

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2


@dataclass
class BootstrapSummary:
    """Bootstrap replicates with their standard deviation and percentile
    interval ``(alpha/2, 1 - alpha/2)``.

    ``arm_fractions`` are the arm shares of each replicate (rows follow the
    replicates; failed replicates are excluded from every field except
    ``n_failed``).
    """

    replicates: np.ndarray
    sd: float
    interval: tuple
    seed: int
    B: int
    alpha: float
    n_failed: int = 0
    arm_fractions: np.ndarray = field(default=None, repr=False)


def child_generator(seed: int, b: int) -> np.random.Generator:
    """Generator for replicate ``b``: Philox keyed by ``seed``, jumped ``b`` times."""
    if seed < 0 or b < 0:
        raise InputError("seed and replicate index must be nonnegative")
    bit = np.random.Philox(key=int(seed) % 2**64)
    if b:
        bit = bit.jumped(int(b))
    return np.random.Generator(bit)


def resample_indices(treatment, seed: int, b: int, mode: str = "stratified"):
    """Row indices of bootstrap replicate ``b``.

    ``stratified`` resamples within each arm and keeps arm sizes;
    ``pooled`` resamples all rows together.
    """
    t = np.asarray(treatment)
    rng = child_generator(seed, b)
    if mode == "pooled":
        return np.sort(rng.integers(0, t.shape[0], t.shape[0]))
    if mode != "stratified":
        raise InputError("bootstrap mode must be 'stratified' or 'pooled'")
    parts = []
    for arm in np.unique(t):
        rows = np.flatnonzero(t == arm)
        parts.append(rows[rng.integers(0, rows.shape[0], rows.shape[0])])
    return np.concatenate(parts)


def bootstrap(dataset: Dataset, estimator: Callable[[Dataset], float], B: int,
              seed: int, alpha: float = 0.05,
              mode: str = "stratified") -> BootstrapSummary:
    """Bootstrap standard deviation and percentile interval of ``estimator``.

    Parameters
    ----------
    dataset : Dataset
    estimator : callable
        Maps a dataset to a float. It must succeed on ``dataset`` itself.
    B : int
        Number of replicates, at least 2.
    seed : int
    alpha : float
        The interval covers ``1 - alpha``.
    mode : {"stratified", "pooled"}

    Raises
    ------
    NumericalError
        If more than 20% of the replicates fail.
    """
    if int(B) < 2:
        raise InputError("B must be at least 2")
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    float(estimator(dataset))
    J = dataset.n_arms
    reps, fracs, failed = [], [], 0
    for b in range(int(B)):
        idx = resample_indices(dataset.treatment, seed, b, mode)
        sub = dataset.subset(idx)
        try:
            if np.any(np.bincount(sub.treatment, minlength=J) == 0):
                raise InputError("empty arm in replicate")
            value = float(estimator(sub))
            if not np.isfinite(value):
                raise NumericalError("non-finite estimate")
        except OTMatchError as exc:
            failed += 1
            logger.info("replicate %d failed: %s", b, exc)
            continue
        reps.append(value)
        fracs.append(np.bincount(sub.treatment, minlength=J) / sub.n)
    if failed > MAX_FAILURE_RATE * B:
        raise NumericalError(f"{failed} of {B} bootstrap replicates failed")
    reps = np.array(reps)
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    return BootstrapSummary(reps, float(reps.std(ddof=1)), (float(lo), float(hi)),
                            int(seed), int(B), float(alpha), failed, np.array(fracs))
