"""
Log-domain Sinkhorn / IPFP for balanced and unbalanced multimarginal
entropic transport.

The problem solved is

    min_gamma  <c, gamma> + eps KL(gamma | mu_1 x ... x mu_J)
               + sum_j D_phi_j(pi_j gamma | mu_j)

through its dual in the potentials ``(phi_1, ..., phi_J)``. One IPFP sweep
updates every arm in turn with

    phi_j <- -aprox_j(-softmin_j(c - sum_{i != j} phi_i))

and the optimal coupling is the exponential tilt
``exp((sum_j phi_j - c) / eps)`` of the independence coupling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .divergences import Divergence, balanced, phi_divergence
from .exceptions import InputError, NumericalError
from .measures import DiscreteMeasure

__all__ = [
    "SinkhornConfig", "IPFPResult", "Coupling", "Solution",
    "softmin", "ipfp", "assemble_coupling", "foc_residual",
    "dual_objective", "primal_objective", "exact_ot_bruteforce", "solve",
]

logger = logging.getLogger(__name__)

EXACT_MAX_ENTRIES = 10**4


@dataclass(frozen=True)
class SinkhornConfig:
    """Stopping rule of the IPFP iterations.

    Parameters
    ----------
    epsilon : float
        Entropic regularization.
    max_iterations : int
        Maximum number of full sweeps.
    tolerance : float
        Stop once the sup-norm change of the potentials over a sweep is
        below this value.
    marginal_tolerance : float
        Feasibility threshold reported for balanced solves.
    """

    epsilon: float
    max_iterations: int = 10000
    tolerance: float = 1e-9
    marginal_tolerance: float = 1e-7

    def __post_init__(self):
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise InputError("epsilon must be positive and finite")
        if int(self.max_iterations) < 1:
            raise InputError("max_iterations must be a positive integer")
        if not (self.tolerance > 0 and self.marginal_tolerance > 0):
            raise InputError("tolerances must be positive")


class IPFPResult(NamedTuple):
    potentials: list
    iterations: int
    converged: bool
    change: float


@dataclass(frozen=True)
class Coupling:
    """Dense coupling tensor together with its axis marginals.

    ``arms`` records which study arm each axis belongs to.
    """

    values: np.ndarray
    marginals: tuple
    total_mass: float
    arms: tuple = field(default=())

    def __post_init__(self):
        if not self.arms:
            object.__setattr__(self, "arms", tuple(range(self.values.ndim)))

    @classmethod
    def from_values(cls, values, arms=()):
        values = np.asarray(values, dtype=float)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InputError("coupling values must be finite and nonnegative")
        J = values.ndim
        marg = tuple(values.sum(axis=tuple(a for a in range(J) if a != j))
                     for j in range(J))
        return cls(values, marg, float(values.sum()), tuple(arms))

    def pair(self, a: int, b: int) -> np.ndarray:
        """Marginal matrix on the axes of arms ``a`` (rows) and ``b``."""
        try:
            ia, ib = self.arms.index(a), self.arms.index(b)
        except ValueError:
            raise InputError(f"coupling does not contain arms {a} and {b}") from None
        if ia == ib:
            raise InputError("the two arms must differ")
        J = self.values.ndim
        M = self.values.sum(axis=tuple(k for k in range(J) if k not in (ia, ib)))
        return M if ia < ib else M.T


@dataclass
class Solution:
    """Potentials, coupling and convergence record of one solve."""

    potentials: list
    coupling: Coupling
    iterations: int
    converged: bool
    change: float
    epsilon: float
    divergences: tuple
    marginal_errors: list


def _log_weights(measures):
    with np.errstate(divide="ignore"):
        return [np.log(m.weights) for m in measures]


def _check(measures, cost, divergences=None):
    J = len(measures)
    if J < 2:
        raise InputError("at least two measures are required")
    cost = np.asarray(cost, dtype=float)
    if cost.shape != tuple(m.n for m in measures):
        raise InputError(f"cost shape {cost.shape} does not match the measures")
    if not np.all(np.isfinite(cost)):
        raise InputError("cost contains non-finite values")
    if divergences is None:
        divergences = [balanced()] * J
    elif isinstance(divergences, Divergence):
        divergences = [divergences] * J
    divergences = list(divergences)
    if len(divergences) != J:
        raise InputError("one divergence per measure is required")
    return cost, divergences


def _tilt(potentials, cost, logw, eps, skip=None):
    J = cost.ndim
    S = -cost / eps
    for i in range(J):
        if i == skip:
            continue
        shape = [1] * J
        shape[i] = -1
        S = S + (potentials[i] / eps + logw[i]).reshape(shape)
    return S


def softmin(potentials, cost, measures, axis: int, eps: float) -> np.ndarray:
    """Soft-min of ``c - sum_{i != axis} phi_i`` along arm ``axis``.

    ``-eps log sum exp((sum_{i != axis} phi_i - c) / eps)`` weighted by the
    other measures, evaluated with a log-sum-exp in the log domain.
    """
    cost, _ = _check(measures, cost)
    pots = [np.asarray(p, dtype=float) for p in potentials]
    if not all(np.all(np.isfinite(p)) for p in pots):
        raise InputError("potentials must be finite")
    logw = _log_weights(measures)
    S = _tilt(pots, cost, logw, eps, skip=axis)
    other = tuple(i for i in range(cost.ndim) if i != axis)
    return -eps * logsumexp(S, axis=other)


def ipfp(measures: Sequence[DiscreteMeasure], cost, eps: float,
         divergences=None, config: SinkhornConfig | None = None,
         init=None) -> IPFPResult:
    """Generalized Sinkhorn iterations.

    Arms are updated in order ``1, ..., J`` within each sweep. When every
    arm is balanced the potentials of arms ``1, ..., J-1`` are recentered to
    zero mean after each sweep and the constant is moved to arm ``J``.

    Parameters
    ----------
    measures : sequence of DiscreteMeasure
    cost : ndarray
        Cost tensor of shape ``(n_1, ..., n_J)``.
    eps : float
        Entropic regularization; overrides ``config.epsilon``.
    divergences : Divergence or sequence of Divergence, optional
        Marginal penalties, balanced by default.
    config : SinkhornConfig, optional
    init : sequence of ndarray, optional
        Starting potentials; zeros by default.

    Returns
    -------
    IPFPResult
        Potentials, number of sweeps, convergence flag and the last
        sup-norm change. Non-convergence is reported, not raised.

    Raises
    ------
    NumericalError
        If an update becomes non-finite.
    """
    cost, divergences = _check(measures, cost, divergences)
    if config is None:
        config = SinkhornConfig(eps)
    elif config.epsilon != eps:
        config = SinkhornConfig(eps, config.max_iterations, config.tolerance,
                                config.marginal_tolerance)
    J = len(measures)
    all_balanced = all(d.is_balanced for d in divergences)
    if all_balanced:
        masses = np.array([m.mass for m in measures])
        if np.ptp(masses) > 1e-12 * masses.max():
            raise InputError("balanced transport needs measures of equal mass")
    if init is None:
        pots = [np.zeros(m.n) for m in measures]
    else:
        pots = [np.array(p, dtype=float, copy=True) for p in init]
        if [p.shape[0] for p in pots] != [m.n for m in measures]:
            raise InputError("initial potentials have the wrong lengths")
    logw = _log_weights(measures)
    damp = [d.damping(eps) for d in divergences]

    if J == 2:
        it, change, status = _backend.ipfp2(
            np.ascontiguousarray(cost), logw[0], logw[1], pots[0], pots[1],
            float(eps), damp[0], damp[1], all_balanced,
            float(config.tolerance), int(config.max_iterations))
        if status == 2:
            raise NumericalError(f"non-finite potential at sweep {it}")
        converged = status == 0
    else:
        it, change, converged = _ipfp_tensor(pots, cost, logw, eps, damp,
                                             all_balanced, config)
    if not converged:
        logger.warning("IPFP stopped after %d sweeps with change %.3g "
                       "(eps=%g)", it, change, eps)
    return IPFPResult(pots, int(it), bool(converged), float(change))


def _ipfp_tensor(pots, cost, logw, eps, damp, all_balanced, config):
    J = cost.ndim
    change = np.inf
    for it in range(1, config.max_iterations + 1):
        old = [p.copy() for p in pots]
        for j in range(J):
            S = _tilt(pots, cost, logw, eps, skip=j)
            other = tuple(i for i in range(J) if i != j)
            pots[j] = -damp[j] * eps * logsumexp(S, axis=other)
        if all_balanced:
            for j in range(J - 1):
                mean = np.exp(logw[j]) @ pots[j]
                pots[j] -= mean
                pots[J - 1] += mean
        if not all(np.all(np.isfinite(p)) for p in pots):
            raise NumericalError(f"non-finite potential at sweep {it}")
        change = max(np.abs(p - q).max() for p, q in zip(pots, old))
        if change < config.tolerance:
            return it, change, True
    return config.max_iterations, change, False


def assemble_coupling(potentials, cost, measures, eps: float,
                      arms=()) -> Coupling:
    """Exponential tilt ``exp((sum_j phi_j - c) / eps) prod_j mu_j``."""
    cost, _ = _check(measures, cost)
    logw = _log_weights(measures)
    S = _tilt([np.asarray(p, float) for p in potentials], cost, logw, eps)
    if S.max() > 700:
        raise NumericalError("coupling overflows; increase epsilon or check "
                             "that the potentials converged")
    return Coupling.from_values(np.exp(S), arms)


def foc_residual(potentials, cost, measures, eps: float,
                 divergences=None) -> float:
    """Sup-norm violation of the generalized Sinkhorn fixed point."""
    cost, divergences = _check(measures, cost, divergences)
    res = 0.0
    for j, div in enumerate(divergences):
        smin = softmin(potentials, cost, measures, j, eps)
        rhs = div.damping(eps) * smin
        res = max(res, float(np.abs(np.asarray(potentials[j]) - rhs).max()))
    return res


def dual_objective(potentials, cost, measures, eps: float,
                   divergences=None) -> float:
    """Dual functional
    ``-sum_j <mu_j, phi*_j(-phi_j)> - eps (<exp((sum phi - c)/eps), x mu> - |x mu|)``.
    """
    cost, divergences = _check(measures, cost, divergences)
    val = 0.0
    for p, m, div in zip(potentials, measures, divergences):
        val -= float(m.weights @ div.conj(-np.asarray(p, float)))
    logw = _log_weights(measures)
    S = _tilt([np.asarray(p, float) for p in potentials], cost, logw, eps)
    prod_mass = float(np.prod([m.mass for m in measures]))
    val -= eps * (float(np.exp(logsumexp(S))) - prod_mass)
    return val


def primal_objective(coupling, cost, measures, eps: float, divergences=None,
                     marginal_atol: float = 1e-7) -> float:
    """Primal value ``<c, g> + eps KL(g | x mu) + sum_j D_j(pi_j g | mu_j)``.

    ``KL`` is the generalized divergence including the mass term
    ``-|g| + |x mu|``. Balanced arms contribute zero when their marginal is
    within ``marginal_atol`` of the target and ``+inf`` otherwise.
    """
    cost, divergences = _check(measures, cost, divergences)
    G = coupling.values if isinstance(coupling, Coupling) else np.asarray(coupling, float)
    ref = measures[0].weights
    for m in measures[1:]:
        ref = np.multiply.outer(ref, m.weights)
    pos = G > 0
    if np.any(pos & (ref <= 0)):
        return np.inf
    kl_term = float(np.sum(G[pos] * np.log(G[pos] / ref[pos]))) - G.sum() + ref.sum()
    val = float(np.sum(cost * G)) + eps * kl_term
    J = G.ndim
    for j, (m, div) in enumerate(zip(measures, divergences)):
        marg = G.sum(axis=tuple(a for a in range(J) if a != j))
        val += phi_divergence(div, marg, m.weights, atol=marginal_atol)
    return val


def exact_ot_bruteforce(measures: Sequence[DiscreteMeasure], cost):
    """Exact balanced two-marginal transport by linear programming.

    Solves ``min <c, g>`` over couplings with marginals ``mu_1, mu_2`` with
    the HiGHS simplex solver. Intended as a reference on small instances.

    Returns
    -------
    value : float
    coupling : ndarray
    """
    from scipy.optimize import linprog

    cost, _ = _check(measures, cost)
    if cost.ndim != 2:
        raise InputError("exact transport is implemented for two marginals")
    if cost.size > EXACT_MAX_ENTRIES:
        raise InputError(f"exact transport is capped at {EXACT_MAX_ENTRIES} entries")
    a, b = measures[0].weights, measures[1].weights
    if abs(a.sum() - b.sum()) > 1e-12 * max(a.sum(), 1.0):
        raise InputError("exact transport needs measures of equal mass")
    n, m = cost.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise NumericalError(f"linear program failed: {res.message}")
    G = np.maximum(res.x.reshape(n, m), 0.0)
    return float(res.fun), G


def solve(measures: Sequence[DiscreteMeasure], cost, eps: float,
          divergences=None, config: SinkhornConfig | None = None,
          init=None, arms=()) -> Solution:
    """Run :func:`ipfp` and assemble the coupling."""
    cost, divergences = _check(measures, cost, divergences)
    res = ipfp(measures, cost, eps, divergences, config, init)
    coupling = assemble_coupling(res.potentials, cost, measures, eps, arms)
    errs = [float(np.abs(mg - m.weights).max())
            for mg, m in zip(coupling.marginals, measures)]
    return Solution(res.potentials, coupling, res.iterations, res.converged,
                    res.change, float(eps), tuple(divergences), errs)
