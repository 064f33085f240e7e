"""
Matching estimators built on an optimal coupling.

The coupling between arms ``t`` and ``j``, normalized row by row, gives the
conditional distribution of arm-``j`` covariates given a unit of arm ``t``.
Counterfactual outcomes are weighted averages of observed arm-``j``
outcomes under these weights. Rows whose coupling mass is too small (units
the unbalanced problem declined to transport) are dropped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .divergences import Divergence, balanced
from .exceptions import InputError, NoOverlapError
from .measures import CostSpec, Dataset, DiscreteMeasure, build_cost, split_by_treatment
from .solver import Coupling, SinkhornConfig, solve

__all__ = [
    "ConditionalWeights", "CausalEstimate", "conditional_weights",
    "impute_counterfactual", "pairwise_couplings", "joint_coupling",
    "expected_potential_outcome", "att", "ate", "bias_diagnostic",
]

logger = logging.getLogger(__name__)

DEFAULT_DROP_THRESHOLD = 1e-3


@dataclass(frozen=True)
class ConditionalWeights:
    """Row-stochastic matching weights from arm ``source`` to arm ``target``.

    ``matrix[i]`` is the conditional distribution over target units given
    source unit ``i``; dropped rows are all zero.
    """

    matrix: np.ndarray
    retained_mass: np.ndarray
    dropped: np.ndarray
    source: int
    target: int
    threshold: float


@dataclass
class CausalEstimate:
    """Point estimate with optional bootstrap summary.

    ``raw`` is the estimate with the full-sample normalization (before
    accounting for dropped units); ``units`` holds per-unit contributions
    where that is meaningful (treated-unit effects for the ATT).
    """

    estimand: str
    point: float
    n_used: tuple
    raw: float | None = None
    units: np.ndarray | None = field(default=None, repr=False)
    sd: float | None = None
    interval: tuple | None = None
    replicates: np.ndarray | None = field(default=None, repr=False)
    n_failed: int = 0

    def to_dict(self, replicates: bool = False) -> dict:
        out = {"estimand": self.estimand, "point": self.point,
               "n_used": [int(v) for v in self.n_used]}
        if self.raw is not None:
            out["raw"] = self.raw
        if self.sd is not None:
            out["sd"] = self.sd
            out["interval"] = list(self.interval)
            out["failed_replicates"] = self.n_failed
        if replicates and self.replicates is not None:
            out["replicates"] = [float(v) for v in self.replicates]
        return out


def conditional_weights(coupling: Coupling | np.ndarray, source: int, target: int,
                        drop_threshold: float = DEFAULT_DROP_THRESHOLD
                        ) -> ConditionalWeights:
    """Normalize the (source, target) marginal of a coupling row by row.

    A row is dropped when its mass is at most
    ``drop_threshold * total_mass / n_source``.
    """
    if source == target:
        raise InputError("source and target arms must differ")
    if isinstance(coupling, Coupling):
        M = coupling.pair(source, target)
    else:
        M = np.asarray(coupling, dtype=float)
        if M.ndim != 2:
            raise InputError("a raw coupling must be a matrix")
        if (source, target) == (1, 0):
            M = M.T
    if np.any(M < 0):
        raise InputError("coupling values must be nonnegative")
    mass = M.sum(axis=1)
    cut = drop_threshold * M.sum() / M.shape[0]
    dropped = ~(mass > cut)
    W = np.zeros_like(M)
    keep = ~dropped
    W[keep] = M[keep] / mass[keep, None]
    return ConditionalWeights(W, mass, dropped, source, target, float(drop_threshold))


def impute_counterfactual(weights: ConditionalWeights, outcomes):
    """Weighted average of target-arm outcomes for every retained row.

    Returns
    -------
    imputed : ndarray
        NaN on dropped rows.
    dropped : ndarray of bool
    """
    y = np.asarray(outcomes, dtype=float)
    if y.shape[0] != weights.matrix.shape[1]:
        raise InputError("outcome length does not match the target arm")
    if weights.dropped.all():
        raise NoOverlapError(f"no overlap: every unit of arm {weights.source} "
                             "was dropped")
    imputed = weights.matrix @ y
    imputed[weights.dropped] = np.nan
    return imputed, weights.dropped.copy()


def _merge(points):
    uniq, inverse, counts = np.unique(points, axis=0, return_inverse=True,
                                      return_counts=True)
    return uniq, inverse.ravel(), counts


def _solve_pair(Xa, Xb, eps, divergence, config, cost_spec, init, merge):
    na, nb = Xa.shape[0], Xb.shape[0]
    if merge:
        ua, ia, ca = _merge(Xa)
        ub, ib, cb = _merge(Xb)
        merge = ua.shape[0] < na or ub.shape[0] < nb
    if not merge:
        ma, mb = DiscreteMeasure(Xa), DiscreteMeasure(Xb)
        C = build_cost([ma, mb], cost_spec)
        sol = solve([ma, mb], C, eps, divergence, config, init)
        return sol.coupling.values, sol
    ma = DiscreteMeasure(ua, ca / na)
    mb = DiscreteMeasure(ub, cb / nb)
    C = build_cost([ma, mb], cost_spec)
    if init is not None:
        init = [_first_of(init[0], ia, ua.shape[0]), _first_of(init[1], ib, ub.shape[0])]
    sol = solve([ma, mb], C, eps, divergence, config, init)
    G = sol.coupling.values[np.ix_(ia, ib)] / np.outer(ca[ia], cb[ib])
    sol.potentials = [sol.potentials[0][ia], sol.potentials[1][ib]]
    return G, sol


def _first_of(values, inverse, n):
    out = np.empty(n)
    out[inverse] = np.asarray(values, float)
    return out


def pairwise_couplings(dataset: Dataset, eps: float,
                       divergence: Divergence | None = None,
                       config: SinkhornConfig | None = None,
                       cost_spec: CostSpec | None = None,
                       pairs=None, init=None, merge_duplicates: bool = True):
    """Solve one two-marginal problem per pair of arms.

    Parameters
    ----------
    dataset : Dataset
    eps : float
    divergence : Divergence, optional
        Penalty applied to both marginals; balanced by default.
    config : SinkhornConfig, optional
    cost_spec : CostSpec, optional
    pairs : iterable of (a, b), optional
        Arm pairs to solve, all ``a < b`` pairs by default.
    init : mapping, optional
        Warm-start potentials per pair, as returned in ``solutions``.
    merge_duplicates : bool
        Solve on the distinct covariate rows of each arm with multiplicity
        weights and split the mass back evenly. This is an exact
        reformulation and speeds up bootstrap replicates.

    Returns
    -------
    couplings : dict
        ``{(a, b): Coupling}`` with rows indexed by arm ``a``.
    solutions : dict
        ``{(a, b): Solution}`` carrying potentials and convergence records.
    """
    divergence = balanced() if divergence is None else divergence
    J = dataset.n_arms
    if pairs is None:
        pairs = [(a, b) for a in range(J) for b in range(a + 1, J)]
    arms = split_by_treatment(dataset, J)
    couplings, solutions = {}, {}
    for a, b in pairs:
        start = None if init is None else init.get((a, b))
        G, sol = _solve_pair(arms[a][0].points, arms[b][0].points, eps,
                             divergence, config, cost_spec, start, merge_duplicates)
        if not sol.converged:
            logger.warning("solve for arms (%d, %d) did not converge", a, b)
        couplings[(a, b)] = Coupling.from_values(G, (a, b))
        solutions[(a, b)] = sol
    return couplings, solutions


def joint_coupling(dataset: Dataset, eps: float,
                   divergence: Divergence | None = None,
                   config: SinkhornConfig | None = None,
                   cost_spec: CostSpec | None = None):
    """One multimarginal solve over all arms; returns (Coupling, Solution)."""
    divergence = balanced() if divergence is None else divergence
    arms = split_by_treatment(dataset)
    ms = [m for m, _ in arms]
    C = build_cost(ms, cost_spec)
    sol = solve(ms, C, eps, divergence, config, arms=tuple(range(len(ms))))
    return sol.coupling, sol


def _pair(couplings, t, j):
    # a bare matrix is a two-arm coupling with rows on arm 0
    if isinstance(couplings, (Coupling, np.ndarray)):
        return couplings
    if isinstance(couplings, Mapping):
        for key in ((t, j), (j, t)):
            if key in couplings:
                return couplings[key]
    raise InputError(f"no coupling available for arms ({t}, {j})")


def _arm_outcomes(dataset):
    return [dataset.outcome[dataset.treatment == j] for j in range(dataset.n_arms)]


def expected_potential_outcome(dataset: Dataset, couplings, arm: int,
                               drop_threshold: float = DEFAULT_DROP_THRESHOLD,
                               weighting: str = "uniform") -> CausalEstimate:
    """Sample mean of ``Y(arm)`` over all units.

    Units of ``arm`` contribute their observed outcome, every other unit
    its imputed outcome. Dropped units are excluded and the mean is taken
    over contributing units. With ``weighting="mass"`` imputed units count
    in proportion to their retained mass relative to a uniform share.
    """
    _check_weighting(weighting)
    ys = _arm_outcomes(dataset)
    if not 0 <= arm < len(ys):
        raise InputError(f"arm {arm} out of range")
    total = float(ys[arm].sum())
    count = float(ys[arm].shape[0])
    n_used = []
    for t in range(len(ys)):
        if t == arm:
            n_used.append(ys[arm].shape[0])
            continue
        W = conditional_weights(_pair(couplings, t, arm), t, arm, drop_threshold)
        imputed, dropped = impute_counterfactual(W, ys[arm])
        keep = ~dropped
        if weighting == "mass":
            share = W.retained_mass.sum() / W.retained_mass.shape[0]
            w = W.retained_mass[keep] / share
        else:
            w = np.ones(keep.sum())
        total += float(w @ imputed[keep])
        count += float(w.sum())
        n_used.append(int(keep.sum()))
    return CausalEstimate(f"epo:{arm}", total / count, tuple(n_used),
                          raw=total / dataset.n)


def att(dataset: Dataset, coupling, treated: int = 1, control: int = 0,
        drop_threshold: float = DEFAULT_DROP_THRESHOLD,
        weighting: str = "uniform") -> CausalEstimate:
    """Average effect on the arm ``treated`` relative to arm ``control``.

    ``units`` holds the per-unit effects ``Y_i - Yhat_i(control)`` of the
    retained treated units.
    """
    _check_weighting(weighting)
    ys = _arm_outcomes(dataset)
    W = conditional_weights(_pair(coupling, treated, control), treated, control,
                            drop_threshold)
    imputed, dropped = impute_counterfactual(W, ys[control])
    keep = ~dropped
    effects = ys[treated][keep] - imputed[keep]
    if weighting == "mass":
        w = W.retained_mass[keep]
        point = float(w @ effects / w.sum())
    else:
        point = float(effects.mean())
    n_used = [0] * len(ys)
    n_used[treated] = int(keep.sum())
    n_used[control] = ys[control].shape[0]
    return CausalEstimate(f"att:{treated}", point, tuple(n_used),
                          raw=float(effects.sum() / ys[treated].shape[0]),
                          units=effects)


def ate(dataset: Dataset, couplings, drop_threshold: float = DEFAULT_DROP_THRESHOLD,
        weighting: str = "uniform", arms=(1, 0)) -> CausalEstimate:
    """Difference ``E Y(arms[0]) - E Y(arms[1])`` of expected potential outcomes."""
    hi = expected_potential_outcome(dataset, couplings, arms[0], drop_threshold, weighting)
    lo = expected_potential_outcome(dataset, couplings, arms[1], drop_threshold, weighting)
    n_used = tuple(min(a, b) for a, b in zip(hi.n_used, lo.n_used))
    return CausalEstimate("ate", hi.point - lo.point, n_used, raw=hi.raw - lo.raw)


def bias_diagnostic(coupling, control_outcomes, treated: int = 1,
                    control: int = 0,
                    drop_threshold: float = DEFAULT_DROP_THRESHOLD) -> float:
    """Plug-in smoothing bias of the imputed control mean.

    Mean over retained treated units of the imputed control outcome minus
    the plain mean of the control outcomes. It vanishes whenever the
    control marginal of the coupling reproduces the control weights, as for
    balanced couplings and the independence coupling.
    """
    W = conditional_weights(_pair(coupling, treated, control), treated, control,
                            drop_threshold)
    y0 = np.asarray(control_outcomes, float)
    imputed, dropped = impute_counterfactual(W, y0)
    return float(imputed[~dropped].mean() - y0.mean())


def _check_weighting(weighting):
    if weighting not in ("uniform", "mass"):
        raise InputError("weighting must be 'uniform' or 'mass'")
