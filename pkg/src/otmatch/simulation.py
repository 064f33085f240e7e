"""
Synthetic designs and the experiment harness.

Two binary designs with ``n0 = 1000`` controls and ``n1 = 100`` treated
units in two dimensions share the outcome model

    Y(0) ~ N(-1 + X1 X2, 1),    Y(1) ~ N(2 + 2 X1 + X2, 0.5)

(second parameters are variances). Controls follow
``0.5 N(-1, 2I) + 0.5 N(0.5, I)`` in both designs. Treated units follow
``0.5 N(1, 2I) + 0.5 N(0.5, I)`` in case 1, where only part of them overlap
the controls, and ``0.5 N(1, 0.5I) + 0.5 N(0.5, 0.5I)`` in case 2, where
they sit inside the control region.

A third design draws three Gaussian arms of sizes 70, 60 and 80 and is
solved jointly by the multimarginal solver.

Random numbers come from Philox streams (see :mod:`otmatch.inference`);
component labels use inverse-CDF sampling on uniforms and normals use the
Box-Muller transform, so every draw is a documented function of the seed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import baselines
from .divergences import Divergence, balanced, kl
from .exceptions import InputError, OTMatchError
from .inference import child_generator, resample_indices
from .matching import DEFAULT_DROP_THRESHOLD, ate, att, pairwise_couplings
from .measures import Dataset, DiscreteMeasure, build_cost
from .solver import SinkhornConfig, solve

__all__ = [
    "MixtureSpec", "sample_mixture", "sample_outcomes", "outcome_means",
    "true_effect", "population_ate", "CASES", "make_case", "ExperimentRow",
    "IllustrationRow", "run_case", "run_illustration", "derive_seed",
]

logger = logging.getLogger(__name__)

N0, N1 = 1000, 100
ILLUSTRATION_SIZES = (70, 60, 80)


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture: tuples ``(weight, mean, covariance)``."""

    components: tuple

    def __post_init__(self):
        comps = []
        for w, m, S in self.components:
            m = np.atleast_1d(np.asarray(m, float))
            S = np.atleast_2d(np.asarray(S, float))
            if S.shape != (m.shape[0], m.shape[0]):
                raise InputError("covariance shape does not match the mean")
            if not np.allclose(S, S.T):
                raise InputError("covariance must be symmetric")
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise InputError("covariance is not positive definite") from None
            comps.append((float(w), m, S, L))
        w = np.array([c[0] for c in comps])
        if not comps or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError("mixture weights must be nonnegative and sum to 1")
        if len({c[1].shape[0] for c in comps}) != 1:
            raise InputError("components have different dimensions")
        object.__setattr__(self, "components", tuple(comps))

    @property
    def d(self) -> int:
        return self.components[0][1].shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    def mean(self) -> np.ndarray:
        return sum(w * m for w, m, _, _ in self.components)


def _iso(mean, var, d=2):
    return (np.full(d, float(mean)), float(var) * np.eye(d))


def _mix(*parts):
    return MixtureSpec(tuple((w,) + _iso(m, v) for w, m, v in parts))


CASES = {
    1: (_mix((0.5, -1.0, 2.0), (0.5, 0.5, 1.0)),
        _mix((0.5, 1.0, 2.0), (0.5, 0.5, 1.0))),
    2: (_mix((0.5, -1.0, 2.0), (0.5, 0.5, 1.0)),
        _mix((0.5, 1.0, 0.5), (0.5, 0.5, 0.5))),
}

ILLUSTRATION = (
    MixtureSpec(((1.0, [1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),)),
    MixtureSpec(((1.0, [0.5, -0.2], [[1.0, 0.1], [0.1, 1.0]]),)),
    MixtureSpec(((1.0, [0.7, -0.2], [[0.5, 0.1], [0.1, 0.5]]),)),
)


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 63-bit child seed of ``seed`` along ``path``."""
    ss = np.random.SeedSequence([int(seed)] + [int(p) for p in path])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _uniforms(rng, n):
    return rng.random(n)


def _normals(rng, n):
    # Box-Muller on pairs of uniforms; 1 - u keeps the log argument in (0, 1]
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return z[:n]


def sample_mixture(spec: MixtureSpec, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` points from a Gaussian mixture.

    The component of each point is the inverse CDF of the mixture weights
    at a uniform draw; the point is ``mean + L z`` with ``L`` the Cholesky
    factor of the component covariance.
    """
    if n < 0:
        raise InputError("n must be nonnegative")
    rng = child_generator(seed, 0)
    u = _uniforms(rng, n)
    cdf = np.cumsum(spec.weights)
    cdf[-1] = 1.0
    comp = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    z = _normals(rng, n * spec.d).reshape(n, spec.d)
    out = np.empty((n, spec.d))
    for k, (_, m, _, L) in enumerate(spec.components):
        sel = comp == k
        out[sel] = m + z[sel] @ L.T
    return out


def outcome_means(X):
    """Conditional means ``(f0(X), f1(X))`` of the two potential outcomes."""
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise InputError("outcome model needs two covariates")
    x1, x2 = X[:, 0], X[:, 1]
    return -1.0 + x1 * x2, 2.0 + 2.0 * x1 + x2


def true_effect(X) -> np.ndarray:
    """Conditional average effect ``f1(X) - f0(X)``."""
    f0, f1 = outcome_means(X)
    return f1 - f0


def sample_outcomes(X, arm: int, seed: int, noise_is_sd: bool = False) -> np.ndarray:
    """Potential outcome ``Y(arm)`` for covariates ``X``.

    The noise scale of ``Y(1)`` is read as a variance of 0.5 unless
    ``noise_is_sd`` is set, in which case 0.5 is the standard deviation.
    """
    f0, f1 = outcome_means(X)
    if arm == 0:
        mean, sd = f0, 1.0
    elif arm == 1:
        mean, sd = f1, (0.5 if noise_is_sd else math.sqrt(0.5))
    else:
        raise InputError("outcome model is defined for arms 0 and 1")
    rng = child_generator(seed, 0)
    return mean + sd * _normals(rng, mean.shape[0])


def _mixture_effect_mean(spec: MixtureSpec) -> float:
    # E[3 + 2 X1 + X2 - X1 X2] per component, using E[X1 X2] = S12 + m1 m2
    out = 0.0
    for w, m, S, _ in spec.components:
        out += w * (3.0 + 2.0 * m[0] + m[1] - (S[0, 1] + m[0] * m[1]))
    return out


def population_ate(case: int, n0: int = N0, n1: int = N1) -> float:
    """Average effect over the population mixing the arms ``n0 : n1``."""
    ctrl, trt = CASES[case]
    return (n0 * _mixture_effect_mean(ctrl) + n1 * _mixture_effect_mean(trt)) / (n0 + n1)


def make_case(case: int, seed: int, n0: int = N0, n1: int = N1,
              noise_is_sd: bool = False) -> Dataset:
    """One dataset of design ``case``; controls come first."""
    if case not in CASES:
        raise InputError(f"unknown case {case!r}")
    ctrl, trt = CASES[case]
    X0 = sample_mixture(ctrl, n0, derive_seed(seed, 0))
    X1 = sample_mixture(trt, n1, derive_seed(seed, 1))
    Y0 = sample_outcomes(X0, 0, derive_seed(seed, 2), noise_is_sd)
    Y1 = sample_outcomes(X1, 1, derive_seed(seed, 3), noise_is_sd)
    X = np.vstack([X0, X1])
    t = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    return Dataset(X, t, np.r_[Y0, Y1], ("x1", "x2"))


@dataclass
class ExperimentRow:
    """Mean absolute errors of one method over replications and bootstrap
    samples. NaN marks a quantity the method does not produce."""

    method: str
    epsilon: float
    ATE_diff: float
    ATT_diff: float
    ATT_sd_diff: float
    replications: int
    seed: int
    failures: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass
class IllustrationRow:
    """Convergence record of a joint three-arm solve."""

    epsilon: float
    divergence: str
    iterations: int
    converged: bool
    marginal_errors: tuple
    seed: int


def _parse_methods(methods):
    out = []
    for m in methods:
        m = m.strip().lower()
        if m in ("ot", "ipw", "unadjusted"):
            out.append((m, None))
        elif m.startswith("knn"):
            try:
                out.append(("knn", int(m[3:].lstrip(":"))))
            except ValueError:
                raise InputError(f"bad method {m!r}") from None
        else:
            raise InputError(f"unknown method {m!r}")
    return out


def _effects_sd(units):
    return float(np.std(units, ddof=1)) if units.shape[0] > 1 else math.nan


def run_case(case: int, methods: Sequence[str] = ("ot", "knn1", "knn3", "ipw", "unadjusted"),
             eps: Sequence[float] = (1e-3,), B: int = 100, replications: int = 1,
             seed: int = 0, divergence: Divergence | None = None,
             tolerance: float = 1e-6, max_iterations: int = 100000,
             drop_threshold: float = DEFAULT_DROP_THRESHOLD,
             noise_is_sd: bool = False, mode: str = "stratified",
             n0: int = N0, n1: int = N1):
    """Bootstrap study of the estimators on a synthetic design.

    For every replication a dataset is drawn; the estimators are then
    evaluated on ``B`` bootstrap samples of it. Per sample the errors are

    * ``|ATE - population ATE|``,
    * ``|ATT - mean effect of the sample's treated units|``,
    * ``|sd of the per-unit treated effects - sd of their true effects|``,

    and each row reports their means over samples and replications. Every
    OT solve on a bootstrap sample is warm-started from the potentials of
    the original dataset.

    Parameters
    ----------
    case : {1, 2}
    methods : sequence of str
        ``ot``, ``knn<k>``, ``ipw`` (Horvitz-Thompson) and ``unadjusted``.
    eps : sequence of float
        Penalties for the OT method.
    B : int
        Bootstrap samples per replication.
    replications : int
        Datasets drawn; replication ``r`` uses seed ``derive_seed(seed, r)``.
    divergence : Divergence, optional
        Marginal penalty for OT, ``kl(1)`` by default.

    Returns
    -------
    list of ExperimentRow
    """
    if case not in CASES:
        raise InputError(f"unknown case {case!r}")
    if B < 1 or replications < 1:
        raise InputError("B and replications must be positive")
    plan = _parse_methods(methods)
    divergence = kl(1.0) if divergence is None else divergence
    truth_ate = population_ate(case, n0, n1)
    keys = []
    for name, k in plan:
        if name == "ot":
            keys += [("ot", e) for e in eps]
        elif name == "knn":
            keys.append((f"knn{k}", math.nan))
        else:
            keys.append((name, math.nan))
    errs = {key: [[], [], []] for key in keys}
    fails = {key: 0 for key in keys}

    for r in range(replications):
        rseed = derive_seed(seed, r)
        data = make_case(case, rseed, n0, n1, noise_is_sd)
        t = data.treatment
        pos = np.empty(data.n, dtype=np.int64)
        for a in (0, 1):
            pos[t == a] = np.arange(np.sum(t == a))
        configs = {e: SinkhornConfig(e, max_iterations, tolerance) for e in eps}
        base = {}
        if any(name == "ot" for name, _ in plan):
            for e in eps:
                _, sols = pairwise_couplings(data, e, divergence, configs[e])
                base[e] = sols[(0, 1)].potentials
        bseed = derive_seed(seed, r, 1)
        for b in range(B):
            idx = resample_indices(t, bseed, b, mode)
            sub = data.subset(idx)
            ts = sub.treatment
            tau = true_effect(sub.covariates[ts == 1])
            truth_att = float(tau.mean())
            truth_sd = _effects_sd(tau)

            def record(key, ate_v, att_v, sd_v):
                e = errs[key]
                e[0].append(abs(ate_v - truth_ate))
                e[1].append(abs(att_v - truth_att))
                e[2].append(abs(sd_v - truth_sd))

            knn_cache = {}
            for name, k in plan:
                try:
                    if name == "ot":
                        for e in eps:
                            init = None
                            if mode == "stratified":
                                i0, i1 = idx[ts == 0], idx[ts == 1]
                                init = {(0, 1): [base[e][0][pos[i0]], base[e][1][pos[i1]]]}
                            try:
                                cp, _ = pairwise_couplings(sub, e, divergence, configs[e],
                                                           init=init)
                                a_est = ate(sub, cp, drop_threshold)
                                t_est = att(sub, cp, drop_threshold=drop_threshold)
                            except OTMatchError as exc:
                                fails[("ot", e)] += 1
                                logger.info("ot eps=%g failed on sample %d: %s", e, b, exc)
                                continue
                            record(("ot", e), a_est.point, t_est.point,
                                   _effects_sd(t_est.units))
                    elif name == "knn":
                        if k not in knn_cache:
                            knn_cache[k] = baselines.knn_estimates(sub, k)
                        a_est, t_est = knn_cache[k]
                        record((f"knn{k}", math.nan), a_est.point, t_est.point,
                               _effects_sd(t_est.units))
                    elif name == "ipw":
                        model = baselines.fit_propensity(sub)
                        a_est, t_est = baselines.ipw_estimates(sub, model, "ht")
                        record(("ipw", math.nan), a_est.point, t_est.point, math.nan)
                    else:
                        u = baselines.unadjusted(sub)
                        record(("unadjusted", math.nan), u, math.nan, math.nan)
                except OTMatchError as exc:
                    key = (f"knn{k}", math.nan) if name == "knn" else (name, math.nan)
                    fails[key] += 1
                    logger.info("%s failed on sample %d: %s", name, b, exc)

    rows = []
    for key in keys:
        e = errs[key]
        means = [float(np.mean(v)) if v else math.nan for v in e]
        rows.append(ExperimentRow(key[0], key[1], *means, replications, int(seed),
                                  fails[key]))
    return rows


def run_illustration(eps: Sequence[float] = (0.1,), seed: int = 0,
                     divergence: Divergence | None = None,
                     tolerance: float = 1e-9, max_iterations: int = 10000,
                     sizes: Sequence[int] = ILLUSTRATION_SIZES):
    """Joint three-arm solve on the Gaussian illustration.

    Returns
    -------
    list of IllustrationRow
        Marginal errors ``max |pi_j gamma - mu_j|`` per arm for each penalty.
    """
    divergence = balanced() if divergence is None else divergence
    ms = [DiscreteMeasure(sample_mixture(spec, n, derive_seed(seed, j)))
          for j, (spec, n) in enumerate(zip(ILLUSTRATION, sizes))]
    C = build_cost(ms)
    rows = []
    for e in eps:
        sol = solve(ms, C, e, divergence, SinkhornConfig(e, max_iterations, tolerance))
        rows.append(IllustrationRow(float(e), str(divergence), sol.iterations,
                                    sol.converged, tuple(sol.marginal_errors), int(seed)))
    return rows
