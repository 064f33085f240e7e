"""
Brute-force references for the test suite.

Nothing in this module imports ``otmatch`` except :func:`verify_all`, which
compares the references against the main path. Each reference is written
from the defining formula, favouring clarity and precision over speed.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

mp.mp.dps = 40


@dataclass
class OracleReport:
    name: str
    instance: str
    reference: object
    value: object
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation < self.tolerance)


# -- aprox by scalar minimization ---------------------------------------------

def golden_section(func, lo, hi, tol=1e-14):
    """Minimize a unimodal function on ``[lo, hi]`` in mpmath precision."""
    invphi = (mp.sqrt(5) - 1) / 2
    a, b = mp.mpf(lo), mp.mpf(hi)
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    return (a + b) / 2


def aprox_oracle(kind, p, eps, rho=1.0, lo=-50.0, hi=50.0):
    """argmin_q eps*exp((p - q)/eps) + phi*(q) for the balanced or KL penalty."""
    p, eps, rho = mp.mpf(p), mp.mpf(eps), mp.mpf(rho)
    if kind == "balanced":
        conj = lambda q: q
    else:
        conj = lambda q: rho * (mp.exp(q / rho) - 1)
    # bracket around the analytic region so the exponential stays representable
    width = max(mp.mpf(1), 40 * eps)
    lo = max(mp.mpf(lo), min(p, 0) - width)
    hi = min(mp.mpf(hi), max(p, 0) + width)
    return float(golden_section(lambda q: eps * mp.exp((p - q) / eps) + conj(q), lo, hi))


# -- exact transport ----------------------------------------------------------

def assignment_oracle(C):
    """Exact OT value between uniform measures of equal size by enumerating
    permutations (the optimum sits on a vertex of the Birkhoff polytope)."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    best = min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return best / n


# -- statistical tests --------------------------------------------------------

def _mean_var(x):
    x = [mp.mpf(float(v)) for v in x]
    m = mp.fsum(x) / len(x)
    return m, mp.fsum((v - m) ** 2 for v in x) / (len(x) - 1), len(x)


def welch_oracle(a, b):
    ma, va, na = _mean_var(a)
    mb, vb, nb = _mean_var(b)
    se2 = va / na + vb / nb
    t = (ma - mb) / mp.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = mp.betainc(df / 2, mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
    return float(t), float(p)


def f_oracle(a, b):
    _, va, na = _mean_var(a)
    _, vb, nb = _mean_var(b)
    r = va / vb
    d1, d2 = mp.mpf(na - 1), mp.mpf(nb - 1)
    cdf = mp.betainc(d1 / 2, d2 / 2, 0, d1 * r / (d1 * r + d2), regularized=True)
    return float(r), float(min(1, 2 * min(cdf, 1 - cdf)))


def ks_oracle(a, b):
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    D = 0.0
    for x in np.concatenate([a, b]):
        fa = np.count_nonzero(a <= x) / a.size
        fb = np.count_nonzero(b <= x) / b.size
        D = max(D, abs(fa - fb))
    ne = a.size * b.size / (a.size + b.size)
    lam = mp.mpf((math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * D)
    if lam == 0:
        return D, 1.0
    total, k = mp.mpf(0), 1
    while True:
        term = 2 * (-1) ** (k - 1) * mp.exp(-2 * k * k * lam * lam)
        total += term
        if abs(term) < mp.mpf("1e-30"):
            break
        k += 1
    return D, float(min(1, max(0, total)))


def betainc_oracle(a, b, x):
    return float(mp.betainc(a, b, 0, x, regularized=True))


# -- logistic regression ------------------------------------------------------

def irls_logistic(X, t, tol=1e-14, max_iter=200):
    """Iteratively reweighted least squares with an intercept column."""
    Z = np.column_stack([np.ones(len(t)), np.asarray(X, float)])
    t = np.asarray(t, float)
    beta = np.zeros(Z.shape[1])
    for _ in range(max_iter):
        eta = Z @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = p * (1 - p)
        z = eta + (t - p) / w
        new = np.linalg.solve(Z.T @ (w[:, None] * Z), Z.T @ (w * z))
        if np.max(np.abs(new - beta)) < tol:
            return new
        beta = new
    return beta


# -- simulation truth ---------------------------------------------------------

CASE_MIXTURES = {
    1: ([(0.5, -1.0, 2.0), (0.5, 0.5, 1.0)], [(0.5, 1.0, 2.0), (0.5, 0.5, 1.0)]),
    2: ([(0.5, -1.0, 2.0), (0.5, 0.5, 1.0)], [(0.5, 1.0, 0.5), (0.5, 0.5, 0.5)]),
}


def monte_carlo_ate(case, draws=10**7, n0=1000, n1=100, seed=2024):
    """Population ATE of a simulation case from ``draws`` covariate draws.

    Each arm is an isotropic two-component mixture ``(weight, mean, var)``;
    the effect is E[3 + 2 X1 + X2 - X1 X2] pooled with arm shares.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    total = 0.0
    for comps, share in zip(CASE_MIXTURES[case], (n0 / (n0 + n1), n1 / (n0 + n1))):
        acc, done, chunk = 0.0, 0, 10**6
        while done < draws:
            m = min(chunk, draws - done)
            pick = rng.random(m) < comps[0][0]
            mean = np.where(pick, comps[0][1], comps[1][1])[:, None]
            sd = np.sqrt(np.where(pick, comps[0][2], comps[1][2]))[:, None]
            X = mean + sd * rng.standard_normal((m, 2))
            acc += np.sum(3 + 2 * X[:, 0] + X[:, 1] - X[:, 0] * X[:, 1])
            done += m
        total += share * acc / draws
    return total


# -- aggregate ----------------------------------------------------------------

def random_cost_instances(seed, count=5, n=5):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        x, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        out.append((x, y, ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)))
    return out


def verify_all(seed=0, budget=1.0):
    """Run every oracle comparison and return one report per check."""
    import otmatch as om
    from otmatch import diagnostics

    reports = []
    grid = np.linspace(-10, 10, 100)
    dev = 0.0
    step = max(1, int(round(1 / budget)))
    for eps in (1e-3, 1e-2, 1e-1, 1.0):
        for p in grid[::step]:
            dev = max(dev, abs(om.aprox(om.kl(1.0), p, eps) - aprox_oracle("kl", p, eps)),
                      abs(om.aprox(om.balanced(), p, eps) - aprox_oracle("balanced", p, eps)))
    reports.append(OracleReport("aprox", "grid p in [-10,10]", None, None, dev, 1e-10))

    for k, (x, y, C) in enumerate(random_cost_instances(seed)):
        ms = [om.DiscreteMeasure(x), om.DiscreteMeasure(y)]
        sol = om.solve(ms, C, 1e-4, config=om.SinkhornConfig(1e-4, 200000, 1e-10))
        val = float(np.sum(sol.coupling.values * C))
        ref = assignment_oracle(C)
        reports.append(OracleReport("entropic-vs-exact", f"5x5 #{k}", ref, val,
                                    abs(val - ref), 5e-3))

    a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
    ref = welch_oracle(a, b)
    val = diagnostics.welch_t(a, b)
    reports.append(OracleReport("welch", "canned 5-point", ref, val,
                                max(abs(ref[0] - val[0]), abs(ref[1] - val[1])), 1e-6))
    return reports
