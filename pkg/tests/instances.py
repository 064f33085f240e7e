"""Shared synthetic instances."""
import numpy as np

from otmatch.measures import Dataset, DiscreteMeasure


def planted_outlier(seed=0):
    """Ten treated points inside the control cloud plus one far outlier."""
    rng = np.random.default_rng(seed)
    controls = rng.uniform(0, 1, (40, 2))
    treated = np.vstack([rng.uniform(0.2, 0.8, (10, 2)), [[10.0, 10.0]]])
    return DiscreteMeasure(treated), DiscreteMeasure(controls)


def overlapped(seed, n0=40, n1=40, d=2):
    """Both arms standard normal; outcomes independent noise."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n0 + n1, d))
    t = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    return Dataset(X, t, rng.normal(size=n0 + n1))


def nn_agreement(seed, eps=1e-3, rho=1e-6):
    """Imputed control outcomes in the small-eps, small-rho regime next to
    1-NN imputation, on treated units with a clear nearest neighbour.

    The conditional weights are proportional to ``exp(-c / eps)`` once the
    potentials are damped away (``rho << eps``), so units whose two nearest
    squared distances differ by more than ``40 eps`` must agree with 1-NN.
    Units whose nearest squared distance exceeds ``0.5`` are skipped because
    their retained mass underflows at this ``eps``.
    """
    from otmatch import baselines, matching
    from otmatch.divergences import kl
    from otmatch.solver import SinkhornConfig

    d = overlapped(seed)
    t = d.treatment
    cp, _ = matching.pairwise_couplings(d, eps, kl(rho), SinkhornConfig(eps, 100000, 1e-12))
    W = matching.conditional_weights(cp[(0, 1)], 1, 0, 0.0)
    imputed, _ = matching.impute_counterfactual(W, d.outcome[t == 0])
    knn = baselines.knn_impute(d, 1)[t == 1]
    X1, X0 = d.covariates[t == 1], d.covariates[t == 0]
    D = np.sort(((X1[:, None] - X0[None]) ** 2).sum(-1), axis=1)
    ok = (D[:, 1] - D[:, 0] > 40 * eps) & (D[:, 0] < 0.5)
    return imputed[ok], knn[ok]
