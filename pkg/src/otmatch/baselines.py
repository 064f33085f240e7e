"""
Comparator estimators: nearest-neighbour matching, inverse propensity
weighting and the unadjusted difference in means. All of them take a
binary :class:`~otmatch.measures.Dataset` with arms 0 (control) and 1
(treated).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, NumericalError, SeparationError
from .matching import CausalEstimate
from .measures import Dataset

__all__ = [
    "knn_impute", "knn_estimates", "PropensityModel", "fit_propensity",
    "ipw_estimates", "unadjusted",
]


def _binary(dataset):
    t = dataset.treatment
    if t.max() > 1:
        raise InputError("baselines need a binary treatment")
    if not (np.any(t == 0) and np.any(t == 1)):
        raise InputError("both arms must be non-empty")
    return t


def _neighbours(Xq, Xr, k, block=4_000_000):
    # lowest reference index wins ties because the sort is stable
    out = np.empty((Xq.shape[0], k), dtype=np.int64)
    step = max(1, block // max(1, Xr.size))
    for lo in range(0, Xq.shape[0], step):
        diff = Xq[lo:lo + step, None, :] - Xr[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        out[lo:lo + step] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_impute(dataset: Dataset, k: int = 1, columns=None, arms=(0, 1)) -> np.ndarray:
    """Counterfactual outcome of every unit by ``k``-NN matching.

    Each unit is matched with replacement to its ``k`` nearest units of the
    opposite arm in Euclidean distance over ``columns`` (all covariates by
    default), with uniform weights ``1/k``. Units outside ``arms`` get NaN.
    """
    t = _binary(dataset)
    k = int(k)
    if k < 1:
        raise InputError("k must be a positive integer")
    X = dataset.covariates if columns is None else dataset.select(columns).covariates
    y = dataset.outcome
    out = np.full(dataset.n, np.nan)
    for arm in arms:
        q = t == arm
        r = t == 1 - arm
        if k > r.sum():
            raise InputError(f"k={k} exceeds the size of arm {1 - arm}")
        nb = _neighbours(X[q], X[r], k)
        out[q] = y[r][nb].mean(axis=1)
    return out


def knn_estimates(dataset: Dataset, k: int = 1, columns=None):
    """ATE and ATT of ``k``-NN matching.

    Returns
    -------
    ate, att : CausalEstimate
        The ATT estimate carries the per-unit treated effects in ``units``.
    """
    t = _binary(dataset)
    y = dataset.outcome
    imputed = knn_impute(dataset, k, columns)
    y1 = np.where(t == 1, y, imputed)
    y0 = np.where(t == 0, y, imputed)
    n = tuple(int(v) for v in np.bincount(t, minlength=2))
    effects = (y - imputed)[t == 1]
    return (CausalEstimate("ate", float(np.mean(y1 - y0)), n),
            CausalEstimate("att:1", float(effects.mean()), n, units=effects))


@dataclass(frozen=True)
class PropensityModel:
    """Logistic model ``P(T=1 | x) = expit(b_0 + x b)``."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    columns: tuple = ()

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        eta = self.coefficients[0] + X @ self.coefficients[1:]
        return _expit(eta)


def _expit(eta):
    return np.where(eta >= 0, 1.0 / (1.0 + np.exp(-np.abs(eta))),
                    np.exp(-np.abs(eta)) / (1.0 + np.exp(-np.abs(eta))))


def _loglik(beta, Z, t, ridge):
    eta = Z @ beta
    ll = np.sum(t * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * ridge * np.sum(beta[1:] ** 2)


def fit_propensity(dataset: Dataset, columns=None, ridge: float = 0.0,
                   tol: float = 1e-8, max_iter: int = 100) -> PropensityModel:
    """Maximum-likelihood logistic regression of treatment on covariates.

    Newton iterations with step halving; stops when the sup-norm of the
    score divided by ``n`` falls below ``tol``. A positive ``ridge`` adds
    ``ridge / 2 * |b|^2`` on the slopes, which keeps the fit finite under
    separation.

    Raises
    ------
    SeparationError
        If fitted probabilities reach 0 or 1 within 1e-10 without a ridge.
    """
    t = _binary(dataset).astype(float)
    X = dataset.covariates if columns is None else dataset.select(columns).covariates
    n = X.shape[0]
    Z = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise InputError("design matrix is rank deficient")
    pen = np.full(Z.shape[1], ridge)
    pen[0] = 0.0
    beta = np.zeros(Z.shape[1])
    beta[0] = np.log(t.mean() / (1.0 - t.mean()))
    ll = _loglik(beta, Z, t, ridge)
    converged = False
    for it in range(1, max_iter + 1):
        p = _expit(Z @ beta)
        score = Z.T @ (t - p) - pen * beta
        if np.abs(score).max() / n < tol:
            converged = True
            it -= 1
            break
        if ridge == 0.0 and (np.any(p < 1e-10) or np.any(p > 1 - 1e-10)):
            raise SeparationError("perfect separation in the propensity model; "
                                  "enable a ridge penalty")
        H = (Z * (p * (1.0 - p))[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Hessian in the propensity fit") from None
        s = 1.0
        while True:
            cand = beta + s * step
            ll_new = _loglik(cand, Z, t, ridge)
            if ll_new >= ll - 1e-12 * abs(ll) or s < 1e-10:
                break
            s *= 0.5
        beta, ll = cand, ll_new
    p = _expit(Z @ beta)
    if ridge == 0.0 and (np.any(p < 1e-10) or np.any(p > 1 - 1e-10)):
        raise SeparationError("perfect separation in the propensity model; "
                              "enable a ridge penalty")
    cols = dataset.columns if columns is None else tuple(columns)
    return PropensityModel(beta, converged, it, cols)


def _style(style):
    s = style.lower().replace("_", "-")
    if s in ("ht", "horvitz-thompson"):
        return "ht"
    if s == "hajek":
        return "hajek"
    raise InputError(f"unknown IPW style {style!r}")


def ipw_estimates(dataset: Dataset, model: PropensityModel | np.ndarray,
                  style: str = "horvitz-thompson"):
    """Inverse propensity weighted ATE and ATT.

    ``model`` is a fitted :class:`PropensityModel` or an array of
    propensities. The Horvitz-Thompson style divides by ``n`` (``n_1`` for
    the ATT); the Hajek style divides each weighted sum by its total weight.
    """
    style = _style(style)
    t = _binary(dataset).astype(float)
    y = dataset.outcome
    if isinstance(model, PropensityModel):
        X = (dataset.covariates if not model.columns or model.columns == dataset.columns
             else dataset.select(model.columns).covariates)
        e = model.predict(X)
    else:
        e = np.asarray(model, dtype=float)
    if e.shape != t.shape:
        raise InputError("propensity length does not match the dataset")
    if np.any(e <= 0) or np.any(e >= 1):
        raise NumericalError("propensity scores must lie strictly inside (0, 1)")
    w1 = t / e
    w0 = (1 - t) / (1 - e)
    wt = (1 - t) * e / (1 - e)
    n, n1 = t.shape[0], t.sum()
    if style == "ht":
        ate_v = float(np.sum(w1 * y - w0 * y) / n)
        att_v = float((np.sum(t * y) - np.sum(wt * y)) / n1)
    else:
        ate_v = float(w1 @ y / w1.sum() - w0 @ y / w0.sum())
        att_v = float(t @ y / n1 - wt @ y / wt.sum())
    counts = (int(n - n1), int(n1))
    return CausalEstimate("ate", ate_v, counts), CausalEstimate("att:1", att_v, counts)


def unadjusted(dataset: Dataset) -> float:
    """Difference of arm means ``mean(Y | T=1) - mean(Y | T=0)``."""
    t = _binary(dataset)
    y = dataset.outcome
    return float(y[t == 1].mean() - y[t == 0].mean())
