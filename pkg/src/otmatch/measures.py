"""
Discrete measures, datasets and cost construction.

An arm of a study is represented as a weighted point cloud
(:class:`DiscreteMeasure`); transport costs between arms are dense
matrices (two arms) or tensors (three or more arms).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .exceptions import InputError

__all__ = [
    "DiscreteMeasure",
    "CostSpec",
    "Dataset",
    "standardize",
    "split_by_treatment",
    "build_cost",
    "read_csv_dataset",
    "read_points",
    "load_nsw",
    "NSW_COLUMNS",
    "LALONDE_STANDARDIZED",
]

DEFAULT_MAX_ENTRIES = 10**8

NSW_COLUMNS = (
    "treat", "age", "education", "black", "hispanic",
    "married", "nodegree", "re75", "re78",
)
LALONDE_STANDARDIZED = ("age", "education", "re75")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud.

    Parameters
    ----------
    points : array_like, shape (n, d)
        Support points. A 1-d array is read as ``n`` points in one dimension.
    weights : array_like, shape (n,), optional
        Nonnegative masses. Defaults to the uniform empirical weights ``1/n``.
    """

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError("points must be a non-empty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise InputError("points contain non-finite entries")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise InputError("weights and points have different lengths")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and nonnegative")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class CostSpec:
    """Ground cost between arms.

    ``kind`` is one of ``"sqeuclidean"``, ``"weighted"`` (diagonal weights
    on the squared coordinate differences), ``"barycentric"`` (for three or
    more arms, ``sum_j l_j |x_j - sum_i l_i x_i|^2`` with ``l`` uniform
    unless ``scales`` is given) or ``"custom"`` (``func`` maps a list of
    broadcastable point arrays to costs).
    """

    kind: str = "sqeuclidean"
    scales: Sequence[float] | None = None
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("sqeuclidean", "weighted", "barycentric", "custom"):
            raise InputError(f"unknown cost kind {self.kind!r}")
        if self.kind == "weighted" and self.scales is None:
            raise InputError("weighted cost requires per-coordinate scales")
        if self.kind == "custom" and self.func is None:
            raise InputError("custom cost requires a callable")


@dataclass(frozen=True)
class Dataset:
    """Observational study: covariates, treatment labels and outcomes."""

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    columns: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.asarray(self.treatment)
        if t.dtype.kind == "f":
            if not np.all(t == np.round(t)):
                raise InputError("treatment labels must be integers")
        t = t.astype(np.int64).ravel()
        y = np.asarray(self.outcome, dtype=float).ravel()
        if not (X.shape[0] == t.shape[0] == y.shape[0]):
            raise InputError("covariates, treatment and outcome lengths differ")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains missing or non-finite values")
        if t.size and t.min() < 0:
            raise InputError("treatment labels must be nonnegative")
        cols = tuple(self.columns) if self.columns else tuple(
            f"x{k}" for k in range(X.shape[1]))
        if len(cols) != X.shape[1]:
            raise InputError("column names do not match covariate count")
        for a in (X, t, y):
            a.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.treatment.shape[0]

    @property
    def n_arms(self) -> int:
        return int(self.treatment.max()) + 1

    def arm_sizes(self) -> np.ndarray:
        return np.bincount(self.treatment, minlength=self.n_arms)

    def subset(self, index) -> "Dataset":
        """Rows ``index`` (with repetition allowed) as a new dataset."""
        index = np.asarray(index)
        return Dataset(self.covariates[index], self.treatment[index],
                       self.outcome[index], self.columns)

    def select(self, columns: Sequence[str]) -> "Dataset":
        """Keep only the named covariate columns, in the given order."""
        pos = [self._position(c) for c in columns]
        return Dataset(self.covariates[:, pos], self.treatment, self.outcome,
                       tuple(columns))

    def column(self, name: str) -> np.ndarray:
        return self.covariates[:, self._position(name)]

    def _position(self, name):
        try:
            return self.columns.index(name)
        except ValueError:
            raise InputError(f"unknown column {name!r}") from None


def standardize(dataset: Dataset, columns: Sequence[str]):
    """Z-score the named columns with full-sample mean and sd (ddof=1).

    Returns
    -------
    out : Dataset
    params : dict
        ``{name: (mean, sd)}`` for inverting the transform.
    """
    X = dataset.covariates.copy()
    params = {}
    for name in columns:
        k = dataset._position(name)
        x = X[:, k]
        if x.shape[0] < 2:
            raise InputError(f"column {name!r} needs at least two rows")
        mean = x.mean()
        sd = x.std(ddof=1)
        if not sd > 0:
            raise InputError(f"column {name!r} has zero variance")
        X[:, k] = (x - mean) / sd
        params[name] = (float(mean), float(sd))
    out = Dataset(X, dataset.treatment, dataset.outcome, dataset.columns)
    return out, params


def split_by_treatment(dataset: Dataset, n_arms: int | None = None):
    """One uniform empirical measure (and outcome vector) per arm."""
    J = dataset.n_arms if n_arms is None else int(n_arms)
    if J < 2:
        raise InputError("at least two arms are required")
    if dataset.treatment.max() >= J:
        raise InputError(f"treatment label exceeds declared arm count {J}")
    arms = []
    for j in range(J):
        mask = dataset.treatment == j
        if not mask.any():
            raise InputError(f"empty arm {j}")
        arms.append((DiscreteMeasure(dataset.covariates[mask]),
                     dataset.outcome[mask].copy()))
    return arms


def _pairwise_sq(x, y, scales=None):
    diff = x[:, None, :] - y[None, :, :]
    if scales is not None:
        return np.einsum("ijk,k->ij", diff * diff, np.asarray(scales, float))
    return np.einsum("ijk,ijk->ij", diff, diff)


def build_cost(measures: Sequence[DiscreteMeasure], spec: CostSpec | None = None,
               max_entries: int = DEFAULT_MAX_ENTRIES) -> np.ndarray:
    """Dense cost matrix (two arms) or tensor (three or more arms).

    For more than two arms the squared Euclidean kind is the sum of all
    pairwise squared distances.

    Raises
    ------
    InputError
        On dimension mismatch or when the tensor would exceed
        ``max_entries``; use pairwise solves in that case.
    """
    spec = CostSpec() if spec is None else spec
    if len(measures) < 2:
        raise InputError("at least two measures are required")
    d = measures[0].d
    if any(m.d != d for m in measures):
        raise InputError("measures have different dimensions")
    shape = tuple(m.n for m in measures)
    size = int(np.prod(shape, dtype=np.float64))
    if size > max_entries:
        raise InputError(
            f"cost tensor of {size} entries exceeds the cap of {max_entries}; "
            "use pairwise solves instead of a joint solve")
    J = len(measures)
    if spec.kind == "custom":
        grids = [m.points.reshape((1,) * j + (m.n,) + (1,) * (J - j - 1) + (d,))
                 for j, m in enumerate(measures)]
        C = np.broadcast_to(np.asarray(spec.func(grids), float), shape).copy()
    elif spec.kind == "barycentric":
        lam = (np.full(J, 1.0 / J) if spec.scales is None
               else np.asarray(spec.scales, float))
        grids = [m.points.reshape((1,) * j + (m.n,) + (1,) * (J - j - 1) + (d,))
                 for j, m in enumerate(measures)]
        bary = sum(l * g for l, g in zip(lam, grids))
        C = sum(l * ((g - bary) ** 2).sum(-1) for l, g in zip(lam, grids))
        C = np.broadcast_to(C, shape).copy()
    else:
        scales = spec.scales if spec.kind == "weighted" else None
        C = np.zeros(shape)
        for a in range(J):
            for b in range(a + 1, J):
                D = _pairwise_sq(measures[a].points, measures[b].points, scales)
                idx = [None] * J
                idx[a] = slice(None)
                idx[b] = slice(None)
                C += D[tuple(idx)]
    if not np.all(np.isfinite(C)):
        raise InputError("cost contains non-finite values")
    return np.ascontiguousarray(C)


def read_points(path) -> np.ndarray:
    """Read a headered CSV of numeric columns into an (n, d) array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: expected a header and at least one row")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:] if r], float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_csv_dataset(path, treatment_col: str, outcome_col: str,
                     covariate_cols: Sequence[str] | None = None) -> Dataset:
    """Read a headered CSV into a :class:`Dataset`.

    Covariates default to every column other than the treatment and outcome.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if r]
    for c in (treatment_col, outcome_col):
        if c not in header:
            raise InputError(f"{path}: missing column {c!r}")
    if covariate_cols is None:
        covariate_cols = [h for h in header if h not in (treatment_col, outcome_col)]
    for c in covariate_cols:
        if c not in header:
            raise InputError(f"{path}: missing column {c!r}")
    try:
        table = np.array([[float(v) for v in r] for r in rows], float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    pos = {h: k for k, h in enumerate(header)}
    return Dataset(table[:, [pos[c] for c in covariate_cols]],
                   table[:, pos[treatment_col]], table[:, pos[outcome_col]],
                   tuple(covariate_cols))


def load_nsw(path=None) -> Dataset:
    """Load the NSW experimental sample in the whitespace-separated layout
    ``treat age education black hispanic married nodegree re75 re78``.

    Without ``path`` the bundled copy (722 rows) is used. The outcome is
    ``re78``; the remaining columns become covariates.
    """
    if path is None:
        text = resources.files("otmatch").joinpath("data/nsw.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if lines and not _is_number(lines[0][0]):
        lines = lines[1:]
    if not lines or any(len(r) != len(NSW_COLUMNS) for r in lines):
        raise InputError(f"NSW file must have {len(NSW_COLUMNS)} columns per row")
    try:
        table = np.array(lines, dtype=float)
    except ValueError as exc:
        raise InputError(f"NSW file: {exc}") from None
    return Dataset(table[:, 1:-1], table[:, 0], table[:, -1], NSW_COLUMNS[1:-1])


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
