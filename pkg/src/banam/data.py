"""Dataset ingestion, standardization, folds, and synthetic generators.

CSV files must be comma-separated with a header row, ``.`` decimals, UTF-8,
and purely numeric cells; missing or unparseable values are rejected rather
than imputed.  All random draws use the counter-based Philox generator
(``numpy.random.Philox``) so fixtures are reproducible across platforms.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConstantColumnWarning,
    InvalidTarget,
    KTooLarge,
    MissingColumn,
    NonBinaryTarget,
    ParseError,
)

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class Standardization:
    """Per-column statistics captured when a training split is standardized.

    Standard deviations are population (1/N) values.  ``target_mean`` and
    ``target_std`` are ``None`` for classification.
    """

    feature_names: list
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float = None
    target_std: float = None
    dropped_columns: list = field(default_factory=list)

    def transform_features(self, x):
        return (np.asarray(x, dtype=np.float64) - self.feature_mean) / self.feature_std

    def inverse_transform_features(self, x):
        return np.asarray(x, dtype=np.float64) * self.feature_std + self.feature_mean

    def transform_target(self, y):
        if self.target_mean is None:
            return np.asarray(y, dtype=np.float64)
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def inverse_transform_target(self, y):
        if self.target_mean is None:
            return np.asarray(y, dtype=np.float64)
        return np.asarray(y, dtype=np.float64) * self.target_std + self.target_mean

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "dropped_columns": list(self.dropped_columns),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature_names=list(d["feature_names"]),
            feature_mean=np.asarray(d["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(d["feature_std"], dtype=np.float64),
            target_mean=d.get("target_mean"),
            target_std=d.get("target_std"),
            dropped_columns=list(d.get("dropped_columns", [])),
        )


@dataclass
class Dataset:
    """Design matrix plus targets; immutable by convention after creation."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list
    task: str
    standardization: Standardization = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"inconsistent shapes X{self.X.shape} y{self.y.shape}")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, indices):
        return replace(self, X=self.X[indices], y=self.y[indices])


@dataclass(frozen=True)
class FoldSpec:
    """Disjoint shuffled folds partitioning ``range(n)``."""

    n: int
    k: int
    seed: int
    folds: tuple

    def split(self, fold):
        """Return (train_indices, test_indices) for one fold."""
        test = self.folds[fold]
        train = np.concatenate([f for i, f in enumerate(self.folds) if i != fold])
        return np.sort(train), np.sort(test)


def _philox(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def load_csv(path, target_column, task):
    """Load a numeric CSV into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    target_column : str
        Name of the target column; remaining columns become features.
    task : {"regression", "classification"}
        Classification targets must be exactly 0 or 1.
    """
    if task not in (REGRESSION, CLASSIFICATION):
        raise InvalidTarget(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", row=0, col=0) from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise MissingColumn(f"target column {target_column!r} not in header {header}")
        t_idx = header.index(target_column)
        rows = []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, found {len(row)}", row=r, col=len(row)
                )
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r}", row=r, col=c) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value {cell!r}", row=r, col=c)
                vals.append(v)
            rows.append(vals)
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    y = data[:, t_idx]
    X = np.delete(data, t_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != t_idx]
    if task == CLASSIFICATION and not np.all(np.isin(y, (0.0, 1.0))):
        bad = sorted(set(y.tolist()) - {0.0, 1.0})
        raise NonBinaryTarget(f"classification target has values {bad}")
    return Dataset(X=X, y=y, feature_names=names, task=task)


def standardize(ds):
    """Standardize features (and target, for regression) to zero mean, unit variance.

    Uses population (1/N) standard deviations.  Constant columns are dropped
    with a :class:`ConstantColumnWarning` and recorded on the returned stats.

    Returns
    -------
    (Dataset, Standardization)
        The standardized dataset (with ``standardization`` set) and its stats.
    """
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0)
    keep = std > 0.0
    dropped = [n for n, k in zip(ds.feature_names, keep) if not k]
    for name in dropped:
        warnings.warn(f"dropping constant column {name!r}", ConstantColumnWarning)
    names = [n for n, k in zip(ds.feature_names, keep) if k]
    stats = Standardization(
        feature_names=names,
        feature_mean=mean[keep],
        feature_std=std[keep],
        target_mean=float(ds.y.mean()) if ds.task == REGRESSION else None,
        target_std=float(ds.y.std()) if ds.task == REGRESSION else None,
        dropped_columns=dropped,
    )
    if ds.task == REGRESSION and not stats.target_std > 0.0:
        raise InvalidTarget("regression target is constant")
    out = Dataset(
        X=stats.transform_features(ds.X[:, keep]),
        y=stats.transform_target(ds.y),
        feature_names=names,
        task=ds.task,
        standardization=stats,
    )
    return out, stats


def apply_standardization(ds, stats):
    """Standardize a held-out split with statistics from the training split."""
    keep = [ds.feature_names.index(n) for n in stats.feature_names]
    return Dataset(
        X=stats.transform_features(ds.X[:, keep]),
        y=stats.transform_target(ds.y),
        feature_names=list(stats.feature_names),
        task=ds.task,
        standardization=stats,
    )


def toy_shape_functions():
    """The four ground-truth shape functions of the additive toy problem."""
    return [
        lambda x: 8.0 * (x - 0.5) ** 2,
        lambda x: 0.1 * np.exp(-8.0 * x + 4.0),
        lambda x: 5.0 * np.exp(-2.0 * (2.0 * x - 1.0) ** 2),
        lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
    ]


def synth_toy(n=1000, seed=0, noise_std=1.0):
    """Additive regression toy data: three informative shapes, one null.

    Inputs are uniform on [0, 1]^4 and targets are the sum of the shape
    functions plus Gaussian noise.

    Returns
    -------
    (Dataset, list of callables)
        The dataset (original units) and the ground-truth shape functions.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _philox(seed)
    X = rng.uniform(size=(n, 4))
    fns = toy_shape_functions()
    y = sum(f(X[:, d]) for d, f in enumerate(fns))
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(n)
    ds = Dataset(X=X, y=y, feature_names=["x1", "x2", "x3", "x4"], task=REGRESSION)
    return ds, fns


@dataclass(frozen=True)
class InteractionTruth:
    """Ground truth for the planted-interaction fixture."""

    pair: tuple            # 0-based interacting feature indices
    additive: callable     # additive part, f(x1)
    interaction: callable  # pair term, 3 * x2 * x3


def synth_interaction(n=2000, seed=0, noise_std=0.5):
    """Regression data with one planted second-order interaction.

    ``y = 8 (x1 - 1/2)^2 + 3 x2 x3 + eps`` with uniform inputs on [0, 1]^4;
    the interacting pair is (1, 2) in 0-based indices.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _philox(seed)
    X = rng.uniform(size=(n, 4))
    f1 = toy_shape_functions()[0]
    y = f1(X[:, 0]) + 3.0 * X[:, 1] * X[:, 2]
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(n)
    ds = Dataset(X=X, y=y, feature_names=["x1", "x2", "x3", "x4"], task=REGRESSION)
    truth = InteractionTruth(
        pair=(1, 2),
        additive=f1,
        interaction=lambda x2, x3: 3.0 * x2 * x3,
    )
    return ds, truth


def kfold(ds, k, seed=0):
    """Shuffled k-fold assignment with fold sizes differing by at most one."""
    n = ds.n_samples if isinstance(ds, Dataset) else int(ds)
    if k < 2:
        raise KTooLarge("need k >= 2")
    if k > n:
        raise KTooLarge(f"k={k} exceeds n={n}")
    perm = _philox(seed).permutation(n)
    folds = tuple(np.sort(f) for f in np.array_split(perm, k))
    return FoldSpec(n=n, k=k, seed=int(seed), folds=folds)
