"""Grouped regression data: CSV ingestion, frequency split, standardization
and synthetic families with exact conditional laws."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats


class DataError(ValueError):
    """Raised for unreadable or malformed datasets."""


@dataclass
class CovariateGroup:
    x: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.responses = np.asarray(self.responses, dtype=np.float64).ravel()
        if self.responses.size < 1:
            raise DataError("a covariate group needs at least one response")

    @property
    def count(self) -> int:
        return int(self.responses.size)


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension z-scoring of covariates plus a scalar response scaling."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def identity(cls, d: int) -> "Normalizer":
        return cls(np.zeros(d), np.ones(d))

    @classmethod
    def fit(cls, groups: Sequence[CovariateGroup], d: int) -> "Normalizer":
        """Covariate moments over distinct groups; response moments over all
        observations. Zero spreads fall back to 1."""
        if not groups:
            return cls.identity(d)
        X = np.stack([g.x for g in groups])
        xm = X.mean(axis=0)
        xs = X.std(axis=0)
        xs = np.where(xs > 0, xs, 1.0)
        ys = np.concatenate([g.responses for g in groups])
        ym = float(ys.mean())
        ysd = float(ys.std())
        return cls(xm, xs, ym, ysd if ysd > 0 else 1.0)

    def covariates(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.x_mean.size:
            raise ValueError(f"covariate dimension {x.shape[-1]} != {self.x_mean.size}")
        return (x - self.x_mean) / self.x_std

    def responses(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def unscale_responses(self, z):
        return np.asarray(z, dtype=np.float64) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": [float(v) for v in self.x_mean],
            "x_std": [float(v) for v in self.x_std],
            "y_mean": float(self.y_mean),
            "y_std": float(self.y_std),
        }

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.array(d["x_mean"], float), np.array(d["x_std"], float),
                   float(d["y_mean"]), float(d["y_std"]))


@dataclass
class Dataset:
    groups: list[CovariateGroup]
    d: int
    normalizer: Normalizer | None = None
    columns: list[str] = field(default_factory=list)
    response_column: str = "y"

    def __post_init__(self):
        if self.normalizer is None:
            self.normalizer = Normalizer.fit(self.groups, self.d)

    def __len__(self):
        return len(self.groups)

    @property
    def n_obs(self) -> int:
        return sum(g.count for g in self.groups)

    @property
    def counts(self) -> np.ndarray:
        return np.array([g.count for g in self.groups], dtype=int)

    @property
    def X(self) -> np.ndarray:
        if not self.groups:
            return np.zeros((0, self.d))
        return np.stack([g.x for g in self.groups])

    def normalized_X(self) -> np.ndarray:
        return self.normalizer.covariates(self.X)

    def pooled_responses(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0)
        return np.concatenate([g.responses for g in self.groups])

    def with_normalizer(self, normalizer: Normalizer) -> "Dataset":
        return replace(self, normalizer=normalizer)


def group_rows(X: np.ndarray, y: np.ndarray) -> list[CovariateGroup]:
    """Merge rows whose raw covariate vectors are bitwise identical.

    Groups are returned in order of first appearance.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    index: dict[bytes, int] = {}
    xs: list[np.ndarray] = []
    ys: list[list[float]] = []
    for row, resp in zip(X, y):
        key = row.tobytes()
        k = index.get(key)
        if k is None:
            index[key] = len(xs)
            xs.append(row.copy())
            ys.append([float(resp)])
        else:
            ys[k].append(float(resp))
    return [CovariateGroup(x, r) for x, r in zip(xs, ys)]


def normalize_covariate(dataset: Dataset, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dataset.d,):
        raise ValueError(f"expected covariate of dimension {dataset.d}, got shape {x.shape}")
    return dataset.normalizer.covariates(x)


# ---------------------------------------------------------------------------
# CSV


def read_table(path, response_column: str = "y") -> tuple[list[str], np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (no header row)") from None
        if response_column not in header:
            raise DataError(f"{path}: response column {response_column!r} not in header {header}")
        ycol = header.index(response_column)
        xcols = [i for i in range(len(header)) if i != ycol]
        rows_x, rows_y = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {header[j]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: non-finite value in column {header[j]!r}")
                vals.append(v)
            rows_x.append([vals[i] for i in xcols])
            rows_y.append(vals[ycol])
    if not rows_y:
        raise DataError(f"{path}: dataset has no rows")
    return [header[i] for i in xcols], np.array(rows_x, dtype=np.float64).reshape(len(rows_y), len(xcols)), np.array(rows_y)


def load_csv(path, response_column: str = "y") -> Dataset:
    columns, X, y = read_table(path, response_column)
    return Dataset(group_rows(X, y), X.shape[1], columns=columns, response_column=response_column)


def save_csv(dataset: Dataset, path):
    """Write one row per observation; floats use ``repr`` (17 significant
    digits at most, round-trips exactly)."""
    cols = dataset.columns or [f"x{k}" for k in range(dataset.d)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*cols, dataset.response_column])
        for g in dataset.groups:
            xs = [repr(float(v)) for v in g.x]
            for r in g.responses:
                w.writerow([*xs, repr(float(r))])


def fingerprint(paths: Iterable) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.name.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# frequency split


@dataclass(frozen=True)
class SplitSpec:
    test_min_freq: int = 30
    val_min_freq: int = 20

    def __post_init__(self):
        if not self.val_min_freq < self.test_min_freq:
            raise ValueError("val_min_freq must be below test_min_freq")


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Assign groups by frequency: ``N > test_min_freq`` to test,
    ``val_min_freq < N <= test_min_freq`` to validation, the rest to train.
    All three share the normalizer fitted on the train part."""
    train, val, test = [], [], []
    for g in dataset.groups:
        if g.count > spec.test_min_freq:
            test.append(g)
        elif g.count > spec.val_min_freq:
            val.append(g)
        else:
            train.append(g)
    norm = Normalizer.fit(train, dataset.d)
    kw = dict(d=dataset.d, normalizer=norm, columns=dataset.columns,
              response_column=dataset.response_column)
    return Dataset(train, **kw), Dataset(val, **kw), Dataset(test, **kw)


# ---------------------------------------------------------------------------
# synthetic families

FAMILIES = ("location-scale-gaussian", "two-component-mixture", "heteroscedastic-sine")

_DEFAULT_PARAMS = {
    # Y | x ~ N(slope * xbar + intercept, (noise + noise_slope * xbar)^2)
    "location-scale-gaussian": {"slope": 2.0, "intercept": 0.0, "noise": 0.3, "noise_slope": 0.0},
    # Y | x ~ w N(-c(x), s^2) + (1 - w) N(c(x), s^2),  c(x) = sep + sep_slope * xbar
    "two-component-mixture": {"weight": 0.5, "sep": 0.5, "sep_slope": 1.0, "scale": 0.25},
    # Y | x ~ N(amplitude * sin(2 pi freq xbar), (base_std + std_slope * xbar)^2)
    "heteroscedastic-sine": {"amplitude": 1.0, "freq": 1.0, "base_std": 0.1, "std_slope": 0.4},
}


@dataclass(frozen=True)
class SyntheticFamily:
    """Covariates are uniform on ``[0, 1]^d``; the conditional law depends on
    ``xbar``, the mean of the coordinates."""

    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    d: int = 1

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown synthetic family {self.name!r}; choose from {FAMILIES}")
        merged = dict(_DEFAULT_PARAMS[self.name])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "seed": self.seed, "d": self.d}

    @classmethod
    def from_dict(cls, d) -> "SyntheticFamily":
        return cls(d["name"], dict(d.get("params", {})), int(d.get("seed", 0)), int(d.get("d", 1)))

    # closed forms -----------------------------------------------------------

    def _xbar(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.d:
            raise ValueError(f"expected covariate of dimension {self.d}, got {x.size}")
        return float(x.mean())

    def _normal_parts(self, x):
        """List of (weight, loc, scale) normal components at covariate x."""
        p, t = self.params, self._xbar(x)
        if self.name == "location-scale-gaussian":
            return [(1.0, p["slope"] * t + p["intercept"], p["noise"] + p["noise_slope"] * t)]
        if self.name == "heteroscedastic-sine":
            return [(1.0, p["amplitude"] * math.sin(2 * math.pi * p["freq"] * t),
                     p["base_std"] + p["std_slope"] * t)]
        c = p["sep"] + p["sep_slope"] * t
        return [(p["weight"], -c, p["scale"]), (1.0 - p["weight"], c, p["scale"])]

    def mean(self, x) -> float:
        return sum(w * m for w, m, _ in self._normal_parts(x))

    def cdf(self, x, y):
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros_like(y)
        for w, m, s in self._normal_parts(x):
            if s > 0:
                out = out + w * stats.norm.cdf(y, loc=m, scale=s)
            else:
                out = out + w * (y >= m)
        return out

    def sample(self, x, n: int, rng: np.random.Generator) -> np.ndarray:
        parts = self._normal_parts(x)
        if len(parts) == 1:
            _, m, s = parts[0]
            return m + s * rng.standard_normal(n)
        w = parts[0][0]
        pick = rng.random(n) < w
        z = rng.standard_normal(n)
        locs = np.where(pick, parts[0][1], parts[1][1])
        scales = np.where(pick, parts[0][2], parts[1][2])
        return locs + scales * z


@dataclass
class SyntheticSplits:
    train: Dataset
    val: Dataset
    test: Dataset
    family: SyntheticFamily


def _distinct_points(rng, n, d, taken: set[bytes]) -> np.ndarray:
    out = []
    while len(out) < n:
        x = rng.random(d)
        key = x.tobytes()
        if key in taken:
            continue
        taken.add(key)
        out.append(x)
    return np.array(out).reshape(n, d)


def synth_generate(
    family: SyntheticFamily,
    n_covariates: int,
    counts: tuple[int, int] = (1, 1),
    n_val: int = 0,
    n_test: int = 0,
    eval_responses: int = 1000,
) -> SyntheticSplits:
    """Draw a reproducible train/val/test triple from ``family``.

    Train covariates get a uniform integer count in ``counts`` (inclusive);
    validation and test covariates are distinct from train and from each
    other and carry ``eval_responses`` draws each.
    """
    if n_covariates < 1:
        raise ValueError("n_covariates must be at least 1")
    lo, hi = int(counts[0]), int(counts[1])
    if not 1 <= lo <= hi:
        raise ValueError(f"bad count range {counts}")
    rng = np.random.default_rng(family.seed)
    taken: set[bytes] = set()
    cols = [f"x{k}" for k in range(family.d)]

    def make(X, ns):
        return [CovariateGroup(x, family.sample(x, int(n), rng)) for x, n in zip(X, ns)]

    Xtr = _distinct_points(rng, n_covariates, family.d, taken)
    ns = rng.integers(lo, hi + 1, size=n_covariates)
    train_groups = make(Xtr, ns)
    norm = Normalizer.fit(train_groups, family.d)
    Xva = _distinct_points(rng, n_val, family.d, taken)
    val_groups = make(Xva, [eval_responses] * n_val)
    Xte = _distinct_points(rng, n_test, family.d, taken)
    test_groups = make(Xte, [eval_responses] * n_test)
    kw = dict(d=family.d, normalizer=norm, columns=cols)
    return SyntheticSplits(Dataset(train_groups, **kw), Dataset(val_groups, **kw),
                           Dataset(test_groups, **kw), family)
