"""One-dimensional distribution metrics for generated vs. reference samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EmpiricalSample:
    """A nonempty multiset of reals with a cached sorted copy."""

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ValueError("empirical sample must be nonempty")
        self.values = v
        self.sorted = np.sort(v)

    def __len__(self):
        return self.values.size


def _sorted(a) -> np.ndarray:
    if isinstance(a, EmpiricalSample):
        return a.sorted
    return EmpiricalSample(a).sorted


def w2_squared(a, b) -> float:
    """Squared 2-Wasserstein distance between two empirical measures.

    Integrates the squared gap of the two step quantile functions exactly:
    with ``n`` and ``m`` atoms, all breakpoints are multiples of
    ``1 / (n m)``, so the merge is done on integers.
    """
    xa, xb = _sorted(a), _sorted(b)
    n, m = xa.size, xb.size
    if n == m:
        d = xa - xb
        return float(np.mean(d * d))
    brk = np.union1d(np.arange(1, n + 1, dtype=np.int64) * m,
                     np.arange(1, m + 1, dtype=np.int64) * n)
    lo = np.concatenate([[0], brk[:-1]])
    ia = (brk - 1) // m
    ib = (brk - 1) // n
    d = xa[ia] - xb[ib]
    return float(((brk - lo) * d * d).sum() / (n * m))


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| for the right-continuous empirical CDFs."""
    xa, xb = _sorted(a), _sorted(b)
    pts = np.concatenate([xa, xb])
    Fa = np.searchsorted(xa, pts, side="right") / xa.size
    Fb = np.searchsorted(xb, pts, side="right") / xb.size
    return float(np.max(np.abs(Fa - Fb)))


def mse_r2(generated_means, true_means) -> tuple[float, float | None]:
    """MSE between per-covariate means and R^2 against the spread of the true
    means. R^2 is ``None`` with fewer than two covariates or constant truth."""
    g = np.asarray(generated_means, dtype=np.float64)
    t = np.asarray(true_means, dtype=np.float64)
    if g.shape != t.shape or g.ndim != 1:
        raise ValueError("generated and true means must be vectors of equal length")
    if g.size == 0:
        raise ValueError("no covariates")
    mse = float(np.mean((g - t) ** 2))
    if g.size < 2:
        return mse, None
    var = float(np.mean((t - t.mean()) ** 2))
    if var == 0:
        return mse, None
    return mse, 1.0 - mse / var


def lipschitz_scatter(dataset, min_count: int = 18) -> list[tuple[float, float]]:
    """(standardized covariate distance, W2 between response samples) for
    every pair of groups with more than ``min_count`` responses each."""
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    keep = [g for g in dataset.groups if g.count > min_count]
    X = dataset.normalizer.covariates(np.stack([g.x for g in keep])) if keep else None
    samples = [EmpiricalSample(g.responses) for g in keep]
    out = []
    for i in range(len(keep)):
        for j in range(i + 1, len(keep)):
            dist = float(np.linalg.norm(X[i] - X[j]))
            out.append((dist, math.sqrt(w2_squared(samples[i], samples[j]))))
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class CovariateMetrics:
    x: list[float]
    w2_squared: float
    w2: float
    ks: float
    generated_mean: float
    true_mean: float
    n_generated: int
    n_true: int


def _summary(vals) -> dict:
    v = np.asarray(vals, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std())}


@dataclass
class MetricReport:
    per_covariate: list[CovariateMetrics] = field(default_factory=list)

    def aggregate(self) -> dict:
        pc = self.per_covariate
        mse, r2 = mse_r2([c.generated_mean for c in pc], [c.true_mean for c in pc])
        return {
            "w2_squared": _summary([c.w2_squared for c in pc]),
            "w2": _summary([c.w2 for c in pc]),
            "ks": _summary([c.ks for c in pc]),
            "mse": mse,
            "r2": r2,
        }

    def to_json(self) -> dict:
        return {
            "n_covariates": len(self.per_covariate),
            "aggregate": self.aggregate(),
            "per_covariate": [vars(c).copy() for c in self.per_covariate],
        }


def compare(x, generated, truth) -> CovariateMetrics:
    g, t = EmpiricalSample(generated), EmpiricalSample(truth)
    w2sq = w2_squared(g, t)
    return CovariateMetrics(
        x=[float(v) for v in np.ravel(x)],
        w2_squared=w2sq,
        w2=math.sqrt(w2sq),
        ks=ks_statistic(g, t),
        generated_mean=float(g.values.mean()),
        true_mean=float(t.values.mean()),
        n_generated=len(g),
        n_true=len(t),
    )


def kde_curve(samples, grid, h: float) -> np.ndarray:
    """Gaussian KDE density of ``samples`` on ``grid`` (for plotting dumps)."""
    s = np.asarray(samples, dtype=np.float64)
    z = (np.asarray(grid)[:, None] - s[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (s.size * h * math.sqrt(2 * math.pi))
