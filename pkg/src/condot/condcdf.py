"""Gaussian-kernel smoothed CDFs of per-covariate response samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Common choices (0.2, 0.3) plus neighbours on either side.
DEFAULT_BANDWIDTHS = (0.05, 0.1, 0.2, 0.3, 0.5)


def std_normal_cdf(z):
    """Standard normal CDF.

    ``scipy.special.ndtr`` is erf/erfc based; its absolute error is below
    1e-15 over the real line (checked against mpmath in the tests).
    """
    return ndtr(z)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


@dataclass(frozen=True)
class ConditionalCdf:
    """Mixture of normal CDFs centred on the observed responses."""

    responses: np.ndarray
    h: float

    def __post_init__(self):
        r = np.asarray(self.responses, dtype=np.float64).ravel()
        if r.size == 0:
            raise ValueError("need at least one response")
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        object.__setattr__(self, "responses", r)

    def eval(self, y):
        y = np.asarray(y, dtype=np.float64)
        z = (y[..., None] - self.responses) / self.h
        return std_normal_cdf(z).mean(axis=-1)

    def eval_derivative(self, y):
        y = np.asarray(y, dtype=np.float64)
        z = (y[..., None] - self.responses) / self.h
        return std_normal_pdf(z).mean(axis=-1) / self.h


class CdfTable:
    """All groups' smoothed CDFs, padded into one matrix for batched lookup.

    Row ``i`` holds the responses of group ``i``; unused slots are masked.
    """

    def __init__(self, response_lists: Sequence[Sequence[float]], h: float):
        if not h > 0:
            raise ValueError(f"bandwidth must be positive, got {h}")
        if len(response_lists) == 0:
            raise ValueError("empty CDF table")
        self.h = float(h)
        width = max(len(r) for r in response_lists)
        n = len(response_lists)
        self.values = np.zeros((n, width))
        self.weights = np.zeros((n, width))
        for i, r in enumerate(response_lists):
            if len(r) == 0:
                raise ValueError(f"group {i} has no responses")
            self.values[i, : len(r)] = r
            self.weights[i, : len(r)] = 1.0 / len(r)

    def __len__(self):
        return self.values.shape[0]

    def cdf(self, i: int) -> ConditionalCdf:
        m = self.weights[i] > 0
        return ConditionalCdf(self.values[i, m], self.h)

    def eval_with_derivative(self, idx, y):
        """Return ``(F(y), F'(y))`` for the groups ``idx`` at points ``y``."""
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise KeyError(f"group index out of range for table of size {len(self)}")
        z = (np.asarray(y, dtype=np.float64)[:, None] - self.values[idx]) / self.h
        w = self.weights[idx]
        F = (std_normal_cdf(z) * w).sum(axis=1)
        f = (std_normal_pdf(z) * w).sum(axis=1) / self.h
        return F, f


def bandwidth_grid(spec=None) -> list[float]:
    """Candidate bandwidths.

    ``spec`` may be ``None`` (the default list), an explicit sequence, or a
    ``("geometric", lo, hi, n)`` tuple for ``n`` log-spaced values with exact
    endpoints.
    """
    if spec is None:
        grid = list(DEFAULT_BANDWIDTHS)
    elif isinstance(spec, tuple) and spec and spec[0] == "geometric":
        _, lo, hi, n = spec
        if lo <= 0 or hi <= 0:
            raise ValueError("geometric grid endpoints must be positive")
        n = int(n)
        if n < 1:
            raise ValueError("geometric grid needs at least one point")
        grid = list(np.geomspace(lo, hi, n)) if n > 1 else [float(lo)]
        grid[0] = float(lo)
        grid[-1] = float(hi) if n > 1 else float(lo)
    else:
        grid = [float(h) for h in spec]
    if not grid:
        raise ValueError("empty bandwidth grid")
    bad = [h for h in grid if not h > 0]
    if bad:
        raise ValueError(f"bandwidths must be positive, got {bad}")
    return [float(h) for h in grid]
