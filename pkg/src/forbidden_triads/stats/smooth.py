"""Epanechnikov kernel density and lowess."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np


def epanechnikov(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1, 0.75 * (1 - u**2), 0.0)


def normal_scale_bandwidth(values: np.ndarray) -> float:
    """Normal-scale rule for the Epanechnikov kernel: 2.34 * s * n^(-1/5).

    ``s`` is the smaller of the sample standard deviation and IQR / 1.349,
    falling back to the standard deviation when the IQR is zero.
    """
    values = np.asarray(values, dtype=float)
    sd = float(np.std(values, ddof=1))
    if sd == 0:
        raise ValueError("bandwidth undefined for zero-variance input")
    q75, q25 = np.percentile(values, [75, 25])
    iqr = (q75 - q25) / 1.349
    spread = min(sd, iqr) if iqr > 0 else sd
    return 2.34 * spread * len(values) ** (-0.2)


class KDE:
    def __init__(self, values: Iterable[float], bandwidth: float | None = None):
        self.values = np.asarray(list(values), dtype=float)
        if len(self.values) < 2:
            raise ValueError("KDE needs at least two values")
        self.bandwidth = normal_scale_bandwidth(self.values) if bandwidth is None else float(bandwidth)
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = (x[:, None] - self.values[None, :]) / self.bandwidth
        return epanechnikov(u).sum(axis=1) / (len(self.values) * self.bandwidth)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.values.min() - self.bandwidth), float(self.values.max() + self.bandwidth)

    def grid(self, n: int = 512) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.support
        x = np.linspace(lo, hi, n)
        return x, self(x)


def kde_epanechnikov(values: Iterable[float], bandwidth: float | None = None) -> KDE:
    return KDE(values, bandwidth)


def lowess(x, y, f: float = 0.5, robust_iterations: int = 0) -> np.ndarray:
    """Cleveland's locally weighted linear smoother, evaluated at each x.

    Each fit uses tricube weights scaled by the distance to the
    ``ceil(f * n)``-th nearest point (counting the point itself). Robustness
    iterations reweight by the bisquare of residuals over six median absolute
    residuals. A neighborhood without spread in x falls back to its weighted
    mean.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y differ in length")
    if n < 3:
        raise ValueError("lowess needs at least three points")
    if not 0 < f <= 1:
        raise ValueError("f must be in (0, 1]")
    r = max(2, math.ceil(f * n))
    h = np.array([np.partition(np.abs(x - xi), r - 1)[r - 1] for xi in x])
    robust = np.ones(n)
    fitted = np.zeros(n)
    for it in range(robust_iterations + 1):
        for i in range(n):
            dist = np.abs(x - x[i])
            if h[i] > 0:
                u = np.clip(dist / h[i], 0.0, 1.0)
                w = (1 - u**3) ** 3
            else:
                w = (dist == 0).astype(float)
            w = w * robust
            sw = w.sum()
            if sw <= 0:
                fitted[i] = y[i]
                continue
            xm = (w @ x) / sw
            ym = (w @ y) / sw
            sxx = w @ (x - xm) ** 2
            if sxx <= 1e-12 * max(1.0, sw * xm * xm):
                fitted[i] = ym
            else:
                slope = (w @ ((x - xm) * (y - ym))) / sxx
                fitted[i] = ym + slope * (x[i] - xm)
        if it == robust_iterations:
            break
        resid = y - fitted
        s = np.median(np.abs(resid))
        if s == 0:
            break
        u = np.clip(resid / (6.0 * s), -1, 1)
        robust = (1 - u**2) ** 2
    return fitted
