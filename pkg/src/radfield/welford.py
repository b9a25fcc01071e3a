"""Streaming mean/variance over arrays of parallel scalar streams.

observe() is the classic single-pass update; merge() is the pairwise
parallel combination.  All functions mutate their first argument set
in place and treat (n, mean, m2) element i as an independent stream.
Population variance is m2/n.
"""
from __future__ import annotations

import numpy as np


def observe(n: np.ndarray, mean: np.ndarray, m2: np.ndarray, x: np.ndarray) -> None:
    n += 1
    delta = x - mean
    mean += delta / n
    m2 += delta * (x - mean)


def merge_into(n_a: np.ndarray, mean_a: np.ndarray, m2_a: np.ndarray,
               n_b: np.ndarray, mean_b: np.ndarray, m2_b: np.ndarray) -> None:
    """Combine stream set B into A.  Exact for n_b = 0 (A unchanged)."""
    n = n_a + n_b
    safe = np.where(n > 0, n, 1).astype(np.float64)
    delta = mean_b - mean_a
    nb_frac = np.where(n > 0, n_b / safe, 0.0)
    mean = mean_a + delta * nb_frac
    m2 = m2_a + m2_b + delta * delta * (n_a * nb_frac)
    n_a[...] = n
    mean_a[...] = mean
    m2_a[...] = m2


def population_variance(n: np.ndarray, m2: np.ndarray) -> np.ndarray:
    return np.where(n > 0, m2 / np.where(n > 0, n, 1), 0.0)
