"""Two-component PCA for embedding scatter plots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vjepa_fer.errors import DimensionError


@dataclass
class PcaResult:
    coords: np.ndarray          # (N, 2)
    components: np.ndarray      # (2, D), unit rows
    variance: np.ndarray        # (2,) variance of each projected coordinate
    variance_ratio: np.ndarray  # (2,) share of the total variance


def pca2(embeddings) -> PcaResult:
    """Project mean-centred rows onto the top two right singular vectors.

    Each component is sign-fixed so that its first non-negligible loading is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"pca2 expects an (N, D) matrix, got {x.shape}")
    n, d = x.shape
    if d < 2:
        raise DimensionError(f"pca2 needs D ≥ 2, got {d}")
    if n < 2:
        raise DimensionError(f"pca2 needs N ≥ 2 samples, got {n}")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:2].copy()
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], d))])
    for row in comps:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    coords = xc @ comps.T
    var_all = s ** 2 / (n - 1)
    variance = np.zeros(2)
    variance[: min(2, var_all.size)] = var_all[:2]
    total = var_all.sum()
    ratio = variance / total if total > 0 else np.zeros(2)
    return PcaResult(coords, comps, variance, ratio)
