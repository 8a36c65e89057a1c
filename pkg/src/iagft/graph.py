"""Graph variation operators for block transforms.

The codec only ever uses the uniform 4-connected grid Laplacian, but the
type accepts any combinatorial Laplacian so line graphs and custom
topologies can be exercised in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Laplacian:
    """Symmetric combinatorial graph Laplacian (dense, n small)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Laplacian must be square, got shape {m.shape}")
        self.matrix = m

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def grid_laplacian(rows: int, cols: int) -> Laplacian:
    """Laplacian of the `rows` x `cols` 4-connected grid, all edge weights 1.

    Vertices follow the raster order of block pixels (row-major).
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    n = rows * cols
    L = np.zeros((n, n))
    idx = np.arange(n).reshape(rows, cols)
    for a, b in _grid_edges(idx):
        L[a, a] += 1.0
        L[b, b] += 1.0
        L[a, b] -= 1.0
        L[b, a] -= 1.0
    return Laplacian(L)


def _grid_edges(idx: np.ndarray):
    rows, cols = idx.shape
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                yield idx[r, c], idx[r, c + 1]
            if r + 1 < rows:
                yield idx[r, c], idx[r + 1, c]


def quadratic_form(L: Laplacian, x: np.ndarray) -> float:
    """Signal variation x^T L x = sum over edges of w_ij (x_i - x_j)^2."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (L.n,):
        raise ValueError(f"signal length {x.shape} does not match n={L.n}")
    return float(x @ L.matrix @ x)
