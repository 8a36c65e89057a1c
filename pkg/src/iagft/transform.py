"""Weighted-inner-product block transforms.

Given a variation operator L and positive per-pixel weights q (Q = diag(q)),
the transform basis U solves the generalized symmetric eigenproblem
L u = lambda Q u with U^T Q U = I. The forward transform is F = U^T Q and
the inverse is U, so coefficient error energy equals the q-weighted pixel
error energy (generalized Parseval identity).

With uniform weights the basis coincides with the 2-D DCT up to scale; a
dedicated constructor pins that case to the exact DCT vectors in zigzag
order so the uniform-weight path is bit-compatible with a plain DCT codec.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .graph import Laplacian

EIGENVALUE_CLUSTER_TOL = 1e-8


@dataclass(eq=False)
class InnerProductWeights:
    """Strictly positive diagonal weights defining the inner product."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if q.size == 0:
            raise ValueError("weights must be non-empty")
        if not np.all(q > 0):
            raise ValueError("all inner-product weights must be > 0")
        self.q = q

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(eq=False)
class IAGFTBasis:
    """Generalized Fourier modes U (columns), their eigenvalues, and weights.

    Satisfies U^T diag(q) U = I and L u_k = eigenvalues[k] * diag(q) u_k.
    `dct_aligned` marks bases whose columns are exact scaled DCT vectors in
    zigzag order (uniform weights); those intentionally trade the ascending
    eigenvalue order for positional compatibility with the DCT scan.
    """

    U: np.ndarray
    eigenvalues: np.ndarray
    weights: InnerProductWeights
    dct_aligned: bool = field(default=False)

    @property
    def n(self) -> int:
        return self.U.shape[0]


def compute_iagft(L: Laplacian, w: InnerProductWeights) -> IAGFTBasis:
    """Solve L u = lambda Q u via the symmetric reduction S = Q^-1/2 L Q^-1/2.

    Eigenvalues come out ascending; each column is sign-fixed so its entry
    of largest magnitude (first index on ties) is positive, which makes the
    basis deterministic across platforms.
    """
    if w.n != L.n:
        raise ValueError(f"weight length {w.n} does not match graph size {L.n}")
    s = 1.0 / np.sqrt(w.q)
    S = L.matrix * np.outer(s, s)
    S = (S + S.T) / 2.0
    vals, V = np.linalg.eigh(S)
    U = V * s[:, None]
    U = _fix_signs(U)
    vals = np.where((vals < 0) & (vals > -EIGENVALUE_CLUSTER_TOL), 0.0, vals)
    return IAGFTBasis(U=U, eigenvalues=vals, weights=w)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    lead = np.argmax(np.abs(U), axis=0)
    flip = U[lead, np.arange(U.shape[1])] < 0
    U = U.copy()
    U[:, flip] *= -1.0
    return U


def forward(basis: IAGFTBasis, x: np.ndarray) -> np.ndarray:
    """Apply F = U^T Q. Accepts a vector or a (m, n) batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.n:
        raise ValueError(f"signal length {x.shape[-1]} does not match n={basis.n}")
    return (x * basis.weights.q) @ basis.U


def inverse(basis: IAGFTBasis, c: np.ndarray) -> np.ndarray:
    """Apply F^-1 = U. Accepts a vector or a (m, n) batch of row vectors."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != basis.n:
        raise ValueError(f"coefficient length {c.shape[-1]} does not match n={basis.n}")
    return c @ basis.U.T


def mode_energy_profile(
    basis: IAGFTBasis, region_mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode weighted energy inside a pixel region, plus mode variations.

    Returns (energy, variation) where energy[k] = sum_{i in mask} q_i u_k(i)^2
    and variation[k] is the mode's eigenvalue u_k^T L u_k. With the full mask
    every energy is 1 by the unit-Q-norm constraint.
    """
    mask = np.asarray(region_mask, dtype=bool).reshape(-1)
    if mask.size != basis.n:
        raise ValueError(f"mask length {mask.size} does not match n={basis.n}")
    qU2 = basis.weights.q[:, None] * basis.U**2
    energy = qU2[mask].sum(axis=0)
    return energy, basis.eigenvalues.copy()


# ---------------------------------------------------------------------------
# DCT special case
# ---------------------------------------------------------------------------


def zigzag_order(rows: int, cols: int) -> np.ndarray:
    """Scan-position -> raster-index permutation of the JPEG zigzag pattern."""
    order = []
    for d in range(rows + cols - 1):
        if d % 2:  # odd diagonals run top-right to bottom-left
            rng = range(max(0, d - cols + 1), min(d, rows - 1) + 1)
        else:
            rng = range(min(d, rows - 1), max(0, d - cols + 1) - 1, -1)
        for r in rng:
            order.append(r * cols + (d - r))
    return np.asarray(order, dtype=np.int64)


def dct_basis_2d(rows: int, cols: int) -> np.ndarray:
    """Orthonormal 2-D DCT-II basis vectors as columns, raster frequency order.

    Column p*cols + r holds the separable mode with vertical frequency p and
    horizontal frequency r, flattened in pixel raster order.
    """
    Dr = scipy.fft.dct(np.eye(rows), axis=0, norm="ortho")
    Dc = scipy.fft.dct(np.eye(cols), axis=0, norm="ortho")
    # kron gives column (p*cols + r) = outer(Dr[p], Dc[r]) flattened
    return np.kron(Dr, Dc).T


def grid_dct_eigenvalues(rows: int, cols: int) -> np.ndarray:
    """Grid-Laplacian eigenvalue of each DCT mode, raster frequency order."""
    p = 2.0 - 2.0 * np.cos(np.pi * np.arange(rows) / rows)
    r = 2.0 - 2.0 * np.cos(np.pi * np.arange(cols) / cols)
    return (p[:, None] + r[None, :]).reshape(-1)


def dct_aligned_basis(weight_value: float, rows: int = 8, cols: int = 8) -> IAGFTBasis:
    """Uniform-weight basis built directly from scaled DCT vectors.

    For q = c * ones the generalized modes are the DCT vectors divided by
    sqrt(c), and the coefficients are sqrt(c) times the DCT coefficients.
    Columns follow zigzag order so that an identity scan of these modes
    visits coefficients exactly as the DCT baseline's zigzag scan does.
    """
    if weight_value <= 0:
        raise ValueError("uniform weight must be > 0")
    zz = zigzag_order(rows, cols)
    # keep the exact DCT signs: the eigensolver sign convention would flip
    # columns on floating-point ties and break bit-exact DCT compatibility
    V = dct_basis_2d(rows, cols)[:, zz]
    vals = grid_dct_eigenvalues(rows, cols)[zz] / weight_value
    q = np.full(rows * cols, float(weight_value))
    U = V / np.sqrt(weight_value)
    return IAGFTBasis(U=U, eigenvalues=vals, weights=InnerProductWeights(q), dct_aligned=True)


def is_uniform(q: np.ndarray, tol: float = 1e-12) -> bool:
    q = np.asarray(q, dtype=np.float64)
    return bool(np.max(q) - np.min(q) <= tol * max(1.0, np.max(np.abs(q))))


def basis_for_weights(q: np.ndarray, L: Laplacian, rows: int = 8, cols: int = 8) -> IAGFTBasis:
    """Basis for a weight block: DCT-aligned when uniform, eigensolver otherwise."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size == rows * cols and is_uniform(q):
        return dct_aligned_basis(float(q[0]), rows, cols)
    return compute_iagft(L, InnerProductWeights(q))


# ---------------------------------------------------------------------------
# Serialization (cache files, not part of the bitstream)
# ---------------------------------------------------------------------------


def save_basis(basis: IAGFTBasis, path: str) -> None:
    """Write n (u32), eigenvalues, then U column-major, all little-endian f64."""
    n = basis.n
    with open(path, "wb") as f:
        f.write(struct.pack("<I", n))
        f.write(basis.eigenvalues.astype("<f8").tobytes())
        f.write(np.asfortranarray(basis.U.astype("<f8")).tobytes(order="F"))


def load_basis(path: str) -> IAGFTBasis:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise ValueError("truncated basis file")
    (n,) = struct.unpack_from("<I", data, 0)
    need = 4 + 8 * n + 8 * n * n
    if len(data) != need:
        raise ValueError(f"basis file has {len(data)} bytes, expected {need}")
    vals = np.frombuffer(data, dtype="<f8", count=n, offset=4).copy()
    U = (
        np.frombuffer(data, dtype="<f8", count=n * n, offset=4 + 8 * n)
        .reshape(n, n, order="F")
        .copy()
    )
    # U U^T = Q^-1, so the weights are recoverable from the modes alone
    q = 1.0 / np.einsum("ij,ij->i", U, U)
    return IAGFTBasis(U=U, eigenvalues=vals, weights=InnerProductWeights(q))
