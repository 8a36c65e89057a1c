"""Entropy-constrained vector quantization of 8x8 weight blocks.

A codebook maps each block of per-pixel weights to one of K codewords
(default 10). Assignment minimizes squared distance plus lambda times the
codeword's bit cost -log2(p), with probabilities taken from training
selection frequencies. The trained codebook is an offline asset embedded in
the codec; the bitstream carries only per-block indices.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .weights import Q_FLOOR_DEFAULT

CODEBOOK_MAGIC = b"IAQB"
CODEBOOK_VERSION = 1
DEFAULT_CODEWORDS = 10
DEFAULT_LAMBDA = 1.0


@dataclass(eq=False)
class Codebook:
    """ECVQ codewords with their training selection probabilities."""

    codewords: np.ndarray  # (K, dim)
    probabilities: np.ndarray  # (K,), sums to 1
    training_costs: list = field(default_factory=list, repr=False)
    reseed_iterations: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.float64)
        p = np.asarray(self.probabilities, dtype=np.float64)
        if cw.ndim != 2 or cw.shape[0] != p.size:
            raise ValueError("codewords and probabilities disagree in K")
        if abs(p.sum() - 1.0) > 1e-9 or np.any(p <= 0):
            raise ValueError("probabilities must be positive and sum to 1")
        self.codewords = cw
        self.probabilities = p

    @property
    def k(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]

    @property
    def bit_costs(self) -> np.ndarray:
        return -np.log2(self.probabilities)


def train_ecvq(
    training_blocks: np.ndarray,
    k: int = DEFAULT_CODEWORDS,
    lam: float = DEFAULT_LAMBDA,
    seed: int = 0,
    q_floor: float = Q_FLOOR_DEFAULT,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> Codebook:
    """Train a K-codeword ECVQ codebook on weight blocks.

    Alternates rate-biased assignment with centroid/probability updates
    until the relative Lagrangian cost change drops below `tol` or
    `max_iter` iterations pass. Cells that empty out are re-seeded from the
    highest-distortion cell (those iterations are recorded, since the
    re-seed can bump the cost). Deterministic for a fixed seed.
    """
    blocks = np.asarray(training_blocks, dtype=np.float64)
    if blocks.ndim != 2:
        raise ValueError("training blocks must be a (N, dim) array")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n = blocks.shape[0]
    if np.unique(blocks, axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct training blocks")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(blocks, k, rng)
    probs = np.full(k, 1.0 / k)

    costs: list[float] = []
    reseeds: list[int] = []
    prev_cost = np.inf
    for it in range(max_iter):
        bits = _safe_bits(probs)
        d2 = _sq_dists(blocks, centroids)
        assign_cost = d2 + lam * bits[None, :]
        labels = np.argmin(assign_cost, axis=1)
        cost = float(assign_cost[np.arange(n), labels].sum())
        costs.append(cost)

        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            reseeds.append(it)
            labels, counts = _reseed_empty(blocks, centroids, labels, counts)

        for j in range(k):
            centroids[j] = blocks[labels == j].mean(axis=0)
        probs = counts / n

        if prev_cost < np.inf and abs(prev_cost - cost) <= tol * max(prev_cost, 1e-30):
            break
        prev_cost = cost

    # settle final assignment and selection frequencies
    d2 = _sq_dists(blocks, centroids)
    labels = np.argmin(d2 + lam * _safe_bits(probs)[None, :], axis=1)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    counts[counts == 0] = 0.5  # keep every codeword addressable
    probs = counts / counts.sum()

    centroids = np.maximum(centroids, q_floor)
    cb = Codebook(codewords=centroids, probabilities=probs)
    cb.training_costs = costs
    cb.reseed_iterations = reseeds
    return cb


def _kmeanspp_init(blocks: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = blocks.shape[0]
    centroids = np.empty((k, blocks.shape[1]))
    centroids[0] = blocks[rng.integers(n)]
    d2 = ((blocks - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = blocks[rng.integers(n)]
            continue
        centroids[j] = blocks[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((blocks - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _safe_bits(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(probs > 0, -np.log2(np.maximum(probs, 1e-300)), np.inf)


def _sq_dists(blocks: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((blocks[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _reseed_empty(blocks, centroids, labels, counts):
    """Move each empty cell's centroid to the worst outlier of the worst cell."""
    k = centroids.shape[0]
    for j in np.flatnonzero(counts == 0):
        per_point = ((blocks - centroids[labels]) ** 2).sum(axis=1)
        cell_distortion = np.bincount(labels, weights=per_point, minlength=k)
        worst = int(np.argmax(cell_distortion))
        members = np.flatnonzero(labels == worst)
        outlier = members[np.argmax(per_point[members])]
        centroids[j] = blocks[outlier]
        labels[outlier] = j
        counts = np.bincount(labels, minlength=k)
    return labels, counts


def assign(cb: Codebook, block: np.ndarray, lam: float = DEFAULT_LAMBDA) -> int:
    """Index minimizing ||block - c_k||^2 + lambda * bits_k (lowest index on ties)."""
    block = np.asarray(block, dtype=np.float64).reshape(-1)
    if block.size != cb.dim:
        raise ValueError(f"block length {block.size} does not match codebook dim {cb.dim}")
    cost = ((cb.codewords - block) ** 2).sum(axis=1) + lam * cb.bit_costs
    return int(np.argmin(cost))


def assign_batch(cb: Codebook, blocks: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    cost = _sq_dists(blocks, cb.codewords) + lam * cb.bit_costs[None, :]
    return np.argmin(cost, axis=1)


def side_info_bits(cb: Codebook, indices) -> float:
    """Ideal-entropy bit count of an index stream: sum of -log2(p_index)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.k):
        raise IndexError(f"codeword index out of range 0..{cb.k - 1}")
    return float(cb.bit_costs[idx].sum())


# ---------------------------------------------------------------------------
# Codebook files
# ---------------------------------------------------------------------------


def _packed_payload(cb: Codebook) -> bytes:
    parts = [struct.pack("<4sBHH", CODEBOOK_MAGIC, CODEBOOK_VERSION, cb.k, cb.dim)]
    for j in range(cb.k):
        parts.append(cb.codewords[j].astype("<f8").tobytes())
        parts.append(struct.pack("<d", cb.probabilities[j]))
    return b"".join(parts)


def save_codebook(cb: Codebook, path: str) -> None:
    with open(path, "wb") as f:
        f.write(_packed_payload(cb))


def load_codebook(path: str) -> Codebook:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 9 or data[:4] != CODEBOOK_MAGIC:
        raise ValueError("not a codebook file")
    version, k, dim = struct.unpack_from("<BHH", data, 4)
    if version != CODEBOOK_VERSION:
        raise ValueError(f"unsupported codebook version {version}")
    need = 9 + k * (dim + 1) * 8
    if len(data) != need:
        raise ValueError(f"codebook file has {len(data)} bytes, expected {need}")
    codewords = np.empty((k, dim))
    probs = np.empty(k)
    off = 9
    for j in range(k):
        codewords[j] = np.frombuffer(data, dtype="<f8", count=dim, offset=off)
        off += dim * 8
        (probs[j],) = struct.unpack_from("<d", data, off)
        off += 8
    return Codebook(codewords=codewords, probabilities=probs)


def codebook_hash(cb: Codebook) -> int:
    """Stable 64-bit identifier of a codebook's contents."""
    digest = hashlib.sha256(_packed_payload(cb)).digest()
    return struct.unpack("<Q", digest[:8])[0]
