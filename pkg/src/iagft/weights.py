"""SSIM-aligned per-pixel weights for the weighted-MSE codec.

Under uniform coefficient quantization with step delta, the reconstruction
SSIM at pixel i reduces to q_i / (q_i + gamma_i) with
gamma_i = delta^2 / (12 (2 sigma_i^2 + c2)). Maximizing mean SSIM subject
to the rate proxy sum(q) <= n has the closed-form solution

    q_i = (n + sum(gamma)) * sqrt(gamma_i) / sum(sqrt(gamma)) - gamma_i,

which this module evaluates in O(n), followed by a positivity floor so the
weights always define a valid inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import LocalStatsMap
from .metrics import SSIM_C2

Q_FLOOR_DEFAULT = 0.05


@dataclass(eq=False)
class GammaMap:
    """Per-pixel gamma values coupling quantization step and local variance."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.size == 0:
            raise ValueError("gamma map must be non-empty")
        if not np.all(g > 0):
            raise ValueError("gamma values must be > 0")
        self.gamma = g


@dataclass(eq=False)
class WeightMap:
    """Per-pixel WMSE weights, mean-normalized so they sum to the pixel count."""

    q: np.ndarray


def gamma_map(stats: LocalStatsMap, delta: float, c2: float = SSIM_C2) -> GammaMap:
    """gamma_i = delta^2 / (12 (2 var_i + c2)) elementwise."""
    if delta <= 0:
        raise ValueError("quantization step must be > 0")
    if c2 <= 0:
        raise ValueError("c2 must be > 0")
    return GammaMap(delta**2 / (12.0 * (2.0 * stats.var + c2)))


def optimal_weights(g: GammaMap, q_floor: float = Q_FLOOR_DEFAULT) -> WeightMap:
    """SSIM-optimal weights for a gamma map, floored and renormalized.

    The closed form can go nonpositive when gamma is highly skewed; entries
    are clamped at `q_floor` and the remaining mass rescaled so the total
    stays equal to the pixel count (the rate-proxy constraint).
    """
    gamma = g.gamma.reshape(-1)
    n = gamma.size
    root = np.sqrt(gamma)
    q = (n + gamma.sum()) * root / root.sum() - gamma
    q = _floor_and_renormalize(q, float(n), q_floor)
    return WeightMap(q.reshape(g.gamma.shape))


def _floor_and_renormalize(q: np.ndarray, total: float, q_floor: float) -> np.ndarray:
    if q_floor * q.size >= total:
        raise ValueError("q_floor too large for the requested total mass")
    q = q.copy()
    for _ in range(q.size):
        clamped = q <= q_floor
        q[clamped] = q_floor
        free = ~clamped
        if not np.any(free):
            break
        scale = (total - q_floor * clamped.sum()) / q[free].sum()
        q[free] *= scale
        if scale >= 1.0 or np.all(q[free] > q_floor):
            break
    return q


def weight_curve(
    delta: float,
    var_range: np.ndarray,
    c2: float = SSIM_C2,
    q_floor: float = Q_FLOOR_DEFAULT,
) -> list[tuple[float, float]]:
    """Weight as a function of local variance, for plotting.

    Treats `var_range` as the variance histogram of a synthetic image, runs
    the closed-form solution on it, and returns (variance, q) pairs sorted
    by variance.
    """
    variances = np.asarray(var_range, dtype=np.float64).reshape(-1)
    if variances.size == 0:
        return []
    if np.any(variances < 0):
        raise ValueError("variances must be >= 0")
    stats = LocalStatsMap(mu=np.zeros_like(variances), var=variances)
    wm = optimal_weights(gamma_map(stats, delta, c2), q_floor)
    order = np.argsort(variances, kind="stable")
    return [(float(variances[i]), float(wm.q[i])) for i in order]
