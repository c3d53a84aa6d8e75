"""Point sampling and train-time jitter."""

import numpy as np

from ..geom import as_cloud


def sample_points(cloud, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly sample exactly n points.

    Without replacement when the cloud has at least n points, with
    replacement otherwise (small clouds get repeated points).
    """
    pts = as_cloud(cloud, min_points=1)
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    idx = rng.choice(len(pts), size=n, replace=len(pts) < n)
    return pts[idx]


def augment(cloud, rng: np.random.Generator, sigma: float = 0.01,
            clip: float = 0.05) -> np.ndarray:
    """Per-point per-coordinate Gaussian jitter, clipped to [-clip, clip]."""
    pts = np.asarray(cloud, dtype=np.float64)
    if sigma < 0.0 or clip < 0.0:
        raise ValueError("sigma and clip must be non-negative")
    if sigma == 0.0:
        return pts.copy()
    noise = np.clip(rng.normal(0.0, sigma, pts.shape), -clip, clip)
    return pts + noise
