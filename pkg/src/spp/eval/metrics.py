"""Pixel metrics between predicted and ground-truth frames, plus a plugin registry."""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_IDENTICAL = math.inf
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
K1, K2 = 0.01, 0.03


class ShapeMismatch(ValueError):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    m = mse(a, b)
    if m == 0:
        return PSNR_IDENTICAL
    return float(10 * math.log10(data_range ** 2 / m))


def _ssim_channel(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    blur = lambda img: gaussian_filter(img, SSIM_SIGMA, truncate=SSIM_RADIUS / SSIM_SIGMA, mode="reflect")
    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    r = SSIM_RADIUS
    return float(s[r:-r, r:-r].mean())


def ssim(a, b, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM averaged over valid windows and channels.

    Accepts (H, W) or (H, W, C) arrays.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3 or min(a.shape[:2]) <= 2 * SSIM_RADIUS:
        raise ShapeMismatch(f"ssim needs (H, W[, C]) frames larger than the window, got {a.shape}")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], data_range) for c in range(a.shape[-1])]))


class MetricPlugin(Protocol):
    def __call__(self, predicted: np.ndarray, target: np.ndarray) -> float: ...


_REGISTRY: dict[str, MetricPlugin] = {"mse": mse, "psnr": psnr, "ssim": ssim}


def register_metric(name: str, fn: MetricPlugin, replace: bool = False) -> None:
    """Add a frame-pair metric (e.g. a perceptual score backed by an external network)."""
    if name in _REGISTRY and not replace:
        raise KeyError(f"metric {name!r} already registered")
    _REGISTRY[name] = fn


def unregister_metric(name: str) -> None:
    _REGISTRY.pop(name, None)


def registered_metrics() -> dict[str, MetricPlugin]:
    return dict(_REGISTRY)


def frame_metrics(predicted, target, names=None) -> dict[str, float]:
    reg = _REGISTRY if names is None else {n: _REGISTRY[n] for n in names}
    return {n: float(fn(predicted, target)) for n, fn in sorted(reg.items())}


def finite_or(x: float, cap: float) -> float:
    """Clip an unbounded score (identical-frame PSNR) for aggregation."""
    return cap if math.isinf(x) else x

