"""Multi-scale structural similarity (differentiable, torch)."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
_EPS = 1e-8


def n_scales(h: int, w: int, max_scales: int = len(WEIGHTS)) -> int:
    """Scales kept for an HxW input: the coarsest must keep >= WINDOW-1 pixels."""
    side = min(h, w)
    n = 1
    while n < max_scales and side >= (WINDOW - 1) * 2**n:
        n += 1
    return n


def _window(size: int, dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * SIGMA**2))
    return g / g.sum()


def _blur(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    # window truncated to the image side so tiny coarse scales stay defined
    kh = win if x.shape[2] >= win.numel() else _window(x.shape[2], x.dtype)
    kw = win if x.shape[3] >= win.numel() else _window(x.shape[3], x.dtype)
    x = F.conv2d(x, kh.reshape(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return F.conv2d(x, kw.reshape(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)


def _ssim_cs(x, y, win):
    c1, c2 = K1**2, K2**2
    mx, my = _blur(x, win), _blur(y, win)
    sxx = _blur(x * x, win) - mx * mx
    syy = _blur(y * y, win) - my * my
    sxy = _blur(x * y, win) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return (lum * cs).mean(dim=(2, 3)), cs.mean(dim=(2, 3))


def ms_ssim_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-image MS-SSIM for (B, C, H, W) tensors in [0, 1]; returns shape (B,)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    n = n_scales(a.shape[2], a.shape[3])
    weights = torch.tensor(WEIGHTS[:n], dtype=a.dtype)
    weights = weights / weights.sum()
    win = _window(WINDOW, a.dtype)
    cs_terms = []
    for i in range(n):
        ssim, cs = _ssim_cs(a, b, win)
        if i < n - 1:
            cs_terms.append(cs.clamp_min(_EPS) ** weights[i])
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
    val = ssim.clamp_min(_EPS) ** weights[-1]
    for t in cs_terms:
        val = val * t
    return val.mean(dim=1).clamp(0.0, 1.0)


def ms_ssim(a, b) -> float:
    """MS-SSIM between two ImageF arrays (H, W, 3) or same-shape tensors."""
    if not isinstance(a, torch.Tensor):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        a = torch.from_numpy(a.transpose(2, 0, 1).copy())[None]
        b = torch.from_numpy(b.transpose(2, 0, 1).copy())[None]
    elif a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if torch.equal(a, b):
        return 1.0
    with torch.no_grad():
        return float(ms_ssim_torch(a, b).mean())
