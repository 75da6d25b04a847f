"""Quantizers: additive uniform noise for training, rounding for inference."""

from __future__ import annotations

import enum

import numpy as np
import torch

from .errors import ShapeError


class QuantizerMode(str, enum.Enum):
    NOISE = "noise"
    ROUND = "round"
    MEAN_SHIFT_ROUND = "mean_shift_round"


def round_half_away(t):
    """Round to nearest integer, ties away from zero. Works on numpy and torch."""
    if isinstance(t, torch.Tensor):
        return torch.sign(t) * torch.floor(torch.abs(t) + 0.5)
    t = np.asarray(t)
    return np.sign(t) * np.floor(np.abs(t) + 0.5)


def noise_generator(seed: int, step: int = 0, tensor_id: int = 0) -> torch.Generator:
    """Generator keyed by (global seed, step, tensor id)."""
    key = np.random.SeedSequence([seed, step, tensor_id]).generate_state(2, dtype=np.uint32)
    g = torch.Generator()
    g.manual_seed(int(key[0]) << 32 | int(key[1]))
    return g


def quantize_noise(t: torch.Tensor, seed=0, step: int = 0, tensor_id: int = 0) -> torch.Tensor:
    """``t + u`` with ``u ~ U[-0.5, 0.5)`` i.i.d., reproducible from the seed key.

    ``seed`` may also be a ready ``torch.Generator``.
    """
    g = seed if isinstance(seed, torch.Generator) else noise_generator(seed, step, tensor_id)
    u = torch.rand(t.shape, generator=g, dtype=t.dtype, device=t.device) - 0.5
    return t + u


def quantize_round(t):
    return round_half_away(t)


def quantize_mean_shift(y, mu):
    """``round(y - mu) + mu``; the transmitted symbols are ``round(y - mu)``."""
    if tuple(y.shape) != tuple(mu.shape):
        raise ShapeError(f"shape mismatch: {tuple(y.shape)} vs {tuple(mu.shape)}")
    return round_half_away(y - mu) + mu


def mean_shift_symbols(y, mu):
    if tuple(y.shape) != tuple(mu.shape):
        raise ShapeError(f"shape mismatch: {tuple(y.shape)} vs {tuple(mu.shape)}")
    return round_half_away(y - mu)
