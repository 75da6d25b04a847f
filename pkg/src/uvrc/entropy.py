"""Likelihood models and the coding tables derived from them."""

from __future__ import annotations

import copy
import math
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import ndtr

from .rangecoder import QuantizedCDF, build_cdf_table

SIGMA_MIN = 1e-4
# a 16-bit table codes any in-support symbol in at most 16 bits
LIKELIHOOD_FLOOR = 2.0**-16

SUPPORT_MIN = -127
SUPPORT_MAX = 128

# coding tables: 64 log-spaced scales, picked by nearest log-distance
TABLE_SCALE_MIN = 0.11
TABLE_SCALE_MAX = 64.0
N_SCALES = 64


def _std_cdf(t: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-t / math.sqrt(2.0))


def gaussian_likelihood(k, sigma, check: bool = True):
    """P(round symbol = k) under N(0, sigma), i.e. Phi((k+.5)/s) - Phi((k-.5)/s).

    ``k`` is the mean-shifted symbol ``y_sym - mu`` (any real during training).
    Accepts torch tensors (differentiable) or numpy arrays.
    """
    if isinstance(k, torch.Tensor):
        sigma = torch.as_tensor(sigma, dtype=k.dtype)
        if check and bool((sigma < SIGMA_MIN * (1 - 1e-6)).any()):
            raise ValueError(f"sigma below lower bound {SIGMA_MIN}")
        v = torch.abs(k)
        upper = _std_cdf((0.5 - v) / sigma)
        lower = _std_cdf((-0.5 - v) / sigma)
        return upper - lower
    k = np.asarray(k, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if check and np.any(sigma < SIGMA_MIN * (1 - 1e-6)):
        raise ValueError(f"sigma below lower bound {SIGMA_MIN}")
    v = np.abs(k)
    return ndtr((0.5 - v) / sigma) - ndtr((-0.5 - v) / sigma)


def estimate_bits(likelihoods) -> float:
    """Sum of -log2(p) in bits; raises on p <= 0."""
    if isinstance(likelihoods, torch.Tensor):
        if bool((likelihoods <= 0).any()):
            raise ValueError("likelihoods must be positive")
        return float(-torch.log2(likelihoods.double()).sum())
    p = np.asarray(likelihoods, dtype=np.float64)
    if np.any(p <= 0) or np.any(~np.isfinite(p)):
        raise ValueError("likelihoods must be positive")
    return float(-np.log2(p).sum())


def bits_tensor(likelihoods: torch.Tensor) -> torch.Tensor:
    """Differentiable bit count with the likelihood floored at 2**-16."""
    return -torch.log2(likelihoods.clamp_min(LIKELIHOOD_FLOOR)).sum()


# -- conditional Gaussian tables ------------------------------------------------


def scale_table() -> np.ndarray:
    return np.exp(np.linspace(math.log(TABLE_SCALE_MIN), math.log(TABLE_SCALE_MAX), N_SCALES))


def scale_index(sigma) -> np.ndarray:
    """Index of the table scale nearest to ``sigma`` in log space."""
    lo, hi = math.log(TABLE_SCALE_MIN), math.log(TABLE_SCALE_MAX)
    t = (np.log(np.asarray(sigma, dtype=np.float64)) - lo) / (hi - lo) * (N_SCALES - 1)
    return np.clip(np.floor(t + 0.5), 0, N_SCALES - 1).astype(np.int64)


def support() -> np.ndarray:
    return np.arange(SUPPORT_MIN, SUPPORT_MAX + 1)


@lru_cache(maxsize=1)
def gaussian_tables() -> tuple:
    """One escape-enabled table per entry of :func:`scale_table`."""
    ks = support()
    tables = []
    for s in scale_table():
        pmf = gaussian_likelihood(ks, s, check=False)
        tables.append(build_cdf_table(pmf, SUPPORT_MIN, escape=True))
    return tuple(tables)


# -- learned factorized prior ----------------------------------------------------


class FactorizedDensity(nn.Module):
    """Per-channel learned monotone CDF (stacked affine + tanh-gated units).

    The CDF of channel ``c`` is ``sigmoid(f_c(v))`` with ``f_c`` monotone in ``v``:
    matrices pass through softplus, the gates through tanh.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(filters) + 1):
            init = math.log(math.expm1(1 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nn.Parameter(torch.empty(channels, dims[i + 1], 1)))
            if i < len(filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def reset_biases(self, generator: torch.Generator) -> None:
        with torch.no_grad():
            for b in self.biases:
                b.copy_(torch.rand(b.shape, generator=generator) - 0.5)

    def logits_cdf(self, v: torch.Tensor) -> torch.Tensor:
        """``v``: (C, 1, N) -> (C, 1, N)."""
        h = v
        n = len(self.matrices)
        for i in range(n):
            h = torch.matmul(F.softplus(self.matrices[i]), h) + self.biases[i]
            if i < n - 1:
                h = h + torch.tanh(self.factors[i]) * torch.tanh(h)
        return h

    def likelihood(self, z: torch.Tensor) -> torch.Tensor:
        """P(bin of width 1 centered at z) per element; ``z`` is (B, C, H, W)."""
        b, c, hgt, wid = z.shape
        v = z.permute(1, 0, 2, 3).reshape(c, 1, -1)
        lower = self.logits_cdf(v - 0.5)
        upper = self.logits_cdf(v + 0.5)
        # evaluate on the side of the median where sigmoid is not saturated
        sign = -torch.sign(lower + upper).detach()
        sign = torch.where(sign == 0, torch.ones_like(sign), sign)
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return p.reshape(c, b, hgt, wid).permute(1, 0, 2, 3)

    @torch.no_grad()
    def pmf_table(self) -> np.ndarray:
        """(C, len(support)) float64 PMF over the integer support.

        Tail mass beyond the support is folded into the two edge bins.
        """
        dens = copy.deepcopy(self).double()
        ks = torch.as_tensor(support(), dtype=torch.float64)
        v = ks.reshape(1, 1, -1).expand(self.channels, 1, -1)
        lower = dens.logits_cdf(v - 0.5)
        upper = dens.logits_cdf(v + 0.5)
        lower[..., 0] = -math.inf
        upper[..., -1] = math.inf
        sign = -torch.sign(lower + upper)
        sign = torch.where(sign == 0, torch.ones_like(sign), sign)
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return p.reshape(self.channels, -1).numpy()

    def tables(self) -> list[QuantizedCDF]:
        return [build_cdf_table(row, SUPPORT_MIN, escape=True) for row in self.pmf_table()]
