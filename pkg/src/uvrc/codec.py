"""Compress/decompress and the inference-time input scaling that varies the rate.

A model trained for one lambda is turned into a variable-rate codec by coding
``s * x`` instead of ``x`` (``0 < s <= 1``, in the normalized domain) and
recovering ``round(255 * x_hat_s / s)`` on the 8-bit grid at the decoder. ``s``
travels in the header.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .bitstream import CompressedFile
from .entropy import gaussian_tables, scale_index
from .errors import CorruptStreamError, ModelMismatchError, ShapeError
from .images import check_u8, pad_to_stride, to_float, unpad
from .model import ModelWeights
from .quantization import round_half_away
from .rangecoder import range_decode, range_encode


def check_scale(s) -> np.float32:
    s32 = np.float32(s)
    if not (np.isfinite(s32) and 0.0 < s32 <= 1.0):
        raise ValueError(f"scale factor must lie in (0, 1], got {s}")
    return s32


@dataclass
class Latents:
    """Quantized latents for one image; ``y_symbols`` are what the coder sees."""

    y: np.ndarray
    y_symbols: np.ndarray
    z_symbols: Optional[np.ndarray]
    mu: Optional[np.ndarray]
    sigma: Optional[np.ndarray]
    padded_shape: tuple


def encode_latents(x: np.ndarray, w: ModelWeights, s=1.0) -> Latents:
    """Analysis side of the codec for ImageU8 ``x`` scaled by ``s``."""
    s32 = check_scale(s)
    xf = to_float(check_u8(x)) * s32
    xp, _ = pad_to_stride(xf, w.config.pad_stride)
    model = w.module
    with torch.no_grad():
        t = torch.from_numpy(np.ascontiguousarray(xp.transpose(2, 0, 1)))[None]
        y = model.analysis(t)
        if not w.config.has_hyperprior:
            sym = round_half_away(y)
            return Latents(y[0].numpy(), sym[0].numpy(), None, None, None, xp.shape[:2])
        z = model.hyper_analysis(y)
        z_sym = round_half_away(z)
        mu, sigma = model.hyper_synthesis(z_sym)
        k = round_half_away(y - mu)
    return Latents(
        y[0].numpy(), k[0].numpy(), z_sym[0].numpy(), mu[0].numpy(), sigma[0].numpy(), xp.shape[:2]
    )


def _channel_tables(tables, shape) -> list:
    c, h, wd = shape
    per = h * wd
    out = []
    for ch in range(c):
        out.extend([tables[ch]] * per)
    return out


def _gaussian_table_list(sigma: np.ndarray) -> list:
    tabs = gaussian_tables()
    return [tabs[i] for i in scale_index(sigma).ravel()]


def _ints(a: np.ndarray) -> np.ndarray:
    return a.astype(np.int64).ravel()


def scale_compress(x: np.ndarray, s, w: ModelWeights) -> CompressedFile:
    """Code ``s * x`` with model ``w``; ``s`` is recorded in the header."""
    s32 = check_scale(s)
    x = check_u8(x)
    h, wd = x.shape[:2]
    if h > 0xFFFF or wd > 0xFFFF:
        raise ShapeError("image dims must fit in 16 bits")
    lat = encode_latents(x, w, s32)
    if w.config.has_hyperprior:
        pz = range_encode(_ints(lat.z_symbols), _channel_tables(w.prior_tables, lat.z_symbols.shape))
        py = range_encode(_ints(lat.y_symbols), _gaussian_table_list(lat.sigma))
    else:
        pz = b""
        py = range_encode(_ints(lat.y_symbols), _channel_tables(w.prior_tables, lat.y_symbols.shape))
    return CompressedFile(
        architecture_id=w.config.architecture_id,
        metric=w.config.distortion_metric,
        fingerprint=w.fingerprint,
        scale=float(s32),
        height=h,
        width=wd,
        payload_z=pz,
        payload_y=py,
    )


def compress(x: np.ndarray, w: ModelWeights) -> CompressedFile:
    return scale_compress(x, 1.0, w)


def decode_image_f(f: CompressedFile, w: ModelWeights) -> np.ndarray:
    """Decode to the reconstruction ``x_hat_s`` in [0, 1] (before rescaling)."""
    if f.fingerprint != w.fingerprint:
        raise ModelMismatchError(
            f"bitstream fingerprint {f.fingerprint:016x} != model {w.fingerprint:016x}"
        )
    cfg = w.config
    if f.architecture_id != cfg.architecture_id:
        raise ModelMismatchError("architecture in header differs from the model")
    ps = cfg.pad_stride
    hp, wp = -(-f.height // ps) * ps, -(-f.width // ps) * ps
    y_shape = (cfg.latent_channels, hp // cfg.stride_y, wp // cfg.stride_y)
    model = w.module
    with torch.no_grad():
        if cfg.has_hyperprior:
            z_shape = (cfg.hyper_channels, hp // cfg.stride_z, wp // cfg.stride_z)
            nz = int(np.prod(z_shape))
            z = range_decode(f.payload_z, _channel_tables(w.prior_tables, z_shape), nz)
            z_hat = torch.tensor(z, dtype=torch.float32).reshape(1, *z_shape)
            mu, sigma = model.hyper_synthesis(z_hat)
            ny = int(np.prod(y_shape))
            k = range_decode(f.payload_y, _gaussian_table_list(sigma[0].numpy()), ny)
            y_hat = torch.tensor(k, dtype=torch.float32).reshape(1, *y_shape) + mu
        else:
            if f.payload_z:
                raise CorruptStreamError("factorized streams carry no z payload")
            ny = int(np.prod(y_shape))
            k = range_decode(f.payload_y, _channel_tables(w.prior_tables, y_shape), ny)
            y_hat = torch.tensor(k, dtype=torch.float32).reshape(1, *y_shape)
        x_hat = model.synthesis(y_hat).clamp(0.0, 1.0)
    return unpad(x_hat[0].permute(1, 2, 0).numpy(), (f.height, f.width))


def scale_decompress(f: CompressedFile, w: ModelWeights) -> np.ndarray:
    """``clamp(round(255 * x_hat_s / s))`` as ImageU8, with ``s`` from the header."""
    x_hat_s = decode_image_f(f, w).astype(np.float64)
    s = float(np.float32(f.scale))
    v = round_half_away(255.0 * x_hat_s / s)
    return np.clip(v, 0, 255).astype(np.uint8)


def decompress(f: CompressedFile, w: ModelWeights) -> np.ndarray:
    return scale_decompress(f, w)


def roundtrip(x: np.ndarray, w: ModelWeights, s=1.0):
    """Compress and decompress; returns ``(reconstruction, file)``."""
    f = scale_compress(x, s, w)
    return scale_decompress(f, w), f
