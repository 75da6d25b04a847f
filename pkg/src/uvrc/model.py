"""Analysis/synthesis transforms, hyper transforms and the weights container."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .entropy import SIGMA_MIN, FactorizedDensity, bits_tensor, gaussian_likelihood
from .errors import CorruptStreamError, NonFiniteError, ShapeError, UnsupportedArchitectureError
from .quantization import noise_generator, quantize_noise, round_half_away

ARCHITECTURES = ("factorized", "hyperprior", "attention_lite")
METRICS = ("mse", "ms_ssim")
WEIGHTS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    architecture_id: str = "hyperprior"
    latent_channels: int = 64
    hyper_channels: int = 32
    stride_y: int = 16
    stride_z: int = 64
    distortion_metric: str = "mse"
    lmbda: float = 0.003
    hidden_channels: int = 64
    kernel_size: int = 5
    attention_window: int = 4

    def __post_init__(self):
        if self.architecture_id not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture_id!r}")
        if self.distortion_metric not in METRICS:
            raise ValueError(f"unknown metric {self.distortion_metric!r}")
        if self.latent_channels < 1 or self.hyper_channels < 1 or self.hidden_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if not (self.lmbda > 0):
            raise ValueError("lambda must be positive")
        for name in ("stride_y", "stride_z"):
            v = getattr(self, name)
            if v < 2 or v & (v - 1):
                raise ValueError(f"{name} must be a power of two >= 2")
        if self.stride_z % self.stride_y or self.stride_z == self.stride_y:
            raise ValueError("stride_z must be a proper multiple of stride_y")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @property
    def has_hyperprior(self) -> bool:
        return self.architecture_id != "factorized"

    @property
    def pad_stride(self) -> int:
        return self.stride_z if self.has_hyperprior else self.stride_y

    def to_json(self) -> str:
        d = asdict(self)
        d["lambda"] = d.pop("lmbda")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["lmbda"] = d.pop("lambda")
        return cls(**d)


def toy_config(architecture_id="hyperprior", metric="mse", lmbda=0.003, **kw) -> ModelConfig:
    """Desk-scale configuration for 32x32 training patches.

    stride_y=8 keeps a 4x4 latent grid per patch; at stride 16 every latent of
    a patch sits on the border and the model does not transfer to larger images.
    """
    kw.setdefault("stride_y", 8)
    kw.setdefault("stride_z", 32)
    return ModelConfig(architecture_id=architecture_id, distortion_metric=metric, lmbda=lmbda, **kw)


# -- layers -----------------------------------------------------------------------


class GDN(nn.Module):
    """Generalized divisive normalization; ``inverse`` gives the IGDN variant.

    beta and gamma go through softplus so the map is smooth in its parameters.
    """

    def __init__(self, channels: int, inverse: bool = False):
        super().__init__()
        self.inverse = inverse
        self.beta = nn.Parameter(torch.full((channels,), math.log(math.e - 1)))
        g = torch.full((channels, channels), -10.0)
        g.fill_diagonal_(math.log(math.expm1(0.1)))
        self.gamma = nn.Parameter(g)

    def forward(self, x):
        c = x.shape[1]
        beta = F.softplus(self.beta)
        gamma = F.softplus(self.gamma).reshape(c, c, 1, 1)
        norm = torch.sqrt(F.conv2d(x * x, gamma, beta))
        return x * norm if self.inverse else x / norm


class WindowAttention(nn.Module):
    """Single-head self-attention over non-overlapping square windows, residual.

    Grids that are not a multiple of the window are zero-padded; padded keys are
    masked out and padded queries cropped away.
    """

    def __init__(self, channels: int, window: int = 4):
        super().__init__()
        self.window = window
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        ws = self.window
        ph, pw = -h % ws, -w % ws
        q, k, v = self.qkv(x).chunk(3, dim=1)
        valid = torch.ones(1, 1, h, w, dtype=x.dtype, device=x.device)
        if ph or pw:
            q, k, v = (F.pad(t, (0, pw, 0, ph)) for t in (q, k, v))
            valid = F.pad(valid, (0, pw, 0, ph))
        hh, ww = h + ph, w + pw

        def windows(t):
            cc = t.shape[1]
            t = t.reshape(t.shape[0], cc, hh // ws, ws, ww // ws, ws)
            return t.permute(0, 2, 4, 3, 5, 1).reshape(-1, ws * ws, cc)

        qw, kw, vw = windows(q), windows(k), windows(v)
        mask = windows(valid.expand(b, 1, hh, ww))[..., 0] > 0
        logits = qw @ kw.transpose(1, 2) / math.sqrt(c)
        logits = logits.masked_fill(~mask[:, None, :], float("-inf"))
        out = torch.softmax(logits, dim=-1) @ vw
        out = out.reshape(b, hh // ws, ww // ws, ws, ws, c).permute(0, 5, 1, 3, 2, 4)
        out = out.reshape(b, c, hh, ww)[:, :, :h, :w]
        return x + self.proj(out)


def _conv(cin, cout, k, stride=2):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


def _deconv(cin, cout, k, stride=2):
    return nn.ConvTranspose2d(
        cin, cout, k, stride=stride, padding=k // 2, output_padding=stride - 1
    )


def _stages(stride: int) -> int:
    return int(round(math.log2(stride)))


class CodecModel(nn.Module):
    """The transforms g_a, g_s, h_a, h_s plus the factorized prior."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n, m, k = config.hidden_channels, config.latent_channels, config.kernel_size
        ny = _stages(config.stride_y)

        enc = []
        cin = 3
        for i in range(ny):
            cout = m if i == ny - 1 else n
            enc.append(_conv(cin, cout, k))
            if i < ny - 1:
                enc.append(GDN(cout))
            cin = cout
        dec = []
        cin = m
        for i in range(ny):
            cout = 3 if i == ny - 1 else n
            dec.append(_deconv(cin, cout, k))
            if i < ny - 1:
                dec.append(GDN(cout, inverse=True))
            cin = cout
        if config.architecture_id == "attention_lite":
            enc.append(WindowAttention(m, config.attention_window))
            dec.insert(0, WindowAttention(m, config.attention_window))
        self.g_a = nn.Sequential(*enc)
        self.g_s = nn.Sequential(*dec)

        if config.has_hyperprior:
            nz = _stages(config.stride_z // config.stride_y)
            cz = config.hyper_channels
            ha = [nn.Conv2d(m, n, 3, padding=1), nn.GELU()]
            for i in range(nz):
                ha.append(_conv(n, cz if i == nz - 1 else n, k))
                if i < nz - 1:
                    ha.append(nn.GELU())
            hs = []
            cin = cz
            for i in range(nz):
                hs += [_deconv(cin, n, k), nn.GELU()]
                cin = n
            hs.append(nn.Conv2d(n, 2 * m, 3, padding=1))
            self.h_a = nn.Sequential(*ha)
            self.h_s = nn.Sequential(*hs)
            self.prior = FactorizedDensity(cz)
        else:
            self.h_a = None
            self.h_s = None
            self.prior = FactorizedDensity(m)

    def init_weights(self, seed: int) -> None:
        """Fan-in scaled uniform init from a seeded generator."""
        g = torch.Generator()
        g.manual_seed(seed)
        with torch.no_grad():
            for mod in self.modules():
                if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d)):
                    if isinstance(mod, nn.ConvTranspose2d):
                        fan_in = mod.weight.shape[0] * mod.weight[0, 0].numel()
                        fan_in //= mod.stride[0] * mod.stride[1]
                    else:
                        fan_in = mod.weight[0].numel()
                    bound = math.sqrt(3.0 / fan_in)
                    mod.weight.copy_((torch.rand(mod.weight.shape, generator=g) * 2 - 1) * bound)
                    mod.bias.zero_()
            self.prior.reset_biases(g)

    # -- transforms ---------------------------------------------------------------

    def _run(self, seq: nn.Sequential, x, name: str, check: bool):
        for i, layer in enumerate(seq):
            x = layer(x)
            if check and not torch.isfinite(x).all():
                raise NonFiniteError(f"{name}[{i}] {type(layer).__name__}")
        return x

    def analysis(self, x, check=True):
        return self._run(self.g_a, x, "g_a", check)

    def synthesis(self, y_hat, check=True):
        return self._run(self.g_s, y_hat, "g_s", check)

    def hyper_analysis(self, y, check=True):
        self._require_hyper("hyper_analysis")
        return self._run(self.h_a, y, "h_a", check)

    def hyper_synthesis(self, z_hat, check=True):
        self._require_hyper("hyper_synthesis")
        out = self._run(self.h_s, z_hat, "h_s", check)
        mu, raw = out.chunk(2, dim=1)
        return mu, SIGMA_MIN + F.softplus(raw)

    def _require_hyper(self, op):
        if not self.config.has_hyperprior:
            raise UnsupportedArchitectureError(
                f"{op} is not available for the {self.config.architecture_id} architecture"
            )

    def forward_train(self, x: torch.Tensor, seed: int = 0, step: int = 0, mode: str = "noise"):
        """Returns ``(x_tilde, total_bits, parts)`` for a batch ``x`` of shape (B,3,H,W).

        ``mode='noise'`` adds seeded uniform noise (training); ``mode='round'``
        uses the inference quantizers so ``total_bits`` estimates the coded size.
        ``x_tilde`` is not clamped so the loss stays differentiable.
        """
        noisy = mode == "noise"
        y = self.analysis(x)
        parts = {"y": y}
        if self.config.has_hyperprior:
            z = self.hyper_analysis(y)
            z_hat = quantize_noise(z, seed, step, 1) if noisy else round_half_away(z)
            z_lik = self.prior.likelihood(z_hat)
            mu, sigma = self.hyper_synthesis(z_hat)
            if noisy:
                y_hat = quantize_noise(y, seed, step, 0)
                k = y_hat - mu
            else:
                k = round_half_away(y - mu)
                y_hat = k + mu
            y_lik = gaussian_likelihood(k, sigma, check=False)
            bits_z = bits_tensor(z_lik)
            parts.update(z=z, mu=mu, sigma=sigma, z_likelihoods=z_lik)
        else:
            y_hat = quantize_noise(y, seed, step, 0) if noisy else round_half_away(y)
            y_lik = self.prior.likelihood(y_hat)
            bits_z = torch.zeros((), dtype=x.dtype)
        bits_y = bits_tensor(y_lik)
        x_tilde = self.synthesis(y_hat)
        total = bits_y + bits_z
        if not torch.isfinite(total):
            raise NonFiniteError("entropy model", "bit estimate")
        parts.update(y_hat=y_hat, y_likelihoods=y_lik, bits_y=bits_y, bits_z=bits_z)
        return x_tilde, total, parts


# -- immutable weights --------------------------------------------------------------


def _group(name: str) -> str:
    head = name.split(".", 1)[0]
    return {
        "g_a": "encoder",
        "h_a": "encoder",
        "g_s": "decoder",
        "h_s": "decoder",
        "prior": "entropy",
    }[head]


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Read-only parameter arrays plus config; safe to share between threads."""

    config: ModelConfig
    params: Mapping[str, np.ndarray]
    seed: int = 0

    def __post_init__(self):
        frozen = {}
        for name in sorted(self.params):
            a = np.array(self.params[name], dtype="<f4", copy=True)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"parameter {name} has non-finite entries")
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "params", MappingProxyType(frozen))

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelWeights":
        model = CodecModel(config)
        model.init_weights(seed)
        return cls.from_module(model, seed)

    @classmethod
    def from_module(cls, model: CodecModel, seed: int = 0) -> "ModelWeights":
        params = {k: v.detach().cpu().float().numpy() for k, v in model.state_dict().items()}
        return cls(model.config, params, seed)

    @cached_property
    def fingerprint(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        h.update(self.config.to_json().encode())
        h.update(struct.pack("<q", self.seed))
        for name, a in self.params.items():
            h.update(name.encode())
            h.update(struct.pack(f"<{a.ndim}I", *a.shape))
            h.update(a.tobytes())
        return int.from_bytes(h.digest(), "little")

    def group(self, which: str) -> dict:
        return {k: v for k, v in self.params.items() if _group(k) == which}

    @property
    def encoder_params(self) -> dict:
        return self.group("encoder")

    @property
    def decoder_params(self) -> dict:
        return self.group("decoder")

    @property
    def entropy_params(self) -> dict:
        return self.group("entropy")

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.params.values())

    def to_module(self, dtype=torch.float32) -> CodecModel:
        """A fresh, trainable module holding a copy of these weights."""
        model = CodecModel(self.config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.params.items()})
        return model.to(dtype)

    @cached_property
    def module(self) -> CodecModel:
        """Shared inference module (eval mode, gradients off). Do not mutate."""
        model = self.to_module().eval()
        for p in model.parameters():
            p.requires_grad_(False)
        return model

    @cached_property
    def prior_tables(self) -> tuple:
        return tuple(self.module.prior.tables())


def save_weights(w: ModelWeights, path) -> None:
    """Binary layout, little-endian::

        u16 version | u32 len | config JSON (UTF-8, includes seed) | u32 count
        per parameter: u16 name len | name | u8 rank | u32 dims... | f32 data
        u64 fingerprint
    """
    cfg = json.loads(w.config.to_json())
    cfg["seed"] = w.seed
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray(struct.pack("<HI", WEIGHTS_FORMAT_VERSION, len(text)))
    out += text
    out += struct.pack("<I", len(w.params))
    for name, a in w.params.items():
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape)
        out += a.astype("<f4").tobytes()
    out += struct.pack("<Q", w.fingerprint)
    Path(path).write_bytes(bytes(out))


def load_weights(path) -> ModelWeights:
    data = Path(path).read_bytes()
    try:
        version, n = struct.unpack_from("<HI", data, 0)
        if version != WEIGHTS_FORMAT_VERSION:
            raise CorruptStreamError(f"unsupported weights version {version}")
        off = 6
        cfg = json.loads(data[off : off + n].decode("utf-8"))
        off += n
        seed = cfg.pop("seed")
        config = ModelConfig.from_json(json.dumps(cfg))
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        params = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + ln].decode("utf-8")
            off += ln
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            a = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            params[name] = a
        (fp,) = struct.unpack_from("<Q", data, off)
        off += 8
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptStreamError(f"malformed weights file: {exc}") from exc
    if off != len(data):
        raise CorruptStreamError("trailing bytes in weights file")
    w = ModelWeights(config, params, seed)
    if w.fingerprint != fp:
        raise CorruptStreamError("weights fingerprint mismatch")
    return w


# -- array-level operations -------------------------------------------------------


def _image_tensor(x: np.ndarray) -> torch.Tensor:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got {x.shape}")
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None]


def _latent_tensor(t: np.ndarray, channels: int, what: str) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(t, dtype=np.float32))
    if t.ndim != 3 or t.shape[0] != channels:
        raise ShapeError(f"{what} must have shape ({channels}, H, W), got {tuple(t.shape)}")
    return t[None]


def analysis(x: np.ndarray, w: ModelWeights) -> np.ndarray:
    """ImageF (H, W, 3) -> latent y of shape (C_y, H/stride_y, W/stride_y)."""
    s = w.config.stride_y
    if x.shape[0] % s or x.shape[1] % s:
        raise ShapeError(f"image dims {x.shape[:2]} are not multiples of {s}")
    with torch.no_grad():
        return w.module.analysis(_image_tensor(x))[0].numpy()


def synthesis(y_hat: np.ndarray, w: ModelWeights) -> np.ndarray:
    """Latent -> ImageF clamped to [0, 1]."""
    t = _latent_tensor(y_hat, w.config.latent_channels, "latent")
    with torch.no_grad():
        out = w.module.synthesis(t).clamp(0.0, 1.0)
    return out[0].permute(1, 2, 0).numpy()


def hyper_analysis(y: np.ndarray, w: ModelWeights) -> np.ndarray:
    t = _latent_tensor(y, w.config.latent_channels, "latent")
    w.module._require_hyper("hyper_analysis")
    r = w.config.stride_z // w.config.stride_y
    if t.shape[2] % r or t.shape[3] % r:
        raise ShapeError(f"latent grid {tuple(t.shape[2:])} not divisible by {r}")
    with torch.no_grad():
        return w.module.hyper_analysis(t)[0].numpy()


def hyper_synthesis(z_hat: np.ndarray, w: ModelWeights):
    """Hyper-latent -> (mu, sigma), both shaped like y; sigma >= SIGMA_MIN."""
    w.module._require_hyper("hyper_synthesis")
    t = _latent_tensor(z_hat, w.config.hyper_channels, "hyper-latent")
    with torch.no_grad():
        mu, sigma = w.module.hyper_synthesis(t)
    return mu[0].numpy(), sigma[0].numpy()


def forward_train(x, w, seed: int = 0, step: int = 0, mode: str = "noise"):
    """Run the training-time pass on an ImageF or a (B,3,H,W) tensor.

    ``w`` may be :class:`ModelWeights` (no gradients) or a :class:`CodecModel`.
    Returns ``(x_tilde, total_bits)``.
    """
    model = w.module if isinstance(w, ModelWeights) else w
    t = x if isinstance(x, torch.Tensor) else _image_tensor(x)
    s = model.config.pad_stride
    if t.shape[-1] % s or t.shape[-2] % s:
        raise ShapeError(f"input dims {tuple(t.shape[-2:])} are not multiples of {s}")
    t = t.to(next(model.parameters()).dtype)
    if isinstance(w, ModelWeights):
        with torch.no_grad():
            x_tilde, bits, _ = model.forward_train(t, seed, step, mode)
    else:
        x_tilde, bits, _ = model.forward_train(t, seed, step, mode)
    return x_tilde, bits


def estimate_image_bits(x: np.ndarray, w: ModelWeights) -> float:
    """Likelihood-based bit estimate for coding ImageF ``x`` (after padding)."""
    from .images import pad_to_stride

    xp, _ = pad_to_stride(x, w.config.pad_stride)
    _, bits = forward_train(xp, w, mode="round")
    return float(bits)


def parameter_count(config: ModelConfig) -> int:
    return sum(p.numel() for p in CodecModel(config).parameters())


__all__ = [
    "ModelConfig",
    "ModelWeights",
    "CodecModel",
    "toy_config",
    "analysis",
    "synthesis",
    "hyper_analysis",
    "hyper_synthesis",
    "forward_train",
    "estimate_image_bits",
    "save_weights",
    "load_weights",
]
