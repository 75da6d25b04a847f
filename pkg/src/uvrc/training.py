"""Rate-distortion training: losses, patch sampling, the optimizer loop, gradient check."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import TrainingDivergedError
from .images import list_images, read_image, to_float
from .model import METRICS, CodecModel, ModelConfig, ModelWeights
from .msssim import ms_ssim, ms_ssim_torch

log = logging.getLogger(__name__)

# the four regularization points of the reference experiments, highest rate last
LAMBDA_GRID = (0.003, 0.001, 0.0003, 0.0001)


@dataclass(frozen=True)
class TrainingConfig:
    lmbda: float = 0.003
    metric: str = "mse"
    steps: int = 2000
    batch: int = 16
    patch: int = 32
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float = 1.0
    log_every: int = 1

    def __post_init__(self):
        if self.lmbda < 0:
            raise ValueError("lambda must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.steps < 1 or self.batch < 1 or self.patch < 1:
            raise ValueError("steps, batch and patch must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


class PatchDataset:
    """Images from a folder (PNG/PPM), decoded once and cached as ImageF."""

    def __init__(self, folder=None, patch: int = 32, images=None):
        self.folder = Path(folder) if folder is not None else None
        self.patch = patch
        if images is None:
            paths = list_images(self.folder) if self.folder is not None else []
            if not paths:
                raise ValueError(f"no PNG/PPM images found in {self.folder}")
            images = [read_image(p) for p in paths]
        if not len(images):
            raise ValueError("dataset has no images")
        self.images = [self._prepare(to_float(im)) for im in images]
        # number of valid top-left positions per image
        self.counts = np.array(
            [(im.shape[0] - patch + 1) * (im.shape[1] - patch + 1) for im in self.images]
        )

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        ph = max(0, self.patch - x.shape[0])
        pw = max(0, self.patch - x.shape[1])
        if ph or pw:
            x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge")
        return x

    def __len__(self) -> int:
        return len(self.images)


def sample_patches(data: PatchDataset, n: int, seed) -> np.ndarray:
    """``n`` crops, uniform over all valid (image, row, col) positions.

    Returns an array of shape (n, patch, patch, 3) in [0, 1].
    """
    rng = np.random.default_rng(seed)
    p = data.patch
    flat = rng.integers(0, int(data.counts.sum()), size=n)
    edges = np.cumsum(data.counts)
    out = np.empty((n, p, p, 3), dtype=np.float32)
    for i, f in enumerate(flat):
        k = int(np.searchsorted(edges, f, side="right"))
        off = int(f - (edges[k - 1] if k else 0))
        im = data.images[k]
        cols = im.shape[1] - p + 1
        r, c = divmod(off, cols)
        out[i] = im[r : r + p, c : c + p]
    return out


def _batch_tensor(patches: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(patches.transpose(0, 3, 1, 2))).to(dtype)


# -- losses ------------------------------------------------------------------------


def mse(a, b):
    """Mean squared error over all pixels and channels ([0, 1] units)."""
    if isinstance(a, torch.Tensor):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        return ((a - b) ** 2).mean()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def distortion(x, x_tilde, metric: str):
    if metric == "mse":
        return mse(x, x_tilde)
    if isinstance(x, torch.Tensor):
        return 1.0 - ms_ssim_torch(x, x_tilde).mean()
    return 1.0 - ms_ssim(x, x_tilde)


def rd_loss(x, x_tilde, total_bits, cfg: TrainingConfig):
    """D + lambda * R with R in bits per pixel.

    Works on ImageF arrays (single image) or (B, 3, H, W) tensors, where the
    pixel count is B*H*W.
    """
    if isinstance(x, torch.Tensor):
        pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
    else:
        pixels = x.shape[0] * x.shape[1]
    if float(total_bits.detach() if isinstance(total_bits, torch.Tensor) else total_bits) < 0:
        raise ValueError("total_bits must be non-negative")
    d = distortion(x, x_tilde, cfg.metric)
    return d + cfg.lmbda * (total_bits / pixels)


# -- training loop --------------------------------------------------------------------


def _config_for(arch: ModelConfig, cfg: TrainingConfig) -> ModelConfig:
    lam = cfg.lmbda if cfg.lmbda > 0 else arch.lmbda
    return replace(arch, lmbda=lam, distortion_metric=cfg.metric)


def train_model(
    cfg: TrainingConfig,
    data: PatchDataset,
    arch: ModelConfig,
    log_path=None,
    history: Optional[list] = None,
    init: Optional[ModelWeights] = None,
) -> ModelWeights:
    """Minimize the rate-distortion loss with Adam; fully determined by ``cfg.seed``.

    Each row of ``history`` (and of the CSV at ``log_path``) is
    ``(step, loss, D, R_bpp)``.
    """
    if cfg.patch % arch.pad_stride:
        raise ValueError(f"patch {cfg.patch} is not a multiple of {arch.pad_stride}")
    if data.patch != cfg.patch:
        raise ValueError("dataset patch size differs from training config")
    torch.manual_seed(cfg.seed)
    config = _config_for(arch, cfg)
    weights = init if init is not None else ModelWeights.initialize(config, cfg.seed)
    model = weights.to_module()
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rows = history if history is not None else []
    last_good = weights

    for step in range(1, cfg.steps + 1):
        batch = _batch_tensor(sample_patches(data, cfg.batch, (cfg.seed, step)))
        x_tilde, bits, _ = model.forward_train(batch, cfg.seed, step)
        pixels = batch.shape[0] * batch.shape[2] * batch.shape[3]
        d = distortion(batch, x_tilde, cfg.metric)
        r = bits / pixels
        loss = d + cfg.lmbda * r
        if not torch.isfinite(loss):
            log.error("loss became non-finite at step %d", step)
            raise TrainingDivergedError(step, last_good)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
        opt.step()
        if step % cfg.log_every == 0:
            rows.append((step, loss.item(), float(d.detach()), float(r.detach())))
        if step % 500 == 0:
            log.info("step %d loss %.5f D %.5f bpp %.4f", step, float(loss.detach()), float(d.detach()), float(r.detach()))
            last_good = ModelWeights.from_module(model, cfg.seed)

    if log_path is not None:
        write_loss_log(rows, log_path)
    return ModelWeights.from_module(model, cfg.seed)


def write_loss_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "loss", "D", "R_bpp"])
        for step, loss, d, r in rows:
            wr.writerow([step, repr(loss), repr(d), repr(r)])


def read_loss_log(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as f:
        rd = csv.reader(f)
        next(rd)
        return [(int(s), float(l), float(d), float(r)) for s, l, d, r in rd]


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


# -- gradient check ---------------------------------------------------------------------


def gradient_check(
    cfg: TrainingConfig,
    arch: ModelConfig,
    x,
    n_params: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
    weights: Optional[ModelWeights] = None,
    return_details: bool = False,
    floor: float = 1e-6,
):
    """Max relative error between autograd and central differences of rd_loss.

    Runs in float64 with frozen noise. ``x`` is an ImageF or a (B,3,H,W) batch.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    central-difference roundoff (about 1e-11 at eps=1e-5) on near-zero
    gradients from dominating the maximum.
    """
    config = _config_for(arch, cfg)
    w = weights if weights is not None else ModelWeights.initialize(config, seed)
    model = w.to_module(torch.float64)
    if isinstance(x, torch.Tensor):
        xb = x.to(torch.float64)
    else:
        xb = _batch_tensor(np.asarray(x)[None], torch.float64)

    def loss_fn():
        x_tilde, bits, _ = model.forward_train(xb, seed, 0)
        return rd_loss(xb, x_tilde, bits, cfg)

    model.zero_grad()
    loss_fn().backward()
    names = [n for n, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    grads = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for n, p in params.items()}

    rng = np.random.default_rng(seed)
    sizes = np.array([params[n].numel() for n in names])
    picks = rng.choice(int(sizes.sum()), size=min(n_params, int(sizes.sum())), replace=False)
    edges = np.cumsum(sizes)
    errors, details = [], []
    with torch.no_grad():
        for flat in sorted(picks):
            k = int(np.searchsorted(edges, flat, side="right"))
            idx = int(flat - (edges[k - 1] if k else 0))
            p = params[names[k]].view(-1)
            orig = p[idx].item()
            p[idx] = orig + eps
            lp = float(loss_fn())
            p[idx] = orig - eps
            lm = float(loss_fn())
            p[idx] = orig
            num = (lp - lm) / (2 * eps)
            ana = float(grads[names[k]].view(-1)[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            errors.append(err)
            details.append((names[k], idx, ana, num, err))
    worst = max(errors) if errors else 0.0
    if return_details:
        return worst, details, grads
    return worst
