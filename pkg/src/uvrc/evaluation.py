"""Rate-distortion measurement, envelopes, latent histograms and exports."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .codec import check_scale, encode_latents, scale_compress, scale_decompress
from .images import check_u8
from .model import ModelWeights
from .msssim import ms_ssim

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
CSV_COLUMNS = ("label", "s", "lambda", "bpp", "psnr_db", "ms_ssim", "fingerprint")


def mse_255(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))


def psnr_from_mse(m: float) -> float:
    if m <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0**2 / m))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB on the 8-bit scale, capped at 100 dB for identical images."""
    return psnr_from_mse(mse_255(a, b))


def ms_ssim_u8(a: np.ndarray, b: np.ndarray) -> float:
    return ms_ssim(a.astype(np.float64) / 255.0, b.astype(np.float64) / 255.0)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr_db: float
    ms_ssim: float
    s: float
    fingerprint: int
    lmbda: float


@dataclass
class RDCurve:
    label: str
    points: list = field(default_factory=list)
    dotted: bool = False

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: (p.bpp, -p.psnr_db))


def rd_point(x: np.ndarray, w: ModelWeights, s=1.0) -> RDPoint:
    """Code ``x`` at scale ``s`` and measure bpp from the actual file size."""
    x = check_u8(x)
    f = scale_compress(x, s, w)
    rec = scale_decompress(f, w)
    h, wd = x.shape[:2]
    return RDPoint(
        bpp=8.0 * len(f.to_bytes()) / (h * wd),
        psnr_db=psnr(x, rec),
        ms_ssim=ms_ssim_u8(x, rec),
        s=float(check_scale(s)),
        fingerprint=w.fingerprint,
        lmbda=w.config.lmbda,
    )


def sweep_scales(
    images: Sequence[np.ndarray],
    w: ModelWeights,
    grid: Iterable[float] = DEFAULT_GRID,
    failures: Optional[list] = None,
) -> list[RDPoint]:
    """One averaged RDPoint per scale, sorted by ``s``.

    Per-image failures are logged and appended to ``failures`` as
    ``(image_index, s, exception)``; the remaining images still count.
    """
    if not len(images):
        raise ValueError("no images to sweep")
    out = []
    for s in sorted({float(check_scale(v)) for v in grid}):
        pts = []
        for i, x in enumerate(images):
            try:
                pts.append(rd_point(x, w, s))
            except Exception as exc:  # noqa: BLE001 - partial results by design
                log.warning("image %d failed at s=%g: %s", i, s, exc)
                if failures is not None:
                    failures.append((i, s, exc))
        if not pts:
            continue
        n = len(pts)
        out.append(
            RDPoint(
                bpp=math.fsum(p.bpp for p in pts) / n,
                psnr_db=math.fsum(p.psnr_db for p in pts) / n,
                ms_ssim=math.fsum(p.ms_ssim for p in pts) / n,
                s=s,
                fingerprint=w.fingerprint,
                lmbda=w.config.lmbda,
            )
        )
    return out


def distortion_gap(x: np.ndarray, w: ModelWeights, s) -> tuple[float, float]:
    """``(D at scale s, D at s=1)`` as MSE in 8-bit units."""
    s32 = check_scale(s)
    if s32 >= 1.0:
        raise ValueError("distortion_gap needs s < 1")
    x = check_u8(x)
    d_scaled = mse_255(x, scale_decompress(scale_compress(x, s32, w), w))
    d_base = mse_255(x, scale_decompress(scale_compress(x, 1.0, w), w))
    return d_scaled, d_base


def select_anchor(models: Sequence[ModelWeights], images: Sequence[np.ndarray]) -> ModelWeights:
    """The model with the highest baseline (s=1) bpp on ``images``."""
    best, best_bpp = None, -1.0
    for w in models:
        bpp = sweep_scales(images, w, [1.0])[0].bpp
        if bpp > best_bpp:
            best, best_bpp = w, bpp
    return best


# -- Pareto envelope ----------------------------------------------------------------


def dominates(a: RDPoint, b: RDPoint) -> bool:
    return a.bpp <= b.bpp and a.psnr_db >= b.psnr_db and (a.bpp < b.bpp or a.psnr_db > b.psnr_db)


def pareto_envelope(curves: Sequence[RDCurve], label: str = "envelope") -> RDCurve:
    """Points not dominated by any other point (lower-or-equal rate, higher-or-equal PSNR)."""
    pts = [p for c in curves for p in c.points]
    if not pts:
        raise ValueError("no points to build an envelope from")
    pts.sort(key=lambda p: (p.bpp, -p.psnr_db))
    keep = []
    best = -math.inf
    for p in pts:
        if p.psnr_db > best:
            keep.append(p)
            best = p.psnr_db
    return RDCurve(label, keep, dotted=True)


# -- latent histograms ---------------------------------------------------------------


@dataclass(frozen=True)
class Histogram:
    centers: np.ndarray
    mass: np.ndarray
    s: float = 1.0
    label: str = ""


def symbol_histogram(symbols: np.ndarray, bins: int = 65, s: float = 1.0, label: str = "") -> Histogram:
    """Normalized histogram over integer bins ``-(bins//2) .. bins//2``.

    Symbols outside the range are counted in the edge bins.
    """
    if bins < 1 or bins % 2 == 0:
        raise ValueError("bin count must be odd")
    half = bins // 2
    v = np.clip(np.asarray(symbols, dtype=np.int64).ravel(), -half, half)
    counts = np.bincount(v + half, minlength=bins).astype(np.float64)
    mass = counts / counts.sum() if counts.sum() else counts
    return Histogram(np.arange(-half, half + 1), mass, s, label)


def latent_histogram(x: np.ndarray, w: ModelWeights, s=1.0, bins: int = 65) -> Histogram:
    """Histogram of the coded symbols (``round(y - mu)``, or ``round(y)`` when factorized)."""
    lat = encode_latents(x, w, s)
    return symbol_histogram(lat.y_symbols, bins, float(check_scale(s)))


def merge_histograms(hists: Sequence[Histogram]) -> Histogram:
    mass = np.mean([h.mass for h in hists], axis=0)
    return Histogram(hists[0].centers, mass, hists[0].s, hists[0].label)


def dispersion_stats(hist: Histogram) -> tuple[float, float, float]:
    """``(variance, center-bin mass, Laplacian scale b)``.

    ``b`` is the maximum-likelihood Laplacian scale: mean absolute deviation
    about the (weighted) median.
    """
    c = np.asarray(hist.centers, dtype=np.float64)
    m = np.asarray(hist.mass, dtype=np.float64)
    m = m / m.sum()
    mean = float(np.sum(c * m))
    var = float(np.sum(m * (c - mean) ** 2))
    zero = float(m[c == 0].sum())
    cdf = np.cumsum(m)
    median = float(c[np.searchsorted(cdf, 0.5 - 1e-12)])
    b = float(np.sum(m * np.abs(c - median)))
    return var, zero, b


# -- export ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_csv(curves: Sequence[RDCurve], path) -> None:
    """Write curves with the columns ``label,s,lambda,bpp,psnr_db,ms_ssim,fingerprint``."""
    buf = io.StringIO(newline="")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for c in curves:
        for p in c.points:
            wr.writerow(
                [c.label, _fmt(p.s), _fmt(p.lmbda), _fmt(p.bpp), _fmt(p.psnr_db),
                 _fmt(p.ms_ssim), f"{p.fingerprint:016x}"]
            )
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def import_csv(path) -> list[RDCurve]:
    curves: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as f:
        rd = csv.DictReader(f)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {rd.fieldnames}")
        for row in rd:
            curves.setdefault(row["label"], []).append(
                RDPoint(
                    bpp=float(row["bpp"]),
                    psnr_db=float(row["psnr_db"]),
                    ms_ssim=float(row["ms_ssim"]),
                    s=float(row["s"]),
                    fingerprint=int(row["fingerprint"], 16),
                    lmbda=float(row["lambda"]),
                )
            )
    return [RDCurve(k, v) for k, v in curves.items()]


def export_histograms_csv(hists: Sequence[Histogram], path) -> None:
    buf = io.StringIO(newline="")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("label", "s", "symbol", "mass"))
    for h in hists:
        for c, m in zip(h.centers, h.mass):
            wr.writerow([h.label, _fmt(h.s), int(c), _fmt(m)])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def export_plot(curves: Sequence[RDCurve], path, metric: str = "psnr") -> list[str]:
    """Render bpp vs PSNR (or MS-SSIM); dotted curves are drawn dotted.

    Returns the legend labels in drawing order.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    try:
        for c in curves:
            xs = [p.bpp for p in c.points]
            ys = [p.psnr_db if metric == "psnr" else p.ms_ssim for p in c.points]
            ax.plot(xs, ys, linestyle=":" if c.dotted else "-", marker="o", markersize=3,
                    label=c.label)
        ax.set_xlabel("bpp")
        ax.set_ylabel("PSNR (dB)" if metric == "psnr" else "MS-SSIM")
        ax.grid(True, alpha=0.3)
        labels = []
        if curves:
            leg = ax.legend()
            labels = [t.get_text() for t in leg.get_texts()]
        fig.tight_layout()
        fig.savefig(path)
    finally:
        plt.close(fig)
    return labels
