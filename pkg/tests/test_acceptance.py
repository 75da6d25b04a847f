"""Acceptance criteria on desk-scale toy models.

Each test carries ``@pytest.mark.acceptance(n, title)``; the session prints one
PASS/FAIL line per criterion with the measured values.
"""

import math

import numpy as np
import pytest

import toydata
from uvrc.bitstream import HEADER_SIZE, CompressedFile, read_file, write_file
from uvrc.codec import compress, decompress, scale_compress, scale_decompress
from uvrc.errors import CorruptStreamError
from uvrc.evaluation import (
    RDCurve,
    dispersion_stats,
    dominates,
    latent_histogram,
    merge_histograms,
    pareto_envelope,
    sweep_scales,
)
from uvrc.images import to_float
from uvrc.model import estimate_image_bits, load_weights, parameter_count, save_weights, toy_config
from uvrc.rangecoder import build_cdf_table, range_decode, range_encode
from uvrc.training import TrainingConfig, gradient_check

SWEEP = [round(0.1 * i, 1) for i in range(1, 11)]


def inversions(values_by_s, tol, relative):
    """Steps where the value rises as s decreases; ``values_by_s`` is ordered by descending s.

    Returns ``(count, worst magnitude, ok)`` for the "at most one inversion
    below ``tol``" rule.
    """
    worst, count = 0.0, 0
    for hi, lo in zip(values_by_s, values_by_s[1:]):
        if lo > hi:
            count += 1
            worst = max(worst, (lo - hi) / hi if relative else lo - hi)
    return count, worst, count == 0 or (count == 1 and worst < tol)


def _db(ms):
    return -10 * math.log10(max(1.0 - ms, 1e-12))


def check_monotone(points, quality, record_property, name):
    pts = sorted(points, key=lambda p: -p.s)
    bpp = [p.bpp for p in pts]
    q = [quality(p) for p in pts]
    nb, wb, ok_b = inversions(bpp, 0.02, relative=True)
    nq, wq, ok_q = inversions(q, 0.1, relative=False)
    record_property(
        "measured",
        f"{name}: bpp {bpp[0]:.3f}->{bpp[-1]:.3f} ({nb} inversions, worst {wb:.2%}); "
        f"quality {q[0]:.2f}->{q[-1]:.2f} dB ({nq} inversions, worst {wq:.3f} dB)",
    )
    assert ok_b, f"bpp not monotone in s: {bpp}"
    assert ok_q, f"quality not monotone in s: {q}"


@pytest.mark.acceptance(1, "entropy coder exactness")
def test_c1_range_coder(record_property):
    rng = np.random.default_rng(2024)
    worst_overhead = -np.inf
    total = 0
    for trial in range(200):
        m = int(rng.integers(1, 257))
        n = 10**5 if trial % 20 == 0 else int(rng.integers(0, 10**5 + 1))
        pmf = rng.dirichlet(np.full(m, rng.choice([0.05, 0.3, 1.0, 5.0])))
        table = build_cdf_table(pmf, min_sym=-int(rng.integers(0, m)))
        syms = rng.choice(m, size=n, p=pmf) + table.min_sym
        tables = [table] * n
        payload = range_encode(syms, tables)
        assert range_decode(payload, tables, n) == syms.tolist()
        # entropy of the symbols under the quantized table, in bytes
        ideal = -np.log2(table.frequencies[syms - table.min_sym] / 65536.0).sum() / 8
        assert len(payload) <= ideal * 1.01 + 64
        worst_overhead = max(worst_overhead, len(payload) - ideal)
        total += n
    record_property("measured", f"200 trials, {total} symbols, worst excess {worst_overhead:.1f} bytes")


@pytest.mark.acceptance(2, "gradient validity")
def test_c2_gradient_check(record_property):
    arch = toy_config("hyperprior", latent_channels=6, hyper_channels=4, hidden_channels=6)
    assert parameter_count(arch) <= 10**4
    x = np.random.default_rng(0).random((32, 32, 3))
    err = gradient_check(TrainingConfig(lmbda=0.01), arch, x, n_params=300, eps=1e-5)
    record_property("measured", f"{parameter_count(arch)} params, max relative error {err:.2e}")
    assert err < 1e-4


@pytest.mark.acceptance(3, "s=1 identity")
def test_c3_identity(toy_models, record_property):
    w, _ = toy_models.get()
    rng = np.random.default_rng(3)
    for i in range(10):
        x = rng.integers(0, 256, (int(rng.integers(16, 80)), int(rng.integers(16, 80)), 3), dtype=np.uint8)
        a, b = scale_compress(x, 1.0, w), compress(x, w)
        assert a.to_bytes() == b.to_bytes()
        assert np.array_equal(scale_decompress(a, w), decompress(b, w))
    record_property("measured", "10/10 images byte-identical")


@pytest.mark.acceptance(4, "variable-rate mechanism (hyperprior/MSE)")
def test_c4_monotone_hyperprior(toy_models, heldout, record_property):
    w, _ = toy_models.get("hyperprior", "mse", 0.003)
    pts = sweep_scales(heldout, w, SWEEP)
    check_monotone(pts, lambda p: p.psnr_db, record_property, "hyperprior/mse")


@pytest.mark.acceptance(5, "universality across architectures")
def test_c5a_factorized(toy_models, heldout, record_property):
    w, _ = toy_models.get("factorized", "mse", 0.003)
    pts = sweep_scales(heldout, w, SWEEP)
    check_monotone(pts, lambda p: p.psnr_db, record_property, "factorized/mse")


@pytest.mark.acceptance(5, "universality across architectures")
def test_c5b_attention_msssim(toy_models, heldout, record_property):
    w, _ = toy_models.get("attention_lite", "ms_ssim", 0.003)
    pts = sweep_scales(heldout, w, SWEEP)
    check_monotone(pts, lambda p: _db(p.ms_ssim), record_property, "attention_lite/ms_ssim (MS-SSIM dB)")


@pytest.mark.acceptance(6, "rate-range coverage and envelope")
def test_c6_coverage(toy_models, heldout, record_property):
    low, _ = toy_models.get("hyperprior", "mse", 0.003)
    high, _ = toy_models.get("hyperprior", "mse", 0.0001)
    low_pts = sweep_scales(heldout, low, SWEEP)
    high_pts = sweep_scales(heldout, high, SWEEP)
    base_low = next(p for p in low_pts if p.s == 1.0).bpp
    base_high = next(p for p in high_pts if p.s == 1.0).bpp
    reach = min(p.bpp for p in high_pts)
    record_property(
        "measured",
        f"baselines {base_high:.3f} (lambda=1e-4) / {base_low:.3f} (lambda=3e-3) bpp; "
        f"high-rate sweep reaches {reach:.3f} bpp",
    )
    assert base_high > base_low
    assert reach <= base_low
    curves = [RDCurve("lambda=1e-4", high_pts), RDCurve("lambda=3e-3", low_pts)]
    env = pareto_envelope(curves)
    everything = high_pts + low_pts
    brute = sorted(
        (p for p in everything if not any(dominates(o, p) for o in everything)),
        key=lambda p: (p.bpp, -p.psnr_db),
    )
    assert env.points == brute


@pytest.mark.acceptance(7, "latent contraction")
def test_c7_contraction(toy_models, heldout, record_property):
    w, _ = toy_models.get("hyperprior", "mse", 0.003)
    stats = []
    for s in (0.8, 0.5, 0.2):
        h = merge_histograms([latent_histogram(x, w, s, bins=65) for x in heldout])
        stats.append(dispersion_stats(h))
    var, zero, b = (list(v) for v in zip(*stats))
    record_property(
        "measured",
        "s=0.8/0.5/0.2: var " + "/".join(f"{v:.4f}" for v in var)
        + ", b " + "/".join(f"{v:.4f}" for v in b)
        + ", zero mass " + "/".join(f"{v:.4f}" for v in zero),
    )
    assert var[0] > var[1] > var[2]
    assert b[0] > b[1] > b[2]
    assert zero[0] < zero[1] < zero[2]


@pytest.mark.acceptance(8, "bit-estimate consistency")
def test_c8_estimate(toy_models, record_property):
    w, _ = toy_models.get("hyperprior", "mse", 0.003)
    images = toydata.heldout_images(n=10, size=128, seed=8)
    ratios = []
    for x in images:
        measured = 8 * len(compress(x, w).to_bytes())
        ratios.append(measured / estimate_image_bits(to_float(x), w))
    record_property(
        "measured",
        f"measured/estimated over 10 images: {min(ratios):.4f}..{max(ratios):.4f}",
    )
    assert all(abs(r - 1) <= 0.05 for r in ratios)


@pytest.mark.acceptance(9, "persistence")
def test_c9_persistence(toy_models, heldout, tmp_path, record_property):
    w, _ = toy_models.get()
    save_weights(w, tmp_path / "w.uvw")
    w2 = load_weights(tmp_path / "w.uvw")
    assert w2.fingerprint == w.fingerprint

    x = heldout[0]
    f = scale_compress(x, 0.6, w)
    write_file(f, tmp_path / "x.uvrc")
    g = read_file(tmp_path / "x.uvrc")
    assert np.array_equal(scale_decompress(g, w2), scale_decompress(f, w))

    data = f.to_bytes()
    rng = np.random.default_rng(9)
    detected = 0
    for _ in range(1000):
        bad = bytearray(data)
        i = int(rng.integers(HEADER_SIZE, len(data)))
        bad[i] ^= int(rng.integers(1, 256))
        try:
            scale_decompress(CompressedFile.from_bytes(bytes(bad)), w)
        except CorruptStreamError:
            detected += 1
    record_property("measured", f"fingerprints equal; {detected}/1000 corruptions detected")
    assert detected >= 990
