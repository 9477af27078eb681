"""Luminance PSNR / SSIM and the dataset evaluation protocol."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .imaging import _unwrap, bicubic_resize, degrade, luminance, modcrop, read_image

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b, op):
    a, _ = _unwrap(a)
    b, _ = _unwrap(b)
    if a.shape != b.shape:
        raise ValueError(f"{op}: extent mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"{op}: expected single-channel images, got {a.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical images give ``math.inf``."""
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    a = np.lib.stride_tricks.sliding_window_view(a, len(g), axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(a, len(g), axis=1) @ g


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean single-scale SSIM over all fully-contained 11x11 Gaussian windows."""
    a, b = _pair(a, b, "ssim")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def shave(img, border: int):
    data, _ = _unwrap(img)
    if border == 0:
        return data
    return data[border:-border, border:-border]


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    protocol: dict
    skipped: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else math.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["name", "psnr", "ssim"])
            for r in self.rows:
                w.writerow([r.name, f"{r.psnr:.4f}", f"{r.ssim:.6f}"])
            w.writerow(["mean", f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.6f}"])
            for k, v in sorted(self.protocol.items()):
                w.writerow([f"# {k}", v, ""])
            for s in self.skipped:
                w.writerow(["# skipped", s, ""])

    def to_table(self, method: str = "method", dataset: str = "dataset") -> str:
        """Aligned plain-text table: one PSNR and one SSIM line per method, per-image rows below."""
        scale = self.protocol.get("scale", "?")
        head = f"x{scale}"
        lines = [
            f"{'Dataset':<12}{dataset:>12}",
            f"{'Method':<12}{'Metric':<8}{head:>10}",
            "-" * 30,
            f"{method:<12}{'PSNR':<8}{self.mean_psnr:>10.2f}",
            f"{'':<12}{'SSIM':<8}{self.mean_ssim:>10.4f}",
            "",
            f"{'image':<20}{'PSNR':>10}{'SSIM':>10}",
        ]
        lines += [f"{r.name:<20}{r.psnr:>10.2f}{r.ssim:>10.4f}" for r in self.rows]
        lines.append("protocol: " + ", ".join(f"{k}={v}" for k, v in sorted(self.protocol.items())))
        if self.skipped:
            lines.append("skipped: " + ", ".join(self.skipped))
        return "\n".join(lines)


def bicubic_predictor(scale: int) -> Callable:
    return lambda lr: bicubic_resize(lr, scale)


def evaluate_sr(predict: Callable, dataset: Iterable, scale: int, border: int | None = None, quantize: bool = True) -> EvalReport:
    """Score ``predict`` (LR luminance -> SR luminance) on HR images.

    ``dataset`` yields paths or (name, image) pairs. Each HR image is cropped
    to a multiple of ``scale``, converted to luminance (rounded to the 8-bit
    grid when ``quantize``), degraded, super-resolved, and compared after
    shaving ``border`` (default: ``scale``) pixels from every side.
    """
    border = scale if border is None else border
    protocol = {
        "scale": scale,
        "shave": border,
        "peak": 1.0,
        "channel": "Y (BT.601 studio swing)",
        "y_quantized_8bit": quantize,
        "ssim_window": f"gaussian {SSIM_WINDOW}x{SSIM_WINDOW} sigma={SSIM_SIGMA}",
        "ssim_k1_k2": f"{SSIM_K1},{SSIM_K2}",
    }
    rows, skipped = [], []
    for item in dataset:
        if isinstance(item, (str, Path)):
            name = Path(item).stem
            try:
                img = read_image(item)
            except (OSError, ValueError) as e:
                log.warning("skipping %s: %s", item, e)
                skipped.append(str(item))
                continue
        else:
            name, img = item
        hr = _unwrap(luminance(modcrop(img, scale), quantize=quantize))[0]
        lr, _ = degrade(hr, scale)
        sr = _unwrap(predict(lr))[0]
        if sr.shape != hr.shape:
            raise ValueError(f"{name}: prediction {sr.shape} does not match ground truth {hr.shape}")
        a, b = shave(sr, border), shave(hr, border)
        rows.append(EvalRow(name, psnr(a, b), ssim(a, b)))
    return EvalReport(rows, protocol, skipped)
