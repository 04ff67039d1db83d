"""Input-gradient attention weights and their CSV/SVG export."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

FS_HZ = 2.0
SVG_W, SVG_H = 1200, 300


@dataclass
class AttentionSeries:
    weights: np.ndarray
    gaussian_sigma: float = 8.0
    record_id: str = ""
    predicted_age: float = float("nan")
    gap: float = float("nan")


def attention(grad, gaussian_sigma: float = 8.0) -> np.ndarray:
    """|grad| -> log1p(|grad| / median nonzero) -> Gaussian smoothing -> min-max to [0, 1]."""
    w = np.abs(np.asarray(grad, dtype=np.float64))
    if not np.all(np.isfinite(w)):
        raise ValueError("gradient contains non-finite values")
    nz = w[w > 0]
    if nz.size == 0:
        return np.zeros_like(w)
    # log(1 + w / m) evaluated in log space so tiny medians cannot overflow the ratio
    with np.errstate(divide="ignore"):
        w = np.logaddexp(0.0, np.log(w) - np.log(np.median(nz)))
    # below sigma 1/8 scipy's kernel radius is 0, i.e. no smoothing
    if gaussian_sigma >= 0.125:
        w = gaussian_filter1d(w, gaussian_sigma, mode="reflect")
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.zeros_like(w)
    return (w - lo) / (hi - lo)


def weight_color(weight: float) -> str:
    """White (0) to red (1), linear in the green/blue channels."""
    level = int(round(255 * (1.0 - float(np.clip(weight, 0.0, 1.0)))))
    return f"#FF{level:02X}{level:02X}"


def write_attention_csv(fhr, weights, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "fhr", "weight"])
        for i, (f, a) in enumerate(zip(np.asarray(fhr), np.asarray(weights))):
            w.writerow([i, repr(float(f)), repr(float(a))])


def read_attention_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["fhr"]) for r in rows]), np.array([float(r["weight"]) for r in rows]))


def attention_svg(fhr, weights, title: str = "") -> str:
    fhr = np.asarray(fhr, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = fhr.size
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = SVG_W - left - right, SVG_H - top - bottom
    lo = min(60.0, float(np.floor(fhr.min() / 10) * 10))
    hi = max(200.0, float(np.ceil(fhr.max() / 10) * 10))
    xs = left + pw * np.arange(n) / max(n - 1, 1)
    ys = top + ph * (1.0 - (fhr - lo) / (hi - lo))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_W} {SVG_H}" '
           f'width="{SVG_W}" height="{SVG_H}">',
           f'<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="#FFFFFF"/>']
    if title:
        out.append(f'<text x="{left}" y="18" font-size="13" font-family="sans-serif">{title}</text>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="#000"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="#000"/>')
    minutes = n / FS_HZ / 60.0
    for m in range(int(minutes) + 1):
        x = left + pw * m / minutes if minutes else left
        out.append(f'<text x="{x:.1f}" y="{top + ph + 15}" font-size="10" text-anchor="middle">{m}</text>')
    for b in np.arange(lo, hi + 1, 20):
        y = top + ph * (1.0 - (b - lo) / (hi - lo))
        out.append(f'<text x="{left - 5}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{int(b)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{SVG_H - 5}" font-size="12" text-anchor="middle">time (min)</text>')
    out.append(f'<text x="15" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2})">FHR (bpm)</text>')
    # one segment per sample pair, coloured by the mean weight of its endpoints
    for i in range(n - 1):
        c = weight_color(0.5 * (weights[i] + weights[i + 1]))
        out.append(f'<line x1="{xs[i]:.2f}" y1="{ys[i]:.2f}" x2="{xs[i + 1]:.2f}" y2="{ys[i + 1]:.2f}" '
                   f'stroke="{c}" stroke-width="1.5"/>')
    out.append('<polyline fill="none" stroke="#555" stroke-width="0.3" points="'
               + " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys)) + '"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_attention(fhr, series: AttentionSeries, out_path, fmt: str = "csv") -> Path:
    out_path = Path(out_path)
    if fmt == "csv":
        write_attention_csv(fhr, series.weights, out_path)
    elif fmt == "svg":
        title = (f"{series.record_id}  CTGage {series.predicted_age:.1f} d  "
                 f"gap {series.gap:+.1f} d")
        out_path.write_text(attention_svg(fhr, series.weights, title), encoding="utf-8")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return out_path
