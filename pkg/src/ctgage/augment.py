"""Sliding windows, temporal warping, noise injection and density-based oversampling."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    window_len: int = 1800
    stride: int = 600
    warp_range: tuple = (0.9, 1.1)
    noise_sd: float = 1.0
    density_bins: int = 12
    sparse_multiplier_cap: int = 4

    def validate(self, min_record_len: int | None = None) -> "AugmentConfig":
        lo, hi = self.warp_range
        if not (0 < lo <= 1 <= hi):
            raise ValueError(f"warp_range must satisfy 0 < low <= 1 <= high, got {self.warp_range}")
        if self.stride < 1 or self.window_len < 1:
            raise ValueError("stride and window_len must be >= 1")
        if min_record_len is not None and self.window_len > min_record_len:
            raise ValueError(f"window_len {self.window_len} exceeds shortest record ({min_record_len})")
        if self.noise_sd < 0 or self.density_bins < 1 or self.sparse_multiplier_cap < 1:
            raise ValueError("noise_sd >= 0, density_bins >= 1 and sparse_multiplier_cap >= 1 required")
        return self


def sliding_windows(fhr, window_len: int, stride: int) -> list:
    fhr = np.asarray(fhr)
    if fhr.shape[-1] < window_len:
        return []
    count = (fhr.shape[-1] - window_len) // stride + 1
    return [fhr[..., i * stride:i * stride + window_len] for i in range(count)]


def center_window(fhr, window_len: int = 1800) -> np.ndarray:
    fhr = np.asarray(fhr)
    if fhr.shape[-1] < window_len:
        raise ValueError(f"series of length {fhr.shape[-1]} shorter than window {window_len}")
    start = (fhr.shape[-1] - window_len) // 2
    return fhr[..., start:start + window_len]


def time_warp(segment, factor: float, rng=None) -> np.ndarray:
    """Stretch (factor > 1) or compress by linear resampling, then restore the length.

    A stretched series is center-cropped; a compressed one is padded by
    repeating its edge values. ``rng`` is accepted for signature symmetry with
    the other augmenters and is unused.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim > 1:
        return np.stack([time_warp(row, factor) for row in seg])
    n = seg.size
    if factor == 1.0:
        return seg.copy()
    m = max(int(round(n * factor)), 1)
    # output sample j reads source position j / factor; positions past the end repeat the edge
    res = np.interp(np.arange(m) / factor, np.arange(n), seg)
    if m >= n:
        start = (m - n) // 2
        return res[start:start + n]
    left = (n - m) // 2
    return np.pad(res, (left, n - m - left), mode="edge")


def add_noise(segment, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    seg = np.asarray(segment, dtype=np.float64)
    if noise_sd == 0:
        return seg.copy()
    return seg + rng.normal(0.0, noise_sd, size=seg.shape)


def density_multiplicity(labels, bins: int, cap: int) -> np.ndarray:
    """Per-sample copy counts that flatten the label histogram, capped at ``cap``."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("labels must be non-empty")
    lo, hi = labels.min(), labels.max()
    if lo == hi:
        return np.ones(labels.size, dtype=int)
    idx = np.minimum(((labels - lo) / (hi - lo) * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    mult = np.rint(counts.max() / counts[idx]).astype(int)
    return np.clip(mult, 1, cap)


def record_signal(rec, in_channels: int = 1) -> np.ndarray:
    """(channels, samples) array: FHR, plus UA (zeros when absent) for two channels."""
    if in_channels == 1:
        return rec.fhr[None, :]
    ua = rec.ua if rec.ua is not None else np.zeros_like(rec.fhr)
    return np.stack([rec.fhr, ua])


def record_rng(seed: int, record_id: str, copy_index: int) -> np.random.Generator:
    key = zlib.crc32(record_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key, copy_index)))


def augment_record(fhr, label, multiplicity: int, config: AugmentConfig, seed: int,
                   record_id: str) -> tuple[list, list]:
    """Windows of the raw record plus ``multiplicity - 1`` warped, noised copies.

    Each extra copy is warped and noised as a whole record before windowing.
    """
    segments = list(sliding_windows(fhr, config.window_len, config.stride))
    for k in range(1, int(multiplicity)):
        rng = record_rng(seed, record_id, k)
        factor = rng.uniform(*config.warp_range)
        copy = add_noise(time_warp(fhr, factor), config.noise_sd, rng)
        segments.extend(sliding_windows(copy, config.window_len, config.stride))
    return segments, [label] * len(segments)


def build_training_set(records, config: AugmentConfig, seed: int, dtype=np.float32,
                       in_channels: int = 1):
    """Stack augmented windows of ``records`` into (X[n, c, window_len], y[n])."""
    if not records:
        raise ValueError("no training records")
    labels = np.array([r.actual_age_days for r in records], dtype=np.float64)
    mult = density_multiplicity(labels, config.density_bins, config.sparse_multiplier_cap)
    xs, ys = [], []
    for rec, m in zip(records, mult):
        segs, labs = augment_record(record_signal(rec, in_channels), rec.actual_age_days, m,
                                    config, seed, rec.record_id)
        xs.extend(segs)
        ys.extend(labs)
    X = np.stack(xs).astype(dtype)
    return X, np.asarray(ys, dtype=np.float64)


def build_eval_set(records, window_len: int = 1800, dtype=np.float32, in_channels: int = 1):
    """Centre windows (X[n, c, window_len], y[n]), one per record."""
    X = np.stack([center_window(record_signal(r, in_channels), window_len) for r in records]).astype(dtype)
    y = np.array([r.actual_age_days for r in records], dtype=np.float64)
    return X, y
