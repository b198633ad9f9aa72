from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    l_pos: int = 10
    l_dir: int = 4

    def __post_init__(self):
        if self.l_pos < 1 or self.l_dir < 1:
            raise ValueError("encoding frequencies must be >= 1")

    @property
    def size(self) -> int:
        return 2 * (2 * self.l_pos) + 3 * (2 * self.l_dir)


def fourier_features(x, n_freq: int) -> np.ndarray:
    """Interleaved ``sin(2^k pi x), cos(2^k pi x)`` for k < n_freq, along a new last axis."""
    x = np.asarray(x, dtype=np.float64)
    arg = x[..., None] * (np.pi * 2.0 ** np.arange(n_freq))
    out = np.empty(x.shape + (2 * n_freq,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def _check_ranges(i, j, d):
    if np.any(~((i >= 0.0) & (i <= 1.0))) or np.any(~((j >= 0.0) & (j <= 1.0))):
        raise ValueError("image coordinates must lie in [0, 1]")
    if np.any(~((d >= -1.0) & (d <= 1.0))):
        raise ValueError("direction components must lie in [-1, 1]")


def encode_direction(d, cfg: EncodingConfig) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64).reshape(3)
    return fourier_features(d, cfg.l_dir).reshape(-1)


def encode_batch(i, j, d, cfg: EncodingConfig, dir_features: np.ndarray | None = None) -> np.ndarray:
    """Encode many pixel locations that share one light direction, shape ``(n, cfg.size)``.

    ``i`` is the normalized column coordinate, ``j`` the normalized row.
    """
    i = np.asarray(i, dtype=np.float64).reshape(-1)
    j = np.asarray(j, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(3)
    _check_ranges(i, j, d)
    n = len(i)
    p = 2 * cfg.l_pos
    out = np.empty((n, cfg.size))
    out[:, :p] = fourier_features(i, cfg.l_pos)
    out[:, p : 2 * p] = fourier_features(j, cfg.l_pos)
    out[:, 2 * p :] = encode_direction(d, cfg) if dir_features is None else dir_features
    return out


def positional_encode(i: float, j: float, d, cfg: EncodingConfig = EncodingConfig()) -> np.ndarray:
    """Single-sample encoding: features of i, then j, then the three direction components."""
    return encode_batch([i], [j], d, cfg)[0]
