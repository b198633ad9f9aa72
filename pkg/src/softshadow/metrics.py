"""Image comparison metrics and shadow compositing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .imaging import ShadowTexture, bilinear_sample

log = logging.getLogger(__name__)

NORM_EPS = 1e-12


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    si_rmse: float
    rmle: float
    angular_error_deg: float
    angular_skipped: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    CSV_FIELDS = ("rmse", "si_rmse", "rmle", "angular_error_deg", "angular_skipped")

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, k)) for k in self.CSV_FIELDS)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image sizes differ: {x.shape} vs {y.shape}")
    return x, y


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def si_scale(x, y) -> float:
    """Least-squares scale alpha >= 0 minimizing ||alpha x - y||."""
    x, y = _pair(x, y)
    xx = float(np.vdot(x, x))
    if xx == 0.0:
        return 0.0
    return max(0.0, float(np.vdot(x, y)) / xx)


def si_rmse(x, y) -> float:
    """RMSE after the best nonnegative global scale is applied to ``x``. Not symmetric."""
    x, y = _pair(x, y)
    if not np.any(x):
        log.warning("si_rmse: estimate is identically zero; reporting rmse(0, y)")
    return rmse(si_scale(x, y) * x, y)


def rmle(x, y) -> float:
    x, y = _pair(x, y)
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("rmle needs nonnegative images")
    return float(np.sqrt(np.mean((np.log1p(x) - np.log1p(y)) ** 2)))


def angular_errors(x, y) -> np.ndarray:
    """Per-pixel RGB angle in degrees; NaN where either pixel is (near) black."""
    x, y = _pair(x, y)
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    ok = (nx >= NORM_EPS) & (ny >= NORM_EPS)
    cos = np.einsum("...c,...c->...", x, y) / np.where(ok, nx * ny, 1.0)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.where(ok, ang, np.nan)


def rgb_angular_error(x, y) -> float:
    """Mean RGB angle over pixels where both vectors are nonzero (0 if there are none)."""
    ang = angular_errors(x, y)
    valid = ~np.isnan(ang)
    if not valid.any():
        return 0.0
    return float(ang[valid].mean())


def evaluate(x, y) -> MetricReport:
    x, y = _pair(x, y)
    if x.ndim == 2:
        x, y = np.repeat(x[..., None], 3, -1), np.repeat(y[..., None], 3, -1)
    skipped = int(np.isnan(angular_errors(x, y)).sum())
    return MetricReport(rmse(x, y), si_rmse(x, y), rmle(x, y), rgb_angular_error(x, y), skipped)


# --------------------------------------------------------------------------
# Compositing


def composite_shadow(photo, tex: ShadowTexture | np.ndarray, o: float, placement) -> np.ndarray:
    """Darken ``photo`` by ``1 - o * v`` where the placed texture lands.

    ``placement`` is a 2x3 affine map from texture coordinates ``(u, v)`` in
    [0, 1]^2 (u along columns, v along rows) to continuous photo pixel
    coordinates ``(x, y)``; photo pixel ``(c, r)`` has its centre at
    ``(c + 0.5, r + 0.5)``.
    """
    photo = np.asarray(photo, dtype=np.float64)
    if not 0.0 <= o <= 1.0:
        raise ValueError("opacity must lie in [0, 1]")
    img = tex.image if isinstance(tex, ShadowTexture) else np.asarray(tex, dtype=np.float64)
    m = np.asarray(placement, dtype=np.float64).reshape(2, 3)
    lin = m[:, :2]
    if abs(np.linalg.det(lin)) < 1e-12:
        raise ValueError("placement matrix is singular")
    inv = np.linalg.inv(lin)
    hgt, wid = photo.shape[:2]
    xs = np.arange(wid) + 0.5
    ys = np.arange(hgt) + 0.5
    px, py = np.meshgrid(xs, ys)
    rel = np.stack([px - m[0, 2], py - m[1, 2]], axis=-1) @ inv.T
    u, v = rel[..., 0], rel[..., 1]
    inside = (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
    out = photo.copy()
    if not inside.any() or o == 0.0:
        return out
    occ = bilinear_sample(img, u[inside], v[inside])
    factor = 1.0 - o * occ
    if photo.ndim == 3:
        factor = factor[:, None]
    out[inside] = photo[inside] * factor
    return out


def placement_centered(center_xy, size_px: float) -> np.ndarray:
    """Axis-aligned placement of a ``size_px`` square centred at ``center_xy``."""
    cx, cy = center_xy
    half = size_px / 2.0
    return np.array([[size_px, 0.0, cx - half], [0.0, size_px, cy - half]])


def psnr(x, y, peak: float = 1.0) -> float:
    err = rmse(x, y)
    return math.inf if err == 0 else 20.0 * math.log10(peak / err)
