"""Light labels, crops and recentred panoramas from equirectangular HDR images.

A panorama is an ``(h, 2h, 3)`` array. Pixel ``(i, j)`` (column, row) looks
along polar angle ``theta = pi (j + 0.5) / h`` measured from the zenith and
azimuth ``phi = 2 pi (i + 0.5) / w``; directions are z-up,
``(sin t cos p, sin t sin p, cos t)``. Angles are radians unless a name
ends in ``_deg``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_LUMA = (0.0722, 0.7152, 0.2126)
REC709_LUMA = (0.2126, 0.7152, 0.0722)
LOSS_WEIGHTS = (5.0, 2.0, 2.0, 1.0)


class NoHighlightError(ValueError):
    """The panorama has no positive intensity, so no light can be extracted."""


def check_panorama(pano) -> np.ndarray:
    pano = np.asarray(pano, dtype=np.float64)
    if pano.ndim != 3 or pano.shape[2] != 3:
        raise ValueError(f"panorama must be (h, w, 3), got {pano.shape}")
    h, w = pano.shape[:2]
    if w != 2 * h:
        raise ValueError(f"panorama width must be twice its height, got {w}x{h}")
    if np.any(pano < 0) or not np.all(np.isfinite(pano)):
        raise ValueError("panorama values must be finite and nonnegative")
    return pano


@dataclass(frozen=True)
class LightParams:
    d: tuple[float, float, float]
    c: tuple[float, float, float]
    a: tuple[float, float, float]
    o: float

    def to_json(self) -> str:
        return json.dumps({"d": list(self.d), "c": list(self.c), "a": list(self.a), "o": self.o}, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "LightParams":
        d = np.asarray(doc["d"], dtype=np.float64)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("light direction 'd' must be a unit 3-vector")
        c, a = (tuple(float(x) for x in doc[k]) for k in ("c", "a"))
        o = float(doc["o"])
        if len(c) != 3 or len(a) != 3:
            raise ValueError("'c' and 'a' must be RGB triples")
        if not all(0.0 <= x <= 1.0 for x in (*c, *a, o)):
            raise ValueError("'c', 'a' and 'o' must lie in [0, 1]")
        return cls(tuple(d.tolist()), c, a, o)

    @classmethod
    def from_json(cls, text: str) -> "LightParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CropSpec:
    theta_deg: float
    phi_deg: float
    fov_deg: float = 85.0
    out_w: int = 256
    out_h: int = 192

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov must lie in (0, 180) degrees")
        if not 0.0 < self.theta_deg < 180.0:
            raise ValueError("crop centre cannot sit on a pole")
        if self.out_w < 1 or self.out_h < 1:
            raise ValueError("output size must be positive")


# --------------------------------------------------------------------------
# Per-pixel quantities


def luminance(rgb, rec709: bool = False):
    """Weighted channel sum; by default 0.0722 R + 0.7152 G + 0.2126 B."""
    wr, wg, wb = REC709_LUMA if rec709 else DEFAULT_LUMA
    rgb = np.asarray(rgb, dtype=np.float64)
    return wr * rgb[..., 0] + wg * rgb[..., 1] + wb * rgb[..., 2]


def solid_angle_weight(j, w: int, h: int):
    j = np.asarray(j)
    if np.any((j < 0) | (j >= h)):
        raise ValueError("row index out of range")
    return (2.0 * math.pi**2 / (w * h)) * np.sin(math.pi * (j + 0.5) / h)


def pixel_angles(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar and azimuth angle grids, each ``(h, w)``."""
    theta = math.pi * (np.arange(h) + 0.5) / h
    phi = 2.0 * math.pi * (np.arange(w) + 0.5) / w
    return np.meshgrid(theta, phi, indexing="ij")


def angles_to_dirs(theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def dirs_to_angles(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2.0 * math.pi)
    return theta, phi


def pixel_directions(h: int, w: int) -> np.ndarray:
    return angles_to_dirs(*pixel_angles(h, w))


def highlight_mask(pano, rec709: bool = False, threshold: float = 0.05) -> np.ndarray:
    """Pixels brighter than ``threshold`` times the brightest one; empty for a black panorama."""
    intensity = luminance(check_panorama(pano), rec709)
    peak = intensity.max()
    if peak <= 0.0:
        return np.zeros(intensity.shape, dtype=bool)
    return intensity > threshold * peak


def tone_map(img, gamma: float = 2.2):
    """Reinhard ``x / (1 + x)`` followed by display gamma, per channel."""
    img = np.asarray(img, dtype=np.float64)
    return (img / (1.0 + img)) ** (1.0 / gamma)


def opacity(ambient_total: float, light_total: float) -> float:
    return 1.0 - math.tanh(ambient_total / (0.05 * light_total))


# --------------------------------------------------------------------------
# Light extraction


def extract_light_params(
    pano,
    rec709: bool = False,
    tone_mapper=tone_map,
    color_weights: str = "intensity",
) -> LightParams:
    """Direction, light colour, ambient colour and shadow opacity of a panorama.

    ``color_weights`` selects how colours are averaged: ``"intensity"``
    weights pixels by intensity times solid angle, ``"solid_angle"`` by solid
    angle only. If every pixel is a highlight the ambient colour falls back to
    the mean of the whole tone-mapped image.
    """
    pano = check_panorama(pano)
    h, w = pano.shape[:2]
    intensity = luminance(pano, rec709)
    mask = highlight_mask(pano, rec709)
    if not mask.any():
        raise NoHighlightError("no highlight region: panorama has no positive intensity")
    omega = solid_angle_weight(np.arange(h), w, h)[:, None] * np.ones((1, w))
    iw = intensity * omega

    dvec = (iw[mask][:, None] * pixel_directions(h, w)[mask]).sum(axis=0)
    norm = float(np.linalg.norm(dvec))
    if norm < 1e-12 * max(float(iw[mask].sum()), 1e-300):
        raise ValueError("highlight directions cancel out; light direction is undefined")
    d = dvec / norm

    if color_weights == "intensity":
        cw = iw
    elif color_weights == "solid_angle":
        cw = omega
    else:
        raise ValueError(f"unknown color_weights {color_weights!r}")
    mapped = tone_mapper(pano)

    def weighted_mean(region):
        wt = cw[region]
        if wt.sum() <= 0.0:
            return np.zeros(3)
        return (wt[:, None] * mapped[region]).sum(axis=0) / wt.sum()

    c = weighted_mean(mask)
    ambient = ~mask
    if ambient.any():
        a = weighted_mean(ambient)
    else:
        log.warning("every pixel is a highlight; ambient colour falls back to the whole-panorama mean")
        a = weighted_mean(np.ones_like(mask))
    o = opacity(float(iw[ambient].sum()), float(iw[mask].sum()))
    return LightParams(
        tuple(float(x) for x in d),
        tuple(float(x) for x in np.clip(c, 0.0, 1.0)),
        tuple(float(x) for x in np.clip(a, 0.0, 1.0)),
        float(o),
    )


def light_loss(est: LightParams, gt: LightParams, weights=LOSS_WEIGHTS) -> float:
    """Weighted sum of per-parameter mean squared errors (d, c, a, o)."""
    wd, wc, wa, wo = weights
    mse = lambda x, y: float(np.mean((np.asarray(x, float) - np.asarray(y, float)) ** 2))  # noqa: E731
    return wd * mse(est.d, gt.d) + wc * mse(est.c, gt.c) + wa * mse(est.a, gt.a) + wo * mse(est.o, gt.o)


# --------------------------------------------------------------------------
# Resampling


def sample_panorama(pano, theta, phi) -> np.ndarray:
    """Bilinear lookup at arbitrary angles, wrapping in azimuth and clamping at the poles."""
    pano = np.asarray(pano, dtype=np.float64)
    h, w = pano.shape[:2]
    x = np.asarray(phi) / (2.0 * math.pi) * w - 0.5
    y = np.clip(np.asarray(theta) / math.pi * h - 0.5, 0.0, h - 1)
    x0 = np.floor(x)
    fx = (x - x0)[..., None]
    x0 = x0.astype(np.intp) % w
    x1 = (x0 + 1) % w
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = (y - y0)[..., None]
    top = pano[y0, x0] * (1.0 - fx) + pano[y0, x1] * fx
    bot = pano[y1, x0] * (1.0 - fx) + pano[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_directions(pano, dirs) -> np.ndarray:
    return sample_panorama(pano, *dirs_to_angles(dirs))


def camera_rays(spec: CropSpec) -> np.ndarray:
    """Unit ray per crop pixel, ``(out_h, out_w, 3)``; row 0 is the top of the image."""
    f = angles_to_dirs(math.radians(spec.theta_deg), math.radians(spec.phi_deg))
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, f)
    right /= np.linalg.norm(right)
    cam_up = np.cross(f, right)
    focal = 0.5 * spec.out_w / math.tan(math.radians(spec.fov_deg) / 2.0)
    px = np.arange(spec.out_w) + 0.5 - 0.5 * spec.out_w
    py = np.arange(spec.out_h) + 0.5 - 0.5 * spec.out_h
    rays = focal * f + px[None, :, None] * right - py[:, None, None] * cam_up
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def crop_rectilinear(pano, spec: CropSpec) -> np.ndarray:
    """Pinhole view of the panorama with horizontal field of view ``spec.fov_deg``."""
    pano = check_panorama(pano)
    return sample_directions(pano, camera_rays(spec))


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def recenter_rotation(theta_c: float, phi_c: float) -> np.ndarray:
    """Rotation taking direction (theta_c, phi_c) to the panorama centre (pi/2, pi).

    Spins about the zenith first, then tilts within the vertical plane of the
    target, so the horizon stays level when theta_c = pi/2.
    """
    spin = _rot_z(math.pi - phi_c)
    # at azimuth pi, raising theta by t is a rotation of -t about y
    tilt = _rot_y(-(math.pi / 2 - theta_c))
    return tilt @ spin


def rotate_panorama(pano, rotation: np.ndarray) -> np.ndarray:
    """Resample so content seen along ``u`` ends up along ``rotation @ u``."""
    pano = check_panorama(pano)
    h, w = pano.shape[:2]
    src = pixel_directions(h, w) @ np.asarray(rotation)  # row-vector form of R^T u
    return sample_directions(pano, src)


def translation_warp(dirs: np.ndarray, forward: np.ndarray, strength: float) -> np.ndarray:
    """Source directions seen from a camera moved ``strength`` along ``forward`` inside a unit sphere."""
    p = strength * np.asarray(forward, dtype=np.float64)
    pu = dirs @ p
    dist = -pu + np.sqrt(pu * pu - p @ p + 1.0)
    hit = p + dist[..., None] * dirs
    return hit / np.linalg.norm(hit, axis=-1, keepdims=True)


def warp_recenter(pano, theta_c: float, phi_c: float, warp_strength: float = 0.4) -> np.ndarray:
    """Rotate (theta_c, phi_c) to the centre, then approximate stepping toward it.

    The scene is modelled as the unit sphere around the capture point, and
    the virtual camera moves ``warp_strength`` of the way to its surface along
    the view axis. ``warp_strength = 0`` is a pure rotation. Both steps share
    a single resampling pass.
    """
    if not 0.0 <= warp_strength < 1.0:
        raise ValueError("warp_strength must lie in [0, 1)")
    pano = check_panorama(pano)
    h, w = pano.shape[:2]
    rot = recenter_rotation(theta_c, phi_c)
    out_dirs = pixel_directions(h, w)
    if warp_strength > 0.0:
        out_dirs = translation_warp(out_dirs, np.array([-1.0, 0.0, 0.0]), warp_strength)
    return sample_directions(pano, out_dirs @ rot)


def sample_crop_specs(n: int = 8, seed: int = 0, fov_deg: float = 85.0, out_w: int = 256, out_h: int = 192,
                      theta_range_deg=(60.0, 120.0)) -> list[CropSpec]:
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(*theta_range_deg, size=n)
    phis = rng.uniform(0.0, 360.0, size=n)
    return [CropSpec(float(t), float(p), fov_deg, out_w, out_h) for t, p in zip(thetas, phis)]


def crop_spec_dict(spec: CropSpec) -> dict:
    return asdict(spec)
