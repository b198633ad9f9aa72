"""Monte-Carlo soft shadow textures for a mesh resting on an invisible ground plane.

World frame is z-up with the shadow-catcher plane at z = 0. Light directions
point from the plane toward the light. Each texel casts ``spp`` shadow rays
toward directions drawn uniformly from a cone around the light direction and
records the fraction that hit the mesh.

Random numbers come from a counter-based hash keyed by (seed, texel, sample),
so a texture is bit-identical for a given seed no matter how many threads
trace it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .imaging import (
    ShadowTexture,
    TriangleMesh,
    as_unit,
    bounding_box,
    direction_from_angles,
)

LEAF_SIZE = 4
_U64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class TraceConfig:
    resolution: int = 256
    spp: int = 256
    cone_half_angle: float = math.radians(10.0)
    seed: int = 0

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        if self.spp < 1:
            raise ValueError("spp must be at least 1")
        if not 0.0 < self.cone_half_angle < math.pi / 2:
            raise ValueError("cone_half_angle must lie in (0, pi/2)")


@dataclass(frozen=True)
class GridDirection:
    theta_deg: float
    phi_deg: float
    d: np.ndarray


# --------------------------------------------------------------------------
# BVH


@dataclass(frozen=True)
class BVH:
    """Flattened median-split BVH. Leaves have ``left == -1``."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    v0: np.ndarray  # triangle data in leaf order
    e1: np.ndarray
    e2: np.ndarray
    order: np.ndarray  # original triangle index for each leaf slot

    @property
    def node_count(self) -> int:
        return len(self.left)


def build_bvh(vertices: np.ndarray, triangles: np.ndarray, leaf_size: int = LEAF_SIZE) -> BVH:
    tri = vertices[triangles] if len(triangles) else np.zeros((0, 3, 3))
    lo_t = tri.min(axis=1) if len(tri) else np.zeros((0, 3))
    hi_t = tri.max(axis=1) if len(tri) else np.zeros((0, 3))
    cen = tri.mean(axis=1) if len(tri) else np.zeros((0, 3))

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    order: list[int] = []

    def new_node(idx: np.ndarray) -> int:
        k = len(left)
        bmin.append(lo_t[idx].min(axis=0))
        bmax.append(hi_t[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return k

    if len(tri):
        stack = [(new_node(np.arange(len(tri))), np.arange(len(tri)))]
        while stack:
            k, idx = stack.pop()
            if len(idx) <= leaf_size:
                start[k] = len(order)
                count[k] = len(idx)
                order.extend(idx.tolist())
                continue
            c = cen[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            idx = idx[np.argsort(c[:, axis], kind="stable")]
            mid = len(idx) // 2
            lo_idx, hi_idx = idx[:mid], idx[mid:]
            left[k] = new_node(lo_idx)
            right[k] = new_node(hi_idx)
            # right pushed first so the left subtree is laid out first
            stack.append((right[k], hi_idx))
            stack.append((left[k], lo_idx))

    order_a = np.array(order, dtype=np.int64)
    t = tri[order_a] if len(order_a) else np.zeros((0, 3, 3))
    return BVH(
        bmin=np.array(bmin, dtype=np.float64).reshape(-1, 3),
        bmax=np.array(bmax, dtype=np.float64).reshape(-1, 3),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        v0=np.ascontiguousarray(t[:, 0]),
        e1=np.ascontiguousarray(t[:, 1] - t[:, 0]),
        e2=np.ascontiguousarray(t[:, 2] - t[:, 0]),
        order=order_a,
    )


# --------------------------------------------------------------------------
# Scene


@dataclass(frozen=True)
class ShadowScene:
    """Mesh (or nothing) above a square plane of side ``plane_side`` centred at the origin.

    Use :func:`build_scene` to place a mesh per the standard setup. The
    constructor takes the geometry as given, which tests use for hand-built
    occluders and for the empty scene (``mesh=None``).
    """

    mesh: TriangleMesh | None
    plane_side: float
    bvh: BVH = field(init=False, repr=False)

    def __post_init__(self):
        if not self.plane_side > 0:
            raise ValueError("plane_side must be positive")
        if self.mesh is None:
            bvh = build_bvh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        else:
            bvh = build_bvh(self.mesh.vertices, self.mesh.triangles)
        object.__setattr__(self, "bvh", bvh)

    @property
    def ray_offset(self) -> float:
        return 1e-4 * self.plane_side


def build_scene(mesh: TriangleMesh) -> ShadowScene:
    """Centre ``mesh`` on the plane, rest it at z = 0 and size the plane to 3x its largest side."""
    box = bounding_box(mesh)
    side = float(box.extent.max())
    if side <= 0.0:
        raise ValueError("degenerate mesh: zero extent along every axis")
    offset = np.array([-box.center[0], -box.center[1], -box.min[2]])
    return ShadowScene(mesh.translated(offset), 3.0 * side)


def direction_grid(
    theta_steps: int = 10, phi_steps: int = 30, theta_max_deg: float = 45.0
) -> list[GridDirection]:
    """Light directions on a regular (theta, phi) lattice, zenith first and only once.

    The defaults give 10 polar rings of 30 azimuths (4.5 and 12 degree
    increments) plus the zenith: 301 directions.
    """
    out = [GridDirection(0.0, 0.0, np.array([0.0, 0.0, 1.0]))]
    for a in range(1, theta_steps + 1):
        theta = theta_max_deg * a / theta_steps
        for b in range(phi_steps):
            phi = 360.0 * b / phi_steps
            out.append(GridDirection(theta, phi, direction_from_angles(math.radians(theta), math.radians(phi))))
    return out


# --------------------------------------------------------------------------
# Kernels

_NJIT = dict(cache=True, error_model="numpy", fastmath=False)


@njit(**_NJIT)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(**_NJIT)
def _texel_key(seed, texel):
    return _mix64(seed ^ _mix64(np.uint64(texel) + np.uint64(0x9E3779B97F4A7C15)))


@njit(**_NJIT)
def _uniform(key, counter):
    x = _mix64(key + np.uint64(counter) * np.uint64(0x9E3779B97F4A7C15))
    return float(x >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(**_NJIT)
def _cone_dir(cx, cy, cz, cos_max, u1, u2):
    cos_a = 1.0 - u1 * (1.0 - cos_max)
    sin_a = math.sqrt(max(0.0, 1.0 - cos_a * cos_a))
    phi = 2.0 * math.pi * u2
    # orthonormal basis around (cx, cy, cz), branchless construction
    s = math.copysign(1.0, cz)
    a = -1.0 / (s + cz)
    b = cx * cy * a
    tx, ty, tz = 1.0 + s * cx * cx * a, s * b, -s * cx
    bx, by, bz = b, s + cy * cy * a, -cy
    ca = sin_a * math.cos(phi)
    sb = sin_a * math.sin(phi)
    dx = ca * tx + sb * bx + cos_a * cx
    dy = ca * ty + sb * by + cos_a * cy
    dz = ca * tz + sb * bz + cos_a * cz
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    return dx / n, dy / n, dz / n


@njit(**_NJIT)
def _cone_dirs(c, cos_max, u1, u2):
    out = np.empty((u1.shape[0], 3))
    for k in range(u1.shape[0]):
        dx, dy, dz = _cone_dir(c[0], c[1], c[2], cos_max, u1[k], u2[k])
        out[k, 0] = dx
        out[k, 1] = dy
        out[k, 2] = dz
    return out


@njit(**_NJIT)
def _occluded(ox, oy, oz, dx, dy, dz, bmin, bmax, left, right, start, count, v0, e1, e2, stack):
    """Any-hit query: True if the ray hits a triangle at t > 0."""
    # nudged so slab products never hit 0 * inf
    ix = 1.0 / (dx if dx != 0.0 else 1e-30)
    iy = 1.0 / (dy if dy != 0.0 else 1e-30)
    iz = 1.0 / (dz if dz != 0.0 else 1e-30)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        t0x = (bmin[n, 0] - ox) * ix
        t1x = (bmax[n, 0] - ox) * ix
        t0y = (bmin[n, 1] - oy) * iy
        t1y = (bmax[n, 1] - oy) * iy
        t0z = (bmin[n, 2] - oz) * iz
        t1z = (bmax[n, 2] - oz) * iz
        tmin = max(max(min(t0x, t1x), min(t0y, t1y)), max(min(t0z, t1z), 0.0))
        tmax = min(min(max(t0x, t1x), max(t0y, t1y)), max(t0z, t1z))
        if tmin > tmax:
            continue
        if left[n] >= 0:
            stack[sp] = left[n]
            stack[sp + 1] = right[n]
            sp += 2
            continue
        for k in range(start[n], start[n] + count[n]):
            # Moller-Trumbore
            px = dy * e2[k, 2] - dz * e2[k, 1]
            py = dz * e2[k, 0] - dx * e2[k, 2]
            pz = dx * e2[k, 1] - dy * e2[k, 0]
            det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
            if det == 0.0:
                continue
            inv = 1.0 / det
            sx = ox - v0[k, 0]
            sy = oy - v0[k, 1]
            sz = oz - v0[k, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1[k, 2] - sz * e1[k, 1]
            qy = sz * e1[k, 0] - sx * e1[k, 2]
            qz = sx * e1[k, 1] - sy * e1[k, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
            if t > 0.0:
                return True
    return False


@njit(parallel=True, **_NJIT)
def _trace_kernel(res, side, offset, d, cos_max, spp, seed,
                  bmin, bmax, left, right, start, count, v0, e1, e2):
    out = np.zeros(res * res)
    if left.shape[0] == 0:
        return out
    step = side / res
    for texel in prange(res * res):
        stack = np.empty(128, dtype=np.int64)
        row = texel // res
        col = texel - row * res
        ox = -0.5 * side + (col + 0.5) * step
        oy = 0.5 * side - (row + 0.5) * step
        key = _texel_key(seed, texel)
        hits = 0
        for s in range(spp):
            u1 = _uniform(key, 2 * s)
            u2 = _uniform(key, 2 * s + 1)
            dx, dy, dz = _cone_dir(d[0], d[1], d[2], cos_max, u1, u2)
            if _occluded(ox, oy, offset, dx, dy, dz, bmin, bmax, left, right,
                         start, count, v0, e1, e2, stack):
                hits += 1
        out[texel] = hits / spp
    return out


# --------------------------------------------------------------------------
# Public operations


def sample_cone(center, half_angle: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Directions uniformly distributed on the spherical cap of angular radius ``half_angle``."""
    if not 0.0 < half_angle < math.pi / 2:
        raise ValueError("half_angle must lie in (0, pi/2)")
    c = as_unit(center)
    n = 1 if size is None else int(size)
    u = rng.random((2, n))
    out = _cone_dirs(c, math.cos(half_angle), u[0], u[1])
    return out[0] if size is None else out


def set_threads(n: int | None) -> None:
    """Cap the tracer's worker threads; results do not depend on this."""
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def trace_shadow_texture(scene: ShadowScene, d, cfg: TraceConfig) -> ShadowTexture:
    d = as_unit(d)
    if d[2] <= 0.0:
        raise ValueError("light direction must point above the plane (d.z > 0)")
    b = scene.bvh
    img = _trace_kernel(
        cfg.resolution, float(scene.plane_side), scene.ray_offset, d,
        math.cos(cfg.cone_half_angle), cfg.spp, np.uint64(cfg.seed & _U64_MASK),
        b.bmin, b.bmax, b.left, b.right, b.start, b.count, b.v0, b.e1, b.e2,
    )
    return ShadowTexture(img.reshape(cfg.resolution, cfg.resolution), d)


def trace_dataset(scene: ShadowScene, cfg: TraceConfig, directions=None, progress=None) -> list[ShadowTexture]:
    """Trace one texture per direction (the 301-entry grid by default), in grid order."""
    if directions is None:
        directions = [g.d for g in direction_grid()]
    out = []
    for k, d in enumerate(directions):
        d = d.d if isinstance(d, GridDirection) else d
        out.append(trace_shadow_texture(scene, d, cfg))
        if progress is not None:
            progress(k + 1, len(directions))
    return out
