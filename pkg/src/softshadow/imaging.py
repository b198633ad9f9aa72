"""Raster and mesh primitives shared by the tracer, the shadow network and the light probe.

Images are plain numpy arrays: grayscale as ``(H, W)`` float64 with values in
[0, 1], HDR colour as ``(H, W, 3)`` float64 with nonnegative values. Row 0 is
the top row. Grayscale shadow textures store occlusion fractions, so 0 means
fully lit and 1 means fully occluded.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


class MeshError(ValueError):
    """Raised for malformed OBJ input or invalid meshes."""


def as_unit(v, tol: float = 1e-6) -> np.ndarray:
    """Return ``v`` as a float64 3-vector, normalizing it if needed.

    Raises ValueError for zero or non-finite vectors.
    """
    v = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite direction {v}")
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("zero-length direction")
    if abs(n - 1.0) > tol:
        v = v / n
    return v


def direction_from_angles(theta: float, phi: float) -> np.ndarray:
    """Unit vector for polar angle ``theta`` (from +z) and azimuth ``phi``, radians."""
    st = np.sin(theta)
    return np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


# --------------------------------------------------------------------------
# Meshes


@dataclass(frozen=True)
class AABB:
    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (N, 3) float64
    triangles: np.ndarray  # (M, 3) int64

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(v)):
            raise MeshError("mesh has non-finite vertices")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def translated(self, offset) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.triangles)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def load_obj(path) -> TriangleMesh:
    """Read the ``v``/``f`` subset of an ASCII OBJ file.

    Polygons are fan-triangulated, face indices are 1-based (negative indices
    count back from the last vertex, as OBJ allows) and ``v/vt/vn`` references
    keep only the vertex part. Zero-area triangles are dropped.
    """
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    x, y, z = (float(p) for p in parts[1:4])
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: bad vertex record") from exc
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append((x, y, z))
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for p in parts[1:]:
                    try:
                        k = int(p.split("/", 1)[0])
                    except ValueError as exc:
                        raise MeshError(f"{path}:{lineno}: bad face index {p!r}") from exc
                    if k < 0:
                        k = len(verts) + k + 1
                    if not 1 <= k <= len(verts):
                        raise MeshError(f"{path}:{lineno}: face index {p} out of range")
                    idx.append(k - 1)
                for a in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[a], idx[a + 1]))
    if not faces:
        raise MeshError(f"{path}: mesh is empty (no faces)")
    v = np.array(verts, dtype=np.float64)
    t = np.array(faces, dtype=np.int64)
    keep = triangle_areas(v, t) > 0.0
    if not keep.any():
        raise MeshError(f"{path}: every triangle is degenerate")
    return TriangleMesh(v, t[keep])


def bounding_box(mesh: TriangleMesh) -> AABB:
    used = mesh.vertices[np.unique(mesh.triangles)]
    return AABB(used.min(axis=0), used.max(axis=0))


# --------------------------------------------------------------------------
# Sampling


def bilinear_sample(img: np.ndarray, u, v):
    """Bilinearly sample a grayscale image at normalized coordinates.

    ``u`` runs along columns and ``v`` along rows; pixel ``(i, j)`` has its
    centre at ``((i + 0.5) / W, (j + 0.5) / H)``. Coordinates between the
    outermost pixel centres and the border clamp to the edge value. Accepts
    scalars or arrays of matching shape.
    """
    img = np.asarray(img, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(~((u >= 0.0) & (u <= 1.0))) or np.any(~((v >= 0.0) & (v <= 1.0))):
        raise ValueError("sample coordinates must lie in [0, 1]")
    h, w = img.shape
    x = np.clip(u * w - 0.5, 0.0, w - 1)
    y = np.clip(v * h - 0.5, 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return float(out) if out.ndim == 0 else out


def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resample a grayscale image onto a new pixel-centre grid."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v)
    return bilinear_sample(img, uu, vv)


# --------------------------------------------------------------------------
# File I/O


def _atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_pfm(path, img: np.ndarray) -> None:
    """Write a little-endian PFM (``Pf`` for grayscale, ``PF`` for RGB)."""
    img = np.asarray(img)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ImageFormatError(f"cannot store array of shape {img.shape} as PFM")
    h, w = img.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii")
    # PFM scanlines run bottom to top
    payload = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    _atomic_write_bytes(path, header + payload)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header")
    return buf[start:pos], pos


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float32 ``(H, W)`` or ``(H, W, 3)``, top row first."""
    buf = Path(path).read_bytes()
    tag, pos = _read_token(buf, 0)
    if tag == b"PF":
        channels = 3
    elif tag == b"Pf":
        channels = 1
    else:
        raise ImageFormatError(f"{path}: not a PFM file (magic {tag!r})")
    try:
        wtok, pos = _read_token(buf, pos)
        htok, pos = _read_token(buf, pos)
        stok, pos = _read_token(buf, pos)
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PFM header") from exc
    if w <= 0 or h <= 0 or scale == 0.0:
        raise ImageFormatError(f"{path}: malformed PFM header")
    pos += 1  # single whitespace byte after the scale
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(buf) - pos < 4 * count:
        raise ImageFormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].copy()


def write_pgm16(path, img: np.ndarray) -> None:
    """Write a grayscale image in [0, 1] as binary 16-bit PGM (P5, maxval 65535)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ImageFormatError("PGM holds grayscale images only")
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = img.shape
    _atomic_write_bytes(path, f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (8- or 16-bit) into float64 values in [0, 1]."""
    buf = Path(path).read_bytes()
    tag, pos = _read_token(buf, 0)
    if tag != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {tag!r})")
    tokens = []
    # header comments may sit between tokens
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos)
            continue
        tok, pos = _read_token(buf, pos)
        tokens.append(tok)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"{path}: malformed PGM header")
    if maxval == 255:
        dtype = np.uint8
    elif maxval == 65535:
        dtype = np.dtype(">u2")
    else:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1
    count = w * h
    if len(buf) - pos < count * np.dtype(dtype).itemsize:
        raise ImageFormatError(f"{path}: truncated PGM payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return data.reshape(h, w).astype(np.float64) / maxval


def write_png(path, img: np.ndarray, bits: int = 8) -> None:
    """Write grayscale (8/16-bit) or RGB (8-bit) PNG from values in [0, 1]."""
    from PIL import Image

    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 2 and bits == 16:
        pil = Image.fromarray(np.round(img * 65535.0).astype(np.uint16))
    elif img.ndim == 2 and bits == 8:
        pil = Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="L")
    elif img.ndim == 3 and img.shape[2] == 3 and bits == 8:
        pil = Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB")
    else:
        raise ImageFormatError(f"unsupported PNG layout: shape {img.shape}, {bits} bits")
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        pil.save(tmp, format="PNG")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_png(path) -> np.ndarray:
    """Read a PNG as float64 in [0, 1]: ``(H, W)`` for gray, ``(H, W, 3)`` otherwise."""
    from PIL import Image

    try:
        with Image.open(path) as pil:
            pil.load()
            if pil.mode in ("I;16", "I;16B", "I"):
                return np.asarray(pil, dtype=np.float64) / 65535.0
            if pil.mode == "L":
                return np.asarray(pil, dtype=np.float64) / 255.0
            return np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    """Dispatch on extension: .pfm, .pgm or .png."""
    ext = Path(path).suffix.lower()
    if ext == ".pfm":
        return read_pfm(path).astype(np.float64)
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".png":
        return read_png(path)
    raise ImageFormatError(f"unsupported image extension {ext!r}")


def write_image(path, img: np.ndarray) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".pfm":
        write_pfm(path, img)
    elif ext == ".pgm":
        write_pgm16(path, img)
    elif ext == ".png":
        write_png(path, img, bits=16 if np.ndim(img) == 2 else 8)
    else:
        raise ImageFormatError(f"unsupported image extension {ext!r}")


@dataclass(frozen=True)
class ShadowTexture:
    """Occlusion-fraction image together with the light direction that produced it."""

    image: np.ndarray  # (R, R) float64 in [0, 1]
    light_dir: np.ndarray  # unit 3-vector, from the plane toward the light

    @property
    def resolution(self) -> int:
        return self.image.shape[0]
