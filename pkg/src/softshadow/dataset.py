"""Directory layout for traced (or externally rendered) shadow texture sets.

::

    <dir>/manifest.json
    <dir>/textures/000.pfm   # or .pgm (16-bit)
    ...

Each manifest entry names its file and light direction; the trace settings
are recorded alongside for provenance. Only ``file`` and ``d`` are required
when reading, so textures rendered elsewhere can be dropped in.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .imaging import ShadowTexture, as_unit, read_image, write_pfm, write_pgm16

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


def write_dataset(out_dir, textures: list[ShadowTexture], angles=None, trace_info: dict | None = None,
                  fmt: str = "pfm") -> Path:
    """Write textures and manifest, replacing ``out_dir`` atomically.

    An existing ``out_dir`` is only replaced if it is empty or holds a
    previous dataset (has a manifest).
    """
    if fmt not in ("pfm", "pgm"):
        raise ValueError("format must be 'pfm' or 'pgm'")
    out_dir = Path(out_dir)
    if out_dir.exists():
        if not out_dir.is_dir():
            raise DatasetError(f"{out_dir} exists and is not a directory")
        if any(out_dir.iterdir()) and not (out_dir / MANIFEST).exists():
            raise DatasetError(f"{out_dir} is not empty and holds no dataset manifest; refusing to overwrite")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    info = dict(trace_info or {})
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        (stage / "textures").mkdir()
        entries = []
        for k, tex in enumerate(textures):
            name = f"textures/{k:03d}.{fmt}"
            if fmt == "pfm":
                write_pfm(stage / name, tex.image)
            else:
                write_pgm16(stage / name, tex.image)
            d = [float(x) for x in tex.light_dir]
            if angles is not None:
                theta, phi = angles[k]
            else:
                theta = math.degrees(math.acos(max(-1.0, min(1.0, d[2]))))
                phi = math.degrees(math.atan2(d[1], d[0])) % 360.0
            entries.append({"file": name, "d": d, "theta_deg": theta, "phi_deg": phi,
                            "resolution": int(tex.image.shape[0]), **info})
        manifest = {"format_version": FORMAT_VERSION, "count": len(entries), **info, "textures": entries}
        (stage / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
        os.chmod(stage, 0o755)
        if out_dir.exists():
            old = out_dir.with_name(f".{out_dir.name}.old{os.getpid()}")
            os.replace(out_dir, old)
            os.replace(stage, out_dir)
            shutil.rmtree(old)
        else:
            os.replace(stage, out_dir)
    finally:
        if stage.exists():
            shutil.rmtree(stage)
    return out_dir


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"{path} not found") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc.get("textures"), list) or not doc["textures"]:
        raise DatasetError(f"{path}: manifest lists no textures")
    return doc


def read_dataset(data_dir) -> list[ShadowTexture]:
    data_dir = Path(data_dir)
    doc = read_manifest(data_dir)
    out = []
    for k, entry in enumerate(doc["textures"]):
        try:
            img = read_image(data_dir / entry["file"])
            d = as_unit(entry["d"])
        except (KeyError, OSError, ValueError) as exc:
            raise DatasetError(f"manifest entry {k}: {exc}") from exc
        if img.ndim != 2 or img.shape[0] != img.shape[1]:
            raise DatasetError(f"manifest entry {k}: texture must be square grayscale, got {img.shape}")
        res = entry.get("resolution")
        if res is not None and int(res) != img.shape[0]:
            raise DatasetError(f"manifest entry {k}: resolution {res} does not match image {img.shape[0]}")
        out.append(ShadowTexture(np.clip(img.astype(np.float64), 0.0, 1.0), d))
    if len({t.image.shape for t in out}) != 1:
        raise DatasetError("textures do not share one resolution")
    return out
