"""File formats.

* Rasters: little-endian float32, row-major, with a JSON sidecar
  ``<name>.json`` holding ``{"width", "height", "channels", "units"}``.
* Images: 8-bit PNG, read back as floats in ``[0, 1]``.
* Scenes: a directory with ``scene.json`` plus per-frame rasters and PNGs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation
from .geometry import CameraIntrinsics, RigidTransform

RASTER_SUFFIX = ".f32"


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_raster(path, values, units: str = "m") -> Path:
    """Write ``(H, W)`` or ``(H, W, C)`` values and their sidecar."""
    path = Path(path)
    a = np.asarray(values, dtype="<f4")
    if a.ndim not in (2, 3):
        raise ContractViolation("rasters must be (height, width) or (height, width, channels)")
    channels = 1 if a.ndim == 2 else a.shape[2]
    path.write_bytes(np.ascontiguousarray(a).tobytes())
    meta = {"width": int(a.shape[1]), "height": int(a.shape[0]), "channels": int(channels), "units": units}
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def read_raster(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    h, w, c = int(meta["height"]), int(meta["width"]), int(meta.get("channels", 1))
    a = np.frombuffer(path.read_bytes(), dtype="<f4")
    if a.size != h * w * c:
        raise ContractViolation(f"{path}: {a.size} values, sidecar says {h}x{w}x{c}")
    a = a.astype(float).reshape((h, w) if c == 1 else (h, w, c))
    return a


def write_png(path, img) -> None:
    a = np.clip(np.asarray(img, float), 0.0, 1.0)
    Image.fromarray(np.round(a * 255).astype(np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    a = np.asarray(Image.open(path).convert("RGB"), dtype=float) / 255.0
    return a


def read_image(path) -> np.ndarray:
    """PNG or float raster, by extension."""
    path = Path(path)
    return read_raster(path) if path.suffix == RASTER_SUFFIX else read_png(path)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# scenes


def save_scene(scene, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, (img, depth) in enumerate(zip(scene.frames, scene.gt_depth)):
        write_png(d / f"frame_{t:02d}.png", img)
        write_raster(d / f"frame_{t:02d}{RASTER_SUFFIX}", img, units="1")
        write_raster(d / f"depth_{t:02d}{RASTER_SUFFIX}", depth)
    write_json(d / "scene.json", {
        "n_frames": scene.n_frames,
        "intrinsics": scene.intrinsics.to_dict(),
        "poses": [p.to_dict() for p in scene.gt_poses],
        "seed": scene.seed,
        "spec": scene.spec,
    })
    return d


def load_scene(directory):
    from .synth import Scene

    d = Path(directory)
    meta = read_json(d / "scene.json")
    n = int(meta["n_frames"])
    frames, depths = [], []
    for t in range(n):
        raw = d / f"frame_{t:02d}{RASTER_SUFFIX}"
        frames.append(read_raster(raw) if raw.exists() else read_png(d / f"frame_{t:02d}.png"))
        depths.append(read_raster(d / f"depth_{t:02d}{RASTER_SUFFIX}"))
    return Scene(frames, depths, [RigidTransform.from_dict(p) for p in meta["poses"]],
                 CameraIntrinsics.from_dict(meta["intrinsics"]), meta.get("seed"), meta.get("spec", {}))


def save_distributions(dists, directory, prefix: str = "") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, dist in enumerate(dists):
        paths.append(write_raster(d / f"{prefix}mean_{t:02d}{RASTER_SUFFIX}", dist.mean))
        paths.append(write_raster(d / f"{prefix}std_{t:02d}{RASTER_SUFFIX}", dist.std))
    return paths


def load_distributions(directory, prefix: str = "") -> list:
    from .depthdist import DepthDistribution

    d = Path(directory)
    out = []
    t = 0
    while (d / f"{prefix}mean_{t:02d}{RASTER_SUFFIX}").exists():
        out.append(DepthDistribution(read_raster(d / f"{prefix}mean_{t:02d}{RASTER_SUFFIX}"),
                                     read_raster(d / f"{prefix}std_{t:02d}{RASTER_SUFFIX}")))
        t += 1
    if not out:
        raise ContractViolation(f"no depth distributions found in {d}")
    return out
