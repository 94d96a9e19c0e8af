"""File formats: PFM radiance maps, PNG previews, camera / SG-environment
JSON, VSG volume header + raw sidecar, and the scene directory layout.

PFM follows the portable-float-map convention: "PF" (color) or "Pf" (gray)
header, width/height line, negative scale for little-endian, scanlines
stored bottom to top. HDR data stays linear; PNG previews apply gamma 2.2.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .geometry import Camera, View, ViewBundle
from .sg import SGEnvironment, SGLobe
from .volume import CHANNEL_ORDER, Bounds, VSGVolume


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    """Write (H, W) or (H, W, 3) float data as a little-endian PFM."""
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)) or np.any(np.abs(data) > 3.0e38):
        raise ValueError("PFM data must be finite and fit in float32")
    data = data.astype(np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale: little endian
        f.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float64 (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        def line():
            out = b""
            while True:
                ch = f.read(1)
                if not ch:
                    raise ValueError("unexpected end of PFM header")
                if ch == b"\n":
                    return out.decode("ascii").strip()
                out += ch
        magic = line()
        if magic == "PF":
            channels = 3
        elif magic == "Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file (magic {magic!r})")
        w, h = (int(x) for x in line().split())
        scale = float(line())
        dtype = "<f4" if scale < 0.0 else ">f4"
        raw = np.frombuffer(f.read(4 * w * h * channels), dtype=dtype)
    data = raw.reshape(h, w, channels)[::-1].astype(np.float64)
    return data[..., 0] if channels == 1 else data


# ---------------------------------------------------------------------------
# PNG previews (8-bit, gamma 2.2)
# ---------------------------------------------------------------------------

def write_png(path, image: np.ndarray, gamma: float = 2.2,
              exposure: float = 1.0) -> None:
    """Write linear HDR RGB as an 8-bit gamma-encoded PNG preview."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    ldr = np.clip(exposure * img, 0.0, 1.0) ** (1.0 / gamma)
    data = (ldr * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape[:2]
    raw = b"".join(b"\x00" + data[i].tobytes() for i in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", header))
        f.write(chunk(b"IDAT", zlib.compress(raw, 6)))
        f.write(chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# Cameras and SG environments
# ---------------------------------------------------------------------------

def camera_to_dict(camera: Camera) -> dict:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "world_from_camera": {
            "rotation": camera.rotation.tolist(),
            "translation": camera.translation.tolist(),
        },
    }


def camera_from_dict(doc: dict) -> Camera:
    pose = doc["world_from_camera"]
    return Camera(fx=float(doc["fx"]), fy=float(doc["fy"]),
                  cx=float(doc["cx"]), cy=float(doc["cy"]),
                  rotation=np.asarray(pose["rotation"], dtype=np.float64),
                  translation=np.asarray(pose["translation"], dtype=np.float64))


def save_camera(path, camera: Camera) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(camera), indent=2))


def load_camera(path) -> Camera:
    return camera_from_dict(json.loads(Path(path).read_text()))


def save_sg_env(path, env: SGEnvironment) -> None:
    doc = {
        "lobes": [{"theta": lobe.axis_theta, "phi": lobe.axis_phi,
                   "sharpness": lobe.sharpness,
                   "intensity": list(lobe.intensity)} for lobe in env.lobes],
        "visibility": list(env.visibility),
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_sg_env(path) -> SGEnvironment:
    doc = json.loads(Path(path).read_text())
    lobes = tuple(SGLobe(axis_theta=float(l["theta"]), axis_phi=float(l["phi"]),
                         sharpness=float(l["sharpness"]),
                         intensity=tuple(l["intensity"])) for l in doc["lobes"])
    return SGEnvironment(lobes=lobes, visibility=tuple(doc.get("visibility", ())))


# ---------------------------------------------------------------------------
# VSG volumes: JSON header + little-endian float32 sidecar, x-major layout
# (x slowest, channel fastest; matches a C-ordered (X, Y, Z, C) array).
# ---------------------------------------------------------------------------

def save_volume(path, volume: VSGVolume) -> None:
    path = Path(path)
    binary = path.with_suffix(".bin")
    header = {
        "dims": list(volume.dims),
        "bounds": {"lo": volume.bounds.lo.tolist(), "hi": volume.bounds.hi.tolist()},
        "channel_order": list(CHANNEL_ORDER),
        "dtype": "f32",
        "layout": "x-major",
        "data": binary.name,
    }
    if np.any(np.abs(volume.voxels) > 3.0e38):
        raise ValueError("volume channels do not fit in float32")
    path.write_text(json.dumps(header, indent=2))
    binary.write_bytes(
        np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes())


def load_volume(path) -> VSGVolume:
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("dtype") != "f32" or header.get("layout") != "x-major":
        raise ValueError("unsupported volume encoding")
    if list(header["channel_order"]) != list(CHANNEL_ORDER):
        raise ValueError(f"unexpected channel order {header['channel_order']}")
    dims = tuple(int(d) for d in header["dims"])
    raw = np.frombuffer((path.parent / header["data"]).read_bytes(), dtype="<f4")
    voxels = raw.reshape(dims + (7,)).astype(np.float64)
    bounds = Bounds(lo=np.asarray(header["bounds"]["lo"], dtype=np.float64),
                    hi=np.asarray(header["bounds"]["hi"], dtype=np.float64))
    return VSGVolume(bounds=bounds, voxels=voxels)


# Surface volumes share the header + raw-sidecar format; the 10 channels are
# the confidence-weighted record [rho*I, rho*N, rho*A, rho*R].
SURFACE_CHANNEL_ORDER = ("rho_ir", "rho_ig", "rho_ib", "rho_nx", "rho_ny",
                         "rho_nz", "rho_ar", "rho_ag", "rho_ab", "rho_rough")


def save_surface_volume(path, volume) -> None:
    path = Path(path)
    binary = path.with_suffix(".bin")
    if np.any(np.abs(volume.data) > 3.0e38):
        raise ValueError("surface volume channels do not fit in float32")
    header = {
        "dims": list(volume.dims),
        "bounds": {"lo": volume.bounds.lo.tolist(), "hi": volume.bounds.hi.tolist()},
        "channel_order": list(SURFACE_CHANNEL_ORDER),
        "dtype": "f32",
        "layout": "x-major",
        "data": binary.name,
    }
    path.write_text(json.dumps(header, indent=2))
    binary.write_bytes(np.ascontiguousarray(volume.data, dtype="<f4").tobytes())


def load_surface_volume(path):
    from .surface import SurfaceVolume
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("dtype") != "f32" or header.get("layout") != "x-major":
        raise ValueError("unsupported volume encoding")
    if list(header["channel_order"]) != list(SURFACE_CHANNEL_ORDER):
        raise ValueError(f"unexpected channel order {header['channel_order']}")
    dims = tuple(int(d) for d in header["dims"])
    raw = np.frombuffer((path.parent / header["data"]).read_bytes(), dtype="<f4")
    data = raw.reshape(dims + (10,)).astype(np.float64)
    bounds = Bounds(lo=np.asarray(header["bounds"]["lo"], dtype=np.float64),
                    hi=np.asarray(header["bounds"]["hi"], dtype=np.float64))
    # rho is recoverable: the stored normal block is rho * (unit normal)
    rho = np.linalg.norm(data[..., 3:6], axis=-1)
    return SurfaceVolume(bounds=bounds, data=data, rho=rho)


# ---------------------------------------------------------------------------
# Scene directories: im_*.pfm, depth_*.pfm, conf_*.pfm, cam_*.json plus
# gt_albedo_*, gt_rough_*, gt_normal_*, gt_env_* ground truth. Per-pixel env
# maps are tiled into one PFM of shape (H * H_a, W * W_a).
# ---------------------------------------------------------------------------

def tile_env_maps(envs: np.ndarray) -> np.ndarray:
    """(H, W, Ha, Wa, 3) per-pixel env maps -> (H * Ha, W * Wa, 3) tiling."""
    h, w, ha, wa, _ = envs.shape
    return envs.transpose(0, 2, 1, 3, 4).reshape(h * ha, w * wa, 3)


def untile_env_maps(tiled: np.ndarray, ha: int, wa: int) -> np.ndarray:
    """Inverse of ``tile_env_maps``."""
    rows, cols, _ = tiled.shape
    h, w = rows // ha, cols // wa
    return tiled.reshape(h, ha, w, wa, 3).transpose(0, 2, 1, 3, 4)


def save_scene(path, bundle: ViewBundle, gt: dict | None = None) -> None:
    """Write a scene directory; ``gt`` may hold per-view albedo/rough/normal
    maps and tiled env maps keyed 'albedo', 'rough', 'normal', 'env'."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for k, view in enumerate(bundle.views):
        write_pfm(path / f"im_{k}.pfm", view.image)
        write_pfm(path / f"depth_{k}.pfm", view.depth)
        write_pfm(path / f"conf_{k}.pfm", view.confidence)
        save_camera(path / f"cam_{k}.json", view.camera)
    meta = {"num_views": len(bundle.views), "target_index": bundle.target_index}
    if gt:
        for k in range(len(bundle.views)):
            if "albedo" in gt:
                write_pfm(path / f"gt_albedo_{k}.pfm", gt["albedo"][k])
            if "rough" in gt:
                write_pfm(path / f"gt_rough_{k}.pfm", gt["rough"][k])
            if "normal" in gt:
                write_pfm(path / f"gt_normal_{k}.pfm", gt["normal"][k])
        if "env" in gt:  # target view only; large
            envs = gt["env"]
            meta["env_angular"] = [envs.shape[2], envs.shape[3]]
            write_pfm(path / "gt_env_target.pfm", tile_env_maps(envs))
    (path / "scene.json").write_text(json.dumps(meta, indent=2))


def load_scene(path) -> tuple[ViewBundle, dict]:
    """Read a scene directory back into a bundle and a ground-truth dict."""
    path = Path(path)
    meta = json.loads((path / "scene.json").read_text())
    views = []
    gt: dict = {"albedo": [], "rough": [], "normal": []}
    for k in range(int(meta["num_views"])):
        views.append(View(image=read_pfm(path / f"im_{k}.pfm"),
                          depth=read_pfm(path / f"depth_{k}.pfm"),
                          confidence=read_pfm(path / f"conf_{k}.pfm"),
                          camera=load_camera(path / f"cam_{k}.json")))
        for key, stem in (("albedo", "gt_albedo"), ("rough", "gt_rough"),
                          ("normal", "gt_normal")):
            f = path / f"{stem}_{k}.pfm"
            if f.exists():
                gt[key].append(read_pfm(f))
    gt = {k: np.stack(v) for k, v in gt.items() if v}
    env_file = path / "gt_env_target.pfm"
    if env_file.exists():
        ha, wa = (int(x) for x in meta["env_angular"])
        gt["env"] = untile_env_maps(read_pfm(env_file), ha, wa)
    bundle = ViewBundle(views=views, target_index=int(meta["target_index"]))
    return bundle, gt
