"""Raster and tabular I/O: PFM float maps, PNG previews and label maps,
site CSVs, and canonical JSON with config hashing.

PFM follows the portable-float-map convention: `Pf` (1 channel) or `PF`
(3 channels), a negative scale for little-endian data, rows stored
bottom-to-top.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image


class FormatError(Exception):
    pass


def write_pfm(path, data):
    """Write a (H, W) or (3, H, W) float array as little-endian PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        tag = b"Pf"
        h, w = data.shape
        body = np.flipud(data)
    elif data.ndim == 3 and data.shape[0] == 3:
        tag = b"PF"
        h, w = data.shape[1:]
        body = np.flipud(np.moveaxis(data, 0, -1))
    else:
        raise FormatError(f"expected (H, W) or (3, H, W), got {data.shape}")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(body, dtype="<f4").tobytes())


def read_pfm(path):
    """Read a PFM file; returns (H, W) or (3, H, W) float32."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise FormatError(f"not a PFM file: header {tag!r}")
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        nchan = 3 if tag == b"PF" else 1
        dt = "<f4" if scale < 0 else ">f4"
        buf = f.read(w * h * nchan * 4)
    arr = np.frombuffer(buf, dtype=dt).reshape(h, w, nchan)
    arr = np.flipud(arr).astype(np.float32)
    if nchan == 1:
        return arr[:, :, 0].copy()
    return np.moveaxis(arr, -1, 0).copy()


def write_png_preview(path, data, tone="sqrt"):
    """8-bit grayscale or RGB preview with sqrt or log tone mapping.

    The tone flag should also be encoded in the file name by the caller.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        data = np.moveaxis(data, 0, -1)
    top = data.max()
    norm = data / top if top > 0 else data
    if tone == "sqrt":
        mapped = np.sqrt(np.clip(norm, 0.0, 1.0))
    elif tone == "log":
        mapped = np.log1p(1e4 * np.clip(norm, 0.0, 1.0)) / np.log1p(1e4)
    elif tone == "linear":
        mapped = np.clip(norm, 0.0, 1.0)
    else:
        raise FormatError(f"unknown tone mapping {tone!r}")
    img = (mapped * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img).save(path)


def write_label_png(path, labels):
    """Label map as 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 65535:
        raise FormatError("labels must fit in uint16")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_label_png(path):
    return np.array(Image.open(path), dtype=np.int32)


def read_png_image(path, gamma=1.0):
    """Load an 8/16-bit PNG as linear-intensity planes (C, H, W) in [0, 1].

    `gamma` declares the encoding of the file; 1.0 means already linear.
    """
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    elif arr.dtype in (np.uint16, np.int32):
        arr = arr.astype(np.float64) / 65535.0
    else:
        arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.moveaxis(arr[:, :, :3], -1, 0)
    if gamma != 1.0:
        arr = arr ** gamma
    return arr


def write_png_image(path, planes, bitdepth=16):
    """Save (C, H, W) linear planes in [0, 1] as 8- or 16-bit PNG."""
    planes = np.clip(np.asarray(planes, dtype=np.float64), 0.0, 1.0)
    if planes.ndim == 3:
        img = np.moveaxis(planes, 0, -1)
        if img.shape[-1] == 1:
            img = img[:, :, 0]
    else:
        img = planes
    if bitdepth == 8:
        Image.fromarray((img * 255.0 + 0.5).astype(np.uint8)).save(path)
    elif bitdepth == 16:
        if img.ndim == 3:
            raise FormatError("16-bit PNG output supports grayscale only")
        Image.fromarray((img * 65535.0 + 0.5).astype(np.uint16)).save(path)
    else:
        raise FormatError(f"bitdepth must be 8 or 16, got {bitdepth}")


def write_sites_csv(path, sites):
    with open(path, "w") as f:
        f.write("index,x_m,y_m\n")
        for s in sites:
            f.write(f"{s.index},{s.x!r},{s.y!r}\n")


def read_sites_csv(path):
    from .geometry import Site
    sites = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "index,x_m,y_m":
            raise FormatError(f"unexpected sites CSV header: {header!r}")
        for line in f:
            idx, x, y = line.strip().split(",")
            sites.append(Site(x=float(x), y=float(y), index=int(idx)))
    return sites


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict) -> str:
    """Hex digest covering every parameter that affects results."""
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
