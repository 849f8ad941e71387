"""Image buffers, PPM I/O, bilinear sampling, and PSNR.

Images hold row-major float values in [0, 1] with shape (H, W, C).  PPM
(P6, 8-bit) is the mandatory interchange format because its round trip is
trivially bit-exact; multi-channel stacks are stored as several PPM/PGM
files referenced by a small JSON manifest.
"""

from __future__ import annotations

import json
import os

import numpy as np


class ImageBuffer:
    """Row-major float image, values in [0, 1]."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"bad image shape {data.shape}")
        self.data = data

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def clamped(self):
        return ImageBuffer(np.clip(self.data, 0.0, 1.0))


def read_ppm(path):
    """Read a binary P6 (RGB) or P5 (grey) file with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic = fields[0]
    if magic not in (b"P6", b"P5"):
        raise ValueError(f"unsupported PPM magic {magic!r} in {path}")
    width, height, maxval = (int(f) for f in fields[1:4])
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    arr = raw.reshape(height, width, channels).astype(np.float32) / 255.0
    return ImageBuffer(arr)


def write_ppm(img, path):
    """Write 8-bit P6 (3 channels) or P5 (1 channel)."""
    if img.channels == 3:
        magic = b"P6"
    elif img.channels == 1:
        magic = b"P5"
    else:
        raise ValueError(f"PPM stores 1 or 3 channels, image has "
                         f"{img.channels}")
    codes = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(codes.tobytes())


def read_image_stack(manifest_path):
    """Multi-channel stack: JSON manifest listing component image files."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    parts = [read_ppm(os.path.join(base, name))
             for name in manifest["files"]]
    data = np.concatenate([p.data for p in parts], axis=2)
    return ImageBuffer(data)


def write_image_stack(img, manifest_path, prefix="channels"):
    """Split a k-channel image into 3/1-channel PPM files plus a manifest."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    names = []
    start = 0
    index = 0
    while start < img.channels:
        take = 3 if img.channels - start >= 3 else 1
        part = ImageBuffer(img.data[:, :, start:start + take])
        ext = "ppm" if take == 3 else "pgm"
        name = f"{prefix}_{index}.{ext}"
        write_ppm(part, os.path.join(base, name))
        names.append(name)
        start += take
        index += 1
    with open(manifest_path, "w") as fh:
        json.dump({"files": names}, fh, indent=2)


def bilinear_sample(img, uv):
    """Vertex-centered bilinear interpolation; uv in [0, 1]^2 (clamped).

    uv axis 0 runs along width, axis 1 along height.  Accepts (2,) or
    (B, 2); returns (C,) or (B, C).
    """
    uv = np.asarray(uv, dtype=np.float64)
    squeeze = uv.ndim == 1
    uv2 = np.clip(np.atleast_2d(uv), 0.0, 1.0)
    h, w, c = img.data.shape
    out = np.empty((uv2.shape[0], c), dtype=np.float32)
    u = uv2[:, 0] * (w - 1)
    v = uv2[:, 1] * (h - 1)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    j0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = (u - i0)[:, None]
    fv = (v - j0)[:, None]
    d = img.data
    out = ((1 - fu) * (1 - fv) * d[j0, i0]
           + fu * (1 - fv) * d[j0, i1]
           + (1 - fu) * fv * d[j1, i0]
           + fu * fv * d[j1, i1]).astype(np.float32)
    return out[0] if squeeze else out


def resize_bilinear(img, width, height):
    """Resample to a new resolution with vertex-centered bilinear lookups."""
    us = np.linspace(0.0, 1.0, width) if width > 1 else np.array([0.0])
    vs = np.linspace(0.0, 1.0, height) if height > 1 else np.array([0.0])
    uu, vv = np.meshgrid(us, vs)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    vals = bilinear_sample(img, uv)
    return ImageBuffer(vals.reshape(height, width, img.channels))


PSNR_INF = float("inf")


def psnr(a, b):
    """10 log10(1 / MSE) over all channels jointly, on the [0, 1] scale.

    Identical images report +inf.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    mse = float(np.mean((a.data.astype(np.float64)
                         - b.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * np.log10(1.0 / mse)
