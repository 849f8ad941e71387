"""N-dimensional differentiable lookup arrays.

A grid array stores per-vertex, multi-channel values on a regular lattice
over the unit hypercube and answers queries by multilinear interpolation of
the 2^d enclosing vertices.  Cell values optionally pass through a bounding
nonlinearity (triangle wave or sinusoid) before interpolation, which keeps
the output in [0, 1] so it can feed the coordinate input of another array.

Coordinates use the vertex-centered convention u_j = x_j * (N_j - 1): a
query at x_j = i / (N_j - 1) returns the (post-nonlinearity) vertex value
exactly, and an identity-ramp-initialized array is an exact identity map.

All query entry points accept either a single coordinate of shape (d,) or a
batch of shape (B, d).
"""

from __future__ import annotations

import numpy as np

NONLINEARITIES = ("none", "triangle", "sine")


class GridArray:
    """Multi-channel lookup array over [0, 1]^d, d in 1..4.

    cells are stored row-major with interleaved channels: shape
    (*resolution, channels).  A quantized array additionally carries u8
    codes plus per-channel affine (offset, scale); its float cells are the
    dequantized values.
    """

    def __init__(self, shape, channels, nonlinearity="none", sine_n=1.0,
                 cells=None, dtype=None):
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        if not 1 <= len(shape) <= 4:
            raise ValueError(f"dims must be in 1..4, got {len(shape)}")
        if any(n < 2 for n in shape):
            raise ValueError(f"every axis needs >= 2 vertices, got {shape}")
        if channels < 1:
            raise ValueError("channels must be >= 1")
        if nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
        self.shape = shape
        self.channels = int(channels)
        self.nonlinearity = nonlinearity
        self.sine_n = float(sine_n)
        if cells is None:
            self.cells = np.zeros(shape + (channels,),
                                  dtype=dtype or np.float32)
        else:
            # Preserve the caller's precision unless told otherwise.
            cells = np.asarray(cells, dtype=dtype)
            if cells.size != int(np.prod(shape)) * channels:
                raise ValueError(
                    f"cells size {cells.size} != prod(shape)*channels "
                    f"{int(np.prod(shape)) * channels}")
            self.cells = cells.reshape(shape + (channels,))
        # Set by quantize8 on the returned copy.
        self.codes = None
        self.qoffset = None
        self.qscale = None

    @property
    def dims(self):
        return len(self.shape)

    @property
    def quantized(self):
        return self.codes is not None

    def copy(self):
        out = GridArray(self.shape, self.channels, self.nonlinearity,
                        self.sine_n, cells=self.cells.copy())
        if self.quantized:
            out.codes = self.codes.copy()
            out.qoffset = self.qoffset.copy()
            out.qscale = self.qscale.copy()
        return out

    def zeros_grad(self):
        """Fresh gradient buffer matching this array's cells."""
        return np.zeros_like(self.cells)

    def __repr__(self):
        q = ", u8" if self.quantized else ""
        return (f"GridArray(shape={self.shape}, channels={self.channels}, "
                f"nonlinearity={self.nonlinearity!r}{q})")


def apply_nonlinearity(tag, v, sine_n=1.0):
    """Bounding nonlinearity F applied to cell values before interpolation.

    triangle: F(v) = 1 - |mod(v, 2) - 1|, period 2, peak 1 at input 1.
    sine(n):  F(v) = (1 + sin(n v)) / 2.
    """
    v = np.asarray(v)
    if tag == "none":
        return v
    if tag == "triangle":
        return 1.0 - np.abs(np.mod(v, 2.0) - 1.0)
    if tag == "sine":
        return (1.0 + np.sin(sine_n * v)) / 2.0
    raise ValueError(f"unknown nonlinearity {tag!r}")


def nonlinearity_deriv(tag, v, sine_n=1.0):
    """Derivative F'. Triangle-wave breakpoints use the rising-segment
    slope (+1 at both mod-2 values 0 and 1), a fixed measure-zero choice."""
    v = np.asarray(v)
    if tag == "none":
        return np.ones_like(v)
    if tag == "triangle":
        m = np.mod(v, 2.0)
        return np.where(m <= 1.0, 1.0, -1.0).astype(v.dtype, copy=False)
    if tag == "sine":
        return sine_n * np.cos(sine_n * v) / 2.0
    raise ValueError(f"unknown nonlinearity {tag!r}")


def _check_coords(array, x):
    """Validate and batch the query coordinates; returns (x2d, squeeze)."""
    x = np.asarray(x)
    squeeze = x.ndim == 1
    x2d = np.atleast_2d(x)
    if x2d.shape[-1] != array.dims:
        raise ValueError(
            f"coordinate dims {x2d.shape[-1]} != array dims {array.dims}")
    if np.isnan(x2d).any():
        raise ValueError("NaN in query coordinates")
    return x2d, squeeze


def _vertex_strides(shape):
    strides = np.ones(len(shape), dtype=np.int64)
    for j in range(len(shape) - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    return strides


def _locate(array, x2d):
    """Lower corner index and per-axis fraction for each query."""
    res = np.asarray(array.shape, dtype=x2d.dtype)
    xc = np.clip(x2d, 0.0, 1.0)
    u = xc * (res - 1)
    i0 = np.minimum(np.floor(u), res - 2).astype(np.int64)
    i0 = np.maximum(i0, 0)
    f = u - i0
    return i0, f


def interpolate(array, x):
    """Multilinear blend of the 2^d enclosing post-nonlinearity vertex values.

    Returns shape (C,) for a single coordinate, (B, C) for a batch.
    """
    x2d, squeeze = _check_coords(array, x)
    i0, f = _locate(array, x2d)
    d = array.dims
    strides = _vertex_strides(array.shape)
    flat = array.cells.reshape(-1, array.channels)
    out = np.zeros((x2d.shape[0], array.channels), dtype=flat.dtype)
    for b in range(1 << d):
        w = None
        idx = np.zeros(x2d.shape[0], dtype=np.int64)
        for j in range(d):
            bit = (b >> j) & 1
            wj = f[:, j] if bit else 1.0 - f[:, j]
            w = wj if w is None else w * wj
            idx += (i0[:, j] + bit) * strides[j]
        vals = apply_nonlinearity(array.nonlinearity, flat[idx], array.sine_n)
        out += w[:, None] * vals
    return out[0] if squeeze else out


def grad_coords(array, x):
    """d(output)/d(coordinate): shape (C, d) per query, (B, C, d) batched.

    Includes the (N_j - 1) chain factor; components clamped out of [0, 1]
    get a zero derivative.
    """
    x2d, squeeze = _check_coords(array, x)
    i0, f = _locate(array, x2d)
    d = array.dims
    res = np.asarray(array.shape)
    strides = _vertex_strides(array.shape)
    flat = array.cells.reshape(-1, array.channels)
    grad = np.zeros((x2d.shape[0], array.channels, d), dtype=flat.dtype)
    inside = ((x2d >= 0.0) & (x2d <= 1.0)).astype(flat.dtype)
    for b in range(1 << d):
        idx = np.zeros(x2d.shape[0], dtype=np.int64)
        wcols = []
        for j in range(d):
            bit = (b >> j) & 1
            wcols.append(f[:, j] if bit else 1.0 - f[:, j])
            idx += (i0[:, j] + bit) * strides[j]
        vals = apply_nonlinearity(array.nonlinearity, flat[idx], array.sine_n)
        for j in range(d):
            bit = (b >> j) & 1
            dw = np.ones(x2d.shape[0], dtype=flat.dtype)
            for k in range(d):
                if k != j:
                    dw = dw * wcols[k]
            sign = 1.0 if bit else -1.0
            dw = dw * (sign * (res[j] - 1)) * inside[:, j]
            grad[:, :, j] += dw[:, None] * vals
    return grad[0] if squeeze else grad


def grad_cells(array, x, upstream, out):
    """Accumulate dL/d(cells) into ``out`` for upstream = dL/d(output).

    Each query touches its 2^d enclosing vertices with weight
    alpha_i * F'(c[i]).  ``out`` must have the array's cell shape.
    """
    x2d, squeeze = _check_coords(array, x)
    upstream = np.atleast_2d(np.asarray(upstream))
    if upstream.shape != (x2d.shape[0], array.channels):
        raise ValueError(
            f"upstream shape {upstream.shape} != "
            f"({x2d.shape[0]}, {array.channels})")
    if out.shape != array.cells.shape:
        raise ValueError(
            f"gradient buffer shape {out.shape} != cells {array.cells.shape}")
    i0, f = _locate(array, x2d)
    d = array.dims
    strides = _vertex_strides(array.shape)
    flat = array.cells.reshape(-1, array.channels)
    out_flat = out.reshape(-1, array.channels)
    n_vert = out_flat.shape[0]
    for b in range(1 << d):
        w = None
        idx = np.zeros(x2d.shape[0], dtype=np.int64)
        for j in range(d):
            bit = (b >> j) & 1
            wj = f[:, j] if bit else 1.0 - f[:, j]
            w = wj if w is None else w * wj
            idx += (i0[:, j] + bit) * strides[j]
        fprime = nonlinearity_deriv(array.nonlinearity, flat[idx],
                                    array.sine_n)
        contrib = (w[:, None] * fprime) * upstream
        for c in range(array.channels):
            out_flat[:, c] += np.bincount(
                idx, weights=contrib[:, c], minlength=n_vert
            ).astype(out_flat.dtype, copy=False)
    del squeeze


def init_identity_ramp(array):
    """Initialize so interpolation is the identity map on [0, 1]^d.

    Channel m stores the coordinate along axis m mod d; with more channels
    than dims the uv-ramp repeats (e.g. (x, y, x, y) for 2D, 4 channels).
    """
    if array.nonlinearity == "sine":
        raise ValueError("identity ramp needs an identity-preserving "
                         "nonlinearity (none or triangle)")
    ramps = [np.linspace(0.0, 1.0, n, dtype=array.cells.dtype)
             for n in array.shape]
    grids = np.meshgrid(*ramps, indexing="ij")
    for m in range(array.channels):
        array.cells[..., m] = grids[m % array.dims]


def bake_nonlinearity(array):
    """Fold F into the stored cells; the result interpolates identically
    with nonlinearity 'none'."""
    if array.nonlinearity == "none":
        raise ValueError("array has no nonlinearity to bake")
    baked = apply_nonlinearity(array.nonlinearity, array.cells, array.sine_n)
    return GridArray(array.shape, array.channels, "none",
                     cells=baked.astype(array.cells.dtype))


def quantize8(array, range_01=None):
    """8-bit quantization: codes q = round((v - offset) / scale * 255).

    Periodic-nonlinearity arrays are baked first and use the fixed [0, 1]
    range; unbounded arrays use a per-channel affine min/max range.  A
    degenerate channel (max == min) stores all-zero codes with offset = v.
    """
    src = array
    if src.nonlinearity != "none":
        src = bake_nonlinearity(src)
        if range_01 is None:
            range_01 = True
    if range_01 is None:
        range_01 = False
    flat = src.cells.reshape(-1, src.channels).astype(np.float64)
    if range_01:
        offset = np.zeros(src.channels, dtype=np.float32)
        scale = np.ones(src.channels, dtype=np.float32)
    else:
        lo = flat.min(axis=0)
        hi = flat.max(axis=0)
        offset = lo.astype(np.float32)
        scale = (hi - lo).astype(np.float32)
    safe = np.where(scale > 0, scale, 1.0)
    codes = np.rint((flat - offset) / safe * 255.0)
    codes = np.clip(codes, 0, 255).astype(np.uint8)
    codes[:, scale == 0] = 0
    offset = np.where(scale == 0, flat[0].astype(np.float32), offset)
    deq = (offset + scale * (codes.astype(np.float32) / 255.0))
    out = GridArray(src.shape, src.channels, "none",
                    cells=deq.reshape(src.cells.shape))
    out.codes = codes.reshape(src.cells.shape)
    out.qoffset = offset
    out.qscale = scale
    return out
