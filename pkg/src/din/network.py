"""Two-stage indirection networks, byte-budget layout search, model files.

A network is a set of primary arrays whose (bounded) output channels are
wired, one channel per axis, into the coordinate input of a single cascaded
array.  The layout solvers pick array resolutions under a byte budget with
the alignment constraints N_p % 8 == 0 and N_c % 4 == 0, scanning N_c and
minimizing |target_compression - achieved|.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grids import GridArray, grad_cells, grad_coords, interpolate

MAGIC = b"DIN1"
FORMAT_VERSION = 1

_NL_IDS = {"none": 0, "triangle": 1, "sine": 2}
_NL_NAMES = {v: k for k, v in _NL_IDS.items()}


class ConfigError(ValueError):
    """Bad network wiring or run configuration."""


class InfeasibleLayoutError(ValueError):
    """No array sizes satisfy the budget constraints."""


class FormatError(ValueError):
    """Malformed model file; carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DInNetwork:
    """Primary arrays feeding one cascaded array.

    wiring lists, per cascaded axis, the (primary index, channel index)
    providing that coordinate.  Every primary output channel must be wired
    exactly once, and primaries must carry a periodic nonlinearity so their
    outputs are valid coordinates.
    """

    def __init__(self, primaries, cascaded, wiring):
        self.primaries = list(primaries)
        self.cascaded = cascaded
        self.wiring = [(int(p), int(c)) for p, c in wiring]
        self._validate()

    def _validate(self):
        if len(self.wiring) != self.cascaded.dims:
            raise ConfigError(
                f"wiring covers {len(self.wiring)} axes, cascaded has "
                f"{self.cascaded.dims}")
        seen = set()
        for p, c in self.wiring:
            if not 0 <= p < len(self.primaries):
                raise ConfigError(f"wiring references primary {p}")
            if not 0 <= c < self.primaries[p].channels:
                raise ConfigError(f"wiring references channel {c} of "
                                  f"primary {p}")
            if (p, c) in seen:
                raise ConfigError(f"primary output ({p}, {c}) wired twice")
            seen.add((p, c))
        total = sum(a.channels for a in self.primaries)
        if len(seen) != total:
            raise ConfigError(
                f"{total} primary channels but only {len(seen)} wired")
        for i, a in enumerate(self.primaries):
            if a.nonlinearity == "none":
                # Baked/quantized primaries lose their nonlinearity tag but
                # must still emit valid coordinates.
                lo = float(a.cells.min())
                hi = float(a.cells.max())
                if lo < -1e-6 or hi > 1.0 + 1e-6:
                    raise ConfigError(
                        f"primary {i} has no bounding nonlinearity and "
                        f"cells outside [0, 1] ({lo:g}..{hi:g})")

    def arrays(self):
        return self.primaries + [self.cascaded]

    def zeros_grads(self):
        return [a.zeros_grad() for a in self.arrays()]


def _cascade_coord(net, primary_outs):
    cols = [primary_outs[p][:, c] for p, c in net.wiring]
    return np.stack(cols, axis=1)


def forward(net, inputs):
    """Evaluate the indirection: primaries -> wired coordinate -> cascaded.

    inputs is one (B, d_i) coordinate batch per primary.  Returns (B, k).
    """
    if len(inputs) != len(net.primaries):
        raise ConfigError(f"{len(inputs)} input batches for "
                          f"{len(net.primaries)} primaries")
    primary_outs = [interpolate(a, x)
                    for a, x in zip(net.primaries, inputs)]
    y = _cascade_coord(net, primary_outs)
    return interpolate(net.cascaded, y)


def backward(net, inputs, upstream, grads):
    """Accumulate dL/d(cells) for every array given upstream = dL/d(output).

    grads holds one buffer per array in ``net.arrays()`` order (primaries
    then cascaded).  Intermediates are recomputed.
    """
    if len(grads) != len(net.primaries) + 1:
        raise ConfigError("need one gradient buffer per array")
    primary_outs = [interpolate(a, x)
                    for a, x in zip(net.primaries, inputs)]
    y = _cascade_coord(net, primary_outs)
    grad_cells(net.cascaded, y, upstream, grads[-1])
    # Chain into the cascaded coordinate, then back through each primary.
    dody = grad_coords(net.cascaded, y)           # (B, k, d_casc)
    gy = np.einsum("bk,bkd->bd", upstream, dody)  # (B, d_casc)
    ups = [np.zeros((y.shape[0], a.channels), dtype=gy.dtype)
           for a in net.primaries]
    for axis, (p, c) in enumerate(net.wiring):
        ups[p][:, c] += gy[:, axis]
    for a, x, u, g in zip(net.primaries, inputs, ups, grads):
        grad_cells(a, x, u, g)


@dataclass
class Layout:
    """Resolved array resolutions under a byte budget.

    achieved_bytes counts one byte per stored channel value, matching the
    8-bit inference representation; float-mode sizes are 4x that.
    """

    n_primary: int
    n_cascaded: int
    channels: int
    rho: float
    budget_bytes: int
    achieved_bytes: int
    compression_achieved: float = 0.0
    n_p1: int = 0
    n_lod: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = {"n_primary": self.n_primary, "n_cascaded": self.n_cascaded,
             "channels": self.channels, "rho": self.rho,
             "budget_bytes": self.budget_bytes,
             "achieved_bytes": self.achieved_bytes,
             "compression_achieved": self.compression_achieved}
        if self.n_p1:
            d["n_p1"] = self.n_p1
        if self.n_lod:
            d["n_lod"] = self.n_lod
        return d


def _round_multiple(value, multiple, minimum):
    return max(minimum, multiple * int(round(value / multiple)))


def _scan_layout(total_bytes, target, comp_bytes_fn, rho):
    """Linear search over cascaded sizes (multiples of 4); the primary side
    is the nearest multiple of 8 to rho * N_c.  Ties go to the smaller N_c
    (cheaper cascaded array)."""
    best = None
    n_c = 4
    while True:
        n_p = _round_multiple(rho * n_c, 8, 8)
        comp_bytes = comp_bytes_fn(n_p, n_c)
        achieved = total_bytes / comp_bytes
        diff = abs(target - achieved)
        if best is None or diff < best[0]:
            best = (diff, n_p, n_c, comp_bytes, achieved)
        # Past the budget the achieved ratio only shrinks further.
        if comp_bytes > 4 * total_bytes or n_c > 65536:
            break
        n_c += 4
    _, n_p, n_c, comp_bytes, achieved = best
    if achieved < 1.0 and target >= 1.0:
        first = comp_bytes_fn(_round_multiple(rho * 4, 8, 8), 4)
        if total_bytes / first < 1.0:
            raise InfeasibleLayoutError(
                f"budget {total_bytes} B smaller than the minimum layout "
                f"({first} B)")
    return n_p, n_c, comp_bytes, achieved


def solve_layout_image(base_resolution, k, e, rho,
                       primary_channels=4, cascaded_dims=4):
    """Array sizes for image compression at target ratio e.

    Uncompressed size B = base^2 * k; compressed size
    primary_channels * N_p^2 + k * N_c^cascaded_dims (one byte per value).
    """
    if e <= 0 or rho <= 0 or k < 1:
        raise ConfigError("need e > 0, rho > 0, k >= 1")
    total = base_resolution * base_resolution * k

    def comp_bytes(n_p, n_c):
        return primary_channels * n_p ** 2 + k * n_c ** cascaded_dims

    n_p, n_c, comp, achieved = _scan_layout(total, e, comp_bytes, rho)
    return Layout(n_primary=n_p, n_cascaded=n_c, channels=k, rho=rho,
                  budget_bytes=int(round(total / e)), achieved_bytes=comp,
                  compression_achieved=achieved)


_N_LOD_TABLE = {1024: 8, 2048: 12, 4096: 12}


def default_n_lod(base_resolution):
    n = _N_LOD_TABLE.get(base_resolution)
    if n is None:
        n = max(4, int(round(np.log2(base_resolution))))
    return n


def solve_layout_sampler(base_resolution, k, e, rho):
    """Array sizes for the filtered texture sampler.

    Compressed size 3 N_p0^2 + N_p1 + k N_c^3 N_lod, with N_lod fixed from
    the base resolution and N_p1 = 4 N_lod.
    """
    if e <= 0 or rho <= 0 or k < 1:
        raise ConfigError("need e > 0, rho > 0, k >= 1")
    total = base_resolution * base_resolution * k
    n_lod = default_n_lod(base_resolution)
    n_p1 = 4 * n_lod

    def comp_bytes(n_p, n_c):
        return 3 * n_p ** 2 + n_p1 + k * n_c ** 3 * n_lod

    n_p, n_c, comp, achieved = _scan_layout(total, e, comp_bytes, rho)
    return Layout(n_primary=n_p, n_cascaded=n_c, channels=k, rho=rho,
                  budget_bytes=int(round(total / e)), achieved_bytes=comp,
                  compression_achieved=achieved, n_p1=n_p1, n_lod=n_lod)


def solve_layout_sdf(budget_bytes, rho, primary_channels=3):
    """3D variant: minimize |budget - (3 N_p^3 + N_c^3)|."""
    if rho <= 0 or budget_bytes < 1:
        raise ConfigError("need rho > 0, budget_bytes >= 1")
    best = None
    n_c = 4
    while True:
        n_p = _round_multiple(rho * n_c, 8, 8)
        comp = primary_channels * n_p ** 3 + n_c ** 3
        diff = abs(budget_bytes - comp)
        if best is None or diff < best[0]:
            best = (diff, n_p, n_c, comp)
        if comp > 4 * budget_bytes or n_c > 4096:
            break
        n_c += 4
    _, n_p, n_c, comp = best
    return Layout(n_primary=n_p, n_cascaded=n_c, channels=1, rho=rho,
                  budget_bytes=budget_bytes, achieved_bytes=comp,
                  compression_achieved=budget_bytes / comp)


def _write_array(out, array):
    out += struct.pack("<B", array.dims)
    for n in array.shape:
        out += struct.pack("<I", n)
    out += struct.pack("<H", array.channels)
    out += struct.pack("<B", _NL_IDS[array.nonlinearity])
    if array.nonlinearity == "sine":
        out += struct.pack("<f", array.sine_n)
    if array.quantized:
        out += struct.pack("<B", 1)
        for c in range(array.channels):
            out += struct.pack("<ff", float(array.qoffset[c]),
                               float(array.qscale[c]))
        out += array.codes.astype("<u1").tobytes()
    else:
        out += struct.pack("<B", 0)
        out += array.cells.astype("<f4").tobytes()


def save(net, path):
    """Write the bit-exact little-endian model file."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    arrays = net.arrays()
    out += struct.pack("<H", len(arrays))
    for array in arrays:
        _write_array(out, array)
    out += struct.pack("<H", len(net.wiring))
    for p, c in net.wiring:
        out += struct.pack("<HH", p, c)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("truncated payload", offset=self.pos)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def raw(self, size):
        if self.pos + size > len(self.data):
            raise FormatError("truncated payload", offset=self.pos)
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out


def _read_array(r):
    dims = r.take("<B")
    if not 1 <= dims <= 4:
        raise FormatError(f"bad dims {dims}", offset=r.pos - 1)
    shape = tuple(r.take("<I") for _ in range(dims))
    channels = r.take("<H")
    nl_id = r.take("<B")
    if nl_id not in _NL_NAMES:
        raise FormatError(f"bad nonlinearity id {nl_id}", offset=r.pos - 1)
    nonlinearity = _NL_NAMES[nl_id]
    sine_n = r.take("<f") if nonlinearity == "sine" else 1.0
    quant_id = r.take("<B")
    count = int(np.prod(shape)) * channels
    if quant_id == 0:
        cells = np.frombuffer(r.raw(4 * count), dtype="<f4")
        return GridArray(shape, channels, nonlinearity, sine_n, cells=cells)
    if quant_id != 1:
        raise FormatError(f"bad quantization id {quant_id}",
                          offset=r.pos - 1)
    offset = np.empty(channels, dtype=np.float32)
    scale = np.empty(channels, dtype=np.float32)
    for c in range(channels):
        offset[c], scale[c] = r.take("<ff")
    codes = np.frombuffer(r.raw(count), dtype="<u1")
    deq = offset + scale * (codes.reshape(-1, channels).astype(np.float32)
                            / 255.0)
    array = GridArray(shape, channels, nonlinearity, sine_n, cells=deq)
    array.codes = codes.reshape(shape + (channels,)).copy()
    array.qoffset = offset
    array.qscale = scale
    return array


def load(path):
    """Read a model file; inverse of :func:`save`."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.raw(4)
    if magic != MAGIC:
        raise FormatError(
            f"bad magic {magic!r}, expected {MAGIC.decode()!r}", offset=0)
    version = r.take("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}",
                          offset=4)
    n_arrays = r.take("<H")
    arrays = [_read_array(r) for _ in range(n_arrays)]
    n_axes = r.take("<H")
    wiring = [r.take("<HH") for _ in range(n_axes)]
    if r.pos != len(data):
        raise FormatError("trailing bytes after wiring table", offset=r.pos)
    return DInNetwork(arrays[:-1], arrays[-1], wiring)
