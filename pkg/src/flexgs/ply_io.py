"""Binary PLY reader/writer and the FGC compressed container.

PLY files use the community 3D-GS layout: ``binary_little_endian 1.0`` with
62 float properties per vertex (``x y z nx ny nz f_dc_* f_rest_* opacity
scale_* rot_*``). Normals are dropped on load and written back as zeros.

FGC v1 layout (all integers little-endian)::

    magic        4 bytes  b"FGC1"
    version      u32      1
    n_full       u32      rows that keep SH_adv
    n_shpruned   u32      rows without SH_adv
    alpha, beta  f32 x 2  pruning plan
    group_count  u32
    bitwidths    u8 x 59  per schema channel
    range tables          full segment: for each of the 59 channels,
                          groups(n_full) x (min f32, max f32); then the
                          SH-pruned segment over its 14 channels
    payload               one bitstream, codes LSB-first within bytes:
                          full segment channel-major, then SH-pruned
                          segment channel-major; zero-padded to a byte

Each segment restarts group numbering; groups are contiguous row ranges of
``ceil(rows / group_count)`` rows. No entropy coding is applied.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .model import NON_SH_ADV, NUM_CHANNELS, GaussianModel
from .mpq import QuantizedModel, QuantizedSegment, group_layout
from .plans import CompressionPlan, PruningPlan, QuantizationPlan

PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
_NORMALS = (3, 4, 5)
_KEEP = np.array([i for i in range(len(PLY_PROPERTIES)) if i not in _NORMALS])

FGC_MAGIC = b"FGC1"
FGC_VERSION = 1
_FGC_HEAD = struct.Struct("<4sIIIffI")
FGC_HEADER_SIZE = _FGC_HEAD.size + NUM_CHANNELS


class PlyFormatError(ValueError):
    pass


class FgcFormatError(ValueError):
    pass


class FgcBadMagic(FgcFormatError):
    pass


class FgcVersionMismatch(FgcFormatError):
    pass


class FgcTruncated(FgcFormatError):
    def __init__(self, expected: int, actual: int, what: str = "payload"):
        super().__init__(f"truncated {what}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


# --- PLY -------------------------------------------------------------------

def _ply_header(n: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property float {p}" for p in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def ply_header_size(n: int) -> int:
    return len(_ply_header(n))


def write_ply(model: GaussianModel, path) -> None:
    """Write ``model``; SH-masked rows get zero SH_adv coefficients."""
    out = np.zeros((len(model), len(PLY_PROPERTIES)), dtype="<f4")
    out[:, _KEEP] = model.data
    out[model.sh_mask, 9:54] = 0.0
    with open(path, "wb") as f:
        f.write(_ply_header(len(model)))
        f.write(out.tobytes())


def _parse_ply_header(f) -> tuple[int, list[str]]:
    if f.readline().strip() != b"ply":
        raise PlyFormatError("missing 'ply' magic line")
    n = None
    props = []
    fmt = None
    while True:
        raw = f.readline()
        if not raw:
            raise PlyFormatError("header ended before end_header")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            if tok[1] != "vertex" or n is not None:
                raise PlyFormatError(f"unsupported element '{tok[1]}'")
            n = int(tok[2])
        elif tok[0] == "property":
            if tok[1] not in ("float", "float32"):
                raise PlyFormatError(f"property {tok[-1]} has type {tok[1]}, expected float")
            props.append(tok[2])
        else:
            raise PlyFormatError(f"unexpected header line: {raw!r}")
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported format {fmt!r}; only binary_little_endian is read")
    if n is None:
        raise PlyFormatError("no vertex element")
    return n, props


def load_ply(path) -> GaussianModel:
    with open(path, "rb") as f:
        n, props = _parse_ply_header(f)
        if props != PLY_PROPERTIES:
            missing = [p for p in PLY_PROPERTIES if p not in props]
            extra = [p for p in props if p not in PLY_PROPERTIES]
            raise PlyFormatError(
                f"property mismatch (missing={missing[:5]}, unexpected={extra[:5]}, order must match 3D-GS layout)"
            )
        expected = n * len(PLY_PROPERTIES) * 4
        buf = f.read(expected)
    if len(buf) < expected:
        raise PlyFormatError(f"truncated payload: expected {expected} bytes, got {len(buf)}")
    arr = np.frombuffer(buf, dtype="<f4").reshape(n, len(PLY_PROPERTIES))
    data = arr[:, _KEEP].astype(np.float32)
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise PlyFormatError(f"non-finite values at row {int(np.argmax(bad))}")
    return GaussianModel(data)


# --- FGC -------------------------------------------------------------------

def _table_bytes(rows: int, n_channels: int, group_count: int) -> int:
    return n_channels * group_layout(rows, group_count)[1] * 8


def _payload_bits(n_full: int, n_shpruned: int, bitwidths) -> int:
    bw = np.asarray(bitwidths)
    return n_full * int(bw.sum()) + n_shpruned * int(bw[NON_SH_ADV].sum())


def estimate_compressed_size(n_full: int, n_shpruned: int, plan) -> int:
    """Exact FGC byte count for the given segment sizes.

    ``plan`` may be a :class:`CompressionPlan` or a :class:`QuantizationPlan`.
    """
    q = plan.quantization if isinstance(plan, CompressionPlan) else plan
    tables = _table_bytes(n_full, NUM_CHANNELS, q.group_count) + _table_bytes(n_shpruned, len(NON_SH_ADV), q.group_count)
    bits = _payload_bits(n_full, n_shpruned, q.bitwidths)
    return FGC_HEADER_SIZE + tables + (bits + 7) // 8


def _pack_codes(codes: list, widths: list) -> bytes:
    chunks = []
    for c, b in zip(codes, widths):
        if len(c):
            shifts = np.arange(b, dtype=np.uint16)
            chunks.append(((c.astype(np.uint16)[:, None] >> shifts) & 1).astype(np.uint8).ravel())
    if not chunks:
        return b""
    return np.packbits(np.concatenate(chunks), bitorder="little").tobytes()


def _unpack_codes(buf: bytes, counts: list, widths: list) -> list:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    out, pos = [], 0
    for n, b in zip(counts, widths):
        chunk = bits[pos : pos + n * b].reshape(n, b).astype(np.uint16)
        out.append((chunk << np.arange(b, dtype=np.uint16)).sum(axis=1).astype(np.uint8))
        pos += n * b
    return out


def _segment_widths(seg: QuantizedSegment, bitwidths) -> list:
    return [bitwidths[c] for c in seg.channels]


def encode_fgc(q: QuantizedModel) -> bytes:
    plan = q.plan
    bw = plan.bitwidths
    buf = io.BytesIO()
    buf.write(_FGC_HEAD.pack(FGC_MAGIC, FGC_VERSION, q.n_full, q.n_shpruned, q.alpha, q.beta, plan.group_count))
    buf.write(bytes(bw))
    for seg, rows in ((q.full, q.n_full), (q.shpruned, q.n_shpruned)):
        n_groups = group_layout(rows, plan.group_count)[1]
        for k, c in enumerate(seg.channels):
            if len(seg.codes[k]) != rows or len(seg.ranges[k]) != n_groups:
                raise FgcFormatError(f"segment channel {c}: codes/ranges inconsistent with {rows} rows")
            buf.write(np.asarray(seg.ranges[k], dtype="<f4").tobytes())
    codes = q.full.codes + q.shpruned.codes
    widths = _segment_widths(q.full, bw) + _segment_widths(q.shpruned, bw)
    for c, b in zip(codes, widths):
        if len(c) and int(c.max()) >= (1 << b):
            raise FgcFormatError(f"code {int(c.max())} does not fit in {b} bits")
    buf.write(_pack_codes(codes, widths))
    out = buf.getvalue()
    expected = estimate_compressed_size(q.n_full, q.n_shpruned, plan)
    if len(out) != expected:
        raise FgcFormatError(f"encoded {len(out)} bytes but the plan accounts for {expected}")
    return out


def write_fgc(q: QuantizedModel, path) -> int:
    """Write the container; returns the number of bytes written."""
    blob = encode_fgc(q)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def decode_fgc(blob: bytes) -> tuple[CompressionPlan, QuantizedModel]:
    if len(blob) < 4 or blob[:4] != FGC_MAGIC:
        raise FgcBadMagic(f"bad magic {bytes(blob[:4])!r}, expected {FGC_MAGIC!r}")
    if len(blob) < FGC_HEADER_SIZE:
        raise FgcTruncated(FGC_HEADER_SIZE, len(blob), "header")
    _, version, n_full, n_shpruned, alpha, beta, group_count = _FGC_HEAD.unpack_from(blob, 0)
    if version != FGC_VERSION:
        raise FgcVersionMismatch(f"unsupported FGC version {version}")
    try:
        qplan = QuantizationPlan(tuple(blob[_FGC_HEAD.size : FGC_HEADER_SIZE]), group_count)
        pplan = PruningPlan(float(alpha), float(beta))
    except ValueError as e:
        raise FgcFormatError(f"invalid plan in header: {e}") from e

    expected = estimate_compressed_size(n_full, n_shpruned, qplan)
    if len(blob) < expected:
        raise FgcTruncated(expected, len(blob))
    if len(blob) > expected:
        raise FgcFormatError(f"{len(blob) - expected} trailing bytes after payload; counts do not match tables")

    pos = FGC_HEADER_SIZE
    segs = []
    for rows, channels in ((n_full, np.arange(NUM_CHANNELS)), (n_shpruned, NON_SH_ADV)):
        n_groups = group_layout(rows, group_count)[1]
        ranges = []
        for _ in channels:
            r = np.frombuffer(blob, dtype="<f4", count=2 * n_groups, offset=pos).reshape(n_groups, 2)
            if np.any(r[:, 0] > r[:, 1]) or not np.isfinite(r).all():
                raise FgcFormatError("group table holds an invalid range")
            ranges.append(r.astype(np.float32))
            pos += 8 * n_groups
        segs.append((rows, channels, ranges))

    counts, widths = [], []
    for rows, channels, _ in segs:
        counts += [rows] * len(channels)
        widths += [qplan.bitwidths[c] for c in channels]
    codes = _unpack_codes(blob[pos:expected], counts, widths)
    k = len(segs[0][1])
    full = QuantizedSegment(np.asarray(segs[0][1], dtype=np.intp), segs[0][2], codes[:k])
    shpruned = QuantizedSegment(np.asarray(segs[1][1], dtype=np.intp), segs[1][2], codes[k:])
    q = QuantizedModel(qplan, full, shpruned, float(alpha), float(beta))
    return CompressionPlan(pplan, qplan), q


def read_fgc(path) -> tuple[CompressionPlan, QuantizedModel]:
    with open(path, "rb") as f:
        return decode_fgc(f.read())


def is_fgc(path) -> bool:
    if os.path.splitext(str(path))[1].lower() == ".fgc":
        return True
    with open(path, "rb") as f:
        return f.read(4) == FGC_MAGIC


def load_model(path) -> GaussianModel:
    """Load a PLY, or decode and dequantize an FGC file."""
    if is_fgc(path):
        return read_fgc(path)[1].dequantize()
    return load_ply(path)
