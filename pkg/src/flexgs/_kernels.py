"""numba kernels for the software rasterizer.

Everything here is written as scalar loops on purpose: every pixel runs the
same sequence of floating point operations no matter how the image is tiled
or how the input rows are ordered, which keeps renders bit-reproducible.
"""

import importlib.util
import math

import numba
import numpy as np
from numba import njit, prange

# The TBB layer warns on older system TBB builds; OpenMP is always adequate here.
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp" if importlib.util.find_spec("numba.np.ufunc.omppool") else "workqueue"

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

NEAR_PLANE = 0.01
LOW_PASS = 0.3
ALPHA_FLOOR = 1.0 / 255.0
T_FLOOR = 1e-4
SIGMA_CUTOFF = 3.0


@njit(cache=True)
def sh_basis(x, y, z, out):
    """Real SH basis up to degree 3 in the 3D-GS sign convention."""
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[0] = SH_C0
    out[1] = -SH_C1 * y
    out[2] = SH_C1 * z
    out[3] = -SH_C1 * x
    out[4] = SH_C2[0] * xy
    out[5] = SH_C2[1] * yz
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[7] = SH_C2[3] * xz
    out[8] = SH_C2[4] * (xx - yy)
    out[9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[10] = SH_C3[1] * xy * z
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[14] = SH_C3[5] * z * (xx - yy)
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy)


@njit(cache=True)
def sh_color(row, masked, dx, dy, dz, basis, out):
    """0.5 + SH radiance for one row (raw 59-channel layout), unclamped."""
    sh_basis(dx, dy, dz, basis)
    kmax = 1 if masked else 16
    for ch in range(3):
        acc = basis[0] * row[3 + ch]
        for k in range(1, kmax):
            acc += basis[k] * row[6 + ch * 15 + (k - 1)]
        out[ch] = acc + 0.5


@njit(cache=True, parallel=True)
def preprocess(data, mask, rot, trans, fx, fy, cx, cy, center, width, height,
               means, conics, depths, radii, colors, opacities):
    n = data.shape[0]
    for i in prange(n):
        radii[i] = 0
        row = data[i]
        px, py, pz = float(row[0]), float(row[1]), float(row[2])
        tx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
        ty = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
        tz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
        depths[i] = tz
        if tz <= NEAR_PLANE:
            continue

        s0 = math.exp(float(row[52]))
        s1 = math.exp(float(row[53]))
        s2 = math.exp(float(row[54]))
        qw, qx, qy, qz = float(row[55]), float(row[56]), float(row[57]), float(row[58])
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if not qn > 0.0:
            continue
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        # M = R_q * diag(s); Sigma = M M^T
        m = np.empty((3, 3))
        m[0, 0] = (1.0 - 2.0 * (qy * qy + qz * qz)) * s0
        m[0, 1] = 2.0 * (qx * qy - qw * qz) * s1
        m[0, 2] = 2.0 * (qx * qz + qw * qy) * s2
        m[1, 0] = 2.0 * (qx * qy + qw * qz) * s0
        m[1, 1] = (1.0 - 2.0 * (qx * qx + qz * qz)) * s1
        m[1, 2] = 2.0 * (qy * qz - qw * qx) * s2
        m[2, 0] = 2.0 * (qx * qz - qw * qy) * s0
        m[2, 1] = 2.0 * (qy * qz + qw * qx) * s1
        m[2, 2] = (1.0 - 2.0 * (qx * qx + qy * qy)) * s2

        # T = J W, J the perspective Jacobian at the camera-space mean
        j00 = fx / tz
        j02 = -fx * tx / (tz * tz)
        j11 = fy / tz
        j12 = -fy * ty / (tz * tz)
        t = np.empty((2, 3))
        for c in range(3):
            t[0, c] = j00 * rot[0, c] + j02 * rot[2, c]
            t[1, c] = j11 * rot[1, c] + j12 * rot[2, c]
        # U = T M; cov2d = U U^T
        u = np.zeros((2, 3))
        for r in range(2):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += t[r, k] * m[k, c]
                u[r, c] = acc
        a = u[0, 0] * u[0, 0] + u[0, 1] * u[0, 1] + u[0, 2] * u[0, 2] + LOW_PASS
        b = u[0, 0] * u[1, 0] + u[0, 1] * u[1, 1] + u[0, 2] * u[1, 2]
        c2 = u[1, 0] * u[1, 0] + u[1, 1] * u[1, 1] + u[1, 2] * u[1, 2] + LOW_PASS
        det = a * c2 - b * b
        if not det > 0.0:
            continue
        mid = 0.5 * (a + c2)
        lam = mid + math.sqrt(max(0.1, mid * mid - det))
        r = int(math.ceil(SIGMA_CUTOFF * math.sqrt(lam)))
        mx = fx * tx / tz + cx
        my = fy * ty / tz + cy
        if mx + r < 0.0 or my + r < 0.0 or mx - r > width - 1 or my - r > height - 1:
            continue

        means[i, 0] = mx
        means[i, 1] = my
        conics[i, 0] = c2 / det
        conics[i, 1] = -b / det
        conics[i, 2] = a / det
        opacities[i] = 1.0 / (1.0 + math.exp(-float(row[51])))

        dx, dy, dz = px - center[0], py - center[1], pz - center[2]
        dn = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dn > 0.0:
            dx /= dn
            dy /= dn
            dz /= dn
        basis = np.empty(16)
        rgb = np.empty(3)
        sh_color(row, mask[i], dx, dy, dz, basis, rgb)
        for ch in range(3):
            colors[i, ch] = max(rgb[ch], 0.0)
        radii[i] = r


@njit(cache=True)
def bin_tiles(order, means, radii, tile, tiles_x, tiles_y, width, height):
    """Counting sort of (tile, depth rank) pairs.

    Returns ``(offsets, entries)``: the Gaussians of tile ``k`` are
    ``entries[offsets[k]:offsets[k+1]]`` in front-to-back order.
    """
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for o in range(order.shape[0]):
        g = order[o]
        r = radii[g]
        x0 = max(int(math.ceil(means[g, 0] - r)), 0) // tile
        x1 = min(int(math.floor(means[g, 0] + r)), width - 1) // tile
        y0 = max(int(math.ceil(means[g, 1] - r)), 0) // tile
        y1 = min(int(math.floor(means[g, 1] + r)), height - 1) // tile
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    entries = np.empty(offsets[-1], dtype=np.int64)
    for o in range(order.shape[0]):
        g = order[o]
        r = radii[g]
        x0 = max(int(math.ceil(means[g, 0] - r)), 0) // tile
        x1 = min(int(math.floor(means[g, 0] + r)), width - 1) // tile
        y0 = max(int(math.ceil(means[g, 1] - r)), 0) // tile
        y1 = min(int(math.floor(means[g, 1] + r)), height - 1) // tile
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                k = ty * tiles_x + tx
                entries[fill[k]] = g
                fill[k] += 1
    return offsets, entries


@njit(cache=True, parallel=True)
def rasterize(offsets, entries, means, conics, colors, opacities, tile, tiles_x, width, height, image, entry_hits):
    n_tiles = offsets.shape[0] - 1
    for k in prange(n_tiles):
        x_base = (k % tiles_x) * tile
        y_base = (k // tiles_x) * tile
        start = offsets[k]
        stop = offsets[k + 1]
        for py in range(y_base, min(y_base + tile, height)):
            for px in range(x_base, min(x_base + tile, width)):
                trans = np.float32(1.0)
                r = np.float32(0.0)
                g_ = np.float32(0.0)
                b = np.float32(0.0)
                for e in range(start, stop):
                    gi = entries[e]
                    dx = means[gi, 0] - px
                    dy = means[gi, 1] - py
                    maha = conics[gi, 0] * dx * dx + 2.0 * conics[gi, 1] * dx * dy + conics[gi, 2] * dy * dy
                    if maha > SIGMA_CUTOFF * SIGMA_CUTOFF:
                        continue
                    a64 = opacities[gi] * math.exp(-0.5 * maha)
                    if a64 < ALPHA_FLOOR:
                        continue
                    alpha = np.float32(a64)
                    w = alpha * trans
                    r += colors[gi, 0] * w
                    g_ += colors[gi, 1] * w
                    b += colors[gi, 2] * w
                    trans = trans * (np.float32(1.0) - alpha)
                    entry_hits[e] += 1
                    if trans < T_FLOOR:
                        break
                image[py, px, 0] = min(max(r, np.float32(0.0)), np.float32(1.0))
                image[py, px, 1] = min(max(g_, np.float32(0.0)), np.float32(1.0))
                image[py, px, 2] = min(max(b, np.float32(0.0)), np.float32(1.0))
