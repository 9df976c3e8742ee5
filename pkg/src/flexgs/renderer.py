"""Reference CPU rasterizer for 3D Gaussians.

Conventions: OpenCV-style pinhole cameras (x right, y down, +z forward),
pixel centers at integer coordinates, black background, linear float RGB.
A Gaussian contributes to a pixel when the pixel lies inside its 3-sigma
ellipse and ``opacity * exp(-0.5 * d^2) >= 1/255``; blending runs front to
back and stops once transmittance drops below 1e-4 (after the contribution
that crossed it). Sorting is by camera depth with screen position as a
tie-breaker, so input row order never affects the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import NUM_CHANNELS, ROTATION, SCALE, SH_ADV, SH_BASE, GaussianModel

DEFAULT_TILE = 16


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "world_to_camera", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if self.width < 1 or self.height < 1:
            raise CameraError(f"bad image size {self.width}x{self.height}")
        r = self.rotation
        if not np.all(np.isfinite(self.world_to_camera)):
            raise CameraError("non-finite pose")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-5:
            raise CameraError("world_to_camera rotation block is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, width, height, fov_x_deg=60.0, up=(0.0, 0.0, 1.0)) -> Camera:
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd])
        w2c = np.eye(4)
        w2c[:3, :3] = r
        w2c[:3, 3] = -r @ eye
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(width, height, f, f, (width - 1) / 2, (height - 1) / 2, w2c)

    def to_dict(self) -> dict:
        return {
            "width": int(self.width),
            "height": int(self.height),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "world_to_camera": [float(v) for v in self.world_to_camera.ravel()],
        }

    @classmethod
    def from_dict(cls, d) -> Camera:
        w2c = np.asarray(d["world_to_camera"], dtype=np.float64)
        if w2c.size != 16:
            raise CameraError("world_to_camera needs 16 values (row-major 4x4)")
        cam = cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
                  float(d["cx"]), float(d["cy"]), w2c.reshape(4, 4))
        cam.validate()
        return cam


def load_cameras(path) -> list[Camera]:
    with open(path) as f:
        doc = json.load(f)
    if isinstance(doc, dict):
        doc = doc.get("cameras", [])
    return [Camera.from_dict(d) for d in doc]


def save_cameras(cameras, path) -> None:
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cameras], f, indent=1)


@dataclass
class RenderStats:
    hit_counts: np.ndarray
    views_rendered: int = 1

    def __add__(self, other: RenderStats) -> RenderStats:
        return RenderStats(self.hit_counts + other.hit_counts, self.views_rendered + other.views_rendered)


# --- per-Gaussian math (numpy reference versions) --------------------------

def _quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def world_covariance(row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    m = _quat_to_matrix(row[ROTATION]) @ np.diag(np.exp(row[SCALE]))
    return m @ m.T


def project_gaussian(row, camera: Camera, low_pass: bool = True):
    """EWA projection of one raw row.

    Returns ``(mean2d, cov2d, depth)`` or ``None`` when the Gaussian sits in
    front of the near plane (behind the camera).
    """
    row = np.asarray(row, dtype=np.float64)
    t = camera.rotation @ row[:3] + camera.translation
    if t[2] <= K.NEAR_PLANE:
        return None
    x, y, z = t
    mean = np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
    jac = np.array([[camera.fx / z, 0.0, -camera.fx * x / z**2], [0.0, camera.fy / z, -camera.fy * y / z**2]])
    tw = jac @ camera.rotation
    cov = tw @ world_covariance(row) @ tw.T
    if low_pass:
        cov = cov + K.LOW_PASS * np.eye(2)
    return mean, cov, float(z)


def sh_basis(directions) -> np.ndarray:
    """Degree-3 real SH basis values, shape (..., 16)."""
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    c2, c3 = K.SH_C2, K.SH_C3
    return np.stack([
        np.full_like(x, K.SH_C0),
        -K.SH_C1 * y, K.SH_C1 * z, -K.SH_C1 * x,
        c2[0] * x * y, c2[1] * y * z, c2[2] * (2 * zz - xx - yy), c2[3] * x * z, c2[4] * (xx - yy),
        c3[0] * y * (3 * xx - yy), c3[1] * x * y * z, c3[2] * y * (4 * zz - xx - yy),
        c3[3] * z * (2 * zz - 3 * xx - 3 * yy), c3[4] * x * (4 * zz - xx - yy),
        c3[5] * z * (xx - yy), c3[6] * x * (xx - 3 * yy),
    ], axis=-1)


def evaluate_sh(row, view_direction, masked: bool = False) -> np.ndarray:
    """RGB = 0.5 + SH radiance of a raw row along unit ``view_direction``(s).

    Not clamped; the rasterizer clamps negative colors to zero.
    """
    row = np.asarray(row, dtype=np.float64)
    coeffs = np.zeros((3, 16))
    coeffs[:, 0] = row[SH_BASE]
    if not masked:
        coeffs[:, 1:] = row[SH_ADV].reshape(3, 15)
    return 0.5 + sh_basis(view_direction) @ coeffs.T


# --- rendering --------------------------------------------------------------

@dataclass
class Projected:
    means: np.ndarray
    conics: np.ndarray
    depths: np.ndarray
    radii: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    @property
    def visible(self) -> np.ndarray:
        return self.radii > 0


def preprocess(model: GaussianModel, camera: Camera) -> Projected:
    n = len(model)
    out = Projected(
        np.zeros((n, 2)), np.zeros((n, 3)), np.zeros(n), np.zeros(n, dtype=np.int64),
        np.zeros((n, 3), dtype=np.float32), np.zeros(n),
    )
    if n:
        K.preprocess(
            np.ascontiguousarray(model.data), np.ascontiguousarray(model.sh_mask),
            np.ascontiguousarray(camera.rotation), np.ascontiguousarray(camera.translation),
            float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
            np.ascontiguousarray(camera.center), int(camera.width), int(camera.height),
            out.means, out.conics, out.depths, out.radii, out.colors, out.opacities,
        )
    return out


def _depth_order(p: Projected, vis: np.ndarray) -> np.ndarray:
    depth = p.depths[vis]
    order = np.argsort(depth, kind="stable")
    d = depth[order]
    if np.any(d[1:] == d[:-1]):
        # exact depth ties: break them by screen position, not by row index
        order = np.lexsort((p.means[vis, 1], p.means[vis, 0], depth))
    return vis[order]


def render(model: GaussianModel, camera: Camera, collect_stats: bool = False, tile_size: int = DEFAULT_TILE):
    """Render one view; returns ``(image, stats)`` with ``stats`` None unless requested.

    ``image`` is a float32 ``(height, width, 3)`` array in [0, 1].
    """
    camera.validate()
    if model.data.shape[1:] != (NUM_CHANNELS,):
        raise ValueError("model must have 59 channels")
    w, h = int(camera.width), int(camera.height)
    image = np.zeros((h, w, 3), dtype=np.float32)
    hits = np.zeros(len(model), dtype=np.int64)
    p = preprocess(model, camera)
    vis = np.nonzero(p.visible)[0]
    if len(vis):
        order = _depth_order(p, vis)
        tiles_x = -(-w // tile_size)
        tiles_y = -(-h // tile_size)
        offsets, entries = K.bin_tiles(order, p.means, p.radii, tile_size, tiles_x, tiles_y, w, h)
        entry_hits = np.zeros(len(entries), dtype=np.int64)
        K.rasterize(offsets, entries, p.means, p.conics, p.colors, p.opacities,
                    tile_size, tiles_x, w, h, image, entry_hits)
        if collect_stats:
            np.add.at(hits, entries, entry_hits)
    return image, (RenderStats(hits, 1) if collect_stats else None)


def render_views(model: GaussianModel, cameras) -> list[np.ndarray]:
    return [render(model, cam)[0] for cam in cameras]


def accumulate_stats(model: GaussianModel, cameras) -> RenderStats:
    """Hit counts summed over views in camera order."""
    total = RenderStats(np.zeros(len(model), dtype=np.int64), 0)
    for cam in cameras:
        total = total + render(model, cam, collect_stats=True)[1]
    return total
