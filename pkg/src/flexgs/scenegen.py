"""Deterministic synthetic scenes and orbit cameras.

Random numbers come from numpy's Philox4x64-10 counter-based generator keyed
by the seed, so a spec reproduces the same fixture bit for bit everywhere.
Draw order: positions, log-scales, quaternions, opacities, SH base, SH adv,
then the low-importance row selection.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .model import GaussianModel, inverse_sigmoid
from .ply_io import write_ply
from .renderer import Camera, save_cameras


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_gaussians: int = 40000
    extent: float = 1.0
    opacity_range: tuple = (0.3, 0.95)
    scale_range: tuple = (0.01, 0.08)
    sh_energy: float = 0.25
    low_importance_fraction: float = 0.3
    n_cameras: int = 16
    orbit_radius: float = 3.5
    elevation_deg: float = 20.0
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "opacity_range", tuple(float(v) for v in self.opacity_range))
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        lo, hi = self.opacity_range
        if not (0 < lo <= hi < 1):
            raise ValueError(f"opacity_range must satisfy 0 < lo <= hi < 1, got {self.opacity_range}")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.n_gaussians < 0 or self.n_cameras < 1:
            raise ValueError("n_gaussians must be >= 0 and n_cameras >= 1")
        if not (0 <= self.low_importance_fraction <= 1):
            raise ValueError("low_importance_fraction must lie in [0, 1]")
        if self.extent <= 0 or self.orbit_radius <= self.extent * np.sqrt(3):
            raise ValueError("orbit_radius must keep cameras outside the scene cube")
        if self.sh_energy < 0 or self.width < 11 or self.height < 11:
            raise ValueError("sh_energy must be >= 0 and images at least 11x11")

    @classmethod
    def from_dict(cls, d) -> SceneSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> SceneSpec:
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return asdict(self)


# Per-degree decay of SH_adv magnitude (degrees 1, 2, 3).
_DEGREE_DECAY = np.repeat([1.0, 0.6, 0.35], [3, 5, 7])
_DC_STD = 0.9


def generate_model(spec: SceneSpec) -> GaussianModel:
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n = spec.n_gaussians
    pos = rng.uniform(-spec.extent, spec.extent, size=(n, 3))
    lo, hi = np.log(spec.scale_range)
    log_scale = rng.uniform(lo, hi, size=(n, 3))
    quat = rng.standard_normal((n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    opacity = rng.uniform(*spec.opacity_range, size=n)
    dc = rng.normal(0.0, _DC_STD, size=(n, 3))
    adv = rng.normal(0.0, 1.0, size=(n, 3, 15)) * (spec.sh_energy * _DC_STD * _DEGREE_DECAY)

    n_low = int(round(spec.low_importance_fraction * n))
    low = rng.permutation(n)[:n_low]
    # far below the 1/255 blending floor and tiny: never contribute to a pixel
    opacity[low] = 1e-3
    log_scale[low] = lo - 2.0

    data = np.zeros((n, 59))
    data[:, 0:3] = pos
    data[:, 3:6] = dc
    data[:, 6:51] = adv.reshape(n, 45)
    data[:, 51] = inverse_sigmoid(opacity)
    data[:, 52:55] = log_scale
    data[:, 55:59] = quat
    return GaussianModel(data)


def low_importance_rows(spec: SceneSpec) -> np.ndarray:
    """Indices of the injected low-importance rows, recomputed from the spec."""
    m = generate_model(spec)
    return np.nonzero(m.opacities < 2e-3)[0]


def orbit_cameras(spec: SceneSpec) -> list[Camera]:
    cams = []
    elev = np.radians(spec.elevation_deg)
    for k in range(spec.n_cameras):
        az = 2 * np.pi * k / spec.n_cameras
        eye = spec.orbit_radius * np.array([np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)])
        cams.append(Camera.look_at(eye, np.zeros(3), spec.width, spec.height, spec.fov_deg))
    return cams


def generate(spec: SceneSpec) -> tuple[GaussianModel, list[Camera]]:
    return generate_model(spec), orbit_cameras(spec)


def write_fixture(spec: SceneSpec, directory) -> dict:
    os.makedirs(directory, exist_ok=True)
    model, cams = generate(spec)
    paths = {
        "model": os.path.join(directory, "model.ply"),
        "cameras": os.path.join(directory, "cameras.json"),
        "spec": os.path.join(directory, "scene.json"),
    }
    write_ply(model, paths["model"])
    save_cameras(cams, paths["cameras"])
    with open(paths["spec"], "w") as f:
        json.dump(spec.to_dict(), f, indent=1)
    return paths
