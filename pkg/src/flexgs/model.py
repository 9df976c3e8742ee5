"""In-memory Gaussian model, channel schema and activation conventions.

A model is an ``N x 59`` float32 matrix of *raw* (pre-activation) attributes,
one row per Gaussian, plus a per-row ``sh_mask`` bitset. A set mask bit means
the row's 45 view-dependent SH coefficients are logically absent and are
treated as zeros by every consumer.

Column order follows the 3D-GS PLY layout with the normals dropped::

    x y z | f_dc_0..2 | f_rest_0..44 | opacity | scale_0..2 | rot_0..3
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit


class ChannelGroup(enum.Enum):
    POSITION = "position"
    SCALE = "scale"
    ROTATION = "rotation"
    OPACITY = "opacity"
    SH_BASE = "sh_base"
    SH_ADV = "sh_adv"


GROUP_WIDTHS = {
    ChannelGroup.POSITION: 3,
    ChannelGroup.SCALE: 3,
    ChannelGroup.ROTATION: 4,
    ChannelGroup.OPACITY: 1,
    ChannelGroup.SH_BASE: 3,
    ChannelGroup.SH_ADV: 45,
}

NUM_CHANNELS = 59
SH_ADV_WIDTH = 45


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered (name, group) pairs for the attribute columns."""

    channels: tuple[tuple[str, ChannelGroup], ...]

    def __post_init__(self):
        if len(self.channels) != NUM_CHANNELS:
            raise ValueError(f"schema must have {NUM_CHANNELS} channels, got {len(self.channels)}")
        for group, width in GROUP_WIDTHS.items():
            got = sum(1 for _, g in self.channels if g is group)
            if got != width:
                raise ValueError(f"group {group.value} has width {got}, expected {width}")

    @property
    def total_width(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.channels]

    def indices(self, group: ChannelGroup) -> np.ndarray:
        return np.array([i for i, (_, g) in enumerate(self.channels) if g is group], dtype=np.intp)

    def group_of(self, index: int) -> ChannelGroup:
        return self.channels[index][1]

    def slice(self, group: ChannelGroup) -> slice:
        idx = self.indices(group)
        return slice(int(idx[0]), int(idx[-1]) + 1)


def _default_channels():
    chans = [(n, ChannelGroup.POSITION) for n in ("x", "y", "z")]
    chans += [(f"f_dc_{i}", ChannelGroup.SH_BASE) for i in range(3)]
    chans += [(f"f_rest_{i}", ChannelGroup.SH_ADV) for i in range(45)]
    chans += [("opacity", ChannelGroup.OPACITY)]
    chans += [(f"scale_{i}", ChannelGroup.SCALE) for i in range(3)]
    chans += [(f"rot_{i}", ChannelGroup.ROTATION) for i in range(4)]
    return tuple(chans)


SCHEMA = ChannelSchema(_default_channels())

POSITION = SCHEMA.slice(ChannelGroup.POSITION)
SH_BASE = SCHEMA.slice(ChannelGroup.SH_BASE)
SH_ADV = SCHEMA.slice(ChannelGroup.SH_ADV)
OPACITY = SCHEMA.slice(ChannelGroup.OPACITY)
SCALE = SCHEMA.slice(ChannelGroup.SCALE)
ROTATION = SCHEMA.slice(ChannelGroup.ROTATION)

# Channels kept by a row whose SH_adv block is pruned, in schema order.
NON_SH_ADV = np.array(
    [i for i in range(NUM_CHANNELS) if SCHEMA.group_of(i) is not ChannelGroup.SH_ADV], dtype=np.intp
)


# --- activations -----------------------------------------------------------

def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def inverse_sigmoid(p):
    return logit(np.asarray(p, dtype=np.float64))


def activate_scale(x):
    return np.exp(np.asarray(x, dtype=np.float64))


def inverse_scale(s):
    return np.log(np.asarray(s, dtype=np.float64))


def normalize_quaternion(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


# --- model -----------------------------------------------------------------

@dataclass
class GaussianModel:
    data: np.ndarray
    sh_mask: np.ndarray = None
    schema: ChannelSchema = field(default=SCHEMA, repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(-1, NUM_CHANNELS)
        if self.sh_mask is None:
            self.sh_mask = np.zeros(len(self.data), dtype=bool)
        else:
            self.sh_mask = np.ascontiguousarray(self.sh_mask, dtype=bool)
        if self.sh_mask.shape != (len(self.data),):
            raise ValueError("sh_mask length does not match row count")

    @classmethod
    def empty(cls) -> GaussianModel:
        return cls(np.zeros((0, NUM_CHANNELS), dtype=np.float32))

    @classmethod
    def from_activated(cls, positions, scales, rotations, opacities, sh_base, sh_adv=None) -> GaussianModel:
        """Build a model from activated attributes (scales > 0, opacity in (0, 1))."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        data = np.zeros((n, NUM_CHANNELS), dtype=np.float64)
        data[:, POSITION] = positions
        data[:, SCALE] = inverse_scale(np.asarray(scales).reshape(n, 3))
        data[:, ROTATION] = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        data[:, OPACITY] = inverse_sigmoid(np.asarray(opacities).reshape(n, 1))
        data[:, SH_BASE] = np.asarray(sh_base).reshape(n, 3)
        if sh_adv is not None:
            data[:, SH_ADV] = np.asarray(sh_adv).reshape(n, 45)
        return cls(data)

    def __len__(self):
        return len(self.data)

    @property
    def n_rows(self) -> int:
        return len(self.data)

    # activated views
    @property
    def positions(self) -> np.ndarray:
        return self.data[:, POSITION].astype(np.float64)

    @property
    def scales(self) -> np.ndarray:
        return activate_scale(self.data[:, SCALE])

    @property
    def rotations(self) -> np.ndarray:
        return normalize_quaternion(self.data[:, ROTATION])

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.data[:, OPACITY.start])

    def effective_sh_adv(self) -> np.ndarray:
        """SH_adv coefficients with masked rows zeroed, shape (N, 45)."""
        adv = self.data[:, SH_ADV].copy()
        adv[self.sh_mask] = 0.0
        return adv

    def copy(self) -> GaussianModel:
        return deep_copy(self)

    def take(self, rows) -> GaussianModel:
        rows = np.asarray(rows)
        return GaussianModel(self.data[rows].copy(), self.sh_mask[rows].copy(), self.schema)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(len(self.data)).tobytes())
        h.update(self.data.tobytes())
        h.update(np.packbits(self.sh_mask).tobytes())
        return h.hexdigest()


def deep_copy(model: GaussianModel) -> GaussianModel:
    return GaussianModel(model.data.copy(), model.sh_mask.copy(), model.schema)


@dataclass(frozen=True)
class Violation:
    row: int
    channel: str
    rule: str


def validate(model: GaussianModel, tol: float = 1e-4) -> list[Violation]:
    """Check the model invariants; returns one entry per broken rule."""
    out = []
    names = model.schema.names
    bad_rows, bad_cols = np.nonzero(~np.isfinite(model.data))
    for r, c in zip(bad_rows, bad_cols):
        out.append(Violation(int(r), names[c], "non-finite value"))
    finite_rows = np.isfinite(model.data).all(axis=1)

    with np.errstate(all="ignore"):
        qnorm = np.linalg.norm(model.data[:, ROTATION].astype(np.float64), axis=1)
        for r in np.nonzero(finite_rows & ~(qnorm > 1e-12))[0]:
            out.append(Violation(int(r), "rot", "non-normalizable rotation"))

        op = model.opacities
        for r in np.nonzero(finite_rows & ~((op >= 0.0) & (op <= 1.0)))[0]:
            out.append(Violation(int(r), "opacity", "activated opacity outside [0, 1]"))

        sc = model.scales
        for r, c in zip(*np.nonzero(finite_rows[:, None] & ~(sc > 0.0))):
            out.append(Violation(int(r), f"scale_{c}", "activated scale not positive"))
    return out


def model_byte_size(model: GaussianModel) -> int:
    """Uncompressed size: PLY header plus 4 bytes per stored float.

    Rows with the SH mask set only count their 14 non-SH_adv floats.
    """
    from .ply_io import ply_header_size

    n = len(model)
    n_masked = int(model.sh_mask.sum())
    floats = n * NUM_CHANNELS - n_masked * SH_ADV_WIDTH
    return ply_header_size(n) + 4 * floats
