"""Planar rigid transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]; angles already in range are returned unchanged."""
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Se2Transform:
    """Rotation by ``theta`` followed by translation ``(tx, ty)``: p' = R p + t."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))

    @classmethod
    def identity(cls) -> "Se2Transform":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_matrix(cls, R, t) -> "Se2Transform":
        return cls(math.atan2(R[1, 0], R[0, 0]), t[0], t[1])

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def apply(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return xy @ self.rotation.T + self.translation

    def inverse(self) -> "Se2Transform":
        R = self.rotation
        t = -R.T @ self.translation
        return Se2Transform(-self.theta, t[0], t[1])

    def compose(self, other: "Se2Transform") -> "Se2Transform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        return Se2Transform.from_matrix(R, t)

    def as_dict(self) -> dict:
        return {"theta": self.theta, "tx": self.tx, "ty": self.ty}


@dataclass(frozen=True)
class WorldPose:
    """Pose of a submap's local origin in the global frame (planar part plus height)."""

    se2: Se2Transform
    tz: float = 0.0

    def apply(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float)
        out = np.empty_like(xyz)
        out[:, :2] = self.se2.apply(xyz[:, :2])
        out[:, 2] = xyz[:, 2] + self.tz
        return out

    def as_dict(self) -> dict:
        return {**self.se2.as_dict(), "tz": self.tz}

    @classmethod
    def from_dict(cls, d: dict) -> "WorldPose":
        return cls(Se2Transform(d.get("theta", 0.0), d.get("tx", 0.0), d.get("ty", 0.0)), float(d.get("tz", 0.0)))


def angle_difference(a: float, b: float) -> float:
    """Absolute angular distance between two angles, in [0, pi]."""
    return abs(wrap_angle(a - b))
