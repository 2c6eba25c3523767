"""Scene layout for the train-mounted surface scenario.

World frame: x runs along the track, y is horizontal perpendicular to the
track (BS side positive), z is up.  The train frame shares the axes and its
origin sits on the track at ``train_x``; the window surface and the seats are
fixed offsets in that frame.  All link distances and per-array angles used by
the channel synthesis are derived here.

Angles are reported per array as (azimuth, elevation): azimuth is the signed
angle between the boresight and the direction projected onto the plane spanned
by boresight and the array x-axis; elevation is the signed angle out of that
plane toward the array y-axis.  Azimuth lies in [-pi, pi), elevation in
[-pi/2, pi/2].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class InvalidGeometryError(ValueError):
    """Scene positions produce a degenerate link (coincident points)."""


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise InvalidGeometryError(f"{what} has zero length")
    return v / n


@dataclass(frozen=True)
class ArrayFrame:
    """Orthonormal local frame of a planar array.

    ``x_axis`` and ``y_axis`` span the array plane; the boresight (surface
    normal) is their cross product.
    """

    x_axis: tuple[float, float, float]
    y_axis: tuple[float, float, float]

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ex = _unit(np.asarray(self.x_axis, dtype=float), "array x-axis")
        ey = np.asarray(self.y_axis, dtype=float)
        ey = ey - ex * (ex @ ey)
        ey = _unit(ey, "array y-axis")
        return ex, ey, np.cross(ex, ey)


# BS panel faces the track (boresight -y), x along the track, y up.
BS_FRAME = ArrayFrame(x_axis=(1.0, 0.0, 0.0), y_axis=(0.0, 0.0, 1.0))
# Window surface is vertical, normal toward the BS (+y).
RIS_FRAME = ArrayFrame(x_axis=(-1.0, 0.0, 0.0), y_axis=(0.0, 0.0, 1.0))


@dataclass(frozen=True)
class SceneConfig:
    """Positions and motion of one drop.

    ``ris_offset_on_train`` and ``user_offsets`` are expressed in the train
    frame; the train origin is at ``(train_x, 0, rail_height)``.
    """

    bs_position: tuple[float, float, float] = (0.0, 50.0, 10.0)
    rail_height: float = 0.0
    bs_to_rail_offset: float = 50.0
    ris_offset_on_train: tuple[float, float, float] = (0.0, 1.55, 2.0)
    user_offsets: tuple[tuple[float, float, float], ...] = (
        (-0.45, -0.65, 1.3),
        (0.0, -0.65, 1.3),
        (0.45, -0.65, 1.3),
        (-0.45, -1.25, 1.3),
    )
    train_speed: float = 100.0  # m/s, positive moves toward +x
    slot_duration: float = 1e-3  # s
    train_x: float = -70.0
    bs_frame: ArrayFrame = BS_FRAME
    ris_frame: ArrayFrame = RIS_FRAME

    def __post_init__(self):
        if len(self.user_offsets) < 1:
            raise InvalidGeometryError("at least one user offset is required")
        if self.slot_duration <= 0:
            raise InvalidGeometryError("slot duration must be positive")

    @property
    def num_users(self) -> int:
        return len(self.user_offsets)

    def train_origin(self) -> np.ndarray:
        return np.array([self.train_x, 0.0, self.rail_height])

    def ris_position(self) -> np.ndarray:
        return self.train_origin() + np.asarray(self.ris_offset_on_train)

    def user_positions(self) -> np.ndarray:
        return self.train_origin() + np.asarray(self.user_offsets, dtype=float)


def default_seat_offsets(num_users: int, *, seats_per_row: int = 3,
                         seat_pitch: float = 0.45, first_row_depth: float = 0.65,
                         row_pitch: float = 0.6, seat_height: float = 1.3):
    """Seat grid behind the window, filling rows toward the far wall."""
    if num_users < 1:
        raise InvalidGeometryError("at least one user is required")
    offsets = []
    for m in range(num_users):
        row, col = divmod(m, seats_per_row)
        x = seat_pitch * (col - (seats_per_row - 1) / 2.0)
        y = -first_row_depth - row_pitch * row
        offsets.append((x, y, seat_height))
    return tuple(offsets)


def advance(scene: SceneConfig, slot_index: int) -> SceneConfig:
    """Translate the train by ``speed * slot * slot_index`` along the track."""
    if slot_index < 0:
        raise ValueError("slot_index must be nonnegative")
    shift = scene.train_speed * scene.slot_duration * slot_index
    return replace(scene, train_x=scene.train_x + shift)


def _wrap_azimuth(a: float) -> float:
    # map (-pi, pi] onto [-pi, pi)
    return -np.pi if a >= np.pi - 1e-15 else a


def direction_angles(direction: np.ndarray, frame: ArrayFrame) -> tuple[float, float]:
    """(azimuth, elevation) of a world-frame direction in an array frame."""
    ex, ey, en = frame.basis()
    d = _unit(np.asarray(direction, dtype=float), "link direction")
    ux, uy, un = d @ ex, d @ ey, d @ en
    azimuth = _wrap_azimuth(float(np.arctan2(ux, un)))
    elevation = float(np.arctan2(uy, np.hypot(ux, un)))
    return azimuth, elevation


@dataclass(frozen=True)
class LinkGeometry:
    """Distances and per-array angles for all links of one scene."""

    bs_user_dist: np.ndarray      # (M,)
    bs_ris_dist: float
    ris_user_dist: np.ndarray     # (M,)
    bs_user_angles: np.ndarray    # (M, 2) at the BS array, toward each user
    bs_ris_angles: np.ndarray     # (2,) at the BS array, toward the surface
    ris_bs_angles: np.ndarray     # (2,) at the surface, toward the BS
    ris_user_angles: np.ndarray   # (M, 2) at the surface, toward each user

    num_users: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_users", len(self.bs_user_dist))
        for arr in (self.bs_user_dist, self.ris_user_dist):
            if np.any(arr <= 0.0):
                raise InvalidGeometryError("nonpositive link distance")
        if self.bs_ris_dist <= 0.0:
            raise InvalidGeometryError("nonpositive link distance")
        angles = np.concatenate([
            self.bs_user_angles.ravel(), self.bs_ris_angles,
            self.ris_bs_angles, self.ris_user_angles.ravel(),
        ])
        if not np.all(np.isfinite(angles)):
            raise InvalidGeometryError("non-finite link angle")


def derive_geometry(scene: SceneConfig) -> LinkGeometry:
    """All distances and angles of the current scene.

    Pure function of the scene; raises :class:`InvalidGeometryError` when two
    endpoints coincide.
    """
    bs = np.asarray(scene.bs_position, dtype=float)
    ris = scene.ris_position()
    users = scene.user_positions()

    d_bu = users - bs          # (M, 3)
    d_br = ris - bs
    d_ru = users - ris         # (M, 3)

    bs_user_dist = np.linalg.norm(d_bu, axis=1)
    bs_ris_dist = float(np.linalg.norm(d_br))
    ris_user_dist = np.linalg.norm(d_ru, axis=1)
    if np.any(bs_user_dist == 0) or bs_ris_dist == 0 or np.any(ris_user_dist == 0):
        raise InvalidGeometryError("coincident endpoints in scene")

    bs_user_angles = np.array([direction_angles(v, scene.bs_frame) for v in d_bu])
    bs_ris_angles = np.array(direction_angles(d_br, scene.bs_frame))
    ris_bs_angles = np.array(direction_angles(-d_br, scene.ris_frame))
    ris_user_angles = np.array([direction_angles(v, scene.ris_frame) for v in d_ru])

    return LinkGeometry(
        bs_user_dist=bs_user_dist,
        bs_ris_dist=bs_ris_dist,
        ris_user_dist=ris_user_dist,
        bs_user_angles=bs_user_angles,
        bs_ris_angles=bs_ris_angles,
        ris_bs_angles=ris_bs_angles,
        ris_user_angles=ris_user_angles,
    )
