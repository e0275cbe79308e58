"""Synthetic rigs, trajectories and scenes with known ground truth.

One map unit is one metre.  The rig frame has z pointing up; cameras look
roughly horizontally, each with the usual camera convention (z forward,
x right, y down).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, CameraModel
from .errors import InfeasibleSpec
from .geometry import RigidPose, Rotation
from .robust import make_rng
from .session import CalibrationResult, CalibrationSession, Frameset, ImageObservations

# Fixed stream for preset construction, independent of the noise seed.
_PRESET_SEED = 20190901


class Preset(str, enum.Enum):
    PENTAGONAL10 = "pentagonal"
    HELMET5 = "helmet"
    CUSTOM = "custom"


@dataclass
class RigPreset:
    """Ground-truth rig: per-camera extrinsics (rig -> camera) and intrinsics."""

    preset: Preset
    extrinsics: list
    intrinsics: list
    image_sizes: np.ndarray
    max_view_angle: float = np.deg2rad(85.0)

    @property
    def camera_count(self):
        return len(self.extrinsics)

    def diameter(self):
        C = np.array([p.center() for p in self.extrinsics])
        return float(np.max(np.linalg.norm(C[:, None] - C[None], axis=2)))


@dataclass
class NoiseSpec:
    """Observation corruption.

    ``dropout_pattern`` is ``"random"`` (each image removed independently with
    probability ``dropout_ratio``) or ``"no_complete"`` (every frameset loses
    ``max(1, round(dropout_ratio * N))`` cameras, so no frameset is complete).
    """

    pixel_sigma: float = 0.0
    outlier_ratio: float = 0.0
    dropout_ratio: float = 0.0
    seed: int = 0
    dropout_pattern: str = "random"

    def __post_init__(self):
        for name in ("outlier_ratio", "dropout_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise InfeasibleSpec(f"{name} must lie in [0, 1), got {value}")
        if self.pixel_sigma < 0:
            raise InfeasibleSpec("pixel_sigma must be non-negative")
        if self.dropout_pattern not in ("random", "no_complete"):
            raise InfeasibleSpec(f"unknown dropout pattern {self.dropout_pattern!r}")


@dataclass
class GroundTruth:
    """Generator truth: the rig, rig poses per frameset id, inlier membership.

    ``membership[(frameset_id, camera)]`` flags which correspondences of that
    image are genuine (True) rather than replaced outliers.
    """

    rig: RigPreset
    rig_poses: dict
    membership: dict = field(default_factory=dict)

    def as_result(self):
        return CalibrationResult(
            list(self.rig.intrinsics),
            list(self.rig.extrinsics),
            dict(self.rig_poses),
            diagnostics={"source": "ground truth", "preset": self.rig.preset.value},
        )


def _look_rotation(forward, up=(0.0, 0.0, 1.0)):
    """Rig -> camera rotation whose optical axis is ``forward`` and image y points down."""
    f = np.asarray(forward, float)
    f = f / np.linalg.norm(f)
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.vstack([right, down, f])


def _ring_camera(yaw, offset, lateral, tilt, rng):
    forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    R = _look_rotation(forward)
    R = Rotation.from_rotvec(rng.normal(scale=tilt, size=3)).matrix() @ R
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    center = offset * forward + lateral * right
    return RigidPose.from_Rt(R, -R @ center)


def pentagonal_preset():
    """Ten cameras in five stereo pairs at 72 degree spacing, about 70 degree FoV."""
    rng = make_rng(_PRESET_SEED, 1)
    w, h = 1024, 768
    extr, intr = [], []
    for k in range(5):
        yaw = np.deg2rad(72.0 * k)
        for side in (-1.0, 1.0):
            extr.append(_ring_camera(yaw, 0.19, 0.06 * side, np.deg2rad(1.0), rng))
            focal = 0.71 * w * (1.0 + rng.uniform(-0.01, 0.01))
            pp = np.array([w / 2.0, h / 2.0]) + rng.uniform(-6.0, 6.0, size=2)
            dist = np.array(
                [
                    -0.12 * rng.uniform(0.8, 1.2),
                    0.05 * rng.uniform(0.8, 1.2),
                    rng.uniform(-4e-4, 4e-4),
                    rng.uniform(-4e-4, 4e-4),
                ]
            )
            intr.append(CameraIntrinsics(CameraModel.RADTAN, focal, pp, dist))
    return RigPreset(Preset.PENTAGONAL10, extr, intr, np.tile([w, h], (10, 1)))


def helmet_preset():
    """Five fisheye cameras on a ring covering 360 degrees, about 120 degree FoV."""
    rng = make_rng(_PRESET_SEED, 2)
    w, h = 1280, 960
    extr, intr = [], []
    for k in range(5):
        yaw = np.deg2rad(72.0 * k)
        extr.append(_ring_camera(yaw, 0.12, 0.0, np.deg2rad(2.0), rng))
        focal = 0.46 * w * (1.0 + rng.uniform(-0.01, 0.01))
        pp = np.array([w / 2.0, h / 2.0]) + rng.uniform(-6.0, 6.0, size=2)
        dist = np.array([0.02, -0.005, 0.001, -0.0002]) * rng.uniform(0.8, 1.2, size=4)
        intr.append(CameraIntrinsics(CameraModel.EQUIDISTANT, focal, pp, dist))
    return RigPreset(Preset.HELMET5, extr, intr, np.tile([w, h], (5, 1)))


def parallel_pair_preset(rng):
    """Two cameras with identical orientation: the degenerate configuration.

    The shared orientation and the baseline are drawn from ``rng``.
    """
    base = pentagonal_preset()
    yaw = rng.uniform(0, 2 * np.pi)
    R = Rotation.from_rotvec(rng.normal(scale=np.deg2rad(3.0), size=3)).matrix() @ _look_rotation(
        [np.cos(yaw), np.sin(yaw), 0.0]
    )
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    baseline = rng.uniform(0.05, 0.3)
    centers = [np.zeros(3), baseline * direction]
    extr = [RigidPose.from_Rt(R, -R @ c) for c in centers]
    return RigPreset(Preset.CUSTOM, extr, base.intrinsics[:2], base.image_sizes[:2])


def make_preset(name):
    name = Preset(name)
    if name is Preset.PENTAGONAL10:
        return pentagonal_preset()
    if name is Preset.HELMET5:
        return helmet_preset()
    raise ValueError("custom presets are built directly as RigPreset instances")


def trajectory(count, interval=0.5, speed=0.8, radius=3.0, height=1.5, start=0.0):
    """Map -> rig poses along a walking loop with sinusoidal height and wobble.

    ``start`` is the time offset in seconds of the first frameset.
    """
    stamps = start + interval * np.arange(count)
    s = speed * stamps  # arc length
    phase = s / radius
    poses = []
    for a in phase:
        p = np.array([radius * np.cos(a), radius * np.sin(a), height + 0.15 * np.sin(2.3 * a)])
        heading = a + np.pi / 2
        yaw = heading + 0.35 * np.sin(1.7 * a)
        pitch = 0.08 * np.sin(3.1 * a + 0.4)
        roll = 0.05 * np.sin(2.6 * a + 1.1)
        M = (
            Rotation.from_rotvec([0.0, 0.0, yaw])
            .compose(Rotation.from_rotvec([0.0, pitch, 0.0]))
            .compose(Rotation.from_rotvec([roll, 0.0, 0.0]))
        )
        poses.append(RigidPose(M, p).inverse())
    return poses, stamps


def scene_points(count, rng, radius=3.0):
    """Points on an outer wall band and an inner column around the loop."""
    n_outer = int(round(0.75 * count))
    n_inner = count - n_outer
    a = rng.uniform(0, 2 * np.pi, n_outer)
    r = rng.uniform(radius + 2.5, radius + 6.0, n_outer)
    z = rng.uniform(-0.5, 4.0, n_outer)
    outer = np.stack([r * np.cos(a), r * np.sin(a), z], axis=1)
    a = rng.uniform(0, 2 * np.pi, n_inner)
    r = np.sqrt(rng.uniform(0, 1.5**2, n_inner))
    z = rng.uniform(0.0, 3.0, n_inner)
    inner = np.stack([r * np.cos(a), r * np.sin(a), z], axis=1)
    return np.vstack([outer, inner])


def visible(camera, Z, image_size, max_view_angle, min_depth=0.1):
    """Mask of camera-frame points in front, inside the FoV cone and the image."""
    norm = np.linalg.norm(Z, axis=1)
    cos_angle = Z[:, 2] / np.maximum(norm, 1e-300)
    ok = (norm > min_depth) & (cos_angle > np.cos(max_view_angle))
    if camera.model is CameraModel.RADTAN:
        ok &= Z[:, 2] > min_depth
    pix = np.full((len(Z), 2), -1.0)
    if np.any(ok):
        pix[ok] = camera.project(Z[ok])
    w, h = image_size
    ok &= (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    return ok, pix


def _dropped_cameras(n_cam, noise, rng):
    if noise.dropout_ratio == 0.0:
        return set()
    if noise.dropout_pattern == "random":
        return set(np.nonzero(rng.random(n_cam) < noise.dropout_ratio)[0].tolist())
    k = max(1, int(round(noise.dropout_ratio * n_cam)))
    k = min(k, n_cam - 2)
    return set(rng.choice(n_cam, size=k, replace=False).tolist())


def generate_session(
    preset,
    framesets=200,
    points=6000,
    noise=None,
    max_observations=100,
    interval=0.5,
    start=0.0,
):
    """Generate a session and its ground truth.

    ``preset`` is a :class:`RigPreset` or a preset name.  Raises
    :class:`InfeasibleSpec` if surviving images see fewer than five points on
    average.
    """
    rig = preset if isinstance(preset, RigPreset) else make_preset(preset)
    noise = NoiseSpec() if noise is None else noise
    if framesets < 1 or points < 1 or max_observations < 1:
        raise InfeasibleSpec("framesets, points and max_observations must be positive")
    X = scene_points(points, make_rng(noise.seed, 0))
    point_ids = np.arange(points, dtype=np.int64)
    poses, stamps = trajectory(framesets, interval=interval, start=start)
    truth = GroundTruth(rig, {})
    out = []
    n_images, n_obs = 0, 0
    for j, (Q, stamp) in enumerate(zip(poses, stamps)):
        rng = make_rng(noise.seed, 1, j)
        dropped = _dropped_cameras(rig.camera_count, noise, rng)
        fs = Frameset(j, float(stamp))
        truth.rig_poses[j] = Q
        for i in range(rig.camera_count):
            cam = rig.intrinsics[i]
            Z = rig.extrinsics[i].compose(Q).apply(X)
            ok, pix = visible(cam, Z, rig.image_sizes[i], rig.max_view_angle)
            idx = np.nonzero(ok)[0]
            if len(idx) > max_observations:
                idx = np.sort(rng.choice(idx, size=max_observations, replace=False))
            if i in dropped:
                continue
            obs = pix[idx] + rng.normal(scale=noise.pixel_sigma, size=(len(idx), 2)) if noise.pixel_sigma else pix[idx]
            genuine = rng.random(len(idx)) >= noise.outlier_ratio
            n_out = np.count_nonzero(~genuine)
            w, h = rig.image_sizes[i]
            obs[~genuine] = rng.uniform([0.0, 0.0], [w, h], size=(n_out, 2))
            fs.observations[i] = ImageObservations(point_ids[idx], obs)
            truth.membership[(j, i)] = genuine
            n_images += 1
            n_obs += len(idx)
        out.append(fs)
    if n_images == 0 or n_obs / n_images < 5:
        raise InfeasibleSpec("fewer than 5 visible points per surviving image on average")
    session = CalibrationSession(point_ids, X, out, rig.camera_count, rig.image_sizes, 1.0)
    return session, truth


def make_short_subsequences(session, count=10, spacing=1):
    """Sliding windows of ``count`` framesets taken every ``spacing`` framesets."""
    n = len(session.framesets)
    span = (count - 1) * spacing
    return [session.subset(range(start, start + span + 1, spacing)) for start in range(max(0, n - span))]
