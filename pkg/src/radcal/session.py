"""Calibration inputs and outputs: sessions, framesets and results."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics
from .errors import IntegrityError
from .geometry import RigidPose


@dataclass
class ImageObservations:
    """Putative 2D-3D matches of one image: map point ids and their pixels."""

    point_ids: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if len(self.point_ids) != len(self.pixels):
            raise ValueError("point_ids and pixels differ in length")

    def __len__(self):
        return len(self.point_ids)


@dataclass
class Frameset:
    """Images captured by the rig at one timestamp, keyed by camera index."""

    frameset_id: int
    timestamp: float
    observations: dict = field(default_factory=dict)

    def cameras(self):
        return sorted(self.observations)


@dataclass
class CalibrationSession:
    """Map points, framesets and the rig description fed to the pipeline."""

    point_ids: np.ndarray
    points: np.ndarray
    framesets: list
    camera_count: int
    image_sizes: np.ndarray
    map_scale: float = 1.0

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.image_sizes = np.asarray(self.image_sizes, dtype=np.int64).reshape(-1, 2)
        self._lookup = None

    def _index(self):
        if self._lookup is None:
            order = np.argsort(self.point_ids, kind="stable")
            self._lookup = (self.point_ids[order], order)
        return self._lookup

    def point_rows(self, ids):
        """Row indices of ``ids`` in the point table; IntegrityError on a dangling id."""
        ids = np.asarray(ids, dtype=np.int64)
        sorted_ids, order = self._index()
        pos = np.searchsorted(sorted_ids, ids)
        pos_c = np.minimum(pos, len(sorted_ids) - 1)
        bad = (pos >= len(sorted_ids)) | (sorted_ids[pos_c] != ids) if len(sorted_ids) else np.ones(len(ids), bool)
        if np.any(bad):
            raise IntegrityError(f"dangling point_id {int(ids[np.argmax(bad)])}")
        return order[pos_c]

    def image_center(self, camera):
        w, h = self.image_sizes[camera]
        return np.array([w / 2.0, h / 2.0])

    def validate(self):
        """Check the structural invariants; raises IntegrityError or ValueError."""
        if len(self.image_sizes) != self.camera_count:
            raise ValueError(f"{len(self.image_sizes)} image sizes for {self.camera_count} cameras")
        if len(np.unique(self.point_ids)) != len(self.point_ids):
            raise IntegrityError("duplicate point_id in the map")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("map contains non-finite coordinates")
        if not self.map_scale > 0:
            raise ValueError("map_scale must be positive")
        seen = set()
        for fs in self.framesets:
            if fs.frameset_id in seen:
                raise IntegrityError(f"duplicate frameset_id {fs.frameset_id}")
            seen.add(fs.frameset_id)
            for cam, img in fs.observations.items():
                if not 0 <= cam < self.camera_count:
                    raise IntegrityError(f"frameset {fs.frameset_id}: camera index {cam} out of range")
                if not np.all(np.isfinite(img.pixels)):
                    raise ValueError(f"frameset {fs.frameset_id}, camera {cam}: non-finite pixel")
                self.point_rows(img.point_ids)
        return self

    def num_correspondences(self):
        return sum(len(img) for fs in self.framesets for img in fs.observations.values())

    def subset(self, indices):
        """Session restricted to the framesets at ``indices`` (map shared)."""
        return CalibrationSession(
            self.point_ids,
            self.points,
            [self.framesets[k] for k in indices],
            self.camera_count,
            self.image_sizes,
            self.map_scale,
        )


@dataclass
class CalibrationResult:
    """Recovered rig: intrinsics and extrinsics per camera, pose per frameset.

    ``rig_poses`` maps frameset ids to map-to-rig transforms.  Extrinsics map
    rig coordinates into each camera frame; camera 0 is the identity.
    """

    intrinsics: list
    extrinsics: list
    rig_poses: dict
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def camera_count(self):
        return len(self.intrinsics)

    def camera_from_map(self, camera, frameset_id):
        return self.extrinsics[camera].compose(self.rig_poses[frameset_id])


def check_result(result, tol=1e-6):
    """Assert the invariants of a CalibrationResult, raising ValueError."""
    if len(result.extrinsics) != len(result.intrinsics):
        raise ValueError("extrinsics and intrinsics differ in count")
    for i, (cam, ext) in enumerate(zip(result.intrinsics, result.extrinsics)):
        if not isinstance(cam, CameraIntrinsics) or not isinstance(ext, RigidPose):
            raise ValueError(f"camera {i}: wrong types")
        R = ext.R
        if np.max(np.abs(R @ R.T - np.eye(3))) > tol or abs(np.linalg.det(R) - 1) > tol:
            raise ValueError(f"camera {i}: extrinsic rotation is not rigid")
    return result
