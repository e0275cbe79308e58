"""Session, calibration and membership files.

All documents are JSON.  Floats are written with Python's shortest
round-trip representation, so reading a file back yields bit-identical
doubles.  Writers lay documents out one record per line so parse errors can
point at a line.  Sessions also have a binary variant (magic header,
length-prefixed JSON header, little-endian arrays) for large inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, CameraModel
from .errors import IntegrityError, ParseError
from .geometry import RigidPose, Rotation
from .session import CalibrationResult, CalibrationSession, Frameset, ImageObservations

SESSION_FORMAT = "radcal-session"
CALIBRATION_FORMAT = "radcal-calibration"
MEMBERSHIP_FORMAT = "radcal-membership"
VERSION = 1
BINARY_MAGIC = b"RADCALB\x01"
RIGID_TOL = 1e-6


def _dump(value):
    return json.dumps(value, separators=(",", ":"))


def _floats(a):
    return [float(x) for x in np.asarray(a, dtype=float).reshape(-1)]


def _load_json(text, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


class _Fields:
    """Typed field access that names the failing path in errors."""

    def __init__(self, path):
        self.path = path

    def get(self, obj, key, where):
        if not isinstance(obj, dict) or key not in obj:
            raise ParseError(f"{self.path}: missing field '{where}{key}'")
        return obj[key]

    def array(self, obj, key, where, shape, dtype=float):
        value = self.get(obj, key, where)
        try:
            arr = np.array(value, dtype=dtype)
        except (TypeError, ValueError):
            raise ParseError(f"{self.path}: field '{where}{key}' is not a numeric array") from None
        if arr.size == 0 and len(shape) == 2:
            arr = arr.reshape(0, shape[1])
        if arr.ndim != len(shape) or any(s is not None and s != d for s, d in zip(shape, arr.shape)):
            raise ParseError(f"{self.path}: field '{where}{key}' has shape {arr.shape}, expected {shape}")
        if dtype is float and not np.all(np.isfinite(arr)):
            raise ParseError(f"{self.path}: field '{where}{key}' contains non-finite values")
        return arr

    def header(self, doc, expected):
        fmt = self.get(doc, "format", "")
        if fmt != expected:
            raise ParseError(f"{self.path}: format is {fmt!r}, expected {expected!r}")
        version = self.get(doc, "version", "")
        if version != VERSION:
            raise ParseError(f"{self.path}: unsupported version {version!r}")


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


def write_session(session, path):
    """Write a session document; ``.rcb`` paths use the binary variant."""
    path = Path(path)
    if path.suffix == ".rcb":
        return write_session_binary(session, path)
    lines = [
        "{",
        f'"format":{_dump(SESSION_FORMAT)},',
        f'"version":{VERSION},',
        f'"camera_count":{int(session.camera_count)},',
        f'"image_sizes":{_dump(session.image_sizes.tolist())},',
        f'"map_scale":{_dump(float(session.map_scale))},',
        '"points":[',
    ]
    rows = [_dump([int(pid), *_floats(x)]) for pid, x in zip(session.point_ids, session.points)]
    lines.append(",\n".join(rows))
    lines.append("],")
    lines.append('"framesets":[')
    fs_rows = []
    for fs in session.framesets:
        cams = []
        for cam in sorted(fs.observations):
            img = fs.observations[cam]
            cams.append(
                _dump(
                    {
                        "camera": int(cam),
                        "point_ids": img.point_ids.tolist(),
                        "pixels": np.asarray(img.pixels, float).tolist(),
                    }
                )
            )
        head = f'{{"id":{int(fs.frameset_id)},"timestamp":{_dump(float(fs.timestamp))},"images":['
        fs_rows.append(head + ("\n" + ",\n".join(cams) + "\n" if cams else "") + "]}")
    lines.append(",\n".join(fs_rows))
    lines.append("]")
    lines.append("}")
    path.write_text("\n".join(lines) + "\n")


def _session_from_doc(doc, path):
    f = _Fields(path)
    f.header(doc, SESSION_FORMAT)
    n_cam = f.get(doc, "camera_count", "")
    if not isinstance(n_cam, int) or n_cam < 1:
        raise ParseError(f"{path}: field 'camera_count' must be a positive integer")
    sizes = f.array(doc, "image_sizes", "", (n_cam, 2), dtype=np.int64)
    scale = f.get(doc, "map_scale", "")
    if not isinstance(scale, (int, float)) or not scale > 0:
        raise ParseError(f"{path}: field 'map_scale' must be a positive number")
    table = f.array(doc, "points", "", (None, 4))
    ids = table[:, 0]
    if np.any(ids != np.round(ids)):
        raise ParseError(f"{path}: point ids must be integers")
    framesets = []
    for n, entry in enumerate(f.get(doc, "framesets", "")):
        where = f"framesets[{n}]."
        fid = f.get(entry, "id", where)
        stamp = f.get(entry, "timestamp", where)
        if not isinstance(fid, int) or not isinstance(stamp, (int, float)):
            raise ParseError(f"{path}: bad id or timestamp in '{where[:-1]}'")
        fs = Frameset(fid, float(stamp))
        for m, img in enumerate(f.get(entry, "images", where)):
            w = f"{where}images[{m}]."
            cam = f.get(img, "camera", w)
            if not isinstance(cam, int):
                raise ParseError(f"{path}: field '{w}camera' must be an integer")
            if cam in fs.observations:
                raise ParseError(f"{path}: camera {cam} listed twice in '{where[:-1]}'")
            pids = f.array(img, "point_ids", w, (None,), dtype=np.int64)
            pix = f.array(img, "pixels", w, (len(pids), 2))
            fs.observations[cam] = ImageObservations(pids, pix)
        framesets.append(fs)
    # Point ids were parsed as floats within a row; they are exact below 2^53.
    session = CalibrationSession(ids.astype(np.int64), table[:, 1:], framesets, n_cam, sizes, float(scale))
    return _validated(session, path)


def _validated(session, path):
    try:
        return session.validate()
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_session(path):
    """Read and validate a session (JSON or binary, detected by the magic header)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc.strerror}") from None
    if data.startswith(BINARY_MAGIC):
        return _read_session_binary(data, path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError(f"{path}: not UTF-8 text and no binary magic header") from None
    return _session_from_doc(_load_json(text, path), path)


# Binary layout: magic, u64 header length, JSON header, then arrays in header order.
_BIN_ARRAYS = (
    ("point_ids", "<i8", 1),
    ("points", "<f8", 3),
    ("obs_frameset", "<i8", 1),
    ("obs_camera", "<i8", 1),
    ("obs_point_id", "<i8", 1),
    ("obs_pixel", "<f8", 2),
)


def write_session_binary(session, path):
    fs_idx, cams, pids, pix = [], [], [], []
    for n, fs in enumerate(session.framesets):
        for cam in sorted(fs.observations):
            img = fs.observations[cam]
            fs_idx.append(np.full(len(img), n))
            cams.append(np.full(len(img), cam))
            pids.append(img.point_ids)
            pix.append(img.pixels)
    cat = lambda xs, w: np.concatenate(xs) if xs else np.zeros((0,) if w == 1 else (0, w))  # noqa: E731
    arrays = {
        "point_ids": session.point_ids,
        "points": session.points,
        "obs_frameset": cat(fs_idx, 1),
        "obs_camera": cat(cams, 1),
        "obs_point_id": cat(pids, 1),
        "obs_pixel": cat(pix, 2),
    }
    header = {
        "format": SESSION_FORMAT,
        "version": VERSION,
        "camera_count": int(session.camera_count),
        "image_sizes": session.image_sizes.tolist(),
        "map_scale": float(session.map_scale),
        "framesets": [
            {"id": int(fs.frameset_id), "timestamp": float(fs.timestamp), "cameras": sorted(fs.observations)}
            for fs in session.framesets
        ],
        "arrays": [{"name": name, "dtype": dt, "length": int(len(arrays[name]))} for name, dt, _ in _BIN_ARRAYS],
    }
    blob = _dump(header).encode()
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, dt, width in _BIN_ARRAYS:
            fh.write(np.ascontiguousarray(arrays[name], dtype=dt).tobytes())


def _read_session_binary(data, path):
    f = _Fields(path)
    pos = len(BINARY_MAGIC)
    if len(data) < pos + 8:
        raise ParseError(f"{path}: truncated binary header")
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + n:
        raise ParseError(f"{path}: truncated binary header")
    header = _load_json(data[pos : pos + n].decode("utf-8", errors="replace"), path)
    pos += n
    f.header(header, SESSION_FORMAT)
    specs = f.get(header, "arrays", "")
    arrays = {}
    for (name, dt, width), spec in zip(_BIN_ARRAYS, specs):
        if spec.get("name") != name or spec.get("dtype") != dt:
            raise ParseError(f"{path}: unexpected array descriptor {spec!r}")
        count = int(spec["length"]) * width
        size = count * 8
        if len(data) < pos + size:
            raise ParseError(f"{path}: truncated array '{name}'")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=pos).astype(dt[1:])
        arrays[name] = arr.reshape(-1, width) if width > 1 else arr
        pos += size
    if len(arrays) != len(_BIN_ARRAYS):
        raise ParseError(f"{path}: missing array descriptors")
    if pos != len(data):
        raise ParseError(f"{path}: {len(data) - pos} trailing bytes")
    framesets = []
    order = np.lexsort((arrays["obs_camera"], arrays["obs_frameset"]))
    if not np.array_equal(order, np.arange(len(order))):
        raise ParseError(f"{path}: observations are not grouped by frameset and camera")
    for k, entry in enumerate(f.get(header, "framesets", "")):
        fs = Frameset(int(entry["id"]), float(entry["timestamp"]))
        sel_fs = arrays["obs_frameset"] == k
        for cam in entry["cameras"]:
            sel = sel_fs & (arrays["obs_camera"] == cam)
            fs.observations[int(cam)] = ImageObservations(arrays["obs_point_id"][sel], arrays["obs_pixel"][sel])
        framesets.append(fs)
    session = CalibrationSession(
        arrays["point_ids"],
        arrays["points"],
        framesets,
        int(header["camera_count"]),
        np.array(header["image_sizes"]),
        float(header["map_scale"]),
    )
    return _validated(session, path)


# ---------------------------------------------------------------------------
# Calibration results
# ---------------------------------------------------------------------------


def _pose_doc(pose):
    return {
        "quaternion": _floats(pose.rotation.quat),
        "translation": _floats(pose.translation),
        "matrix": [_floats(row) for row in pose.matrix()],
    }


def _pose_from_doc(doc, f, where):
    if isinstance(doc, dict) and "quaternion" in doc:
        q = f.array(doc, "quaternion", where, (4,))
        t = f.array(doc, "translation", where, (3,))
        if abs(np.linalg.norm(q) - 1.0) > RIGID_TOL:
            raise ParseError(f"{f.path}: '{where}quaternion' is not a unit quaternion")
        pose = RigidPose(Rotation(q), t)
        if "matrix" in doc:
            M = f.array(doc, "matrix", where, (4, 4))
            if np.max(np.abs(M - pose.matrix())) > RIGID_TOL:
                raise ParseError(f"{f.path}: '{where}matrix' disagrees with its quaternion")
        return pose
    M = f.array(doc, "matrix", where, (4, 4))
    R = M[:3, :3]
    if (
        np.max(np.abs(R @ R.T - np.eye(3))) > RIGID_TOL
        or abs(np.linalg.det(R) - 1.0) > RIGID_TOL
        or np.max(np.abs(M[3] - [0, 0, 0, 1])) > RIGID_TOL
    ):
        raise ParseError(f"{f.path}: '{where}matrix' is not a rigid transform")
    return RigidPose.from_matrix(M)


def _plain(value):
    """Diagnostics and config values as JSON-ready builtins."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if hasattr(value, "value"):
        return value.value
    return value


def calibration_document(result):
    cameras = []
    for i, (cam, ext) in enumerate(zip(result.intrinsics, result.extrinsics)):
        cameras.append(
            {
                "index": i,
                "model": cam.model.value,
                "focal": float(cam.focal),
                "principal_point": _floats(cam.principal_point),
                "distortion": _floats(cam.distortion),
                "extrinsic": _pose_doc(ext),
            }
        )
    poses = [{"frameset_id": int(k), **_pose_doc(q)} for k, q in sorted(result.rig_poses.items())]
    return {
        "format": CALIBRATION_FORMAT,
        "version": VERSION,
        "cameras": cameras,
        "rig_poses": poses,
        "diagnostics": _plain(result.diagnostics),
        "config": _plain(result.config),
    }


def write_calibration(result, path):
    doc = calibration_document(result)
    lines = ["{"]
    lines.append(f'"format":{_dump(doc["format"])},')
    lines.append(f'"version":{VERSION},')
    lines.append('"cameras":[\n' + ",\n".join(_dump(c) for c in doc["cameras"]) + "\n],")
    lines.append('"rig_poses":[\n' + ",\n".join(_dump(p) for p in doc["rig_poses"]) + "\n],")
    lines.append('"diagnostics":' + json.dumps(doc["diagnostics"], indent=1) + ",")
    lines.append('"config":' + json.dumps(doc["config"], indent=1))
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration(path):
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: cannot read: {exc}") from None
    doc = _load_json(text, path)
    f = _Fields(path)
    f.header(doc, CALIBRATION_FORMAT)
    intr, extr = [], []
    for n, cam in enumerate(f.get(doc, "cameras", "")):
        where = f"cameras[{n}]."
        if f.get(cam, "index", where) != n:
            raise ParseError(f"{path}: '{where}index' is out of order")
        try:
            model = CameraModel.parse(f.get(cam, "model", where))
            intr.append(
                CameraIntrinsics(
                    model,
                    float(f.get(cam, "focal", where)),
                    f.array(cam, "principal_point", where, (2,)),
                    f.array(cam, "distortion", where, (4,)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: '{where[:-1]}': {exc}") from None
        extr.append(_pose_from_doc(f.get(cam, "extrinsic", where), f, where + "extrinsic."))
    poses = {}
    for n, entry in enumerate(f.get(doc, "rig_poses", "")):
        where = f"rig_poses[{n}]."
        fid = f.get(entry, "frameset_id", where)
        if not isinstance(fid, int) or fid in poses:
            raise ParseError(f"{path}: bad or duplicate '{where}frameset_id'")
        poses[fid] = _pose_from_doc(entry, f, where)
    return CalibrationResult(intr, extr, poses, doc.get("diagnostics", {}), doc.get("config", {}))


# ---------------------------------------------------------------------------
# Ground-truth inlier membership
# ---------------------------------------------------------------------------


def write_membership(membership, path):
    rows = [
        _dump({"frameset_id": int(j), "camera": int(i), "inlier": [int(b) for b in mask]})
        for (j, i), mask in sorted(membership.items())
    ]
    text = f'{{\n"format":{_dump(MEMBERSHIP_FORMAT)},\n"version":{VERSION},\n"images":[\n' + ",\n".join(rows) + "\n]\n}\n"
    Path(path).write_text(text)


def read_membership(path):
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: cannot read: {exc}") from None
    doc = _load_json(text, path)
    f = _Fields(path)
    f.header(doc, MEMBERSHIP_FORMAT)
    out = {}
    for n, entry in enumerate(f.get(doc, "images", "")):
        where = f"images[{n}]."
        key = (int(f.get(entry, "frameset_id", where)), int(f.get(entry, "camera", where)))
        out[key] = f.array(entry, "inlier", where, (None,), dtype=np.int64).astype(bool)
    return out


def check_membership(membership, session):
    """IntegrityError if a membership entry does not match an image of ``session``."""
    images = {(fs.frameset_id, cam): len(img) for fs in session.framesets for cam, img in fs.observations.items()}
    for key, mask in membership.items():
        if images.get(key) != len(mask):
            raise IntegrityError(f"membership entry {key} does not match the session")
