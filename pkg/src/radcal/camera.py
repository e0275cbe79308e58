"""Camera intrinsics, forward projection and the division distortion model.

Two forward models are supported, both with a single focal length (square
pixels) and four distortion coefficients:

``radtan``
    pinhole + radial-tangential (k1, k2, p1, p2), applied to the normalized
    image point ``(X/Z, Y/Z)``.
``equidistant``
    Kannala-Brandt angle polynomial ``theta_d = theta (1 + k1 theta^2 + ...
    + k4 theta^8)`` with ``theta`` the angle to the optical axis.

Intrinsic parameter vectors used by the optimizers are ordered
``[f, cx, cy, d1, d2, d3, d4]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalDomain

EPS = 1e-12
N_INTRINSICS = 7


class CameraModel(str, enum.Enum):
    RADTAN = "radtan"
    EQUIDISTANT = "equidistant"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown camera model {value!r}; expected radtan or equidistant") from None


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    model: CameraModel
    focal: float
    principal_point: np.ndarray
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        object.__setattr__(self, "model", CameraModel.parse(self.model))
        focal = float(self.focal)
        if not np.isfinite(focal) or focal <= 0:
            raise ValueError(f"focal length must be positive, got {focal}")
        object.__setattr__(self, "focal", focal)
        pp = np.array(self.principal_point, dtype=float).reshape(2)
        dist = np.array(self.distortion, dtype=float).reshape(4)
        pp.setflags(write=False)
        dist.setflags(write=False)
        object.__setattr__(self, "principal_point", pp)
        object.__setattr__(self, "distortion", dist)

    @property
    def params(self):
        return np.concatenate([[self.focal], self.principal_point, self.distortion])

    @classmethod
    def from_params(cls, model, params):
        params = np.asarray(params, dtype=float)
        return cls(model, params[0], params[1:3], params[3:7])

    def replace(self, **kw):
        values = dict(
            model=self.model, focal=self.focal, principal_point=self.principal_point, distortion=self.distortion
        )
        values.update(kw)
        return CameraIntrinsics(**values)

    def project(self, X):
        return project(self, X)

    def radial_profile(self, rho):
        """Distorted radius in focal units for a ray at pinhole radius ``rho = tan(theta)``."""
        return radial_profile(self.model, self.distortion, rho)

    def is_monotone(self, max_radius_px, samples=256):
        """Whether the distorted radius grows with the ray angle out to ``max_radius_px``.

        ``max_radius_px`` is the largest pixel distance from the principal
        point the camera is used at, e.g. the image corner.
        """
        return is_monotone(self.model, self.focal, self.distortion, max_radius_px, samples)

    def __repr__(self):
        return (
            f"CameraIntrinsics({self.model.value}, f={self.focal:.6g}, "
            f"c={np.array2string(self.principal_point, precision=4)}, "
            f"d={np.array2string(self.distortion, precision=4)})"
        )


def _as_points(X):
    X = np.asarray(X, dtype=float)
    return X.reshape(-1, 3), X.ndim == 1


def project(intrinsics, X):
    """Project camera-frame points to distorted pixels; (3,) -> (2,), (n,3) -> (n,2)."""
    pix, _, _ = project_with_jacobians(intrinsics, X, jacobians=False)
    return pix


def project_with_jacobians(intrinsics, X, jacobians=True):
    """Projection plus its Jacobians w.r.t. the point (n,2,3) and intrinsics (n,2,7)."""
    pts, single = _as_points(X)
    f = intrinsics.focal
    c = intrinsics.principal_point
    d = intrinsics.distortion
    if intrinsics.model is CameraModel.RADTAN:
        pix, Jx, Jt = _project_radtan(pts, f, c, d, jacobians)
    else:
        pix, Jx, Jt = _project_equidistant(pts, f, c, d, jacobians)
    if single:
        pix = pix[0]
        if jacobians:
            Jx, Jt = Jx[0], Jt[0]
    return pix, Jx, Jt


def _project_radtan(P, f, c, d, jacobians):
    Z = P[:, 2]
    if np.any(Z <= EPS):
        raise NumericalDomain("point has non-positive depth")
    k1, k2, p1, p2 = d
    x = P[:, 0] / Z
    y = P[:, 1] / Z
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    pix = np.stack([f * xd + c[0], f * yd + c[1]], axis=1)
    if not jacobians:
        return pix, None, None
    n = len(Z)
    dr = k1 + 2 * k2 * r2  # d(radial)/d(r2)
    dxd_dx = radial + 2 * x * x * dr + 2 * p1 * y + 6 * p2 * x
    dxd_dy = 2 * x * y * dr + 2 * p1 * x + 2 * p2 * y
    dyd_dx = 2 * x * y * dr + 2 * p1 * x + 2 * p2 * y
    dyd_dy = radial + 2 * y * y * dr + 6 * p1 * y + 2 * p2 * x
    iz = 1.0 / Z
    Jx = np.empty((n, 2, 3))
    Jx[:, 0, 0] = f * dxd_dx * iz
    Jx[:, 0, 1] = f * dxd_dy * iz
    Jx[:, 0, 2] = -f * (dxd_dx * x + dxd_dy * y) * iz
    Jx[:, 1, 0] = f * dyd_dx * iz
    Jx[:, 1, 1] = f * dyd_dy * iz
    Jx[:, 1, 2] = -f * (dyd_dx * x + dyd_dy * y) * iz
    Jt = np.zeros((n, 2, 7))
    Jt[:, 0, 0] = xd
    Jt[:, 1, 0] = yd
    Jt[:, 0, 1] = 1.0
    Jt[:, 1, 2] = 1.0
    Jt[:, 0, 3] = f * x * r2
    Jt[:, 1, 3] = f * y * r2
    Jt[:, 0, 4] = f * x * r2 * r2
    Jt[:, 1, 4] = f * y * r2 * r2
    Jt[:, 0, 5] = f * 2 * x * y
    Jt[:, 1, 5] = f * (r2 + 2 * y * y)
    Jt[:, 0, 6] = f * (r2 + 2 * x * x)
    Jt[:, 1, 6] = f * 2 * x * y
    return pix, Jx, Jt


def _project_equidistant(P, f, c, d, jacobians):
    X, Y, Z = P[:, 0], P[:, 1], P[:, 2]
    r = np.hypot(X, Y)
    rho2 = r * r + Z * Z
    if np.any(rho2 <= EPS**2):
        raise NumericalDomain("ray has zero length")
    on_axis = r <= 1e-9 * np.sqrt(rho2)
    if np.any(on_axis & (Z < 0)):
        raise NumericalDomain("ray points straight backwards; image direction undefined")
    theta = np.arctan2(r, Z)
    t2 = theta * theta
    k1, k2, k3, k4 = d
    poly = 1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))
    theta_d = theta * poly
    r_safe = np.where(on_axis, 1.0, r)
    # g = theta_d / r, with the on-axis limit 1/Z.
    g = np.where(on_axis, 1.0 / np.where(on_axis, Z, 1.0), theta_d / r_safe)
    pix = np.stack([f * g * X + c[0], f * g * Y + c[1]], axis=1)
    if not jacobians:
        return pix, None, None
    n = len(Z)
    dpoly = 1 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))  # d(theta_d)/d(theta)
    dg_dr = np.where(on_axis, 0.0, (dpoly * Z / rho2 * r_safe - theta_d) / r_safe**2)
    dg_dZ = np.where(on_axis, -1.0 / np.where(on_axis, Z * Z, 1.0), -dpoly / rho2)
    ux, uy = X / r_safe, Y / r_safe
    dg = np.stack([dg_dr * ux, dg_dr * uy, dg_dZ], axis=1)
    Jx = np.empty((n, 2, 3))
    Jx[:, 0, :] = f * X[:, None] * dg
    Jx[:, 1, :] = f * Y[:, None] * dg
    Jx[:, 0, 0] += f * g
    Jx[:, 1, 1] += f * g
    Jt = np.zeros((n, 2, 7))
    Jt[:, 0, 0] = g * X
    Jt[:, 1, 0] = g * Y
    Jt[:, 0, 1] = 1.0
    Jt[:, 1, 2] = 1.0
    base = np.where(on_axis, 0.0, theta / r_safe)
    for k in range(4):
        w = f * base * t2 ** (k + 1)
        Jt[:, 0, 3 + k] = w * X
        Jt[:, 1, 3 + k] = w * Y
    return pix, Jx, Jt


def radial_profile(model, distortion, rho):
    """Distorted radius (focal units) of a ray whose pinhole radius is ``rho``.

    Only the radial terms enter; tangential coefficients are ignored.
    """
    rho = np.asarray(rho, dtype=float)
    d = np.asarray(distortion, dtype=float)
    model = CameraModel.parse(model)
    if model is CameraModel.RADTAN:
        r2 = rho * rho
        return rho * (1 + d[0] * r2 + d[1] * r2 * r2)
    theta = np.arctan(rho)
    t2 = theta * theta
    return theta * (1 + t2 * (d[0] + t2 * (d[1] + t2 * (d[2] + t2 * d[3]))))


def is_monotone(model, focal, distortion, max_radius_px, samples=256):
    model = CameraModel.parse(model)
    d = np.asarray(distortion, dtype=float)
    # Walk the ray angle out until the distorted radius passes max_radius_px.
    limit = np.pi / 2 - 1e-3 if model is CameraModel.EQUIDISTANT else np.arctan(4.0 * max_radius_px / focal)
    theta = np.linspace(0.0, limit, samples)
    if model is CameraModel.RADTAN:
        rd = radial_profile(model, d, np.tan(theta))
    else:
        t2 = theta * theta
        rd = theta * (1 + t2 * (d[0] + t2 * (d[1] + t2 * (d[2] + t2 * d[3]))))
    rd_px = focal * rd
    inside = np.nonzero(rd_px <= max_radius_px)[0]
    end = min((inside[-1] + 2) if len(inside) else 2, samples)
    return bool(np.all(np.diff(rd_px[:end]) > 0))


# ---------------------------------------------------------------------------
# Division model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DivisionModel:
    """``r_u = r / (1 + mu_1 r^2 + mu_2 r^4)`` with ``r`` in pixels."""

    mu: tuple = ()

    def __post_init__(self):
        mu = tuple(float(m) for m in self.mu)
        if len(mu) > 2:
            raise ValueError("at most two division coefficients are supported")
        object.__setattr__(self, "mu", mu)

    def denominator(self, r):
        r2 = np.asarray(r, dtype=float) ** 2
        out = np.ones_like(r2)
        power = np.ones_like(r2)
        for m in self.mu:
            power = power * r2
            out = out + m * power
        return out

    def undistort(self, r):
        return undistort_division(r, self)

    def is_monotone(self, max_radius, samples=256):
        """``r_u`` finite, positive and increasing on ``(0, max_radius]``."""
        r = np.linspace(0.0, max_radius, samples)
        den = self.denominator(r)
        if np.any(den <= EPS):
            return False
        return bool(np.all(np.diff(r / den) > 0))


def undistort_division(radius, model):
    """Undistorted radius ``r / (1 + sum_k mu_k r^(2k))``."""
    den = model.denominator(radius)
    if np.any(den <= EPS):
        raise NumericalDomain("division-model denominator is not positive")
    out = np.asarray(radius, dtype=float) / den
    return float(out) if np.ndim(out) == 0 else out


def fit_model_to_division(model, focal, division, max_radius_px, samples=64):
    """Distortion coefficients of ``model`` matching a division profile.

    The target model's radial profile is fit to the division model's by
    linear least squares on ``samples`` radii in ``(0, max_radius_px]``;
    tangential terms start at zero.
    """
    model = CameraModel.parse(model)
    r = np.linspace(max_radius_px / samples, max_radius_px, samples)
    rho = undistort_division(r, division) / focal
    target = r / focal
    coeffs = np.zeros(4)
    if model is CameraModel.RADTAN:
        A = np.stack([rho**3, rho**5], axis=1)
        rhs = target - rho
        sol = _scaled_lstsq(A, rhs)
        coeffs[:2] = sol
    else:
        theta = np.arctan(rho)
        A = np.stack([theta ** (2 * k + 3) for k in range(4)], axis=1)
        rhs = target - theta
        coeffs[:] = _scaled_lstsq(A, rhs)
    return coeffs


def _scaled_lstsq(A, b):
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    sol, *_ = np.linalg.lstsq(A / scale, b, rcond=None)
    return sol / scale
