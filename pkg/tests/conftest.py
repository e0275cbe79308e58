import numpy as np
import pytest

from radcal.geometry import RigidPose, Rotation


def richardson_jacobian(problem, h=1e-4):
    """Central differences at h and h/2 combined by Richardson extrapolation."""
    params = problem.params
    n = params.n
    r0, _ = problem.evaluate(jacobian=False)

    def central(step):
        out = np.zeros((r0.size, n))
        for k in range(n):
            snap = params.snapshot()
            dx = np.zeros(n)
            dx[k] = step
            params.step(dx)
            rp, _ = problem.evaluate(jacobian=False)
            params.restore(snap)
            dx[k] = -step
            params.step(dx)
            rm, _ = problem.evaluate(jacobian=False)
            params.restore(snap)
            out[:, k] = (rp - rm).ravel() / (2 * step)
        return out

    d1 = central(h)
    d2 = central(h / 2)
    return (4 * d2 - d1) / 3


def jacobian_violation(problem, rel=1e-5, abs_floor=1e-8):
    """Largest excess of |J - J_fd| over rel*|J_fd| + abs_floor (<= 0 means pass)."""
    _, J = problem.evaluate(jacobian=True)
    J = J.toarray() if hasattr(J, "toarray") else np.asarray(J)
    Jfd = richardson_jacobian(problem)
    return float(np.max(np.abs(J - Jfd) - (rel * np.abs(Jfd) + abs_floor)))


def random_pose(rng, scale=1.0):
    return RigidPose(Rotation.random(rng), rng.normal(size=3) * scale)


def small_rotation(rng, degrees):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(np.radians(degrees) * axis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def session_observations(session, truth):
    """All correspondences of a session as Observations plus ordered ground-truth rig poses."""
    from radcal.optim import Observations

    cams, fss, pts, pix, poses = [], [], [], [], []
    for k, fs in enumerate(session.framesets):
        poses.append(truth.rig_poses[fs.frameset_id])
        for i in sorted(fs.observations):
            img = fs.observations[i]
            cams.append(np.full(len(img), i))
            fss.append(np.full(len(img), k))
            pts.append(session.point_rows(img.point_ids))
            pix.append(img.pixels)
    obs = Observations(np.concatenate(cams), np.concatenate(fss), np.concatenate(pts), np.vstack(pix))
    return obs, poses
