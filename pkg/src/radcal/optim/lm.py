"""Levenberg-Marquardt with robust loss on grouped manifold parameters.

Parameters are stored in named groups.  A group is either a stack of
rotations (quaternions, updated by ``q <- exp(dw) q`` with a 3-dof tangent)
or a stack of plain vectors.  Individual blocks of a group can be held
constant.  Residuals come as an ``(m, k)`` array: ``m`` residual blocks of
``k`` components each; the robust loss acts on each block's squared norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..errors import NumericalFailure
from ..geometry import matrix_from_quat, quat_from_matrix, so3_exp
from ..robust import CauchyLoss

DENSE_LIMIT = 6000


@dataclass(frozen=True)
class LmConfig:
    max_iterations: int = 100
    function_tolerance: float = 1e-10
    parameter_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-12
    initial_damping: float = 1e-4

    def __post_init__(self):
        if min(self.function_tolerance, self.parameter_tolerance) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class LmReport:
    initial_cost: float
    final_cost: float
    iterations: int
    termination: str
    accepted_steps: int = 0
    cost_history: list = field(default_factory=list)

    def as_dict(self):
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "accepted_steps": self.accepted_steps,
            "termination": self.termination,
            "cost_history": list(self.cost_history),
        }


class Group:
    def __init__(self, name, values, kind, free):
        self.name = name
        self.kind = kind
        self.values = np.array(values, dtype=float)
        if kind == "rotation":
            if self.values.ndim == 3:
                self.values = quat_from_matrix(self.values).reshape(-1, 4)
            self.dim = 3
        else:
            self.values = self.values.reshape(len(self.values), -1)
            self.dim = self.values.shape[1]
        n = len(self.values)
        self.free = np.ones(n, bool) if free is None else np.asarray(free, bool).copy()
        self.offsets = np.full(n, -1, dtype=np.int64)

    def matrices(self):
        return matrix_from_quat(self.values)


class ParamSet:
    """Ordered parameter groups with a flat tangent-space indexing."""

    def __init__(self):
        self.groups = {}
        self.n = 0
        self.eliminated = None

    def add(self, name, values, kind="vector", free=None):
        g = Group(name, values, kind, free)
        self.groups[name] = g
        return g

    def __getitem__(self, name):
        return self.groups[name]

    def finalize(self, eliminate=None):
        """Assign tangent offsets; the ``eliminate`` group (3-vectors) goes last for Schur."""
        offset = 0
        order = [g for g in self.groups.values() if g.name != eliminate]
        if eliminate is not None:
            order.append(self.groups[eliminate])
        for g in order:
            if g.name == eliminate:
                self.eliminated = (offset, g)
            idx = np.nonzero(g.free)[0]
            g.offsets[:] = -1
            g.offsets[idx] = offset + g.dim * np.arange(len(idx))
            offset += g.dim * len(idx)
        self.n = offset
        return self

    def snapshot(self):
        return {name: g.values.copy() for name, g in self.groups.items()}

    def restore(self, snap):
        for name, vals in snap.items():
            self.groups[name].values = vals.copy()

    def step(self, dx):
        for g in self.groups.values():
            idx = np.nonzero(g.free)[0]
            if len(idx) == 0:
                continue
            delta = dx[g.offsets[idx][:, None] + np.arange(g.dim)]
            if g.kind == "rotation":
                R = so3_exp(delta) @ matrix_from_quat(g.values[idx])
                g.values[idx] = quat_from_matrix(R).reshape(-1, 4)
            else:
                g.values[idx] += delta

    def norm(self):
        total = 0.0
        for g in self.groups.values():
            if g.kind == "vector":
                total += float(np.sum(g.values[g.free] ** 2))
            else:
                total += float(np.count_nonzero(g.free))
        return math.sqrt(total)


class JacobianBuilder:
    """Collects dense per-residual-block Jacobian chunks into a sparse matrix."""

    def __init__(self, m_blocks, k, params):
        self.k = k
        self.m = m_blocks
        self.params = params
        self.rows, self.cols, self.vals = [], [], []

    def add(self, group, block_index, J, residual_index=None):
        """``J`` is (r, k, d): residual blocks ``residual_index`` w.r.t. ``group[block_index]``."""
        g = self.params[group] if isinstance(group, str) else group
        block_index = np.broadcast_to(np.asarray(block_index), (J.shape[0],))
        ridx = np.arange(J.shape[0]) if residual_index is None else np.asarray(residual_index)
        off = g.offsets[block_index]
        keep = off >= 0
        if not np.any(keep):
            return
        J = J[keep]
        off = off[keep]
        ridx = ridx[keep]
        n, k, d = J.shape
        rows = (ridx[:, None] * self.k + np.arange(k))[:, :, None]
        cols = (off[:, None] + np.arange(d))[:, None, :]
        self.rows.append(np.broadcast_to(rows, J.shape).ravel())
        self.cols.append(np.broadcast_to(cols, J.shape).ravel())
        self.vals.append(J.ravel())

    def build(self):
        shape = (self.m * self.k, self.params.n)
        if not self.rows:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape
        )


class LeastSquaresProblem:
    """Interface: ``params`` plus ``evaluate(jacobian)`` -> (residuals (m,k), J or None)."""

    params: ParamSet

    def evaluate(self, jacobian=True):
        raise NotImplementedError


def robust_cost(residuals, loss):
    s = np.sum(np.asarray(residuals) ** 2, axis=1)
    return float(np.sum(loss(s)))


def _solve_damped(H, g, lam, params):
    """Solve (H + lam D) dx = -g, with Schur elimination of the trailing point group."""
    diag = H.diagonal().copy()
    D = np.clip(diag, 1e-6, 1e32)
    n = H.shape[0]
    if params.eliminated is None:
        A = (H + sp.diags(lam * D)).toarray() if sp.issparse(H) else H + np.diag(lam * D)
        c, low = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve((c, low), -g, check_finite=False)
    start, grp = params.eliminated
    H = sp.csr_matrix(H) + sp.diags(lam * D)
    U = H[:start, :start]
    W = H[:start, start:]
    V = H[start:, start:]
    nb = (n - start) // 3
    Vc = V.tocoo()
    blocks = np.zeros((nb, 3, 3))
    np.add.at(blocks, (Vc.row // 3, Vc.row % 3, Vc.col % 3), Vc.data)
    Vinv_blocks = np.linalg.inv(blocks)
    rows = (np.arange(nb)[:, None, None] * 3 + np.arange(3)[None, :, None]).repeat(3, axis=2)
    cols = (np.arange(nb)[:, None, None] * 3 + np.arange(3)[None, None, :]).repeat(3, axis=1)
    Vinv = sp.csr_matrix((Vinv_blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(n - start, n - start))
    gc, gp = g[:start], g[start:]
    WV = W @ Vinv
    S = (U - WV @ W.T).toarray()
    rhs = -gc + WV @ gp
    c, low = scipy.linalg.cho_factor(S, check_finite=False)
    dc = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    dp = Vinv @ (-gp - W.T @ dc)
    return np.concatenate([dc, dp])


def lm_minimize(problem, loss=None, config=None):
    """Minimize ``sum rho(||r_b||^2)`` over the problem's parameters in place.

    Steps are accepted only if they lower the robustified cost, so the cost
    never increases.  Returns an :class:`LmReport`.
    """
    loss = CauchyLoss() if loss is None else loss
    config = LmConfig() if config is None else config
    params = problem.params
    if params.n == 0:
        r, _ = problem.evaluate(jacobian=False)
        cost = robust_cost(r, loss)
        return LmReport(cost, cost, 0, "no_free_parameters", 0, [cost])

    r, J = problem.evaluate(jacobian=True)
    if r.size == 0:
        raise ValueError("problem has no residuals")
    if not np.all(np.isfinite(r)):
        raise NumericalFailure("initial residuals are not finite")
    cost = robust_cost(r, loss)
    report = LmReport(cost, cost, 0, "max_iterations", 0, [cost])
    lam = config.initial_damping
    nu = 2.0
    failures = 0

    fresh = True
    for it in range(config.max_iterations):
        if fresh:
            s = np.sum(r**2, axis=1)
            w = np.sqrt(loss.weight(s))
            rw = (r * w[:, None]).ravel()
            Jw = sp.diags(np.repeat(w, r.shape[1])) @ J
            g = Jw.T @ rw
            if np.max(np.abs(g)) <= config.gradient_tolerance or cost == 0.0:
                report.termination = "gradient_tolerance"
                break
            H = Jw.T @ Jw
            if params.eliminated is None and params.n <= DENSE_LIMIT:
                H = H.toarray()
            fresh = False
        report.iterations = it + 1
        snap = params.snapshot()
        while True:
            try:
                dx = _solve_damped(H, g, lam, params)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                dx = None
            if dx is None or not np.all(np.isfinite(dx)):
                failures += 1
                lam *= 10.0
                if failures > 30 or lam > 1e32:
                    raise NumericalFailure("normal equations stay indefinite under damping")
                continue
            break
        Hdx = H @ dx
        predicted = -(2.0 * g @ dx + dx @ Hdx)
        params.step(dx)
        r_new, _ = problem.evaluate(jacobian=False)
        cost_new = robust_cost(r_new, loss) if np.all(np.isfinite(r_new)) else math.inf
        small_step = np.linalg.norm(dx) <= config.parameter_tolerance * (params.norm() + config.parameter_tolerance)
        if cost_new < cost:
            rho = (cost - cost_new) / predicted if predicted > 0 else 1.0
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            report.accepted_steps += 1
            converged = abs(cost - cost_new) <= config.function_tolerance * cost
            cost = cost_new
            report.cost_history.append(cost)
            if converged:
                report.termination = "function_tolerance"
                break
            if small_step:
                report.termination = "parameter_tolerance"
                break
            r, J = problem.evaluate(jacobian=True)
            fresh = True
        else:
            params.restore(snap)
            if small_step:
                report.termination = "parameter_tolerance"
                break
            lam *= nu
            nu *= 2.0
            if lam > 1e32:
                report.termination = "damping_limit"
                break
    report.final_cost = cost
    return report


class VectorProblem(LeastSquaresProblem):
    """Plain-vector problem from ``fun(x) -> r`` and optional ``jac(x) -> J``.

    Each residual component is its own robust-loss block.  Without ``jac``
    the Jacobian comes from central differences.
    """

    def __init__(self, fun, x0, jac=None):
        self.fun = fun
        self.jac = jac
        self.params = ParamSet()
        self.params.add("x", np.asarray(x0, dtype=float).reshape(1, -1))
        self.params.finalize()

    @property
    def x(self):
        return self.params["x"].values[0].copy()

    def evaluate(self, jacobian=True):
        x = self.params["x"].values[0]
        r = np.atleast_1d(np.asarray(self.fun(x), dtype=float))
        if not jacobian:
            return r[:, None], None
        if self.jac is not None:
            J = np.atleast_2d(np.asarray(self.jac(x), dtype=float))
        else:
            J = np.empty((len(r), len(x)))
            for k in range(len(x)):
                h = 1e-6 * max(1.0, abs(x[k]))
                e = np.zeros_like(x)
                e[k] = h
                J[:, k] = (np.asarray(self.fun(x + e)) - np.asarray(self.fun(x - e))) / (2 * h)
        return r[:, None], sp.csr_matrix(J)
