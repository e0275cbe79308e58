"""RANSAC engine and the Cauchy robust loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, InsufficientData, NoValidSolution, NotEnoughInliers

RNG_NAME = "numpy.PCG64"


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 4.0
    confidence: float = 0.999
    max_iterations: int = 1000
    min_iterations: int = 10
    min_inliers: int = 20
    refit_rounds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class RansacResult:
    model: object
    inlier_mask: np.ndarray
    iterations_used: int
    inlier_rms: float

    @property
    def num_inliers(self):
        return int(np.count_nonzero(self.inlier_mask))


def make_rng(seed, *keys):
    """Seeded PCG64 generator; extra integer keys derive independent streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, keys)])))


def required_iterations(inlier_ratio, sample_size, confidence):
    """Standard bound ``log(1 - p) / log(1 - w^s)``."""
    w_s = inlier_ratio**sample_size
    if w_s >= 1.0:
        return 1
    if w_s <= 0.0:
        return math.inf
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - w_s))


def uniform_sampler(rng, n, k):
    return rng.choice(n, size=k, replace=False)


def _score(residuals, threshold):
    mask = residuals <= threshold
    count = int(np.count_nonzero(mask))
    rms = float(np.sqrt(np.mean(residuals[mask] ** 2))) if count else math.inf
    return mask, count, rms


def _better(count, rms, best_count, best_rms):
    return count > best_count or (count == best_count and rms < best_rms)


def ransac(n_data, sample_size, solver, scorer, config, refit=None, sampler=uniform_sampler):
    """Generic RANSAC.

    ``solver(indices)`` returns a list of candidate models for a minimal
    sample (and may raise any radcal error for degenerate samples);
    ``scorer(model)`` returns a residual per datum; the optional
    ``refit(model, mask)`` re-estimates a model from an inlier set.

    The best model has the most inliers, ties broken by lower inlier RMS.
    Iterations adapt to the inlier ratio and stop at ``max_iterations``.
    Deterministic for a given ``config.seed``.
    """
    if n_data < sample_size:
        raise InsufficientData(f"{n_data} data points for a minimal sample of {sample_size}")
    rng = make_rng(config.seed)
    best = None
    best_mask = None
    best_count, best_rms = -1, math.inf
    needed = config.max_iterations
    it = 0
    while it < min(needed, config.max_iterations):
        it += 1
        idx = sampler(rng, n_data, sample_size)
        try:
            models = solver(idx)
        except (DegenerateConfiguration, NoValidSolution, ValueError, ArithmeticError):
            continue
        for model in models:
            mask, count, rms = _score(scorer(model), config.threshold)
            if _better(count, rms, best_count, best_rms):
                best, best_mask, best_count, best_rms = model, mask, count, rms
                needed = max(config.min_iterations, required_iterations(count / n_data, sample_size, config.confidence))

    if best is None:
        raise NotEnoughInliers("no sample produced a model")

    if refit is not None and best_count >= sample_size:
        for _ in range(config.refit_rounds):
            try:
                model = refit(best, best_mask)
            except (DegenerateConfiguration, NoValidSolution, ValueError, ArithmeticError):
                break
            mask, count, rms = _score(scorer(model), config.threshold)
            if not _better(count, rms, best_count, best_rms):
                break
            same = np.array_equal(mask, best_mask)
            best, best_mask, best_count, best_rms = model, mask, count, rms
            if same:
                break

    if best_count < config.min_inliers:
        raise NotEnoughInliers(f"best model has {best_count} inliers, need {config.min_inliers}")
    return RansacResult(best, best_mask, it, best_rms)


# ---------------------------------------------------------------------------
# Cauchy loss, scale 1
# ---------------------------------------------------------------------------


def cauchy_cost(squared_residual):
    """``log(1 + s)`` for squared residual ``s``."""
    s = np.asarray(squared_residual, dtype=float)
    if np.any(s < 0):
        raise ValueError("squared residual must be non-negative")
    out = np.log1p(s)
    return float(out) if out.ndim == 0 else out


def cauchy_derivative(squared_residual):
    """``d/ds log(1 + s) = 1 / (1 + s)``."""
    return 1.0 / (1.0 + np.asarray(squared_residual, dtype=float))


class CauchyLoss:
    name = "cauchy"

    def __call__(self, s):
        return np.log1p(s)

    def weight(self, s):
        return 1.0 / (1.0 + s)


class TrivialLoss:
    name = "trivial"

    def __call__(self, s):
        return np.asarray(s, dtype=float)

    def weight(self, s):
        return np.ones_like(np.asarray(s, dtype=float))
