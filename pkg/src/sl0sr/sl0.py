"""Smoothed-l0 sparse coding, plus an ISTA l1 baseline.

The SL0 scheme replaces ``||a||_0`` with ``n - sum(exp(-a_i^2 / sigma^2))``
and maximises the smooth surrogate on the affine set ``{a : D a = x}``
while shrinking ``sigma`` geometrically. Each annealing level runs a few
steepest-ascent steps, each followed by an exact projection back onto the
constraint set.

Many patches share one dictionary, so the projection operator
``D^T (D D^T)^-1`` is factored once in :class:`FeasibleProjector` and
reused; the batch entry points code every column of a target matrix at
once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import SingularSystemError

__all__ = [
    "Sl0Config",
    "FeasibleProjector",
    "SparseProblem",
    "smoothed_l0_norm",
    "grad_F",
    "min_l2_solution",
    "project_feasible",
    "sl0_solve",
    "sl0_solve_batch",
    "ista_l1_solve",
    "ista_l1_solve_batch",
    "l1_objective",
    "spectral_norm_sq",
    "support",
    "l0_count",
]

# Entries below this fraction of the largest magnitude count as zero.
SUPPORT_THRESHOLD = 1e-3


@dataclass(frozen=True)
class Sl0Config:
    """Annealing parameters for :func:`sl0_solve`.

    Attributes
    ----------
    sigma_decrease_factor : float
        Ratio ``c`` of the geometric sigma sequence, in (0, 1).
    sigma_min : float
        Annealing stops once sigma drops below this value.
    inner_iterations : int
        Steepest-ascent steps ``L`` per sigma level.
    step_scale : float
        Step multiplier; each step moves by ``step_scale * sigma^2 / 2``
        times the gradient of ``F_sigma``.
    sigma_initial_scale : float
        ``sigma_1 = sigma_initial_scale * max|a0_i|`` where ``a0`` is the
        minimum-norm solution.
    """

    sigma_decrease_factor: float = 0.5
    sigma_min: float = 1e-4
    inner_iterations: int = 3
    step_scale: float = 2.0
    sigma_initial_scale: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.sigma_decrease_factor < 1.0:
            raise ValueError(
                f"sigma_decrease_factor must lie in (0, 1), got {self.sigma_decrease_factor}"
            )
        if self.sigma_min <= 0:
            raise ValueError(f"sigma_min must be positive, got {self.sigma_min}")
        if int(self.inner_iterations) != self.inner_iterations or self.inner_iterations < 1:
            raise ValueError(f"inner_iterations must be an integer >= 1, got {self.inner_iterations}")
        if self.step_scale <= 0:
            raise ValueError(f"step_scale must be positive, got {self.step_scale}")
        if self.sigma_initial_scale <= 0:
            raise ValueError(f"sigma_initial_scale must be positive, got {self.sigma_initial_scale}")

    def sigma_schedule(self, alpha_max: float) -> np.ndarray:
        """Return the decreasing sigma sequence for a start point with ``max|a0| = alpha_max``."""
        sigmas = []
        sigma = self.sigma_initial_scale * float(alpha_max)
        while sigma >= self.sigma_min:
            sigmas.append(sigma)
            sigma *= self.sigma_decrease_factor
        return np.array(sigmas)


class FeasibleProjector:
    """Factored projection onto ``{a : D a = x}`` for a fixed dictionary.

    Parameters
    ----------
    dictionary : array_like, shape (m, n)
        Overcomplete dictionary with full row rank.
    rcond : float
        Relative eigenvalue floor of ``D D^T`` below which the system is
        treated as singular.
    basis : array_like, shape (m, k), optional
        Orthonormal basis of a subspace holding every column of ``D`` and
        every target (for example zero-mean patches). The constraint is then
        imposed in those ``k`` coordinates, where ``D`` must have full row
        rank.
    """

    def __init__(self, dictionary, rcond: float = 1e-12, basis=None):
        D = np.array(dictionary, dtype=np.float64)
        if D.ndim != 2:
            raise ValueError(f"dictionary must be 2-D, got shape {D.shape}")
        if not np.all(np.isfinite(D)):
            raise ValueError("dictionary contains non-finite entries")
        Dr = D
        if basis is not None:
            basis = np.asarray(basis, dtype=np.float64)
            if basis.ndim != 2 or basis.shape[0] != D.shape[0]:
                raise ValueError(f"basis must have {D.shape[0]} rows, got shape {basis.shape}")
            Dr = basis.T @ D
        gram = Dr @ Dr.T
        eig = np.linalg.eigvalsh(gram)
        if eig[-1] <= 0 or eig[0] <= rcond * eig[-1]:
            raise SingularSystemError(
                f"D D^T is singular (eigenvalue ratio {eig[0] / max(eig[-1], 1e-300):.3e})"
            )
        factor = scipy.linalg.cho_factor(gram)
        pinv = scipy.linalg.cho_solve(factor, Dr).T
        if basis is not None:
            pinv = pinv @ basis.T
        D.flags.writeable = False
        pinv.flags.writeable = False
        self.dictionary = D
        self.pinv = pinv

    @property
    def shape(self):
        return self.dictionary.shape

    def min_l2(self, x):
        return self.pinv @ x

    def project(self, alpha, x):
        return alpha - self.pinv @ (self.dictionary @ alpha - x)


@dataclass(frozen=True)
class SparseProblem:
    """Linear system ``x = D a`` with ``D`` overcomplete (n > m).

    A prebuilt ``projector`` may be passed to share one factorization
    across many targets.
    """

    dictionary: np.ndarray
    target: np.ndarray
    projector: Optional[FeasibleProjector] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        D = np.asarray(self.dictionary, dtype=np.float64)
        x = np.asarray(self.target, dtype=np.float64)
        if D.ndim != 2:
            raise ValueError(f"dictionary must be 2-D, got shape {D.shape}")
        m, n = D.shape
        if n <= m:
            raise ValueError(f"dictionary must be overcomplete (n > m), got {m}x{n}")
        if x.shape != (m,):
            raise ValueError(f"target must have length {m}, got shape {x.shape}")
        projector = self.projector
        if projector is None:
            projector = FeasibleProjector(D)
        elif projector.shape != D.shape:
            raise ValueError("projector was built for a different dictionary shape")
        object.__setattr__(self, "dictionary", projector.dictionary)
        object.__setattr__(self, "target", x)
        object.__setattr__(self, "projector", projector)

    def with_target(self, target) -> "SparseProblem":
        return SparseProblem(self.dictionary, target, self.projector)


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def smoothed_l0_norm(v, sigma: float) -> float:
    """Smooth surrogate ``n - sum(exp(-v_i^2 / sigma^2))`` of ``||v||_0``."""
    _check_sigma(sigma)
    v = np.asarray(v, dtype=np.float64).ravel()
    return float(v.size - np.sum(np.exp(-(v * v) / sigma**2)))


def grad_F(v, sigma: float) -> np.ndarray:
    """Gradient of ``F_sigma(v) = sum(exp(-v_i^2 / sigma^2))``."""
    _check_sigma(sigma)
    v = np.asarray(v, dtype=np.float64)
    return -(2.0 * v / sigma**2) * np.exp(-(v * v) / sigma**2)


def min_l2_solution(problem: SparseProblem) -> np.ndarray:
    """Minimum-norm feasible point ``D^T (D D^T)^-1 x``."""
    return problem.projector.min_l2(problem.target)


def project_feasible(problem: SparseProblem, alpha) -> np.ndarray:
    """Orthogonal projection of ``alpha`` onto ``{a : D a = x}``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return problem.projector.project(alpha, problem.target)


def sl0_solve_batch(
    projector: FeasibleProjector,
    targets,
    config: Sl0Config = Sl0Config(),
    callback: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], None]] = None,
) -> np.ndarray:
    """Run SL0 on every column of ``targets`` (shape ``(m, N)``).

    Each column follows its own sigma sequence, seeded from its own
    minimum-norm solution, so the result for a column does not depend on
    the other columns in the batch.

    Parameters
    ----------
    projector : FeasibleProjector
        Factored dictionary.
    targets : array_like, shape (m, N)
    config : Sl0Config
    callback : callable, optional
        Called as ``callback(alpha, targets, columns)`` after every
        projection, with the current sub-batch of iterates. Intended for
        tests that assert feasibility along the path.

    Returns
    -------
    ndarray, shape (n, N)
    """
    X = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != projector.shape[0]:
        raise ValueError(f"targets must have shape ({projector.shape[0]}, N), got {X.shape}")
    D, pinv = projector.dictionary, projector.pinv
    A = pinv @ X
    sigma = config.sigma_initial_scale * np.max(np.abs(A), axis=0, initial=0.0)
    c = config.sigma_decrease_factor
    step = config.step_scale
    active = np.flatnonzero(sigma >= config.sigma_min)
    while active.size:
        full = active.size == X.shape[1]
        a = A if full else A[:, active]
        x = X if full else X[:, active]
        s2 = sigma[active] ** 2
        for _ in range(config.inner_iterations):
            # ascent step step_scale * sigma^2 / 2 * grad F, written out
            a = a - step * a * np.exp(-(a * a) / s2)
            a = a - pinv @ (D @ a - x)
            if callback is not None:
                callback(a, x, active)
        A[:, active] = a
        sigma[active] *= c
        active = active[sigma[active] >= config.sigma_min]
    return A


def sl0_solve(
    problem: SparseProblem,
    config: Sl0Config = Sl0Config(),
    callback: Optional[Callable] = None,
) -> np.ndarray:
    """Sparsest feasible representation of ``problem.target`` via SL0.

    A zero target returns the zero vector without iterating.
    """
    cb = None
    if callback is not None:
        def cb(a, x, columns):
            callback(a[:, 0])
    return sl0_solve_batch(problem.projector, problem.target[:, None], config, cb)[:, 0]


def spectral_norm_sq(dictionary, max_iters: int = 500, tol: float = 1e-12) -> float:
    """Largest eigenvalue of ``D D^T`` by power iteration."""
    D = np.asarray(dictionary, dtype=np.float64)
    G = D @ D.T
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    lam = 0.0
    for _ in range(max_iters):
        w = G @ v
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(new - lam) <= tol * max(new, 1e-300):
            lam = new
            break
        lam = new
    return lam


def l1_objective(dictionary, targets, alpha, l1_weight: float):
    """``0.5 ||D a - x||^2 + w ||a||_1`` (column-wise for 2-D input)."""
    r = np.asarray(dictionary) @ alpha - targets
    return 0.5 * np.sum(r * r, axis=0) + l1_weight * np.sum(np.abs(alpha), axis=0)


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def ista_l1_solve_batch(
    dictionary,
    targets,
    l1_weight: float,
    max_iters: int = 500,
    step: Optional[float] = None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """ISTA on every column of ``targets``, started from zero.

    The step defaults to ``1 / (1.01 * ||D||_2^2)``; the margin covers the
    power-iteration estimate approaching the top eigenvalue from below.
    """
    if not l1_weight > 0:
        raise ValueError(f"l1_weight must be positive, got {l1_weight}")
    if max_iters < 0:
        raise ValueError(f"max_iters must be non-negative, got {max_iters}")
    D = np.asarray(dictionary, dtype=np.float64)
    X = np.asarray(targets, dtype=np.float64)
    if step is None:
        lip = spectral_norm_sq(D)
        step = 1.0 / (1.01 * lip) if lip > 0 else 1.0
    A = np.zeros((D.shape[1], X.shape[1]))
    DtX = D.T @ X
    for _ in range(max_iters):
        A = _soft(A - step * (D.T @ (D @ A) - DtX), step * l1_weight)
        if callback is not None:
            callback(A)
    return A


def ista_l1_solve(
    problem: SparseProblem,
    l1_weight: float,
    max_iters: int = 500,
    step: Optional[float] = None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """Approximate minimiser of ``0.5 ||D a - x||^2 + l1_weight ||a||_1``."""
    cb = None
    if callback is not None:
        def cb(A):
            callback(A[:, 0])
    return ista_l1_solve_batch(
        problem.dictionary, problem.target[:, None], l1_weight, max_iters, step, cb
    )[:, 0]


def support(alpha, rel: float = SUPPORT_THRESHOLD) -> np.ndarray:
    """Indices with ``|a_i| > rel * max|a|`` (empty for the zero vector)."""
    a = np.abs(np.asarray(alpha))
    top = a.max(initial=0.0)
    if top == 0:
        return np.array([], dtype=int)
    return np.flatnonzero(a > rel * top)


def l0_count(alpha, rel: float = SUPPORT_THRESHOLD, axis: int = 0):
    """Hard-thresholded nonzero count; column-wise for 2-D input."""
    a = np.abs(np.asarray(alpha))
    if a.ndim == 1:
        return int(support(a, rel).size)
    top = a.max(axis=axis, keepdims=True)
    return np.sum((a > rel * top) & (top > 0), axis=axis)
