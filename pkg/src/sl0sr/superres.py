"""Single-image super-resolution by coupled sparse coding.

Pipeline: plan an overlapping LR patch grid, remove each patch mean, code
the patch against the LR dictionary (SL0 by default, ISTA as an l1
baseline), synthesize the HR patch from the shared coefficients, average
the HR patches into ``X0`` and finally pull ``X0`` toward consistency with
the observation by gradient descent on

    J(X) = ||X - X0||^2 + lambda * ||S H X - Y||^2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .dictionary import CoupledDictionary
from .errors import ConfigurationError
from .imaging import DegradationConfig, as_image, degrade, degrade_adjoint
from .parallel import map_columns
from .patches import PatchGrid, extract, is_zero_mean, merge, plan_grid, remove_mean, zero_mean_basis
from .sl0 import FeasibleProjector, Sl0Config, ista_l1_solve_batch, l0_count, sl0_solve_batch, spectral_norm_sq

__all__ = [
    "SrConfig",
    "SrReport",
    "SOLVERS",
    "coding_projector",
    "code_patch",
    "code_patches",
    "reconstruct_patch",
    "reconstruct_patches",
    "assemble_x0",
    "global_objective",
    "global_reconstruct",
    "super_resolve",
]

SOLVERS = ("sl0", "ista")
MAX_HALVINGS = 20


@dataclass(frozen=True)
class SrConfig:
    """Reconstruction parameters.

    ``lam`` weighs the data term of ``J`` and ``nu`` is the initial
    gradient step. ``l1_weight`` and ``ista_iters`` only apply when
    ``solver == "ista"``.
    """

    scale: int = 2
    lr_patch_size: int = 5
    overlap: int = 1
    lam: float = 0.1
    nu: float = 0.5
    max_global_iters: int = 100
    global_tol: float = 1e-5
    coding: Sl0Config = field(default_factory=Sl0Config)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    solver: str = "sl0"
    l1_weight: float = 1e-3
    ista_iters: int = 100

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not 0 <= self.overlap < self.lr_patch_size:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < lr_patch_size, got {self.overlap}"
            )
        if self.max_global_iters < 0:
            raise ValueError(f"max_global_iters must be >= 0, got {self.max_global_iters}")
        if self.degradation.scale != self.scale:
            raise ConfigurationError(
                f"degradation scale {self.degradation.scale} != reconstruction scale {self.scale}"
            )
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")


@dataclass
class SrReport:
    patch_count: int = 0
    mean_patch_sparsity: float = 0.0
    global_iterations_used: int = 0
    objective_trace: List[float] = field(default_factory=list)
    wall_times: Dict[str, float] = field(default_factory=dict)


# --- patch stages -------------------------------------------------------

def _coding_matrix(d_low):
    d_low = np.asarray(d_low, dtype=np.float64)
    return np.sqrt(d_low.shape[0]) * d_low


def coding_projector(D) -> FeasibleProjector:
    """Projector for an LR coding matrix, restricted to zero-mean patches
    when the atoms themselves are mean-free."""
    basis = zero_mean_basis(D.shape[0]) if is_zero_mean(D, axis=0) else None
    return FeasibleProjector(D, basis=basis)


def code_patch(d_low, y, coding: Sl0Config = Sl0Config()) -> np.ndarray:
    """SL0 code of one zero-mean LR patch against the stored ``d_low``."""
    y = np.asarray(y, dtype=np.float64)
    projector = coding_projector(_coding_matrix(d_low))
    return sl0_solve_batch(projector, y[:, None], coding)[:, 0]


def code_patches(dictionary: CoupledDictionary, patches, config: SrConfig = SrConfig(),
                 threads: int = 1) -> np.ndarray:
    """Codes for every row of ``patches``; returns shape ``(atom_count, N)``."""
    Y = np.asarray(patches, dtype=np.float64).T
    D = dictionary.coding_matrix
    if config.solver == "sl0":
        projector = coding_projector(D)
        return map_columns(lambda b: sl0_solve_batch(projector, b, config.coding), Y, threads)
    step = 1.0 / (1.01 * spectral_norm_sq(D))
    return map_columns(
        lambda b: ista_l1_solve_batch(D, b, config.l1_weight, config.ista_iters, step), Y, threads
    )


def reconstruct_patch(d_high, alpha, lr_mean: float) -> np.ndarray:
    """HR patch ``sqrt(m_h) * d_high @ alpha + lr_mean``."""
    d_high = np.asarray(d_high, dtype=np.float64)
    return np.sqrt(d_high.shape[0]) * (d_high @ np.asarray(alpha, dtype=np.float64)) + lr_mean


def reconstruct_patches(dictionary: CoupledDictionary, A, means) -> np.ndarray:
    """HR patch rows for code columns ``A`` and per-patch means."""
    return (dictionary.synthesis_matrix @ A).T + np.asarray(means)[:, None]


def assemble_x0(hr_patches, hr_grid: PatchGrid) -> np.ndarray:
    """Overlap-averaged HR estimate ``X0``."""
    return merge(hr_patches, hr_grid)


# --- global reconstruction ------------------------------------------------

def global_objective(X, x0, y, config: SrConfig) -> float:
    r = degrade(X, config.degradation, clamp=False) - y
    d = X - x0
    return float(np.sum(d * d) + config.lam * np.sum(r * r))


def global_reconstruct(x0, y, config: SrConfig = SrConfig()):
    """Minimise ``J`` by gradient descent from ``X0`` with step halving.

    Each step is ``X <- X - nu * [(X - X0) + lam * H^T S^T (S H X - Y)]``.
    A step that would raise ``J`` halves ``nu`` (up to 20 times). The loop
    ends after ``max_global_iters`` steps, when the relative decrease of
    ``J`` falls below ``global_tol`` or when no step decreases ``J``.

    Returns
    -------
    image : ndarray
        Final estimate clamped to [0, 1].
    info : dict
        ``iterations`` and ``objective_trace`` (``J`` at ``X0`` and after
        every accepted step).
    """
    x0 = as_image(x0)
    y = as_image(y)
    s = config.scale
    if x0.shape != (y.shape[0] * s, y.shape[1] * s):
        raise ValueError(f"X0 shape {x0.shape} is not {s} x LR shape {y.shape}")
    deg = config.degradation
    lam = config.lam
    X = x0.copy()
    r = degrade(X, deg, clamp=False) - y
    J = float(lam * np.sum(r * r))
    trace = [J]
    nu = config.nu
    iterations = 0
    for _ in range(config.max_global_iters):
        G = (X - x0) + lam * degrade_adjoint(r, X.shape, deg)
        if not np.any(G):
            break
        for _ in range(MAX_HALVINGS + 1):
            Xn = X - nu * G
            rn = degrade(Xn, deg, clamp=False) - y
            dn = Xn - x0
            Jn = float(np.sum(dn * dn) + lam * np.sum(rn * rn))
            if Jn <= J:
                break
            nu *= 0.5
        else:
            break
        decrease = (J - Jn) / J if J > 0 else 0.0
        X, r, J = Xn, rn, Jn
        trace.append(J)
        iterations += 1
        if decrease < config.global_tol:
            break
    return np.clip(X, 0.0, 1.0), {"iterations": iterations, "objective_trace": trace}


# --- full pipeline --------------------------------------------------------

def _check_geometry(dictionary: CoupledDictionary, config: SrConfig):
    problems = []
    if dictionary.scale != config.scale:
        problems.append(f"dictionary scale {dictionary.scale} != config scale {config.scale}")
    if dictionary.lr_patch_size != config.lr_patch_size:
        problems.append(
            f"dictionary LR patch size {dictionary.lr_patch_size} != config {config.lr_patch_size}"
        )
    if dictionary.hr_patch_size != dictionary.scale * dictionary.lr_patch_size:
        problems.append("dictionary HR patch size is not scale x LR patch size")
    if dictionary.d_low.shape[0] != dictionary.lr_patch_size ** 2:
        problems.append("d_low rows do not match the LR patch size")
    if dictionary.d_high.shape[0] != dictionary.hr_patch_size ** 2:
        problems.append("d_high rows do not match the HR patch size")
    if problems:
        raise ConfigurationError("; ".join(problems))


def super_resolve(y, dictionary: CoupledDictionary, config: SrConfig = SrConfig(),
                  threads: int = 1):
    """Upscale the LR image ``y`` by ``config.scale``.

    Returns the HR image and an :class:`SrReport` with per-stage wall
    times (``extract``, ``coding``, ``synthesis``, ``merge``, ``global``,
    ``total``).
    """
    _check_geometry(dictionary, config)
    y = as_image(y)
    h, w = y.shape
    p = config.lr_patch_size
    if min(h, w) < p:
        raise ConfigurationError(f"LR image {w}x{h} is smaller than the {p}x{p} patch")
    times = {}
    start = t = time.perf_counter()

    grid = plan_grid(w, h, p, config.overlap)
    centered, means = remove_mean(extract(y, grid))
    times["extract"] = time.perf_counter() - t

    t = time.perf_counter()
    A = code_patches(dictionary, centered, config, threads)
    times["coding"] = time.perf_counter() - t

    t = time.perf_counter()
    hr_patches = reconstruct_patches(dictionary, A, means)
    times["synthesis"] = time.perf_counter() - t

    t = time.perf_counter()
    x0 = assemble_x0(hr_patches, grid.scaled(config.scale))
    times["merge"] = time.perf_counter() - t

    t = time.perf_counter()
    X, info = global_reconstruct(x0, y, config)
    times["global"] = time.perf_counter() - t
    times["total"] = time.perf_counter() - start

    report = SrReport(
        patch_count=len(grid),
        mean_patch_sparsity=float(np.mean(l0_count(A))) if A.size else 0.0,
        global_iterations_used=info["iterations"],
        objective_trace=info["objective_trace"],
        wall_times=times,
    )
    return X, report
