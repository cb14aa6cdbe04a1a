"""Coupled low/high-resolution dictionaries: container, file format, training.

A coupled dictionary stores ``d_low`` (``m_l x n``) and ``d_high``
(``m_h x n``) whose stacked columns ``[d_low_j; d_high_j]`` have unit norm.
Training codes the stacked, block-scaled vectors
``z = [y / sqrt(m_l); x / sqrt(m_h)]`` with SL0 and updates the stacked
dictionary with MOD (the ridge-regularised least-squares fit to the codes),
so an LR patch and its HR partner share one coefficient vector by
construction.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateDataError, FormatError, InvariantViolation, SingularSystemError
from .imaging import DegradationConfig, center_crop_to_multiple, degrade
from .parallel import map_columns
from .patches import extract, plan_grid, remove_mean
from .sl0 import SUPPORT_THRESHOLD, FeasibleProjector, Sl0Config, l0_count, sl0_solve_batch

__all__ = [
    "CoupledDictionary",
    "TrainingConfig",
    "EpochStats",
    "Violation",
    "validate_dictionary",
    "save_dictionary",
    "load_dictionary",
    "harvest_pairs",
    "train_coupled",
    "stack_pairs",
]

MAGIC = b"SL0SRDIC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIII")
_CRC = struct.Struct("<I")
NORM_TOLERANCE = 1e-6
SPAN_RTOL = 1e-4


@dataclass(frozen=True)
class CoupledDictionary:
    """LR/HR atom pair sharing one coefficient space.

    Structural checks live in :func:`validate_dictionary` so that broken
    dictionaries can still be represented and reported on.
    """

    d_low: np.ndarray
    d_high: np.ndarray
    lr_patch_size: int = 5
    hr_patch_size: int = 10
    scale: int = 2

    def __post_init__(self):
        for name in ("d_low", "d_high"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def atom_count(self) -> int:
        return self.d_low.shape[1]

    @property
    def coding_matrix(self) -> np.ndarray:
        """``d_low`` with the training block factor undone (codes raw LR patches)."""
        return math.sqrt(self.d_low.shape[0]) * self.d_low

    @property
    def synthesis_matrix(self) -> np.ndarray:
        """``d_high`` with the training block factor undone (emits raw HR patches)."""
        return math.sqrt(self.d_high.shape[0]) * self.d_high


@dataclass(frozen=True)
class Violation:
    invariant: str
    index: Optional[int]
    detail: str

    def __str__(self):
        where = "" if self.index is None else f" [index {self.index}]"
        return f"{self.invariant}{where}: {self.detail}"


def validate_dictionary(d: CoupledDictionary) -> List[Violation]:
    """Every broken invariant of ``d``; empty when the dictionary is valid."""
    out = []
    m_l, n = d.d_low.shape
    m_h, n_h = d.d_high.shape
    if n != n_h:
        out.append(Violation("shape", None, f"d_low has {n} columns but d_high has {n_h}"))
    if n <= m_l:
        out.append(Violation("shape", None, f"atom count {n} must exceed LR dimension {m_l}"))
    if d.lr_patch_size ** 2 != m_l:
        out.append(Violation("lr_patch_size", None,
                             f"lr_patch_size {d.lr_patch_size} squared != d_low rows {m_l}"))
    if d.hr_patch_size ** 2 != m_h:
        out.append(Violation("hr_patch_size", None,
                             f"hr_patch_size {d.hr_patch_size} squared != d_high rows {m_h}"))
    if d.hr_patch_size != d.scale * d.lr_patch_size:
        out.append(Violation("scale", None,
                             f"hr_patch_size {d.hr_patch_size} != scale {d.scale} x lr_patch_size {d.lr_patch_size}"))
    if not (np.all(np.isfinite(d.d_low)) and np.all(np.isfinite(d.d_high))):
        out.append(Violation("finite", None, "dictionary contains non-finite entries"))
    if n == n_h:
        norms = np.sqrt(np.sum(d.d_low ** 2, axis=0) + np.sum(d.d_high ** 2, axis=0))
        for j in np.flatnonzero(norms == 0):
            out.append(Violation("zero_column", int(j), f"column {j} is entirely zero"))
        bad = np.flatnonzero((np.abs(norms - 1.0) > NORM_TOLERANCE) & (norms != 0))
        for j in bad:
            out.append(Violation("unit_norm", int(j),
                                 f"column {j} has stacked norm {norms[j]:.9g}, expected 1"))
    return out


# --- persistence --------------------------------------------------------

def save_dictionary(d: CoupledDictionary, path) -> None:
    """Write the binary ``SL0SRDIC`` v1 format with a trailing CRC32."""
    problems = validate_dictionary(d)
    if problems:
        raise InvariantViolation("; ".join(map(str, problems)))
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, d.scale, d.lr_patch_size,
                        d.hr_patch_size, d.atom_count)
    body += d.d_low.astype("<f8").tobytes(order="F")
    body += d.d_high.astype("<f8").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(body + _CRC.pack(zlib.crc32(body)))


def load_dictionary(path) -> CoupledDictionary:
    """Read and verify a dictionary written by :func:`save_dictionary`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"header: file is truncated ({len(data)} bytes)")
    magic, version, scale, lr, hr, atoms = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"version: unsupported format version {version}")
    if scale < 1 or lr < 1 or atoms < 1:
        raise FormatError(f"header: invalid fields scale={scale} lr_patch_size={lr} atom_count={atoms}")
    if hr != scale * lr:
        raise InvariantViolation(
            f"hr_patch_size: {hr} != scale {scale} x lr_patch_size {lr} "
            f"(m_h = {hr * hr}, expected {(scale * lr) ** 2})"
        )
    n_low, n_high = lr * lr * atoms, hr * hr * atoms
    expected = _HEADER.size + 8 * (n_low + n_high) + _CRC.size
    if len(data) < expected:
        raise FormatError(f"payload: file is truncated ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise FormatError(f"payload: {len(data) - expected} unexpected trailing bytes")
    (crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if crc != zlib.crc32(data[:expected - _CRC.size]):
        raise FormatError("crc32: checksum mismatch")
    off = _HEADER.size
    d_low = np.frombuffer(data, "<f8", n_low, off).reshape((lr * lr, atoms), order="F")
    d_high = np.frombuffer(data, "<f8", n_high, off + 8 * n_low).reshape((hr * hr, atoms), order="F")
    d = CoupledDictionary(d_low.astype(np.float64), d_high.astype(np.float64), lr, hr, scale)
    problems = validate_dictionary(d)
    if problems:
        raise InvariantViolation("; ".join(map(str, problems)))
    return d


# --- training -----------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    atom_count: int = 1024
    epochs: int = 20
    coding: Sl0Config = field(default_factory=Sl0Config)
    mod_ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.atom_count < 2:
            raise ValueError(f"atom_count must be >= 2, got {self.atom_count}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.mod_ridge < 0:
            raise ValueError(f"mod_ridge must be non-negative, got {self.mod_ridge}")


@dataclass
class EpochStats:
    epoch: int
    coding_error: float     # sum ||z - D a||^2 right after coding
    mod_error: float        # same sum after the MOD update
    rmse: float             # sqrt(mod_error / z.size)
    mean_sparsity: float
    dead_atoms: int


def harvest_pairs(
    images: Sequence[np.ndarray],
    degradation: DegradationConfig = DegradationConfig(),
    lr_patch_size: int = 5,
    stride: int = 1,
    min_std: float = 0.01,
    max_pairs: Optional[int] = None,
    seed: int = 0,
):
    """Cut corresponding LR/HR patch pairs from degraded training images.

    Each HR image is center-cropped to a multiple of the scale and degraded;
    the LR patch at anchor ``(r, c)`` pairs with the HR patch at
    ``(scale*r, scale*c)``. Both patches lose their own mean, pairs whose
    HR patch has standard deviation below ``min_std`` are dropped, and at
    most ``max_pairs`` are kept by seeded sampling.

    Returns
    -------
    lr, hr : ndarray
        Shapes ``(N, p^2)`` and ``(N, (scale*p)^2)``.
    """
    s = degradation.scale
    lr_all, hr_all = [], []
    for img in images:
        hr_img, _ = center_crop_to_multiple(np.asarray(img, dtype=np.float64), s)
        lr_img = degrade(hr_img, degradation)
        h, w = lr_img.shape
        if min(h, w) < lr_patch_size:
            continue
        grid = plan_grid(w, h, lr_patch_size, lr_patch_size - stride)
        lr_p, _ = remove_mean(extract(lr_img, grid))
        hr_p, _ = remove_mean(extract(hr_img, grid.scaled(s)))
        keep = hr_p.std(axis=1) >= min_std
        lr_all.append(lr_p[keep])
        hr_all.append(hr_p[keep])
    if not lr_all:
        raise DegenerateDataError("no training image is large enough to yield patches")
    lr = np.concatenate(lr_all)
    hr = np.concatenate(hr_all)
    if max_pairs is not None and len(lr) > max_pairs:
        idx = np.sort(np.random.default_rng(seed).choice(len(lr), max_pairs, replace=False))
        lr, hr = lr[idx], hr[idx]
    return lr, hr


def stack_pairs(lr, hr) -> np.ndarray:
    """Block-scaled stacked training matrix ``Z`` with one column per pair."""
    lr = np.asarray(lr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if lr.ndim != 2 or hr.ndim != 2 or len(lr) != len(hr):
        raise ValueError(f"expected paired 2-D arrays, got shapes {lr.shape} and {hr.shape}")
    return np.vstack([lr.T / math.sqrt(lr.shape[1]), hr.T / math.sqrt(hr.shape[1])])


def _mod_update(Z, A, ridge):
    G = A @ A.T
    G[np.diag_indices_from(G)] += ridge
    try:
        factor = scipy.linalg.cho_factor(G)
    except np.linalg.LinAlgError:
        return scipy.linalg.lstsq(G, A @ Z.T)[0].T
    return scipy.linalg.cho_solve(factor, A @ Z.T).T


def _span_basis(Z, rtol=SPAN_RTOL):
    """Orthonormal basis of the numerical column span of ``Z``, or None if full.

    Mean removal, and LR pixels whose blur footprint lies (almost) inside
    the HR patch, tie the stacked coordinates together; codes are
    constrained in the span the data actually occupies. Directions with
    singular value below ``rtol`` times the largest are dropped.
    """
    w, V = np.linalg.eigh(Z @ Z.T)
    keep = w > (rtol ** 2) * w[-1]
    if keep.all():
        return None
    return V[:, keep]


def _used_atoms(A):
    top = np.max(np.abs(A), axis=0, keepdims=True)
    return np.any((np.abs(A) > SUPPORT_THRESHOLD * top) & (top > 0), axis=1)


def train_coupled(
    lr,
    hr,
    config: TrainingConfig = TrainingConfig(),
    threads: int = 1,
    history: Optional[list] = None,
) -> CoupledDictionary:
    """Learn a coupled dictionary from paired mean-removed patch vectors.

    Parameters
    ----------
    lr, hr : array_like
        Paired patch vectors, shapes ``(N, m_l)`` and ``(N, m_h)`` with
        square patch sizes and ``sqrt(m_h) / sqrt(m_l)`` an integer scale.
    config : TrainingConfig
    threads : int
        Workers for the per-pair coding; the result does not depend on it.
    history : list, optional
        Receives one :class:`EpochStats` per epoch.
    """
    Z = stack_pairs(lr, hr)
    m_l = np.shape(lr)[1]
    m_h = np.shape(hr)[1]
    p_l, p_h = math.isqrt(m_l), math.isqrt(m_h)
    if p_l * p_l != m_l or p_h * p_h != m_h or p_h % p_l:
        raise ValueError(f"patch dimensions {m_l}/{m_h} are not square with an integer scale")
    n_atoms = config.atom_count
    n_pairs = Z.shape[1]
    if n_pairs < n_atoms:
        raise ValueError(f"need at least {n_atoms} training pairs, got {n_pairs}")

    norms = np.linalg.norm(Z, axis=0)
    nonzero = np.flatnonzero(norms > 0)
    _, first = np.unique(Z[:, nonzero].T, axis=0, return_index=True)
    distinct = np.sort(nonzero[first])
    if distinct.size < n_atoms:
        raise DegenerateDataError(
            f"only {distinct.size} distinct non-flat training vectors for {n_atoms} atoms"
        )
    basis = _span_basis(Z)
    span_dim = Z.shape[0] if basis is None else basis.shape[1]
    if n_atoms < span_dim:
        raise ValueError(
            f"atom_count {n_atoms} is below the {span_dim}-dimensional span of the training data"
        )

    rng = np.random.default_rng(config.seed)
    init = np.sort(rng.choice(distinct, n_atoms, replace=False))
    D = Z[:, init] / norms[init]

    for epoch in range(1, config.epochs + 1):
        try:
            projector = FeasibleProjector(D, basis=basis)
        except SingularSystemError as exc:
            raise DegenerateDataError(f"epoch {epoch}: stacked dictionary lost full row rank") from exc
        A = map_columns(lambda block: sl0_solve_batch(projector, block, config.coding), Z, threads)
        coding_error = float(np.sum((Z - D @ A) ** 2))

        D = _mod_update(Z, A, config.mod_ridge)
        R = Z - D @ A
        mod_error = float(np.sum(R * R))

        col_norms = np.linalg.norm(D, axis=0)
        dead = np.flatnonzero(~_used_atoms(A) | (col_norms <= 1e-12 * max(col_norms.max(), 1e-300)))
        live = np.setdiff1d(np.arange(n_atoms), dead)
        D[:, live] /= col_norms[live]
        if dead.size:
            worst = np.argsort(-np.sum(R * R, axis=0), kind="stable")
            worst = worst[norms[worst] > 0][:dead.size]
            D[:, dead[:worst.size]] = Z[:, worst] / norms[worst]

        if history is not None:
            history.append(EpochStats(
                epoch=epoch,
                coding_error=coding_error,
                mod_error=mod_error,
                rmse=math.sqrt(mod_error / Z.size),
                mean_sparsity=float(np.mean(l0_count(A))),
                dead_atoms=int(dead.size),
            ))

    return CoupledDictionary(D[:m_l].copy(), D[m_l:].copy(), p_l, p_h, p_h // p_l)

