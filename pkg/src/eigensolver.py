"""
Eigensolver module for the eigenstate learnability lab.
This module diagonalizes dense real-symmetric Hamiltonians with deterministic
ordering and a fixed eigenvector sign gauge.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from loguru import logger


class EigensolverError(RuntimeError):
    """Raised when a Hamiltonian cannot be diagonalized."""

    def __init__(self, message: str, index: int = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Spectrum:
    """
    Full spectrum of one Hamiltonian realization.

    ``energies`` are ascending; column m of ``vectors`` is the gauge-fixed
    eigenvector of ``energies[m]``. Spectral indices are 1-based elsewhere
    in the lab, so state m lives in column m - 1.
    """
    energies: np.ndarray
    vectors: np.ndarray
    L: int

    @property
    def dim(self) -> int:
        return self.energies.shape[0]


def fix_gauge(vectors: np.ndarray) -> np.ndarray:
    """
    Fix the sign of every column so its largest-magnitude entry is positive.

    Ties are broken by the lowest row index. Idempotent.

    Args:
        vectors: D x K array of normalized columns

    Returns:
        np.ndarray: Sign-fixed copy
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        return fix_gauge(vectors[:, None])[:, 0]
    if np.any(np.all(vectors == 0.0, axis=0)):
        raise ValueError("Cannot fix the gauge of a zero column")
    # entries within roundoff of the column maximum count as ties
    magnitudes = np.abs(vectors)
    ties = magnitudes >= magnitudes.max(axis=0, keepdims=True) * (1.0 - 1e-12)
    pivots = np.argmax(ties, axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    return vectors * signs[None, :]


def diagonalize(H: np.ndarray, L: int = None) -> Spectrum:
    """
    Compute the full, sorted, gauge-fixed spectrum of a real-symmetric matrix.

    Args:
        H: Dense D x D Hamiltonian
        L: Number of sites (inferred from D when omitted)

    Returns:
        Spectrum: Ascending energies and orthonormal eigenvectors
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"Hamiltonian must be square, got shape {H.shape}")
    finite = np.isfinite(H)
    if not np.all(finite):
        row = int(np.argwhere(~finite)[0][0])
        raise EigensolverError(f"Hamiltonian has non-finite entries (first at row {row})", index=row)
    if not np.array_equal(H, H.T):
        asym = float(np.max(np.abs(H - H.T)))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(H)))):
            raise ValueError(f"Hamiltonian is not symmetric (max asymmetry {asym:.3e})")
        H = 0.5 * (H + H.T)

    try:
        energies, vectors = np.linalg.eigh(H)
    except np.linalg.LinAlgError as e:
        # LAPACK reports the index of the eigenvalue that failed to converge
        message = str(e)
        digits = [int(tok) for tok in message.replace(",", " ").split() if tok.isdigit()]
        index = digits[0] if digits else None
        logger.error(f"Eigensolver failed to converge: {message}")
        raise EigensolverError(f"Eigensolver failed to converge: {message}", index=index) from e

    order = np.argsort(energies, kind="stable")
    energies = energies[order]
    vectors = fix_gauge(vectors[:, order])
    if L is None:
        L = int(round(np.log2(H.shape[0]))) if H.shape[0] > 0 else 0
    return Spectrum(energies=energies, vectors=vectors, L=L)


def mean_energy_index(spec: Spectrum, H: np.ndarray) -> int:
    """
    Index of the eigenstate whose energy is closest to Tr(H)/D.

    Args:
        spec: Spectrum of H
        H: The Hamiltonian matrix

    Returns:
        int: 1-based spectral index m_av (ties toward the smaller index)
    """
    mean_energy = float(np.trace(H)) / spec.dim
    return int(np.argmin(np.abs(spec.energies - mean_energy))) + 1


def near_degenerate_pairs(spec: Spectrum, tolerance: float = 1e-10) -> List[Tuple[int, int]]:
    """
    Adjacent eigenpairs whose gap is below tolerance.

    Args:
        spec: Spectrum to inspect
        tolerance: Gap threshold

    Returns:
        List[Tuple[int, int]]: 1-based index pairs (m, m + 1)
    """
    gaps = np.diff(spec.energies)
    pairs = [(int(m) + 1, int(m) + 2) for m in np.flatnonzero(gaps < tolerance)]
    if pairs:
        logger.warning(f"{len(pairs)} near-degenerate eigenpairs (gap < {tolerance:g}) at L={spec.L}")
    return pairs
