"""
Loss module for the eigenstate learnability lab.
This module implements the physics-informed Rayleigh objective on projected
basis operators, its analytic gradient in the latent couplings, and the
evaluation metrics: parameter MSE and relative spectral error.

Projections G_l = Psi^T B_l Psi are computed once per sample, so every loss
evaluation costs O(Theta M^2) instead of a dense rebuild of H(theta).
"""

from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from protocols import StateBlock
from spin_chain import DecoderBasis


@dataclass
class ProjectedBasis:
    """
    Decoder operators projected onto the input eigenstates.

    Arrays may carry leading batch axes: g (..., Theta, M, M),
    g_const (..., M, M), energies (..., M).
    """
    g: np.ndarray
    g_const: np.ndarray
    energies: np.ndarray

    @property
    def M(self) -> int:
        return self.energies.shape[-1]


@dataclass(frozen=True)
class LossConfig:
    """Weights of the Rayleigh objective."""
    gamma: float = 0.1
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.gamma < 0 or self.epsilon < 0:
            raise ValueError(f"gamma and epsilon must be non-negative, got {self.gamma}, {self.epsilon}")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "LossConfig":
        return cls(gamma=float(config["loss"]["gamma"]), epsilon=float(config["loss"]["epsilon"]))


def project_basis(block: StateBlock, basis: DecoderBasis) -> ProjectedBasis:
    """
    Project the decoder operators onto a state block.

    Args:
        block: Selected eigenstates (double precision)
        basis: Decoder operators from basis_operators

    Returns:
        ProjectedBasis: G_l = Psi^T B_l Psi, G_const = Psi^T H_const Psi
    """
    psi = np.asarray(block.psi, dtype=np.float64)
    if psi.shape[0] != basis.constant.shape[0]:
        raise ValueError(f"Block has D={psi.shape[0]} rows, basis has D={basis.constant.shape[0]}")
    g_const = psi.T @ basis.constant @ psi
    if basis.operators:
        g = np.stack([psi.T @ op @ psi for op in basis.operators])
    else:
        g = np.zeros((0, psi.shape[1], psi.shape[1]))
    # symmetrize away roundoff
    g_const = 0.5 * (g_const + g_const.T)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    return ProjectedBasis(g=g, g_const=g_const, energies=block.energies.astype(np.float64))


def residual_matrix(pb: ProjectedBasis, theta_tilde: np.ndarray) -> np.ndarray:
    """
    Residual Hamiltonian Psi^T H(theta_tilde) Psi.

    Args:
        pb: Projected basis (optionally batched)
        theta_tilde: Latent vector(s), shape (..., Theta)

    Returns:
        np.ndarray: (..., M, M) residual matrix
    """
    theta = np.asarray(theta_tilde, dtype=np.float64)
    if theta.shape[-1] != pb.g.shape[-3]:
        raise ValueError(f"Expected {pb.g.shape[-3]} latent values, got {theta.shape[-1]}")
    return pb.g_const + np.einsum("...l,...lij->...ij", theta, pb.g)


def normalization(energies: np.ndarray, epsilon: float) -> np.ndarray:
    """N = sum_i E_i^2 / M + epsilon."""
    N = np.asarray(np.mean(np.asarray(energies, dtype=np.float64) ** 2, axis=-1) + epsilon)
    if np.any(N == 0.0):
        raise ValueError("Rayleigh normalization vanishes: all target energies are zero and epsilon is 0")
    return N


def rayleigh_loss(pb: ProjectedBasis, theta_tilde: np.ndarray, cfg: LossConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rayleigh loss and its gradient in theta_tilde.

    value = sum_{i!=j} R_ij^2 / (N M (M-1)) + gamma sum_i (R_ii - E_i)^2 / (N M)
    with R = residual_matrix(pb, theta_tilde); the off-diagonal term is 0
    for M = 1.

    Args:
        pb: Projected basis (optionally batched)
        theta_tilde: Latent vector(s), shape (..., Theta)
        cfg: Loss weights

    Returns:
        Tuple[np.ndarray, np.ndarray]: Loss value(s) of shape (...) and
        gradient(s) of shape (..., Theta)
    """
    M = pb.M
    if M < 1:
        raise ValueError("Rayleigh loss needs at least one state")
    N = normalization(pb.energies, cfg.epsilon)
    R = residual_matrix(pb, theta_tilde)

    diag = np.diagonal(R, axis1=-2, axis2=-1)
    mismatch = diag - pb.energies
    off = R - diag[..., :, None] * np.eye(M)

    if M > 1:
        off_weight = 1.0 / (N * M * (M - 1))
        off_value = off_weight * np.sum(off ** 2, axis=(-2, -1))
        off_grad = 2.0 * off_weight[..., None] * np.einsum("...ij,...lij->...l", off, pb.g)
    else:
        off_value = np.zeros_like(N)
        off_grad = 0.0

    diag_weight = cfg.gamma / (N * M)
    diag_value = diag_weight * np.sum(mismatch ** 2, axis=-1)
    g_diag = np.diagonal(pb.g, axis1=-2, axis2=-1)
    diag_grad = 2.0 * diag_weight[..., None] * np.einsum("...i,...li->...l", mismatch, g_diag)

    return off_value + diag_value, off_grad + diag_grad


def theta_loss(theta_tilde: np.ndarray, theta_true: np.ndarray) -> np.ndarray:
    """
    Mean squared error over the free latent components.

    Args:
        theta_tilde: Inferred latent vector(s), shape (..., Theta)
        theta_true: Reference latent vector(s), same shape

    Returns:
        np.ndarray: MSE per vector
    """
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    theta_true = np.asarray(theta_true, dtype=np.float64)
    if theta_tilde.shape != theta_true.shape:
        raise ValueError(f"Latent shapes differ: {theta_tilde.shape} vs {theta_true.shape}")
    return np.mean((theta_tilde - theta_true) ** 2, axis=-1)


def theta_loss_grad(theta_tilde: np.ndarray, theta_true: np.ndarray) -> np.ndarray:
    """Gradient of theta_loss in theta_tilde (supervised training)."""
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    return 2.0 * (theta_tilde - np.asarray(theta_true, dtype=np.float64)) / theta_tilde.shape[-1]


def spectral_error(E: np.ndarray, E_tilde: np.ndarray) -> float:
    """
    Mean absolute eigenvalue error relative to the true bandwidth.

    Args:
        E: True ascending spectrum
        E_tilde: Reconstructed ascending spectrum

    Returns:
        float: (1/D) sum_i |E_i - E~_i| / (E_max - E_0)
    """
    E = np.asarray(E, dtype=np.float64)
    E_tilde = np.asarray(E_tilde, dtype=np.float64)
    if E.shape != E_tilde.shape:
        raise ValueError(f"Spectra differ in length: {E.shape} vs {E_tilde.shape}")
    width = E[-1] - E[0]
    if width <= 0.0:
        raise ValueError("Degenerate spectrum: E_max equals E_0")
    return float(np.mean(np.abs(E - E_tilde)) / width)
