"""
Spin-chain module for the eigenstate learnability lab.
This module builds the real-symmetric Hamiltonian of the J1-J2 spin-1/2 chain
with periodic boundary conditions, applies the symmetry-breaking on-site
perturbations, and exposes the fixed operator basis used by the decoder.

Basis ordering: computational states |s_1 ... s_L> with s=0 (spin up) first
and site 1 as the most significant bit of the row index.
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger


LATENT_NAMES = ("J1", "J2")
AXES = ("x", "y", "z")


@dataclass(frozen=True)
class SpinChainParams:
    """
    Full coupling vector of one chain realization.

    Sites are 1-based in the physics but ``hz`` and ``gx`` are stored as
    0-based arrays of length L.
    """
    L: int
    J1: float
    J2: float
    Delta: float
    hz: Tuple[float, ...]
    gx: Tuple[float, ...]

    def __post_init__(self):
        if self.L < 3:
            raise ValueError(f"Chain length must be at least 3, got L={self.L}")
        object.__setattr__(self, "hz", tuple(float(v) for v in self.hz))
        object.__setattr__(self, "gx", tuple(float(v) for v in self.gx))
        if len(self.hz) != self.L or len(self.gx) != self.L:
            raise ValueError(f"Field vectors must have length L={self.L}, got {len(self.hz)} and {len(self.gx)}")
        values = (self.J1, self.J2, self.Delta) + self.hz + self.gx
        if not np.all(np.isfinite(values)):
            raise ValueError("All couplings must be finite")

    @classmethod
    def uniform(cls, L: int, J1: float = 0.0, J2: float = 0.5, Delta: float = 1.0,
                hz: float = 0.5, gx: float = -0.2) -> "SpinChainParams":
        """Chain with uniform on-site fields (defaults are the reference couplings)."""
        return cls(L=L, J1=J1, J2=J2, Delta=Delta, hz=(hz,) * L, gx=(gx,) * L)

    @property
    def dim(self) -> int:
        return 2 ** self.L

    def with_latent(self, names: Sequence[str], values: Sequence[float]) -> "SpinChainParams":
        """Copy with the named latent couplings replaced."""
        return replace(self, **{name: float(value) for name, value in zip(names, values)})


@dataclass(frozen=True)
class LatentSpec:
    """Which couplings are latent (free) and the base realization supplying the rest."""
    free: Tuple[str, ...]
    fixed_base: SpinChainParams

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        if len(set(self.free)) != len(self.free):
            raise ValueError(f"Latent identifiers must be unique: {self.free}")
        unknown = [name for name in self.free if name not in LATENT_NAMES]
        if unknown:
            raise ValueError(f"Unknown latent parameters {unknown}; allowed {LATENT_NAMES}")

    @property
    def Theta(self) -> int:
        return len(self.free)

    def params_for(self, theta: Sequence[float]) -> SpinChainParams:
        if len(theta) != self.Theta:
            raise ValueError(f"Expected {self.Theta} latent values, got {len(theta)}")
        return self.fixed_base.with_latent(self.free, theta)


@dataclass(frozen=True)
class PauliEmbedding:
    """
    Real factor of a single-site Pauli embedding.

    The operator equals ``1j * matrix`` when ``imaginary`` is set (axis y)
    and ``matrix`` otherwise.
    """
    matrix: np.ndarray
    imaginary: bool = False


@dataclass
class DecoderBasis:
    """H(theta) = constant + sum_l theta_l * operators[l]."""
    free: Tuple[str, ...]
    operators: List[np.ndarray]
    constant: np.ndarray

    def hamiltonian(self, theta: Sequence[float]) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != len(self.operators):
            raise ValueError(f"Expected {len(self.operators)} latent values, got {theta.size}")
        H = self.constant.copy()
        for value, op in zip(theta, self.operators):
            H += value * op
        return H


def _site_bits(L: int, site: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """Basis indices, occupation bit of `site` (1-based) per index, and its mask."""
    shift = L - site
    index = np.arange(2 ** L)
    return index, (index >> shift) & 1, 1 << shift


def _check_site(site: int, L: int):
    if L < 1:
        raise ValueError(f"Chain length must be positive, got L={L}")
    if not 1 <= site <= L:
        raise ValueError(f"Site {site} out of range 1..{L}")


def embed_pauli(site: int, axis: str, L: int) -> PauliEmbedding:
    """
    Embed a single-site Pauli operator into the 2^L dimensional space.

    Args:
        site: Site index (1-based)
        axis: One of x, y, z
        L: Number of sites

    Returns:
        PauliEmbedding: Real matrix plus a flag marking the factor i for axis y
    """
    _check_site(site, L)
    if axis not in AXES:
        raise ValueError(f"Unknown Pauli axis: {axis}")
    index, bits, mask = _site_bits(L, site)
    D = 2 ** L
    matrix = np.zeros((D, D), dtype=np.float64)
    if axis == "z":
        matrix[index, index] = 1.0 - 2.0 * bits
        return PauliEmbedding(matrix)
    if axis == "x":
        matrix[index, index ^ mask] = 1.0
        return PauliEmbedding(matrix)
    # sigma^y = i * [[0, -1], [1, 0]]
    matrix[index, index ^ mask] = 2.0 * bits - 1.0
    return PauliEmbedding(matrix, imaginary=True)


def _add_coupling(H: np.ndarray, L: int, i: int, j: int, scale: float, Delta: float):
    """Add scale * (xx + yy + Delta zz) on sites i, j into H in place."""
    index, bi, mask_i = _site_bits(L, i)
    _, bj, mask_j = _site_bits(L, j)
    if Delta != 0.0:
        H[index, index] += scale * Delta * (1.0 - 2.0 * bi) * (1.0 - 2.0 * bj)
    # xx + yy = 1 - (-1)^(s_i + s_j): a factor 2 on anti-aligned pairs only
    anti = bi != bj
    rows = index[anti]
    H[rows, rows ^ (mask_i | mask_j)] += 2.0 * scale


def _add_fields(H: np.ndarray, L: int, hz: Sequence[float], gx: Sequence[float]):
    for site in range(1, L + 1):
        index, bits, mask = _site_bits(L, site)
        if hz[site - 1] != 0.0:
            H[index, index] += hz[site - 1] * (1.0 - 2.0 * bits)
        if gx[site - 1] != 0.0:
            H[index, index ^ mask] += gx[site - 1]


def _wrap(site: int, L: int) -> int:
    return (site - 1) % L + 1


def coupling_term(i: int, j: int, Delta: float, L: int) -> np.ndarray:
    """
    Two-site exchange term sx_i sx_j + sy_i sy_j + Delta sz_i sz_j.

    Args:
        i: First site (1-based, wraps modulo L)
        j: Second site (1-based, wraps modulo L)
        Delta: Anisotropy
        L: Number of sites

    Returns:
        np.ndarray: Real symmetric D x D matrix
    """
    if L < 2:
        raise ValueError(f"A coupling needs at least two sites, got L={L}")
    i, j = _wrap(i, L), _wrap(j, L)
    if i == j:
        raise ValueError(f"Self-coupling: sites {i} and {j} coincide modulo L={L}")
    H = np.zeros((2 ** L, 2 ** L), dtype=np.float64)
    _add_coupling(H, L, i, j, 1.0, Delta)
    return H


def _bond_sum(L: int, distance: int, Delta: float) -> np.ndarray:
    H = np.zeros((2 ** L, 2 ** L), dtype=np.float64)
    for i in range(1, L + 1):
        _add_coupling(H, L, i, _wrap(i + distance, L), 1.0, Delta)
    return H


def build_hamiltonian(p: SpinChainParams) -> np.ndarray:
    """
    Build the dense Hamiltonian of one chain realization.

    H = sum_i J1 h_{i,i+1} + sum_i J2 h_{i,i+2} + sum_i [hz_i sz_i + gx_i sx_i]
    with indices taken modulo L.

    Args:
        p: Chain parameters

    Returns:
        np.ndarray: Real symmetric D x D matrix
    """
    L = p.L
    H = np.zeros((p.dim, p.dim), dtype=np.float64)
    for i in range(1, L + 1):
        if p.J1 != 0.0:
            _add_coupling(H, L, i, _wrap(i + 1, L), p.J1, p.Delta)
        if p.J2 != 0.0:
            _add_coupling(H, L, i, _wrap(i + 2, L), p.J2, p.Delta)
    _add_fields(H, L, p.hz, p.gx)
    return H


def apply_symmetry_breaking(p: SpinChainParams) -> SpinChainParams:
    """
    Apply the on-site perturbations that lift spatial and parity symmetries.

    Flips the sign of hz and gx on site 1, lowers hz by 0.1 and raises gx by
    0.1 on site floor(L/2). Not idempotent.

    Args:
        p: Chain parameters

    Returns:
        SpinChainParams: Perturbed copy
    """
    if p.L < 4:
        raise ValueError(f"Symmetry breaking needs L >= 4 (site 1 and site L//2 coincide), got L={p.L}")
    hz, gx = list(p.hz), list(p.gx)
    mid = p.L // 2 - 1
    hz[0], gx[0] = -hz[0], -gx[0]
    hz[mid] -= 0.1
    gx[mid] += 0.1
    return replace(p, hz=tuple(hz), gx=tuple(gx))


def basis_operators(spec: LatentSpec) -> DecoderBasis:
    """
    Decompose the Hamiltonian into the derivative operators of the free couplings.

    Args:
        spec: Latent specification

    Returns:
        DecoderBasis: One operator dH/dtheta_l per free coupling and the
        constant part with free couplings set to zero
    """
    base = spec.fixed_base
    distances = {"J1": 1, "J2": 2}
    operators = [_bond_sum(base.L, distances[name], base.Delta) for name in spec.free]
    constant = build_hamiltonian(base.with_latent(spec.free, [0.0] * spec.Theta))
    logger.debug(f"Built decoder basis for free={spec.free} at L={base.L}")
    return DecoderBasis(free=spec.free, operators=operators, constant=constant)


def base_params_from_config(config: Dict[str, Any], L: int = None) -> SpinChainParams:
    """
    Reference chain from the ``spin_chain`` config section.

    Args:
        config: Resolved configuration
        L: Optional chain length overriding the config

    Returns:
        SpinChainParams: Chain with uniform fields, before symmetry breaking
    """
    chain_config = config["spin_chain"]
    return SpinChainParams.uniform(
        L=int(L if L is not None else chain_config["L"]),
        J1=chain_config["J1"],
        J2=chain_config["J2"],
        Delta=chain_config["delta"],
        hz=chain_config["hz"],
        gx=chain_config["gx"],
    )


def latent_spec_from_config(config: Dict[str, Any], free: Sequence[str] = None,
                            L: int = None) -> LatentSpec:
    """LatentSpec over the configured (unperturbed) base chain."""
    base = base_params_from_config(config, L)
    free = tuple(free if free is not None else config["training"]["free"])
    return LatentSpec(free=free, fixed_base=base)
