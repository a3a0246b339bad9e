"""
Spectral protocol module for the eigenstate learnability lab.
This module selects which eigenstates feed the encoder: the lowest M states,
M states around the mean energy, or a single state anywhere in the spectrum.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
from loguru import logger

from eigensolver import Spectrum


PROTOCOL_KINDS = ("low", "mid", "single")


@dataclass(frozen=True)
class SpectralProtocol:
    """
    Selection rule for the encoder input.

    ``M`` applies to the low and mid kinds; ``m_index`` (1-based) to single.
    """
    kind: str
    M: int = 1
    m_index: int = 1

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"Unknown protocol {self.kind!r}; expected one of {PROTOCOL_KINDS}")
        if self.kind == "single":
            object.__setattr__(self, "M", 1)
            if self.m_index < 1:
                raise ValueError(f"Single-state index must be >= 1, got {self.m_index}")
        elif self.M < 1:
            raise ValueError(f"Number of states must be >= 1, got M={self.M}")

    @property
    def width(self) -> int:
        """Number of selected states."""
        return 1 if self.kind == "single" else self.M

    @property
    def tag(self) -> str:
        if self.kind == "single":
            return f"single:{self.m_index}"
        return f"{self.kind}:{self.M}"

    @classmethod
    def from_tag(cls, tag: str) -> "SpectralProtocol":
        kind, value = tag.split(":")
        if kind == "single":
            return cls(kind=kind, m_index=int(value))
        return cls(kind=kind, M=int(value))

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "SpectralProtocol":
        protocol_config = config["protocol"]
        return cls(
            kind=protocol_config["kind"],
            M=int(protocol_config["M"]),
            m_index=int(protocol_config["m_index"]),
        )

    def validate(self, D: int):
        if self.kind == "single" and self.m_index > D:
            raise ValueError(f"Single-state index {self.m_index} exceeds D={D}")
        if self.kind != "single" and self.M > D:
            raise ValueError(f"Window of M={self.M} states cannot fit in D={D}")


@dataclass
class StateBlock:
    """
    Selected eigenstates of one realization.

    ``theta_true`` is kept for evaluation only and never enters the
    Rayleigh training path.
    """
    psi: np.ndarray
    energies: np.ndarray
    indices: np.ndarray
    theta_true: np.ndarray

    @property
    def M(self) -> int:
        return self.psi.shape[1]


def select_indices(protocol: SpectralProtocol, spec: Spectrum, m_av: int) -> List[int]:
    """
    Spectral indices selected by a protocol.

    Mid windows start at m_av - floor(M/2) and hold exactly M states (the top
    index of the even-M bracket is dropped); windows touching a spectrum edge
    are shifted inward.

    Args:
        protocol: Selection rule
        spec: Spectrum being sampled
        m_av: 1-based index of the state closest to the mean energy

    Returns:
        List[int]: Ascending 1-based indices
    """
    D = spec.dim
    protocol.validate(D)
    if protocol.kind == "low":
        return list(range(1, protocol.M + 1))
    if protocol.kind == "single":
        return [protocol.m_index]

    M = protocol.M
    start = m_av - M // 2
    clamped = min(max(start, 1), D - M + 1)
    if clamped != start:
        logger.warning(f"Mid window for m_av={m_av}, M={M} shifted from {start} to {clamped}")
    return list(range(clamped, clamped + M))


def build_state_block(spec: Spectrum, indices: Sequence[int], theta: Sequence[float]) -> StateBlock:
    """
    Gather the selected eigenvectors and energies.

    Args:
        spec: Spectrum
        indices: Ascending 1-based spectral indices
        theta: Generating latent vector

    Returns:
        StateBlock: The encoder input block
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("At least one index is required")
    if indices.min() < 1 or indices.max() > spec.dim:
        raise ValueError(f"Indices must lie in 1..{spec.dim}, got {indices.tolist()}")
    if np.any(np.diff(indices) <= 0):
        raise ValueError(f"Indices must be strictly increasing, got {indices.tolist()}")
    columns = indices - 1
    return StateBlock(
        psi=spec.vectors[:, columns].copy(),
        energies=spec.energies[columns].copy(),
        indices=indices,
        theta_true=np.asarray(theta, dtype=np.float64).copy(),
    )
