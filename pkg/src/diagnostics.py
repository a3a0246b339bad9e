"""
Diagnostics module for the eigenstate learnability lab.
This module measures eigenstate structure across the spectrum: density of
states, half-chain von Neumann entanglement entropy, participation entropy,
and the fidelity between states.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from eigensolver import Spectrum


NORM_TOLERANCE = 1e-9
EIGENVALUE_CLIP = 1e-14


@dataclass
class DiagnosticsRecord:
    """Per-state structure measures, all arrays of length D."""
    index_norm: np.ndarray
    energy_rescaled: np.ndarray
    svn_norm: np.ndarray
    spart_norm: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "m_index": np.arange(1, self.index_norm.size + 1),
            "index_norm": self.index_norm,
            "energy_rescaled": self.energy_rescaled,
            "svn_norm": self.svn_norm,
            "spart_norm": self.spart_norm,
        })


def _check_normalized(state: np.ndarray):
    norm = np.linalg.norm(state, axis=0)
    if np.any(np.abs(norm - 1.0) > NORM_TOLERANCE):
        raise ValueError(f"State is not normalized (norm {np.atleast_1d(norm)[0]:.12f})")


def _shannon(probabilities: np.ndarray, axis: int = -1) -> np.ndarray:
    p = np.where(probabilities > EIGENVALUE_CLIP, probabilities, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, -p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return terms.sum(axis=axis)


def entanglement_entropy(state: np.ndarray, L: int, cut: int) -> float:
    """
    Von Neumann entropy of the first `cut` sites.

    Args:
        state: Normalized real vector of length 2^L
        L: Number of sites
        cut: Subsystem size, 1 <= cut < L

    Returns:
        float: -sum_k lambda_k ln lambda_k (natural log)
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (2 ** L,):
        raise ValueError(f"State must have length 2^L = {2 ** L}, got {state.shape}")
    return float(entanglement_entropies(state[:, None], L, cut)[0])


def entanglement_entropies(states: np.ndarray, L: int, cut: int) -> np.ndarray:
    """Vectorized entanglement_entropy over the columns of a D x K array."""
    if not 1 <= cut < L:
        raise ValueError(f"Cut must satisfy 1 <= cut < L={L}, got {cut}")
    states = np.asarray(states, dtype=np.float64)
    _check_normalized(states)
    # site 1 is the most significant bit, so a row-major reshape splits A|B
    blocks = states.T.reshape(states.shape[1], 2 ** cut, 2 ** (L - cut))
    singular = np.linalg.svd(blocks, compute_uv=False)
    return _shannon(singular ** 2)


def participation_entropy(state: np.ndarray) -> float:
    """
    Shannon entropy of the computational-basis probabilities |c_k|^2.

    Args:
        state: Normalized real vector

    Returns:
        float: Participation entropy (natural log)
    """
    state = np.asarray(state, dtype=np.float64)
    _check_normalized(state)
    return float(_shannon(state ** 2))


def density_of_states(energies: np.ndarray, bins: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Histogram of the rescaled energies (E - E_0) / (E_max - E_0).

    Args:
        energies: Ascending energies
        bins: Number of equal-width bins over [0, 1]

    Returns:
        Tuple[np.ndarray, np.ndarray]: Bin centers and counts
    """
    if bins < 1:
        raise ValueError(f"Need at least one bin, got {bins}")
    energies = np.asarray(energies, dtype=np.float64)
    width = energies[-1] - energies[0]
    if width <= 0.0:
        raise ValueError("Degenerate spectrum: E_max equals E_0")
    rescaled = (energies - energies[0]) / width
    # numpy includes the right edge in the last bin
    counts, edges = np.histogram(rescaled, bins=bins, range=(0.0, 1.0))
    return 0.5 * (edges[:-1] + edges[1:]), counts


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """
    Squared overlap |<a|b>|^2; insensitive to the sign gauge.

    Args:
        a: Normalized vector
        b: Normalized vector

    Returns:
        float: Fidelity in [0, 1]
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_normalized(a)
    _check_normalized(b)
    return float(min(1.0, abs(np.dot(a, b)) ** 2))


def diagnose_spectrum(spec: Spectrum, cut: int = None) -> DiagnosticsRecord:
    """
    Structure measures for every eigenstate of a spectrum.

    Normalizations map the theoretical maxima to 1: S_vN / (floor(L/2) ln 2)
    and S_part / ln D.

    Args:
        spec: Spectrum to analyze
        cut: Bipartition size (half chain by default)

    Returns:
        DiagnosticsRecord: Per-state measures
    """
    L, D = spec.L, spec.dim
    cut = L // 2 if cut is None else cut
    index_norm = np.arange(1, D + 1) / D
    width = spec.energies[-1] - spec.energies[0]
    if width <= 0.0:
        raise ValueError("Degenerate spectrum: E_max equals E_0")
    energy_rescaled = (spec.energies - spec.energies[0]) / width
    svn = entanglement_entropies(spec.vectors, L, cut)
    spart = _shannon(spec.vectors.T ** 2)
    return DiagnosticsRecord(
        index_norm=index_norm,
        energy_rescaled=energy_rescaled,
        svn_norm=svn / (cut * np.log(2.0)),
        spart_norm=spart / np.log(D),
    )


def sector_mean(record: DiagnosticsRecord, column: str, lo: float, hi: float) -> float:
    """Mean of a record column over states with lo < index_norm <= hi."""
    values = getattr(record, column)
    mask = (record.index_norm > lo) & (record.index_norm <= hi)
    return float(values[mask].mean())


class SpectrumDiagnostics:
    """
    Runs the structure diagnostics for configured chains and writes CSV files.
    """

    def __init__(self, config: Dict[str, Any]):
        """
        Initialize the diagnostics with configuration.

        Args:
            config: Resolved configuration
        """
        self.config = config

        # Extract diagnostics parameters from config
        self.diag_config = self.config["diagnostics"]
        self.bins = self.diag_config["bins"]
        self.cut = self.diag_config.get("cut")

    def analyze(self, spec: Spectrum) -> Dict[str, Any]:
        """
        Analyze one spectrum.

        Args:
            spec: Spectrum to analyze

        Returns:
            Dict: Per-state record and density of states
        """
        record = diagnose_spectrum(spec, self.cut)
        centers, counts = density_of_states(spec.energies, self.bins)
        logger.info(
            f"Diagnostics at L={spec.L}: mean svn_norm low 5% "
            f"{sector_mean(record, 'svn_norm', 0.0, 0.05):.3f}, "
            f"middle 10% {sector_mean(record, 'svn_norm', 0.45, 0.55):.3f}"
        )
        return {
            "record": record,
            "dos": pd.DataFrame({"energy_rescaled": centers, "count": counts}),
        }

    def write(self, analysis: Dict[str, Any], directory: Path, tag: str) -> Dict[str, str]:
        """
        Write the per-state CSV and the density-of-states CSV.

        Args:
            analysis: Output of analyze
            directory: Output directory
            tag: File name tag

        Returns:
            Dict: Paths of the written files
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        states_path = directory / f"diagnostics_{tag}.csv"
        dos_path = directory / f"dos_{tag}.csv"
        analysis["record"].to_frame().to_csv(states_path, index=False, lineterminator="\n")
        analysis["dos"].to_csv(dos_path, index=False, lineterminator="\n")
        logger.info(f"Wrote {states_path} and {dos_path}")
        return {"states": str(states_path), "dos": str(dos_path)}
