"""
Training module for the eigenstate learnability lab.
This module generates eigenstate datasets over the coupling family, splits
them, and trains the encoder with Adam on the Rayleigh objective (or on the
supervised parameter loss), logging validation metrics every epoch.
"""

import itertools
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from diagnostics import fidelity
from eigensolver import diagonalize, mean_energy_index, near_degenerate_pairs
from encoder_net import EncoderParams, backward, forward, predict
from loss import (LossConfig, ProjectedBasis, project_basis, rayleigh_loss,
                  spectral_error, theta_loss, theta_loss_grad)
from protocols import SpectralProtocol, StateBlock, build_state_block, select_indices
from settings import derive_seed
from spin_chain import LatentSpec, apply_symmetry_breaking, basis_operators, build_hamiltonian


DATASET_MAGIC = b"EIGD"
DATASET_VERSION = 1
LOSS_MODES = ("rayleigh", "supervised_theta")
SAMPLING_MODES = ("grid", "uniform")


class DatasetGenerationError(RuntimeError):
    """Raised when one sample of a dataset cannot be generated."""

    def __init__(self, message: str, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step receives non-finite gradients."""


class TrainingDivergedError(FloatingPointError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Parameter sampling
# ---------------------------------------------------------------------------

Interval = Tuple[float, float]


def _check_intervals(intervals: Sequence[Interval]) -> np.ndarray:
    bounds = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    if bounds.shape[0] == 0:
        raise ValueError("Empty parameter range")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError(f"Every interval needs lo < hi, got {bounds.tolist()}")
    return bounds


def _union_grid(bounds: np.ndarray, count: int) -> np.ndarray:
    """Evenly spaced points over a union of intervals, allotted by length."""
    lengths = bounds[:, 1] - bounds[:, 0]
    share = count * lengths / lengths.sum()
    allotted = np.floor(share).astype(int)
    # largest remainder, ties to the earlier interval
    for k in np.argsort(-(share - allotted), kind="stable")[:count - allotted.sum()]:
        allotted[k] += 1
    points = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, allotted) if n > 0]
    return np.concatenate(points)


def sample_parameters(ranges: Sequence[Sequence[Interval]], n_sam: int, mode: str, seed: int) -> np.ndarray:
    """
    Draw latent vectors over (unions of) intervals.

    Args:
        ranges: Per free parameter, a list of (lo, hi) intervals
        n_sam: Number of samples
        mode: grid (evenly spaced, endpoints included) or uniform (i.i.d.)
        seed: Random seed for uniform mode

    Returns:
        np.ndarray: (n_sam, Theta) latent vectors
    """
    if mode not in SAMPLING_MODES:
        raise ValueError(f"Unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")
    if n_sam < 1:
        raise ValueError(f"Need at least one sample, got {n_sam}")
    axes = [_check_intervals(intervals) for intervals in ranges]
    Theta = len(axes)

    if mode == "grid":
        per_axis = 1
        while per_axis ** Theta < n_sam:
            per_axis += 1
        grids = [_union_grid(bounds, per_axis) for bounds in axes]
        points = list(itertools.islice(itertools.product(*grids), n_sam))
        return np.asarray(points, dtype=np.float64).reshape(n_sam, Theta)

    rng = np.random.default_rng(seed)
    columns = []
    for bounds in axes:
        lengths = bounds[:, 1] - bounds[:, 0]
        which = rng.choice(len(bounds), size=n_sam, p=lengths / lengths.sum())
        u = rng.uniform(size=n_sam)
        columns.append(bounds[which, 0] + u * lengths[which])
    return np.stack(columns, axis=1)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class DatasetSample:
    """One realization: generating couplings, encoder input and projections."""
    theta_true: np.ndarray
    block: StateBlock
    projected: ProjectedBasis


@dataclass
class Dataset:
    """
    Eigenstate dataset sharing L and protocol shape.

    ``spec`` is the latent specification the Hamiltonians were built from
    (symmetry breaking included); it is needed only for spectrum-based
    evaluation.
    """
    samples: List[DatasetSample]
    meta: Dict[str, Any]
    spec: Optional[LatentSpec] = None

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def psi(self) -> np.ndarray:
        """Encoder inputs stacked as (N, D, M) float32."""
        return np.stack([s.block.psi for s in self.samples]).astype(np.float32, copy=False)

    @cached_property
    def thetas(self) -> np.ndarray:
        return np.stack([s.theta_true for s in self.samples])

    @cached_property
    def projected(self) -> ProjectedBasis:
        """Projected bases stacked along a leading batch axis."""
        return ProjectedBasis(
            g=np.stack([s.projected.g for s in self.samples]),
            g_const=np.stack([s.projected.g_const for s in self.samples]),
            energies=np.stack([s.projected.energies for s in self.samples]),
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        meta = dict(self.meta, N_sam=len(indices))
        return Dataset(samples=[self.samples[i] for i in indices], meta=meta, spec=self.spec)


def _projected_rows(pb: ProjectedBasis, rows: np.ndarray) -> ProjectedBasis:
    return ProjectedBasis(g=pb.g[rows], g_const=pb.g_const[rows], energies=pb.energies[rows])


def generate_dataset(thetas: np.ndarray, spec: LatentSpec, protocol: SpectralProtocol, seed: int,
                     symmetry_breaking: bool = True, threads: int = 1,
                     degeneracy_tolerance: float = 1e-10) -> Dataset:
    """
    Diagonalize one Hamiltonian per latent vector and collect encoder inputs.

    Args:
        thetas: (N_sam, Theta) latent vectors
        spec: Latent specification over an unperturbed base chain
        protocol: Spectral selection rule
        seed: Seed the latent vectors were drawn with (recorded)
        symmetry_breaking: Apply the on-site perturbations to every Hamiltonian
        threads: Worker threads for the per-sample diagonalizations
        degeneracy_tolerance: Gap below which eigenpairs are reported

    Returns:
        Dataset: Samples with float32 states and float64 projections
    """
    thetas = np.asarray(thetas, dtype=np.float64).reshape(len(thetas), -1)
    if spec.Theta not in (1, 2):
        raise ValueError(f"Training needs one or two latent couplings, got {spec.free}")
    if thetas.shape[1] != spec.Theta:
        raise ValueError(f"Latent vectors have {thetas.shape[1]} entries, spec expects {spec.Theta}")
    if symmetry_breaking:
        spec = LatentSpec(free=spec.free, fixed_base=apply_symmetry_breaking(spec.fixed_base))
    protocol.validate(spec.fixed_base.dim)
    basis = basis_operators(spec)

    def make_sample(index: int):
        theta = thetas[index]
        try:
            H = build_hamiltonian(spec.params_for(theta))
            spectrum = diagonalize(H, L=spec.fixed_base.L)
            indices = select_indices(protocol, spectrum, mean_energy_index(spectrum, H))
            block = build_state_block(spectrum, indices, theta)
            projected = project_basis(block, basis)
            pairs = near_degenerate_pairs(spectrum, degeneracy_tolerance)
        except Exception as e:
            logger.error(f"Sample {index} (theta={theta.tolist()}) failed: {e}")
            raise DatasetGenerationError(f"Sample {index} failed: {e}", sample_index=index) from e
        block.psi = block.psi.astype(np.float32)
        return DatasetSample(theta_true=theta.copy(), block=block, projected=projected), pairs

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(make_sample, range(len(thetas))))
    else:
        results = [make_sample(i) for i in range(len(thetas))]

    degenerate = [{"sample": i, "pairs": pairs} for i, (_, pairs) in enumerate(results) if pairs]
    meta = {
        "L": spec.fixed_base.L,
        "D": spec.fixed_base.dim,
        "M": protocol.width,
        "Theta": spec.Theta,
        "N_sam": len(results),
        "protocol": protocol.tag,
        "free": list(spec.free),
        "seed": seed,
        "theta_min": thetas.min(axis=0).tolist(),
        "theta_max": thetas.max(axis=0).tolist(),
        "near_degenerate": degenerate,
    }
    logger.info(f"Generated {len(results)} samples at L={meta['L']} with protocol {protocol.tag}")
    return Dataset(samples=[sample for sample, _ in results], meta=meta, spec=spec)


def save_dataset(ds: Dataset, path: str):
    """
    Write a dataset in the EIGD binary format.

    Args:
        ds: Dataset to save
        path: Output file
    """
    meta = ds.meta
    L, D, M, Theta, N = meta["L"], meta["D"], meta["M"], meta["Theta"], len(ds)
    tag = meta["protocol"].encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(struct.pack("<5q", L, D, M, Theta, N))
        f.write(struct.pack("<I", len(tag)) + tag)
        for sample in ds.samples:
            f.write(np.asarray(sample.theta_true, dtype="<f8").tobytes())
            f.write(np.asarray(sample.block.indices, dtype="<i8").tobytes())
            f.write(np.asarray(sample.block.energies, dtype="<f8").tobytes())
            # column-major: one eigenvector after another
            f.write(np.ascontiguousarray(sample.block.psi.T, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(sample.projected.g, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(sample.projected.g_const, dtype="<f8").tobytes())
    logger.info(f"Saved {N} samples to {path}")


def load_dataset(path: str, spec: Optional[LatentSpec] = None) -> Dataset:
    """
    Read a dataset written by save_dataset.

    Args:
        path: Dataset file
        spec: Optional latent specification for spectrum-based evaluation

    Returns:
        Dataset: Loaded samples
    """
    with open(path, 'rb') as f:
        data = f.read()
    if data[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path} is not an EIGD dataset")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != DATASET_VERSION:
            raise DatasetFormatError(f"{path}: unsupported version {version}")
        L, D, M, Theta, N = struct.unpack_from("<5q", data, 8)
        (tag_length,) = struct.unpack_from("<I", data, 48)
        offset = 52 + tag_length
        tag = data[52:offset].decode("utf-8")

        def take(dtype: str, count: int) -> np.ndarray:
            nonlocal offset
            width = np.dtype(dtype).itemsize
            if offset + width * count > len(data):
                raise DatasetFormatError(f"{path} is truncated")
            values = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            offset += width * count
            return values

        samples = []
        for _ in range(N):
            theta = take("<f8", Theta).astype(np.float64)
            indices = take("<i8", M).astype(np.int64)
            energies = take("<f8", M).astype(np.float64)
            psi = take("<f4", D * M).reshape(M, D).T.astype(np.float32)
            g = take("<f8", Theta * M * M).reshape(Theta, M, M).astype(np.float64)
            g_const = take("<f8", M * M).reshape(M, M).astype(np.float64)
            block = StateBlock(psi=psi, energies=energies, indices=indices, theta_true=theta)
            samples.append(DatasetSample(theta_true=theta, block=block,
                                         projected=ProjectedBasis(g=g, g_const=g_const, energies=energies)))
    except struct.error as e:
        raise DatasetFormatError(f"{path} has a malformed header: {e}") from e
    if offset != len(data):
        raise DatasetFormatError(f"{path} has {len(data) - offset} trailing bytes")

    meta = {"L": L, "D": D, "M": M, "Theta": Theta, "N_sam": N, "protocol": tag,
            "free": list(spec.free) if spec else None, "seed": None, "near_degenerate": []}
    return Dataset(samples=samples, meta=meta, spec=spec)


def split_dataset(ds: Dataset, split_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Deterministic shuffled train/validation split.

    Args:
        ds: Dataset to split
        split_fraction: Training share, 0 < fraction < 1
        seed: Shuffle seed

    Returns:
        Tuple[Dataset, Dataset]: Disjoint training and validation sets
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"Split fraction must lie in (0, 1), got {split_fraction}")
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(split_fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    return ds.subset(order[:n_train].tolist()), ds.subset(order[n_train:].tolist())


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings of one training run."""
    n_epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 64
    gamma: float = 0.1
    epsilon: float = 1e-8
    split_fraction: float = 0.7
    seed: int = 1234
    loss_mode: str = "rayleigh"
    threads: int = 1
    log_every: int = 50

    def __post_init__(self):
        if self.n_epochs < 1:
            raise ValueError(f"Need at least one epoch, got {self.n_epochs}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"Split fraction must lie in (0, 1), got {self.split_fraction}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"Unknown loss mode {self.loss_mode!r}; expected one of {LOSS_MODES}")
        if self.batch_size < 1:
            raise ValueError(f"Batch size must be >= 1, got {self.batch_size}")

    @property
    def loss(self) -> LossConfig:
        return LossConfig(gamma=self.gamma, epsilon=self.epsilon)

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "TrainConfig":
        training_config = config["training"]
        return cls(
            n_epochs=int(training_config["epochs"]),
            learning_rate=float(training_config["learning_rate"]),
            batch_size=int(training_config["batch_size"]),
            gamma=float(config["loss"]["gamma"]),
            epsilon=float(config["loss"]["epsilon"]),
            split_fraction=float(training_config["split_fraction"]),
            seed=int(training_config["seed"]),
            loss_mode=training_config["loss_mode"],
            threads=int(config.get("runtime", {}).get("threads", 1)),
            log_every=int(training_config.get("log_every", 50)),
        )


@dataclass
class AdamState:
    """First and second moments, step counter and Adam constants."""
    m: EncoderParams
    v: EncoderParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: EncoderParams) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_update(params: EncoderParams, grads: EncoderParams, state: AdamState,
                lr: float) -> Tuple[EncoderParams, AdamState]:
    """
    One bias-corrected Adam step, applied in place.

    Args:
        params: Parameters to update
        grads: Gradients with the same structure
        state: Optimizer state
        lr: Learning rate

    Returns:
        Tuple[EncoderParams, AdamState]: The updated parameters and state
    """
    for name, grad in grads.items():
        if grad.shape != getattr(params, name).shape:
            raise ValueError(f"Gradient shape mismatch for {name}: {grad.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"Non-finite gradient in {name} at step {state.step + 1}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        value = getattr(params, name)
        value -= (lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)).astype(value.dtype)
    return params, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class History:
    """Per-epoch training and validation metrics."""
    epoch: List[int] = field(default_factory=list)
    train_rayleigh: List[float] = field(default_factory=list)
    val_rayleigh: List[float] = field(default_factory=list)
    val_theta: List[float] = field(default_factory=list)
    val_rayleigh_scaled: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": self.epoch,
            "train_rayleigh": self.train_rayleigh,
            "val_rayleigh": self.val_rayleigh,
            "val_theta": self.val_theta,
            "val_rayleigh_scaled": self.val_rayleigh_scaled,
        })

    def save(self, path: str):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


def _tree_sum(parts: List[EncoderParams]) -> EncoderParams:
    while len(parts) > 1:
        merged = []
        for left, right in zip(parts[0::2], parts[1::2]):
            merged.append(EncoderParams(**{name: value + getattr(right, name) for name, value in left.items()}))
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


ObjectiveFn = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _batch_gradients(params: EncoderParams, psi: np.ndarray, rows: np.ndarray, objective: ObjectiveFn,
                     threads: int, pool: Optional[ThreadPoolExecutor]) -> Tuple[np.ndarray, np.ndarray, EncoderParams]:
    """
    Forward, objective and backward over one mini-batch.

    The objective receives (theta_tilde, rows) and returns per-sample values
    and the gradient of the batch-mean objective in theta_tilde.
    """
    def run(chunk: np.ndarray):
        theta_tilde, cache = forward(params, psi[chunk])
        values, d_theta = objective(theta_tilde.astype(np.float64), chunk)
        return theta_tilde, values, backward(params, cache, d_theta.astype(params.dtype))

    if threads <= 1 or pool is None or len(rows) < 2 * threads:
        theta_tilde, values, grads = run(rows)
        return theta_tilde, values, grads

    chunks = [chunk for chunk in np.array_split(rows, threads) if len(chunk)]
    results = list(pool.map(run, chunks))
    return (np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results]),
            _tree_sum([r[2] for r in results]))


def validation_metrics(params: EncoderParams, ds: Dataset, cfg: LossConfig) -> Dict[str, float]:
    """Mean Rayleigh loss, mean scaled Rayleigh loss and mean L_theta over a dataset."""
    theta_tilde = predict(params, ds.psi).astype(np.float64)
    values, _ = rayleigh_loss(ds.projected, theta_tilde, cfg)
    scale = np.mean(ds.projected.energies ** 2, axis=-1) + cfg.epsilon
    return {
        "rayleigh": float(np.mean(values)),
        "rayleigh_scaled": float(np.mean(values * scale)),
        "theta": float(np.mean(theta_loss(theta_tilde, ds.thetas))),
    }


def train_on_split(train: Dataset, val: Dataset, cfg: TrainConfig,
                   encoder_init: EncoderParams) -> Tuple[EncoderParams, History]:
    """
    Train on an explicit train/validation pair.

    In rayleigh mode the objective only sees the projected bases; the
    generating couplings are read for validation metrics alone.

    Args:
        train: Training set
        val: Validation set
        cfg: Optimization settings
        encoder_init: Initial parameters (copied)

    Returns:
        Tuple[EncoderParams, History]: Trained parameters and metric history
    """
    if len(train) == 0:
        raise ValueError("Training set is empty")
    params = encoder_init.copy()
    state = AdamState.create(params)
    loss_cfg = cfg.loss
    rng = np.random.default_rng(derive_seed(cfg.seed, "batching"))
    history = History()

    psi = train.psi
    projected = train.projected
    if cfg.loss_mode == "supervised_theta":
        targets = train.thetas

        def objective(theta_tilde, rows):
            values = theta_loss(theta_tilde, targets[rows])
            return values, theta_loss_grad(theta_tilde, targets[rows]) / batch_size
    else:
        def objective(theta_tilde, rows):
            values, d_theta = rayleigh_loss(_projected_rows(projected, rows), theta_tilde, loss_cfg)
            return values, d_theta / batch_size

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(1, cfg.n_epochs + 1):
            order = rng.permutation(len(train))
            rayleigh_sum = 0.0
            for start in range(0, len(order), cfg.batch_size):
                rows = order[start:start + cfg.batch_size]
                batch_size = len(rows)
                theta_tilde, values, grads = _batch_gradients(params, psi, rows, objective, cfg.threads, pool)
                if not np.all(np.isfinite(values)):
                    raise TrainingDivergedError(f"Non-finite training loss at epoch {epoch}", epoch=epoch)
                if cfg.loss_mode == "rayleigh":
                    rayleigh_values = values
                else:
                    rayleigh_values, _ = rayleigh_loss(_projected_rows(projected, rows),
                                                       theta_tilde.astype(np.float64), loss_cfg)
                rayleigh_sum += float(np.sum(rayleigh_values))
                try:
                    adam_update(params, grads, state, cfg.learning_rate)
                except NonFiniteGradientError as e:
                    logger.error(f"Aborting epoch {epoch}: {e}")
                    raise TrainingDivergedError(f"Non-finite gradient at epoch {epoch}: {e}", epoch=epoch) from e

            metrics = validation_metrics(params, val, loss_cfg) if len(val) else \
                {"rayleigh": float("nan"), "rayleigh_scaled": float("nan"), "theta": float("nan")}
            history.epoch.append(epoch)
            history.train_rayleigh.append(rayleigh_sum / len(train))
            history.val_rayleigh.append(metrics["rayleigh"])
            history.val_theta.append(metrics["theta"])
            history.val_rayleigh_scaled.append(metrics["rayleigh_scaled"])

            if epoch == 1 or epoch % cfg.log_every == 0 or epoch == cfg.n_epochs:
                logger.info(f"Epoch {epoch}/{cfg.n_epochs}: train_rayleigh={history.train_rayleigh[-1]:.4e} "
                            f"val_rayleigh={metrics['rayleigh']:.4e} val_theta={metrics['theta']:.4e}")
    finally:
        if pool is not None:
            pool.shutdown()
    return params, history


def run_training(ds: Dataset, cfg: TrainConfig, encoder_init: EncoderParams) -> Tuple[EncoderParams, History]:
    """
    Split a dataset and train the encoder.

    Args:
        ds: Full dataset
        cfg: Optimization settings
        encoder_init: Initial parameters

    Returns:
        Tuple[EncoderParams, History]: Trained parameters and metric history
    """
    if len(ds) == 0:
        raise ValueError("Dataset is empty")
    train, val = split_dataset(ds, cfg.split_fraction, derive_seed(cfg.seed, "split"))
    logger.info(f"Training on {len(train)} samples, validating on {len(val)} ({cfg.loss_mode} loss)")
    return train_on_split(train, val, cfg, encoder_init)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class Evaluation:
    """Aggregate metrics plus one row per evaluated sample."""
    metrics: Dict[str, float]
    per_sample: pd.DataFrame


def evaluate(params: EncoderParams, ds: Dataset, cfg: LossConfig = None,
             with_spectra: bool = False, with_fidelity: bool = False) -> Evaluation:
    """
    Post-training evaluation.

    Spectral error and fidelity each need one diagonalization of H(theta~)
    per sample and are computed only on request.

    Args:
        params: Trained parameters
        ds: Dataset to evaluate on
        cfg: Loss weights for the Rayleigh metric
        with_spectra: Also compute the relative spectral error
        with_fidelity: Also compute the mean fidelity of the input states

    Returns:
        Evaluation: Metrics and per-sample table
    """
    cfg = cfg or LossConfig()
    theta_tilde = predict(params, ds.psi).astype(np.float64)
    thetas = ds.thetas
    losses = theta_loss(theta_tilde, thetas)
    rayleigh, _ = rayleigh_loss(ds.projected, theta_tilde, cfg)

    table = {}
    free = ds.meta.get("free") or [f"theta{k + 1}" for k in range(thetas.shape[1])]
    for k, name in enumerate(free):
        table[name] = thetas[:, k]
        table[f"{name}_tilde"] = theta_tilde[:, k]
    table["theta_loss"] = losses
    table["rayleigh"] = rayleigh

    metrics = {
        "theta_loss_mean": float(np.mean(losses)),
        "theta_loss_median": float(np.median(losses)),
        "rayleigh_mean": float(np.mean(rayleigh)),
    }

    if with_spectra or with_fidelity:
        if ds.spec is None:
            raise ValueError("Spectrum-based evaluation needs the dataset's latent specification")
        basis = basis_operators(ds.spec)
        errors, fidelities = [], []
        for sample, predicted in zip(ds.samples, theta_tilde):
            reconstructed = diagonalize(basis.hamiltonian(predicted), L=ds.spec.fixed_base.L)
            if with_spectra:
                true_energies = np.linalg.eigvalsh(basis.hamiltonian(sample.theta_true))
                errors.append(spectral_error(true_energies, reconstructed.energies))
            if with_fidelity:
                overlaps = []
                for column, m in enumerate(sample.block.indices):
                    state = sample.block.psi[:, column].astype(np.float64)
                    overlaps.append(fidelity(state / np.linalg.norm(state), reconstructed.vectors[:, m - 1]))
                fidelities.append(float(np.mean(overlaps)))
        if with_spectra:
            table["delta_E"] = errors
            metrics["spectral_error_mean"] = float(np.mean(errors))
        if with_fidelity:
            table["fidelity"] = fidelities
            metrics["fidelity_mean"] = float(np.mean(fidelities))

    return Evaluation(metrics=metrics, per_sample=pd.DataFrame(table))
