"""
Experiment module for the eigenstate learnability lab.
This module runs the experiment suites (spectral position, state count,
capacity, generalization hole, learnability gap, two-parameter, supervised,
training histories and diagnostics), writes plot-ready CSV tables with a JSON
run manifest, and replays runs from their manifests.
"""

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from diagnostics import SpectrumDiagnostics, sector_mean
from eigensolver import diagonalize
from encoder_net import EncoderParams, init_params, save_checkpoint
from protocols import SpectralProtocol
from settings import CODE_VERSION, axis_values, derive_seed
from spin_chain import apply_symmetry_breaking, base_params_from_config, build_hamiltonian, latent_spec_from_config
from training import (Dataset, Evaluation, History, TrainConfig, evaluate, generate_dataset,
                      sample_parameters, save_dataset, split_dataset, train_on_split)


EXPERIMENT_KINDS = (
    "generate", "train", "diagnostics", "sweep_spectrum", "sweep_num_states", "sweep_hidden",
    "generalization_hole", "learnability_gap", "two_param", "supervised", "training_history",
)

SEED_LABELS = ("sampling", "init", "split", "batching")


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """
    One experiment suite: its kind, base optimization settings and sweep axes.

    Every axis holds a nonempty ascending list of values.
    """
    kind: str
    train: TrainConfig
    axes: Dict[str, List[Any]]
    output_dir: Path

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"Unknown experiment kind {self.kind!r}")
        for name, values in self.axes.items():
            if not values:
                raise ValueError(f"Sweep axis {name} of {self.kind} is empty")
            if list(values) != sorted(values):
                raise ValueError(f"Sweep axis {name} of {self.kind} must be ascending, got {values}")


@dataclass(frozen=True)
class RunSpec:
    """A single training run inside a suite."""
    label: str
    L: int
    protocol: SpectralProtocol
    hidden: int
    n_sam: int
    seed: int
    free: Tuple[str, ...] = ("J1",)
    ranges: Optional[Tuple[Tuple[Tuple[float, float], ...], ...]] = None
    loss_mode: str = "rayleigh"
    n_epochs: Optional[int] = None


@dataclass
class RunRecord:
    """Outcome of one run."""
    run: RunSpec
    params: EncoderParams
    history: History
    evaluation: Evaluation
    seeds: Dict[str, int]

    def final_metrics(self) -> Dict[str, float]:
        return {
            "rayleigh_final": self.history.train_rayleigh[-1],
            "val_rayleigh_final": self.history.val_rayleigh[-1],
            "val_rayleigh_scaled_final": self.history.val_rayleigh_scaled[-1],
            "theta_loss_final": self.evaluation.metrics["theta_loss_mean"],
        }


@dataclass
class RunManifest:
    """Everything needed to reproduce an experiment's outputs."""
    experiment: str
    config: Dict[str, Any]
    seeds: List[Dict[str, Any]]
    version: str
    started_at: str
    wall_clock_seconds: float
    outputs: Dict[str, str]
    near_degenerate: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "version": self.version,
            "started_at": self.started_at,
            "wall_clock_seconds": self.wall_clock_seconds,
            "seeds": self.seeds,
            "near_degenerate": self.near_degenerate,
            "outputs": self.outputs,
            "config": self.config,
        }


@dataclass
class ExperimentResult:
    """Main table, auxiliary tables, and files a suite already wrote."""
    name: str
    table: pd.DataFrame
    extra_tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    runs: List[RunRecord] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Pure helpers and acceptance statistics
# ---------------------------------------------------------------------------

def loss_gap(losses_by_capacity: Sequence[float]) -> float:
    """
    Learnability gap: baseline loss minus the best loss in the capacity class.

    Args:
        losses_by_capacity: Losses ordered by ascending capacity; the first
            entry is the baseline

    Returns:
        float: Non-negative gap, 0 for a single-element class
    """
    if len(losses_by_capacity) == 0:
        raise ValueError("Capacity class is empty")
    return float(losses_by_capacity[0] - min(losses_by_capacity))


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation between two sequences."""
    frame = pd.DataFrame({"x": list(x), "y": list(y)}, dtype=float)
    return float(frame.corr(method="spearman").loc["x", "y"])


def loss_decreased(history: History, column: str = "train_rayleigh", share: float = 0.1) -> bool:
    """Median over the last share of epochs is below the median over the first share."""
    values = getattr(history, column)
    window = max(1, int(round(share * len(values))))
    return float(np.median(values[-window:])) < float(np.median(values[:window]))


def edge_to_mid_ratio(table: pd.DataFrame, edge_max: int, mid_min: int,
                      column: str = "theta_loss_final") -> float:
    """Median loss over mid rows (m >= mid_min) divided by median over edge rows (m <= edge_max)."""
    edge = table.loc[table["m_index"] <= edge_max, column].median()
    mid = table.loc[table["m_index"] >= mid_min, column].median()
    return float(mid / edge)


def emit_results(result: ExperimentResult, manifest: RunManifest, directory: Path) -> Dict[str, str]:
    """
    Write the result tables as CSV and the manifest as JSON.

    Args:
        result: Suite outcome
        manifest: Run manifest (its outputs are filled in here)
        directory: Output directory

    Returns:
        Dict: Output name to path
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    outputs = dict(result.files)

    tables = {result.name: result.table}
    tables.update(result.extra_tables)
    for name, table in tables.items():
        path = directory / f"{name}.csv"
        table.to_csv(path, index=False, lineterminator="\n")
        outputs[name] = str(path)

    manifest_path = directory / f"{result.name}_manifest.json"
    manifest.outputs = dict(sorted(outputs.items()))
    with open(manifest_path, 'w') as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    outputs["manifest"] = str(manifest_path)
    logger.info(f"Wrote {len(tables)} table(s) and {manifest_path}")
    return outputs


def _file_tag(protocol: SpectralProtocol) -> str:
    return protocol.tag.replace(":", "")


def _ranges_key(ranges: Dict[str, Sequence[Sequence[float]]], free: Sequence[str]):
    return tuple(tuple((float(lo), float(hi)) for lo, hi in ranges[name]) for name in free)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

class ExperimentRunner:
    """
    Runs experiment suites from a resolved configuration.
    """

    def __init__(self, config: Dict[str, Any]):
        """
        Initialize the runner with configuration.

        Args:
            config: Resolved configuration
        """
        self.config = config

        # Extract experiment parameters from config
        self.exp_config = self.config["experiments"]
        self.training_config = self.config["training"]
        self.train_config = TrainConfig.from_config(config)
        self.threads = int(self.config.get("runtime", {}).get("threads", 1))
        self.output_dir = Path(self.config["output"]["directory"])
        self.symmetry_breaking = bool(self.config["spin_chain"].get("symmetry_breaking", True))
        self.sampling_mode = self.training_config["sampling_mode"]
        self.diagnostics = SpectrumDiagnostics(config)

        self._datasets: Dict[Tuple, Dataset] = {}
        self._lock = threading.Lock()
        self._seed_log: List[Dict[str, Any]] = []

        logger.info(f"Experiment runner ready (threads={self.threads}, output={self.output_dir})")

    # -- building blocks ---------------------------------------------------

    def suite_config(self, kind: str) -> Dict[str, Any]:
        return self.exp_config.get(kind, {})

    def seeds(self, kind: str) -> List[int]:
        """Master seeds of a suite's replicas."""
        n_seeds = int(self.suite_config(kind).get("n_seeds", self.exp_config.get("n_seeds", 1)))
        master = int(self.training_config["seed"])
        return [master + k for k in range(n_seeds)]

    def spec_for(self, kind: str, axes: Dict[str, List[Any]]) -> ExperimentSpec:
        return ExperimentSpec(kind=kind, train=self.train_config, axes=axes, output_dir=self.output_dir)

    def default_ranges(self, free: Sequence[str]) -> Tuple:
        return _ranges_key(self.training_config["ranges"], free)

    def dataset(self, L: int, protocol: SpectralProtocol, n_sam: int, seed: int,
                free: Sequence[str] = ("J1",), ranges: Tuple = None, mode: str = None,
                threads: int = 1) -> Dataset:
        """
        Generate (or fetch from cache) the dataset of one run.

        Args:
            L: Chain length
            protocol: Spectral protocol
            n_sam: Number of samples
            seed: Master seed of the run
            free: Latent couplings
            ranges: Per-coupling interval unions (config default if None)
            mode: Sampling mode (config default if None)
            threads: Worker threads for diagonalization

        Returns:
            Dataset: The dataset
        """
        free = tuple(free)
        ranges = ranges or self.default_ranges(free)
        mode = mode or self.sampling_mode
        key = (L, protocol.tag, n_sam, seed, free, ranges, mode)
        with self._lock:
            cached = self._datasets.get(key)
        if cached is not None:
            return cached

        thetas = sample_parameters(ranges, n_sam, mode, derive_seed(seed, "sampling"))
        spec = latent_spec_from_config(self.config, free=free, L=L)
        ds = generate_dataset(thetas, spec, protocol, seed, symmetry_breaking=self.symmetry_breaking,
                              threads=threads,
                              degeneracy_tolerance=float(self.config["eigensolver"]["degeneracy_tolerance"]))
        with self._lock:
            return self._datasets.setdefault(key, ds)

    def train_run(self, run: RunSpec, threads: int = 1) -> RunRecord:
        """
        Train and evaluate one run.

        Args:
            run: Run description
            threads: Gradient worker threads

        Returns:
            RunRecord: Trained parameters, history and validation metrics
        """
        ds = self.dataset(run.L, run.protocol, run.n_sam, run.seed, run.free, run.ranges)
        cfg = replace(self.train_config, seed=run.seed, loss_mode=run.loss_mode,
                      n_epochs=run.n_epochs or self.train_config.n_epochs, threads=threads)
        seeds = {"master": run.seed, **{label: derive_seed(run.seed, label) for label in SEED_LABELS}}

        init = init_params(run.protocol.width, run.hidden, len(run.free), seeds["init"])
        train, val = split_dataset(ds, cfg.split_fraction, seeds["split"])
        logger.info(f"Run {run.label}: L={run.L} {run.protocol.tag} w_H={run.hidden} "
                    f"N_sam={run.n_sam} seed={run.seed} ({cfg.loss_mode})")
        params, history = train_on_split(train, val, cfg, init)
        evaluation = evaluate(params, val, cfg.loss)

        with self._lock:
            self._seed_log.append({"run": run.label, **seeds})
        return RunRecord(run=run, params=params, history=history, evaluation=evaluation, seeds=seeds)

    def run_all(self, runs: List[RunSpec]) -> List[RunRecord]:
        """Execute independent runs, in a thread pool when threads > 1."""
        if self.threads > 1 and len(runs) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(self.train_run, runs))
        return [self.train_run(run, threads=self.threads) for run in runs]

    @staticmethod
    def _rows(records: List[RunRecord], columns: Callable[[RunRecord], Dict[str, Any]],
              sort_by: List[str]) -> pd.DataFrame:
        rows = [{**columns(record), **record.final_metrics()} for record in records]
        table = pd.DataFrame(rows)
        if len(table):
            table = table.sort_values(sort_by, kind="mergesort").reset_index(drop=True)
        return table

    # -- suites ------------------------------------------------------------

    def generate(self) -> ExperimentResult:
        """Generate and save the configured dataset."""
        L = int(self.config["spin_chain"]["L"])
        protocol = SpectralProtocol.from_config(self.config)
        n_sam = int(self.training_config["samples"])
        seed = int(self.training_config["seed"])
        free = tuple(self.training_config["free"])
        ds = self.dataset(L, protocol, n_sam, seed, free, threads=self.threads)

        path = self.output_dir / f"dataset_L{L}_{_file_tag(protocol)}.eigd"
        save_dataset(ds, path)
        self._seed_log.append({"run": "generate", "master": seed, "sampling": derive_seed(seed, "sampling")})

        rows = []
        for k, sample in enumerate(ds.samples):
            row = {"sample": k}
            row.update({name: value for name, value in zip(free, sample.theta_true)})
            row["first_index"] = int(sample.block.indices[0])
            row["E_first"] = float(sample.block.energies[0])
            rows.append(row)
        return ExperimentResult(name=f"generate_L{L}_{_file_tag(protocol)}", table=pd.DataFrame(rows),
                                files={"dataset": str(path)})

    def train(self) -> ExperimentResult:
        """Single configured training run with checkpoint and full evaluation."""
        L = int(self.config["spin_chain"]["L"])
        protocol = SpectralProtocol.from_config(self.config)
        run = RunSpec(
            label="train",
            L=L,
            protocol=protocol,
            hidden=int(self.config["encoder"]["hidden"]),
            n_sam=int(self.training_config["samples"]),
            seed=int(self.training_config["seed"]),
            free=tuple(self.training_config["free"]),
            loss_mode=self.train_config.loss_mode,
        )
        record = self.train_run(run, threads=self.threads)

        with_spectra = bool(self.training_config.get("evaluate_spectra", True))
        ds = self.dataset(run.L, run.protocol, run.n_sam, run.seed, run.free)
        _, val = split_dataset(ds, self.train_config.split_fraction, record.seeds["split"])
        evaluation = evaluate(record.params, val, self.train_config.loss,
                              with_spectra=with_spectra, with_fidelity=with_spectra)
        logger.info(f"Validation metrics: {evaluation.metrics}")

        tag = f"L{L}_{_file_tag(protocol)}"
        checkpoint = self.output_dir / f"encoder_{tag}.enc1"
        save_checkpoint(record.params, checkpoint)
        table = pd.DataFrame([{"L": L, "protocol": protocol.tag, "w_H": run.hidden, "N_sam": run.n_sam,
                               "seed": run.seed, **record.final_metrics(), **evaluation.metrics}])
        return ExperimentResult(
            name=f"train_{tag}",
            table=table,
            extra_tables={f"history_{tag}": record.history.to_frame(),
                          f"evaluation_{tag}": evaluation.per_sample},
            files={"checkpoint": str(checkpoint)},
            runs=[record],
        )

    def diagnostics_suite(self) -> ExperimentResult:
        """Structure diagnostics of the full spectrum for each configured J1."""
        suite = self.suite_config("diagnostics")
        L = int(suite.get("L", self.config["diagnostics"]["L"]))
        couplings = sorted(suite.get("J1", self.config["diagnostics"]["J1_values"]))
        spec = self.spec_for("diagnostics", {"J1": couplings})

        base = base_params_from_config(self.config, L)
        base = replace(base, J2=float(suite.get("J2", base.J2)), Delta=float(suite.get("delta", base.Delta)))
        rows, files = [], {}
        for J1 in spec.axes["J1"]:
            params = replace(base, J1=float(J1))
            if self.symmetry_breaking:
                params = apply_symmetry_breaking(params)
            analysis = self.diagnostics.analyze(diagonalize(build_hamiltonian(params), L=L))
            tag = f"L{L}_J1{J1:+.2f}"
            for kind, path in self.diagnostics.write(analysis, self.output_dir, tag).items():
                files[f"{kind}_{tag}"] = path
            record = analysis["record"]
            rows.append({
                "L": L,
                "J1": J1,
                "svn_low5": sector_mean(record, "svn_norm", 0.0, 0.05),
                "svn_mid10": sector_mean(record, "svn_norm", 0.45, 0.55),
                "spart_low5": sector_mean(record, "spart_norm", 0.0, 0.05),
                "spart_mid10": sector_mean(record, "spart_norm", 0.45, 0.55),
            })
        return ExperimentResult(name="diagnostics", table=pd.DataFrame(rows), files=files)

    def sweep_spectrum(self) -> ExperimentResult:
        """Single-state protocol swept over spectral positions and widths."""
        suite = self.suite_config("sweep_spectrum")
        L = int(self.config["spin_chain"]["L"])
        spec = self.spec_for("sweep_spectrum", {
            "m_index": axis_values(self.config, "m_index", suite["m_index"]),
            "hidden": axis_values(self.config, "hidden", suite["hidden"]),
            "samples": axis_values(self.config, "samples", suite["samples"]),
        })
        runs = [
            RunSpec(label=f"spectrum_m{m}_w{w}_n{n}_s{seed}", L=L,
                    protocol=SpectralProtocol("single", m_index=m), hidden=w, n_sam=n, seed=seed)
            for m in spec.axes["m_index"] for w in spec.axes["hidden"]
            for n in spec.axes["samples"] for seed in self.seeds("sweep_spectrum")
        ]
        records = self.run_all(runs)
        table = self._rows(records, lambda r: {"m_index": r.run.protocol.m_index, "w_H": r.run.hidden,
                                               "N_sam": r.run.n_sam, "seed": r.run.seed},
                           ["m_index", "w_H", "N_sam", "seed"])
        return ExperimentResult(name=f"sweep_spectrum_L{L}", table=table, runs=records)

    def sweep_num_states(self) -> ExperimentResult:
        """Low and mid protocols swept over the number of input states M."""
        suite = self.suite_config("sweep_num_states")
        L = int(self.config["spin_chain"]["L"])
        spec = self.spec_for("sweep_num_states", {
            "M": axis_values(self.config, "m", suite["M"]),
            "samples": axis_values(self.config, "samples", suite["samples"]),
        })
        runs = [
            RunSpec(label=f"states_{kind}{M}_n{n}_s{seed}", L=L, protocol=SpectralProtocol(kind, M=M),
                    hidden=int(suite["hidden"]), n_sam=n, seed=seed)
            for kind in suite["protocols"] for M in spec.axes["M"]
            for n in spec.axes["samples"] for seed in self.seeds("sweep_num_states")
        ]
        records = self.run_all(runs)
        table = self._rows(records, lambda r: {"protocol": r.run.protocol.kind, "M": r.run.protocol.M,
                                               "N_sam": r.run.n_sam, "seed": r.run.seed},
                           ["protocol", "M", "N_sam", "seed"])
        return ExperimentResult(name=f"sweep_num_states_L{L}", table=table, runs=records)

    def sweep_hidden(self) -> ExperimentResult:
        """Low and mid protocols swept over the hidden width w_H."""
        suite = self.suite_config("sweep_hidden")
        L = int(self.config["spin_chain"]["L"])
        spec = self.spec_for("sweep_hidden", {
            "hidden": axis_values(self.config, "hidden", suite["hidden"]),
            "M": axis_values(self.config, "m", suite["M"]),
            "samples": axis_values(self.config, "samples", suite["samples"]),
        })
        runs = [
            RunSpec(label=f"hidden_{kind}{M}_w{w}_n{n}_s{seed}", L=L, protocol=SpectralProtocol(kind, M=M),
                    hidden=w, n_sam=n, seed=seed)
            for kind in suite["protocols"] for w in spec.axes["hidden"] for M in spec.axes["M"]
            for n in spec.axes["samples"] for seed in self.seeds("sweep_hidden")
        ]
        records = self.run_all(runs)
        table = self._rows(records, lambda r: {"protocol": r.run.protocol.kind, "w_H": r.run.hidden,
                                               "M": r.run.protocol.M, "N_sam": r.run.n_sam, "seed": r.run.seed},
                           ["protocol", "w_H", "M", "N_sam", "seed"])
        return ExperimentResult(name=f"sweep_hidden_L{L}", table=table, runs=records)

    def generalization_hole(self) -> ExperimentResult:
        """Train on the full and the holed domain, evaluate on a dense grid over the full one."""
        suite = self.suite_config("generalization_hole")
        L = int(self.config["spin_chain"]["L"])
        protocol = SpectralProtocol("low", M=int(suite["M"]))
        seed = self.seeds("generalization_hole")[0]
        domains = {tag: tuple((float(lo), float(hi)) for lo, hi in intervals)
                   for tag, intervals in sorted(suite["domains"].items())}
        runs = [RunSpec(label=f"domain_{tag}", L=L, protocol=protocol, hidden=int(suite["hidden"]),
                        n_sam=int(suite["samples"]), seed=seed, ranges=(intervals,))
                for tag, intervals in domains.items()]
        records = self.run_all(runs)

        lo = min(lo for intervals in domains.values() for lo, _ in intervals)
        hi = max(hi for intervals in domains.values() for _, hi in intervals)
        grid = self.dataset(L, protocol, int(suite["eval_points"]), seed, ranges=(((lo, hi),),), mode="grid")
        frames = []
        for tag, record in zip(domains, records):
            evaluation = evaluate(record.params, grid, self.train_config.loss, with_spectra=True)
            frame = evaluation.per_sample[["J1", "theta_loss", "delta_E"]].copy()
            frame.insert(0, "domain_tag", tag)
            frames.append(frame)
            logger.info(f"Domain {tag}: mean theta_loss on grid {evaluation.metrics['theta_loss_mean']:.4e}")
        table = pd.concat(frames, ignore_index=True).sort_values(["domain_tag", "J1"], kind="mergesort")
        return ExperimentResult(name=f"generalization_hole_L{L}", table=table.reset_index(drop=True),
                                runs=records)

    def learnability_gap(self) -> ExperimentResult:
        """Loss gap over the capacity class at each spectral position, with replica statistics."""
        suite = self.suite_config("learnability_gap")
        L = int(self.config["spin_chain"]["L"])
        spec = self.spec_for("learnability_gap", {
            "m_index": axis_values(self.config, "m_index", suite["m_index"]),
            "hidden": axis_values(self.config, "hidden", suite["hidden"]),
        })
        seeds = self.seeds("learnability_gap")
        runs = [
            RunSpec(label=f"gap_m{m}_w{w}_s{seed}", L=L, protocol=SpectralProtocol("single", m_index=m),
                    hidden=w, n_sam=int(suite["samples"]), seed=seed)
            for m in spec.axes["m_index"] for w in spec.axes["hidden"] for seed in seeds
        ]
        records = self.run_all(runs)
        runs_table = self._rows(records, lambda r: {"m_index": r.run.protocol.m_index, "w_H": r.run.hidden,
                                                    "seed": r.run.seed},
                                ["m_index", "w_H", "seed"])

        rows = []
        for m in spec.axes["m_index"]:
            gaps = []
            for seed in seeds:
                losses = runs_table[(runs_table["m_index"] == m) & (runs_table["seed"] == seed)] \
                    .sort_values("w_H")["val_rayleigh_final"].tolist()
                gaps.append(loss_gap(losses))
            mean = float(np.mean(gaps))
            std = float(np.std(gaps, ddof=1)) if len(gaps) > 1 else 0.0
            rows.append({"m_index": m, "n_seeds": len(gaps), "delta_L_mean": mean, "delta_L_std": std,
                         "learnable": bool(mean > 0.0 and mean > 3.0 * std)})
            logger.info(f"Gap at m={m}: {mean:.4e} +- {std:.4e}")
        return ExperimentResult(name=f"learnability_gap_L{L}", table=pd.DataFrame(rows),
                                extra_tables={f"learnability_gap_runs_L{L}": runs_table}, runs=records)

    def two_param(self) -> ExperimentResult:
        """Joint (J1, J2) inference against a matched single-coupling run."""
        suite = self.suite_config("two_param")
        L = int(self.config["spin_chain"]["L"])
        spec = self.spec_for("two_param", {"M": axis_values(self.config, "m", suite["M"])})
        epochs = suite.get("epochs")
        runs = []
        for M in spec.axes["M"]:
            for seed in self.seeds("two_param"):
                for free in (("J1",), ("J1", "J2")):
                    runs.append(RunSpec(label=f"twoparam_M{M}_T{len(free)}_s{seed}", L=L,
                                        protocol=SpectralProtocol("low", M=M), hidden=int(suite["hidden"]),
                                        n_sam=int(suite["samples"]), seed=seed, free=free, n_epochs=epochs))
        records = self.run_all(runs)
        table = self._rows(records, lambda r: {"M": r.run.protocol.M, "Theta": len(r.run.free),
                                               "seed": r.run.seed},
                           ["M", "Theta", "seed"])
        histories = {f"two_param_history_L{L}_M{r.run.protocol.M}_s{r.run.seed}": r.history.to_frame()
                     for r in records if len(r.run.free) == 2}
        return ExperimentResult(name=f"two_param_L{L}", table=table, extra_tables=histories, runs=records)

    def supervised(self) -> ExperimentResult:
        """Training with the supervised parameter loss instead of the Rayleigh objective."""
        suite = self.suite_config("supervised")
        L = int(suite.get("L", self.config["spin_chain"]["L"]))
        M = int(axis_values(self.config, "m", [suite["M"]])[0])
        runs = [RunSpec(label=f"supervised_M{M}_s{seed}", L=L, protocol=SpectralProtocol("low", M=M),
                        hidden=int(suite["hidden"]), n_sam=int(suite["samples"]), seed=seed,
                        loss_mode="supervised_theta")
                for seed in self.seeds("supervised")]
        records = self.run_all(runs)
        table = self._rows(records, lambda r: {"L": r.run.L, "M": r.run.protocol.M, "seed": r.run.seed},
                           ["seed"])
        histories = {f"supervised_history_L{L}_M{M}_s{r.run.seed}": r.history.to_frame() for r in records}
        return ExperimentResult(name=f"supervised_L{L}", table=table, extra_tables=histories, runs=records)

    def training_history(self) -> ExperimentResult:
        """Low-protocol training histories across chain lengths and state counts."""
        suite = self.suite_config("training_history")
        spec = self.spec_for("training_history", {
            "L": sorted(suite["L"]),
            "M": axis_values(self.config, "m", suite["M"]),
        })
        seed = self.seeds("training_history")[0]
        runs = [RunSpec(label=f"history_L{L}_M{M}", L=L, protocol=SpectralProtocol("low", M=M),
                        hidden=int(suite["hidden"]), n_sam=int(suite["samples"]), seed=seed)
                for L in spec.axes["L"] for M in spec.axes["M"]]
        records = self.run_all(runs)
        table = self._rows(records, lambda r: {"L": r.run.L, "M": r.run.protocol.M, "seed": r.run.seed},
                           ["L", "M"])
        histories = {f"history_L{r.run.L}_M{r.run.protocol.M}": r.history.to_frame() for r in records}
        return ExperimentResult(name="training_history", table=table, extra_tables=histories, runs=records)

    # -- orchestration -----------------------------------------------------

    def run_suite(self, kind: str) -> Tuple[ExperimentResult, Dict[str, str]]:
        """
        Run one suite and emit its tables and manifest.

        Args:
            kind: One of EXPERIMENT_KINDS

        Returns:
            Tuple[ExperimentResult, Dict]: The result and the written paths
        """
        suites = {
            "generate": self.generate,
            "train": self.train,
            "diagnostics": self.diagnostics_suite,
            "sweep_spectrum": self.sweep_spectrum,
            "sweep_num_states": self.sweep_num_states,
            "sweep_hidden": self.sweep_hidden,
            "generalization_hole": self.generalization_hole,
            "learnability_gap": self.learnability_gap,
            "two_param": self.two_param,
            "supervised": self.supervised,
            "training_history": self.training_history,
        }
        if kind not in suites:
            raise ValueError(f"Unknown experiment kind {kind!r}; expected one of {EXPERIMENT_KINDS}")

        started_at = datetime.now().isoformat(timespec="seconds")
        start = time.perf_counter()
        logger.info(f"Starting experiment {kind}")
        self._seed_log = []
        try:
            result = suites[kind]()
            elapsed = time.perf_counter() - start

            near_degenerate = {}
            for key, ds in sorted(self._datasets.items(), key=lambda item: str(item[0])):
                count = sum(len(entry["pairs"]) for entry in ds.meta["near_degenerate"])
                if count:
                    near_degenerate[f"L{key[0]}_{key[1]}_n{key[2]}_s{key[3]}"] = count
        finally:
            # datasets live for one suite only
            with self._lock:
                released = len(self._datasets)
                self._datasets.clear()
            logger.debug(f"Released {released} cached dataset(s) after {kind}")

        manifest = RunManifest(
            experiment=kind,
            config=self.config,
            seeds=sorted(self._seed_log, key=lambda entry: entry["run"]),
            version=CODE_VERSION,
            started_at=started_at,
            wall_clock_seconds=round(elapsed, 3),
            outputs={},
            near_degenerate=near_degenerate,
        )
        outputs = emit_results(result, manifest, self.output_dir)
        logger.info(f"Experiment {kind} finished in {elapsed:.1f}s")
        return result, outputs


def replay(manifest_path: str, output_dir: str = None) -> Tuple[ExperimentResult, Dict[str, str]]:
    """
    Re-run an experiment from its manifest.

    Args:
        manifest_path: Path of a manifest written by emit_results
        output_dir: Optional new output directory (default: the original one)

    Returns:
        Tuple[ExperimentResult, Dict]: The result and the written paths
    """
    with open(manifest_path, 'r') as f:
        manifest = json.load(f)
    config = manifest["config"]
    if output_dir:
        config["output"]["directory"] = output_dir
    if manifest.get("version") != CODE_VERSION:
        logger.warning(f"Manifest was written by version {manifest.get('version')}, running {CODE_VERSION}")
    logger.info(f"Replaying {manifest['experiment']} from {manifest_path}")
    return ExperimentRunner(config).run_suite(manifest["experiment"])
