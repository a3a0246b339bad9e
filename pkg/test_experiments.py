#!/usr/bin/env python3
"""
Test script for the eigenstate learnability lab.
This script checks dataset generation, the optimizer and training loop,
evaluation, the experiment suites, result files, replay and the command-line
interface. Slow trend reproductions run only with LEARNABILITY_FULL_TESTS=1.
"""

import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

# Add the src directory to the Python path
src_dir = Path(__file__).parent / "src"
sys.path.append(str(src_dir))

from loguru import logger

from encoder_net import init_params, load_checkpoint
from experiments import (ExperimentResult, ExperimentRunner, ExperimentSpec, RunManifest, edge_to_mid_ratio,
                         emit_results, loss_decreased, loss_gap, replay, spearman_rho)
from loss import LossConfig, ProjectedBasis, rayleigh_loss, residual_matrix
from main import main as cli_main
from protocols import SpectralProtocol
from settings import CODE_VERSION, resolve_settings
from spin_chain import LatentSpec, SpinChainParams, apply_symmetry_breaking
from training import (AdamState, Dataset, DatasetFormatError, DatasetSample, History, NonFiniteGradientError,
                      TrainConfig, TrainingDivergedError, _batch_gradients, _projected_rows, adam_update,
                      evaluate, generate_dataset, load_dataset, run_training, sample_parameters,
                      save_dataset, split_dataset, train_on_split)


CONFIG_PATH = str(Path(__file__).parent / "config" / "config.json")
FULL_TESTS = os.getenv("LEARNABILITY_FULL_TESTS") == "1"


def setup_logger():
    """Set up the logger for testing."""
    # Remove default logger
    logger.remove()

    # Add console logger
    logger.add(sys.stderr, level="WARNING")


def small_dataset(n_sam=32, M=2, kind="low", mode="uniform", seed=5, ranges=None, L=4):
    spec = LatentSpec(free=("J1",), fixed_base=SpinChainParams.uniform(L))
    thetas = sample_parameters(ranges or [[(-2.0, 2.0)]], n_sam, mode, seed)
    return generate_dataset(thetas, spec, SpectralProtocol(kind, M=M), seed)


def tiny_config(out_dir):
    """Default configuration shrunk to a few seconds per suite."""
    config = resolve_settings(CONFIG_PATH)
    config["spin_chain"]["L"] = 4
    config["training"].update({"epochs": 3, "samples": 24, "batch_size": 8, "log_every": 1})
    config["encoder"]["hidden"] = 8
    config["protocol"].update({"kind": "low", "M": 2, "m_index": 1})
    config["diagnostics"]["L"] = 6
    config["output"]["directory"] = str(out_dir)
    config["logging"]["directory"] = str(Path(out_dir) / "logs")
    config["experiments"] = {
        "n_seeds": 1,
        "sweep_spectrum": {"m_index": [1, 8], "hidden": [8], "samples": [24], "n_seeds": 1},
        "sweep_num_states": {"protocols": ["low", "mid"], "M": [1, 2], "hidden": 8, "samples": [24]},
        "sweep_hidden": {"protocols": ["low", "mid"], "hidden": [4, 8], "M": [2], "samples": [24]},
        "generalization_hole": {"M": 2, "hidden": 8, "samples": 24, "eval_points": 9,
                                "domains": {"full": [[-2.0, 2.0]], "holed": [[-2.0, -1.0], [0.5, 2.0]]}},
        "learnability_gap": {"m_index": [1, 8], "hidden": [4, 8], "samples": 24, "n_seeds": 2},
        "two_param": {"M": [2], "hidden": 8, "samples": 24, "epochs": 2},
        "supervised": {"L": 4, "M": 2, "hidden": 8, "samples": 24},
        "training_history": {"L": [4], "M": [2], "hidden": 8, "samples": 24},
        "diagnostics": {"L": 6, "J1": [-0.4, 0.4], "J2": 0.5, "delta": 0.5},
    }
    return config


# ---------------------------------------------------------------------------
# Sampling and datasets
# ---------------------------------------------------------------------------

def test_sample_parameters():
    """Grid and uniform sampling over interval unions."""
    grid = sample_parameters([[(-2.0, 2.0)]], 5, "grid", seed=0)
    assert np.array_equal(grid[:, 0], [-2.0, -1.0, 0.0, 1.0, 2.0])

    union = [[(-2.0, -1.0), (0.5, 2.0)]]
    values = sample_parameters(union, 1000, "uniform", seed=17)[:, 0]
    inside = ((values >= -2.0) & (values <= -1.0)) | ((values >= 0.5) & (values <= 2.0))
    assert np.all(inside)
    assert abs(np.mean(values <= -1.0) - 0.4) <= 0.05

    assert np.array_equal(sample_parameters(union, 50, "uniform", 3), sample_parameters(union, 50, "uniform", 3))
    assert not np.array_equal(sample_parameters(union, 50, "uniform", 3), sample_parameters(union, 50, "uniform", 4))

    pairs = sample_parameters([[(-2.0, 2.0)], [(0.0, 1.0)]], 10, "grid", seed=0)
    assert pairs.shape == (10, 2) and len({tuple(row) for row in pairs}) == 10
    assert np.all((pairs[:, 1] >= 0.0) & (pairs[:, 1] <= 1.0))

    for bad in (([[(1.0, 1.0)]], 5, "grid"), ([[]], 5, "grid"), ([[(-1.0, 1.0)]], 5, "sobol")):
        try:
            sample_parameters(*bad, seed=0)
            raise AssertionError(f"sample_parameters{bad} should fail")
        except ValueError:
            pass
    print("✅ Parameter sampling")


def test_generate_dataset():
    """Shapes, dtypes and exact projections of a generated dataset."""
    ds = small_dataset(n_sam=6, mode="grid")
    assert len(ds) == 6 and ds.psi.shape == (6, 16, 2) and ds.psi.dtype == np.float32
    assert ds.meta["D"] == 16 and ds.meta["M"] == 2 and ds.meta["protocol"] == "low:2"
    assert ds.spec.fixed_base == apply_symmetry_breaking(SpinChainParams.uniform(4))
    for sample in ds.samples:
        assert sample.block.indices.tolist() == [1, 2]
        R = residual_matrix(sample.projected, sample.theta_true)
        assert np.max(np.abs(R - np.diag(sample.projected.energies))) <= 1e-9
        gram = sample.block.psi.astype(np.float64).T @ sample.block.psi.astype(np.float64)
        assert np.max(np.abs(gram - np.eye(2))) <= 1e-6

    spec = LatentSpec(free=("J1",), fixed_base=SpinChainParams.uniform(4))
    threaded = generate_dataset(ds.thetas, spec, SpectralProtocol("low", M=2), 5, threads=2)
    assert np.array_equal(threaded.psi, ds.psi)

    try:
        generate_dataset(ds.thetas, spec, SpectralProtocol("low", M=17), 5)
        raise AssertionError("window wider than D should fail")
    except ValueError:
        pass
    print("✅ Dataset generation")


def test_dataset_file():
    """EIGD files are reproducible and round-trip; malformed files are rejected."""
    with tempfile.TemporaryDirectory() as tmp:
        first, second = Path(tmp) / "a.eigd", Path(tmp) / "b.eigd"
        save_dataset(small_dataset(n_sam=8, kind="mid", M=3), first)
        save_dataset(small_dataset(n_sam=8, kind="mid", M=3), second)
        data = first.read_bytes()
        assert data[:4] == b"EIGD" and data == second.read_bytes()

        original = small_dataset(n_sam=8, kind="mid", M=3)
        loaded = load_dataset(first)
        assert len(loaded) == 8 and loaded.meta["protocol"] == "mid:3"
        assert np.array_equal(loaded.psi, original.psi) and np.array_equal(loaded.thetas, original.thetas)
        assert np.array_equal(loaded.projected.g, original.projected.g)
        assert np.array_equal(loaded.samples[3].block.indices, original.samples[3].block.indices)

        first.write_bytes(data[:-8])
        try:
            load_dataset(first)
            raise AssertionError("truncated dataset should fail")
        except DatasetFormatError:
            pass
        first.write_bytes(b"XXXX" + data[4:])
        try:
            load_dataset(first)
            raise AssertionError("wrong magic should fail")
        except DatasetFormatError:
            pass
    print("✅ Dataset files")


def test_split_dataset():
    """Disjoint, complete and deterministic splits."""
    ds = Dataset(samples=list(range(1000)), meta={})
    train, val = split_dataset(ds, 0.7, seed=9)
    assert len(train) == 700 and len(val) == 300
    assert sorted(train.samples + val.samples) == list(range(1000))
    assert split_dataset(ds, 0.7, seed=9)[0].samples == train.samples
    assert split_dataset(ds, 0.7, seed=10)[0].samples != train.samples

    train, val = split_dataset(Dataset(samples=[0, 1], meta={}), 0.5, seed=1)
    assert len(train) == 1 and len(val) == 1
    train, val = split_dataset(Dataset(samples=[0, 1, 2], meta={}), 0.9, seed=1)
    assert len(train) == 2 and len(val) == 1
    print("✅ Train/validation split")


# ---------------------------------------------------------------------------
# Optimizer and training
# ---------------------------------------------------------------------------

def test_adam_update():
    """Zero gradients, the hand recurrence, the step-size limit and non-finite input."""
    lr = 1e-2
    params = init_params(1, 1, 1, seed=0, dtype=np.float64)
    before = params.copy()
    state = AdamState.create(params)
    adam_update(params, params.zeros_like(), state, lr)
    assert state.step == 1
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(params.items(), before.items()))

    params = init_params(1, 1, 1, seed=0, dtype=np.float64)
    for _, value in params.items():
        value += 0.5
    state = AdamState.create(params)
    expected = {name: value.copy() for name, value in params.items()}
    m = {name: np.zeros_like(value) for name, value in expected.items()}
    v = {name: np.zeros_like(value) for name, value in expected.items()}
    for t in range(1, 4):
        # gradient of 0.5 * p^2
        grads = params.copy()
        adam_update(params, grads, state, lr)
        for name in expected:
            g = expected[name].copy()
            m[name] = 0.9 * m[name] + (1.0 - 0.9) * g
            v[name] = 0.999 * v[name] + (1.0 - 0.999) * g * g
            expected[name] = expected[name] - lr * (m[name] / (1.0 - 0.9 ** t)) / (
                np.sqrt(v[name] / (1.0 - 0.999 ** t)) + 1e-8)
    for name, value in params.items():
        assert np.allclose(value, expected[name], rtol=0.0, atol=1e-12), name

    params = init_params(1, 1, 1, seed=0, dtype=np.float64)
    state = AdamState.create(params)
    grads = params.zeros_like()
    for _, value in grads.items():
        value += 3.0
    for _ in range(200):
        previous = params.w_in.copy()
        adam_update(params, grads, state, lr)
    assert abs(float((previous - params.w_in)[0, 0]) - lr) <= 1e-3 * lr

    grads.b_out2[0] = np.nan
    step, snapshot = state.step, params.copy()
    try:
        adam_update(params, grads, state, lr)
        raise AssertionError("NaN gradient should fail")
    except NonFiniteGradientError:
        pass
    assert state.step == step
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(params.items(), snapshot.items()))
    print("✅ Adam update")


def test_training_history_and_determinism():
    """History length equals the epoch count; single-thread runs are bit-identical."""
    ds = small_dataset(n_sam=24)
    init = init_params(2, 8, 1, seed=1)
    _, history = run_training(ds, TrainConfig(n_epochs=1, batch_size=8, log_every=1), init)
    assert len(history) == 1 and list(history.to_frame().columns) == [
        "epoch", "train_rayleigh", "val_rayleigh", "val_theta", "val_rayleigh_scaled"]

    cfg = TrainConfig(n_epochs=3, batch_size=8, log_every=1)
    first_params, first = run_training(ds, cfg, init)
    second_params, second = run_training(ds, cfg, init)
    assert first.to_frame().equals(second.to_frame())
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(first_params.items(), second_params.items()))
    assert len(first) == 3 and first.epoch == [1, 2, 3]
    print("✅ Training histories are complete and reproducible")


def test_rayleigh_training():
    """The Rayleigh objective decreases and never touches the generating couplings."""
    ds = small_dataset(n_sam=64, seed=21)
    train, val = split_dataset(ds, 0.75, seed=3)
    init = init_params(2, 16, 1, seed=4)
    cfg = TrainConfig(n_epochs=40, learning_rate=3e-3, batch_size=16, log_every=100)
    params, history = train_on_split(train, val, cfg, init)
    assert loss_decreased(history, "train_rayleigh")
    assert all(np.isfinite(history.val_theta))

    blind = Dataset(samples=[DatasetSample(theta_true=np.full_like(s.theta_true, np.nan), block=s.block,
                                           projected=s.projected) for s in train.samples],
                    meta=train.meta, spec=train.spec)
    blind_params, blind_history = train_on_split(blind, val, cfg, init)
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(params.items(), blind_params.items()))
    assert blind_history.train_rayleigh == history.train_rayleigh
    print("✅ Rayleigh training decreases the loss without the true couplings")


def test_supervised_training():
    """The supervised parameter loss drives the validation parameter error down."""
    ds = small_dataset(n_sam=64, seed=21)
    cfg = TrainConfig(n_epochs=30, learning_rate=3e-3, batch_size=16, loss_mode="supervised_theta",
                      log_every=100)
    _, history = run_training(ds, cfg, init_params(2, 16, 1, seed=4))
    assert spearman_rho(history.epoch, history.val_theta) < 0
    assert loss_decreased(history, "val_theta")
    assert all(np.isfinite(history.train_rayleigh))
    print("✅ Supervised training")


def test_training_divergence():
    """Non-finite losses abort training with the offending epoch."""
    ds = small_dataset(n_sam=12)
    broken = Dataset(samples=list(ds.samples), meta=ds.meta, spec=ds.spec)
    sample = broken.samples[0]
    projected = ProjectedBasis(g=sample.projected.g, g_const=np.full_like(sample.projected.g_const, np.nan),
                               energies=sample.projected.energies)
    broken.samples[0] = DatasetSample(theta_true=sample.theta_true, block=sample.block, projected=projected)
    try:
        with np.errstate(invalid="ignore"):
            train_on_split(broken, ds.subset([1, 2]), TrainConfig(n_epochs=2, batch_size=4),
                           init_params(2, 8, 1, seed=1))
        raise AssertionError("NaN loss should abort training")
    except TrainingDivergedError as e:
        assert e.epoch == 1
    print("✅ Divergence is reported")


def test_threaded_gradients():
    """Tree-summed gradients over worker threads match the single-thread batch."""
    ds = small_dataset(n_sam=32)
    params = init_params(2, 16, 1, seed=2)
    rows = np.arange(32)
    cfg = LossConfig()

    def objective(theta_tilde, chunk):
        values, d_theta = rayleigh_loss(_projected_rows(ds.projected, chunk), theta_tilde, cfg)
        return values, d_theta / len(rows)

    _, serial_values, serial = _batch_gradients(params, ds.psi, rows, objective, 1, None)
    with ThreadPoolExecutor(max_workers=4) as pool:
        _, threaded_values, threaded = _batch_gradients(params, ds.psi, rows, objective, 4, pool)
    assert np.allclose(serial_values, threaded_values, rtol=1e-4, atol=1e-8)
    for name, value in serial.items():
        difference = np.linalg.norm(getattr(threaded, name) - value)
        assert difference <= 1e-4 * max(np.linalg.norm(value), 1e-6), name
    print("✅ Threaded gradient reduction")


def test_evaluate():
    """Perfect and constant predictors give the closed-form metrics."""
    # a one-point grid sits on the lower endpoint
    exact = small_dataset(n_sam=1, ranges=[[(0.5, 1.0)]], mode="grid")
    assert exact.thetas.tolist() == [[0.5]]
    params = init_params(2, 8, 1, seed=0).zeros_like()
    params.b_out2[:] = 0.5
    evaluation = evaluate(params, exact, with_spectra=True, with_fidelity=True)
    assert evaluation.metrics["theta_loss_mean"] == 0.0
    assert evaluation.metrics["rayleigh_mean"] <= 1e-10
    assert evaluation.metrics["spectral_error_mean"] <= 1e-10
    assert abs(evaluation.metrics["fidelity_mean"] - 1.0) <= 1e-6
    assert list(evaluation.per_sample.columns) == ["J1", "J1_tilde", "theta_loss", "rayleigh", "delta_E", "fidelity"]

    n = 41
    grid = small_dataset(n_sam=n, mode="grid")
    constant = evaluate(init_params(2, 8, 1, seed=0).zeros_like(), grid, with_spectra=True)
    assert abs(constant.metrics["theta_loss_mean"] - (4.0 / 3.0) * (n + 1) / (n - 1)) <= 1e-9
    assert abs(constant.metrics["theta_loss_mean"] - 4.0 / 3.0) <= 0.1
    assert np.all(constant.per_sample["delta_E"] >= 0.0)

    try:
        evaluate(params, Dataset(samples=exact.samples, meta=exact.meta), with_spectra=True)
        raise AssertionError("spectra without a latent specification should fail")
    except ValueError:
        pass
    print("✅ Evaluation metrics")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def test_acceptance_helpers():
    """Gap, rank correlation, loss-decrease and edge/mid statistics."""
    assert loss_gap([0.5]) == 0.0
    assert loss_gap([3.0, 1.0, 2.0]) == 2.0
    try:
        loss_gap([])
        raise AssertionError("empty class should fail")
    except ValueError:
        pass

    assert abs(spearman_rho([1, 2, 3, 4], [4, 3, 2, 1]) + 1.0) <= 1e-12
    assert abs(spearman_rho([1, 2, 3], [1, 4, 9]) - 1.0) <= 1e-12

    history = History(epoch=list(range(1, 21)), train_rayleigh=[1.0 / k for k in range(1, 21)])
    assert loss_decreased(history)
    history.train_rayleigh.reverse()
    assert not loss_decreased(history)

    table = pd.DataFrame({"m_index": [1, 4, 24, 32], "theta_loss_final": [0.01, 0.03, 0.5, 0.7]})
    assert abs(edge_to_mid_ratio(table, 4, 24) - 0.6 / 0.02) <= 1e-9
    print("✅ Acceptance statistics")


def test_experiment_spec():
    """Sweep axes must be nonempty and ascending."""
    cfg = TrainConfig()
    ExperimentSpec("sweep_hidden", cfg, {"hidden": [8, 32, 128]}, Path("results"))
    for kind, axes in (("sweep_hidden", {"hidden": [32, 8]}), ("sweep_hidden", {"hidden": []}),
                       ("sweep_colour", {"hidden": [8]})):
        try:
            ExperimentSpec(kind, cfg, axes, Path("results"))
            raise AssertionError(f"{kind} {axes} should fail")
        except ValueError:
            pass
    print("✅ Experiment specifications")


def test_emit_results():
    """Header-only CSV for an empty table, manifest listing every output."""
    with tempfile.TemporaryDirectory() as tmp:
        result = ExperimentResult(name="empty", table=pd.DataFrame(columns=["m_index", "theta_loss_final"]),
                                  extra_tables={"empty_runs": pd.DataFrame({"seed": [1, 2]})})
        manifest = RunManifest(experiment="sweep_spectrum", config={"training": {"seed": 1}}, seeds=[],
                               version=CODE_VERSION, started_at="2024-01-01T00:00:00", wall_clock_seconds=0.0,
                               outputs={})
        outputs = emit_results(result, manifest, Path(tmp))
        assert Path(outputs["empty"]).read_text() == "m_index,theta_loss_final\n"
        assert Path(outputs["empty_runs"]).read_text() == "seed\n1\n2\n"
        with open(outputs["manifest"], 'r') as f:
            written = json.load(f)
        assert written["version"] == CODE_VERSION
        assert sorted(written["outputs"]) == ["empty", "empty_runs"]
    print("✅ Result emission")


def test_sweep_reproducibility_and_replay():
    """Re-running and replaying a sweep reproduces byte-identical CSV files."""
    with tempfile.TemporaryDirectory() as tmp:
        first_dir, second_dir, replay_dir = (Path(tmp) / name for name in ("first", "second", "replay"))
        result, outputs = ExperimentRunner(tiny_config(first_dir)).run_suite("sweep_spectrum")
        assert result.table["m_index"].tolist() == [1, 8]
        assert list(result.table.columns[:4]) == ["m_index", "w_H", "N_sam", "seed"]

        _, second_outputs = ExperimentRunner(tiny_config(second_dir)).run_suite("sweep_spectrum")
        name = result.name
        assert Path(outputs[name]).read_bytes() == Path(second_outputs[name]).read_bytes()

        with open(outputs["manifest"], 'r') as f:
            manifest = json.load(f)
        assert manifest["version"] == CODE_VERSION and len(manifest["seeds"]) == 2
        assert {"master", "sampling", "init", "split", "batching"} <= set(manifest["seeds"][0])

        _, replay_outputs = replay(outputs["manifest"], output_dir=str(replay_dir))
        assert Path(outputs[name]).read_bytes() == Path(replay_outputs[name]).read_bytes()
    print("✅ Sweeps are reproducible and replayable")


def test_learnability_gap_suite():
    """Gap summary per spectral position with replica statistics."""
    with tempfile.TemporaryDirectory() as tmp:
        result, outputs = ExperimentRunner(tiny_config(tmp)).run_suite("learnability_gap")
        assert result.table["m_index"].tolist() == [1, 8]
        assert result.table["n_seeds"].tolist() == [2, 2]
        assert np.all(result.table["delta_L_mean"] >= 0.0)
        runs = result.extra_tables["learnability_gap_runs_L4"]
        assert len(runs) == 8 and Path(outputs["learnability_gap_runs_L4"]).exists()
    print("✅ Learnability gap suite")


def test_small_suites():
    """Every remaining suite runs at toy scale and writes its tables."""
    with tempfile.TemporaryDirectory() as tmp:
        runner = ExperimentRunner(tiny_config(tmp))

        result, outputs = runner.run_suite("generate")
        assert len(result.table) == 24 and len(load_dataset(outputs["dataset"])) == 24
        assert not runner._datasets

        result, outputs = runner.run_suite("train")
        checkpoint = load_checkpoint(outputs["checkpoint"])
        assert checkpoint.M == 2 and checkpoint.hidden == 8
        assert len(result.extra_tables["history_L4_low2"]) == 3
        assert "fidelity" in result.extra_tables["evaluation_L4_low2"].columns

        result, outputs = runner.run_suite("diagnostics")
        assert result.table["J1"].tolist() == [-0.4, 0.4]
        assert np.all(np.isfinite(result.table[["svn_low5", "svn_mid10", "spart_low5", "spart_mid10"]].values))
        assert Path(outputs["states_L6_J1-0.40"]).exists() and Path(outputs["dos_L6_J1+0.40"]).exists()

        result, _ = runner.run_suite("sweep_num_states")
        assert len(result.table) == 4 and result.table["protocol"].tolist() == ["low", "low", "mid", "mid"]

        result, _ = runner.run_suite("sweep_hidden")
        assert len(result.table) == 4 and result.table["w_H"].tolist() == [4, 8, 4, 8]

        result, _ = runner.run_suite("generalization_hole")
        assert len(result.table) == 18 and list(result.table.columns) == ["domain_tag", "J1", "theta_loss", "delta_E"]
        assert result.table["domain_tag"].tolist() == ["full"] * 9 + ["holed"] * 9
        assert not runner._datasets

        result, _ = runner.run_suite("two_param")
        assert result.table["Theta"].tolist() == [1, 2]
        assert len(result.extra_tables["two_param_history_L4_M2_s1234"]) == 2

        result, _ = runner.run_suite("supervised")
        assert len(result.table) == 1

        result, _ = runner.run_suite("training_history")
        assert result.table[["L", "M"]].values.tolist() == [[4, 2]]
    print("✅ All suites run at toy scale")


def test_command_line():
    """The CLI runs a suite, replays it and reports failures with exit code 1."""
    with tempfile.TemporaryDirectory() as tmp:
        config = tiny_config(Path(tmp) / "results")
        for key in ("preset", "config_path", "axes", "runtime"):
            config.pop(key, None)
        config_path = Path(tmp) / "config.json"
        with open(config_path, 'w') as f:
            json.dump(config, f)

        out_dir = Path(tmp) / "cli"
        assert cli_main(["train", "--config", str(config_path), "--out", str(out_dir), "--epochs", "2"]) == 0
        assert (out_dir / "train_L4_low2.csv").exists() and (out_dir / "encoder_L4_low2.enc1").exists()
        history = pd.read_csv(out_dir / "history_L4_low2.csv")
        assert len(history) == 2
        header = (out_dir / "history_L4_low2.csv").read_text().splitlines()[0]
        assert header.startswith("epoch,train_rayleigh,val_rayleigh,val_theta")

        replay_dir = Path(tmp) / "replayed"
        manifest = str(out_dir / "train_L4_low2_manifest.json")
        assert cli_main(["replay", manifest, "--config", str(config_path), "--out", str(replay_dir)]) == 0
        assert (out_dir / "train_L4_low2.csv").read_bytes() == (replay_dir / "train_L4_low2.csv").read_bytes()

        bad_params = Path(tmp) / "bad.params"
        bad_params.write_text("colour = blue\n")
        assert cli_main(["train", "--config", str(config_path), "--params", str(bad_params)]) == 1

    setup_logger()
    print("✅ Command-line interface")


def test_command_line_presets():
    """Both named presets are accepted on the command line and recorded in the manifest."""
    with tempfile.TemporaryDirectory() as tmp:
        config = tiny_config(Path(tmp) / "results")
        for key in ("preset", "config_path", "axes", "runtime"):
            config.pop(key, None)
        config_path = Path(tmp) / "config.json"
        with open(config_path, 'w') as f:
            json.dump(config, f)

        for preset in ("desk", "paper"):
            out_dir = Path(tmp) / preset
            argv = ["generate", "--preset", preset, "--config", str(config_path),
                    "--out", str(out_dir), "--samples", "6"]
            assert cli_main(argv) == 0
            with open(out_dir / "generate_L4_low2_manifest.json") as f:
                manifest = json.load(f)
            assert manifest["config"]["preset"] == preset
            assert len(pd.read_csv(out_dir / "generate_L4_low2.csv")) == 6

        epochs = {preset: resolve_settings(str(config_path), preset=preset)["training"]["epochs"]
                  for preset in ("desk", "paper")}
        assert epochs == {"desk": 500, "paper": 2500}

    setup_logger()
    print("✅ Command-line presets")


# ---------------------------------------------------------------------------
# Trend reproductions (LEARNABILITY_FULL_TESTS=1)
# ---------------------------------------------------------------------------

def full_runner(tmp):
    config = resolve_settings(CONFIG_PATH)
    config["output"]["directory"] = str(tmp)
    return ExperimentRunner(config)


def test_full_spectral_position_crossover():
    """Edge states beat mid-spectrum states by at least 5x."""
    if not FULL_TESTS:
        print("ℹ️ Skipped (set LEARNABILITY_FULL_TESTS=1)")
        return
    with tempfile.TemporaryDirectory() as tmp:
        result, _ = full_runner(tmp).run_suite("sweep_spectrum")
        wide = result.table[result.table["w_H"] == 128]
        assert edge_to_mid_ratio(wide, edge_max=4, mid_min=24) >= 5.0
    print("✅ Spectral-position crossover")


def test_full_state_count_trend():
    """Low-protocol loss falls with M; mid stays above it until M reaches half the spectrum."""
    if not FULL_TESTS:
        print("ℹ️ Skipped (set LEARNABILITY_FULL_TESTS=1)")
        return
    with tempfile.TemporaryDirectory() as tmp:
        runner = full_runner(tmp)
        D = 2 ** int(runner.config["spin_chain"]["L"])
        result, _ = runner.run_suite("sweep_num_states")
        medians = result.table.groupby(["protocol", "M"])["theta_loss_final"].median()
        low, mid = medians["low"], medians["mid"]
        assert spearman_rho(low.index, low.values) <= 0.0
        assert all(mid[M] > low[M] for M in low.index if M < D // 4)
        assert D // 2 in mid.index
        assert mid[D // 2] <= 3.0 * low[D // 2]
    print("✅ State-count trend")


def test_full_capacity_and_gap():
    """Low-protocol loss falls with w_H, mid never reaches it; the gap is learnable at the edge only."""
    if not FULL_TESTS:
        print("ℹ️ Skipped (set LEARNABILITY_FULL_TESTS=1)")
        return
    with tempfile.TemporaryDirectory() as tmp:
        runner = full_runner(tmp)
        result, _ = runner.run_suite("sweep_hidden")
        medians = result.table.groupby(["protocol", "w_H"])["theta_loss_final"].median()
        low, mid = medians["low"], medians["mid"]
        assert spearman_rho(low.index, low.values) <= 0.0
        assert mid.min() > low.min()

        gap, _ = runner.run_suite("learnability_gap")
        rows = gap.table.set_index("m_index")
        assert bool(rows.loc[1, "learnable"])
        assert not bool(rows.loc[32, "learnable"])
    print("✅ Capacity trend and learnability gap")


def test_full_generalization_hole():
    """Full-domain errors stay flat; holed errors rise inside the gap and grow toward its center."""
    if not FULL_TESTS:
        print("ℹ️ Skipped (set LEARNABILITY_FULL_TESTS=1)")
        return
    with tempfile.TemporaryDirectory() as tmp:
        result, _ = full_runner(tmp).run_suite("generalization_hole")
        full = result.table[result.table["domain_tag"] == "full"]["theta_loss"]
        assert full.max() <= 100.0 * full.min()

        holed = result.table[result.table["domain_tag"] == "holed"]
        hole = (holed["J1"] > -1.0) & (holed["J1"] < 0.5)
        assert holed.loc[hole, "theta_loss"].mean() > holed.loc[~hole, "theta_loss"].mean()
        edge = hole & ((holed["J1"] - -1.0 <= 0.1 + 1e-9) | (0.5 - holed["J1"] <= 0.1 + 1e-9))
        center = holed.loc[(holed["J1"] - -0.25).abs().idxmin(), "theta_loss"]
        assert holed.loc[edge, "theta_loss"].mean() < center
    print("✅ Generalization hole")


def test_full_supervised_and_two_param():
    """Supervised training converges; joint inference ends above the single-coupling run."""
    if not FULL_TESTS:
        print("ℹ️ Skipped (set LEARNABILITY_FULL_TESTS=1)")
        return
    with tempfile.TemporaryDirectory() as tmp:
        runner = full_runner(tmp)
        result, _ = runner.run_suite("supervised")
        for record in result.runs:
            assert loss_decreased(record.history, "val_theta")

        result, _ = runner.run_suite("two_param")
        for record in result.runs:
            if len(record.run.free) == 2:
                assert loss_decreased(record.history, "train_rayleigh")
        losses = result.table.groupby(["M", "Theta"])["theta_loss_final"].median()
        for M in result.table["M"].unique():
            assert losses[(M, 2)] > losses[(M, 1)]
    print("✅ Supervised and two-parameter variants")


def main():
    """Main entry point for the test script."""
    # Set up logger
    setup_logger()

    print("Starting tests for the eigenstate learnability lab (training and experiments)...")
    print(f"Using configuration file: {CONFIG_PATH}")
    if not FULL_TESTS:
        print("Trend reproductions are skipped; set LEARNABILITY_FULL_TESTS=1 to run them.")

    tests = [value for name, value in globals().items() if name.startswith("test_") and callable(value)]
    results = {}
    for test in tests:
        print(f"\n=== {test.__doc__.strip()} ===")
        try:
            test()
            results[test.__name__] = True
        except Exception as e:
            print(f"❌ {test.__name__} failed: {type(e).__name__}: {str(e)}")
            results[test.__name__] = False

    # Print summary
    print("\n=== Test Summary ===")
    for name, passed in results.items():
        print(f"{name}: {'✅ Passed' if passed else '❌ Failed'}")

    # Overall result
    if all(results.values()):
        print("\n✅ All tests passed!")
        return 0
    else:
        print("\n❌ Some tests failed.")
        return 1


if __name__ == "__main__":
    sys.exit(main())
