import json
from pathlib import Path

import numpy as np
import pytest

from genmala.agdp import save_model
from genmala.architectures import random_augmented_fc
from genmala.arrayio import load_array
from genmala.cli import main
from genmala.report import read_metrics


@pytest.fixture(scope="module")
def prior_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "prior.agdp"
    save_model(random_augmented_fc(12, [24], 64, scale_cap=0.5, seed=0), path)
    return path


def _config(prior_file, method="mala", **overrides):
    cfg = {
        "modality": "phase_retrieval",
        "seed": 7,
        "method": method,
        "forward": {"k": 64, "m_over_k": 0.4, "sigma_a_sq": 2.0, "matrix_seed": 1},
        "noise": {"kind": "poisson", "alpha": 0.4875},
        "ground_truth": {"source": "model"},
        "prior": {"weights": str(prior_file)},
        "sampler": {"step": 3e-4, "burn_in": 300, "samples": 600, "seed": 2},
        "init": {"source": "tikhonov", "tau_reg": 1e-3, "step": 1e-4,
                 "latent_iters": 150, "restarts": 4},
        "baseline": {"solver": "tv", "tau_reg": 0.5, "max_iters": 80, "step": 1e-4},
    }
    cfg.update(overrides)
    return cfg


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_then_mala_reconstruct(tmp_path, prior_file):
    cfg_path = _write(tmp_path, _config(prior_file))
    out = tmp_path / "exp"
    assert main(["simulate", "--config", str(cfg_path), "--output", str(out)]) == 0
    meas = out / "measurements"
    assert (meas / "y.arr").exists()
    assert (meas / "ground_truth.arr").exists()
    assert (meas / "manifest.json").exists()
    y = load_array(meas / "y.arr")
    assert y.dtype == np.int64 and np.all(y >= 0)

    assert main(["reconstruct", "--config", str(cfg_path), "--output", str(out)]) == 0
    rec = out / "reconstruction"
    metrics = read_metrics(rec / "metrics.txt")
    assert "acceptance_rate" in metrics
    assert float(metrics["mse_posterior_mean"]) > 0
    for name in ["mean.arr", "std.arr", "s_init.arr", "chain_latents.arr"]:
        assert (rec / name).exists()
    assert (rec / "figures" / "reconstruction.png").exists()
    assert (rec / "figures" / "trace.png").exists()
    manifest = json.loads((rec / "manifest.json").read_text())
    assert manifest["config_hash"]
    assert "mean.arr" in manifest["artifacts"]


def test_baseline_reconstruct_and_grid(tmp_path, prior_file):
    cfg = _config(prior_file, method="baseline")
    cfg["baseline"]["grid"] = [0.1, 1.0, 10.0]
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "exp"
    assert main(["simulate", "--config", str(cfg_path), "--output", str(out)]) == 0
    assert main(["grid-search", "--config", str(cfg_path), "--output", str(out)]) == 0
    rec = out / "reconstruction"
    assert (rec / "recon.arr").exists()
    csv_text = (rec / "grid_mse.csv").read_text().splitlines()
    assert csv_text[0] == "tau_reg,mse,iterations,final_objective"
    assert len(csv_text) == 4
    assert (rec / "figures" / "grid_mse.png").exists()


def test_simulate_deterministic_bytes(tmp_path, prior_file):
    cfg_path = _write(tmp_path, _config(prior_file))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["simulate", "--config", str(cfg_path), "--output", str(out)]) == 0
    for name in ["y.arr", "ground_truth.arr", "manifest.json"]:
        assert (out1 / "measurements" / name).read_bytes() == \
            (out2 / "measurements" / name).read_bytes()


def test_reconstruct_without_measurements_is_config_error(tmp_path, prior_file):
    cfg_path = _write(tmp_path, _config(prior_file))
    code = main(["reconstruct", "--config", str(cfg_path),
                 "--output", str(tmp_path / "empty")])
    assert code == 2


def test_missing_weight_file_fails_fast(tmp_path, prior_file):
    cfg = _config(prior_file)
    cfg["prior"]["weights"] = str(tmp_path / "nope.agdp")
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "exp"
    assert main(["simulate", "--config", str(_write(tmp_path, _config(prior_file),
                                                    "sim.json")),
                 "--output", str(out)]) == 0
    assert main(["reconstruct", "--config", str(cfg_path), "--output", str(out)]) == 4


def test_unknown_config_key_exit_code(tmp_path, prior_file):
    cfg = _config(prior_file)
    cfg["surprise"] = True
    cfg_path = _write(tmp_path, cfg)
    assert main(["simulate", "--config", str(cfg_path),
                 "--output", str(tmp_path / "x")]) == 2


def test_adjoint_test_subcommand(tmp_path, prior_file, capsys):
    cfg_path = _write(tmp_path, _config(prior_file))
    assert main(["adjoint-test", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "adjoint_defect_forward=" in out
    assert "adjoint_defect_prior=" in out
    assert "adjoint_defect_composition=" in out


def test_init_latent_subcommand(tmp_path, prior_file):
    cfg_path = _write(tmp_path, _config(prior_file))
    out = tmp_path / "exp"
    assert main(["simulate", "--config", str(cfg_path), "--output", str(out)]) == 0
    assert main(["init-latent", "--config", str(cfg_path), "--output", str(out)]) == 0
    z = load_array(out / "init" / "z_init.arr")
    assert z.shape == (13,)


def test_model_info_subcommand(prior_file, capsys):
    assert main(["model-info", str(prior_file)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["latent_dim"] == 12
    assert info["augmented"] is True


def test_odt_simulate_and_tv(tmp_path):
    cfg = {
        "modality": "odt",
        "seed": 3,
        "method": "baseline",
        "forward": {"nx": 12, "nz": 12, "dx": 0.1, "dz": 0.1, "n_b": 1.52,
                    "lambda0": 0.406, "q": 3, "theta": 0.2617993877991494},
        "noise": {"kind": "gaussian", "sigma_sq": 0.05},
        "ground_truth": {"source": "disc", "size": 12},
        "baseline": {"solver": "tv", "tau_reg": 1e-3, "max_iters": 60, "step": 1e-3},
        "init": {"source": "zeros"},
    }
    cfg_path = _write(tmp_path, cfg)
    out = tmp_path / "odt"
    assert main(["simulate", "--config", str(cfg_path), "--output", str(out)]) == 0
    y = load_array(out / "measurements" / "y.arr")
    assert y.dtype == np.complex128 and y.shape == (36,)
    assert main(["reconstruct", "--config", str(cfg_path), "--output", str(out)]) == 0
    metrics = read_metrics(out / "reconstruction" / "metrics.txt")
    assert metrics["method"] == "baseline:tv"
