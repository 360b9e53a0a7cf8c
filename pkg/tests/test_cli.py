import json
import shutil
from pathlib import Path

import pytest
import yaml

from mflab.cli import EXIT_ASSERTION, EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, main

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def tiny_raw(output_dir, experiments=None, master_seed=7):
    """A minimal fast configuration for CLI-level tests."""
    return {
        "space": {"J": 16, "domain_length": 1.0, "q": 3.0},
        "constants": {"T": 0.25, "lam": 30.0, "alpha": 3.0, "gamma": 1.5,
                      "beta": 4.0, "eta": 2.5, "rho": 2.0},
        "coefficients": {"sigma0": 0.25, "tau": 2.0, "bump_width": 0.125,
                         "action_coords": [-1.0, 0.0, 1.0], "interaction": True,
                         "monotone_c": 1.5},
        "sim": {"n_particles": 8, "M_steps": 512, "dt_policy": "fixed",
                "base_dt": None, "noise_modes": 3, "save_every": 128,
                "cutoff_m": None, "blowup_ceiling": 1.0e6},
        "initial_state": {"kind": "sine", "amplitude": 0.4, "mode": 1},
        "controls": [
            {"name": "push_up", "kind": "dirac", "action": 2},
            {"name": "mix", "kind": "uniform"},
        ],
        "experiments": experiments if experiments is not None else [
            {"kind": "condition_check", "name": "conditions", "samples": 500,
             "adversarial": True,
             "instances": [{"q": 3.0, "lam": 30.0, "monotone_c": 1.5}]},
            {"kind": "moments", "name": "moments", "p_list": [1, 2], "n_particles": 16},
        ],
        "output_dir": str(output_dir),
        "master_seed": master_seed,
    }


def write_config(tmp_path, raw, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


class TestCheck:
    def test_valid_config(self, tmp_path, capsys):
        path = write_config(tmp_path, tiny_raw(tmp_path / "out"))
        assert main(["check", str(path)]) == EXIT_OK
        assert "config ok" in capsys.readouterr().out

    def test_invalid_constants_exit_64(self, tmp_path, capsys):
        raw = tiny_raw(tmp_path / "out")
        raw["constants"]["eta"] = 1.0
        path = write_config(tmp_path, raw)
        assert main(["check", str(path)]) == EXIT_CONFIG
        assert "eta" in capsys.readouterr().err

    def test_unknown_key_exit_64(self, tmp_path):
        raw = tiny_raw(tmp_path / "out")
        raw["sim"]["warp"] = 1
        assert main(["check", str(write_config(tmp_path, raw))]) == EXIT_CONFIG


class TestRunAndReplay:
    def test_empty_experiment_list_writes_manifest(self, tmp_path):
        out = tmp_path / "out"
        raw = tiny_raw(out, experiments=[])
        path = write_config(tmp_path, raw)
        assert main(["run", str(path)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"] == {}
        assert manifest["config_hash"]

    def test_run_replay_roundtrip_across_threads(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, tiny_raw(out))
        assert main(["run", str(path), "--threads", "1"]) == EXIT_OK
        manifest = out / "manifest.json"
        assert main(["replay", str(manifest), "--threads", "4"]) == EXIT_OK

    def test_replay_rejects_edited_config(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = write_config(tmp_path, tiny_raw(out))
        assert main(["run", str(path)]) == EXIT_OK
        raw = tiny_raw(out)
        raw["master_seed"] = 8
        write_config(tmp_path, raw)
        assert main(["replay", str(out / "manifest.json")]) == EXIT_CONFIG
        assert "hash mismatch" in capsys.readouterr().err

    def test_assertion_failure_exit_65(self, tmp_path):
        out = tmp_path / "out"
        raw = tiny_raw(out, experiments=[
            {"kind": "condition_check", "name": "bad", "samples": 500,
             "adversarial": False,
             # lam far below feasible: violations expected
             "instances": [{"q": 3.0, "lam": 1e-6, "monotone_c": 1.5}]},
        ])
        path = write_config(tmp_path, raw)
        assert main(["run", str(path)]) == EXIT_ASSERTION

    def test_blowup_exit_70(self, tmp_path, capsys):
        out = tmp_path / "out"
        raw = tiny_raw(out)
        raw["sim"]["M_steps"] = 16  # dt far outside the stability region
        raw["sim"]["save_every"] = 4
        raw["experiments"] = [{"kind": "moments", "name": "m", "p_list": [1], "n_particles": 4}]
        path = write_config(tmp_path, raw)
        assert main(["run", str(path)]) == EXIT_BLOWUP
        assert "blow-up" in capsys.readouterr().err

    def test_output_dir_override_flag(self, tmp_path):
        out = tmp_path / "configured"
        override = tmp_path / "override"
        raw = tiny_raw(out, experiments=[])
        path = write_config(tmp_path, raw)
        assert main(["run", str(path), "--output-dir", str(override)]) == EXIT_OK
        assert (override / "manifest.json").exists()
        assert not out.exists()

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        out = tmp_path / "configured"
        env_dir = tmp_path / "env"
        raw = tiny_raw(out, experiments=[])
        path = write_config(tmp_path, raw)
        monkeypatch.setenv("MFLAB_OUTPUT_DIR", str(env_dir))
        assert main(["run", str(path)]) == EXIT_OK
        assert (env_dir / "manifest.json").exists()


class TestReport:
    def test_report_requires_manifest(self, tmp_path, capsys):
        assert main(["report", str(tmp_path)]) == EXIT_CONFIG

    def test_report_renders_figures(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, tiny_raw(out))
        assert main(["run", str(path)]) == EXIT_OK
        assert main(["report", str(out)]) == EXIT_OK
        figures = list((out / "figures").glob("*.png"))
        assert figures
