from pathlib import Path

import pytest
import yaml

from mflab.config import ConfigError, instance_constants, load_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def load_default_raw():
    return yaml.safe_load((CONFIG_DIR / "default.yaml").read_text())


def write_config(tmp_path, raw):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestLoading:
    def test_shipped_configs_load(self):
        for name in ("default.yaml", "quick.yaml"):
            rc = load_config(CONFIG_DIR / name)
            assert rc.space().J >= 2
            assert len(rc.family()) >= 1

    def test_hash_stable_under_key_order(self, tmp_path):
        raw = load_default_raw()
        rc1 = load_config(write_config(tmp_path, raw))
        reordered = dict(reversed(list(raw.items())))
        rc2 = load_config(write_config(tmp_path, reordered))
        assert rc1.config_hash() == rc2.config_hash()

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.yaml")


class TestStrictness:
    def test_unknown_top_key(self, tmp_path):
        raw = load_default_raw()
        raw["extra_section"] = {}
        with pytest.raises(ConfigError, match="config.extra_section"):
            load_config(write_config(tmp_path, raw))

    def test_unknown_nested_key_names_path(self, tmp_path):
        raw = load_default_raw()
        raw["sim"]["dt_max"] = 0.1
        with pytest.raises(ConfigError, match="sim.dt_max"):
            load_config(write_config(tmp_path, raw))

    def test_wrong_type_rejected(self, tmp_path):
        raw = load_default_raw()
        raw["space"]["J"] = "thirty-two"
        with pytest.raises(ConfigError, match="space.J"):
            load_config(write_config(tmp_path, raw))

    def test_missing_section(self, tmp_path):
        raw = load_default_raw()
        del raw["controls"]
        with pytest.raises(ConfigError, match="controls"):
            load_config(write_config(tmp_path, raw))

    def test_duplicate_experiment_names(self, tmp_path):
        raw = load_default_raw()
        raw["experiments"] = [
            {"kind": "moments", "name": "m"},
            {"kind": "moments", "name": "m"},
        ]
        with pytest.raises(ConfigError, match="duplicate"):
            load_config(write_config(tmp_path, raw))

    def test_unknown_experiment_kind(self, tmp_path):
        raw = load_default_raw()
        raw["experiments"] = [{"kind": "teleport"}]
        with pytest.raises(ConfigError, match="teleport"):
            load_config(write_config(tmp_path, raw))


class TestConstraints:
    def test_invalid_eta_named(self, tmp_path):
        raw = load_default_raw()
        raw["constants"]["eta"] = 1.0
        with pytest.raises(ConfigError, match="eta"):
            load_config(write_config(tmp_path, raw))

    def test_alpha_q_mismatch(self, tmp_path):
        raw = load_default_raw()
        raw["constants"]["alpha"] = 4.0
        with pytest.raises(ConfigError, match="alpha must equal q"):
            load_config(write_config(tmp_path, raw))

    def test_control_action_out_of_range(self, tmp_path):
        raw = load_default_raw()
        raw["controls"][0]["action"] = 9
        with pytest.raises(ConfigError, match="outside"):
            load_config(write_config(tmp_path, raw))

    def test_tau_too_small(self, tmp_path):
        raw = load_default_raw()
        raw["coefficients"]["tau"] = 0.4
        with pytest.raises(ConfigError, match="tau"):
            load_config(write_config(tmp_path, raw))


class TestBuilders:
    def test_instance_constants_chain(self):
        for q in (2.0, 3.0, 4.0, 7.0):
            c = instance_constants(q, 0.25, 30.0)
            c.validate()
            assert c.alpha == q
            assert c.gamma == pytest.approx(q / (q - 1.0))

    def test_space_for_other_exponent(self):
        rc = load_config(CONFIG_DIR / "default.yaml")
        sp2 = rc.space_for(2.0, J=64)
        assert sp2.q == 2.0 and sp2.J == 64
        assert sp2.constants.lam == 5.0  # frozen table value

    def test_initial_state_kinds(self):
        rc = load_config(CONFIG_DIR / "default.yaml")
        space = rc.space()
        x = rc.initial_state(space)
        assert abs(x.values[space.J // 2]) > 0.1
        rc.raw["initial_state"] = {"kind": "bump", "amplitude": 0.4, "center": 0.5, "width": 0.1}
        bump = rc.initial_state(space)
        assert bump.values.argmax() in (space.J // 2 - 1, space.J // 2, space.J // 2 + 1)

    def test_sim_config_overrides(self):
        rc = load_config(CONFIG_DIR / "default.yaml")
        cfg = rc.sim_config(n_particles=5, save_every=4)
        assert cfg.n_particles == 5 and cfg.save_every == 4
        assert cfg.rng_seed == rc.master_seed
