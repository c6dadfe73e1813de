import json
import os

import pytest
import yaml

from crmlab_core.config_loader import DEFAULT_CONFIG, default_config, load_config, merge_config, thread_limit
from crmlab_core.errors import ConfigError


def test_defaults_without_file():
    config = load_config()
    assert config["scenario"]["family"] == "crm-scalar"
    assert config["integrator"]["method"] == "rk45"
    assert config["reference"]["ell"] == -100.0


def test_default_config_is_a_copy():
    config = default_config()
    config["plant"]["k_p"] = 99.0
    assert DEFAULT_CONFIG["plant"]["k_p"] == 2.0


def _toml_dump(config):
    lines = []
    for table, values in config.items():
        lines.append(f"[{table}]")
        lines.extend(f"{key} = {json.dumps(value)}" for key, value in values.items())
    return "\n".join(lines) + "\n"


@pytest.mark.parametrize("suffix, dump", [(".yaml", yaml.safe_dump), (".json", json.dumps), (".toml", _toml_dump)])
def test_user_file_is_merged_over_defaults(tmp_path, suffix, dump):
    path = tmp_path / f"scenario{suffix}"
    path.write_text(dump({"reference": {"ell": -10.0}, "scenario": {"name": "short"}}))
    config = load_config(str(path))
    assert config["reference"]["ell"] == -10.0
    assert config["reference"]["a_m"] == -1.0
    assert config["scenario"]["name"] == "short"
    assert config["scenario"]["family"] == "crm-scalar"


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(str(path)) == load_config()


def test_user_paths_expanded(tmp_path):
    path = tmp_path / "dirs.yaml"
    path.write_text(yaml.safe_dump({"directories": {"output": "~/crm_runs"}}))
    config = load_config(str(path))
    assert not config["directories"]["output"].startswith("~")
    assert config["directories"]["failed_subdir"] == "failed"


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.yaml"))

    def test_parse_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("scenario: [unclosed\n")
        with pytest.raises(ConfigError, match="Could not parse"):
            load_config(str(path))

    def test_toml_parse_error(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[scenario\nname = \"x\"\n")
        with pytest.raises(ConfigError, match="Could not parse"):
            load_config(str(path))

    def test_unsupported_suffix(self, tmp_path):
        path = tmp_path / "scenario.ini"
        path.write_text("[scenario]\n")
        with pytest.raises(ConfigError, match="Unsupported"):
            load_config(str(path))

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(str(path))


def test_merge_does_not_mutate_inputs():
    base = default_config()
    overrides = {"adaptation": {"gamma": 1.0}}
    merged = merge_config(base, overrides)
    assert merged["adaptation"]["gamma"] == 1.0
    assert merged["adaptation"]["theta0"] == [0.0, 0.0]
    assert base["adaptation"]["gamma"] == 100.0


class TestThreadLimit:
    def test_precedence(self, monkeypatch):
        config = merge_config(default_config(), {"sweep": {"threads": 3}})
        monkeypatch.delenv("CRMLAB_THREADS", raising=False)
        assert thread_limit(config) == 3
        monkeypatch.setenv("CRMLAB_THREADS", "5")
        assert thread_limit(config) == 5
        assert thread_limit(config, cli_threads=2) == 2

    @pytest.mark.parametrize("value", [0, -1, "many"])
    def test_invalid(self, monkeypatch, value):
        monkeypatch.delenv("CRMLAB_THREADS", raising=False)
        with pytest.raises(ConfigError, match="sweep.threads"):
            thread_limit(default_config(), cli_threads=value)


@pytest.mark.parametrize("name", ["fig3", "fig5"])
def test_toml_presets_match_yaml(name):
    figures = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "figures")
    assert load_config(os.path.join(figures, f"{name}.toml")) == load_config(os.path.join(figures, f"{name}.yaml"))
