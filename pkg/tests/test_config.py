"""Configuration loading: file parsing, env overrides, validation."""

import pytest

from depaudit.config import Config, ConfigError, ROUTING_KEYS, load_config

FULL_TOML = """\
store_path = "state/audit.db"
out_dir = "state/reports"
shared_sbom_dir = "state/sboms"

[feeds]
dir = "mirror"
years = [2015, 2023]

[matcher]
remote_index_url = "https://index.example.test/api"
requests_per_minute = 10
cache_ttl_seconds = 3600

[generator]
timeout_seconds = 45.5

[generator.adapters]
npm = ["cyclonedx-npm", "--output-reproducible"]

[daemon]
interval_seconds = 120
liveness_port = 9901
max_retries = 5

[workers]
"sbom.generate" = 4
"components.analyze" = 2
"""


class TestDefaults:
    def test_every_routing_key_gets_a_pool(self):
        cfg = Config()
        assert set(cfg.workers) == set(ROUTING_KEYS)
        assert all(n == 1 for n in cfg.workers.values())

    def test_no_feed_source_by_default(self):
        cfg = Config()
        assert cfg.feed_dir is None
        assert cfg.feed_url is None
        assert cfg.remote_index_url is None

    def test_load_without_any_file_is_defaults(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert load_config(env={}) == Config()


class TestFileParsing:
    def test_full_file_round_trip(self, tmp_path):
        path = tmp_path / "depaudit.toml"
        path.write_text(FULL_TOML)
        cfg = load_config(path, env={})
        assert cfg.store_path == "state/audit.db"
        assert cfg.out_dir == "state/reports"
        assert cfg.shared_sbom_dir == "state/sboms"
        assert cfg.feed_dir == "mirror"
        assert cfg.nvd_years == (2015, 2023)
        assert cfg.remote_index_url == "https://index.example.test/api"
        assert cfg.requests_per_minute == 10.0
        assert cfg.cache_ttl_seconds == 3600
        assert cfg.generator_timeout == 45.5
        assert cfg.adapters == {"npm": ["cyclonedx-npm", "--output-reproducible"]}
        assert cfg.daemon_interval == 120.0
        assert cfg.liveness_port == 9901
        assert cfg.max_retries == 5

    def test_partial_workers_table_fills_missing_keys(self, tmp_path):
        path = tmp_path / "depaudit.toml"
        path.write_text(FULL_TOML)
        cfg = load_config(path, env={})
        assert cfg.workers["sbom.generate"] == 4
        assert cfg.workers["components.analyze"] == 2
        assert cfg.workers["repo.mine"] == 1
        assert cfg.workers["feeds.sync"] == 1

    def test_default_filename_in_cwd_is_picked_up(self, tmp_path, monkeypatch):
        (tmp_path / "depaudit.toml").write_text('store_path = "here.db"\n')
        monkeypatch.chdir(tmp_path)
        assert load_config(env={}).store_path == "here.db"

    def test_explicit_missing_path_is_an_error(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.toml", env={})

    def test_env_named_config_must_exist(self, tmp_path):
        env = {"DEPAUDIT_CONFIG": str(tmp_path / "ghost.toml")}
        with pytest.raises(ConfigError, match="not found"):
            load_config(env=env)

    def test_env_named_config_is_used(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        named = tmp_path / "elsewhere.toml"
        named.write_text('out_dir = "named"\n')
        cfg = load_config(env={"DEPAUDIT_CONFIG": str(named)})
        assert cfg.out_dir == "named"

    def test_broken_toml_is_a_config_error(self, tmp_path):
        path = tmp_path / "depaudit.toml"
        path.write_text("store_path = [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path, env={})


class TestEnvOverrides:
    def test_env_beats_file(self, tmp_path):
        path = tmp_path / "depaudit.toml"
        path.write_text(FULL_TOML)
        env = {"DEPAUDIT_STORE_PATH": "/var/lib/audit.db",
               "DEPAUDIT_REQUESTS_PER_MINUTE": "2.5"}
        cfg = load_config(path, env=env)
        assert cfg.store_path == "/var/lib/audit.db"
        assert cfg.requests_per_minute == 2.5
        # the rest still comes from the file
        assert cfg.out_dir == "state/reports"

    def test_env_alone_over_defaults(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = load_config(env={"DEPAUDIT_MAX_RETRIES": "7",
                               "DEPAUDIT_FEED_DIR": "feeds"})
        assert cfg.max_retries == 7
        assert cfg.feed_dir == "feeds"

    def test_uncastable_override_is_rejected(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        with pytest.raises(ConfigError, match="DEPAUDIT_CACHE_TTL_SECONDS"):
            load_config(env={"DEPAUDIT_CACHE_TTL_SECONDS": "soon"})


class TestValidation:
    @pytest.mark.parametrize("kwargs", [
        {"requests_per_minute": 0},
        {"requests_per_minute": -1},
        {"generator_timeout": 0},
        {"daemon_interval": -5},
        {"max_retries": 0},
        {"cache_ttl_seconds": -1},
        {"nvd_years": (2023, 2002)},
        {"workers": {"repo.mine": 0}},
        {"workers": {"made.up": 1}},
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            Config(**kwargs)

    def test_years_list_must_be_a_pair(self, tmp_path):
        path = tmp_path / "depaudit.toml"
        path.write_text("[feeds]\nyears = [2020]\n")
        with pytest.raises(ConfigError, match="years"):
            load_config(path, env={})

    def test_adapter_argv_must_be_strings(self, tmp_path):
        path = tmp_path / "depaudit.toml"
        path.write_text("[generator.adapters]\nnpm = [1, 2]\n")
        with pytest.raises(ConfigError, match="adapters"):
            load_config(path, env={})
