"""Command-line behavior: exit codes, output lines, file side effects."""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import pytest

from depaudit.cli import main
from depaudit.store import Store

from gitfixtures import commit, init_repo
from test_pipeline import (
    GO_MAIN,
    GO_MOD_FIXED,
    GO_MOD_VULNERABLE,
    PROMHTTP_ADVISORY,
    _write_feeds,
)


def _write_config(base: Path, feeds: bool = False) -> Path:
    lines = [
        f'store_path = "{base / "audit.db"}"',
        f'out_dir = "{base / "reports"}"',
        f'shared_sbom_dir = "{base / "sboms"}"',
    ]
    if feeds:
        lines += ["", "[feeds]", f'dir = "{base / "feeds"}"',
                  "years = [2022, 2022]"]
    path = base / "depaudit.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def go_repo(tmp_path):
    repo = init_repo(tmp_path / "webapp")
    commit(repo, {"go.mod": GO_MOD_VULNERABLE, "main.go": GO_MAIN},
           "first cut", date="2021-06-01T12:00:00Z", tag="v0.1.0")
    commit(repo, {"go.mod": GO_MOD_FIXED},
           "bump client_golang", date="2022-06-01T12:00:00Z", tag="v0.2.0")
    return repo


class TestUsage:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert capsys.readouterr().out.startswith("depaudit ")

    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["scan", "--frobnicate", "x"])
        assert excinfo.value.code == 2

    def test_unknown_report_kind_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["report", "heatmap"])
        assert excinfo.value.code == 2

    def test_missing_config_file_is_fatal(self, tmp_path, capsys):
        code = main(["--config", str(tmp_path / "ghost.toml"),
                     "deadletter", "list"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestFeedsSync:
    def test_no_source_configured_is_fatal(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "feeds", "sync"]) == 2
        assert "no feed source" in capsys.readouterr().err

    def test_sync_prints_per_feed_counts(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, feeds=True)
        _write_feeds(tmp_path / "feeds", [PROMHTTP_ADVISORY])
        assert main(["--config", str(cfg), "feeds", "sync"]) == 0
        out = capsys.readouterr().out
        assert "feed=nvd-2022 ingested=1" in out
        assert "feed=epss ingested=1" in out
        assert "unmatched_cpes=" in out

    def test_resync_skips_then_force_reingests(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, feeds=True)
        _write_feeds(tmp_path / "feeds", [PROMHTTP_ADVISORY])
        main(["--config", str(cfg), "feeds", "sync"])
        capsys.readouterr()

        main(["--config", str(cfg), "feeds", "sync"])
        assert "feed=nvd-2022 ingested=0 replaced=0 rejected=0 skipped=true" \
            in capsys.readouterr().out

        main(["--config", str(cfg), "feeds", "sync", "--force"])
        assert "feed=nvd-2022 ingested=1" in capsys.readouterr().out


class TestRepoAdd:
    def test_add_prints_release_counts(self, tmp_path, go_repo, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "repo", "add", str(go_repo)]) == 0
        assert "repo=webapp releases_found=2 new=2" in capsys.readouterr().out

    def test_add_rejects_tagless_repo(self, tmp_path, capsys):
        repo = init_repo(tmp_path / "untagged")
        commit(repo, {"README.md": "wip"}, "init",
               date="2021-01-01T00:00:00Z")
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "repo", "add", str(repo)]) == 0
        assert "rejected=REJECTED_NO_RELEASES" in capsys.readouterr().out


class TestScan:
    def test_go_fixture_scan_exits_zero(self, tmp_path, go_repo, capsys):
        cfg = _write_config(tmp_path, feeds=True)
        _write_feeds(tmp_path / "feeds", [PROMHTTP_ADVISORY])
        main(["--config", str(cfg), "feeds", "sync"])
        capsys.readouterr()
        assert main(["--config", str(cfg), "scan", str(go_repo)]) == 0
        out = capsys.readouterr().out
        assert "repo=webapp releases=2 done=2 failed=0" in out

        reports = tmp_path / "reports"
        scan_doc = json.loads((reports / "webapp" / "scan.json").read_text())
        by_tag = {r["tag"]: r for r in scan_doc["releases"]}
        assert by_tag["v0.1.0"]["vulnerabilities_all_time"] == 1
        assert by_tag["v0.1.0"]["vulnerabilities_known_at"] == 0
        assert by_tag["v0.2.0"]["vulnerabilities_all_time"] == 0

        meta = json.loads((reports / "run_meta.json").read_text())
        assert meta["command"] == "scan"
        stamp = datetime.fromisoformat(meta["generated_at"])
        assert stamp.tzinfo is not None
        # the report files themselves carry no wall-clock state
        assert "generated_at" not in scan_doc

    def test_partial_failure_exits_one(self, tmp_path, capsys):
        repo = init_repo(tmp_path / "mixed")
        commit(repo, {"go.mod": GO_MOD_VULNERABLE, "main.go": GO_MAIN},
               "app", date="2022-01-01T00:00:00Z", tag="v1")
        commit(repo, {"go.mod": None, "main.go": None, "README.md": "docs"},
               "strip sources", date="2022-02-01T00:00:00Z", tag="v2")
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "scan", str(repo)]) == 1
        assert "done=1 failed=1" in capsys.readouterr().out

    def test_rejected_repo_exits_zero(self, tmp_path, capsys):
        repo = init_repo(tmp_path / "untagged")
        commit(repo, {"README.md": "wip"}, "init",
               date="2021-01-01T00:00:00Z")
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "scan", str(repo)]) == 0
        assert "rejected" in capsys.readouterr().out

    def test_unknown_locator_is_fatal(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "scan", "no-such-repo"]) == 2
        assert "error:" in capsys.readouterr().err


class TestReport:
    def test_persistence_on_empty_store_exits_zero(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "report", "persistence"]) == 0
        out_lines = capsys.readouterr().out.splitlines()
        assert len(out_lines) == 2  # json and csv paths
        doc = json.loads((tmp_path / "reports" / "all" / "persistence.json")
                         .read_text())
        assert doc["records"] == []

    def test_release_report_needs_tag_and_repo(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "report", "release"]) == 2
        assert "needs a tag and --repo" in capsys.readouterr().err

    def test_release_report_for_missing_release_is_fatal(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        code = main(["--config", str(cfg), "report", "release", "v9",
                     "--repo", "ghost"])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_release_report_after_scan(self, tmp_path, go_repo, capsys):
        cfg = _write_config(tmp_path, feeds=True)
        _write_feeds(tmp_path / "feeds", [PROMHTTP_ADVISORY])
        main(["--config", str(cfg), "feeds", "sync"])
        main(["--config", str(cfg), "scan", str(go_repo)])
        capsys.readouterr()
        code = main(["--config", str(cfg), "report", "release", "v0.1.0",
                     "--repo", "webapp"])
        assert code == 0
        doc = json.loads(
            (tmp_path / "reports" / "webapp" / "release-v0.1.0.json")
            .read_text())
        assert doc["component_count"] == 1
        assert [m["cve_id"] for m in doc["matches"]] == ["CVE-2022-21698"]

    def test_timeline_granularity_year(self, tmp_path, go_repo, capsys):
        cfg = _write_config(tmp_path)
        main(["--config", str(cfg), "scan", str(go_repo)])
        capsys.readouterr()
        code = main(["--config", str(cfg), "report", "timeline",
                     "--granularity", "year"])
        assert code == 0
        doc = json.loads((tmp_path / "reports" / "all" / "timeline.json")
                         .read_text())
        assert doc["granularity"] == "year"
        periods = [row["period"] for row in doc["languages"]["Go"]]
        assert periods == ["2021", "2022"]

    def test_env_override_redirects_output(self, tmp_path, go_repo,
                                           monkeypatch, capsys):
        cfg = _write_config(tmp_path)
        elsewhere = tmp_path / "elsewhere"
        monkeypatch.setenv("DEPAUDIT_OUT_DIR", str(elsewhere))
        assert main(["--config", str(cfg), "report", "depth"]) == 0
        assert (elsewhere / "all" / "depth.json").is_file()
        assert not (tmp_path / "reports").exists()


class TestDaemonOnce:
    def test_single_tick_and_exit(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "daemon", "run", "--once"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("tick complete last_tick=")
        stamp = out.split("last_tick=", 1)[1].strip()
        assert datetime.fromisoformat(stamp).tzinfo is not None


class TestDeadLetters:
    def test_list_when_empty(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "deadletter", "list"]) == 0
        assert "no dead letters" in capsys.readouterr().out

    def test_retry_missing_letter_is_fatal(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--config", str(cfg), "deadletter", "retry", "41"]) == 2
        assert "no dead letter 41" in capsys.readouterr().err

    def test_retry_succeeds_and_removes_letter(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        store = Store(tmp_path / "audit.db")
        letter_id = store.add_dead_letter(
            "components.analyze", {}, 3, "RuntimeError: transient",
            datetime(2023, 1, 1, tzinfo=timezone.utc))
        store.close()
        assert main(["--config", str(cfg), "deadletter", "retry",
                     str(letter_id)]) == 0
        assert "outcome=done" in capsys.readouterr().out
        assert Store(tmp_path / "audit.db").list_dead_letters() == []

    def test_retry_that_fails_again_is_reparked(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        store = Store(tmp_path / "audit.db")
        letter_id = store.add_dead_letter(
            "sbom.generate", {"repo_id": "ghost", "tag": "v1"}, 3,
            "PipelineError: no repository ghost",
            datetime(2023, 1, 1, tzinfo=timezone.utc))
        store.close()
        assert main(["--config", str(cfg), "deadletter", "retry",
                     str(letter_id)]) == 1
        assert "outcome=dead-lettered again" in capsys.readouterr().out
        letters = Store(tmp_path / "audit.db").list_dead_letters()
        assert len(letters) == 1
        assert letters[0]["routing_key"] == "sbom.generate"
        assert letters[0]["id"] != letter_id

    def test_list_shows_parked_letter(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        store = Store(tmp_path / "audit.db")
        store.add_dead_letter(
            "repo.mine", {"path": "/gone"}, 3, "MiningError: vanished",
            datetime(2023, 1, 1, tzinfo=timezone.utc))
        store.close()
        assert main(["--config", str(cfg), "deadletter", "list"]) == 0
        out = capsys.readouterr().out
        assert "key=repo.mine" in out
        assert "attempts=3" in out


class TestExport:
    def test_export_all_tables(self, tmp_path, go_repo, capsys):
        cfg = _write_config(tmp_path)
        main(["--config", str(cfg), "scan", str(go_repo)])
        capsys.readouterr()
        assert main(["--config", str(cfg), "export"]) == 0
        out = capsys.readouterr().out
        export_dir = tmp_path / "reports" / "export"
        assert (export_dir / "releases.csv").is_file()
        assert "releases: 2 rows" in out
        # one component purl per distinct client_golang version
        assert "components: 2 rows" in out

    def test_export_single_table_elsewhere(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        target = tmp_path / "dump"
        code = main(["--config", str(cfg), "export", "--out", str(target),
                     "--table", "repos"])
        assert code == 0
        assert sorted(p.name for p in target.iterdir()) == ["repos.csv"]

    def test_export_unknown_table_is_fatal(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        code = main(["--config", str(cfg), "export", "--table", "secrets"])
        assert code == 2
        assert "error:" in capsys.readouterr().err
