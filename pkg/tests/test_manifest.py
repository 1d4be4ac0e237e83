"""Tests for polylab.manifest (JSONL rows, CSV summaries, run manifests)."""

from __future__ import annotations

import csv
import json

import pytest

from polylab import __version__
from polylab.manifest import (
    DATA_SCHEMA_VERSION,
    JsonlWriter,
    RunManifest,
    canonical_json,
    sha256_file,
    sha256_text,
    write_csv,
)
from polylab.options import ExperimentConfig


class TestCanonicalJson:
    def test_sorted_and_compact(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_hash_matches_file(self, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("polymer", encoding="utf-8")
        assert sha256_file(path) == sha256_text("polymer")


class TestJsonlWriter:
    def test_rows_are_stamped(self, tmp_path):
        path = tmp_path / "nested" / "data.jsonl"
        with JsonlWriter(path, config_hash="abc", seed=7) as rows:
            rows.write({"log_z": 1.5}, replica_id=0)
            rows.write_all([{"log_z": 2.0}, {"log_z": 2.5}], replica_id=1)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert rows.count == 3
        first = json.loads(lines[0])
        assert first == {
            "schema": DATA_SCHEMA_VERSION,
            "config_hash": "abc",
            "replica_id": 0,
            "seed": 7,
            "log_z": 1.5,
        }
        assert [json.loads(line)["replica_id"] for line in lines] == [0, 1, 1]

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a.jsonl", "b.jsonl"):
            with JsonlWriter(tmp_path / name, config_hash="h", seed=None) as rows:
                rows.write({"z": 1, "a": [0.1, 0.2]})
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_write_when_closed(self, tmp_path):
        writer = JsonlWriter(tmp_path / "data.jsonl", config_hash="h", seed=1)
        with pytest.raises(RuntimeError, match="not open"):
            writer.write({"x": 1})


class TestWriteCsv:
    def test_first_seen_columns(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_csv(path, [{"beta": 0.5, "p_hat": 0.1}, {"beta": 1.0, "gap": -0.2}])
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["beta", "p_hat", "gap"]
        assert rows[1] == {"beta": "1.0", "p_hat": "", "gap": "-0.2"}

    def test_explicit_columns(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_csv(path, [{"a": 1, "b": 2}], fieldnames=["b"])
        assert path.read_text(encoding="utf-8") == "b\n2\n"


class TestRunManifest:
    def _config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict({"command": "simulate", "spec": "gauss", "beta": 1.0, "n": 5, "seed": 3})

    def test_build_write_read(self, tmp_path):
        (tmp_path / "data.jsonl").write_text("{}\n", encoding="utf-8")
        (tmp_path / "summary.csv").write_text("a\n1\n", encoding="utf-8")
        config = self._config()
        manifest = RunManifest.build(tmp_path, config, wall_time=1.23456)
        assert manifest.command == "simulate"
        assert manifest.config_hash == config.config_hash()
        assert manifest.tool_version == __version__
        assert manifest.wall_time == 1.235
        assert sorted(manifest.files) == ["data.jsonl", "summary.csv"]

        manifest.write(tmp_path / "manifest.json")
        loaded = RunManifest.read(tmp_path / "manifest.json")
        assert loaded == manifest
        assert loaded.verify(tmp_path) == []

    def test_manifest_not_listed(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{}", encoding="utf-8")
        (tmp_path / "data.jsonl").write_text("", encoding="utf-8")
        manifest = RunManifest.build(tmp_path, self._config(), wall_time=0.0)
        assert list(manifest.files) == ["data.jsonl"]

    def test_verify_detects_changes(self, tmp_path):
        (tmp_path / "data.jsonl").write_text("{}\n", encoding="utf-8")
        (tmp_path / "summary.csv").write_text("a\n", encoding="utf-8")
        manifest = RunManifest.build(tmp_path, self._config(), wall_time=0.0)
        (tmp_path / "data.jsonl").write_text("{}\n{}\n", encoding="utf-8")
        (tmp_path / "summary.csv").unlink()
        assert sorted(manifest.verify(tmp_path)) == ["data.jsonl", "summary.csv"]
