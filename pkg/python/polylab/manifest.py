"""Run outputs: JSONL data rows, CSV summaries and the run manifest.

Every data row carries ``config_hash``, ``replica_id`` and ``seed`` so any
number in any report can be traced back to the run that produced it. Rows
are serialized with sorted keys and fixed separators; reruns of the same
configuration therefore write byte-identical data files.

Usage::

    with JsonlWriter(out / "data.jsonl", config_hash=h, seed=7) as rows:
        rows.write({"beta": 1.0, "log_z": 3.2}, replica_id=0)
    write_csv(out / "summary.csv", summary_rows)
    RunManifest.build(out, config, wall_time=12.5).write(out / "manifest.json")
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import TracebackType
from typing import Any

logger = logging.getLogger(__name__)

__all__ = [
    "DATA_SCHEMA_VERSION",
    "JsonlWriter",
    "RunManifest",
    "canonical_json",
    "sha256_file",
    "sha256_text",
    "write_csv",
]

DATA_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


def canonical_json(obj: Any) -> str:
    """Sorted keys, no whitespace; the basis of every hash."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: Path | str) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class JsonlWriter:
    """Append-only JSONL writer stamping provenance on every row.

    Parameters
    ----------
    path:
        Output file; parent directories are created.
    config_hash:
        Hash of the configuration that produced the rows.
    seed:
        Master seed of the run.
    """

    def __init__(self, path: Path | str, *, config_hash: str, seed: int | None) -> None:
        self.path = Path(path)
        self.config_hash = config_hash
        self.seed = seed
        self.count = 0
        self._fh: Any = None

    def __enter__(self) -> JsonlWriter:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()

    def write(self, row: Mapping[str, Any], *, replica_id: int | None = None) -> None:
        if self._fh is None:
            raise RuntimeError(f"{self.path} is not open")
        stamped = {
            "schema": DATA_SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "replica_id": replica_id,
            "seed": self.seed,
            **row,
        }
        self._fh.write(canonical_json(stamped) + "\n")
        self.count += 1

    def write_all(self, rows: Iterable[Mapping[str, Any]], *, replica_id: int | None = None) -> None:
        for row in rows:
            self.write(row, replica_id=replica_id)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            logger.debug("wrote %d rows to %s", self.count, self.path)


def write_csv(
    path: Path | str, rows: Sequence[Mapping[str, Any]], fieldnames: Sequence[str] | None = None
) -> None:
    """Write ``rows`` with a header; columns default to first-seen key order."""
    path = Path(path)
    if fieldnames is None:
        names: dict[str, None] = {}
        for row in rows:
            names.update(dict.fromkeys(row))
        fieldnames = list(names)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


@dataclass
class RunManifest:
    """What ran, with which configuration, and the checksum of every output.

    ``wall_time`` varies between reruns; the data-file checksums do not.
    """

    command: str
    config_hash: str
    tool_version: str
    wall_time: float
    config: dict[str, Any] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        out_dir: Path | str,
        config: Any,
        *,
        wall_time: float,
    ) -> RunManifest:
        """Checksum every file under ``out_dir`` except an existing manifest."""
        from polylab import __version__

        out_dir = Path(out_dir)
        files = {
            p.relative_to(out_dir).as_posix(): sha256_file(p)
            for p in sorted(out_dir.rglob("*"))
            if p.is_file() and p.name != MANIFEST_NAME
        }
        return cls(
            command=config.command,
            config_hash=config.config_hash(),
            tool_version=__version__,
            wall_time=round(wall_time, 3),
            config=config.to_dict(),
            files=files,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "wall_time": self.wall_time,
            "config": self.config,
            "files": self.files,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunManifest:
        return cls(
            command=data["command"],
            config_hash=data["config_hash"],
            tool_version=data["tool_version"],
            wall_time=data["wall_time"],
            config=dict(data.get("config", {})),
            files=dict(data.get("files", {})),
        )

    def write(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: Path | str) -> RunManifest:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def verify(self, out_dir: Path | str) -> list[str]:
        """Names of listed files whose checksum no longer matches."""
        out_dir = Path(out_dir)
        return [
            name
            for name, digest in self.files.items()
            if not (out_dir / name).is_file() or sha256_file(out_dir / name) != digest
        ]
