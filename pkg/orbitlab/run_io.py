"""Run directory output: atomic file writes and the run manifest.

Every file goes to a temporary sibling first and is renamed into place, so a
failing stage never leaves a half-written result behind.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
import time
from collections.abc import Iterable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

from . import __version__

MANIFEST = "manifest.json"
REPORT = "report.json"


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def _cell(value: Any) -> Any:
    # repr keeps every float bit; csv would otherwise call str().
    return repr(value) if isinstance(value, float) else value


@dataclass
class RunManifest:
    command: str
    config_hash: str
    config: dict
    version: str = __version__
    tolerances: dict = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    status: str = "ok"
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "config_hash": self.config_hash,
            "status": self.status,
            "tolerances": self.tolerances,
            "timings": self.timings,
            "files": sorted(self.files),
            "summary": self.summary,
            "config": self.config,
        }


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST
    with open(path, encoding="utf-8") as f:
        return json.load(f)


class RunWriter:
    """Serialized writer for one run directory."""

    def __init__(self, out_dir: str | Path) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self._timers: dict[str, float] = {}

    @contextmanager
    def open(self, name: str) -> Iterator[IO[str]]:
        target = self.out_dir / name
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=self.out_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                yield f
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if name not in self.files:
            self.files.append(name)

    def write_json(self, name: str, data: Any) -> Path:
        with self.open(name) as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")
        return self.out_dir / name

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        with self.open(name) as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return self.out_dir / name

    @contextmanager
    def stage(self, name: str, timings: dict[str, float]) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            timings[name] = round(time.perf_counter() - start, 6)

    def write_manifest(self, manifest: RunManifest) -> Path:
        manifest.files = [f for f in self.files if f != MANIFEST]
        return self.write_json(MANIFEST, manifest.to_dict())
