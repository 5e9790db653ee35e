"""Output directory layout, run manifests and CSV/JSON writers"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from app import __version__
from app.config import settings
from app.services.evolution import SystemConfig


def _slugify_segment(value: str) -> str:
    """Create a filesystem safe slug for folders."""

    sanitized = "-".join(part for part in value.replace("\\", "/").split("/") if part)
    if not sanitized:
        sanitized = "default"
    return "".join(char if char.isalnum() or char in ("-", "_") else "-" for char in sanitized.lower())


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the clock for reproducible outputs
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.replace(microsecond=0).isoformat()


@dataclass
class RunManifest:
    """What produced an output file: config, command, parameters, tolerances and seed"""

    config_name: str
    config_digest: str
    subcommand: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    tolerances: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    config_path: Optional[str] = None
    tool_version: str = __version__
    timestamp: str = field(default_factory=_timestamp)

    @classmethod
    def create(
        cls,
        config: SystemConfig,
        subcommand: str,
        parameters: Optional[Dict[str, Any]] = None,
        tolerances: Optional[Dict[str, Any]] = None,
        seed: Optional[int] = None,
        config_path: Optional[str] = None,
    ) -> "RunManifest":
        return cls(
            config_name=config.name,
            config_digest=config.digest,
            subcommand=subcommand,
            parameters=parameters or {},
            tolerances=tolerances or {},
            seed=seed,
            config_path=config_path,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_name": self.config_name,
            "config_digest": self.config_digest,
            "config_path": self.config_path,
            "subcommand": self.subcommand,
            "parameters": self.parameters,
            "tolerances": self.tolerances,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
        }

    def header_line(self) -> str:
        return "# manifest: " + json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def read_manifest(path: Path) -> Dict[str, Any]:
    """Manifest embedded in a CSV (first line) or JSON (``manifest`` key) output"""
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith("# manifest: "):
        return json.loads(text.splitlines()[0][len("# manifest: "):])
    return json.loads(text).get("manifest", {})


class OutputLayout:
    """Manage the on-disk layout of command outputs: <root>/<config>/<file>"""

    def __init__(self, root: Optional[str] = None):
        self.root = Path(root or settings.output_dir)

    def run_dir(self, config_name: str) -> Path:
        path = self.root / _slugify_segment(config_name)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def output_path(self, manifest: RunManifest, filename: str) -> Path:
        return self.run_dir(manifest.config_name) / filename

    def write_csv(
        self,
        manifest: RunManifest,
        filename: str,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
    ) -> Path:
        """UTF-8 CSV with the manifest as a leading comment line"""
        buffer = io.StringIO()
        buffer.write(manifest.header_line() + "\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
        destination = self.output_path(manifest, filename)
        destination.write_text(buffer.getvalue(), encoding="utf-8")
        return destination

    def write_json(self, manifest: RunManifest, filename: str, payload: Dict[str, Any]) -> Path:
        document = {"manifest": manifest.to_dict(), **payload}
        destination = self.output_path(manifest, filename)
        destination.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return destination

    def write_polylines(self, manifest: RunManifest, filename: str, polylines: List[Any]) -> Path:
        """Boundary polylines as (polyline, G1, G2) point rows"""
        rows = [
            [index, repr(round(float(x), 12)), repr(round(float(y), 12))]
            for index, line in enumerate(polylines)
            for x, y in line
        ]
        return self.write_csv(manifest, filename, ["polyline", "G1", "G2"], rows)
