"""Run directories: resolved config, output files and their manifest."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from pydantic import BaseModel

from selgraph.models import RunConfig

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunRegistry:
    """Tracks the files one run writes into its output directory.

    ``start`` writes the resolved config; every output is then registered via
    ``record`` (or one of the ``write_*`` helpers) and ``finalize`` writes a
    manifest mapping each file to its SHA-256 together with the config hash.
    """

    def __init__(self, out_dir: Path):
        self._out_dir = out_dir
        self._outputs: dict[str, Path] = {}
        self._config: RunConfig | None = None

    @property
    def out_dir(self) -> Path:
        return self._out_dir

    @property
    def config_hash(self) -> str:
        if self._config is None:
            raise RuntimeError("run has not been started")
        return self._config.config_hash()

    def start(self, config: RunConfig) -> Path:
        self._config = config
        self._out_dir.mkdir(parents=True, exist_ok=True)
        path = self._out_dir / CONFIG_FILE
        payload = {
            "config": config.model_dump(mode="json"),
            "config_hash": config.config_hash(),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("Run %s started in %s", payload["config_hash"][:12], self._out_dir)
        return path

    def path(self, name: str) -> Path:
        return self._out_dir / name

    def record(self, path: Path) -> Path:
        """Register a file already written inside the run directory."""
        rel = path.resolve().relative_to(self._out_dir.resolve()).as_posix()
        self._outputs[rel] = path
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return self.record(path)

    def write_model(self, name: str, model: BaseModel) -> Path:
        return self.write_text(name, model.model_dump_json(indent=2) + "\n")

    def outputs(self) -> list[str]:
        return sorted(self._outputs)

    def finalize(self) -> Path:
        manifest = {
            "config_hash": self.config_hash,
            "files": {name: file_digest(self._outputs[name]) for name in self.outputs()},
        }
        path = self._out_dir / MANIFEST_FILE
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def load_config(out_dir: Path) -> RunConfig:
    """Read back the resolved config of a finished run."""
    data = json.loads((out_dir / CONFIG_FILE).read_text(encoding="utf-8"))
    config = RunConfig.model_validate(data["config"])
    if config.config_hash() != data["config_hash"]:
        raise ValueError(f"{out_dir / CONFIG_FILE}: config hash mismatch")
    return config


def verify_manifest(out_dir: Path) -> list[str]:
    """Names of files whose current digest differs from the manifest."""
    manifest = json.loads((out_dir / MANIFEST_FILE).read_text(encoding="utf-8"))
    stale = []
    for name, digest in manifest["files"].items():
        path = out_dir / name
        if not path.exists() or file_digest(path) != digest:
            stale.append(name)
    return sorted(stale)
