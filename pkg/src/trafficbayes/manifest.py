"""Run manifests: what produced an output directory, from which inputs and settings."""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Self

from dataclasses_avroschema import AvroModel

from .config import PipelineConfig
from .exceptions import DataError, InputFileError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
_CHUNK_SIZE = 1 << 20


@dataclass
class DrawLayout(AvroModel):
    """
    Column layout and sampler statistics of stored posterior draws.

    Avro chain files use positional fields ``c0..cN``; ``names`` followed by
    ``generated_names`` gives the effect each position holds.
    """

    names: list[str]
    generated_names: list[str]
    chains: int
    draws: int
    draw_format: str
    chain_seeds: list[int] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    divergences: list[int] = field(default_factory=list)
    mean_accept: list[float] = field(default_factory=list)
    max_depth_hits: list[int] = field(default_factory=list)
    mean_leapfrog: list[float] = field(default_factory=list)
    inverse_metrics: list[list[float]] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return [*self.names, *self.generated_names]


@dataclass
class RunManifest(AvroModel):
    """
    Provenance record written once into every output directory.

    Args:
        subcommand: Pipeline step that produced the directory
        version: Package version
        config_hash: Sha256 of the effective configuration
        config_json: Effective configuration as canonical JSON
        seed: Master seed
        input_digests: Input path to sha256 of its contents
        outputs: Files written, relative to the directory
        started: UTC start time, ISO 8601
        finished: UTC finish time, ISO 8601
        layout: Draw layout, for directories holding posterior draws

    """

    subcommand: str
    version: str
    config_hash: str
    config_json: str
    seed: int
    input_digests: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    started: str = ""
    finished: str = ""
    layout: DrawLayout | None = None

    @classmethod
    def begin(
        cls, subcommand: str, config: PipelineConfig, version: str, inputs: list[Path] | None = None
    ) -> Self:
        """Manifest for a run starting now."""
        return cls(
            subcommand=subcommand,
            version=version,
            config_hash=config.digest(),
            config_json=json.dumps(config.to_dict(), sort_keys=True, default=list),
            seed=config.run.seed,
            input_digests=input_digests(inputs or []),
            started=_now(),
        )

    def dumps(self) -> str:
        """Render as indented JSON, the nested layout as a plain object."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> Self:
        """
        Parse and validate a manifest.

        Raises:
            DataError: If the text is not a valid manifest

        """
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            msg = f"Invalid run manifest: {e}"
            raise DataError(msg) from e
        if not isinstance(data, dict):
            raise DataError("Invalid run manifest: expected a JSON object")
        try:
            manifest = cls.parse_obj(data)
            manifest.validate()
        except Exception as e:
            msg = f"Invalid run manifest: {e}"
            raise DataError(msg) from e
        return manifest


def _now() -> str:
    return datetime.now(UTC).isoformat(timespec="seconds")


def file_digest(path: str | Path) -> str:
    """
    Sha256 of a file's contents.

    Raises:
        InputFileError: If the file cannot be read

    """
    digest = hashlib.sha256()
    try:
        with Path(path).open("rb") as handle:
            for chunk in iter(lambda: handle.read(_CHUNK_SIZE), b""):
                digest.update(chunk)
    except OSError as e:
        raise InputFileError(str(path)) from e
    return digest.hexdigest()


def input_digests(paths: list[Path]) -> dict[str, str]:
    """Digest of every input file, keyed by its path as given."""
    return {str(path): file_digest(path) for path in paths}


def verify_inputs(manifest: RunManifest) -> list[str]:
    """
    Inputs whose current contents differ from the recorded digests.

    Missing files count as changed.
    """
    changed = []
    for path, expected in sorted(manifest.input_digests.items()):
        try:
            actual = file_digest(path)
        except InputFileError:
            actual = None
        if actual != expected:
            changed.append(path)
    if changed:
        logger.warning("Inputs changed since the run: %s", ", ".join(changed))
    return changed


def write_manifest(directory: str | Path, manifest: RunManifest) -> Path:
    """Stamp the finish time and write ``manifest.json`` into ``directory``."""
    manifest.finished = _now()
    path = Path(directory) / MANIFEST_NAME
    path.write_text(manifest.dumps(), encoding="utf-8")
    return path


def read_manifest(directory: str | Path) -> RunManifest:
    """
    Read the manifest of an output directory.

    Raises:
        InputFileError: If the directory has no readable manifest
        DataError: If the manifest is malformed

    """
    path = Path(directory) / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InputFileError(str(path)) from e
    return RunManifest.loads(text)
