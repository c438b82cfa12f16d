"""Per-chain draw files and atomic output directories."""

import hashlib
import logging
import shutil
import tempfile
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Literal

import fastavro
import numpy as np
import pandas as pd

from .exceptions import DataError, InputFileError
from .manifest import DrawLayout
from .sampler import ChainStats, PosteriorDraws

logger = logging.getLogger(__name__)

DrawFormat = Literal["csv", "avro"]

_RECORD_NAME = "Draw"


def chain_file(directory: str | Path, chain: int, draw_format: str) -> Path:
    """Path of one chain's draw file."""
    return Path(directory) / f"chain-{chain}.{draw_format}"


def draw_schema(width: int) -> dict:
    """Avro record schema with one positional double field per column."""
    return {
        "type": "record",
        "name": _RECORD_NAME,
        "namespace": "trafficbayes",
        "fields": [{"name": f"c{i}", "type": "double"} for i in range(width)],
    }


def _sync_marker(chain: int) -> bytes:
    # Fixed per chain so identical draws give identical files.
    return hashlib.sha256(f"chain-{chain}".encode()).digest()[:16]


def _chain_matrix(draws: PosteriorDraws, chain: int) -> np.ndarray:
    blocks = [draws.values[chain]]
    if draws.generated is not None:
        blocks.append(draws.generated[chain])
    return np.hstack(blocks)


def write_draws(directory: str | Path, draws: PosteriorDraws, draw_format: DrawFormat = "csv") -> DrawLayout:
    """
    Write one file per chain and return the layout describing them.

    Args:
        directory: Existing output directory
        draws: Posterior draws
        draw_format: ``csv`` (named columns) or ``avro`` (positional ``c0..cN`` fields)

    Returns:
        Layout to store in the run manifest

    """
    layout = DrawLayout(
        names=list(draws.names),
        generated_names=list(draws.generated_names),
        chains=draws.n_chains,
        draws=draws.n_draws,
        draw_format=draw_format,
        chain_seeds=[s.seed for s in draws.chain_stats],
        step_sizes=[s.step_size for s in draws.chain_stats],
        divergences=[s.divergences for s in draws.chain_stats],
        mean_accept=[s.mean_accept for s in draws.chain_stats],
        max_depth_hits=[s.max_depth_hits for s in draws.chain_stats],
        mean_leapfrog=[s.mean_leapfrog for s in draws.chain_stats],
        inverse_metrics=[[float(v) for v in s.inverse_metric] for s in draws.chain_stats],
    )
    columns = layout.columns
    for chain in range(draws.n_chains):
        matrix = _chain_matrix(draws, chain)
        path = chain_file(directory, chain, draw_format)
        if draw_format == "csv":
            pd.DataFrame(matrix, columns=columns).to_csv(path, index=False, encoding="utf-8")
            continue
        schema = fastavro.parse_schema(draw_schema(len(columns)))
        records = ({f"c{i}": float(v) for i, v in enumerate(row)} for row in matrix)
        with path.open("wb") as handle:
            fastavro.writer(handle, schema, records, sync_marker=_sync_marker(chain))
    logger.debug("Wrote %d chains of %d draws as %s", draws.n_chains, draws.n_draws, draw_format)
    return layout


def _read_chain(path: Path, layout: DrawLayout) -> np.ndarray:
    width = len(layout.columns)
    try:
        if layout.draw_format == "csv":
            frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
            if list(frame.columns) != layout.columns:
                msg = f"{path}: columns do not match the manifest layout"
                raise DataError(msg)
            matrix = frame.to_numpy(dtype=np.float64)
        else:
            with path.open("rb") as handle:
                rows = [[record[f"c{i}"] for i in range(width)] for record in fastavro.reader(handle)]
            matrix = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    except (OSError, pd.errors.ParserError, ValueError) as e:
        raise InputFileError(str(path)) from e
    except KeyError as e:
        msg = f"{path}: records do not match the manifest layout"
        raise DataError(msg) from e
    if matrix.shape != (layout.draws, width):
        msg = f"{path}: expected {layout.draws} draws of {width} columns, got {matrix.shape}"
        raise DataError(msg)
    return matrix


def read_draws(directory: str | Path, layout: DrawLayout) -> PosteriorDraws:
    """
    Restore draws written by ``write_draws``.

    Raises:
        InputFileError: If a chain file is missing or unreadable
        DataError: If a file does not match the layout

    """
    matrices = [
        _read_chain(chain_file(directory, chain, layout.draw_format), layout)
        for chain in range(layout.chains)
    ]
    stacked = np.stack(matrices)
    n_names = len(layout.names)
    stats = [
        ChainStats(
            seed=seed,
            step_size=step,
            inverse_metric=np.asarray(metric, dtype=np.float64),
            divergences=divergences,
            mean_accept=accept,
            max_depth_hits=hits,
            mean_leapfrog=leapfrog,
        )
        for seed, step, metric, divergences, accept, hits, leapfrog in zip(
            layout.chain_seeds,
            layout.step_sizes,
            layout.inverse_metrics,
            layout.divergences,
            layout.mean_accept,
            layout.max_depth_hits,
            layout.mean_leapfrog,
            strict=True,
        )
    ]
    return PosteriorDraws(
        names=tuple(layout.names),
        values=stacked[:, :, :n_names],
        generated_names=tuple(layout.generated_names),
        generated=stacked[:, :, n_names:] if layout.generated_names else None,
        chain_stats=stats,
    )


@contextmanager
def atomic_directory(target: str | Path) -> Iterator[Path]:
    """
    Yield a temporary sibling of ``target`` that replaces it on success.

    The temporary directory is removed if the block raises; ``target`` is
    left untouched in that case.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}-", dir=target.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    staging.rename(target)
    logger.debug("Committed output directory %s", target)
