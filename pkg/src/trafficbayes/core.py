"""Covariate schema, observed-road records and their aggregation into road-type cells."""

import json
import logging
import math
import tomllib
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Self

import pandas as pd

from .config import SchemaConfig
from .exceptions import ConfigurationError, DataError, DomainError, InputFileError, SchemaViolationError

logger = logging.getLogger(__name__)

COUNT_COLUMN = "COUNT"
SELECTED_COLUMN = "SELECTED"
PERIOD_COLUMN = "PERIOD"
ROAD_ID_COLUMN = "ROAD_ID"
DEFAULT_PERIOD = "before"
MAX_COUNT = 2**31 - 1


@dataclass(frozen=True)
class CovariateGroup:
    """One batch of categorical subtypes: a 4-letter code and its number of levels."""

    code: str
    cardinality: int


@dataclass(frozen=True)
class CovariateSchema:
    """
    The K categorical groups and the group pairs whose interactions define road types.

    Args:
        groups: Ordered groups
        interactions: Ordered unordered pairs of group codes
        offset_name: Exposure column label

    """

    groups: tuple[CovariateGroup, ...]
    interactions: tuple[tuple[str, str], ...] = ()
    offset_name: str = "EXPR"

    def __post_init__(self) -> None:
        codes = [g.code for g in self.groups]
        if len(set(codes)) != len(codes):
            msg = f"Group codes must be unique, got {codes}"
            raise ConfigurationError(msg)
        for group in self.groups:
            if group.cardinality < 2:  # noqa: PLR2004
                msg = f"Group {group.code} needs at least 2 levels, got {group.cardinality}"
                raise ConfigurationError(msg)
        seen: set[frozenset[str]] = set()
        for a, b in self.interactions:
            if a == b or a not in codes or b not in codes:
                msg = f"Interaction ({a}, {b}) must reference two distinct existing groups"
                raise ConfigurationError(msg)
            key = frozenset((a, b))
            if key in seen:
                msg = f"Interaction ({a}, {b}) listed twice"
                raise ConfigurationError(msg)
            seen.add(key)

    @classmethod
    def all_pairs(cls, groups: Sequence[CovariateGroup], offset_name: str = "EXPR") -> Self:
        """Schema with every two-way interaction, K·(K−1)/2 pairs in group order."""
        pairs = tuple((a.code, b.code) for a, b in combinations(groups, 2))
        return cls(groups=tuple(groups), interactions=pairs, offset_name=offset_name)

    @property
    def codes(self) -> tuple[str, ...]:
        """Group codes in schema order."""
        return tuple(g.code for g in self.groups)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        """J_k in schema order."""
        return tuple(g.cardinality for g in self.groups)

    def position(self, code: str) -> int:
        """Index of a group in schema order."""
        try:
            return self.codes.index(code)
        except ValueError as e:
            msg = f"Unknown group {code}"
            raise ConfigurationError(msg) from e

    def interaction_positions(self) -> tuple[tuple[int, int], ...]:
        """Each interaction as a pair of group positions."""
        return tuple((self.position(a), self.position(b)) for a, b in self.interactions)

    def interaction_cardinalities(self) -> tuple[int, ...]:
        """J_a·J_b for each interaction."""
        cards = self.cardinalities
        return tuple(cards[a] * cards[b] for a, b in self.interaction_positions())

    def validate_subtype(self, record_id: str, subtype: Sequence[int]) -> None:
        """
        Check a subtype vector against the schema.

        Raises:
            SchemaViolationError: If the vector has the wrong length or an index out of range

        """
        if len(subtype) != len(self.groups):
            detail = f"expected {len(self.groups)} subtype indices, got {len(subtype)}"
            raise SchemaViolationError(record_id, "*", detail)
        for group, level in zip(self.groups, subtype, strict=True):
            if not 1 <= level <= group.cardinality:
                detail = f"index {level} outside 1..{group.cardinality}"
                raise SchemaViolationError(record_id, group.code, detail)


@dataclass(frozen=True)
class RoadRecord:
    """
    One observed road in one period.

    Args:
        road_id: Opaque identifier
        subtype: Dense 1-based category index per group
        exposure: Positive exposure (pedestrian-count scale)
        fatalities: Fatality count in the period
        selected: Whether the road was selected for the policy
        period: Period label

    """

    road_id: str
    subtype: tuple[int, ...]
    exposure: float
    fatalities: int
    selected: bool = False
    period: str = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        if not self.exposure > 0:
            raise SchemaViolationError(self.road_id, "EXPR", f"exposure must be positive, got {self.exposure}")
        if not 0 <= self.fatalities <= MAX_COUNT:
            raise SchemaViolationError(self.road_id, COUNT_COLUMN, f"count out of range: {self.fatalities}")


@dataclass(frozen=True)
class TypeCell:
    """
    Aggregate of all records sharing every subtype index.

    Args:
        cell_id: Dense 0-based position in the cell list
        subtype: Dense 1-based category index per group
        interaction_levels: Flattened 1-based level per schema interaction
        count: Total fatalities Y
        exposure: Summed exposure EXPR_total

    """

    cell_id: int
    subtype: tuple[int, ...]
    interaction_levels: tuple[int, ...]
    count: int
    exposure: float


def interaction_index(subtype_a: int, subtype_b: int, cardinality_a: int, cardinality_b: int) -> int:
    """
    Flatten a pair of 1-based category indices row-major into a single 1-based level.

    Args:
        subtype_a: Level of the first group
        subtype_b: Level of the second group
        cardinality_a: J_a
        cardinality_b: J_b

    Returns:
        (a − 1)·J_b + b, in 1..J_a·J_b

    Raises:
        DomainError: If either index lies outside its cardinality

    """
    if not 1 <= subtype_a <= cardinality_a or not 1 <= subtype_b <= cardinality_b:
        msg = f"Indices ({subtype_a}, {subtype_b}) outside cardinalities ({cardinality_a}, {cardinality_b})"
        raise DomainError(msg)
    return (subtype_a - 1) * cardinality_b + subtype_b


def interaction_levels(subtype: Sequence[int], schema: CovariateSchema) -> tuple[int, ...]:
    """Flattened interaction level of a subtype vector for every schema pair."""
    cards = schema.cardinalities
    return tuple(
        interaction_index(subtype[a], subtype[b], cards[a], cards[b]) for a, b in schema.interaction_positions()
    )


def aggregate_cells(records: Iterable[RoadRecord], schema: CovariateSchema) -> list[TypeCell]:
    """
    Aggregate records into road-type cells.

    Two records share a cell exactly when all K subtype indices match. Counts
    and exposures are summed; cells are ordered lexicographically by subtype.

    Args:
        records: Records conforming to ``schema``
        schema: Covariate schema

    Returns:
        Cells partitioning the records

    Raises:
        SchemaViolationError: If a record's subtype does not fit the schema

    """
    counts: dict[tuple[int, ...], int] = {}
    exposures: dict[tuple[int, ...], list[float]] = {}
    for record in records:
        schema.validate_subtype(record.road_id, record.subtype)
        key = tuple(record.subtype)
        counts[key] = counts.get(key, 0) + record.fatalities
        exposures.setdefault(key, []).append(record.exposure)
    cells = []
    for cell_id, key in enumerate(sorted(counts)):
        cells.append(
            TypeCell(
                cell_id=cell_id,
                subtype=key,
                interaction_levels=interaction_levels(key, schema),
                count=counts[key],
                exposure=math.fsum(exposures[key]),
            )
        )
    return cells


@dataclass
class CategoryCodebook:
    """
    Mapping between the sparse integer codes found in input files and dense 1..J_k indices.

    Args:
        codes: Per group, the sorted original codes; dense index = position + 1

    """

    codes: dict[str, list[int]] = field(default_factory=dict)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, groups: Iterable[str]) -> Self:
        """Collect the distinct codes of each group column, sorted ascending."""
        return cls({g: sorted(int(v) for v in frame[g].unique()) for g in groups})

    def merge(self, frame: pd.DataFrame) -> Self:
        """Codebook extended with codes of ``frame`` not seen yet (appended after existing ones)."""
        merged = {}
        for group, known in self.codes.items():
            extra = sorted(int(v) for v in frame[group].unique() if int(v) not in known)
            merged[group] = [*known, *extra]
        return type(self)(merged)

    def encode(self, group: str, code: int) -> int | None:
        """Dense index of an original code, or None when the code is unknown."""
        try:
            return self.codes[group].index(int(code)) + 1
        except ValueError:
            return None

    def decode(self, group: str, level: int) -> int:
        """Original code of a dense index."""
        return self.codes[group][level - 1]

    def cardinality(self, group: str) -> int:
        """Number of known codes of a group."""
        return len(self.codes[group])

    def to_json(self) -> str:
        """Serialize the codebook (persisted next to every output)."""
        return json.dumps(self.codes, indent=2)

    @classmethod
    def from_json(cls, text: str) -> Self:
        """Restore a codebook written by ``to_json``."""
        data = json.loads(text)
        return cls({str(k): [int(c) for c in v] for k, v in data.items()})


def resolve_schema(config: SchemaConfig, codebook: CategoryCodebook) -> CovariateSchema:
    """
    Turn a schema configuration into a concrete schema.

    ``"infer"`` cardinalities take the number of distinct codes in the codebook;
    explicit cardinalities must be at least that large.

    Raises:
        ConfigurationError: If an explicit cardinality is too small for the data

    """
    groups = []
    for code, cardinality in config.groups.items():
        observed = codebook.cardinality(code) if code in codebook.codes else 0
        if cardinality == "infer":
            resolved = max(observed, 2)
        else:
            if cardinality < observed:
                msg = f"Group {code} declares {cardinality} levels but the data has {observed} distinct codes"
                raise ConfigurationError(msg)
            resolved = cardinality
        groups.append(CovariateGroup(code, resolved))
    if config.interactions == "all-pairs":
        return CovariateSchema.all_pairs(groups, offset_name=config.offset)
    if config.interactions == "none":
        return CovariateSchema(tuple(groups), (), offset_name=config.offset)
    return CovariateSchema(tuple(groups), tuple(config.interactions), offset_name=config.offset)


def read_frame(path: str | Path, schema_config: SchemaConfig) -> pd.DataFrame:
    """
    Read a road CSV and check its columns.

    Required columns: every group code, the offset column and ``COUNT``.
    Optional: ``ROAD_ID``, ``SELECTED``, ``PERIOD``.

    Raises:
        InputFileError: If the file cannot be read
        DataError: If required columns are missing or values are malformed

    """
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputFileError(str(path)) from e
    required = [*schema_config.groups, schema_config.offset, COUNT_COLUMN]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        msg = f"{path}: missing columns {missing}"
        raise DataError(msg)
    if frame[schema_config.offset].isna().any():
        msg = f"{path}: missing exposure values in column {schema_config.offset}"
        raise DataError(msg)
    for column in [*schema_config.groups, COUNT_COLUMN]:
        if frame[column].isna().any():
            msg = f"{path}: missing values in column {column}"
            raise DataError(msg)
    frame[COUNT_COLUMN] = integral_column(frame, COUNT_COLUMN, path)
    if ROAD_ID_COLUMN not in frame.columns:
        frame[ROAD_ID_COLUMN] = [str(i) for i in range(len(frame))]
    if SELECTED_COLUMN not in frame.columns:
        frame[SELECTED_COLUMN] = 0
    frame[SELECTED_COLUMN] = integral_column(frame, SELECTED_COLUMN, path, maximum=1)
    if PERIOD_COLUMN not in frame.columns:
        frame[PERIOD_COLUMN] = DEFAULT_PERIOD
    frame[ROAD_ID_COLUMN] = frame[ROAD_ID_COLUMN].astype(str)
    frame[PERIOD_COLUMN] = frame[PERIOD_COLUMN].astype(str)
    return frame


def integral_column(frame: pd.DataFrame, column: str, source: str | Path, maximum: int | None = None) -> pd.Series:
    """
    A column checked to hold nonnegative integers (at most ``maximum``), as int64.

    Raises:
        DataError: If a value is missing, non-numeric, fractional, negative or above ``maximum``

    """
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | (values < 0) | (values % 1 != 0)
    if maximum is not None:
        bad |= values > maximum
    if bad.any():
        first = frame[column][bad].iloc[0]
        upper = "" if maximum is None else f" up to {maximum}"
        msg = f"{source}: column {column} needs nonnegative integers{upper}, got {first!r} in row {bad.idxmax()}"
        raise DataError(msg)
    return values.astype("int64")


def records_from_frame(
    frame: pd.DataFrame, schema: CovariateSchema, codebook: CategoryCodebook
) -> list[RoadRecord]:
    """
    Convert a validated frame into records, remapping codes to dense indices.

    Raises:
        SchemaViolationError: If a code is unknown to the codebook or out of range

    """
    records = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        road_id = str(values[ROAD_ID_COLUMN])
        subtype = []
        for group in schema.groups:
            level = codebook.encode(group.code, values[group.code])
            if level is None:
                raise SchemaViolationError(road_id, group.code, f"unknown code {values[group.code]}")
            subtype.append(level)
        subtype_tuple = tuple(subtype)
        schema.validate_subtype(road_id, subtype_tuple)
        records.append(
            RoadRecord(
                road_id=road_id,
                subtype=subtype_tuple,
                exposure=float(values[schema.offset_name]),
                fatalities=int(values[COUNT_COLUMN]),
                selected=bool(int(values[SELECTED_COLUMN])),
                period=str(values[PERIOD_COLUMN]),
            )
        )
    return records


def read_records(
    path: str | Path, schema_config: SchemaConfig, codebook: CategoryCodebook | None = None
) -> tuple[CovariateSchema, CategoryCodebook, list[RoadRecord]]:
    """
    Ingest a road CSV.

    Args:
        path: CSV file
        schema_config: Schema configuration
        codebook: Existing codebook (e.g. from a fit); built from the file when None

    Returns:
        Tuple of (schema, codebook, records)

    """
    frame = read_frame(path, schema_config)
    codebook = category_codebook(frame, schema_config) if codebook is None else codebook
    schema = resolve_schema(schema_config, codebook)
    return schema, codebook, records_from_frame(frame, schema, codebook)


def category_codebook(frame: pd.DataFrame, schema_config: SchemaConfig) -> CategoryCodebook:
    """Codebook of the group columns of an ingested frame."""
    return CategoryCodebook.from_frame(frame, schema_config.groups)


def load_schema(source: str | Path | Mapping[str, Any]) -> SchemaConfig:
    """
    Read a schema file or an already-parsed ``[schema]`` table.

    The file is TOML with a ``[schema]`` table holding ``groups`` (ordered
    code = cardinality or ``"infer"``), ``interactions`` and ``offset``.

    Raises:
        ConfigurationError: If the file is unreadable or the table is invalid

    """
    if isinstance(source, Mapping):
        table = dict(source.get("schema", source))
    else:
        try:
            data = tomllib.loads(Path(source).read_text(encoding="utf-8"))
        except OSError as e:
            msg = f"Cannot read schema file {source}"
            raise ConfigurationError(msg) from e
        except tomllib.TOMLDecodeError as e:
            msg = f"Cannot parse schema file {source}: {e}"
            raise ConfigurationError(msg) from e
        if "schema" not in data:
            msg = f"{source}: missing [schema] table"
            raise ConfigurationError(msg)
        table = dict(data["schema"])
    unknown = set(table) - {"groups", "interactions", "offset"}
    if unknown:
        msg = f"Unknown keys in [schema]: {sorted(unknown)}"
        raise ConfigurationError(msg)
    return SchemaConfig(**table)


def write_records(
    path: str | Path, records: Sequence[RoadRecord], schema: CovariateSchema, codebook: CategoryCodebook
) -> None:
    """Write records as a core CSV with original category codes."""
    records_to_frame(records, schema, codebook).to_csv(path, index=False, encoding="utf-8")


def records_to_frame(
    records: Sequence[RoadRecord], schema: CovariateSchema, codebook: CategoryCodebook
) -> pd.DataFrame:
    """Render records in the core CSV layout with original codes restored."""
    rows: list[dict[str, Any]] = []
    for record in records:
        row: dict[str, Any] = {ROAD_ID_COLUMN: record.road_id}
        for group, level in zip(schema.groups, record.subtype, strict=True):
            row[group.code] = codebook.decode(group.code, level)
        row[schema.offset_name] = record.exposure
        row[COUNT_COLUMN] = record.fatalities
        row[SELECTED_COLUMN] = int(record.selected)
        row[PERIOD_COLUMN] = record.period
        rows.append(row)
    columns = [ROAD_ID_COLUMN, *schema.codes, schema.offset_name, COUNT_COLUMN, SELECTED_COLUMN, PERIOD_COLUMN]
    return pd.DataFrame(rows, columns=columns)


def cells_to_frame(cells: Sequence[TypeCell], schema: CovariateSchema, codebook: CategoryCodebook) -> pd.DataFrame:
    """Render cells with original codes, for reports."""
    rows = []
    for cell in cells:
        row: dict[str, Any] = {"CELL": cell.cell_id}
        for group, level in zip(schema.groups, cell.subtype, strict=True):
            row[group.code] = codebook.decode(group.code, level)
        row[schema.offset_name] = cell.exposure
        row[COUNT_COLUMN] = cell.count
        rows.append(row)
    return pd.DataFrame(rows, columns=["CELL", *schema.codes, schema.offset_name, COUNT_COLUMN])


def cells_from_frame(frame: pd.DataFrame, schema: CovariateSchema, codebook: CategoryCodebook) -> list[TypeCell]:
    """Restore cells written by ``cells_to_frame``."""
    cells = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        subtype = []
        for group in schema.groups:
            level = codebook.encode(group.code, values[group.code])
            if level is None:
                raise SchemaViolationError(str(values["CELL"]), group.code, f"unknown code {values[group.code]}")
            subtype.append(level)
        key = tuple(subtype)
        cells.append(
            TypeCell(
                cell_id=int(values["CELL"]),
                subtype=key,
                interaction_levels=interaction_levels(key, schema),
                count=int(values[COUNT_COLUMN]),
                exposure=float(values[schema.offset_name]),
            )
        )
    return cells


def split_periods(
    records: Iterable[RoadRecord], training_periods: Sequence[str], holdout_period: str | None
) -> tuple[list[RoadRecord], list[RoadRecord]]:
    """
    Separate training records from the held-out period.

    Args:
        records: All records
        training_periods: Period labels used for fitting
        holdout_period: Period withheld for the predictive check, if any

    Returns:
        Tuple of (training records, holdout records); other periods are dropped

    """
    training, holdout = [], []
    for record in records:
        if holdout_period is not None and record.period == holdout_period:
            holdout.append(record)
        elif record.period in training_periods:
            training.append(record)
    return training, holdout


def road_totals(records: Iterable[RoadRecord], periods: Sequence[str]) -> dict[str, int]:
    """Fatalities per road summed over the given periods (roads seen in other periods count 0)."""
    totals: dict[str, int] = {}
    for record in records:
        totals.setdefault(record.road_id, 0)
        if record.period in periods:
            totals[record.road_id] += record.fatalities
    return totals


def road_selection(records: Iterable[RoadRecord]) -> dict[str, bool]:
    """Selection flag per road (a road is selected if any of its rows is)."""
    flags: dict[str, bool] = {}
    for record in records:
        flags[record.road_id] = flags.get(record.road_id, False) or record.selected
    return flags


def expand_cells(cells: Iterable[TypeCell]) -> list[RoadRecord]:
    """
    Unit-fatality pseudo-records reproducing each cell when re-aggregated.

    A cell without fatalities becomes one zero-count record carrying its exposure.
    """
    records = []
    for cell in cells:
        if cell.count == 0:
            records.append(
                RoadRecord(road_id=f"{cell.cell_id}-0", subtype=cell.subtype, exposure=cell.exposure, fatalities=0)
            )
            continue
        share = cell.exposure / cell.count
        records.extend(
            RoadRecord(road_id=f"{cell.cell_id}-{k}", subtype=cell.subtype, exposure=share, fatalities=1)
            for k in range(cell.count)
        )
    return records


def cell_index(cells: Iterable[TypeCell]) -> Mapping[tuple[int, ...], TypeCell]:
    """Lookup of cells by subtype vector."""
    return {cell.subtype: cell for cell in cells}
