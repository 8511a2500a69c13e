"""Convert raw impression logs into the canonical timeline format.

The source is a TSV with one banner impression per line (the shape of the
public attribution-modeling dataset): a user id, a timestamp, a click flag,
an attribution flag plus conversion linkage, and categorical context
columns.  Column names are never hardcoded; a schema file maps roles to
columns, and a default schema targeting the public dataset ships with the
package.

Preprocessing applied while building timelines:

* keep clicked displays only;
* drop a user's timelines entirely when the click counter proves clicks are
  missing from the observation window (counter larger than the clicks seen);
* split at attributed conversions so every output timeline carries a binary
  reward: the displays up to and including the last display of a conversion
  form one reward-1 timeline, trailing clicked displays form a reward-0 one.

All displays map to a single action id (banners are homogeneous; context
lives in the features), so the output alphabet has size 1 and no
qualifiers.  Train/test tagging hashes the user id, never the timeline, so
no user straddles the split.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Iterator

from .errors import IngestError, SchemaError
from .hashing import unit_interval
from .timeline import Dataset, Scenario, TimelineRecord

_REQUIRED_ROLES = ("user_id", "timestamp", "click", "attribution")

TIME_BUCKETS_HOURS = (1.0, 6.0, 24.0, 72.0)
TIME_BUCKET_LABELS = ("lt1h", "1to6h", "6to24h", "1to3d", "gt3d")
CLICKS_BEFORE_CAP = 5


@dataclass(frozen=True)
class SchemaConfig:
    """Role -> column mapping for the raw TSV."""

    user_id: str
    timestamp: str
    click: str
    attribution: str
    conversion_id: str | None = None
    time_since_last_click: str | None = None
    clicks_before: str | None = None
    categorical: tuple[str, ...] = ()
    time_unit: str = "seconds"  # "seconds" | "hours"


def load_schema(path) -> SchemaConfig:
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    try:
        return SchemaConfig(
            user_id=raw["user_id"],
            timestamp=raw["timestamp"],
            click=raw["click"],
            attribution=raw["attribution"],
            conversion_id=raw.get("conversion_id"),
            time_since_last_click=raw.get("time_since_last_click"),
            clicks_before=raw.get("clicks_before"),
            categorical=tuple(raw.get("categorical", ())),
            time_unit=raw.get("time_unit", "seconds"),
        )
    except KeyError as exc:
        raise SchemaError(f"schema is missing required role {exc}") from exc


def default_schema_path():
    """The bundled schema targeting the public dataset's documented columns."""
    return resources.files("touchcredit").joinpath("data/criteo_schema.json")


@dataclass(frozen=True)
class RawImpressionRow:
    user_id: str
    timestamp: float
    click: int
    attribution: int
    conversion_id: str | None
    time_since_last_click: float | None
    clicks_before: int | None
    categorical: tuple[tuple[str, str], ...]


@dataclass
class ParseStats:
    rows_read: int = 0
    rows_parsed: int = 0
    rows_malformed: int = 0


def _open_text(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def parse_tsv(
    path,
    schema: SchemaConfig,
    *,
    stats: ParseStats | None = None,
    max_malformed_fraction: float = 0.05,
) -> Iterator[RawImpressionRow]:
    """Stream typed rows from a (possibly gzipped) TSV with a header line.

    Malformed rows are counted and skipped; once their share of the rows
    seen so far exceeds ``max_malformed_fraction`` (checked after the first
    100 rows) the stream aborts with an ingestion error.  A missing
    mandatory column is a schema error.
    """
    stats = stats if stats is not None else ParseStats()
    with _open_text(path) as handle:
        header_line = handle.readline().rstrip("\n")
        if not header_line:
            raise IngestError(f"{path}: empty input")
        columns = header_line.split("\t")
        index: dict[str, int] = {name: i for i, name in enumerate(columns)}
        for role in _REQUIRED_ROLES:
            column = getattr(schema, role)
            if column not in index:
                raise SchemaError(f"required column {column!r} ({role}) not in header")
        for column in schema.categorical:
            if column not in index:
                raise SchemaError(f"categorical column {column!r} not in header")

        def lookup(row: list[str], column: str | None) -> str | None:
            if column is None or column not in index:
                return None
            value = row[index[column]]
            return value if value != "" else None

        for line in handle:
            stats.rows_read += 1
            parts = line.rstrip("\n").split("\t")
            try:
                if len(parts) != len(columns):
                    raise ValueError("field count mismatch")
                click = int(parts[index[schema.click]])
                attribution = int(parts[index[schema.attribution]])
                if click not in (0, 1) or attribution not in (0, 1):
                    raise ValueError("flags must be 0/1")
                tslc_text = lookup(parts, schema.time_since_last_click)
                clicks_before_text = lookup(parts, schema.clicks_before)
                row = RawImpressionRow(
                    user_id=parts[index[schema.user_id]],
                    timestamp=float(parts[index[schema.timestamp]]),
                    click=click,
                    attribution=attribution,
                    conversion_id=lookup(parts, schema.conversion_id),
                    time_since_last_click=(
                        float(tslc_text) if tslc_text is not None else None
                    ),
                    clicks_before=(
                        int(clicks_before_text) if clicks_before_text is not None else None
                    ),
                    categorical=tuple(
                        (column, parts[index[column]]) for column in schema.categorical
                    ),
                )
            except (ValueError, IndexError):
                stats.rows_malformed += 1
                if (
                    stats.rows_read > 100
                    and stats.rows_malformed > max_malformed_fraction * stats.rows_read
                ):
                    raise IngestError(
                        f"{stats.rows_malformed} of {stats.rows_read} rows malformed, "
                        f"over the {max_malformed_fraction:.0%} threshold"
                    ) from None
                continue
            stats.rows_parsed += 1
            yield row


def bucket_time_since_click(value: float | None, time_unit: str = "seconds") -> str:
    """Coarse recency bucket for the time-since-last-click feature."""
    if value is None or value < 0:
        return "none"
    hours = value / 3600.0 if time_unit == "seconds" else value
    for limit, label in zip(TIME_BUCKETS_HOURS, TIME_BUCKET_LABELS):
        if hours < limit:
            return label
    return TIME_BUCKET_LABELS[-1]


def _sanitize_level(value: str) -> str:
    for ch in "\t\n\r;=":
        value = value.replace(ch, "_")
    try:
        float(value)
    except ValueError:
        return value
    return f"x{value}"


@dataclass
class Provenance:
    """Itemized display and timeline accounting for one ingestion run."""

    displays_in: int = 0
    displays_kept: int = 0
    displays_not_clicked: int = 0
    displays_dropped_missing_clicks: int = 0
    displays_dropped_overlong: int = 0
    users_seen: int = 0
    users_kept: int = 0
    timelines_out: int = 0
    converted_timelines: int = 0
    dropped_timelines: dict[str, int] = field(default_factory=dict)

    def drop(self, reason: str, timelines: int) -> None:
        self.dropped_timelines[reason] = self.dropped_timelines.get(reason, 0) + timelines

    @property
    def displays_filtered(self) -> int:
        return (
            self.displays_not_clicked
            + self.displays_dropped_missing_clicks
            + self.displays_dropped_overlong
        )

    def to_json_dict(self) -> dict:
        return {
            "displays_in": self.displays_in,
            "displays_kept": self.displays_kept,
            "displays_filtered": self.displays_filtered,
            "displays_not_clicked": self.displays_not_clicked,
            "displays_dropped_missing_clicks": self.displays_dropped_missing_clicks,
            "displays_dropped_overlong": self.displays_dropped_overlong,
            "users_seen": self.users_seen,
            "users_kept": self.users_kept,
            "timelines_out": self.timelines_out,
            "converted_timelines": self.converted_timelines,
            "dropped_timelines": dict(self.dropped_timelines),
        }


@dataclass
class PreparedCorpus:
    dataset: Dataset
    provenance: Provenance


def _display_features(row: RawImpressionRow, clicks_before: int, time_unit: str) -> dict:
    features = {
        f"{column}={_sanitize_level(value)}": 1.0 for column, value in row.categorical
    }
    # Levels must not look numeric in the canonical format, hence the prefix.
    features[f"clicks_before=n{min(clicks_before, CLICKS_BEFORE_CAP)}"] = 1.0
    features[
        f"tslc={bucket_time_since_click(row.time_since_last_click, time_unit)}"
    ] = 1.0
    return features


def build_timelines(
    rows: Iterable[RawImpressionRow],
    *,
    max_length: int = 20,
    time_unit: str = "seconds",
    drop_missing_clicks: bool = True,
) -> PreparedCorpus:
    """Group clicked displays into per-user, conversion-split timelines.

    A conversion boundary is the last display attributed to each conversion
    id (in time order); the segment ending there becomes a reward-1
    timeline, trailing clicked displays a reward-0 one.  Missing-click
    evidence (a click counter exceeding the clicks observed in-window)
    drops the user's timelines wholesale.
    """
    provenance = Provenance()
    by_user: dict[str, list[RawImpressionRow]] = {}
    for row in rows:
        provenance.displays_in += 1
        if row.click != 1:
            provenance.displays_not_clicked += 1
            continue
        by_user.setdefault(row.user_id, []).append(row)
    provenance.users_seen = len(by_user)

    records: list[TimelineRecord] = []
    for user_id in sorted(by_user):
        user_rows = sorted(
            enumerate(by_user[user_id]), key=lambda pair: (pair[1].timestamp, pair[0])
        )
        ordered = [row for _, row in user_rows]

        if drop_missing_clicks and any(
            row.clicks_before is not None and row.clicks_before > seen
            for seen, row in enumerate(ordered)
        ):
            provenance.displays_dropped_missing_clicks += len(ordered)
            provenance.drop("missing_clicks", 1)
            continue

        # Last display of each attributed conversion closes a segment.
        last_of_conversion: dict[str, int] = {}
        for position, row in enumerate(ordered):
            if row.attribution == 1:
                key = row.conversion_id if row.conversion_id is not None else f"@{position}"
                last_of_conversion[key] = position
        boundaries = set(last_of_conversion.values())

        segments: list[tuple[list[tuple[RawImpressionRow, int]], float]] = []
        current: list[tuple[RawImpressionRow, int]] = []
        for position, row in enumerate(ordered):
            current.append((row, position))
            if position in boundaries:
                segments.append((current, 1.0))
                current = []
        if current:
            segments.append((current, 0.0))

        produced = 0
        for segment_index, (segment, reward) in enumerate(segments):
            if len(segment) > max_length:
                provenance.displays_dropped_overlong += len(segment)
                provenance.drop("overlong", 1)
                continue
            features = tuple(
                _display_features(row, clicks_seen, time_unit)
                for row, clicks_seen in segment
            )
            records.append(
                TimelineRecord(
                    timeline_id=f"{user_id}:{segment_index}",
                    scenario=Scenario.of(*([0] * len(segment))),
                    reward=reward,
                    display_features=features,
                )
            )
            provenance.displays_kept += len(segment)
            provenance.timelines_out += 1
            produced += 1
            if reward > 0:
                provenance.converted_timelines += 1
        if produced:
            provenance.users_kept += 1

    dataset = Dataset(
        n_actions=1, n_qualifiers=0, max_length=max_length, records=tuple(records)
    )
    return PreparedCorpus(dataset=dataset, provenance=provenance)


def default_user_key(timeline_id: str) -> str:
    """User identifier from a timeline id of the form ``user:segment``."""
    return timeline_id.rsplit(":", 1)[0]


def user_split(
    dataset: Dataset,
    fraction: float,
    seed: int,
    user_key: Callable[[str], str] = default_user_key,
) -> Dataset:
    """Tag records train/test by a deterministic hash of the user id.

    Every record of a user lands on the same side; the empirical train
    share approaches ``fraction`` as the number of users grows.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must be strictly inside (0, 1), got {fraction}")
    records = tuple(
        record.with_split(
            "train"
            if unit_interval(f"{seed}:{user_key(record.timeline_id)}") < fraction
            else "test"
        )
        for record in dataset.records
    )
    return dataset.with_records(records)
