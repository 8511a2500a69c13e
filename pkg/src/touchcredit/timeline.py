"""Canonical data model: actions, scenarios, timeline records, datasets.

A scenario is the ordered sequence of displays one user saw, each display
being an action id with an optional qualifier id (e.g. clicked / not
clicked).  Rewards are attached at the timeline level; everything downstream
(valuation, credit assignment) works on scenario prefixes, so the prefix
algebra lives here.

Dataset file format (one timeline per line, UTF-8, LF):

    #{"format": "timelines/1", "n_actions": 2, "n_qualifiers": 0, "max_length": 2}
    t0001<TAB>1.0<TAB>0<TAB>1;pos_gap=2;site=news

Each display field is ``action_id[:qualifier_id][;key=value;...]``.  Feature
values that parse as floats are numeric; anything else is treated as a
categorical level and stored as a ``key=value`` token with value 1.0, which
is what the feature hasher expects.  Split tags and non-default record
weights have no column of their own and are carried by the optional header
keys ``test_ids`` and ``weights``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterator, Mapping

from .errors import DatasetParseError, DatasetValidationError

Display = tuple[int, int | None]

_LINE_BREAKERS = ("\t", "\n", "\r")
_FIELD_BREAKERS = _LINE_BREAKERS + (";", "=")


@dataclass(frozen=True)
class Scenario:
    """An ordered, immutable sequence of (action, qualifier) displays.

    The empty scenario exists only as the recursion anchor for "no displays
    yet" (its reward is defined as 0); datasets never contain it.
    """

    displays: tuple[Display, ...]

    def __post_init__(self) -> None:
        for item in self.displays:
            if len(item) != 2:
                raise DatasetValidationError(f"display must be (action, qualifier): {item!r}")
            action, qualifier = item
            if action < 0 or (qualifier is not None and qualifier < 0):
                raise DatasetValidationError(f"negative id in display {item!r}")

    @classmethod
    def of(cls, *actions: int) -> "Scenario":
        """Build an unqualified scenario from action ids."""
        return cls(tuple((a, None) for a in actions))

    @classmethod
    def empty(cls) -> "Scenario":
        return _EMPTY

    @property
    def length(self) -> int:
        return len(self.displays)

    def __len__(self) -> int:
        return len(self.displays)

    def __bool__(self) -> bool:
        return bool(self.displays)

    def prefix(self, i: int) -> "Scenario":
        """The scenario made of the first ``i`` displays (1-based, i <= length)."""
        if not 1 <= i <= len(self.displays):
            raise IndexError(f"prefix index {i} outside [1, {len(self.displays)}]")
        return Scenario(self.displays[:i])

    @property
    def parent(self) -> "Scenario":
        """The scenario with the last display removed (empty for length 1)."""
        if not self.displays:
            raise IndexError("the empty scenario has no parent")
        return Scenario(self.displays[:-1])

    def prefixes(self) -> list["Scenario"]:
        """All nonempty prefixes, shortest first; the last one is ``self``."""
        return [Scenario(self.displays[:i]) for i in range(1, len(self.displays) + 1)]

    def is_prefix_of(self, other: "Scenario") -> bool:
        """True when ``other`` extends ``self`` (equality included)."""
        return other.displays[: len(self.displays)] == self.displays

    def extend(self, action: int, qualifier: int | None = None) -> "Scenario":
        return Scenario(self.displays + ((action, qualifier),))

    @property
    def last_action(self) -> int:
        if not self.displays:
            raise IndexError("the empty scenario has no last action")
        return self.displays[-1][0]

    def encode(self) -> str:
        """Compact text form, e.g. ``0,1:0`` for [(0, None), (1, 0)]."""
        return ",".join(
            str(a) if q is None else f"{a}:{q}" for a, q in self.displays
        )

    @classmethod
    def decode(cls, text: str) -> "Scenario":
        if text == "":
            return _EMPTY
        displays: list[Display] = []
        for token in text.split(","):
            action_part, sep, qual_part = token.partition(":")
            try:
                action = int(action_part)
                qualifier = int(qual_part) if sep else None
            except ValueError as exc:
                raise DatasetParseError(f"bad display token {token!r}") from exc
            displays.append((action, qualifier))
        return cls(tuple(displays))

    def __repr__(self) -> str:
        return f"Scenario({self.encode()})"


_EMPTY = Scenario(())


@dataclass(frozen=True)
class TimelineRecord:
    """One observed user journey: scenario, per-display features, reward."""

    timeline_id: str
    scenario: Scenario
    reward: float
    display_features: tuple[Mapping[str, float], ...] = ()
    weight: float = 1.0
    split: str = "train"

    def __post_init__(self) -> None:
        if len(self.scenario) == 0:
            raise DatasetValidationError(f"{self.timeline_id}: empty scenario")
        if not self.display_features:
            object.__setattr__(
                self, "display_features", tuple({} for _ in range(len(self.scenario)))
            )
        if len(self.display_features) != len(self.scenario):
            raise DatasetValidationError(
                f"{self.timeline_id}: {len(self.display_features)} feature maps "
                f"for {len(self.scenario)} displays"
            )
        if not math.isfinite(self.reward) or self.reward < 0:
            raise DatasetValidationError(f"{self.timeline_id}: reward {self.reward} < 0")
        if not math.isfinite(self.weight) or self.weight <= 0:
            raise DatasetValidationError(f"{self.timeline_id}: weight {self.weight} <= 0")
        if self.split not in ("train", "test"):
            raise DatasetValidationError(f"{self.timeline_id}: unknown split {self.split!r}")

    def with_split(self, split: str) -> "TimelineRecord":
        return replace(self, split=split)


@dataclass(frozen=True)
class Dataset:
    """A validated collection of timeline records under one declaration.

    ``n_qualifiers == 0`` declares an unqualified dataset: no display may
    carry a qualifier.  In a qualified dataset, qualifiers are optional per
    position (a timeline's final display often has none, because the
    qualifying event happens between displays) but must stay within range.
    """

    n_actions: int
    n_qualifiers: int
    max_length: int
    records: tuple[TimelineRecord, ...] = ()

    def __post_init__(self) -> None:
        if self.n_actions < 1:
            raise DatasetValidationError("n_actions must be >= 1")
        if self.n_qualifiers < 0 or self.max_length < 1:
            raise DatasetValidationError("bad dataset declaration")
        split_by_id: dict[str, str] = {}
        for record in self.records:
            if len(record.scenario) > self.max_length:
                raise DatasetValidationError(
                    f"{record.timeline_id}: length {len(record.scenario)} exceeds "
                    f"max_length {self.max_length}"
                )
            for action, qualifier in record.scenario.displays:
                if action >= self.n_actions:
                    raise DatasetValidationError(
                        f"{record.timeline_id}: action {action} outside alphabet "
                        f"of size {self.n_actions}"
                    )
                if qualifier is not None and (
                    self.n_qualifiers == 0 or qualifier >= self.n_qualifiers
                ):
                    raise DatasetValidationError(
                        f"{record.timeline_id}: qualifier {qualifier} invalid for "
                        f"qualifier set of size {self.n_qualifiers}"
                    )
            previous = split_by_id.setdefault(record.timeline_id, record.split)
            if previous != record.split:
                raise DatasetValidationError(
                    f"{record.timeline_id}: appears in both splits"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TimelineRecord]:
        return iter(self.records)

    def subset(self, split: str | None) -> tuple[TimelineRecord, ...]:
        """Records with the given split tag; ``None`` returns everything."""
        if split is None:
            return self.records
        return tuple(r for r in self.records if r.split == split)

    @property
    def qualified(self) -> bool:
        return self.n_qualifiers > 0

    def with_records(self, records: tuple[TimelineRecord, ...]) -> "Dataset":
        return replace(self, records=records)


def _check_token(text: str, what: str, reserved: tuple[str, ...] = _FIELD_BREAKERS) -> str:
    for ch in reserved:
        if ch in text:
            raise DatasetValidationError(f"{what} {text!r} contains reserved character {ch!r}")
    return text


def _format_number(value: float) -> str:
    return repr(value) if value != int(value) else str(int(value))


def _is_numeric(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _encode_display(display: Display, features: Mapping[str, float]) -> str:
    action, qualifier = display
    token = str(action) if qualifier is None else f"{action}:{qualifier}"
    parts = [token]
    for key in sorted(features):
        value = features[key]
        if "=" in key:
            # Categorical token "name=level": written as-is, read back as 1.0.
            name, _, level = key.partition("=")
            _check_token(name, "feature key")
            _check_token(level, "categorical level")
            if value != 1.0:
                raise DatasetValidationError(
                    f"categorical feature {key!r} must have value 1.0, got {value}"
                )
            if _is_numeric(level):
                raise DatasetValidationError(
                    f"categorical level in {key!r} is ambiguous with a numeric value"
                )
            parts.append(key)
        else:
            _check_token(key, "feature key")
            parts.append(f"{key}={_format_number(value)}")
    return ";".join(parts)


def _parse_display(field_text: str) -> tuple[Display, dict[str, float]]:
    head, *feature_parts = field_text.split(";")
    action_part, sep, qual_part = head.partition(":")
    try:
        action = int(action_part)
        qualifier = int(qual_part) if sep else None
    except ValueError as exc:
        raise DatasetParseError(f"bad display head {head!r}") from exc
    features: dict[str, float] = {}
    for part in feature_parts:
        key, sep, value_text = part.partition("=")
        if not sep or not key:
            raise DatasetParseError(f"bad feature token {part!r}")
        try:
            features[key] = float(value_text)
        except ValueError:
            # Non-numeric value: a categorical level, stored as key=value -> 1.0.
            features[f"{key}={value_text}"] = 1.0
    return (action, qualifier), features


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` in the canonical newline-delimited format."""
    header: dict = {
        "format": "timelines/1",
        "n_actions": dataset.n_actions,
        "n_qualifiers": dataset.n_qualifiers,
        "max_length": dataset.max_length,
    }
    test_ids = sorted({r.timeline_id for r in dataset.records if r.split == "test"})
    if test_ids:
        header["test_ids"] = test_ids
    if any(r.weight != 1.0 for r in dataset.records):
        header["weights"] = [r.weight for r in dataset.records]
    lines = ["#" + json.dumps(header, separators=(",", ":"))]
    for record in dataset.records:
        _check_token(record.timeline_id, "timeline id", _LINE_BREAKERS)
        fields = [record.timeline_id, _format_number(record.reward)]
        fields.extend(
            _encode_display(display, feats)
            for display, feats in zip(record.scenario.displays, record.display_features)
        )
        lines.append("\t".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset`.

    Raises :class:`DatasetParseError` (with the offending line number) on
    malformed lines and :class:`DatasetValidationError` when a record
    violates the header declaration.
    """
    with open(path, "r", encoding="utf-8") as handle:
        raw_lines = handle.read().splitlines()
    if not raw_lines or not raw_lines[0].startswith("#"):
        raise DatasetParseError("missing JSON header line", line_number=1)
    try:
        header = json.loads(raw_lines[0][1:])
        n_actions = int(header["n_actions"])
        n_qualifiers = int(header["n_qualifiers"])
        max_length = int(header["max_length"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"bad header: {exc}", line_number=1) from exc
    test_ids = set(header.get("test_ids", ()))
    weights = header.get("weights")

    records: list[TimelineRecord] = []
    record_index = 0
    for line_number, line in enumerate(raw_lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise DatasetParseError(
                f"expected id, reward and at least one display, got {len(fields)} fields",
                line_number=line_number,
            )
        timeline_id = fields[0]
        try:
            reward = float(fields[1])
        except ValueError as exc:
            raise DatasetParseError(
                f"bad reward {fields[1]!r}", line_number=line_number
            ) from exc
        displays: list[Display] = []
        feature_maps: list[dict[str, float]] = []
        try:
            for field_text in fields[2:]:
                display, features = _parse_display(field_text)
                displays.append(display)
                feature_maps.append(features)
        except DatasetParseError as exc:
            raise DatasetParseError(str(exc), line_number=line_number) from exc
        weight = 1.0
        if weights is not None:
            try:
                weight = float(weights[record_index])
            except (IndexError, TypeError, ValueError) as exc:
                raise DatasetParseError(
                    "weights header does not align with records", line_number=line_number
                ) from exc
        records.append(
            TimelineRecord(
                timeline_id=timeline_id,
                scenario=Scenario(tuple(displays)),
                reward=reward,
                display_features=tuple(feature_maps),
                weight=weight,
                split="test" if timeline_id in test_ids else "train",
            )
        )
        record_index += 1
    return Dataset(
        n_actions=n_actions,
        n_qualifiers=n_qualifiers,
        max_length=max_length,
        records=tuple(records),
    )
