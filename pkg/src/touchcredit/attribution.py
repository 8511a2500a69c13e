"""Credit assignment across a timeline's displays and display valuation.

The pieces fit together like this: a timeline's reward is split across its
displays by an attribution table (rows sum to the reward).  Averaging the
credit of position ``len(s)`` over all observed timelines extending ``s``
turns a table into a valuation of the last display of ``s``.  The valuation
we are after is the additive one, ``value(s) - value(parent of s)``: it is
the unique choice whose credit shares

    credit(i, s) = valuation(s^i) / sum_j valuation(s^j) * reward(s)

reproduce it when averaged over the future, so it can be computed either
directly from a reward oracle (when every prefix is observed) or as the
limit of the relabel / retrain / reshare loop in :func:`run_fixed_point`,
which works with any learner backend and arbitrary features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import EstimationError, TrainingError, UnseenScenarioError
from .metrics import likelihood_from_masses
from .oracle import RewardOracle
from .timeline import Dataset, Scenario, TimelineRecord


class ValuationModel(Protocol):
    """Anything that can price the display at ``position`` of a record."""

    def evaluate(self, record: TimelineRecord, position: int) -> float: ...


@dataclass
class TabularValuation:
    """Valuation backed by an explicit scenario -> value table."""

    values: dict[Scenario, float]
    on_missing: str = "zero"  # "zero" | "error"
    clamp_count: int = 0  # negative increments clamped during construction

    def value(self, scenario: Scenario) -> float:
        if scenario in self.values:
            return self.values[scenario]
        if self.on_missing == "zero":
            return 0.0
        raise UnseenScenarioError(f"no valuation for {scenario}")

    def evaluate(self, record: TimelineRecord, position: int) -> float:
        return self.value(record.scenario.prefix(position))

    def evaluate_examples(self, examples: "PrefixExamples") -> np.ndarray:
        return np.array([self.value(s) for s in examples.scenarios])


@dataclass
class AttributionTable:
    """Per-record credit rows, aligned with a record sequence."""

    credits: tuple[np.ndarray, ...]

    def row(self, index: int) -> np.ndarray:
        return self.credits[index]

    def totals(self) -> np.ndarray:
        return np.array([row.sum() for row in self.credits])

    def validate(self, records: Sequence[TimelineRecord], rel_tol: float = 1e-12) -> None:
        """Check shape, nonnegativity and that each row sums to its reward."""
        if len(self.credits) != len(records):
            raise EstimationError(
                f"{len(self.credits)} credit rows for {len(records)} records"
            )
        for row, record in zip(self.credits, records):
            if len(row) != len(record.scenario):
                raise EstimationError(f"{record.timeline_id}: credit row length mismatch")
            if (row < 0).any():
                raise EstimationError(f"{record.timeline_id}: negative credit")
            gap = abs(row.sum() - record.reward)
            if gap > rel_tol * max(record.reward, 1.0):
                raise EstimationError(
                    f"{record.timeline_id}: credits sum to {row.sum()}, reward is "
                    f"{record.reward}"
                )


def _as_records(data: Dataset | Sequence[TimelineRecord]) -> tuple[TimelineRecord, ...]:
    if isinstance(data, Dataset):
        return data.records
    return tuple(data)


def last_touch_attribution(data: Dataset | Sequence[TimelineRecord]) -> AttributionTable:
    """All of each timeline's reward on its final display."""
    rows = []
    for record in _as_records(data):
        row = np.zeros(len(record.scenario))
        row[-1] = record.reward
        rows.append(row)
    return AttributionTable(credits=tuple(rows))


def last_touch_valuation(oracle: RewardOracle) -> TabularValuation:
    """Value a display by mean reward times the probability the timeline
    stops there: value(s) * P(S = s | S extends s).

    Without smoothing this reduces to (reward mass of timelines equal to s)
    / (mass of timelines extending s), which stays defined even when ``s``
    never completes (the product is then 0).
    """
    values: dict[Scenario, float] = {}
    for scenario, reached in oracle.superset.items():
        if oracle.alpha > 0.0:
            values[scenario] = oracle.value(scenario) * oracle.continuation_probability(
                scenario
            )
        else:
            values[scenario] = oracle.completed_reward.get(scenario, 0.0) / reached
    return TabularValuation(values=values)


def core_valuation_recursive(
    oracle: RewardOracle, scenarios: Sequence[Scenario] | None = None
) -> TabularValuation:
    """The additive valuation: value(s) minus value of s without its last
    display (0 for the empty history).

    Negative increments, which on fitted oracles are estimation noise, are
    clamped to 0 and counted on the returned model.
    """
    if scenarios is None:
        scenarios = oracle.scenarios()
    values: dict[Scenario, float] = {}
    clamped = 0
    for scenario in scenarios:
        increment = oracle.value(scenario) - oracle.value(scenario.parent)
        if increment < 0.0:
            increment = 0.0
            clamped += 1
        values[scenario] = increment
    return TabularValuation(values=values, clamp_count=clamped)


def associated_valuation(
    table: AttributionTable, data: Dataset | Sequence[TimelineRecord]
) -> TabularValuation:
    """Average the credit at position ``len(s)`` over every timeline
    extending ``s``: the valuation a credit split implies for the future."""
    records = _as_records(data)
    if len(table.credits) != len(records):
        raise EstimationError("attribution table does not align with records")
    credit_sum: dict[Scenario, float] = {}
    mass: dict[Scenario, float] = {}
    for row, record in zip(table.credits, records):
        w = record.weight
        for position, prefix in enumerate(record.scenario.prefixes(), start=1):
            credit_sum[prefix] = credit_sum.get(prefix, 0.0) + w * row[position - 1]
            mass[prefix] = mass.get(prefix, 0.0) + w
    return TabularValuation(
        values={s: credit_sum[s] / mass[s] for s in credit_sum}
    )


def fixed_point_map(
    model: ValuationModel,
    record: TimelineRecord,
    diagnostics: dict[str, int] | None = None,
) -> np.ndarray:
    """One record's credit row under the proportional-share rule.

    Credits are the record's reward split proportionally to the valuation of
    each prefix.  A zero-reward record gets a zero row; a positive-reward
    record whose prefix valuations all vanish falls back to a uniform split
    (counted in ``diagnostics['degenerate_rows']``).
    """
    length = len(record.scenario)
    if record.reward == 0.0:
        return np.zeros(length)
    values = np.empty(length)
    for position in range(1, length + 1):
        v = model.evaluate(record, position)
        if v < 0.0:
            if diagnostics is not None:
                diagnostics["negative_predictions"] = (
                    diagnostics.get("negative_predictions", 0) + 1
                )
            v = 0.0
        values[position - 1] = v
    total = values.sum()
    if total <= 0.0:
        if diagnostics is not None:
            diagnostics["degenerate_rows"] = diagnostics.get("degenerate_rows", 0) + 1
        return np.full(length, record.reward / length)
    return values / total * record.reward


@dataclass
class PrefixExamples:
    """The flattened prefix-labeled training set rebuilt by the loop.

    One entry per (record, position) pair, in deterministic record order;
    only ``labels`` changes between iterations, so learners may cache
    anything derived from the static part (e.g. hashed feature matrices).
    """

    records: tuple[TimelineRecord, ...]
    record_index: np.ndarray
    positions: np.ndarray
    scenarios: list[Scenario]
    labels: np.ndarray
    weights: np.ndarray
    cache: dict = field(default_factory=dict)

    @classmethod
    def build(cls, records: Sequence[TimelineRecord]) -> "PrefixExamples":
        record_index: list[int] = []
        positions: list[int] = []
        scenarios: list[Scenario] = []
        weights: list[float] = []
        for i, record in enumerate(records):
            for position, prefix in enumerate(record.scenario.prefixes(), start=1):
                record_index.append(i)
                positions.append(position)
                scenarios.append(prefix)
                weights.append(record.weight)
        return cls(
            records=tuple(records),
            record_index=np.asarray(record_index, dtype=np.int64),
            positions=np.asarray(positions, dtype=np.int64),
            scenarios=scenarios,
            labels=np.zeros(len(scenarios)),
            weights=np.asarray(weights),
        )

    def set_labels_from_table(self, table: AttributionTable) -> None:
        for e in range(len(self.scenarios)):
            self.labels[e] = table.credits[self.record_index[e]][self.positions[e] - 1]

    def to_table(self) -> AttributionTable:
        """Materialize the current labels as per-record credit rows."""
        boundaries = np.flatnonzero(np.diff(self.record_index)) + 1
        return AttributionTable(credits=tuple(np.split(self.labels.copy(), boundaries)))

    def __len__(self) -> int:
        return len(self.scenarios)


def evaluate_all(model: ValuationModel, examples: PrefixExamples) -> np.ndarray:
    """Model value of every prefix example; uses the model's batched path
    when it has one."""
    batched = getattr(model, "evaluate_examples", None)
    if batched is not None:
        return np.asarray(batched(examples), dtype=float)
    return np.array(
        [
            model.evaluate(examples.records[ri], int(pos))
            for ri, pos in zip(examples.record_index, examples.positions)
        ]
    )


@dataclass
class FixedPointConfig:
    tol: float = 1e-8  # relative likelihood change that counts as converged
    max_iter: int = 100
    init_floor: float = 1e-6  # positivity floor on the default last-touch init
    likelihood_floor: float = 1e-12
    split: str | None = "train"  # records driving the loop; None = all
    track_test: bool = True


@dataclass
class FixedPointState:
    """Where the loop stopped: the trained valuation, its credit table and
    the likelihood trace that shows the monotone climb."""

    iterations: int
    valuation: ValuationModel | None
    labels: AttributionTable
    likelihood_trace: list[float]
    test_likelihood_trace: list[float]
    diagnostics: dict[str, int]
    converged: bool
    record_ids: tuple[str, ...]


def floored_last_touch_init(
    records: Sequence[TimelineRecord], floor: float
) -> AttributionTable:
    """Last-touch credits with every label raised to at least ``floor``.

    The floor keeps every prefix's first trained valuation strictly
    positive, which is what guarantees the loop cannot leave coordinates
    stuck at zero.  Rows therefore overshoot the reward by up to
    ``len * floor``; every later iteration is exactly efficient.
    """
    rows = []
    for record in records:
        row = np.full(len(record.scenario), floor)
        row[-1] = max(record.reward, floor)
        rows.append(row)
    return AttributionTable(credits=tuple(rows))


def run_fixed_point(
    dataset: Dataset,
    learner,
    init: AttributionTable | None = None,
    config: FixedPointConfig | None = None,
) -> FixedPointState:
    """Iterate relabel -> retrain -> reshare until the additivity likelihood
    stops improving.

    Each iteration trains the learner on the current prefix labels, records
    the likelihood of the new valuation, then recomputes every credit row
    with :func:`fixed_point_map`.  With the exact averaging learner the
    trace is nondecreasing and the limit is the additive valuation; with
    regularized learners small dips are possible and are left visible in
    the trace.  ``max_iter = 0`` returns the untouched initial state.
    """
    config = config or FixedPointConfig()
    records = dataset.subset(config.split)
    if not records:
        raise EstimationError(f"no records in split {config.split!r}")
    test_records = dataset.subset("test") if config.track_test else ()

    examples = PrefixExamples.build(records)
    test_examples = PrefixExamples.build(test_records) if test_records else None
    rewards = np.array([r.reward for r in records])
    weights = np.array([r.weight for r in records])
    n_records = len(records)
    lengths = np.array([len(r.scenario) for r in records])
    if test_records:
        test_rewards = np.array([r.reward for r in test_records])
        test_weights = np.array([r.weight for r in test_records])

    init_table = (
        init if init is not None else floored_last_touch_init(records, config.init_floor)
    )
    if len(init_table.credits) != len(records):
        raise EstimationError("initial attribution table does not align with records")
    examples.set_labels_from_table(init_table)

    diagnostics: dict[str, int] = {"negative_predictions": 0, "degenerate_rows": 0}
    trace: list[float] = []
    test_trace: list[float] = []
    converged = False
    model: ValuationModel | None = None

    for iteration in range(config.max_iter):
        try:
            model = learner.train(examples)
        except TrainingError:
            raise
        except Exception as exc:  # pragma: no cover - defensive wrap
            raise TrainingError(f"learner failed at iteration {iteration}: {exc}") from exc

        values = evaluate_all(model, examples)
        negatives = int((values < 0.0).sum())
        if negatives:
            diagnostics["negative_predictions"] += negatives
            values = np.maximum(values, 0.0)
        masses = np.bincount(examples.record_index, weights=values, minlength=n_records)
        report = likelihood_from_masses(masses, rewards, weights, config.likelihood_floor)
        if not math.isfinite(report.value):
            raise TrainingError(f"non-finite likelihood at iteration {iteration}")
        trace.append(report.value)
        if test_examples is not None:
            test_values = np.maximum(evaluate_all(model, test_examples), 0.0)
            test_masses = np.bincount(
                test_examples.record_index,
                weights=test_values,
                minlength=len(test_records),
            )
            test_trace.append(
                likelihood_from_masses(
                    test_masses, test_rewards, test_weights, config.likelihood_floor
                ).value
            )

        # Proportional reshare (zero-reward rows stay zero; an all-zero
        # denominator under a positive reward falls back to a uniform split).
        degenerate = (masses <= 0.0) & (rewards > 0.0)
        diagnostics["degenerate_rows"] += int(degenerate.sum())
        share_scale = np.divide(
            rewards, masses, out=np.zeros(n_records), where=masses > 0.0
        )
        labels = values * share_scale[examples.record_index]
        if degenerate.any():
            uniform = np.where(degenerate, rewards / lengths, 0.0)
            labels = np.where(
                degenerate[examples.record_index], uniform[examples.record_index], labels
            )
        examples.labels = labels

        if len(trace) >= 2:
            change = abs(trace[-1] - trace[-2]) / max(abs(trace[-2]), 1.0)
            if change < config.tol:
                converged = True
                break

    table = examples.to_table() if trace else init_table
    return FixedPointState(
        iterations=len(trace),
        valuation=model,
        labels=table,
        likelihood_trace=trace,
        test_likelihood_trace=test_trace,
        diagnostics=diagnostics,
        converged=converged,
        record_ids=tuple(r.timeline_id for r in records),
    )


def mean_valuation_by_action(
    model: ValuationModel, records: Sequence[TimelineRecord]
) -> dict[int, float]:
    """Weighted mean valuation grouped by the last action of each prefix."""
    total: dict[int, float] = {}
    mass: dict[int, float] = {}
    for record in records:
        for position in range(1, len(record.scenario) + 1):
            action = record.scenario.displays[position - 1][0]
            value = model.evaluate(record, position)
            total[action] = total.get(action, 0.0) + record.weight * value
            mass[action] = mass.get(action, 0.0) + record.weight
    return {action: total[action] / mass[action] for action in sorted(total)}


def fixed_point_report(
    state: FixedPointState, records: Sequence[TimelineRecord]
) -> dict:
    """JSON-ready run summary (iterations, trace, per-action means, counters)."""
    report = {
        "iterations": state.iterations,
        "converged": state.converged,
        "likelihood_train": state.likelihood_trace,
        "likelihood_test": state.test_likelihood_trace,
        "diagnostics": state.diagnostics,
    }
    if state.valuation is not None:
        report["mean_valuation_by_action"] = {
            str(a): v
            for a, v in mean_valuation_by_action(state.valuation, records).items()
        }
    return report
