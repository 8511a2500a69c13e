"""Generative models and experiment drivers for the synthetic studies.

The workhorse is a two-scenario world: one display of type A (conversion
probability 0.5) with probability ``p``, otherwise display A followed by a
display of type B (conversion probability 0.6).  Type B adds little lift yet
always sits right before conversion, which is exactly the situation where
last-touch credit goes wrong.  The robustness sweep varies ``p`` while
keeping the reward function fixed: additive valuations must not move,
last-touch ones do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attribution import (
    FixedPointConfig,
    core_valuation_recursive,
    last_touch_valuation,
    run_fixed_point,
)
from .errors import EstimationError
from .oracle import GenerativeModel, exact_oracle, fit_oracle
from .timeline import Dataset, Scenario, TimelineRecord

ACTION_A = 0
ACTION_B = 1
SCENARIO_A = Scenario.of(ACTION_A)
SCENARIO_AB = Scenario.of(ACTION_A, ACTION_B)


@dataclass(frozen=True)
class TwoScenarioModel:
    """The two-scenario world: (A) with probability p, else (A, B)."""

    p: float = 1.0 / 3.0
    conversion_single: float = 0.5
    conversion_pair: float = 0.6

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise EstimationError(f"p must be in (0, 1], got {self.p}")
        for c in (self.conversion_single, self.conversion_pair):
            if not 0.0 <= c <= 1.0:
                raise EstimationError(f"conversion probability {c} outside [0, 1]")

    def to_generative_model(self) -> GenerativeModel:
        probabilities = {SCENARIO_A: self.p}
        if self.p < 1.0:
            probabilities[SCENARIO_AB] = 1.0 - self.p
        return GenerativeModel(
            scenario_probabilities=probabilities,
            conversion_probabilities={
                SCENARIO_A: self.conversion_single,
                SCENARIO_AB: self.conversion_pair,
            },
        )


def sample(model: TwoScenarioModel, size: int, seed: int) -> Dataset:
    """Draw ``size`` timelines from the two-scenario model, binary rewards."""
    rng = np.random.default_rng(seed)
    is_single = rng.random(size) < model.p
    conversion_p = np.where(is_single, model.conversion_single, model.conversion_pair)
    converted = rng.random(size) < conversion_p
    width = max(len(str(size)), 1)
    records = tuple(
        TimelineRecord(
            timeline_id=f"t{i:0{width}d}",
            scenario=SCENARIO_A if is_single[i] else SCENARIO_AB,
            reward=float(converted[i]),
        )
        for i in range(size)
    )
    return Dataset(n_actions=2, n_qualifiers=0, max_length=2, records=records)


def exact_dataset(model: GenerativeModel) -> Dataset:
    """One weighted record per completed scenario, reward = mean reward.

    Every estimator downstream is a weighted mean, so fitting on this
    dataset reproduces the exact oracle: it is how closed-form runs of the
    fixed-point loop are driven.
    """
    records = []
    n_actions = 1
    n_qualifiers = 0
    max_length = 1
    for i, (scenario, probability) in enumerate(
        sorted(model.scenario_probabilities.items(), key=lambda kv: kv[0].encode())
    ):
        if probability <= 0.0:
            continue
        for action, qualifier in scenario.displays:
            n_actions = max(n_actions, action + 1)
            if qualifier is not None:
                n_qualifiers = max(n_qualifiers, qualifier + 1)
        max_length = max(max_length, len(scenario))
        records.append(
            TimelineRecord(
                timeline_id=f"exact{i:03d}",
                scenario=scenario,
                reward=model.conversion_probabilities[scenario],
                weight=probability,
            )
        )
    return Dataset(
        n_actions=n_actions,
        n_qualifiers=n_qualifiers,
        max_length=max_length,
        records=tuple(records),
    )


def sample_generative(model: GenerativeModel, size: int, seed: int) -> Dataset:
    """Draw timelines from any generative model, binary rewards."""
    rng = np.random.default_rng(seed)
    scenarios = sorted(model.scenario_probabilities, key=lambda s: s.encode())
    probabilities = np.array([model.scenario_probabilities[s] for s in scenarios])
    picks = rng.choice(len(scenarios), size=size, p=probabilities)
    draws = rng.random(size)
    n_actions = 1
    n_qualifiers = 0
    max_length = 1
    for s in model.conversion_probabilities:
        for action, qualifier in s.displays:
            n_actions = max(n_actions, action + 1)
            if qualifier is not None:
                n_qualifiers = max(n_qualifiers, qualifier + 1)
        max_length = max(max_length, len(s))
    width = max(len(str(size)), 1)
    records = tuple(
        TimelineRecord(
            timeline_id=f"t{i:0{width}d}",
            scenario=scenarios[picks[i]],
            reward=float(draws[i] < model.conversion_probabilities[scenarios[picks[i]]]),
        )
        for i in range(size)
    )
    return Dataset(
        n_actions=n_actions,
        n_qualifiers=n_qualifiers,
        max_length=max_length,
        records=records,
    )


def motivating_example_model() -> GenerativeModel:
    """A world where appending a type-B display never changes the reward,
    yet type B sits last in most converting timelines."""
    s_a = SCENARIO_A
    s_ab = SCENARIO_AB
    s_aa = Scenario.of(ACTION_A, ACTION_A)
    s_aab = Scenario.of(ACTION_A, ACTION_A, ACTION_B)
    return GenerativeModel(
        scenario_probabilities={s_a: 0.3, s_ab: 0.4, s_aab: 0.3},
        conversion_probabilities={s_a: 0.4, s_ab: 0.4, s_aa: 0.6, s_aab: 0.6},
    )


def random_monotone_model(
    rng: np.random.Generator,
    max_actions: int = 4,
    max_length: int = 3,
) -> GenerativeModel:
    """Random small model with full prefix support and monotone rewards.

    The completed-scenario set is prefix closed (every prefix of a supported
    timeline also completes with positive probability) and every display's
    additive increment is bounded away from zero.  Both keep the model in
    the regime where the fixed-point limit is the additive valuation and
    the approach to it is linear; increments at the zero boundary are
    approached only sublinearly (see the qualifier boundary test).
    """
    n_actions = int(rng.integers(1, max_actions + 1))
    depth = int(rng.integers(1, max_length + 1))
    scenarios: list[Scenario] = []
    frontier = [Scenario.of(int(a)) for a in range(n_actions) if rng.random() < 0.8]
    if not frontier:
        frontier = [Scenario.of(0)]
    while frontier:
        scenario = frontier.pop()
        scenarios.append(scenario)
        if len(scenario) < depth:
            for action in range(n_actions):
                if rng.random() < 0.5:
                    frontier.append(scenario.extend(action))
    raw = rng.random(len(scenarios)) + 0.05
    probabilities = {s: float(p / raw.sum()) for s, p in zip(scenarios, raw)}
    conversions: dict[Scenario, float] = {}
    for scenario in sorted(scenarios, key=len):
        base = conversions.get(scenario.parent, 0.0) if len(scenario) > 1 else 0.0
        lift = (0.1 + 0.9 * float(rng.random())) * (1.0 - base) * 0.8
        conversions[scenario] = min(1.0, base + lift)
    return GenerativeModel(
        scenario_probabilities=probabilities, conversion_probabilities=conversions
    )


@dataclass
class SweepRow:
    p: float
    method: str
    display_type: str
    valuation: float


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)
    errors: dict[float, str] = field(default_factory=dict)
    fixed_point_gaps: dict[float, float] = field(default_factory=dict)

    def valuations(self, method: str, display_type: str) -> dict[float, float]:
        return {
            row.p: row.valuation
            for row in self.rows
            if row.method == method and row.display_type == display_type
        }

    def csv_lines(self) -> list[str]:
        lines = ["p,method,display_type,valuation"]
        lines.extend(
            f"{row.p!r},{row.method},{row.display_type},{row.valuation!r}"
            for row in self.rows
        )
        return lines


def robustness_sweep(
    p_values: Sequence[float],
    *,
    sample_size: int = 0,
    seed: int | None = None,
    config: FixedPointConfig | None = None,
    learner_factory: Callable[[], object] | None = None,
    verify_fixed_point: bool = False,
) -> SweepReport:
    """Additive vs last-touch valuations across scenario-mix probabilities.

    With ``sample_size == 0`` the oracles are exact and the additive column
    is the closed-form increment, so it cannot move with ``p`` by
    construction; ``verify_fixed_point`` additionally runs the full loop at
    each point and records its distance from the closed form.  With a
    positive ``sample_size`` the whole pipeline (sampling, fitting,
    fixed-point loop) runs at each point.
    """
    from .learners import AveragingLearner

    report = SweepReport()
    make_learner = learner_factory or AveragingLearner
    for p in p_values:
        if not 0.0 < p < 1.0:
            raise EstimationError(f"sweep probabilities must be in (0, 1), got {p}")
        try:
            model = TwoScenarioModel(p=p)
            generative = model.to_generative_model()
            if sample_size > 0:
                if seed is None:
                    raise EstimationError("a seed is required for sampled sweeps")
                dataset = sample(model, sample_size, seed)
                oracle = fit_oracle(dataset)
                state = run_fixed_point(dataset, make_learner(), config=config)
                core = state.valuation
            else:
                dataset = exact_dataset(generative)
                oracle = exact_oracle(generative)
                core = core_valuation_recursive(oracle)
                if verify_fixed_point:
                    state = run_fixed_point(dataset, make_learner(), config=config)
                    gap = max(
                        abs(state.valuation.value(s) - core.value(s))
                        for s in (SCENARIO_A, SCENARIO_AB)
                    )
                    report.fixed_point_gaps[p] = gap
            last_touch = last_touch_valuation(oracle)
            for method, valuation in (("core", core), ("last_touch", last_touch)):
                report.rows.append(
                    SweepRow(p, method, "A", valuation.value(SCENARIO_A))
                )
                report.rows.append(
                    SweepRow(p, method, "B", valuation.value(SCENARIO_AB))
                )
        except Exception as exc:  # noqa: BLE001 - partial reports are the contract
            report.errors[p] = f"{type(exc).__name__}: {exc}"
    return report


def sample_funnel_corpus(
    size: int,
    seed: int,
    *,
    n_features: int = 10,
    vocabulary: int = 5,
    intent_lift: float = 0.25,
) -> Dataset:
    """Larger synthetic corpus with categorical context features.

    Three timeline shapes -- (A), (A, B), (A, B, B) -- with monotone base
    conversion probabilities 0.15 / 0.30 / 0.35, so the trailing type-B
    displays carry little incremental value while dominating last
    positions.  The first categorical feature is an informative user-intent
    segment (``cat0=warm`` adds ``intent_lift`` to the conversion
    probability); the rest are uninformative noise from a small
    vocabulary.  This is the regime where proportional-credit training
    beats last-touch training on both likelihood and ranking.
    """
    shapes = (
        (Scenario.of(ACTION_A), 0.30, 0.15),
        (Scenario.of(ACTION_A, ACTION_B), 0.50, 0.30),
        (Scenario.of(ACTION_A, ACTION_B, ACTION_B), 0.20, 0.35),
    )
    rng = np.random.default_rng(seed)
    shape_p = np.array([w for _, w, _ in shapes])
    picks = rng.choice(len(shapes), size=size, p=shape_p)
    warm = rng.random(size) < 0.5
    width = max(len(str(size)), 1)
    records = []
    for i in range(size):
        scenario, _, conversion = shapes[picks[i]]
        if warm[i]:
            conversion = min(1.0, conversion + intent_lift)
        segment = "warm" if warm[i] else "cold"
        features = tuple(
            {
                "cat0=" + segment: 1.0,
                **{
                    f"cat{j}=v{rng.integers(0, vocabulary)}": 1.0
                    for j in range(1, n_features)
                },
            }
            for _ in range(len(scenario))
        )
        records.append(
            TimelineRecord(
                timeline_id=f"u{i:0{width}d}",
                scenario=scenario,
                reward=float(rng.random() < conversion),
                display_features=features,
            )
        )
    return Dataset(n_actions=2, n_qualifiers=0, max_length=3, records=tuple(records))


def binomial_band(probability: float, count: int, sigmas: float = 3.0) -> float:
    """Half-width of the +-sigmas band for a binomial mean estimate."""
    return sigmas * math.sqrt(probability * (1.0 - probability) / count)
