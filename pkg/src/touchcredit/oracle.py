"""Reward estimation: mean reward per scenario and the scenario distribution.

The reward oracle answers two questions about a scenario ``s``:

* ``value(s)``: the average reward earned by timelines that realize ``s``
  (default estimator: mean over records whose scenario equals ``s`` exactly;
  a prefix-pooled variant averages over every record extending ``s``).
* ``continuation_probability(s)``: how often a timeline reaching ``s`` stops
  there, i.e. the empirical P(S = s | S extends s).

Oracles are either fitted from data or built exactly from a declared
generative model (no sampling noise), which is what the closed-form checks
use.  Rewards are assumed monotone along prefixes (more displays never lower
the average reward) and every extension's sub-scenario should appear in the
data; both assumptions are *checked and reported*, never enforced, because
the fixed-point pipeline tolerates violations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import (
    DatasetParseError,
    EstimationError,
    UndefinedConditionalError,
    UnseenScenarioError,
)
from .timeline import Dataset, Scenario


@dataclass(frozen=True)
class GenerativeModel:
    """Exact description of a timeline-generating process.

    ``scenario_probabilities`` is the distribution of completed timelines;
    ``conversion_probabilities`` gives the mean reward of every scenario,
    including intermediate prefixes that never complete.
    """

    scenario_probabilities: dict[Scenario, float]
    conversion_probabilities: dict[Scenario, float]

    def __post_init__(self) -> None:
        total = sum(self.scenario_probabilities.values())
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise EstimationError(f"scenario probabilities sum to {total}, not 1")
        if any(p < 0 for p in self.scenario_probabilities.values()):
            raise EstimationError("negative scenario probability")
        for s, v in self.conversion_probabilities.items():
            if not 0.0 <= v <= 1.0:
                raise EstimationError(f"conversion probability {v} for {s} outside [0, 1]")
        for s in self.scenario_probabilities:
            for prefix in s.prefixes():
                if prefix not in self.conversion_probabilities:
                    raise EstimationError(
                        f"no conversion probability declared for prefix {prefix}"
                    )

    def scenarios(self) -> list[Scenario]:
        """Every scenario with a declared reward, short prefixes first."""
        return sorted(self.conversion_probabilities, key=lambda s: (len(s), s.encode()))


@dataclass
class RewardOracle:
    """Per-scenario reward means plus the counts needed for conditionals.

    ``completed[s]`` is the (weighted) mass of timelines equal to ``s``;
    ``superset[s]`` the mass of timelines extending ``s`` (equality
    included).  For exact oracles these are probabilities and ``values``
    covers every declared scenario, including zero-mass prefixes.
    """

    mode: str  # "empirical" | "exact"
    values: dict[Scenario, float]
    completed: dict[Scenario, float]
    completed_reward: dict[Scenario, float]
    superset: dict[Scenario, float]
    superset_reward: dict[Scenario, float]
    total_mass: float
    estimator: str = "exact"  # "exact" (match full scenario) | "pooled"
    on_missing: str = "error"  # "error" | "zero"
    alpha: float = 0.0  # add-alpha smoothing for continuation probabilities

    def value(self, scenario: Scenario) -> float:
        """Estimated mean reward of ``scenario`` (0 for the empty anchor)."""
        if len(scenario) == 0:
            return 0.0
        if scenario in self.values:
            return self.values[scenario]
        if self.on_missing == "zero":
            return 0.0
        raise UnseenScenarioError(f"no reward estimate for {scenario}")

    def knows(self, scenario: Scenario) -> bool:
        return len(scenario) == 0 or scenario in self.values

    def continuation_probability(self, scenario: Scenario) -> float:
        """P(S = s | S extends s), optionally add-alpha smoothed."""
        stopped = self.completed.get(scenario, 0.0) + self.alpha
        reached = self.superset.get(scenario, 0.0) + 2.0 * self.alpha
        if reached <= 0.0:
            raise UndefinedConditionalError(
                f"{scenario} never observed as a prefix of any timeline"
            )
        return stopped / reached

    def scenarios(self) -> list[Scenario]:
        return sorted(self.values, key=lambda s: (len(s), s.encode()))


def fit_oracle(
    dataset: Dataset,
    *,
    split: str | None = None,
    estimator: str = "exact",
    on_missing: str = "error",
    alpha: float = 0.0,
) -> RewardOracle:
    """Estimate the reward oracle from observed timelines.

    Grouping is by the full (action, qualifier) sequence.  Partition merges
    are plain sums of counts and reward totals, so the result does not
    depend on record order.
    """
    if estimator not in ("exact", "pooled"):
        raise ValueError(f"unknown estimator {estimator!r}")
    records = dataset.subset(split)
    if not records:
        raise EstimationError("cannot fit an oracle on an empty dataset")
    completed: dict[Scenario, float] = {}
    completed_reward: dict[Scenario, float] = {}
    superset: dict[Scenario, float] = {}
    superset_reward: dict[Scenario, float] = {}
    total = 0.0
    for record in records:
        w = record.weight
        wr = w * record.reward
        total += w
        s = record.scenario
        completed[s] = completed.get(s, 0.0) + w
        completed_reward[s] = completed_reward.get(s, 0.0) + wr
        for prefix in s.prefixes():
            superset[prefix] = superset.get(prefix, 0.0) + w
            superset_reward[prefix] = superset_reward.get(prefix, 0.0) + wr
    if estimator == "exact":
        values = {s: completed_reward[s] / completed[s] for s in completed}
    else:
        values = {s: superset_reward[s] / superset[s] for s in superset}
    return RewardOracle(
        mode="empirical",
        values=values,
        completed=completed,
        completed_reward=completed_reward,
        superset=superset,
        superset_reward=superset_reward,
        total_mass=total,
        estimator=estimator,
        on_missing=on_missing,
        alpha=alpha,
    )


def exact_oracle(
    model: GenerativeModel, *, on_missing: str = "error", alpha: float = 0.0
) -> RewardOracle:
    """Build the oracle analytically from a generative model."""
    completed = dict(model.scenario_probabilities)
    values = dict(model.conversion_probabilities)
    completed_reward = {s: p * values[s] for s, p in completed.items()}
    superset: dict[Scenario, float] = {}
    superset_reward: dict[Scenario, float] = {}
    for s, p in completed.items():
        for prefix in s.prefixes():
            superset[prefix] = superset.get(prefix, 0.0) + p
            superset_reward[prefix] = superset_reward.get(prefix, 0.0) + p * values[s]
    return RewardOracle(
        mode="exact",
        values=values,
        completed=completed,
        completed_reward=completed_reward,
        superset=superset,
        superset_reward=superset_reward,
        total_mass=1.0,
        on_missing=on_missing,
        alpha=alpha,
    )


@dataclass
class AssumptionReport:
    """Violations of the two working assumptions, reported not enforced."""

    missing_prefixes: list[tuple[Scenario, Scenario]] = field(default_factory=list)
    monotonicity_violations: list[tuple[Scenario, Scenario, float, float]] = field(
        default_factory=list
    )

    @property
    def clean(self) -> bool:
        return not self.missing_prefixes and not self.monotonicity_violations

    def summary(self) -> dict:
        worst_gap = max(
            (before - after for _, _, before, after in self.monotonicity_violations),
            default=0.0,
        )
        return {
            "missing_prefix_count": len(self.missing_prefixes),
            "monotonicity_violation_count": len(self.monotonicity_violations),
            "worst_monotonicity_gap": worst_gap,
        }


def check_assumptions(oracle: RewardOracle, *, tolerance: float = 1e-12) -> AssumptionReport:
    """Report completed scenarios with unobserved sub-scenarios and every
    observed prefix pair whose estimated reward decreases along the prefix."""
    report = AssumptionReport()
    for s, mass in oracle.completed.items():
        if mass <= 0:
            continue
        for prefix in s.prefixes()[:-1]:
            if oracle.completed.get(prefix, 0.0) <= 0:
                report.missing_prefixes.append((s, prefix))
    for s, value in oracle.values.items():
        for prefix in s.prefixes()[:-1]:
            if prefix in oracle.values:
                before = oracle.values[prefix]
                if value < before - tolerance:
                    report.monotonicity_violations.append((prefix, s, before, value))
    return report


def save_oracle_table(oracle: RewardOracle, path) -> None:
    """Write the value table as sorted ``scenario TAB count TAB mean_reward``."""
    rows = []
    for scenario in oracle.scenarios():
        count = oracle.completed.get(scenario, 0.0)
        rows.append(f"{scenario.encode()}\t{count!r}\t{oracle.values[scenario]!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(rows) + ("\n" if rows else ""))


def load_oracle_table(path, **kwargs) -> RewardOracle:
    """Rebuild an oracle from an exported table.

    The table stores exact-match groups, so superset masses are recomputed
    from the completed rows; pooled-mode values cannot be recovered.
    """
    completed: dict[Scenario, float] = {}
    completed_reward: dict[Scenario, float] = {}
    values: dict[Scenario, float] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetParseError("expected 3 fields", line_number=line_number)
            scenario = Scenario.decode(parts[0])
            try:
                count, mean = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DatasetParseError(str(exc), line_number=line_number) from exc
            values[scenario] = mean
            if count > 0:
                completed[scenario] = count
                completed_reward[scenario] = count * mean
    superset: dict[Scenario, float] = {}
    superset_reward: dict[Scenario, float] = {}
    for s, mass in completed.items():
        for prefix in s.prefixes():
            superset[prefix] = superset.get(prefix, 0.0) + mass
            superset_reward[prefix] = superset_reward.get(prefix, 0.0) + completed_reward[s]
    return RewardOracle(
        mode="empirical",
        values=values,
        completed=completed,
        completed_reward=completed_reward,
        superset=superset,
        superset_reward=superset_reward,
        total_mass=sum(completed.values()),
        **kwargs,
    )


def oracle_report_json(oracle: RewardOracle, report: AssumptionReport) -> str:
    """JSON summary used by the CLI's diagnostics output."""
    payload = {
        "mode": oracle.mode,
        "estimator": oracle.estimator,
        "scenario_count": len(oracle.values),
        "total_mass": oracle.total_mass,
        "assumptions": report.summary(),
    }
    return json.dumps(payload, indent=2, sort_keys=True)
