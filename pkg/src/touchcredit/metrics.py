"""Evaluation criteria for display valuations.

The central quantity is the additivity likelihood of a valuation on a set of
timelines:

    mean over timelines of  y * ln(sum_q v(s^q)) - sum_q v(s^q)

where the sum runs over the timeline's prefixes and ``y`` is its reward.  It
is maximized exactly by the additive valuation, so it doubles as the
convergence criterion of the fixed-point loop and as a quality score for any
backend.  The population objective and its minorizing surrogate are exposed
for verification; ranking quality uses a noisy-OR conversion probability per
timeline and average precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MetricError, UndefinedMetricError
from .oracle import GenerativeModel
from .timeline import Scenario, TimelineRecord


@dataclass
class LikelihoodReport:
    value: float
    per_timeline: np.ndarray
    floored_count: int
    total_weight: float


def likelihood_from_masses(
    masses: np.ndarray,
    rewards: np.ndarray,
    weights: np.ndarray,
    floor: float = 1e-12,
) -> LikelihoodReport:
    """Additivity likelihood given each timeline's summed prefix valuation.

    Timelines with positive reward but zero predicted mass would send the
    log to -inf; the sum inside the log is floored at ``floor`` instead and
    the occurrences are counted.
    """
    positive = rewards > 0.0
    floored = int((positive & (masses < floor)).sum())
    safe = np.maximum(masses, floor)
    terms = np.where(positive, rewards * np.log(safe), 0.0) - masses
    total_weight = float(weights.sum())
    value = float(np.dot(weights, terms) / total_weight)
    if not math.isfinite(value):
        raise MetricError("additivity likelihood is not finite")
    return LikelihoodReport(
        value=value, per_timeline=terms, floored_count=floored, total_weight=total_weight
    )


def additivity_likelihood(
    model, records: Sequence[TimelineRecord], floor: float = 1e-12
) -> LikelihoodReport:
    """Weighted mean additivity likelihood of ``model`` over ``records``."""
    if not records:
        raise MetricError("no records to evaluate")
    masses = np.empty(len(records))
    rewards = np.empty(len(records))
    weights = np.empty(len(records))
    for i, record in enumerate(records):
        mass = 0.0
        for position in range(1, len(record.scenario) + 1):
            mass += model.evaluate(record, position)
        masses[i] = mass
        rewards[i] = record.reward
        weights[i] = record.weight
    return likelihood_from_masses(masses, rewards, weights, floor)


def _value_of(valuation, scenario: Scenario) -> float:
    if hasattr(valuation, "value"):
        return valuation.value(scenario)
    return valuation[scenario]


def mm_objective(valuation, model: GenerativeModel) -> float:
    """Population objective: expected ``V(S) * ln(sum of prefix values) -
    sum of prefix values`` under the model's timeline distribution.

    Concave in the (tabular) valuation and maximized exactly by the additive
    one.  Requires positive prefix mass wherever the log has weight.
    """
    total = 0.0
    for scenario, probability in model.scenario_probabilities.items():
        if probability == 0.0:
            continue
        reward = model.conversion_probabilities[scenario]
        mass = sum(_value_of(valuation, p) for p in scenario.prefixes())
        if reward > 0.0:
            if mass <= 0.0:
                raise MetricError(f"zero prefix mass with positive reward on {scenario}")
            total += probability * (reward * math.log(mass) - mass)
        else:
            total += probability * (-mass)
    return total


def mm_surrogate(valuation, anchor, model: GenerativeModel) -> float:
    """The surrogate minorizer of :func:`mm_objective` around ``anchor``.

    Equals the objective when ``valuation is anchor`` and never exceeds it
    elsewhere; its maximizer over the valuation argument is the associated
    valuation of the anchor's proportional credit split.
    """
    total = 0.0
    for scenario, probability in model.scenario_probabilities.items():
        if probability == 0.0:
            continue
        reward = model.conversion_probabilities[scenario]
        prefixes = scenario.prefixes()
        anchor_values = [_value_of(anchor, p) for p in prefixes]
        new_values = [_value_of(valuation, p) for p in prefixes]
        anchor_mass = sum(anchor_values)
        term = 0.0
        for a_j, n_j in zip(anchor_values, new_values):
            if reward > 0.0:
                if a_j <= 0.0 or n_j <= 0.0:
                    raise MetricError(
                        f"surrogate needs positive valuations on prefixes of {scenario}"
                    )
                share = a_j * reward / anchor_mass
                term += share * math.log(n_j / a_j * anchor_mass)
            term -= n_j
        total += probability * term
    return total


def timeline_conversion_probability(
    model, record: TimelineRecord, delta: float = 0.95
) -> float:
    """Noisy-OR conversion probability of a whole timeline.

    Each display converts independently with its (clamped to [0, 1])
    valuation; the product is damped by ``delta`` per display to reflect
    diminishing returns of longer timelines.
    """
    miss = 1.0
    for position in range(1, len(record.scenario) + 1):
        p = min(max(model.evaluate(record, position), 0.0), 1.0)
        miss *= 1.0 - p
    return (1.0 - miss) * delta ** len(record.scenario)


def score_timelines(
    model, records: Sequence[TimelineRecord], delta: float = 0.95
) -> tuple[np.ndarray, int]:
    """Conversion-probability scores for ranking, plus how many display
    valuations had to be clamped into [0, 1]."""
    scores = np.empty(len(records))
    clamped = 0
    for i, record in enumerate(records):
        for position in range(1, len(record.scenario) + 1):
            v = model.evaluate(record, position)
            if v < 0.0 or v > 1.0:
                clamped += 1
        scores[i] = timeline_conversion_probability(model, record, delta)
    return scores, clamped


def mean_average_precision(scores, labels) -> float:
    """Average precision of ranking binary ``labels`` by ``scores``.

    Ties are broken by original input order (stable sort), so the result is
    deterministic for a fixed record sequence.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels must align")
    n_pos = int((labels > 0).sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order] > 0
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return float((hits[ranked] / ranks[ranked]).sum() / n_pos)


def precision_recall_points(scores, labels) -> np.ndarray:
    """(recall, precision) at every cutoff, ranked as in
    :func:`mean_average_precision`; exportable as plot-ready CSV."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int((labels > 0).sum())
    if n_pos == 0:
        raise UndefinedMetricError("precision-recall needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order] > 0
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return np.column_stack((hits / n_pos, hits / ranks))
