"""Qualified actions: events observed after a display (click / no click).

A qualified action is the (action, qualifier) pair; scenarios over qualified
actions run through the ordinary machinery unchanged, so the additive
valuation already handles them.  What is new is bidding time: the qualifier
is not known yet when the bid goes out, so the bid uses the ex-ante value,
the qualifier-distribution average of the qualified values.

The buyers-are-clickers fixture captures why this matters: clickers convert
on the first display, non-clickers need two displays for a 0.1 chance.
Ignoring the click qualifier, the additive value of the second display is a
population blend regardless of the click; with qualifiers it is 0 after a
click and 0.1 after no click.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import TabularValuation, core_valuation_recursive
from .errors import EstimationError, UndefinedConditionalError
from .oracle import GenerativeModel, RewardOracle
from .timeline import Dataset, Scenario

CLICK = 0
NO_CLICK = 1


@dataclass
class QualifierDistribution:
    """p(qualifier | context) with the context being where the action lands.

    The context defaults to (last action of the history, capped position)
    rather than the full history, which keeps estimates dense; ``full``
    mode keys on the exact history instead.
    """

    n_qualifiers: int
    table: dict[tuple, np.ndarray]
    context: str = "last_action"  # "last_action" | "full"
    alpha: float = 0.0
    position_cap: int = 3

    def context_key(self, history: Scenario, action: int) -> tuple:
        position = min(len(history) + 1, self.position_cap)
        if self.context == "full":
            return (history.displays, action)
        last = history.displays[-1] if len(history) else None
        return (last, action, position)

    def probabilities(self, history: Scenario, action: int) -> np.ndarray:
        """Probability vector over qualifiers for ``action`` after ``history``."""
        counts = self.table.get(self.context_key(history, action))
        if counts is None:
            if self.alpha > 0.0:
                return np.full(self.n_qualifiers, 1.0 / self.n_qualifiers)
            raise UndefinedConditionalError(
                f"no qualifier observations for action {action} after {history}"
            )
        smoothed = counts + self.alpha
        return smoothed / smoothed.sum()


def estimate_qualifier_distribution(
    dataset: Dataset,
    *,
    context: str = "last_action",
    alpha: float = 0.0,
    position_cap: int = 3,
) -> QualifierDistribution:
    """Empirical qualifier frequencies per context, with optional add-alpha
    smoothing.  Positions without a qualifier (typically the final display)
    do not contribute observations."""
    if dataset.n_qualifiers == 0:
        raise EstimationError("dataset declares no qualifiers")
    qd = QualifierDistribution(
        n_qualifiers=dataset.n_qualifiers,
        table={},
        context=context,
        alpha=alpha,
        position_cap=position_cap,
    )
    for record in dataset.records:
        displays = record.scenario.displays
        for position, (action, qualifier) in enumerate(displays, start=1):
            if qualifier is None:
                continue
            history = Scenario(displays[: position - 1])
            key = qd.context_key(history, action)
            counts = qd.table.get(key)
            if counts is None:
                counts = np.zeros(dataset.n_qualifiers)
                qd.table[key] = counts
            counts[qualifier] += record.weight
    return qd


def ex_ante_valuation(
    valuation: TabularValuation,
    qd: QualifierDistribution,
    history: Scenario,
    action: int,
) -> float:
    """Expected qualified value of taking ``action`` after ``history``,
    averaged over the qualifier the action will turn out to have."""
    probabilities = qd.probabilities(history, action)
    return float(
        sum(
            probabilities[q] * valuation.value(history.extend(action, q))
            for q in range(qd.n_qualifiers)
        )
    )


@dataclass
class ExAnteValuation:
    """Bidding-time view of a qualified valuation."""

    qualified: TabularValuation
    qd: QualifierDistribution

    def value(self, history: Scenario, action: int) -> float:
        return ex_ante_valuation(self.qualified, self.qd, history, action)


def generalized_core(
    oracle: RewardOracle, qd: QualifierDistribution | None = None
) -> tuple[TabularValuation, ExAnteValuation | None]:
    """Additive valuation over qualified scenarios plus, when a qualifier
    distribution is supplied, its ex-ante companion for bidding."""
    qualified = core_valuation_recursive(oracle)
    if qd is None:
        return qualified, None
    return qualified, ExAnteValuation(qualified=qualified, qd=qd)


@dataclass(frozen=True)
class BuyersAreClickersFixture:
    """Two user populations behind identical banners.

    Clickers (share ``click_probability``) click the first display and
    convert with probability 1; non-clickers never click and convert with
    probability 0.1 once they have seen two displays.  A second display's
    qualifier is never observed (nothing follows it).

    The rewards do not depend on the display policy, but the fixed-point
    route needs every sub-scenario to complete sometimes, so the policy
    stops after one display for a fraction of users.
    """

    click_probability: float
    qualified_model: GenerativeModel
    unqualified_model: GenerativeModel

    @property
    def exact_qualifier_distribution(self) -> QualifierDistribution:
        p = self.click_probability
        return QualifierDistribution(
            n_qualifiers=2,
            table={(None, 0, 1): np.array([p, 1.0 - p])},
        )


def buyers_are_clickers(
    click_probability: float, single_display_share: float = 0.2
) -> BuyersAreClickersFixture:
    """Build the fixture for a clicker population share ``p``."""
    p = click_probability
    if not 0.0 < p < 1.0:
        raise EstimationError("clicker share must be in (0, 1)")
    if not 0.0 < single_display_share < 1.0:
        raise EstimationError("single-display share must be in (0, 1)")
    stop = single_display_share
    clicked = Scenario(((0, CLICK),))
    not_clicked = Scenario(((0, NO_CLICK),))
    clicked_then = clicked.extend(0)
    not_clicked_then = not_clicked.extend(0)
    qualified = GenerativeModel(
        scenario_probabilities={
            clicked: stop * p,
            not_clicked: stop * (1.0 - p),
            clicked_then: (1.0 - stop) * p,
            not_clicked_then: (1.0 - stop) * (1.0 - p),
        },
        conversion_probabilities={
            clicked: 1.0,
            not_clicked: 0.0,
            clicked_then: 1.0,
            not_clicked_then: 0.1,
        },
    )
    one = Scenario.of(0)
    two = Scenario.of(0, 0)
    unqualified = GenerativeModel(
        scenario_probabilities={one: stop, two: 1.0 - stop},
        conversion_probabilities={one: p, two: p + 0.1 * (1.0 - p)},
    )
    return BuyersAreClickersFixture(
        click_probability=p,
        qualified_model=qualified,
        unqualified_model=unqualified,
    )
