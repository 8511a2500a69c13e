from __future__ import annotations

import pytest

from touchcredit.oracle import GenerativeModel, exact_oracle
from touchcredit.timeline import Scenario

SCENARIO_A = Scenario.of(0)
SCENARIO_AB = Scenario.of(0, 1)


@pytest.fixture
def two_scenario_model() -> GenerativeModel:
    """The reference world: (A) with probability 1/3 converting at 0.5,
    (A, B) with probability 2/3 converting at 0.6."""
    return GenerativeModel(
        scenario_probabilities={SCENARIO_A: 1.0 / 3.0, SCENARIO_AB: 2.0 / 3.0},
        conversion_probabilities={SCENARIO_A: 0.5, SCENARIO_AB: 0.6},
    )


@pytest.fixture
def two_scenario_oracle(two_scenario_model):
    return exact_oracle(two_scenario_model)
