"""touchcredit: timeline-to-display credit assignment and display valuation.

The library turns timeline-level rewards (one label per user journey) into
display-level training labels and valuations for an auction bidder, via the
additive valuation and its fixed-point characterization.
"""

from .attribution import (
    AttributionTable,
    FixedPointConfig,
    FixedPointState,
    TabularValuation,
    associated_valuation,
    core_valuation_recursive,
    fixed_point_map,
    last_touch_attribution,
    last_touch_valuation,
    run_fixed_point,
)
from .oracle import GenerativeModel, RewardOracle, check_assumptions, exact_oracle, fit_oracle
from .timeline import Dataset, Scenario, TimelineRecord, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "AttributionTable",
    "Dataset",
    "FixedPointConfig",
    "FixedPointState",
    "GenerativeModel",
    "RewardOracle",
    "Scenario",
    "TabularValuation",
    "TimelineRecord",
    "associated_valuation",
    "check_assumptions",
    "core_valuation_recursive",
    "exact_oracle",
    "fit_oracle",
    "fixed_point_map",
    "last_touch_attribution",
    "last_touch_valuation",
    "load_dataset",
    "run_fixed_point",
    "save_dataset",
    "__version__",
]
