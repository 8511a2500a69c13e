"""Numerical check that incremental bidding wins sealed second-price
auctions.

A bidder facing a display opportunity earns ``v_win`` on average after
winning and ``v_lose`` after losing (the value of the history it already
has).  Against any distribution of the highest competing bid, bidding the
increment ``v_win - v_lose`` weakly dominates every other bid; this module
brute-forces that statement over discretized competition densities and a
dense bid grid and reports the worst violation found.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError


@dataclass(frozen=True)
class CompetitionDensity:
    """Discretized distribution of the highest competing bid."""

    bids: np.ndarray
    mass: np.ndarray

    def __post_init__(self) -> None:
        bids = np.asarray(self.bids, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "mass", mass)
        if bids.shape != mass.shape or bids.ndim != 1:
            raise EstimationError("bids and mass must be aligned 1-d arrays")
        if (np.diff(bids) < 0).any():
            raise EstimationError("bid grid must be ascending")
        if (mass < 0).any() or not np.isclose(mass.sum(), 1.0, atol=1e-9):
            raise EstimationError("mass must be nonnegative and sum to 1")


def expected_utility(
    bid: float | np.ndarray,
    v_win: float,
    v_lose: float,
    density: CompetitionDensity,
) -> float | np.ndarray:
    """Expected value of bidding ``bid``: win (and pay the competing price)
    whenever the competition is at or below the bid, keep ``v_lose``
    otherwise.  Ties at the bid count as wins."""
    bids = np.atleast_1d(np.asarray(bid, dtype=float))
    win_value = np.cumsum((v_win - density.bids) * density.mass)
    cum_mass = np.cumsum(density.mass)
    positions = np.searchsorted(density.bids, bids, side="right")
    won = np.where(positions > 0, win_value[positions - 1], 0.0)
    lose_mass = 1.0 - np.where(positions > 0, cum_mass[positions - 1], 0.0)
    utilities = won + v_lose * lose_mass
    return utilities if np.ndim(bid) else float(utilities[0])


@dataclass
class ProfileCheck:
    density_index: int
    v_win: float
    v_lose: float
    best_grid_bid: float
    max_violation: float


@dataclass
class MyopicReport:
    """Worst case over all checked profiles of how much any grid bid beats
    the increment bid."""

    checks: list[ProfileCheck]
    tolerance: float

    @property
    def max_violation(self) -> float:
        return max((c.max_violation for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_json_dict(self) -> dict:
        def row(check: ProfileCheck) -> dict:
            return {
                "density": check.density_index,
                "v_win": check.v_win,
                "v_lose": check.v_lose,
                "best_grid_bid": check.best_grid_bid,
                "violation": check.max_violation,
            }

        return {
            "profiles": len(self.checks),
            "tolerance": self.tolerance,
            "max_violation": self.max_violation,
            "passed": self.passed,
            "worst": [
                row(c) for c in sorted(self.checks, key=lambda c: -c.max_violation)[:5]
            ],
            "violations": [row(c) for c in self.checks],
        }


def verify_myopic_optimality(
    value_pairs: list[tuple[float, float]],
    densities: list[CompetitionDensity],
    bid_grid: np.ndarray,
    tolerance: float = 1e-9,
) -> MyopicReport:
    """Assert the increment bid is never beaten by more than ``tolerance``.

    For each (v_win, v_lose) pair and each density, evaluates the utility of
    every grid bid and compares against bidding exactly v_win - v_lose.
    """
    checks: list[ProfileCheck] = []
    for v_win, v_lose in value_pairs:
        if not v_win >= v_lose >= 0.0:
            raise EstimationError(f"need v_win >= v_lose >= 0, got {(v_win, v_lose)}")
        increment = v_win - v_lose
        for index, density in enumerate(densities):
            utilities = expected_utility(bid_grid, v_win, v_lose, density)
            reference = expected_utility(increment, v_win, v_lose, density)
            best = int(np.argmax(utilities))
            checks.append(
                ProfileCheck(
                    density_index=index,
                    v_win=v_win,
                    v_lose=v_lose,
                    best_grid_bid=float(bid_grid[best]),
                    max_violation=float(utilities[best] - reference),
                )
            )
    return MyopicReport(checks=checks, tolerance=tolerance)


def random_density(
    rng: np.random.Generator, n_points: int = 64, high: float = 1.5
) -> CompetitionDensity:
    """Random discrete competition profile on [0, high]."""
    bids = np.sort(rng.uniform(0.0, high, size=n_points))
    mass = rng.random(n_points) + 1e-3
    return CompetitionDensity(bids=bids, mass=mass / mass.sum())
