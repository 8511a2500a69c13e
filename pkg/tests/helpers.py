"""Shared helpers for driving the fixed-point loop to its numerical limit."""

from __future__ import annotations

from touchcredit.attribution import FixedPointConfig, FixedPointState, run_fixed_point
from touchcredit.timeline import Dataset


def drive_to_limit(
    dataset: Dataset,
    learner,
    *,
    sup_tol: float = 1e-10,
    chunk: int = 400,
    max_chunks: int = 60,
    init=None,
) -> FixedPointState:
    """Iterate in chunks until the valuation stops moving in sup norm.

    The loop's own stopping rule watches the likelihood, which can flatten
    while a low-mass coordinate still crawls; limit checks in tests compare
    successive valuation snapshots instead.
    """
    state = run_fixed_point(
        dataset, learner, init=init, config=FixedPointConfig(max_iter=chunk, tol=0.0)
    )
    previous = dict(state.valuation.values)
    for _ in range(max_chunks - 1):
        state = run_fixed_point(
            dataset,
            learner,
            init=state.labels,
            config=FixedPointConfig(max_iter=chunk, tol=0.0),
        )
        current = dict(state.valuation.values)
        movement = max(abs(current[s] - previous[s]) for s in current)
        if movement < sup_tol:
            break
        previous = current
    return state
