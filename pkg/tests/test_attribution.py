from __future__ import annotations

import numpy as np
import pytest

from touchcredit.attribution import (
    AttributionTable,
    FixedPointConfig,
    TabularValuation,
    associated_valuation,
    core_valuation_recursive,
    fixed_point_map,
    floored_last_touch_init,
    last_touch_attribution,
    last_touch_valuation,
    run_fixed_point,
)
from touchcredit.learners import AveragingLearner
from touchcredit.oracle import exact_oracle, fit_oracle
from touchcredit.synth import (
    TwoScenarioModel,
    exact_dataset,
    motivating_example_model,
    random_monotone_model,
    sample,
)
from touchcredit.timeline import Dataset, Scenario, TimelineRecord

A = Scenario.of(0)
AB = Scenario.of(0, 1)


class TestLastTouch:
    def test_credit_goes_to_last_position(self):
        records = (
            TimelineRecord(timeline_id="a", scenario=AB, reward=0.6),
            TimelineRecord(timeline_id="b", scenario=A, reward=0.5),
            TimelineRecord(timeline_id="c", scenario=AB, reward=0.0),
        )
        table = last_touch_attribution(records)
        assert table.row(0).tolist() == [0.0, 0.6]
        assert table.row(1).tolist() == [0.5]
        assert table.row(2).tolist() == [0.0, 0.0]
        table.validate(records)

    def test_valuation_reference_values(self, two_scenario_oracle):
        model = last_touch_valuation(two_scenario_oracle)
        assert model.value(A) == pytest.approx(0.5 / 3.0, abs=1e-15)
        assert model.value(AB) == pytest.approx(0.6, abs=1e-15)

    def test_maximal_scenario_valued_at_full_reward(self, two_scenario_oracle):
        model = last_touch_valuation(two_scenario_oracle)
        assert model.value(AB) == two_scenario_oracle.value(AB)

    def test_valuation_is_the_averaged_last_touch_credit(self):
        # The two routes must agree exactly, sampling noise included.
        dataset = sample(TwoScenarioModel(), 2_000, seed=21)
        oracle = fit_oracle(dataset)
        direct = last_touch_valuation(oracle)
        averaged = associated_valuation(last_touch_attribution(dataset), dataset)
        assert set(direct.values) == set(averaged.values)
        for scenario, value in averaged.values.items():
            assert direct.value(scenario) == pytest.approx(value, abs=1e-15)


class TestAssociatedValuation:
    def test_closed_form_on_exact_weights(self, two_scenario_model):
        dataset = exact_dataset(two_scenario_model)
        core = core_valuation_recursive(exact_oracle(two_scenario_model))
        rows = tuple(fixed_point_map(core, r) for r in dataset.records)
        table = AttributionTable(credits=rows)
        recovered = associated_valuation(table, dataset)
        # Averaging the core credit over futures gives core back:
        # (1/3) * 0.5 + (2/3) * 0.5 for the first position.
        assert recovered.value(A) == pytest.approx(0.5, abs=1e-12)
        assert recovered.value(AB) == pytest.approx(0.1, abs=1e-12)

    def test_no_extension_means_no_value(self):
        records = (TimelineRecord(timeline_id="a", scenario=A, reward=1.0),)
        table = last_touch_attribution(records)
        model = associated_valuation(table, records)
        assert AB not in model.values


class TestCoreValuation:
    def test_reference_increments(self, two_scenario_oracle):
        core = core_valuation_recursive(two_scenario_oracle)
        assert core.value(A) == pytest.approx(0.5, abs=1e-15)
        assert core.value(AB) == pytest.approx(0.1, abs=1e-15)
        assert core.clamp_count == 0

    def test_inert_display_gets_zero(self):
        oracle = exact_oracle(motivating_example_model())
        core = core_valuation_recursive(oracle)
        for scenario in core.values:
            if scenario.last_action == 1:  # type-B display
                assert core.value(scenario) == 0.0

    def test_constant_reward_zero_beyond_first(self):
        from touchcredit.oracle import GenerativeModel

        s1, s2 = Scenario.of(0), Scenario.of(0, 0)
        model = GenerativeModel(
            scenario_probabilities={s1: 0.5, s2: 0.5},
            conversion_probabilities={s1: 0.3, s2: 0.3},
        )
        core = core_valuation_recursive(exact_oracle(model))
        assert core.value(s1) == pytest.approx(0.3)
        assert core.value(s2) == 0.0

    def test_negative_noise_clamped_and_counted(self):
        records = (
            TimelineRecord(timeline_id="a", scenario=A, reward=1.0),
            TimelineRecord(timeline_id="b", scenario=AB, reward=0.0),
        )
        oracle = fit_oracle(
            Dataset(n_actions=2, n_qualifiers=0, max_length=2, records=records)
        )
        core = core_valuation_recursive(oracle)
        assert core.value(AB) == 0.0
        assert core.clamp_count == 1


class TestFixedPointMap:
    def test_share_arithmetic(self):
        record = TimelineRecord(timeline_id="t", scenario=AB, reward=0.6)
        model = TabularValuation(values={A: 0.5, AB: 0.1})
        row = fixed_point_map(model, record)
        assert row == pytest.approx([0.5, 0.1], abs=1e-15)

    def test_uniform_valuation_uniform_split(self):
        record = TimelineRecord(timeline_id="t", scenario=AB, reward=0.9)
        model = TabularValuation(values={A: 0.7, AB: 0.7})
        assert fixed_point_map(model, record) == pytest.approx([0.45, 0.45])

    def test_zero_reward_zero_row(self):
        record = TimelineRecord(timeline_id="t", scenario=AB, reward=0.0)
        model = TabularValuation(values={A: 0.5, AB: 0.1})
        assert fixed_point_map(model, record).tolist() == [0.0, 0.0]

    def test_degenerate_denominator_falls_back_to_uniform(self):
        record = TimelineRecord(timeline_id="t", scenario=AB, reward=0.8)
        model = TabularValuation(values={})
        diagnostics: dict[str, int] = {}
        row = fixed_point_map(model, record, diagnostics)
        assert row == pytest.approx([0.4, 0.4])
        assert diagnostics["degenerate_rows"] == 1

    def test_rows_sum_to_reward(self):
        rng = np.random.default_rng(3)
        model = TabularValuation(
            values={A: 0.3, AB: 0.2, Scenario.of(0, 1, 1): 0.05}
        )
        for i in range(50):
            scenario = AB if i % 2 else Scenario.of(0, 1, 1)
            record = TimelineRecord(
                timeline_id=f"t{i}", scenario=scenario, reward=float(rng.random() * 2)
            )
            row = fixed_point_map(model, record)
            assert row.sum() == pytest.approx(record.reward, rel=1e-12)
            assert (row >= 0).all()


class TestRunFixedPoint:
    def test_zero_iterations_returns_initial_state(self, two_scenario_model):
        dataset = exact_dataset(two_scenario_model)
        state = run_fixed_point(
            dataset, AveragingLearner(), config=FixedPointConfig(max_iter=0)
        )
        assert state.iterations == 0
        assert state.valuation is None
        assert state.likelihood_trace == []
        expected = floored_last_touch_init(dataset.records, 1e-6)
        for got, want in zip(state.labels.credits, expected.credits):
            assert got.tolist() == want.tolist()

    def test_additive_valuation_is_a_fixed_point(self, two_scenario_model):
        dataset = exact_dataset(two_scenario_model)
        core = core_valuation_recursive(exact_oracle(two_scenario_model))
        rows = tuple(fixed_point_map(core, r) for r in dataset.records)
        init = AttributionTable(credits=rows)
        state = run_fixed_point(
            dataset,
            AveragingLearner(),
            init=init,
            config=FixedPointConfig(max_iter=1, tol=0.0),
        )
        for scenario in (A, AB):
            assert state.valuation.value(scenario) == pytest.approx(
                core.value(scenario), abs=1e-12
            )

    def test_converges_to_additive_values_on_samples(self):
        dataset = sample(TwoScenarioModel(), 10_000, seed=7)
        state = run_fixed_point(
            dataset, AveragingLearner(), config=FixedPointConfig(max_iter=200, tol=1e-10)
        )
        oracle = fit_oracle(dataset)
        core = core_valuation_recursive(oracle)
        assert state.valuation.value(A) == pytest.approx(core.value(A), abs=1e-3)
        assert state.valuation.value(AB) == pytest.approx(core.value(AB), abs=1e-3)

    def test_final_labels_are_efficient(self):
        dataset = sample(TwoScenarioModel(), 500, seed=9)
        state = run_fixed_point(
            dataset, AveragingLearner(), config=FixedPointConfig(max_iter=10, tol=0.0)
        )
        state.labels.validate(dataset.records, rel_tol=1e-12)

    def test_monotone_likelihood_on_random_models(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            model = random_monotone_model(rng)
            dataset = exact_dataset(model)
            state = run_fixed_point(
                dataset, AveragingLearner(), config=FixedPointConfig(max_iter=60, tol=0.0)
            )
            trace = np.array(state.likelihood_trace)
            assert (np.diff(trace) >= -1e-9).all()

    def test_fixed_point_limit_matches_recursion_on_random_models(self):
        from .helpers import drive_to_limit

        rng = np.random.default_rng(23)
        for _ in range(10):
            model = random_monotone_model(rng)
            dataset = exact_dataset(model)
            state = drive_to_limit(dataset, AveragingLearner())
            core = core_valuation_recursive(exact_oracle(model))
            for scenario, value in core.values.items():
                assert state.valuation.value(scenario) == pytest.approx(
                    value, abs=1e-6
                ), f"mismatch at {scenario} in {model.scenario_probabilities}"

    def test_distribution_change_does_not_move_the_limit(self):
        from .helpers import drive_to_limit

        # Same rewards, very different scenario mixes.
        mixes = (0.15, 0.5, 0.85)
        limits = []
        for p in mixes:
            model = TwoScenarioModel(p=p).to_generative_model()
            state = drive_to_limit(exact_dataset(model), AveragingLearner())
            limits.append((state.valuation.value(A), state.valuation.value(AB)))
        for got in limits[1:]:
            assert got[0] == pytest.approx(limits[0][0], abs=1e-6)
            assert got[1] == pytest.approx(limits[0][1], abs=1e-6)

    def test_last_touch_is_distribution_sensitive(self):
        values = []
        for p in (0.15, 0.85):
            oracle = exact_oracle(TwoScenarioModel(p=p).to_generative_model())
            values.append(last_touch_valuation(oracle).value(A))
        assert abs(values[1] - values[0]) > 0.3

    def test_trace_matches_report_shape(self, two_scenario_model):
        from touchcredit.attribution import fixed_point_report

        dataset = exact_dataset(two_scenario_model)
        state = run_fixed_point(dataset, AveragingLearner())
        report = fixed_point_report(state, dataset.records)
        assert report["iterations"] == state.iterations
        assert len(report["likelihood_train"]) == state.iterations
        assert "0" in report["mean_valuation_by_action"]
