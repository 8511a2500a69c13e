from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchcredit.errors import DatasetParseError, DatasetValidationError
from touchcredit.timeline import (
    Dataset,
    Scenario,
    TimelineRecord,
    load_dataset,
    save_dataset,
)


def displays(max_actions=4, max_qualifiers=2, max_length=5):
    display = st.tuples(
        st.integers(0, max_actions - 1),
        st.one_of(st.none(), st.integers(0, max_qualifiers - 1)),
    )
    return st.lists(display, min_size=1, max_size=max_length).map(
        lambda ds: Scenario(tuple(ds))
    )


class TestPrefixAlgebra:
    def test_prefix_of_three_display_scenario(self):
        s = Scenario.of(0, 1, 1)
        assert s.prefix(1) == Scenario.of(0)

    def test_prefix_full_length_is_identity(self):
        s = Scenario.of(2, 0, 1)
        assert s.prefix(len(s)) == s

    def test_prefix_is_prefix(self):
        s = Scenario.of(0, 1)
        assert s.prefix(1) == Scenario.of(0)
        assert s.prefix(1).is_prefix_of(s)

    @pytest.mark.parametrize("i", [0, 3, -1])
    def test_prefix_out_of_bounds(self, i):
        with pytest.raises(IndexError):
            Scenario.of(0, 1).prefix(i)

    def test_parent_drops_last(self):
        s = Scenario.of(0, 1, 2)
        assert s.parent == Scenario.of(0, 1)
        assert Scenario.of(0).parent == Scenario.empty()

    def test_enumerate_prefixes(self):
        assert Scenario.of(0, 1).prefixes() == [Scenario.of(0), Scenario.of(0, 1)]
        assert Scenario.of(0).prefixes() == [Scenario.of(0)]
        assert Scenario.of(0, 1, 1).prefixes() == [
            Scenario.of(0),
            Scenario.of(0, 1),
            Scenario.of(0, 1, 1),
        ]

    @given(displays())
    def test_prefixes_match_prefix_operator(self, s):
        prefixes = s.prefixes()
        assert len(prefixes) == len(s)
        for i, p in enumerate(prefixes, start=1):
            assert p == s.prefix(i)

    @given(displays(), displays())
    def test_prefix_order_antisymmetry(self, s, t):
        if s.is_prefix_of(t) and t.is_prefix_of(s):
            assert s == t

    @given(displays(), displays(), displays())
    def test_prefix_order_transitivity(self, s, t, u):
        if s.is_prefix_of(t) and t.is_prefix_of(u):
            assert s.is_prefix_of(u)

    @given(displays())
    def test_parent_of_prefix_steps_down(self, s):
        for i in range(2, len(s) + 1):
            assert s.prefix(i).parent == s.prefix(i - 1)

    @given(displays())
    def test_encode_decode_roundtrip(self, s):
        assert Scenario.decode(s.encode()) == s


class TestRecordValidation:
    def test_empty_scenario_rejected(self):
        with pytest.raises(DatasetValidationError):
            TimelineRecord(timeline_id="t", scenario=Scenario(()), reward=0.0)

    def test_negative_reward_rejected(self):
        with pytest.raises(DatasetValidationError):
            TimelineRecord(timeline_id="t", scenario=Scenario.of(0), reward=-0.1)

    def test_feature_map_count_must_match_length(self):
        with pytest.raises(DatasetValidationError):
            TimelineRecord(
                timeline_id="t",
                scenario=Scenario.of(0, 1),
                reward=1.0,
                display_features=({},),
            )

    def test_default_features_fill_in(self):
        record = TimelineRecord(timeline_id="t", scenario=Scenario.of(0, 1), reward=1.0)
        assert len(record.display_features) == 2


class TestDatasetValidation:
    def test_action_outside_alphabet(self):
        record = TimelineRecord(timeline_id="t", scenario=Scenario.of(5), reward=0.0)
        with pytest.raises(DatasetValidationError):
            Dataset(n_actions=2, n_qualifiers=0, max_length=3, records=(record,))

    def test_qualifier_on_unqualified_dataset(self):
        record = TimelineRecord(
            timeline_id="t", scenario=Scenario(((0, 0),)), reward=0.0
        )
        with pytest.raises(DatasetValidationError):
            Dataset(n_actions=1, n_qualifiers=0, max_length=3, records=(record,))

    def test_overlong_record_rejected_not_truncated(self):
        record = TimelineRecord(
            timeline_id="t", scenario=Scenario.of(0, 0, 0, 0), reward=0.0
        )
        with pytest.raises(DatasetValidationError):
            Dataset(n_actions=1, n_qualifiers=0, max_length=3, records=(record,))

    def test_id_cannot_straddle_splits(self):
        a = TimelineRecord(timeline_id="t", scenario=Scenario.of(0), reward=0.0)
        b = a.with_split("test")
        with pytest.raises(DatasetValidationError):
            Dataset(n_actions=1, n_qualifiers=0, max_length=1, records=(a, b))


def _roundtrip(dataset: Dataset, tmp_path) -> Dataset:
    path = tmp_path / "data.tsv"
    save_dataset(dataset, path)
    return load_dataset(path)


class TestSerialization:
    def test_empty_dataset(self, tmp_path):
        ds = Dataset(n_actions=3, n_qualifiers=1, max_length=4)
        loaded = _roundtrip(ds, tmp_path)
        assert loaded == ds

    def test_single_record(self, tmp_path):
        ds = Dataset(
            n_actions=2,
            n_qualifiers=0,
            max_length=2,
            records=(
                TimelineRecord(
                    timeline_id="t1", scenario=Scenario.of(0, 1), reward=1.0
                ),
            ),
        )
        assert _roundtrip(ds, tmp_path) == ds

    def test_features_weights_and_splits_roundtrip(self, tmp_path):
        records = (
            TimelineRecord(
                timeline_id="a",
                scenario=Scenario(((0, 1), (1, None))),
                reward=0.25,
                display_features=({"score": 1.5, "site=news": 1.0}, {}),
                weight=2.5,
                split="test",
            ),
            TimelineRecord(timeline_id="b", scenario=Scenario.of(1), reward=0.0),
        )
        ds = Dataset(n_actions=2, n_qualifiers=2, max_length=2, records=records)
        assert _roundtrip(ds, tmp_path) == ds

    @given(
        rows=st.lists(
            st.tuples(
                displays(max_actions=3, max_qualifiers=2, max_length=3),
                st.floats(0.0, 4.0, allow_nan=False),
                st.floats(0.25, 3.0, allow_nan=False),
                st.booleans(),
            ),
            max_size=8,
        )
    )
    @settings(max_examples=40, deadline=None)
    def test_random_roundtrip(self, rows, tmp_path_factory):
        records = tuple(
            TimelineRecord(
                timeline_id=f"r{i}",
                scenario=s,
                reward=reward,
                weight=weight,
                split="test" if test else "train",
            )
            for i, (s, reward, weight, test) in enumerate(rows)
        )
        ds = Dataset(n_actions=3, n_qualifiers=2, max_length=3, records=records)
        path = tmp_path_factory.mktemp("rt") / "data.tsv"
        save_dataset(ds, path)
        assert load_dataset(path) == ds

    def test_ten_thousand_timeline_roundtrip(self, tmp_path):
        from touchcredit.synth import TwoScenarioModel, sample

        dataset = sample(TwoScenarioModel(), 10_000, seed=7)
        assert _roundtrip(dataset, tmp_path) == dataset

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("t1\t1.0\t0\n", encoding="utf-8")
        with pytest.raises(DatasetParseError) as err:
            load_dataset(path)
        assert err.value.line_number == 1

    def test_malformed_line_carries_number(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            '#{"n_actions": 2, "n_qualifiers": 0, "max_length": 2}\n'
            "t1\t1.0\t0\n"
            "t2\tnot_a_number\t0\n",
            encoding="utf-8",
        )
        with pytest.raises(DatasetParseError) as err:
            load_dataset(path)
        assert err.value.line_number == 3

    def test_alphabet_violation_is_validation_error(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            '#{"n_actions": 1, "n_qualifiers": 0, "max_length": 2}\n' "t1\t1.0\t4\n",
            encoding="utf-8",
        )
        with pytest.raises(DatasetValidationError):
            load_dataset(path)

    def test_categorical_feature_parsing(self, tmp_path):
        path = tmp_path / "cats.tsv"
        path.write_text(
            '#{"n_actions": 1, "n_qualifiers": 0, "max_length": 1}\n'
            "t1\t1\t0;site=news;score=2.5\n",
            encoding="utf-8",
        )
        record = load_dataset(path).records[0]
        assert record.display_features[0] == {"site=news": 1.0, "score": 2.5}
