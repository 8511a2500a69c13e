from __future__ import annotations

import gzip
from pathlib import Path

import pytest

from touchcredit.errors import IngestError, SchemaError
from touchcredit.ingest import (
    ParseStats,
    PreparedCorpus,
    SchemaConfig,
    bucket_time_since_click,
    build_timelines,
    load_schema,
    parse_tsv,
    user_split,
)
from touchcredit.synth import sample_funnel_corpus

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "criteo_fixture_1k.tsv"
SCHEMA = DATA / "fixture_schema.json"

TINY_HEADER = "ts\tvisitor\tclicked\tcredit\tsale_id\tgap\tprior_clicks\tctx_a\tctx_b\tctx_c"


def _write(tmp_path, lines, name="raw.tsv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _row(ts, visitor, clicked, credit=0, sale="", gap=-1, prior=0):
    return f"{ts}\t{visitor}\t{clicked}\t{credit}\t{sale}\t{gap}\t{prior}\tsiteX\tdevY\tcampZ"


@pytest.fixture(scope="module")
def schema() -> SchemaConfig:
    return load_schema(SCHEMA)


class TestParseTsv:
    def test_three_row_fixture(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [TINY_HEADER, _row(1, "u1", 1), _row(2, "u1", 0), _row(3, "u2", 1)],
        )
        rows = list(parse_tsv(path, schema))
        assert len(rows) == 3
        assert rows[0].user_id == "u1"
        assert rows[0].click == 1 and rows[1].click == 0
        assert rows[0].categorical == (
            ("ctx_a", "siteX"),
            ("ctx_b", "devY"),
            ("ctx_c", "campZ"),
        )

    def test_malformed_row_skipped_and_counted(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [TINY_HEADER, _row(1, "u1", 1), "1\tu1\tnot_a_flag", _row(2, "u2", 1)],
        )
        stats = ParseStats()
        rows = list(parse_tsv(path, schema, stats=stats))
        assert len(rows) == 2
        assert stats.rows_malformed == 1
        assert stats.rows_read == 3

    def test_threshold_exceeded_aborts(self, tmp_path, schema):
        lines = [TINY_HEADER]
        lines.extend(_row(i, f"u{i}", 1) for i in range(150))
        lines.extend(["bad\tline"] * 30)
        path = _write(tmp_path, lines)
        with pytest.raises(IngestError):
            list(parse_tsv(path, schema, max_malformed_fraction=0.05))

    def test_missing_mandatory_column_is_schema_error(self, tmp_path, schema):
        path = _write(tmp_path, ["ts\tvisitor\tclicked", "1\tu1\t1"])
        with pytest.raises(SchemaError):
            list(parse_tsv(path, schema))

    def test_gzip_input(self, tmp_path, schema):
        path = tmp_path / "raw.tsv.gz"
        content = "\n".join([TINY_HEADER, _row(1, "u1", 1)]) + "\n"
        with gzip.open(path, "wt", encoding="utf-8") as handle:
            handle.write(content)
        assert len(list(parse_tsv(path, schema))) == 1

    def test_golden_fixture_counts(self, schema):
        stats = ParseStats()
        rows = list(parse_tsv(FIXTURE, schema, stats=stats))
        assert stats.rows_read == 1000
        assert stats.rows_parsed == 1000
        assert stats.rows_malformed == 0
        assert len(rows) == 1000


class TestBuildTimelines:
    def test_conversion_after_two_clicks(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [
                TINY_HEADER,
                _row(1, "u1", 1, credit=0, sale="s1", prior=0),
                _row(2, "u1", 1, credit=1, sale="s1", prior=1),
            ],
        )
        corpus = build_timelines(parse_tsv(path, schema))
        assert len(corpus.dataset) == 1
        record = corpus.dataset.records[0]
        assert len(record.scenario) == 2
        assert record.reward == 1.0

    def test_two_conversions_split_into_two_timelines(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [
                TINY_HEADER,
                _row(1, "u1", 1, credit=1, sale="s1", prior=0),
                _row(2, "u1", 1, credit=1, sale="s2", prior=1),
            ],
        )
        corpus = build_timelines(parse_tsv(path, schema))
        assert len(corpus.dataset) == 2
        for record in corpus.dataset.records:
            assert len(record.scenario) == 1
            assert record.reward == 1.0

    def test_trailing_clicks_become_zero_reward_timeline(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [
                TINY_HEADER,
                _row(1, "u1", 1, credit=1, sale="s1", prior=0),
                _row(2, "u1", 1, prior=1),
            ],
        )
        corpus = build_timelines(parse_tsv(path, schema))
        rewards = sorted(r.reward for r in corpus.dataset.records)
        assert rewards == [0.0, 1.0]

    def test_unclicked_displays_filtered(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [TINY_HEADER, _row(1, "u1", 0), _row(2, "u1", 1, prior=0)],
        )
        corpus = build_timelines(parse_tsv(path, schema))
        assert corpus.provenance.displays_not_clicked == 1
        assert len(corpus.dataset.records[0].scenario) == 1

    def test_missing_click_evidence_drops_the_user(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [
                TINY_HEADER,
                _row(1, "u1", 1, prior=3),  # claims 3 earlier clicks we never saw
                _row(2, "u2", 1, prior=0),
            ],
        )
        corpus = build_timelines(parse_tsv(path, schema))
        ids = {r.timeline_id for r in corpus.dataset.records}
        assert ids == {"u2:0"}
        assert corpus.provenance.dropped_timelines == {"missing_clicks": 1}
        assert corpus.provenance.displays_dropped_missing_clicks == 1

    def test_click_derived_features_attached(self, tmp_path, schema):
        path = _write(
            tmp_path,
            [
                TINY_HEADER,
                _row(1, "u1", 1, prior=0, gap=-1),
                _row(7200, "u1", 1, credit=1, sale="s1", prior=1, gap=7200),
            ],
        )
        record = build_timelines(parse_tsv(path, schema)).dataset.records[0]
        first, second = record.display_features
        assert first["clicks_before=n0"] == 1.0
        assert first["tslc=none"] == 1.0
        assert second["clicks_before=n1"] == 1.0
        assert second["tslc=1to6h"] == 1.0
        assert "ctx_a=siteX" in first

    def test_golden_fixture_provenance(self, schema):
        corpus = build_timelines(
            parse_tsv(FIXTURE, schema), time_unit=schema.time_unit
        )
        got = corpus.provenance.to_json_dict()
        assert got == {
            "displays_in": 1000,
            "displays_kept": 517,
            "displays_filtered": 483,
            "displays_not_clicked": 448,
            "displays_dropped_missing_clicks": 35,
            "displays_dropped_overlong": 0,
            "users_seen": 200,
            "users_kept": 185,
            "timelines_out": 243,
            "converted_timelines": 91,
            "dropped_timelines": {"missing_clicks": 15},
        }

    def test_conservation_identity(self, schema):
        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        p = corpus.provenance
        assert p.displays_in == p.displays_kept + p.displays_filtered

    def test_output_passes_dataset_validation(self, schema):
        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        for record in corpus.dataset.records:
            assert len(record.display_features) == len(record.scenario)
        assert isinstance(corpus, PreparedCorpus)

    def test_categorical_levels_survive_canonical_serialization(
        self, schema, tmp_path
    ):
        from touchcredit.timeline import load_dataset, save_dataset

        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        path = tmp_path / "corpus.tsv"
        save_dataset(corpus.dataset, path)
        assert load_dataset(path) == corpus.dataset


class TestUserSplit:
    def test_fixture_split_golden(self, schema):
        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        dataset = user_split(corpus.dataset, 0.8, seed=11)
        assert len(dataset.subset("train")) == 166
        assert len(dataset.subset("test")) == 77

    def test_no_user_straddles_the_split(self, schema):
        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        dataset = user_split(corpus.dataset, 0.8, seed=11)
        train = {r.timeline_id.rsplit(":", 1)[0] for r in dataset.subset("train")}
        test = {r.timeline_id.rsplit(":", 1)[0] for r in dataset.subset("test")}
        assert not train & test

    def test_same_seed_same_split(self, schema):
        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        assert user_split(corpus.dataset, 0.8, seed=3) == user_split(
            corpus.dataset, 0.8, seed=3
        )
        assert user_split(corpus.dataset, 0.8, seed=3) != user_split(
            corpus.dataset, 0.8, seed=4
        )

    def test_full_fraction_disallowed(self, schema):
        corpus = build_timelines(parse_tsv(FIXTURE, schema))
        with pytest.raises(ValueError):
            user_split(corpus.dataset, 1.0, seed=1)
        with pytest.raises(ValueError):
            user_split(corpus.dataset, 0.0, seed=1)

    def test_large_corpus_fraction_within_half_percent(self):
        dataset = sample_funnel_corpus(50_000, seed=2)
        split = user_split(dataset, 0.8, seed=0)
        share = len(split.subset("train")) / len(split)
        assert abs(share - 0.8) <= 0.005


class TestTimeBuckets:
    @pytest.mark.parametrize(
        "seconds,label",
        [
            (None, "none"),
            (-1.0, "none"),
            (30.0, "lt1h"),
            (3600.0 * 2, "1to6h"),
            (3600.0 * 12, "6to24h"),
            (3600.0 * 40, "1to3d"),
            (3600.0 * 100, "gt3d"),
        ],
    )
    def test_bucketing(self, seconds, label):
        assert bucket_time_since_click(seconds) == label

    def test_hour_units(self):
        assert bucket_time_since_click(2.0, time_unit="hours") == "1to6h"
