import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from animaltwin.errors import DuplicateChannelName, EmptyFile, FileNotFound, MissingColumn, NoTemporalOverlap
from animaltwin.ingest import (
    MergeSpec,
    SourceDescriptor,
    format_table_csv,
    merge_sources,
    parse_csv,
    parse_timestamp,
    read_table_csv,
    write_channels_csv,
    write_table_csv,
)
from animaltwin.timeseries import TimeGrid, TimeTable


def desc(path, fmt="epoch_ms", columns=("hf",), **kw):
    return SourceDescriptor(path, "w", "t", columns, fmt, **kw)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_rows(tmp_path):
    p = write(tmp_path, "a.csv", "t,hf\n0,1.5\n1000,2.5\n")
    (ch,), rep = parse_csv(p, desc(p))
    assert ch.name == "w.hf" and ch.times.tolist() == [0, 1000] and ch.values.tolist() == [1.5, 2.5]
    assert rep.good_rows == 2 and rep.path == "a.csv"


def test_bad_value_becomes_missing(tmp_path):
    p = write(tmp_path, "a.csv", "t,hf\n0,1.5\n1000,2.5\n2000,abc\n")
    (ch,), rep = parse_csv(p, desc(p))
    assert len(ch) == 3 and np.isnan(ch.values[2])
    assert rep.total_bad_values == 1 and rep.bad_value_lines == [4]


def test_elapsed_seconds(tmp_path):
    p = write(tmp_path, "m.csv", "t,hf\n0,1\n60,2\n120,3\n")
    (ch,), _ = parse_csv(p, desc(p, "elapsed_s"))
    assert ch.times.tolist() == [0, 60_000, 120_000]


@pytest.mark.parametrize(
    "text, fmt, ms",
    [
        ("1.5", "epoch_s", 1500),
        ("1700000000000", "epoch_ms", 1_700_000_000_000),
        ("1970-01-01T00:00:01.250Z", "iso8601", 1250),
        ("1970-01-01T01:00:00+01:00", "iso8601", 0),
    ],
)
def test_timestamp_formats(text, fmt, ms):
    assert parse_timestamp(text, fmt) == ms


def test_rejected_rows_duplicates_and_row_accounting(tmp_path):
    p = write(tmp_path, "a.csv", "t,hf,hr\n0,1,2\nnoon,3,4\n1000,,5\n1000,6,7\n500,8,9\n")
    (hf, hr), rep = parse_csv(p, desc(p, columns=("hf", "hr")))
    assert rep.rejected_lines == [3]
    assert rep.duplicate_timestamps == 1 and rep.out_of_order_rows == 1
    assert hf.times.tolist() == [0, 500, 1000] and hf.values.tolist() == [1.0, 8.0, 6.0]
    assert rep.good_rows + rep.missing_rows + rep.rejected_rows == rep.physical_rows == 5


def test_parse_errors(tmp_path):
    with pytest.raises(FileNotFound):
        parse_csv(tmp_path / "nope.csv", desc(tmp_path / "nope.csv"))
    p = write(tmp_path, "a.csv", "t,other\n0,1\n")
    with pytest.raises(MissingColumn):
        parse_csv(p, desc(p))
    p = write(tmp_path, "b.csv", "")
    with pytest.raises(EmptyFile):
        parse_csv(p, desc(p))


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)), min_size=1, max_size=30))
def test_parse_serialize_round_trip(tmp_path, vals):
    from animaltwin.timeseries import RawChannel

    values = [np.nan if v is None else v for v in vals]
    ch = RawChannel("w.hf", np.arange(len(values)) * 250, values, 4)
    p = tmp_path / "rt.csv"
    write_channels_csv(p, [ch], "t", ["hf"])
    (back,), _ = parse_csv(p, desc(p, nominal_rate_hz=4))
    write_channels_csv(tmp_path / "rt2.csv", [back], "t", ["hf"])
    assert np.array_equal(back.values, ch.values, equal_nan=True)
    assert p.read_bytes() == (tmp_path / "rt2.csv").read_bytes()


def test_table_csv_round_trip(tmp_path):
    t = TimeTable.from_grid(TimeGrid(0, 1000, 3), {"a": [0.1, np.nan, 1e-300], "b": [1.0, 2.0, -3.5]})
    write_table_csv(t, tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert text.splitlines()[0] == "timestamp_ms,a,b" and ",," not in text.splitlines()[1]
    back = read_table_csv(tmp_path / "t.csv")
    assert back.equals(t) and back.regular
    assert format_table_csv(back) == text


# -- merge ----------------------------------------------------------------


def _pig_like(tmp_path, n_labels=4):
    t = np.arange(0, 180 * n_labels + 1)
    lines = ["t,hf"] + [f"{s * 1000},{s % 7}" for s in t]
    write(tmp_path, "wear.csv", "\n".join(lines) + "\n")
    labels = ["t,heat"] + [f"{180_000 * (i + 1)},{100 + i}" for i in range(n_labels)]
    write(tmp_path, "chamber.csv", "\n".join(labels) + "\n")
    return {
        "sources": [
            {"path": "wear.csv", "channel_name": "wear", "timestamp_column": "t", "value_columns": ["hf"],
             "nominal_rate_hz": 1},
            {"path": "chamber.csv", "channel_name": "chamber", "timestamp_column": "t",
             "value_columns": ["heat"], "nominal_rate_hz": "1/180"},
        ],
        "grid": {"master_channel": "chamber.heat"},
        "features": {"wear.hf": {"window_ms": 180_000, "aggregations": ["mean", "max"]}},
    }


def test_wearable_plus_chamber(tmp_path):
    spec = MergeSpec.from_dict(_pig_like(tmp_path), base_dir=tmp_path)
    table, rep = merge_sources(spec)
    assert table.n_rows == 4 and table.grid.period_ms == 180_000
    assert table.column_names == ["wear.hf_mean", "wear.hf_max", "chamber.heat"]
    assert table["chamber.heat"].tolist() == [100, 101, 102, 103]
    first = [s % 7 for s in range(0, 180)]
    assert table["wear.hf_mean"][0] == pytest.approx(np.mean(first), rel=1e-12)
    assert rep.channels["wear.hf"]["direction"] == "aggregated"


def test_identical_grids_concatenate(tmp_path):
    write(tmp_path, "a.csv", "t,x\n0,1\n1000,2\n2000,3\n")
    write(tmp_path, "b.csv", "t,y\n0,4\n1000,5\n2000,6\n")
    doc = {"sources": [
        {"path": "a.csv", "channel_name": "a", "timestamp_column": "t", "value_columns": ["x"]},
        {"path": "b.csv", "channel_name": "b", "timestamp_column": "t", "value_columns": ["y"]},
    ]}
    table, rep = merge_sources(MergeSpec.from_dict(doc, base_dir=tmp_path))
    assert table["a.x"].tolist() == [1, 2, 3] and table["b.y"].tolist() == [4, 5, 6]
    assert all(c["fill_fraction"] == 1.0 for ch in rep.channels.values() for c in ch["columns"].values())


def test_permuting_sources_only_reorders_columns(tmp_path):
    doc = _pig_like(tmp_path)
    a, _ = merge_sources(MergeSpec.from_dict(doc, base_dir=tmp_path))
    doc["sources"] = doc["sources"][::-1]
    b, _ = merge_sources(MergeSpec.from_dict(doc, base_dir=tmp_path))
    assert a.n_rows == b.n_rows and sorted(a.column_names) == sorted(b.column_names)
    for c in a.column_names:
        assert np.array_equal(a[c], b[c], equal_nan=True)


def test_merge_errors(tmp_path):
    write(tmp_path, "a.csv", "t,x\n0,1\n1000,2\n")
    write(tmp_path, "b.csv", "t,x\n5000,1\n6000,2\n")
    src = {"timestamp_column": "t", "value_columns": ["x"]}
    doc = {"sources": [{"path": "a.csv", "channel_name": "a", **src}, {"path": "b.csv", "channel_name": "b", **src}]}
    with pytest.raises(NoTemporalOverlap):
        merge_sources(MergeSpec.from_dict(doc, base_dir=tmp_path))
    doc["sources"][1]["channel_name"] = "a"
    with pytest.raises(DuplicateChannelName):
        merge_sources(MergeSpec.from_dict(doc, base_dir=tmp_path))


def test_scenario_merge_report_is_json(scenario):
    d = scenario("pig")
    table, rep = merge_sources(MergeSpec.load(d / "merge.json"))
    json.dumps(rep.to_dict())
    assert table.n_rows == 60 and "chamber.heat_production" in table
