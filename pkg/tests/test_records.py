import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenario_fusion import records, synth
from scenario_fusion.errors import EmptyCase, EmptyFile, MissingColumn, TypeMismatch, UnknownColumn
from scenario_fusion.records import (
    NCD_SCHEMA,
    BodyClass,
    CohortPolicy,
    DatasetId,
    ExclusionFlag,
    ExclusionReason,
    Junction,
    Severity,
    Turning,
    TurningMap,
    VehicleRecord,
)


def rec(case="C1", v=1, my=2005, cy=2015, body=BodyClass.LightPassengerVehicle, **coded):
    return VehicleRecord(DatasetId.FatalNCD, case, v, cy, my, body, Severity.Fatal, coded)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


ROW_HEADER = list(NCD_SCHEMA.columns)


def row(case, **over):
    base = dict(
        dataset_id="FatalNCD", case_id=case, vehicle_index="1", calendar_year="2015", model_year="2008",
        body_class="LightPassengerVehicle", severity="Fatal", sample_weight="1.0", first_harmful_event="1",
        exclusion_flags="", RELJCT2="Intersection", P_CRASH1="Turning Left", P_CRASH2="", ACC_TYPE="",
        LGT_COND="Daylight", MOTORIST_TYPE="",
    )
    base.update(over)
    return [base[c] for c in ROW_HEADER]


def test_ingest_three_rows(tmp_path):
    p = tmp_path / "f.csv"
    write_csv(p, ROW_HEADER, [row("A"), row("B"), row("C", model_year="")])
    res = records.ingest_records(p, NCD_SCHEMA)
    assert len(res.records) == 3
    assert res.diagnostics == []
    assert [r.case_id for r in res.records] == ["A", "B", "C"]
    assert res.records[2].model_year is None
    assert res.records[0].code("P_CRASH2") is None


def test_missing_reljct2_column(tmp_path):
    p = tmp_path / "f.csv"
    header = [c for c in ROW_HEADER if c != "RELJCT2"]
    write_csv(p, header, [])
    with pytest.raises(MissingColumn) as ei:
        records.ingest_records(p, NCD_SCHEMA)
    assert ei.value.column == "RELJCT2"


def test_unknown_column_rejected(tmp_path):
    p = tmp_path / "f.csv"
    write_csv(p, ROW_HEADER + ["MYSTERY"], [])
    with pytest.raises(UnknownColumn):
        records.ingest_records(p, NCD_SCHEMA)


def test_empty_file(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("")
    with pytest.raises(EmptyFile):
        records.ingest_records(p, NCD_SCHEMA)


def test_type_mismatch_reports_row_and_column(tmp_path):
    p = tmp_path / "f.csv"
    write_csv(p, ROW_HEADER, [row("A"), row("B", calendar_year="twenty"), row("C", sample_weight="-1")])
    with pytest.raises(TypeMismatch) as ei:
        records.ingest_records(p, NCD_SCHEMA)
    assert (ei.value.row, ei.value.column) == (3, "calendar_year")
    res = records.ingest_records(p, NCD_SCHEMA, strict=False)
    assert [r.case_id for r in res.records] == ["A"]
    assert [(d.row, d.column) for d in res.diagnostics] == [(3, "calendar_year"), (4, "sample_weight")]


def test_model_year_above_cy_plus_one_rejected(tmp_path):
    p = tmp_path / "f.csv"
    write_csv(p, ROW_HEADER, [row("A", calendar_year="2015", model_year="2017")])
    with pytest.raises(TypeMismatch):
        records.ingest_records(p, NCD_SCHEMA)
    with pytest.raises(ValueError):
        rec(my=2017, cy=2015)


def test_year_aliases_harmonize_headers(tmp_path):
    p = tmp_path / "f.csv"
    header = ["RELJCT_OLD" if c == "RELJCT2" else c for c in ROW_HEADER]
    write_csv(p, header, [row("A")])
    schema = NCD_SCHEMA.with_aliases({"RELJCT_OLD": "RELJCT2"})
    res = records.ingest_records(p, schema)
    assert res.records[0].code("RELJCT2") == "Intersection"


def test_generator_round_trip(tmp_path):
    spec = synth.SynthSpec(seed=4, records=(synth.RecordSetSpec(DatasetId.NonFatalNCD, 1000, 0.3, 0.05, 0, (1.0, 50.0)),))
    datasets, _ = synth.gen_records(spec)
    truth = datasets[DatasetId.NonFatalNCD]
    p = tmp_path / "n.csv"
    records.write_records(truth, p, NCD_SCHEMA)
    res = records.ingest_records(p, NCD_SCHEMA)
    assert len(res.records) == 1000
    assert res.records == truth
    # second trip through the writer is byte-identical
    p2 = tmp_path / "n2.csv"
    records.write_records(res.records, p2, NCD_SCHEMA)
    assert p.read_bytes() == p2.read_bytes()


# --- derived flags -------------------------------------------------------


@pytest.mark.parametrize(
    "code, expected",
    [
        ("Intersection", Junction.Junction),
        ("Intersection-Related", Junction.Junction),
        ("Driveway Access", Junction.Junction),
        ("Driveway Access Related", Junction.Junction),
        ("Non-Junction", Junction.NotAJunction),
        ("Entrance/Exit Ramp", Junction.NotAJunction),
        ("Reported as Unknown", Junction.Unknown),
        (None, Junction.Unknown),
    ],
)
def test_derive_junction(mappings, code, expected):
    coded = {} if code is None else {"RELJCT2": code}
    assert records.derive_junction(rec(**coded), mappings["ncd"].junction) is expected


def test_derive_turning_any_vehicle(mappings):
    m = mappings["ncd"].turning
    v1 = rec(v=1, P_CRASH1="Going Straight", P_CRASH2="Other Vehicle In Lane Stopped", ACC_TYPE="Other")
    v2 = rec(v=2, P_CRASH1="Turning left")
    assert records.derive_turning([v1, v2], m) is Turning.Turning


def test_derive_turning_not_turning_and_unknown():
    m = TurningMap(
        turn={"P_CRASH1": {"Turning Left"}, "P_CRASH2": {"Turning Left"}, "ACC_TYPE": {"Turn Across Path"}},
        known={v: {"Going straight"} for v in ("P_CRASH1", "P_CRASH2", "ACC_TYPE")},
    )
    straight = rec(P_CRASH1="Going straight", P_CRASH2="Going straight", ACC_TYPE="Going straight")
    assert records.derive_turning([straight], m) is Turning.NotTurning
    assert records.derive_turning([rec()], m) is Turning.Unknown
    with pytest.raises(EmptyCase):
        records.derive_turning([], m)


def test_nds_optional_maneuvers(mappings):
    m = mappings["nds"].turning
    base = VehicleRecord(
        DatasetId.NdsBaseline, "B1", 1, 2012, 2008, BodyClass.LightPassengerVehicle, Severity.Baseline,
        {"PRE_INCIDENT_MANEUVER": "Going Straight", "PRECIPITATING_EVENT": "Not Applicable"},
    )
    assert records.derive_turning([base], m) is Turning.NotTurning


_codes = st.sampled_from(["Intersection", "Non-Junction", "Driveway Access", "Reported as Unknown", "junk", None])


@given(st.lists(_codes, max_size=30))
def test_junction_partition_and_purity(mappings, codes):
    recs = [rec(case=f"C{i}", **({} if c is None else {"RELJCT2": c})) for i, c in enumerate(codes)]
    a = [records.derive_junction(r, mappings["ncd"].junction) for r in recs]
    b = [records.derive_junction(r, mappings["ncd"].junction) for r in recs]
    assert a == b
    assert sum(a.count(k) for k in Junction) == len(recs)


# --- cohort ----------------------------------------------------------------


def test_cohort_model_year():
    kept, tally = records.apply_cohort_filter([rec(my=1995), rec(case="C2", my=1997)])
    assert [r.case_id for r in kept] == ["C2"]
    assert tally[ExclusionReason.ModelYear] == 1


def test_cohort_empty():
    kept, tally = records.apply_cohort_filter([])
    assert kept == [] and sum(tally.values()) == 0


def test_cohort_all_reasons():
    rs = [
        rec(case="a", body=BodyClass.MotorcycleMoped),
        rec(case="b", my=None),
        VehicleRecord(DatasetId.FatalNCD, "c", 1, 2015, 2010, BodyClass.LightPassengerVehicle, Severity.Fatal,
                      {}, 1.0, False),
    ] + [
        VehicleRecord(DatasetId.FatalNCD, f.value, 1, 2015, 2010, BodyClass.LightPassengerVehicle, Severity.Fatal,
                      {}, 1.0, True, frozenset({f}))
        for f in ExclusionFlag
    ]
    kept, tally = records.apply_cohort_filter(rs)
    assert kept == []
    assert tally[ExclusionReason.BodyClass] == 1
    assert tally[ExclusionReason.ModelYear] == 1
    assert tally[ExclusionReason.FirstHarmfulEvent] == 1
    for f in ExclusionFlag:
        assert tally[ExclusionReason(f.value)] == 1


def test_cohort_planted_violations():
    spec = synth.SynthSpec(seed=8, records=(synth.RecordSetSpec(DatasetId.FatalNCD, 90, 0.3, cohort_violations=10),))
    datasets, truth = synth.gen_records(spec)
    recs = datasets[DatasetId.FatalNCD]
    assert len(recs) == 100
    kept, tally = records.apply_cohort_filter(recs)
    assert [list(r.key) for r in kept] == truth["FatalNCD"].survivors
    assert sum(tally.values()) == 10


@settings(max_examples=50)
@given(
    st.lists(
        st.tuples(
            st.integers(1985, 2016),
            st.sampled_from(list(BodyClass)),
            st.booleans(),
            st.sets(st.sampled_from(list(ExclusionFlag)), max_size=2),
        ),
        max_size=25,
    )
)
def test_cohort_idempotent_and_subset(rows):
    rs = [
        VehicleRecord(DatasetId.FatalNCD, f"c{i}", 1, 2016, my, body, Severity.Fatal, {}, 1.0, fh, frozenset(fl))
        for i, (my, body, fh, fl) in enumerate(rows)
    ]
    once, tally = records.apply_cohort_filter(rs, CohortPolicy())
    twice, tally2 = records.apply_cohort_filter(once, CohortPolicy())
    assert once == twice
    assert sum(tally2.values()) == 0
    assert len(once) + sum(tally.values()) == len(rs)
    it = iter(rs)
    assert all(any(r is x for x in it) for r in once)  # order-preserving subsequence
