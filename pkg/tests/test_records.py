"""Record pipeline: safe transforms, crosswalks, and the gold-record fold."""

from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, strategies as st

from overlay_repo.errors import FormatUnavailableError, ModelIntegrityError
from overlay_repo.records import (
    DcEntry,
    GoldInput,
    MetadataRecord,
    apply_safe_transforms,
    crosswalk,
    fold_gold,
    parse_dc_entries,
    serialize_dc,
    validate_record,
)

from support import nsdl_dc_record, oai_dc_record, oracle_gold_fold

T0 = datetime(2004, 1, 1, tzinfo=timezone.utc)


def entries_of(xml: bytes) -> dict[str, list[tuple[str, str | None]]]:
    out: dict[str, list[tuple[str, str | None]]] = {}
    for e in parse_dc_entries(xml):
        out.setdefault(e.name, []).append((e.value, e.xsi_type))
    return out


# --------------------------------------------------------------------------
# safe transforms


def test_date_normalization_spelled_out_day_first():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("date", "5 March 2004"), ("identifier", "http://x/1")))
    result = apply_safe_transforms(record)
    assert entries_of(result.xml)["date"] == [("2004-03-05", None)]


def test_date_normalization_month_first():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("date", "March 5, 2004"), ("identifier", "http://x/1")))
    result = apply_safe_transforms(record)
    assert entries_of(result.xml)["date"] == [("2004-03-05", None)]


@pytest.mark.parametrize("raw,expected", [
    ("2004-03-05", "2004-03-05"),
    ("2004-03", "2004-03"),
    ("2004", "2004"),
    ("Mar 5, 2004", "2004-03-05"),
    ("2004/03/05", "2004-03-05"),
    ("03/05/2004", "2004-03-05"),
    ("March 2004", "2004-03"),
    ("circa 1850", "circa 1850"),  # unknown shapes pass through
])
def test_date_rule_table(raw, expected):
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("date", raw), ("identifier", "http://x/1")))
    assert entries_of(apply_safe_transforms(record).xml)["date"][0][0] == expected


def test_type_vocabulary_mapping():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("type", "Movie"), ("identifier", "http://x/1")))
    assert entries_of(apply_safe_transforms(record).xml)["type"] == [
        ("MovingImage", None)]


def test_language_normalization():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("language", "English"), ("language", "FR"), ("language", "Klingon"),
        ("identifier", "http://x/1")))
    assert entries_of(apply_safe_transforms(record).xml)["language"] == [
        ("en", None), ("fr", None), ("Klingon", None)]


def test_whitespace_collapse():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("title", "  Too   many\n spaces "), ("identifier", "http://x/1")))
    assert entries_of(apply_safe_transforms(record).xml)["title"] == [
        ("Too many spaces", None)]


def test_transforms_idempotent_on_normalized_record():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("title", "Plain"), ("date", "2004-03-05"), ("identifier", "http://x/1")))
    once = apply_safe_transforms(record)
    twice = apply_safe_transforms(once)
    assert once.xml == twice.xml
    assert once.xml == record.xml


_xml_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=40)


@given(_xml_text, _xml_text)
def test_transforms_idempotent_property(title, date):
    record = MetadataRecord("oai_dc", serialize_dc("oai_dc", [
        DcEntry("title", " ".join(title.split())),
        DcEntry("date", " ".join(date.split())),
    ]))
    once = apply_safe_transforms(record)
    assert apply_safe_transforms(once).xml == once.xml


def test_qualification_in_nsdl_dc():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("date", "March 5, 2004"), ("type", "Movie"), ("language", "English"),
        ("identifier", "http://x/1")))
    walked = crosswalk(record, "nsdl_dc")
    got = entries_of(walked.xml)
    assert got["date"] == [("2004-03-05", "dct:W3CDTF")]
    assert got["type"] == [("MovingImage", "dct:DCMIType")]
    assert got["language"] == [("en", "dct:RFC3066")]
    assert got["identifier"] == [("http://x/1", None)]


# --------------------------------------------------------------------------
# crosswalks


def test_crosswalk_identity_same_format():
    record = MetadataRecord("nsdl_dc", nsdl_dc_record(
        ("title", "X"), ("identifier", "http://x/1")))
    assert crosswalk(record, "nsdl_dc").xml == record.xml


def test_crosswalk_unregistered_pair():
    record = MetadataRecord("oai_dc", oai_dc_record(("identifier", "http://x/1")))
    with pytest.raises(FormatUnavailableError):
        crosswalk(record, "marcxml")


def test_crosswalk_deterministic():
    record = MetadataRecord("oai_dc", oai_dc_record(
        ("title", "X"), ("date", "5 March 2004"), ("identifier", "http://x/1")))
    assert crosswalk(record, "nsdl_dc").xml == crosswalk(record, "nsdl_dc").xml


def test_crosswalk_leaves_original_untouched():
    xml = oai_dc_record(("date", "5 March 2004"), ("identifier", "http://x/1"))
    record = MetadataRecord("oai_dc", xml)
    crosswalk(record, "nsdl_dc")
    assert record.xml == xml


# --------------------------------------------------------------------------
# validation


def test_validate_good_record():
    assert validate_record(
        oai_dc_record(("title", "T"), ("identifier", "http://x/1")), "oai_dc") is None


def test_validate_missing_identifier():
    verdict = validate_record(oai_dc_record(("title", "T")), "oai_dc")
    assert verdict == "no identifier"


def test_validate_wrong_namespace():
    verdict = validate_record(
        nsdl_dc_record(("identifier", "http://x/1")), "oai_dc")
    assert verdict is not None and "root element" in verdict


def test_validate_malformed():
    assert "not well-formed" in validate_record(b"<broken", "oai_dc")


def test_validate_unknown_format_only_checks_well_formedness():
    assert validate_record(b"<marc/>", "marcxml") is None


# --------------------------------------------------------------------------
# gold fold


def _gold_input(pid, minutes, *entries):
    return GoldInput(
        pid=pid,
        datestamp=T0 + timedelta(minutes=minutes),
        entries=tuple(DcEntry(n, v) for n, v in entries),
    )


def _as_oracle(gold_inputs):
    return [
        {"pid": g.pid, "datestamp": g.datestamp,
         "entries": [(e.name, e.value) for e in g.entries]}
        for g in gold_inputs
    ]


def test_single_record_identity():
    record = _gold_input("nsdl:5", 0, ("title", "Only"), ("subject", "S"),
                         ("identifier", "http://x/1"))
    gold = fold_gold([record], [])
    assert gold.contributors == ("nsdl:5",)
    assert entries_of(gold.xml) == {
        "title": [("Only", None)],
        "subject": [("S", None)],
        "identifier": [("http://x/1", None)],
    }
    assert gold.xml == serialize_dc("nsdl_dc", [
        DcEntry("title", "Only"), DcEntry("subject", "S"),
        DcEntry("identifier", "http://x/1"),
    ]).replace(
        b"</nsdl_dc:nsdl_dc>",
        b"  <contributors>\n    <contributor>info:nsdl/nsdl:5</contributor>\n"
        b"  </contributors>\n</nsdl_dc:nsdl_dc>")


def test_augmenter_overrides_single_valued_elements():
    base = _gold_input("nsdl:5", 0, ("title", "Original"), ("subject", "A"),
                       ("date", "2004-03-05"))
    augmenter = _gold_input("nsdl:8", 1, ("title", "Corrected"), ("subject", "B"))
    gold = fold_gold([base, augmenter], [("nsdl:8", "nsdl:5")])
    assert gold.contributors == ("nsdl:5", "nsdl:8")
    got = entries_of(gold.xml)
    assert got["title"] == [("Corrected", None)]
    assert got["date"] == [("2004-03-05", None)]  # augmenter has none, base survives
    assert got["subject"] == [("A", None), ("B", None)]


def test_diamond_matches_oracle():
    inputs = [
        _gold_input("nsdl:1", 0, ("title", "T1"), ("subject", "S1"),
                    ("creator", "C1"), ("date", "2001")),
        _gold_input("nsdl:2", 30, ("title", "T2"), ("subject", "S2")),
        _gold_input("nsdl:3", 10, ("subject", "S1"), ("subject", "S3"),
                    ("creator", "C2")),
        _gold_input("nsdl:4", 40, ("title", "T4"), ("description", "D4")),
    ]
    edges = [("nsdl:2", "nsdl:1"), ("nsdl:3", "nsdl:1"),
             ("nsdl:4", "nsdl:2"), ("nsdl:4", "nsdl:3")]
    gold = fold_gold(inputs, edges)
    oracle_order, oracle_merged = oracle_gold_fold(_as_oracle(inputs), edges)
    assert list(gold.contributors) == oracle_order == [
        "nsdl:1", "nsdl:3", "nsdl:2", "nsdl:4"]
    got = {name: [v for v, _ in pairs] for name, pairs in entries_of(gold.xml).items()}
    assert got == oracle_merged


def test_incomparable_records_order_by_datestamp_then_pid():
    inputs = [
        _gold_input("nsdl:9", 5, ("subject", "A")),
        _gold_input("nsdl:2", 5, ("subject", "B")),
        _gold_input("nsdl:7", 1, ("subject", "C")),
    ]
    gold = fold_gold(inputs, [])
    assert gold.contributors == ("nsdl:7", "nsdl:2", "nsdl:9")


def test_cycle_detection():
    inputs = [
        _gold_input("nsdl:5", 0, ("title", "A")),
        _gold_input("nsdl:8", 1, ("title", "B")),
    ]
    edges = [("nsdl:5", "nsdl:8"), ("nsdl:8", "nsdl:5")]
    with pytest.raises(ModelIntegrityError) as excinfo:
        fold_gold(inputs, edges)
    assert "nsdl:5" in str(excinfo.value) and "nsdl:8" in str(excinfo.value)


def test_fold_deterministic_under_input_permutation():
    inputs = [
        _gold_input("nsdl:1", 0, ("title", "T1"), ("subject", "S1")),
        _gold_input("nsdl:2", 1, ("title", "T2"), ("subject", "S2")),
        _gold_input("nsdl:3", 2, ("subject", "S3")),
    ]
    edges = [("nsdl:2", "nsdl:1"), ("nsdl:3", "nsdl:1")]
    baseline = fold_gold(inputs, edges)
    assert fold_gold(list(reversed(inputs)), list(reversed(edges))).xml == baseline.xml
