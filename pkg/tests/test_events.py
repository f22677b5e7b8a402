import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import A, B, categories, ev
from isanalytics.ontology import MovementMode, default_vocabulary, make_category
from isanalytics.events import (
    EventInvariantError,
    FormatError,
    IngestError,
    MappingError,
    NormalizedEvent,
    corpus_stats,
    ingest,
    ingest_file,
    load_mapping,
    parse_mapping,
    read_events,
    write_events,
    write_mapping,
)

SSH_LOGIN = "Authentication_Activity.Login_SSH.Admin_Success"
TABLE = parse_mapping([
    f"sshd\tAccepted password\t{SSH_LOGIN}\tuser=3,src=4,dst=5",
    "sshd\tFailed password\tAuthentication_Activity.Login_SSH.Admin_Failed\tuser=3,src=4",
    "auditd\tAUDIT_STOP\tSystem_Activity.Stop_Audit.N_Success\tid=3,src=4,detect_time=5",
])


def test_ingest_maps_signature_field_by_field():
    events, rejects = ingest(["sshd\tAccepted password\t1000\troot\t10.0.0.1\t10.0.0.2"], TABLE)
    assert rejects == []
    (e,) = events
    assert str(e.category) == SSH_LOGIN
    assert (e.analyzer, e.create_time, e.user, e.src, e.dst) == ("sshd", 1000, "root", "10.0.0.1", "10.0.0.2")
    assert e.event_id == "sshd:0"
    assert e.additional == {"signature": "Accepted password"}


def test_ingest_rejects_each_kind():
    lines = [
        "garbage",
        "sshd\tUnknown\t1",
        "sshd\tAccepted password\tnoon\troot\t10.0.0.1",
        "sshd\tAccepted password\t5\t-\t-\t10.0.0.2",
        "auditd\tAUDIT_STOP\t50\tx1\t10.0.0.3\t10",
        "auditd\tAUDIT_STOP\t50\tx2\t10.0.0.3\t60",
    ]
    events, rejects = ingest(lines, TABLE)
    assert [r.reason for r in rejects] == ["malformed", "unmatched", "bad-timestamp", "uncorrelatable", "invariant"]
    assert [r.index for r in rejects] == [0, 1, 2, 3, 4]
    assert [e.event_id for e in events] == ["x2"]
    assert events[0].detect_time == 60


def test_ingest_empty():
    assert ingest([], TABLE) == ([], [])


@given(st.lists(st.sampled_from([
    "sshd\tAccepted password\t1\tu\th",
    "sshd\tFailed password\t2\t-\th",
    "sshd\tFailed password\t2\t-\t-",
    "x\ty\tz",
    "",
]), max_size=40))
def test_ingest_conservation_and_order(lines):
    events, rejects = ingest(lines, TABLE)
    assert len(events) + len(rejects) == len(lines)
    assert ingest(lines, TABLE) == (events, rejects)
    ids = [int(e.event_id.split(":")[1]) for e in events]
    assert ids == sorted(ids)


def test_ingest_file_unreadable(tmp_path):
    with pytest.raises(IngestError):
        ingest_file(tmp_path / "missing.tsv", TABLE)


def test_mapping_errors():
    with pytest.raises(MappingError, match="duplicate"):
        parse_mapping([f"a\ts\t{SSH_LOGIN}\t-", f"a\ts\t{SSH_LOGIN}\t-"])
    with pytest.raises(MappingError, match="invalid category"):
        parse_mapping(["a\ts\tAuthentication_Attack.Bruteforce_SysAuth.Account_Success\t-"])
    with pytest.raises(MappingError):
        parse_mapping([f"a\ts\t{SSH_LOGIN}\tsrc=1"])
    with pytest.raises(MappingError):
        parse_mapping([f"a\ts\t{SSH_LOGIN}\tcolour=4"])


def test_mapping_round_trip(tmp_path):
    p = tmp_path / "m.tsv"
    write_mapping(TABLE, p)
    assert load_mapping(p) == TABLE


def test_event_invariants():
    with pytest.raises(EventInvariantError):
        NormalizedEvent("x", "a", 0, A, dst="h")
    with pytest.raises(EventInvariantError):
        NormalizedEvent("x", "a", 10, A, detect_time=5, user="u")
    assert ev("x", 10, A, user="u", detect=15).time == 15


def test_corpus_stats_reduction_one_category():
    events = [ev(f"e{k}", k, A, user="u") for k in range(4)]
    assert corpus_stats(events, 10).reduction_rate == pytest.approx(0.9)


def test_corpus_stats_reduction_printed_ratio():
    # 20182 signatures onto 1734 categories: build events for exactly 1734 categories
    v = default_vocabulary()
    cats = [make_category(i, "Activity", n, t1, t2, "Success")
            for i in ("Authentication", "Authorization", "System")
            for n in v.natures_for(MovementMode.ACTIVITY)
            for t1 in v.target_tokens("primary") for t2 in v.target_tokens("secondary")]
    assert len(cats) >= 1734
    events = [ev(f"e{k}", k, c, user="u") for k, c in enumerate(cats[:1734])]
    s = corpus_stats(events, 20182)
    assert s.category_count == 1734
    assert round(s.reduction_rate, 4) == 0.9141
    assert s.reduction_rate == pytest.approx(0.9140, abs=1e-4)


def test_corpus_stats_singletons():
    events = [ev("1", 0, A, user="u"), ev("2", 1, A, user="u"), ev("3", 2, B, user="u")]
    s = corpus_stats(events, 5)
    assert s.per_category_counts == {A: 2, B: 1}
    assert s.singleton_count == 1
    assert s.singleton_share == 0.5
    assert s.reduction_rate == pytest.approx(1 - 2 / 5)
    # the printed singleton share, as arithmetic
    assert 732 / 1734 == pytest.approx(0.4221, abs=1e-4)
    with pytest.raises(ValueError):
        corpus_stats(events, 1)


events_st = st.lists(
    st.builds(
        lambda k, t, d, c, u, s, dst: NormalizedEvent(f"id{k}", "an", t, c, detect_time=None if d is None else t + d,
                                                      src=s, dst=dst, user=u if (u or s) else "fallback",
                                                      additional={"k": "v"} if k % 2 else {}),
        st.integers(0, 10**6), st.integers(0, 10**12), st.one_of(st.none(), st.integers(0, 10**6)),
        categories(), st.one_of(st.none(), st.text(min_size=1, max_size=5)),
        st.one_of(st.none(), st.sampled_from(["10.0.0.1", "fe80::1"])),
        st.one_of(st.none(), st.text(max_size=4)),
    ),
    max_size=15,
)


@given(events_st)
def test_jsonl_round_trip(tmp_path_factory, events):
    p = tmp_path_factory.mktemp("ev") / "e.jsonl"
    write_events(events, p)
    assert read_events(p) == events


def test_jsonl_field_names(tmp_path):
    p = tmp_path / "e.jsonl"
    write_events([ev("a", 1, A, user="u")], p)
    assert set(json.loads(p.read_text())) == {"id", "analyzer", "create_time", "detect_time", "src", "dst", "user",
                                              "category", "additional"}


@pytest.mark.parametrize("patch,match", [
    ({"create_time": "yesterday"}, "timestamp"),
    ({"category": "Authentication_Activity.Login_Moon.Account_Success"}, "category"),
    ({"user": None, "src": None}, "source"),
])
def test_read_events_format_errors(tmp_path, patch, match):
    rec = {"id": "a", "analyzer": "x", "create_time": 1, "detect_time": None, "src": "h", "dst": None, "user": "u",
           "category": str(A), "additional": {}}
    rec.update(patch)
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"id": "ok", **{k: v for k, v in rec.items() if k != "id"}, **{"create_time": 0,
                 "category": str(A), "user": "u"}}) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(FormatError, match=match) as exc:
        read_events(p)
    assert exc.value.line == 2
