"""Parsing, windowing and deduplication tests."""

import random
from datetime import timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import REF, ev, make_job, ts
from jobgraph.ingest import (
    InteractionEvent,
    SignalKind,
    dedupe,
    format_event,
    format_timestamp,
    parse_embeddings,
    parse_events,
    parse_jobs,
    parse_timestamp,
    parse_users,
    resolve_jobs,
    window_filter,
    write_events,
)


# ---------------------------------------------------------------------------
# timestamps


def test_parse_timestamp_variants():
    z = parse_timestamp("2017-06-01T00:00:00Z")
    offset = parse_timestamp("2017-06-01T02:00:00+02:00")
    naive = parse_timestamp("2017-06-01T00:00:00")
    assert z == offset == naive
    assert z.tzinfo == timezone.utc


def test_format_timestamp_round_trip():
    stamp = ts(17.25, 42)
    assert parse_timestamp(format_timestamp(stamp)) == stamp
    assert format_timestamp(stamp).endswith("Z")


# ---------------------------------------------------------------------------
# events file


def test_parse_events_five_and_four_fields():
    lines = [
        "u1,j1,apply,2017-05-01T12:00:00Z,q9",
        "u1,j2,click,2017-05-02T12:00:00Z,",
        "u2,j1,email_open_no_click,2017-05-03T08:30:00Z",
    ]
    events, issues = parse_events(lines)
    assert not issues
    assert [e.kind for e in events] == [
        SignalKind.APPLY,
        SignalKind.CLICK,
        SignalKind.EMAIL_OPEN_NO_CLICK,
    ]
    assert events[0].query_id == "q9"
    assert events[1].query_id is None


def test_parse_events_recovers_per_line():
    lines = [
        "u1,j1,apply,2017-05-01T12:00:00Z",
        "u1,j1,frobnicate,2017-05-01T12:00:00Z",
        "u1,j1,apply,not-a-date",
        ",j1,apply,2017-05-01T12:00:00Z",
        "u9,j9,click,2017-05-04T12:00:00Z,q1",
        "too,few",
    ]
    events, issues = parse_events(lines)
    assert len(events) == 2
    assert len(issues) == 4
    assert {i.line_no for i in issues} == {2, 3, 4, 6}


def test_parse_events_fuzz_counts_recovered():
    rng = random.Random(4)
    kinds = ["apply", "click", "email_open_no_click"]
    good, bad = [], []
    for i in range(200):
        line = f"u{rng.randrange(20)},j{rng.randrange(30)},{rng.choice(kinds)},2017-0{rng.randrange(1, 6)}-10T0{rng.randrange(10)}:00:00Z"
        good.append(line)
    for i in range(40):
        base = good[rng.randrange(len(good))].split(",")
        mutation = rng.randrange(3)
        if mutation == 0:
            base[2] = "bogus"
        elif mutation == 1:
            base[3] = "2017-99-99"
        else:
            base = base[:2]
        bad.append(",".join(base))
    mixed = good + bad
    rng.shuffle(mixed)
    events, issues = parse_events(mixed)
    assert len(events) == 200
    assert len(issues) == 40


def test_event_round_trip_is_fixed_point(tmp_path):
    events = [
        ev("u1", "j1", SignalKind.APPLY, 3.0),
        ev("u2", "j2", SignalKind.CLICK, 1.5, query_id="q1"),
        ev("u3", "j3", SignalKind.EMAIL_OPEN_NO_CLICK, 0.25),
    ]
    path = tmp_path / "events.csv"
    with path.open("w") as fh:
        write_events(events, fh)
    reparsed, issues = parse_events(path.read_text().splitlines())
    assert not issues
    assert reparsed == events
    assert [format_event(e) for e in reparsed] == [format_event(e) for e in events]


# ---------------------------------------------------------------------------
# jobs / users / embeddings files


def test_parse_jobs_happy_and_issues():
    lines = [
        "j1,Nurse,healthcare,40.7,-74.0,2017-04-01T00:00:00Z,active",
        "j2,Driver,transport,,,2017-04-02T00:00:00Z,expired",
        "j3,Clerk,admin,1.0,2.0,2017-04-03T00:00:00Z,limbo",
        "j4,NoCat,,1.0,2.0,2017-04-03T00:00:00Z,active",
    ]
    jobs, issues = parse_jobs(lines)
    assert set(jobs) == {"j1", "j2"}
    assert jobs["j1"].is_active and not jobs["j2"].is_active
    assert jobs["j1"].location == (40.7, -74.0)
    assert jobs["j2"].location is None
    assert len(issues) == 2


def test_parse_users():
    lines = [
        "u1,healthcare,40.7,-74.0,true",
        "u2,,,,false",
        "u3,sales,1.0,2.0,maybe",
    ]
    users, issues = parse_users(lines)
    assert set(users) == {"u1", "u2"}
    assert users["u2"].resume_category is None
    assert users["u2"].location is None
    assert not users["u2"].registered
    assert len(issues) == 1


def test_parse_embeddings_rejects_bad_vectors():
    lines = [
        "j1 1.0 0.0 0.0",
        "j2 0.5 0.5 0.5",
        "j3 1.0 0.0",          # dimension mismatch
        "j4 0.0 0.0 0.0",      # zero norm
        "j5 nan 0.0 1.0",      # non-finite
        "j6 a b c",            # non-numeric
    ]
    vectors, issues = parse_embeddings(lines)
    assert set(vectors) == {"j1", "j2"}
    assert vectors["j1"].shape == (3,)
    assert len(issues) == 4


# ---------------------------------------------------------------------------
# windowing


def test_window_boundary_is_strict():
    inside = ev("u", "a", age_days=179.0)
    just_inside = InteractionEvent("u", "b", SignalKind.APPLY, REF - timedelta(days=180) + timedelta(seconds=1))
    boundary = ev("u", "c", age_days=180.0)
    outside = ev("u", "d", age_days=181.0)
    future = ev("u", "e", age_days=-1.0)
    kept = window_filter([inside, just_inside, boundary, outside, future], REF, 180)
    assert [e.job_id for e in kept] == ["a", "b", "e"]


def test_window_filter_rejects_bad_window():
    with pytest.raises(ValueError):
        window_filter([], REF, 0)


def test_window_filter_matches_comprehension_oracle():
    rng = random.Random(9)
    events = [ev(f"u{i}", f"j{i}", age_days=rng.uniform(-10, 400)) for i in range(300)]
    kept = window_filter(events, REF, 180)
    expected = [e for e in events if (REF - e.timestamp) < timedelta(days=180)]
    assert kept == expected


# ---------------------------------------------------------------------------
# resolve + dedupe


def test_resolve_jobs_drops_unknown():
    jobs = {"j1": make_job("j1")}
    events = [ev("u1", "j1"), ev("u1", "ghost"), ev("u2", "j1")]
    kept, dropped = resolve_jobs(events, jobs)
    assert dropped == 1
    assert [e.job_id for e in kept] == ["j1", "j1"]


def test_dedupe_keeps_latest_and_unions_queries():
    events = [
        ev("u1", "j1", SignalKind.CLICK, 5.0, query_id="q1"),
        ev("u1", "j1", SignalKind.CLICK, 2.0, query_id="q2"),
        ev("u1", "j1", SignalKind.CLICK, 9.0, query_id=None),
        ev("u1", "j1", SignalKind.APPLY, 4.0),
        ev("u1", "j1", SignalKind.APPLY, 7.0),
    ]
    out = dedupe(events)
    assert len(out) == 2
    by_kind = {s.kind: s for s in out}
    assert by_kind[SignalKind.CLICK].timestamp == ts(2.0)
    assert by_kind[SignalKind.CLICK].query_ids == frozenset({"q1", "q2"})
    assert by_kind[SignalKind.APPLY].timestamp == ts(4.0)
    assert by_kind[SignalKind.APPLY].query_ids == frozenset()


def test_dedupe_matches_brute_force_oracle():
    rng = random.Random(12)
    kinds = list(SignalKind)
    events = [
        ev(
            f"u{rng.randrange(6)}",
            f"j{rng.randrange(8)}",
            rng.choice(kinds),
            rng.uniform(0, 100),
            query_id=rng.choice([None, "qa", "qb"]),
        )
        for _ in range(400)
    ]
    out = dedupe(events)
    expected = {}
    for e in events:
        key = (e.user_id, e.job_id, e.kind)
        prev = expected.get(key)
        stamp = max(e.timestamp, prev[0]) if prev else e.timestamp
        queries = set(prev[1]) if prev else set()
        if e.kind is SignalKind.CLICK and e.query_id:
            queries.add(e.query_id)
        expected[key] = (stamp, queries)
    assert len(out) == len(expected)
    for s in out:
        stamp, queries = expected[(s.user_id, s.job_id, s.kind)]
        assert s.timestamp == stamp
        assert s.query_ids == frozenset(queries)


@given(st.permutations(list(range(12))))
def test_dedupe_is_order_invariant(order):
    rng = random.Random(77)
    base = [
        ev(
            f"u{rng.randrange(3)}",
            f"j{rng.randrange(3)}",
            rng.choice(list(SignalKind)),
            rng.uniform(0, 30),
            query_id=rng.choice([None, "q"]),
        )
        for _ in range(12)
    ]
    assert dedupe([base[i] for i in order]) == dedupe(base)
