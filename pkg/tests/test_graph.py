from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KOB_MATRIX, KOB_MUSICIANS
from forbidden_triads.graph import build_index, coplay_weight, musician_stats, session_weight_matrix
from forbidden_triads.records import Dataset, make_session


def test_three_shared_sessions():
    d = Dataset(
        tuple(make_session(f"s{i}", "a", y, {"a": {"p"}, "b": {"b"}}, 1) for i, y in enumerate([1957, 1957, 1958]))
    )
    ix = build_index(d)
    assert coplay_weight(ix, "a", "b", 1959) == 3
    assert coplay_weight(ix, "b", "a", 1958) == 2
    assert coplay_weight(ix, "a", "b", 1957) == 0


def test_same_year_sessions_do_not_count():
    d = Dataset(
        (
            make_session("s1", "a", 1960, {"a": {"p"}, "b": {"b"}}, 1),
            make_session("s2", "a", 1960, {"a": {"p"}, "b": {"b"}, "c": {"d"}}, 1),
        )
    )
    ix = build_index(d)
    assert not session_weight_matrix(ix, d["s2"]).any()


def test_self_weight_is_an_error():
    ix = build_index(Dataset((make_session("s", "a", 1960, {"a": {"p"}}, 1),)))
    with pytest.raises(ValueError):
        coplay_weight(ix, "a", "a", 1961)
    assert coplay_weight(ix, "a", "nobody", 1961) == 0


def test_kind_of_blue_matrix(kob):
    ix = build_index(kob)
    s = kob["kind_of_blue"]
    assert s.musicians == KOB_MUSICIANS
    assert (session_weight_matrix(ix, s) == KOB_MATRIX).all()
    assert coplay_weight(ix, "chambers_p", "davis_m", 1959) == 22
    assert coplay_weight(ix, "kelly_w", "davis_m", 1959) == 0
    assert all(coplay_weight(ix, a, b, kob.years[0]) == 0 for a, b in combinations(KOB_MUSICIANS, 2))


def test_musician_stats(kob):
    ix = build_index(kob)
    st_ = musician_stats(ix, "chambers_p", 1959)
    assert st_.prior_sessions == 58 and len(st_.prior_releases) == 58
    assert musician_stats(ix, "newcomer", 1959) == (0, (), frozenset())
    d = Dataset((make_session("s", "a", 1950, {"a": {"tp"}}, 1),))
    assert musician_stats(build_index(d), "a", 1960, span=(1958, 1959)).instruments == frozenset()
    assert musician_stats(build_index(d), "a", 1951).instruments == {"tp"}


def test_single_and_stranger_sessions():
    d = Dataset(
        (
            make_session("s0", "a", 1950, {"a": {"p"}}, 1),
            make_session("s1", "a", 1951, {"a": {"p"}}, 1),
            make_session("s2", "x", 1951, {"x": {"p"}, "y": {"q"}, "z": {"r"}}, 1),
        )
    )
    ix = build_index(d)
    assert session_weight_matrix(ix, d["s1"]).tolist() == [[1]]
    assert not session_weight_matrix(ix, d["s2"]).any()


@st.composite
def corpora(draw):
    pool = [f"m{i}" for i in range(draw(st.integers(3, 8)))]
    n = draw(st.integers(1, 15))
    sessions = []
    for k in range(n):
        people = draw(st.lists(st.sampled_from(pool), min_size=1, max_size=5, unique=True))
        sessions.append(make_session(f"s{k}", people[0], draw(st.integers(1950, 1956)), {m: {"x"} for m in people}, 1))
    return Dataset(tuple(sessions))


@given(corpora())
@settings(max_examples=150, deadline=None)
def test_weights_match_brute_force_scan(d):
    ix = build_index(d)
    people = sorted(d.musicians)
    for t in range(1950, 1958):
        for a, b in combinations(people, 2):
            brute = sum(1 for s in d if s.year < t and a in s.musicians and b in s.musicians)
            assert ix.weight(a, b, t) == ix.weight(b, a, t) == brute
            assert ix.weight(a, b, t + 1) >= ix.weight(a, b, t)


@given(corpora())
@settings(max_examples=100, deadline=None)
def test_yearly_increments_equal_pair_counts(d):
    ix = build_index(d)
    people = sorted(d.musicians)
    for t in d.years:
        inc = sum(ix.weight(a, b, t + 1) - ix.weight(a, b, t) for a, b in combinations(people, 2))
        assert inc == sum(len(s.personnel) * (len(s.personnel) - 1) // 2 for s in d.sessions_in_year(t))


def test_weight_matrix_symmetric(kob):
    ix = build_index(kob)
    for s in kob:
        w = session_weight_matrix(ix, s)
        assert np.array_equal(w, w.T)
