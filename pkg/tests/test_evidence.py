import math
from fractions import Fraction

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mapborrow.errors import DataError, DomainError
from mapborrow.evidence import (Evidence, StudyCounts, counts_to_csv, load_dataset, margin_to_rr,
                                parse_dataset, to_evidence)


def direct_log_rr(rt, nt, rc, nc):
    # exact rational arithmetic, logs/roots taken once at the end
    ratio = Fraction(rt, nt) / Fraction(rc, nc)
    var = Fraction(1, rt) - Fraction(1, nt) + Fraction(1, rc) - Fraction(1, nc)
    return math.log(ratio), math.sqrt(var)


@st.composite
def counts(draw, allow_degenerate=True):
    n_t = draw(st.integers(1, 300))
    n_c = draw(st.integers(1, 300))
    lo = 0 if allow_degenerate else 1
    r_t = draw(st.integers(lo, n_t if allow_degenerate else max(1, n_t - 1)))
    r_c = draw(st.integers(lo, n_c if allow_degenerate else max(1, n_c - 1)))
    return StudyCounts("x", r_t, n_t, r_c, n_c)


@pytest.mark.parametrize("c, y, s", [
    (StudyCounts("4", 19, 23, 16, 22), 0.1274, 0.1619),
    (StudyCounts("7", 74, 84, 73, 80, "III"), -0.0352, 0.0530),
])
def test_table2_studies(c, y, s):
    ev = to_evidence(c, correction=0)
    assert ev.y == pytest.approx(y, abs=1e-3)
    assert ev.s == pytest.approx(s, abs=1e-3)
    ry, rs = direct_log_rr(c.r_t, c.n_t, c.r_c, c.n_c)
    assert ev.y == pytest.approx(ry, rel=1e-12)
    assert ev.s == pytest.approx(rs, rel=1e-12)


def test_equal_arms_give_zero():
    assert to_evidence(StudyCounts("x", 30, 40, 30, 40)).y == 0.0


def test_correction_only_applied_to_degenerate_studies():
    plain = StudyCounts("a", 19, 23, 16, 22)
    assert to_evidence(plain, 0.5) == to_evidence(plain, 0.0)
    full = StudyCounts("b", 40, 40, 36, 40)
    ev = to_evidence(full)
    assert ev.y == pytest.approx(math.log((40.5 / 41) / (36.5 / 41)))
    assert ev.s == pytest.approx(math.sqrt(1 / 40.5 - 1 / 41 + 1 / 36.5 - 1 / 41))


def test_zero_responders_need_correction():
    with pytest.raises(DataError):
        to_evidence(StudyCounts("z", 0, 10, 5, 10), correction=0)
    assert to_evidence(StudyCounts("z", 0, 10, 5, 10)).s > 0


def test_all_cells_full_without_correction_is_degenerate():
    with pytest.raises(DataError):
        to_evidence(StudyCounts("z", 10, 10, 10, 10), correction=0)


@pytest.mark.parametrize("args", [(-1, 10, 5, 10), (11, 10, 5, 10), (1, 0, 0, 10), (1, 10, 11, 10)])
def test_invalid_counts(args):
    with pytest.raises(DataError):
        StudyCounts("bad", *args)


def test_invalid_phase():
    with pytest.raises(DataError):
        StudyCounts("bad", 1, 2, 1, 2, "IV")


@given(counts())
def test_arm_swap_antisymmetry(c):
    a, b = to_evidence(c), to_evidence(c.swapped())
    assert a.y == pytest.approx(-b.y, abs=1e-12)
    assert a.s == pytest.approx(b.s, rel=1e-12)


@given(counts(allow_degenerate=False), st.integers(2, 10))
def test_precision_grows_with_sample_size(c, k):
    assume(0 < c.r_t < c.n_t and 0 < c.r_c < c.n_c)
    big = StudyCounts("x", k * c.r_t, k * c.n_t, k * c.r_c, k * c.n_c)
    assert to_evidence(big).s < to_evidence(c).s
    assert to_evidence(big).y == pytest.approx(to_evidence(c).y, abs=1e-12)


@pytest.mark.parametrize("pc, m, expected", [(0.9, 0.12, 0.8667), (0.7, 0.12, 0.8286), (0.6, 0.0, 1.0)])
def test_margin_to_rr(pc, m, expected):
    assert margin_to_rr(pc, m).rr_threshold == pytest.approx(expected, abs=5e-4)


def test_published_margin_rounds_to_0867():
    assert round(margin_to_rr(0.9, 0.12).rr_threshold, 3) == 0.867


@given(st.floats(0.2, 1.0), st.floats(0.2, 1.0), st.floats(0.01, 0.19))
def test_margin_increasing_in_control_rate(p1, p2, m):
    assume(abs(p1 - p2) > 1e-6)
    lo, hi = sorted((p1, p2))
    assert margin_to_rr(lo, m).rr_threshold < margin_to_rr(hi, m).rr_threshold


@pytest.mark.parametrize("pc, m", [(0.1, 0.12), (0.5, 0.5), (1.2, 0.1), (0.9, -0.1)])
def test_invalid_margin(pc, m):
    with pytest.raises(DomainError):
        margin_to_rr(pc, m)


def test_csv_round_trip(tmp_path):
    cs = [StudyCounts("4", 19, 23, 16, 22), StudyCounts("7", 74, 84, 73, 80, "III")]
    path = tmp_path / "d.csv"
    path.write_text(counts_to_csv(cs))
    assert load_dataset(path) == cs


def test_jsonl_evidence_records():
    text = '{"record": "config", "verb": "analyze"}\n{"record": "evidence", "study_id": "a", "y": 0.1, "s": 0.2}\n'
    assert parse_dataset(text) == [Evidence("a", 0.1, 0.2)]


@pytest.mark.parametrize("text, fragment", [
    ("study_id,r_t,n_t,r_c,n_c,phase\n4,19,23,16\n", "line 2"),
    ("study_id,r_t,n_t,r_c,n_c,phase\n4,19,23,16,22,II\n5,x,18,12,17,II\n", "line 3"),
    ("study_id,r_t,n_t,r_c,n_c,phase\n4,30,23,16,22,II\n", "line 2"),
    ("r_t,n_t\n1,2\n", "header"),
    ('{"study_id": "a", "y": 0.1}\n', "record 1"),
    ("study_id,r_t,n_t,r_c,n_c\n4,1,2,1,2\n4,1,2,1,2\n", "duplicate"),
    ("", "empty"),
])
def test_parse_errors_name_the_record(text, fragment):
    with pytest.raises(DataError, match=fragment):
        parse_dataset(text)
