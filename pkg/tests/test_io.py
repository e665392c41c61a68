import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptfh.data import AreaData
from ptfh.errors import DataError
from ptfh.io import fmt, parse_dataset, write_csv, write_dataset


def parse_text(text: str) -> AreaData:
    return parse_dataset(io.StringIO(text))


def test_three_row_file():
    d = parse_text("area_id,y,x1,D\na,1.5,0.2,0.1\nb,2.5,0.4,0.2\nc,3.5,0.9,0.3\n")
    assert d.m == 3 and d.p == 2
    assert d.covariate_names == ["x1"]
    np.testing.assert_array_equal(d.X[:, 0], 1.0)
    np.testing.assert_array_equal(d.D, [0.1, 0.2, 0.3])
    assert d.area_id == ["a", "b", "c"]


def test_both_variance_sources_rejected():
    zs = ",".join(f"z{k}" for k in range(1, 11))
    text = f"area_id,y,x1,D,{zs}\na,1,0,0.1,{','.join(['1'] * 10)}\n"
    with pytest.raises(DataError) as err:
        parse_text(text)
    assert "'D'" in str(err.value) and "'z1'" in str(err.value)


def test_nonpositive_y_cites_row():
    rows = [f"a{i},{0 if i == 7 else i},0.5,0.1" for i in range(1, 10)]
    with pytest.raises(DataError, match="row 7"):
        parse_text("area_id,y,x1,D\n" + "\n".join(rows) + "\n")


@pytest.mark.parametrize("text,pattern", [
    ("", "empty"),
    ("area_id,y,D\n", "no data rows"),
    ("area_id,y,y,D\na,1,1,1\n", "duplicate"),
    ("y,D\n1,1\n", "area_id"),
    ("area_id,y,x1\na,1,2\n", "'D' column or replicate"),
    ("area_id,y,z1\na,1,2\n", "two replicate"),
    ("area_id,y,D\na,1\n", "row 1: expected 3"),
    ("area_id,y,D\na,1,\n", "row 1, column 'D': missing"),
    ("area_id,y,D\na,1,abc\n", "not a number"),
    ("area_id,y,D\na,1,nan\n", "finite"),
    ("area_id,y,D\na,1,1\nb,2,-1\n", "row 2, column 'D'"),
    ("area_id,y,z1,z2\na,1,1,1\nb,2,1,0\n", "row 2, column 'z2'"),
    ("area_id,y,D\na,1,1\na,2,1\n", "unique"),
])
def test_invalid_files(text, pattern):
    with pytest.raises(DataError, match=pattern):
        parse_text(text)


def test_replicate_columns_ordered_numerically():
    d = parse_text("area_id,y,z10,z2,z1\na,1,10,2,1\n")
    np.testing.assert_array_equal(d.Z, [[1.0, 2.0, 10.0]])


def test_fmt_full_precision():
    assert float(fmt(math.pi)) == math.pi
    assert fmt(np.float64(0.1)) == "0.1"
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3" and fmt(None) == ""


def test_write_csv_layout():
    buf = io.StringIO()
    write_csv(buf, [{"a": 1, "b": 0.5}, {"a": 2, "b": math.nan}])
    assert buf.getvalue() == "a,b\n1,0.5\n2,nan\n"


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
positive = st.floats(1e-300, 1e300, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    m = draw(st.integers(1, 6))
    q = draw(st.integers(0, 3))
    ids = [f"r{i}" for i in range(m)]
    y = draw(st.lists(positive, min_size=m, max_size=m))
    x = np.array(draw(st.lists(finite, min_size=m * q, max_size=m * q))).reshape(m, q)
    X = np.column_stack([np.ones(m), x])
    if draw(st.booleans()):
        return AreaData(ids, y, X, D=draw(st.lists(positive, min_size=m, max_size=m)))
    k = draw(st.integers(2, 4))
    Z = np.array(draw(st.lists(positive, min_size=m * k, max_size=m * k))).reshape(m, k)
    return AreaData(ids, y, X, Z=Z)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_round_trip(data):
    buf = io.StringIO()
    write_dataset(data, buf)
    back = parse_text(buf.getvalue())
    assert back.area_id == data.area_id
    assert back.covariate_names == data.covariate_names
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.X, data.X)
    for a, b in ((back.D, data.D), (back.Z, data.Z)):
        if b is None:
            assert a is None
        else:
            np.testing.assert_array_equal(a, b)
