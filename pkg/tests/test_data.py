import io
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtrade.data import (
    DataError,
    PriceSeries,
    load_prices,
    parse_kind,
    resample,
    synthetic_series,
    to_returns,
    write_prices,
)


def series(prices, asset="X"):
    dates = np.datetime64("2020-01-01") + np.arange(len(prices))
    return PriceSeries(asset, dates, prices)


# ---------------------------------------------------------------- load_prices


def test_load_single_ticker():
    text = "date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,11\n2020-01-06,AAA,12.5\n"
    out = load_prices(io.StringIO(text))
    assert list(out) == ["AAA"]
    assert out["AAA"].prices.tolist() == [10, 11, 12.5]
    assert str(out["AAA"].dates[0]) == "2020-01-02"


def test_load_drops_incomplete_ticker():
    text = (
        "date,ticker,close\n"
        "2020-01-02,AAA,10\n2020-01-03,AAA,11\n2020-01-06,AAA,12\n"
        "2020-01-02,BBB,5\n2020-01-06,BBB,6\n"
    )
    with pytest.warns(UserWarning, match="dropping BBB"):
        out = load_prices(text)
    assert list(out) == ["AAA"]


def test_load_empty_stream():
    assert load_prices(io.StringIO("")) == {}
    assert load_prices("date,ticker,close\n") == {}


def test_load_column_order_free():
    out = load_prices("ticker,close,date\nZ,3,2021-05-05\nZ,4,2021-05-06\n")
    assert out["Z"].prices.tolist() == [3, 4]


@pytest.mark.parametrize(
    "body,match",
    [
        ("2020-01-02,AAA\n", "line 2"),
        ("2020-01-02,AAA,10\nnot-a-date,AAA,3\n", "line 3: bad date"),
        ("2020-01-02,AAA,abc\n", "line 2: bad close"),
        ("2020-01-02,AAA,0\n", "non-positive"),
        ("2020-01-02,AAA,-1\n", "non-positive"),
        ("2020-01-02,AAA,1\n2020-01-02,AAA,2\n", "line 3: duplicate"),
    ],
)
def test_load_errors(body, match):
    with pytest.raises(DataError, match=match):
        load_prices("date,ticker,close\n" + body)


def test_load_bad_header():
    with pytest.raises(DataError, match="header"):
        load_prices("day,ticker,close\n2020-01-01,A,1\n")


def test_load_independent_of_row_order():
    lines = [f"2020-01-{d:02d},{t},{10 + d + i}" for i, t in enumerate("ABC") for d in range(1, 20)]
    a = load_prices("date,ticker,close\n" + "\n".join(lines))
    random.Random(0).shuffle(lines)
    b = load_prices("date,ticker,close\n" + "\n".join(lines))
    assert list(a) == list(b)
    assert all(a[k] == b[k] for k in a)


def test_write_then_load_round_trip():
    s = [synthetic_series("gbm", 30, seed=i, asset_id=f"S{i}") for i in range(3)]
    buf = io.StringIO()
    write_prices(s, buf)
    back = load_prices(buf.getvalue())
    assert [back[x.asset_id] == x for x in s] == [True] * 3


def test_price_series_validation():
    with pytest.raises(DataError):
        series([1.0, -2.0])
    with pytest.raises(DataError):
        PriceSeries("X", np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]"), [1, 2])


# ---------------------------------------------------------------- resample / to_returns


def test_resample_every_fifth():
    s = series(np.arange(1.0, 12.0))
    r = resample(s, 5)
    assert r.prices.tolist() == [1.0, 6.0, 11.0]
    assert r.horizon == 5


def test_resample_identity():
    s = series([1.0, 2.0, 3.0])
    assert resample(s, 1) == s


def test_resample_too_short():
    with pytest.raises(DataError, match="too short"):
        resample(series([1.0, 2.0, 3.0, 4.0]), 5)


def test_returns_basic():
    r = to_returns(series([100.0, 110.0]))
    assert r.simple_returns[0] == pytest.approx(0.10, abs=1e-15)
    assert r.signs.tolist() == [1]


def test_zero_return_is_down():
    r = to_returns(series([100.0, 100.0]))
    assert r.simple_returns.tolist() == [0.0]
    assert r.signs.tolist() == [0]


def test_returns_down_up():
    r = to_returns(series([100.0, 90.0, 99.0]))
    assert r.simple_returns == pytest.approx([-0.10, 0.10], abs=1e-15)
    assert r.signs.tolist() == [0, 1]


def test_returns_need_two_prices():
    with pytest.raises(DataError):
        to_returns(series([1.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 200.0), min_size=6, max_size=120))
def test_composition_length_and_sign_consistency(prices):
    s = series(prices)
    r = to_returns(resample(s, 5))
    assert len(r) == (len(s) - 1) // 5
    assert np.array_equal(r.signs == 1, r.simple_returns > 0)


# ---------------------------------------------------------------- synthetic


def test_trend_all_up():
    r = to_returns(synthetic_series("trend", 100, seed=3))
    assert len(r) == 99
    assert r.signs.all()


def test_periodic_two_alternates():
    signs = to_returns(synthetic_series("periodic", 50, seed=1, period=2)).signs
    assert all(signs[i] != signs[i + 1] for i in range(len(signs) - 1))


@pytest.mark.parametrize("p", [1, 3, 4, 8])
def test_periodic_has_exact_period(p):
    signs = to_returns(synthetic_series("periodic", 200, seed=p, period=p)).signs
    assert np.array_equal(signs[p:], signs[:-p])
    for d in range(1, p):
        if p % d == 0:
            assert not np.array_equal(signs[d:], signs[:-d])


def test_iid_coin_balance():
    r = to_returns(synthetic_series("iid_coin", 10_001, seed=12))
    assert 0.47 <= r.signs.mean() <= 0.53
    assert set(np.round(np.abs(r.simple_returns), 12)) == {0.01}


@pytest.mark.parametrize("kind,kw", [("iid_coin", {}), ("trend", {}), ("periodic", {"period": 5}), ("gbm", {})])
def test_synthetic_deterministic(kind, kw):
    assert synthetic_series(kind, 300, seed=9, **kw) == synthetic_series(kind, 300, seed=9, **kw)


def test_synthetic_errors():
    with pytest.raises(DataError):
        synthetic_series("trend", 1)
    with pytest.raises(DataError):
        synthetic_series("periodic", 10)
    with pytest.raises(DataError):
        synthetic_series("sawtooth", 10)


def test_parse_kind():
    assert parse_kind("periodic:4") == ("periodic", {"period": 4})
    assert parse_kind("gbm:0.001:0.01") == ("gbm", {"mu": 0.001, "sigma": 0.01})
    assert parse_kind("trend") == ("trend", {})
    with pytest.raises(DataError):
        parse_kind("periodic")
