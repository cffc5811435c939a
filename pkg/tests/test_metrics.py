import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmeagraph.errors import EmptyTruth
from fmeagraph.metrics import canonicalize, dedupe, macro_average, macro_metrics, metrics_at_n


def test_formula_example():
    p, r, f1 = metrics_at_n(["a", "x", "b", "y"], {"a", "b", "c", "d", "e"}, 4)
    assert (p, r) == (0.5, 0.4)
    assert f1 == pytest.approx(4 / 9)


def test_zero_hits():
    assert metrics_at_n(["x", "y"], {"a"}, 2) == (0.0, 0.0, 0.0)


def test_perfect():
    assert metrics_at_n(["a", "b", "c"], {"a", "b", "c"}, 3) == (1.0, 1.0, 1.0)


def test_short_ranking_still_divides_by_n():
    assert metrics_at_n(["a"], {"a"}, 4)[0] == 0.25


def test_errors():
    with pytest.raises(EmptyTruth):
        metrics_at_n(["a"], set(), 1)
    with pytest.raises(ValueError):
        metrics_at_n(["a"], {"a"}, 0)


def test_macro_singleton_and_mean():
    assert macro_metrics([["a", "b"]], [{"a"}], 2) == metrics_at_n(["a", "b"], {"a"}, 2)
    assert macro_average([0.4, 0.6]) == pytest.approx(0.5)


def test_macro_f1_is_mean_of_f1():
    rankings = [["a", "b"], ["c", "d"]]
    truths = [{"a"}, set("cdefghij")]
    # per scenario at n=2: (0.5, 1, 2/3) and (1, 0.25, 0.4)
    p, r, f1 = macro_metrics(rankings, truths, 2)
    assert (p, r) == (0.75, 0.625)
    assert f1 == pytest.approx((2 / 3 + 0.4) / 2)
    assert abs(f1 - 2 * p * r / (p + r)) > 0.1


def test_canonicalize_and_dedupe():
    aliases = {"wear of clamp": "wear of jig"}
    assert canonicalize("  Wear of  CLAMP", aliases) == "wear of jig"
    assert canonicalize("Other", aliases) == "other"
    assert dedupe(["b", "a", "b", "c", "a"]) == ["b", "a", "c"]


@given(st.lists(st.integers(0, 15), max_size=25), st.sets(st.integers(0, 15), min_size=1),
       st.integers(1, 20))
def test_bounds_and_consistency(ranking, truth, n):
    p, r, f1 = metrics_at_n(ranking, truth, n)
    assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0 and 0.0 <= f1 <= 1.0
    assert min(p, r) - 1e-12 <= f1 <= max(p, r) + 1e-12
    hits = len(truth & set(ranking[:n]))
    assert p * n == pytest.approx(hits)
    assert r * len(truth) == pytest.approx(hits)
