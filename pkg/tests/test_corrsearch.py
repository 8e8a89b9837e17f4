import itertools

import numpy as np
import pytest

from app.core.corrsearch import (
    anchors_from_tuples,
    enumerate_correlations,
    reducts_isomorphic,
    rho_exact,
    rho_heuristic,
    rho_pointed,
    rho_stratified,
)
from app.core.demos import random_space
from app.core.distsys import builtin, distortion, joint_signature
from app.core.errors import CorrelaError, CorrelationError, SearchTooLarge
from app.core.mstruct import Correlation, Predicate, is_correlation, metric_space


def _gh(m, n):
    return builtin("gh", joint_signature(m, n))


def _pair(d, name=""):
    return metric_space(["a", "b"], [[0, d], [d, 0]], diameter_bound=2.0, name=name)


def _brute_force(sys, m, n):
    """Minimum distortion over every total surjective relation (single sort)."""
    rows, cols = m.sort("S").size, n.sort("S").size
    best = float("inf")
    for bits in itertools.product([False, True], repeat=rows * cols):
        rel = np.array(bits).reshape(rows, cols)
        if not (rel.any(axis=1).all() and rel.any(axis=0).all()):
            continue
        best = min(best, distortion(sys, Correlation(m, n, {"S": rel})).value)
    return best


def test_same_structure_is_zero_with_identity(line3):
    res = rho_exact(_gh(line3, line3), line3, line3)
    assert res.value == 0.0
    assert res.exact
    assert is_correlation(res.witness)


def test_two_point_spaces(pair_1, pair_3):
    res = rho_exact(_gh(pair_1, pair_3), pair_1, pair_3)
    assert res.value == pytest.approx(1.0)
    assert distortion(_gh(pair_1, pair_3), res.witness).value == pytest.approx(res.value)


def test_point_against_space(point, two_apart):
    assert rho_exact(_gh(point, two_apart), point, two_apart).value == pytest.approx(1.0)


@pytest.mark.parametrize("a, b", list(itertools.product([0.25, 0.5, 1.0, 2.0], repeat=2)))
def test_gh_closed_form_on_two_point_spaces(a, b):
    m, n = _pair(a), _pair(b)
    assert rho_exact(_gh(m, n), m, n).value == pytest.approx(0.5 * abs(a - b), abs=1e-9)


def test_point_against_random_spaces_is_half_diameter():
    rng = np.random.default_rng(5)
    for size in (2, 3, 4, 5):
        n = random_space(rng, size, unary=False)
        m = metric_space(["o"], [[0.0]], diameter_bound=2.0)
        want = 0.5 * float(n.sort("S").metric.max())
        assert rho_exact(_gh(m, n), m, n).value == pytest.approx(want, abs=1e-9)


def test_exact_matches_brute_force_on_small_random_pairs():
    rng = np.random.default_rng(9)
    for _ in range(4):
        m = random_space(rng, 3, unary=False)
        n = random_space(rng, 2, unary=False)
        sys = _gh(m, n)
        assert rho_exact(sys, m, n).value == pytest.approx(_brute_force(sys, m, n), abs=1e-9)


def test_result_independent_of_thread_count():
    rng = np.random.default_rng(2)
    m = random_space(rng, 4, unary=False)
    n = random_space(rng, 4, unary=False)
    sys = _gh(m, n)
    one = rho_exact(sys, m, n, threads=1)
    many = rho_exact(sys, m, n, threads=4)
    assert one.value == many.value
    assert one.witness.key() == many.witness.key()


def test_heuristic_is_an_upper_bound():
    rng = np.random.default_rng(4)
    for _ in range(3):
        m = random_space(rng, 4, unary=False)
        n = random_space(rng, 4, unary=False)
        sys = _gh(m, n)
        exact = rho_exact(sys, m, n).value
        heur = rho_heuristic(sys, m, n, 300, seed=1)
        assert not heur.exact
        assert heur.value >= exact - 1e-12
        assert is_correlation(heur.witness)


def test_heuristic_finds_zero_on_identical_structures(line3):
    assert rho_heuristic(_gh(line3, line3), line3, line3, 50, seed=0).value == 0.0


def test_heuristic_is_seed_deterministic():
    rng = np.random.default_rng(8)
    m = random_space(rng, 4, unary=False)
    n = random_space(rng, 4, unary=False)
    sys = _gh(m, n)
    a = rho_heuristic(sys, m, n, 200, seed=3)
    b = rho_heuristic(sys, m, n, 200, seed=3)
    assert a.value == b.value
    assert a.witness.key() == b.witness.key()


def test_pointed_same_structure(line3):
    res = rho_pointed(_gh(line3, line3), line3, [("S", "x")], line3, [("S", "x")])
    assert res.value == 0.0


def test_pointed_anchor_forces_bad_pairing(pair_1, pair_3):
    sys = _gh(pair_1, pair_3)
    assert rho_pointed(sys, pair_1, [("S", "p")], pair_3, [("S", "u")]).value == pytest.approx(1.0)
    forced = rho_pointed(sys, pair_1, [("S", "p"), ("S", "p")], pair_3, [("S", "u"), ("S", "v")])
    assert forced.value == pytest.approx(1.5)


def test_anchor_errors(pair_1, pair_3):
    with pytest.raises(CorrelationError):
        anchors_from_tuples(pair_1, [("S", "p")], pair_3, [])
    with pytest.raises(CorrelationError):
        anchors_from_tuples(pair_1, [("S", "nope")], pair_3, [("S", "u")])
    with pytest.raises(CorrelationError):
        anchors_from_tuples(pair_1, [("T", "p")], pair_3, [("S", "u")])


def test_size_guard(monkeypatch, pair_1, pair_3):
    monkeypatch.setenv("CORRELA_MAX_CELLS", "2")
    with pytest.raises(SearchTooLarge):
        rho_exact(_gh(pair_1, pair_3), pair_1, pair_3)
    assert rho_exact(_gh(pair_1, pair_3), pair_1, pair_3, force=True).value == pytest.approx(1.0)


def test_enumerate_correlations(pair_1):
    sys = _gh(pair_1, pair_1)
    zero = list(enumerate_correlations(sys, pair_1, pair_1, 0.0))
    # identity and swap
    assert len(zero) == 2
    assert all(v == 0.0 for _c, v in zero)
    assert len(list(enumerate_correlations(sys, pair_1, pair_1, 10.0))) == 7
    assert len(list(enumerate_correlations(sys, pair_1, pair_1, 10.0, limit=3))) == 3


# ──────────────────────────────────────────────────────────────────────────────
# stratified
# ──────────────────────────────────────────────────────────────────────────────

def _discrete(n, preds=()):
    d = 1.0 - np.eye(n)
    return metric_space([f"e{i}" for i in range(n)], d, diameter_bound=1.0, predicates=preds)


def _unary(values):
    return Predicate("P", ("S",), values, (0.0, 1.0), (1.0,))


def _binary(table):
    return Predicate("E", ("S", "S"), table, (0.0, 1.0), (1.0, 1.0))


def test_stratified_equal_structures():
    m = _discrete(3, [_unary([1, 0, 0])])
    res = rho_stratified([[], ["P"]], m, m)
    assert res.value == 0.0


def test_stratified_differs_at_first_predicate_level():
    m = _discrete(3, [_unary([1, 0, 0])])
    n = _discrete(3, [_unary([1, 1, 0])])
    res = rho_stratified([[], ["P"]], m, n)
    assert res.value == 1.0
    assert res.level == 0


def test_stratified_pure_sets_of_different_size():
    assert rho_stratified([[]], _discrete(2), _discrete(3)).value == 2.0


def test_reducts_with_binary_predicate():
    base = np.zeros((3, 3))
    e1, e2, loop = base.copy(), base.copy(), base.copy()
    e1[0, 1] = 1
    e2[2, 1] = 1
    loop[0, 0] = 1
    m = _discrete(3, [_binary(e1)])
    assert reducts_isomorphic(m, _discrete(3, [_binary(e2)]), ["E"])
    assert not reducts_isomorphic(m, _discrete(3, [_binary(loop)]), ["E"])


def test_reducts_compare_sentence_truth():
    on = Predicate("Z", (), 1.0, (0.0, 1.0), ())
    off = Predicate("Z", (), 0.0, (0.0, 1.0), ())
    m = _discrete(2, [_unary([1, 0]), on])
    n = _discrete(2, [_unary([0, 1]), off])
    assert reducts_isomorphic(m, n, ["P"])
    assert not reducts_isomorphic(m, n, ["P", "Z"])
    res = rho_stratified([["P"], ["P", "Z"]], m, n)
    assert res.value == pytest.approx(1.0)
    assert res.level == 0


def test_stratified_input_errors():
    m = _discrete(2, [_unary([1, 0])])
    with pytest.raises(CorrelaError):
        rho_stratified([["P"], []], m, m)
    not_discrete = metric_space(["a", "b"], [[0, 2], [2, 0]], predicates=[_unary([1, 0])])
    with pytest.raises(CorrelaError):
        rho_stratified([["P"]], not_discrete, not_discrete)


# ──────────────────────────────────────────────────────────────────────────────
# pseudo-metric behaviour
# ──────────────────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("family", ["gh", "lip", "fghk"])
def test_symmetry_and_triangle_inequality(family):
    rng = np.random.default_rng(21)
    for t in range(4):
        m, n, p = (random_space(rng, int(rng.integers(1, 4)), name=f"{t}{i}") for i in "mnp")
        sys = builtin(family, m.signature.merge(n.signature).merge(p.signature))
        mn = rho_exact(sys, m, n).value
        assert rho_exact(sys, n, m).value == pytest.approx(mn, abs=1e-12)
        np_ = rho_exact(sys, n, p).value
        mp = rho_exact(sys, m, p).value
        assert mp <= mn + np_ + 1e-9
