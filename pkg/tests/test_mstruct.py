import numpy as np
import pytest

from app.core.errors import CorrelationError, SignatureError, StructureError
from app.core.mstruct import (
    Correlation,
    Predicate,
    compose,
    full_correlation,
    identity_correlation,
    inverse,
    is_correlation,
    metric_space,
    structure_from_file,
    structure_to_file,
    thicken,
    validate_structure,
)
from app.models.files import StructureFile


def _kinds(s):
    return [v.kind for v in validate_structure(s)]


def test_valid_two_point_space():
    s = metric_space(["a", "b"], [[0, 1], [1, 0]], diameter_bound=1.0)
    assert validate_structure(s) == []


def test_asymmetry_is_located():
    s = metric_space(["a", "b"], [[0, 1], [2, 0]], diameter_bound=2.0)
    v = validate_structure(s)
    assert [x.kind for x in v] == ["asymmetry"]
    assert v[0].witness == ("a", "b")


def test_triangle_violation_names_the_triple():
    s = metric_space(["a", "b", "c"], [[0, 1, 3], [1, 0, 1], [3, 1, 0]], diameter_bound=3.0)
    v = [x for x in validate_structure(s) if x.kind == "triangle"]
    assert v and v[0].witness == ("a", "b", "c")


def test_diameter_bound_and_separation():
    assert "diameter" in _kinds(metric_space(["a", "b"], [[0, 5], [5, 0]], diameter_bound=1.0))
    assert "separation" in _kinds(metric_space(["a", "b"], [[0, 0], [0, 0]], diameter_bound=1.0))


def test_empty_sort_and_duplicate_labels():
    assert "empty-sort" in _kinds(metric_space([], np.zeros((0, 0)), diameter_bound=1.0))
    assert "duplicate-label" in _kinds(metric_space(["a", "a"], [[0, 1], [1, 0]], diameter_bound=1.0))


def test_predicate_range_and_lipschitz():
    d = [[0, 1], [1, 0]]
    ok = Predicate("U", ("S",), [0.0, 0.5], (0.0, 1.0), (1.0,))
    assert validate_structure(metric_space(["a", "b"], d, predicates=[ok])) == []

    out_of_range = Predicate("U", ("S",), [0.0, 1.5], (0.0, 1.0), (2.0,))
    assert "range" in _kinds(metric_space(["a", "b"], d, predicates=[out_of_range]))

    steep = Predicate("U", ("S",), [0.0, 1.0], (0.0, 1.0), (0.1,))
    assert "lipschitz" in _kinds(metric_space(["a", "b"], d, predicates=[steep]))


def test_predicate_shape_mismatch():
    p = Predicate("U", ("S",), [0.0, 0.5, 1.0], (0.0, 1.0), (1.0,))
    assert "dimension" in _kinds(metric_space(["a", "b"], [[0, 1], [1, 0]], predicates=[p]))


def test_ragged_metric_from_file_is_a_violation_not_a_crash():
    spec = StructureFile.model_validate(
        {"sorts": [{"name": "S", "points": ["a", "b"], "metric": [[0, 1], [1]], "diameter_bound": 1}]}
    )
    s = structure_from_file(spec)
    assert "malformed" in _kinds(s)


def test_file_round_trip_keeps_fingerprint(line3):
    back = structure_from_file(structure_to_file(line3))
    assert back.fingerprint == line3.fingerprint


def test_point_lookup(line3):
    assert line3.point("S", "y") == ("S", 1)
    assert line3.point("S", 2) == ("S", 2)
    with pytest.raises(StructureError):
        line3.point("S", "nope")


def test_signature_merge_widens_bounds(pair_1, two_apart):
    sig = pair_1.signature.merge(two_apart.signature)
    assert sig.sorts["S"] == 3.0
    other = metric_space(["a"], [[0]], sort="T", diameter_bound=1.0)
    with pytest.raises(SignatureError):
        pair_1.signature.merge(other.signature)


def test_is_correlation_examples(pair_1):
    assert is_correlation(identity_correlation(pair_1))
    assert is_correlation(full_correlation(pair_1, pair_1))
    bad = Correlation(pair_1, pair_1, {"S": [[0, 0], [1, 1]]})
    check = is_correlation(bad)
    assert not check
    assert (check.kind, check.index) == ("row", 0)


def test_dimension_mismatch_raises(pair_1, line3):
    with pytest.raises(CorrelationError):
        Correlation(pair_1, line3, {"S": np.ones((2, 2))})


def test_compose_identity_and_brute_force(pair_1, line3):
    ident = identity_correlation(pair_1)
    assert np.array_equal(compose(ident, ident).relation["S"], np.eye(2, dtype=bool))

    r1 = Correlation(pair_1, line3, {"S": [[1, 0, 0], [0, 1, 1]]})
    r2 = Correlation(line3, pair_1, {"S": [[0, 1], [1, 0], [0, 1]]})
    expected = np.zeros((2, 2), dtype=bool)
    for a in range(2):
        for b in range(3):
            for c in range(2):
                if r1.relation["S"][a, b] and r2.relation["S"][b, c]:
                    expected[a, c] = True
    assert np.array_equal(compose(r1, r2).relation["S"], expected)


def test_compose_requires_matching_middle(pair_1, pair_3):
    with pytest.raises(CorrelationError):
        compose(identity_correlation(pair_1), identity_correlation(pair_3))


def test_inverse_transposes(pair_1, line3):
    r = Correlation(pair_1, line3, {"S": [[1, 0, 0], [0, 1, 1]]}, (("S", 1, 2),))
    inv = inverse(r)
    assert np.array_equal(inv.relation["S"], r.relation["S"].T)
    assert inv.anchors == (("S", 2, 1),)


def test_thicken_matches_pairwise_scan(line3):
    base = Correlation(line3, line3, {"S": [[1, 0, 0], [0, 0, 0], [0, 0, 0]]})
    got = thicken(base, 0.5).relation["S"]
    assert np.array_equal(got, base.relation["S"])

    got = thicken(base, 1.0).relation["S"]
    d = line3.sort("S").metric
    want = np.zeros((3, 3), dtype=bool)
    for a in range(3):
        for b in range(3):
            want[a, b] = d[a, 0] <= 1.0 and d[b, 0] <= 1.0
    assert np.array_equal(got, want)


def test_thicken_rejects_negative_delta(line3):
    with pytest.raises(CorrelationError):
        thicken(identity_correlation(line3), -0.1)
