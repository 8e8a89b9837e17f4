import pytest

from app.core.errors import CorrelaError, StructureError
from app.core.mstruct import full_correlation, validate_structure
from app.core.pathology import (
    diagonal_correlation,
    diagonal_report,
    diagonal_value,
    check_irreg_characterization,
    disjoint_union,
    disjoint_union_demo,
    divergence_trend,
    dyadic_grid,
    identity_check,
    make_J,
    shifting_correlation,
    u_values,
    union_pair,
)


def test_make_J_metric_floor():
    s = make_J([1.0, 0.0, 0.0], 0.5)
    assert s.sort("I").size == 2
    assert s.sort("I").metric[0, 1] == pytest.approx(1.0)
    assert list(u_values(s)) == [0.0, 1.0]
    close = make_J([0.25, 0.5], 0.5)
    assert close.sort("I").metric[0, 1] == pytest.approx(0.5)
    assert validate_structure(close) == []


@pytest.mark.parametrize("points, eps", [([], 0.5), ([0.0, 1.5], 0.5), ([0.5], 2.0)])
def test_make_J_rejects_bad_input(points, eps):
    with pytest.raises(StructureError):
        make_J(points, eps)


def test_dyadic_grid():
    assert dyadic_grid(2) == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(CorrelaError):
        dyadic_grid(-1)


def test_disjoint_union_cross_distance():
    u = disjoint_union([make_J([0.0, 0.5], 0.0), make_J([0.5], 0.0)])
    so = u.sort("I")
    assert so.points == ("0:0.0", "0:0.5", "1:0.5")
    assert so.metric[0, 2] == 1.0
    assert so.metric[0, 1] == pytest.approx(0.5)
    assert validate_structure(u) == []


def test_identity_sits_at_zero():
    report = identity_check([0.0, 0.5, 1.0], 0.25)
    assert report.ok and report.u_match and report.within
    assert report.dis_gh == 0.0
    assert report.dis_iu == 0.0


def test_matched_U_makes_iu_equal_gh():
    c = diagonal_correlation(make_J([0.0, 0.2], 0.8), make_J([0.0, 0.2], 0.2))
    report = check_irreg_characterization(c, 0.3)
    assert report.ok and report.within
    assert report.dis_gh == pytest.approx(0.3)
    assert report.dis_iu == pytest.approx(report.dis_gh)


def test_U_gap_diverges_with_n_max():
    c = full_correlation(make_J([0.3], 0.0), make_J([0.4], 0.0))
    report = check_irreg_characterization(c, 0.1, n_max=16)
    assert not report.u_match
    assert report.divergent and report.ok
    assert not report.within
    assert report.dis_iu >= 1.6 - 1e-9


def test_diagonal_needs_same_points():
    with pytest.raises(CorrelaError):
        diagonal_correlation(make_J([0.0], 0.1), make_J([1.0], 0.1))


def test_diagonal_rows_match_closed_form():
    rows = diagonal_report(0.5, exponents=(2, 3))
    assert [r.g for r in rows] == [2, 3]
    for row in rows:
        assert row.dis_iu == pytest.approx(row.expected)
        assert row.dis_iu <= 0.25
    assert rows[0].expected == pytest.approx(0.125)
    assert rows[1].expected == pytest.approx(0.1875)
    assert diagonal_value([0.5], 0.5) == 0.0


def test_divergence_grows_past_floor():
    rows = divergence_trend([0.25, 0.75], [0.5, 1.0], 0.5, n_values=(2, 4))
    assert [r.floor for r in rows] == pytest.approx([0.5, 1.0])
    for row in rows:
        assert row.rho >= row.floor - 1e-9
    assert rows[1].rho > rows[0].rho


def test_union_demo_rows_stay_under_bound():
    demo = disjoint_union_demo(k_max=1, g=2)
    assert demo.ok
    assert [r.bound for r in demo.rows] == [0.5, 0.25]
    out = demo.as_dict()
    assert out["left_points"] == out["right_points"] == 15


def test_shifting_correlation_rejects_bad_k():
    m, n = union_pair(1, 1)
    with pytest.raises(CorrelaError):
        shifting_correlation(m, n, 2, 1, 3)


def test_U_gap_within_eps_is_not_ok():
    c = full_correlation(make_J([0.3], 0.0), make_J([0.4], 0.0))
    report = check_irreg_characterization(c, 1e6, n_max=2)
    assert report.divergent
    assert not report.within
    assert report.dis_iu <= 1e6
    assert not report.ok
