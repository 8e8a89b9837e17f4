import numpy as np
import pytest

from app.core.demos import random_space
from app.core.distsys import (
    builtin,
    check_atomic_completeness,
    distortion,
    fghk_weights,
    functionality_witness_check,
    joint_signature,
    system_from_file,
    witness_formula,
)
from app.core.errors import CorrelaError, SignatureError
from app.core.formula import evaluate, parse, to_text
from app.core.jobs import make_system
from app.core.mstruct import Correlation, Predicate, full_correlation, identity_correlation, metric_space
from app.models.files import SystemFile


def _with_u(points, metric, u, **kw):
    pred = Predicate("U", ("S",), u, (0.0, 1.0), (1.0,))
    return metric_space(points, metric, predicates=[pred], **kw)


def test_identity_has_zero_distortion(line3):
    for name in ("gh", "lip", "fghk", "eghk"):
        sys = builtin(name, line3.signature)
        assert distortion(sys, identity_correlation(line3)).value == 0.0


def test_gh_forced_correlation(point, two_apart):
    sys = builtin("gh", joint_signature(point, two_apart))
    d = distortion(sys, full_correlation(point, two_apart))
    assert d.value == pytest.approx(1.0)
    out = d.as_dict(full_correlation(point, two_apart))
    assert out["witness"]["generator"] == 0
    assert [row[0] for row in out["witness"]["assignment"]] == ["S", "S"]


def test_iu_large_multiple_sees_small_gap():
    m = _with_u(["a"], [[0.0]], [0.3], diameter_bound=1.0)
    n = _with_u(["b"], [[0.0]], [0.4], diameter_bound=1.0)
    sys = builtin("iu", joint_signature(m, n), {"n_max": 10})
    assert distortion(sys, full_correlation(m, n)).value >= 1.0 - 1e-9


def test_builtin_generator_lists(pair_1):
    gh = builtin("gh", pair_1.signature)
    assert gh.texts() == ["(scale 0.5 (d S x0 x1))"]

    s = _with_u(["a", "b"], [[0, 1], [1, 0]], [0.0, 0.5])
    iu = builtin("iu", s.signature, {"n_max": 3})
    assert len(iu.generators) == 4
    assert iu.texts()[1:] == [f"(scale {float(k)!r} (pred U x0))" for k in (1, 2, 3)]


def test_fghk_weights_use_range_bound():
    s = _with_u(["a", "b"], [[0, 1], [1, 0]], [0.0, 0.5])
    weights = dict(fghk_weights(s.signature))
    assert weights["U"] == pytest.approx(0.5)
    # second atom: 1 / (2 * (1 + diameter bound 1))
    assert weights["d:S"] == pytest.approx(0.25)


def test_unknown_builtin_and_bad_iu_signature(pair_1):
    with pytest.raises(CorrelaError):
        builtin("nope", pair_1.signature)
    with pytest.raises(SignatureError):
        builtin("iu", pair_1.signature)


def test_truncation_none_values_keep_defaults(pair_1):
    sys = builtin("lip", pair_1.signature, {"r_max": None})
    assert sys.truncation["r_max"] == 4
    assert len(sys.generators) == 4


def test_make_system_custom(pair_1):
    with pytest.raises(CorrelaError):
        make_system("custom", pair_1.signature)
    sys = make_system("custom", pair_1.signature, {}, ["(d S x0 x1)"])
    assert sys.texts() == ["(d S x0 x1)"]
    ext = make_system("gh", pair_1.signature, {}, ["(d S x0 x1)"])
    assert len(ext.generators) == 2


def test_system_from_file(pair_1):
    spec = SystemFile(builtin="lip", truncation={"r_max": 2}, generators=["(scale 0.25 (d S x0 x1))"])
    sys = system_from_file(spec, pair_1.signature)
    assert sys.name == "lip"
    assert len(sys.generators) == 3
    with pytest.raises(CorrelaError):
        system_from_file(SystemFile(), pair_1.signature)


def test_gh_atomically_complete_on_bare_metric(line3):
    assert check_atomic_completeness(builtin("gh", line3.signature), line3).ok


def test_truncated_scan_is_not_ok(line3, monkeypatch):
    monkeypatch.setenv("CORRELA_ATOMIC_MAX_TUPLES", "5")
    report = check_atomic_completeness(builtin("gh", line3.signature), line3)
    assert report.truncated
    assert not report.ok
    assert report.counterexample is None
    assert report.tuples_checked == 3
    assert report.max_length == 1


def test_gh_misses_unary_predicate():
    s = _with_u(["a", "b"], [[0, 1], [1, 0]], [0.0, 0.5])
    report = check_atomic_completeness(builtin("gh", s.signature), s)
    assert not report.ok
    assert report.counterexample == (("a",), ("b",))


def test_fghk_atomically_complete_on_random_spaces():
    rng = np.random.default_rng(11)
    for t in range(5):
        s = random_space(rng, name=f"r{t}")
        assert check_atomic_completeness(builtin("fghk", s.signature), s).ok


def test_witness_formula_vanishes_on_diagonal(line3):
    phi = parse("(add (const 1) (d S x0 x1))", line3.signature)
    w = witness_formula(phi)
    for label in line3.sort("S").points:
        assert evaluate(w, line3, {0: label, 1: label}) == 0.0
    assert to_text(w).startswith("(scale 0.5 (absdiff")


def test_functionality_witness_gh_half_distance():
    s = metric_space(["a", "b", "c"], [[0, 0.4, 1.0], [0.4, 0, 0.7], [1.0, 0.7, 0]], diameter_bound=1.0)
    sys = builtin("gh", s.signature)
    phi = sys.generators[0]
    assert functionality_witness_check(sys, phi, 0.1, 0.3, [s]).ok


def test_functionality_witness_rejects_non_generator():
    s = metric_space(["a", "b"], [[0, 0.4], [0.4, 0]], diameter_bound=1.0)
    sys = builtin("gh", s.signature)
    phi = parse("(d S x0 x1)", s.signature)
    assert phi not in sys.generators
    with pytest.raises(CorrelaError, match="not a generator"):
        functionality_witness_check(sys, phi, 0.1, 0.3, [s])


def test_functionality_witness_fails_when_delta_too_small():
    s = _with_u(["a", "b"], [[0, 0.15], [0.15, 0]], [0.0, 0.1], diameter_bound=1.0)
    sys = builtin("iu", s.signature, {"n_max": 2})
    phi = sys.generators[0]
    report = functionality_witness_check(sys, phi, 0.1, 0.05, [s])
    assert not report.ok
    assert report.reason == "implication"
    assert report.pair == ("a", "b")


def test_correlation_with_anchor_round_trips_labels(pair_1, pair_3):
    c = Correlation(pair_1, pair_3, {"S": [[1, 1], [0, 1]]}, (("S", 0, 1),))
    d = distortion(builtin("gh", joint_signature(pair_1, pair_3)), c)
    # max over related pairs: (p,q)->(u,v): |1-3|/2 = 1; (p,p)->(u,v): 3/2
    assert d.value == pytest.approx(1.5)


def _random_correlation(rng, m, n):
    rel = rng.random((m.sort("S").size, n.sort("S").size)) < 0.4
    for i in range(rel.shape[0]):
        rel[i, rng.integers(rel.shape[1])] = True
    for j in range(rel.shape[1]):
        rel[rng.integers(rel.shape[0]), j] = True
    return Correlation(m, n, {"S": rel})


def test_quantified_and_combined_generators_do_not_raise_distortion():
    rng = np.random.default_rng(13)
    for _ in range(20):
        m = random_space(rng, int(rng.integers(1, 5)), unary=False)
        n = random_space(rng, int(rng.integers(1, 5)), unary=False)
        sig = joint_signature(m, n)
        sys = builtin("gh", sig)
        extra = [
            parse("(sup x1 (scale 0.5 (d S x0 x1)))", sig),
            parse("(inf x1 (scale 0.5 (d S x0 x1)))", sig),
            parse("(max (scale 0.5 (d S x0 x1)) (scale 0.5 (d S x1 x2)))", sig),
            parse("(min (scale 0.5 (d S x0 x1)) (scale 0.5 (d S x0 x2)))", sig),
        ]
        c = _random_correlation(rng, m, n)
        base = distortion(sys, c).value
        assert distortion(sys.extended(extra), c).value == pytest.approx(base, abs=1e-9)
