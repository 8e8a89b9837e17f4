import math

import numpy as np
import pytest

from app.core.errors import EvaluationError, FormulaError, FormulaSyntaxError
from app.core.formula import (
    Conn,
    Dist,
    Inf,
    WeakModulus,
    evaluate,
    infer_modulus,
    parse,
    respects_modulus,
    tabulate,
    to_text,
)
from app.core.mstruct import Predicate, metric_space


def test_parse_scale_of_distance(pair_1):
    f = parse("(scale 0.5 (d S x0 x1))", pair_1.signature)
    assert isinstance(f, Conn) and f.op == "scale" and f.params == (0.5,)
    assert isinstance(f.args[0], Dist)


def test_parse_quantifier_infers_sort(pair_1):
    f = parse("(inf x1 (d S x0 x1))", pair_1.signature)
    assert isinstance(f, Inf)
    assert f.var.sort == "S"


def test_clamp_log_sugar_becomes_cliplog(pair_1):
    f = parse("(clamp (log (d S x0 x1)) -1 1)", pair_1.signature)
    assert isinstance(f, Conn) and f.op == "cliplog"
    assert to_text(f) == "(cliplog (d S x0 x1) -1.0 1.0)"


def test_printer_output_parses_back(line3):
    text = "(max (scale 0.5 (d S x0 x1)) (inf x2:S (d S x0 x2)))"
    f = parse(text, line3.signature)
    assert parse(to_text(f), line3.signature) == f


@pytest.mark.parametrize(
    "text",
    ["(d S x0", "(d S x0 x1))", "", "(scale half (d S x0 x1))"],
)
def test_syntax_errors(text, pair_1):
    with pytest.raises(FormulaSyntaxError):
        parse(text, pair_1.signature)


def test_unknown_predicate_and_connective(pair_1):
    with pytest.raises(FormulaError):
        parse("(pred Q x0)", pair_1.signature)
    with pytest.raises(FormulaError):
        parse("(sqrt (d S x0 x1))", pair_1.signature)


def test_error_carries_position(pair_1):
    with pytest.raises(FormulaError) as ei:
        parse("(max (d S x0 x1) (pred Q x0))", pair_1.signature)
    assert ei.value.position is not None


def test_evaluate_half_distance(pair_1):
    f = parse("(scale 0.5 (d S x0 x1))", pair_1.signature)
    assert evaluate(f, pair_1, {"x0": "p", "x1": "q"}) == pytest.approx(0.5)


def test_evaluate_infimum_hits_identity(line3):
    f = parse("(inf x1 (d S x0 x1))", line3.signature)
    for label in line3.sort("S").points:
        assert evaluate(f, line3, {0: label}) == 0.0


def test_clamped_log_saturates():
    s = metric_space(["p", "q"], [[0, math.e**2], [math.e**2, 0]])
    f = parse("(clamp (log (d S x0 x1)) -1 1)", s.signature)
    assert evaluate(f, s, {"x0": "p", "x1": "q"}) == pytest.approx(1.0)
    # log 0 clamps to the lower bound
    assert evaluate(f, s, {"x0": "p", "x1": "p"}) == pytest.approx(-1.0)


def test_unassigned_variable(pair_1):
    f = parse("(d S x0 x1)", pair_1.signature)
    with pytest.raises(EvaluationError):
        evaluate(f, pair_1, {"x0": "p"})


def test_tabulate_matches_evaluate(line3):
    f = parse("(absdiff (d S x0 x1) (d S x1 x2))", line3.signature)
    table = tabulate(f, line3)
    assert table.shape == (3, 3, 3)
    pts = line3.sort("S").points
    for i in range(3):
        for j in range(3):
            for k in range(3):
                want = evaluate(f, line3, {0: pts[i], 1: pts[j], 2: pts[k]})
                assert table[i, j, k] == pytest.approx(want)


def test_modulus_examples(pair_1):
    sig = pair_1.signature
    assert infer_modulus(parse("(d S x0 x1)", sig)).lipschitz == {0: 1.0, 1: 1.0}
    assert infer_modulus(parse("(scale 0.5 (d S x0 x1))", sig)).lipschitz == {0: 0.5, 1: 0.5}
    assert infer_modulus(parse("(inf x1 (scale 0.5 (d S x0 x1)))", sig)).lipschitz == {0: 0.5}


def test_inferred_modulus_is_sound_on_random_spaces():
    rng = np.random.default_rng(3)
    for _ in range(10):
        pts = rng.random((5, 2))
        d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
        s = metric_space([f"p{i}" for i in range(5)], d, diameter_bound=2.0)
        f = parse("(inf x1 (scale 0.5 (d S x0 x1)))", s.signature)
        lip = infer_modulus(f).lipschitz[0]
        col = tabulate(f, s)
        gap = np.abs(col[:, None] - col[None, :])
        assert np.all(gap <= lip * d + 1e-9)


def test_respects_modulus(pair_1):
    sig = pair_1.signature
    assert respects_modulus(parse("(scale 0.5 (d S x0 x1))", sig), WeakModulus.ones())
    s = metric_space(
        ["a", "b"],
        [[0, 1], [1, 0]],
        predicates=[Predicate("U", ("S",), [0.0, 1.0], (0.0, 1.0), (1.0,))],
    )
    f = parse("(pred U x0)", s.signature)
    assert not respects_modulus(f, WeakModulus((0.1, 0.1)))


def test_weak_modulus_rejects_decreasing_weights():
    with pytest.raises(ValueError):
        WeakModulus((1.0, 0.5), True)


def test_builders_print_like_parsed_text(pair_1):
    from app.core.formula import max_of, min_of, scale

    d = parse("(d S x0 x1)", pair_1.signature)
    f = min_of(max_of(d, scale(0.5, d)), d)
    assert to_text(f) == "(min (max (d S x0 x1) (scale 0.5 (d S x0 x1))) (d S x0 x1))"
    assert parse(to_text(f), pair_1.signature) == f
