import math

import numpy as np
import pytest

from app.core.distsys import builtin, distortion, joint_signature
from app.core.embound import (
    SampledBanach,
    banach_from_file,
    bm_generators,
    embound,
    forward_check,
    image,
    kadets_coefficients,
    kadets_structure,
    linear_map_correlation,
    norms_of_structure,
    operator_norm,
    radial_grid,
    rebalance,
    rotation,
    theta,
)
from app.core.errors import BanachError
from app.core.mstruct import identity_correlation, validate_structure
from app.models.files import BanachFile


def _square():
    return SampledBanach(2, "real", "linf", [[0, 0], [1, 0], [1, 1]], 1.0)


def test_theta():
    assert theta(0.0) == 0.0
    assert theta(1.0) == pytest.approx(0.5)
    assert np.allclose(theta(np.array([3.0])), [0.75])


def test_embounded_distance_closed_form():
    s = embound(_square())
    d = s.sort("E").metric
    # ∥x∥ = ∥y∥ = 1, ∥x − y∥ = 1
    assert d[1, 2] == pytest.approx(0.25)
    # distance to ∞ is 1 / (1 + ∥x∥)
    assert d[1, 3] == pytest.approx(0.5)
    assert d[0, 3] == pytest.approx(1.0)


def test_norm_recovery():
    s = embound(_square())
    norms = norms_of_structure(s)
    assert np.allclose(norms[:3], [0.0, 1.0, 1.0])
    assert math.isinf(norms[3])


def test_embounded_structure_is_valid_with_constants():
    s = embound(radial_grid(1, "l1", exponents=range(0, 2)))
    assert validate_structure(s) == []
    assert s.constants["inf"] == ("E", "inf")
    assert s.label(s.constant("zero")) == "v0"
    assert {"P", "S[-1.0]", "S[0.5]", "S[2.0]"} <= {p.name for p in s.predicates}


def test_sample_checks():
    with pytest.raises(BanachError):
        SampledBanach(1, "real", "l2", [[1.0]], 2.0)  # no zero vector
    with pytest.raises(BanachError):
        SampledBanach(1, "real", "l2", [[0.0], [3.0]], 2.0)  # beyond the radius cap
    with pytest.raises(BanachError):
        SampledBanach(1, "real", "l7", [[0.0]], 1.0)


def test_banach_file_complex_entries():
    spec = BanachFile(dim=1, field="complex", norm="l2", samples=[[[0, 0]], [[0, 1]]], radius_cap=1.0)
    b = banach_from_file(spec)
    assert b.samples.dtype.kind == "c"
    assert np.allclose(b.norms(), [0.0, 1.0])
    s = embound(b, [2.0])
    assert any(p.name == "S[0.0,1.0]" for p in s.predicates)


def test_real_space_rejects_complex_scalar():
    with pytest.raises(BanachError):
        embound(_square(), [1j])


def test_bm_generator_count():
    sys = bm_generators([1.0], [-1.0])
    # φ has 3 variables (8 zero patterns), ψ has 2 (4 patterns)
    assert len(sys.generators) == 12
    assert sys.truncation["r_max"] == 1.0


def test_builtin_bm_needs_embounded_signature(pair_1):
    with pytest.raises(BanachError):
        builtin("bm", pair_1.signature)


def test_identity_map_has_zero_residual_and_distortion():
    b = radial_grid(2, "l2", exponents=range(-1, 2))
    mc = linear_map_correlation(b, b, np.eye(2))
    assert mc.residual == 0.0
    c = mc.correlation
    sys = builtin("bm", joint_signature(c.left, c.right), {"r_max": 2})
    assert mc.slack(sys) == 0.0
    assert mc.modulus(sys) == 0.0
    assert distortion(sys, c).value == pytest.approx(0.0, abs=1e-12)


def test_scaled_map_stays_within_bound():
    eps = 0.2
    b = radial_grid(2, "l2", exponents=range(-1, 2))
    a = math.exp(eps / 2.0) * np.eye(2)
    mc = linear_map_correlation(b, image(b, a), a)
    assert mc.residual < 1e-12
    c = mc.correlation
    sys = builtin("bm", joint_signature(c.left, c.right), {"r_max": 2})
    assert distortion(sys, c).value <= eps + 1e-9


def test_snapped_map_pays_its_slack():
    eps = 0.2
    b1 = radial_grid(2, "l2", exponents=range(-1, 2))
    b2 = radial_grid(2, "l2", exponents=range(-1, 2), directions=rotation(0.1))
    a = math.exp(eps / 2.0) * np.eye(2)
    mc = linear_map_correlation(b1, b2, a)
    assert mc.residual > 0
    c = mc.correlation
    sys = builtin("bm", joint_signature(c.left, c.right), {"r_max": 2})
    slack = mc.slack(sys)
    assert math.isfinite(slack) and slack >= 0
    assert mc.modulus(sys) == pytest.approx(slack / mc.residual)
    assert distortion(sys, c).value <= eps + slack + 1e-9


def test_operator_norms():
    l1 = radial_grid(2, "l1")
    assert operator_norm([[1, 2], [3, 4]], l1, l1) == pytest.approx(6.0)
    linf = radial_grid(2, "linf")
    assert operator_norm([[1, 2], [3, 4]], linf, linf) == pytest.approx(7.0)
    l2 = radial_grid(2, "l2")
    assert operator_norm(np.diag([3.0, 1.0]), l2, l2) == pytest.approx(3.0)


def test_rebalance_splits_the_stretch():
    eps = 0.4
    plane = radial_grid(2, "l2")
    rb = rebalance(np.diag([math.exp(eps), 1.0]), plane, plane)
    assert rb.r == pytest.approx(math.exp(-eps / 2.0))
    assert rb.norm == pytest.approx(math.exp(eps / 2.0))
    assert rb.inverse_norm == pytest.approx(math.exp(eps / 2.0))
    assert rb.bm_value == pytest.approx(eps)


def test_forward_check_on_identity():
    s = embound(radial_grid(1, "l1", exponents=range(0, 2)))
    assert forward_check(identity_correlation(s), 0.1, 0.0).ok


def test_kadets_structures():
    vecs = kadets_coefficients(1, 2)
    assert vecs == [(1.0,), (0.5, 0.5), (0.5, -0.5)]
    b = radial_grid(1, "l1", exponents=range(0, 2))
    s = kadets_structure(b, vecs)
    assert validate_structure(s) == []
    sys = builtin("kadets", s.signature)
    assert len(sys.generators) == 3
    assert distortion(sys, identity_correlation(s)).value == 0.0
    with pytest.raises(BanachError):
        kadets_structure(b, [(0.5,)])
