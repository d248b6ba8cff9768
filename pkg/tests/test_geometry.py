import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsler.anisotropy import AnisotropicNorm
from finsler.geometry import (BoundaryDatum, ConfigError, TwoInclusionConfig, WulffInclusion, in_neck,
                              neck_matrix_Q, place_inclusions, wulff_distance)

from oracles import brute_force_distance, fd_hessian

EUC = AnisotropicNorm.euclidean()


def test_place_symmetric_euclidean():
    pl = place_inclusions(EUC, 1.0, 1.0, 0.01)
    np.testing.assert_allclose(pl.c1, [0.0, -1.005], rtol=1e-15)
    np.testing.assert_allclose(pl.c2, [0.0, 1.005], rtol=1e-15)
    np.testing.assert_allclose(pl.P_hat, [0.0, 1.0])
    assert pl.t0 == 1.0


def test_place_ellipse_touching_height():
    a, b = 2.0, 0.5
    H0 = AnisotropicNorm.ellipse_wulff(a, b).dual()
    pl = place_inclusions(H0, 1.0, 1.0, 0.1)
    assert pl.t0 == pytest.approx(b, rel=1e-15)
    # the touching point of D1 is R1 * P_hat relative to its centre
    D1 = WulffInclusion(pl.c1, 1.0, H0)
    assert D1.level(pl.c1 + pl.P_hat) == pytest.approx(1.0, rel=1e-15)


def test_place_touching_limit():
    pl = place_inclusions(EUC, 1.0, 2.0, 0.0)
    assert np.linalg.norm(pl.c2 - pl.c1) == pytest.approx(3.0)


def test_place_rejects_overlap():
    with pytest.raises(ConfigError):
        place_inclusions(EUC, 1.0, 1.0, -0.1)


def test_wulff_distance_unit_balls():
    D1 = WulffInclusion(np.array([0.0, 0.0]), 1.0, EUC)
    D2 = WulffInclusion(np.array([0.0, 2.01]), 1.0, EUC)
    assert wulff_distance(D1, D2) == pytest.approx(0.01, abs=1e-15)


def test_wulff_distance_overlap_warns():
    D1 = WulffInclusion(np.array([0.0, 0.0]), 1.0, EUC)
    D2 = WulffInclusion(np.array([0.0, 1.5]), 1.0, EUC)
    with pytest.warns(UserWarning):
        assert wulff_distance(D1, D2) < 0


def test_wulff_distance_quadratic_brute_force():
    M = np.array([[2.0, 0.4], [0.4, 0.7]])
    H0 = AnisotropicNorm.quadratic(M).dual()
    D1 = WulffInclusion(np.array([0.3, -1.0]), 0.8, H0)
    D2 = WulffInclusion(np.array([1.9, 1.2]), 0.6, H0)
    ref = brute_force_distance(D1.boundary_point, D2.boundary_point, H0.value, n=1000)
    assert wulff_distance(D1, D2) == pytest.approx(ref, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(delta=st.floats(0.0, 0.5), R1=st.floats(0.2, 2.0), R2=st.floats(0.2, 2.0),
       kind=st.sampled_from(["euclidean", "lq3", "ellipse"]))
def test_place_then_distance_round_trip(delta, R1, R2, kind):
    H = {"euclidean": EUC, "lq3": AnisotropicNorm.lq(3), "ellipse": AnisotropicNorm.ellipse_wulff(1.5, 0.7)}[kind]
    H0 = H.dual()
    pl = place_inclusions(H0, R1, R2, delta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = wulff_distance(WulffInclusion(pl.c1, R1, H0), WulffInclusion(pl.c2, R2, H0))
    assert d == pytest.approx(delta, abs=1e-12 * (1 + R1 + R2))


def test_Q_euclidean_and_ellipse():
    assert neck_matrix_Q(EUC, [0.0, 1.0]) == pytest.approx(np.array([[1.0]]))
    a, b = 2.0, 0.5
    H0 = AnisotropicNorm.ellipse_wulff(a, b).dual()
    np.testing.assert_allclose(neck_matrix_Q(H0, [0.0, b]), [[1 / a**2]], rtol=1e-14)


@pytest.mark.parametrize("H", [EUC, AnisotropicNorm.quadratic([[2.0, 0.3], [0.3, 1.0]]),
                               AnisotropicNorm.ellipse_wulff(1.3, 0.6)])
def test_Q_matches_finite_difference_hessian(H):
    cfg = TwoInclusionConfig(H, delta=0.05)
    P = cfg.placement.P_hat
    ref = fd_hessian(cfg.H0.gradient, P)[:1, :1]
    np.testing.assert_allclose(cfg.Q, ref, rtol=1e-6)
    assert np.allclose(cfg.Q, cfg.Q.T, atol=1e-14)
    assert np.linalg.eigvalsh(cfg.Q).min() > 0


def test_neck_membership():
    cfg = TwoInclusionConfig(EUC, R1=1.0, R2=1.0, delta=0.01)
    neck = cfg.neck(0.3)
    assert in_neck(np.array([0.1, 0.0]), neck, 0.01)
    # |Q^(1/2) x'| = w exactly is outside (strict inequality)
    assert not neck.in_neck(np.array([0.3, 0.0]))
    # H0(x) >= max(R1, R2) is outside
    assert not neck.in_neck(np.array([0.0, 1.0]))
    # inside an inclusion is outside the neck
    assert not neck.in_neck(np.array([0.0, -0.5]))


def test_euclidean_neck_is_slab_in_gap():
    cfg = TwoInclusionConfig(EUC, delta=0.05)
    neck = cfg.neck(0.25)
    rng = np.random.default_rng(0)
    x = rng.uniform([-0.5, -0.5], [0.5, 0.5], size=(5000, 2))
    ref = (np.abs(x[:, 0]) < 0.25) & (np.linalg.norm(x, axis=1) < 1.0)
    ref &= ~cfg.D1.contains(x, strict=False) & ~cfg.D2.contains(x, strict=False)
    np.testing.assert_array_equal(neck.in_neck(x), ref)
    walls = neck.neck_boundary_walls()
    assert [w["x1"] for w in walls] == [0.25, -0.25]


def test_lq_neck_is_undefined():
    cfg = TwoInclusionConfig(AnisotropicNorm.lq(4), delta=0.05)
    with pytest.raises(ConfigError):
        cfg.neck(0.3)


def test_config_validation():
    with pytest.raises(ConfigError, match=r"p in \(1, N\]"):
        TwoInclusionConfig(EUC, p=0.5)
    with pytest.raises(ConfigError):
        TwoInclusionConfig(EUC, p=2.5)
    with pytest.raises(ConfigError):
        TwoInclusionConfig(EUC, delta=0.0)
    with pytest.raises(ConfigError):
        TwoInclusionConfig(EUC, half_width=1.5)  # clearance below K
    with pytest.raises(ConfigError):
        BoundaryDatum("affine")


def test_default_domain_has_unit_clearance():
    for H in (EUC, AnisotropicNorm.ellipse_wulff(1.5, 0.7), AnisotropicNorm.lq(3)):
        cfg = TwoInclusionConfig(H, delta=0.1)
        assert cfg.clearance() == pytest.approx(1.0, rel=1e-12)


def test_with_delta_keeps_outer_domain():
    cfg = TwoInclusionConfig(EUC, delta=0.1)
    small = cfg.with_delta(0.001)
    assert small.half_width == cfg.half_width
    assert small.delta == 0.001


def test_boundary_datum_kinds():
    x = np.array([[1.0, 2.0], [-3.0, 0.5]])
    np.testing.assert_allclose(BoundaryDatum()(x), [2.0, 0.5])
    np.testing.assert_allclose(BoundaryDatum("affine", [1.0, -1.0], 0.5)(x), [-0.5, -3.0])
    assert BoundaryDatum("constant", value=2.0).is_constant
    tab = BoundaryDatum("tabulated", angles=[0, np.pi / 2, np.pi, 3 * np.pi / 2], values=[0, 1, 0, -1])
    assert tab(np.array([[0.0, 5.0]]))[0] == pytest.approx(1.0)
    for d in (BoundaryDatum(), BoundaryDatum("affine", [1.0, 2.0], 3.0), BoundaryDatum("constant", value=1.0), tab):
        assert BoundaryDatum.from_spec(d.to_spec()).to_spec() == d.to_spec()


def test_gap_height_at_axis_is_delta():
    cfg = TwoInclusionConfig(AnisotropicNorm.ellipse_wulff(1.5, 0.7), delta=0.02)
    assert cfg.gap_height(0.0)[0] == pytest.approx(0.02 * cfg.placement.t0, rel=1e-10)
