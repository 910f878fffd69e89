import numpy as np
import pytest

import coreyflow as cf
from coreyflow import rarefaction as rf
from coreyflow.rarefaction import FAST, SLOW

P = cf.DEFAULT_PARAMS
NS = cf.named_states(P)

# interior seed state used throughout (away from edges and the umbilic point)
R0 = np.array([0.0402518, 0.0463512])


@pytest.fixture(scope="module")
def fast_inflection():
    return rf.inflection_locus(FAST, P, grid_n=256)


@pytest.fixture(scope="module")
def slow_inflection():
    return rf.inflection_locus(SLOW, P, grid_n=256)


# ---------------------------------------------------------------------------
# integral curves

def test_speed_monotone_along_curve():
    for family in (SLOW, FAST):
        for direction in ("increasing", "decreasing"):
            c = rf.integrate_rarefaction(R0, family, direction, P)
            d = np.diff(c.lambdas)
            if direction == "increasing":
                assert np.all(d >= -1e-10)
            else:
                assert np.all(d <= 1e-10)


def test_curve_tangent_to_eigenvector_field():
    c = rf.integrate_rarefaction(np.array([0.3, 0.3]), FAST, "decreasing", P)
    # chords between consecutive states align with the eigenvector at the
    # midpoint (second-order accurate for midpoint evaluation)
    for k in range(0, len(c.states) - 1, 25):
        d = c.states[k + 1] - c.states[k]
        n = np.linalg.norm(d)
        if n < 1e-10:
            continue
        d = d / n
        _, r, _ = cf.eigen_fields(0.5 * (c.states[k] + c.states[k + 1]), P)
        v = r[FAST]
        assert abs(abs(np.dot(d, v)) - 1.0) <= 1e-5 * max(1.0, n / 1e-3)


def test_inflection_stop_lands_on_locus():
    # increasing fast speed from an interior point must stop where the
    # directional derivative of lambda_f vanishes
    c = rf.integrate_rarefaction(np.array([0.45, 0.25]), FAST, "increasing", P)
    assert c.reason == "inflection"
    end = c.states[-1]
    _, r = cf.model.eigen_raw(end, P)
    g = rf.directional_speed_derivative(end, FAST, r[FAST], P)
    assert abs(g) <= 1e-6


def test_slow_curve_decreasing_reaches_boundary():
    # lambda_s vanishes on the triangle edges, so the decreasing slow curve
    # runs into an edge
    c = rf.integrate_rarefaction(np.array([0.3, 0.3]), SLOW, "decreasing", P)
    assert c.reason == "boundary"
    end = c.states[-1]
    edge_dist = min(end[0], end[1], 1 - end[0] - end[1])
    assert edge_dist <= 1e-9
    assert c.lambdas[-1] <= 1e-6


def test_fast_curve_from_R0_ends_at_vertex_O():
    # decreasing fast curve from R0 runs into the single-phase oil vertex
    c = rf.integrate_rarefaction(R0, FAST, "decreasing", P)
    assert c.reason == "boundary"
    assert np.allclose(c.states[-1], NS.O, atol=1e-12)


def test_fast_curve_from_R0_crossing_levels():
    # [DERIVED 2026-08] transversal crossings with fixed s_g levels, frozen
    # from a tight-tolerance integration (rtol 1e-11, max_step 2e-3)
    c = rf.integrate_rarefaction(R0, FAST, "decreasing", P)
    y = c.states[:, 1]
    for lev, sw_exp, lam_exp in ((0.030, 0.040151, 1.423526),
                                 (0.015, 0.033326, 0.710484)):
        k = np.where((y[:-1] - lev) * (y[1:] - lev) < 0)[0][0]
        w = (lev - y[k]) / (y[k + 1] - y[k])
        S = (1 - w) * c.states[k] + w * c.states[k + 1]
        lam = (1 - w) * c.lambdas[k] + w * c.lambdas[k + 1]
        assert S[0] == pytest.approx(sw_exp, abs=2e-4)
        assert lam == pytest.approx(lam_exp, abs=2e-3)


def test_umbilic_start_rejected():
    with pytest.raises(ValueError):
        rf.integrate_rarefaction(NS.U, SLOW, "increasing", P)


def test_direction_reversal_retraces():
    c_dn = rf.integrate_rarefaction(np.array([0.35, 0.2]), FAST, "decreasing", P,
                                    max_length=0.1)
    end = c_dn.states[-1]
    c_up = rf.integrate_rarefaction(end, FAST, "increasing", P, max_length=0.1)
    # the increasing curve from the endpoint passes back near the start
    d = np.min(np.linalg.norm(c_up.states - np.array([0.35, 0.2]), axis=1))
    assert d <= 1e-6


# ---------------------------------------------------------------------------
# inflection loci

def test_fast_inflection_residuals(fast_inflection):
    for pl in fast_inflection.polylines:
        for S in pl[::7]:
            _, r = cf.model.eigen_raw(S, P)
            g = rf.directional_speed_derivative(S, FAST, r[FAST], P)
            assert abs(g) <= 1e-8


def test_slow_inflection_residuals(slow_inflection):
    for pl in slow_inflection.polylines:
        for S in pl[::7]:
            _, r = cf.model.eigen_raw(S, P)
            g = rf.directional_speed_derivative(S, SLOW, r[SLOW], P)
            assert abs(g) <= 1e-8


def test_fast_inflection_landmarks(fast_inflection):
    # [DERIVED 2026-08] edge intersections and the tangency point, frozen
    # from polished 512-grid runs
    lm = fast_inflection.landmarks
    assert np.allclose(lm["I_B"], [0.6293, 0.3707], atol=2e-3)
    assert np.allclose(lm["I_D"], [0.1907, 0.0], atol=2e-3)
    assert np.allclose(lm["I_E"], [0.0, 0.1284], atol=2e-3)
    assert np.allclose(lm["P"], [0.1754, 0.0580], atol=2e-3)


def test_slow_inflection_summit(slow_inflection):
    # [DERIVED 2026-08] the summit of the slow inflection curve
    lm = slow_inflection.landmarks
    assert np.allclose(lm["I_h"], [0.1576, 0.0705], atol=2e-3)


def test_fast_inflection_two_components(fast_inflection):
    # one branch from the G-W edge to the G-O edge, one from near the
    # umbilic point down to the W-O edge
    assert len(fast_inflection.polylines) >= 2


def test_tangency_point_property(fast_inflection):
    # at P the fast eigenvector turns from one side of the locus to the
    # other: the cross product of eigenvector and local tangent changes
    # sign within a small neighbourhood of P
    Ppt = fast_inflection.landmarks["P"]
    pl = min(fast_inflection.polylines,
             key=lambda q: np.min(np.linalg.norm(q - Ppt, axis=1)))
    vals = []
    dists = []
    ref = None
    for k in range(len(pl) - 1):
        t = pl[k + 1] - pl[k]
        n = np.linalg.norm(t)
        if n < 1e-14:
            continue
        t = t / n
        mid = 0.5 * (pl[k] + pl[k + 1])
        v, _ = rf._oriented_r(mid, FAST, t if ref is None else ref, P)
        ref = v
        vals.append(v[0] * t[1] - v[1] * t[0])
        dists.append(np.linalg.norm(mid - Ppt))
    vals = np.array(vals)
    dists = np.array(dists)
    flips = np.where(vals[:-1] * vals[1:] < 0)[0]
    assert any(dists[k] <= 5e-3 for k in flips)
