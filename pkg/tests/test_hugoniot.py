import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import coreyflow as cf
from coreyflow import hugoniot as hg

P = cf.DEFAULT_PARAMS
NS = cf.named_states(P)

# interior base state whose locus has the generic five-branch topology
R_A = np.array([0.0402518, 0.0463512])
# base past the secondary-bifurcation segment G-D: detached branch flips
# to a lens on the W-O edge
R_C = np.array([0.0955103, 0.0485797])


@pytest.fixture(scope="module")
def locus_a():
    return hg.trace_hugoniot(R_A, P)


@pytest.fixture(scope="module")
def locus_c():
    return hg.trace_hugoniot(R_C, P)


# ---------------------------------------------------------------------------
# Rankine-Hugoniot basics

def test_rh_residual_zero_on_trivial_jump():
    S = np.array([0.3, 0.2])
    assert hg.rh_residual(S, S, P) <= 1e-15


def test_shock_speed_edge_pair():
    # on the W-O edge the system reduces to scalar Buckley-Leverett in s_w
    M = np.array([0.4, 0.0])
    N = np.array([0.7, 0.0])
    sig = hg.shock_speed(M, N, P)
    fw = lambda S: cf.flux(S, P)[0]
    assert sig == pytest.approx((fw(M) - fw(N)) / (M[0] - N[0]), abs=1e-12)


def test_hug_value_vanishes_on_rh_pairs():
    M = np.array([0.4, 0.0])
    N = np.array([0.7, 0.0])
    assert abs(hg.hug_value(N, M, P)) <= 1e-14


def test_hug_gradient_matches_fd():
    M = np.array([0.2, 0.3])
    S = np.array([0.5, 0.1])
    g = hg.hug_gradient(S, M, P)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (hg.hug_value(S + e, M, P) - hg.hug_value(S - e, M, P)) / (2 * h)
        assert g[k] == pytest.approx(fd, abs=1e-7)


@given(st.floats(0.05, 0.9), st.floats(0.05, 0.9))
@settings(max_examples=50, deadline=None)
def test_polish_onto_locus_converges(x, y):
    if x + y > 0.95:
        return
    M = np.array([0.25, 0.25])
    S = hg.polish_onto_locus(np.array([x, y]), M, P)
    if cf.model.in_triangle(S):
        assert abs(hg.hug_value(S, M, P)) <= 1e-10 or \
            np.linalg.norm(S - np.array([x, y])) < 0.1


# ---------------------------------------------------------------------------
# locus topology

def test_five_branches_generic_base(locus_a):
    assert len(locus_a.branches) == 5
    assert len(locus_a.attached) == 4
    assert len(locus_a.detached) == 1


def test_branch_endpoints_generic_base(locus_a):
    # [DERIVED 2026-08] edge intersections of the five branches, frozen from
    # polished 1024-grid traces
    expected_ends = [
        [0.0237, 0.9763],   # on G-W
        [0.6799, 0.3201],   # on G-W
        [0.0376, 0.0],      # on W-O
        [0.0, 0.0483],      # on G-O
        [0.0662, 0.0],      # detached, on W-O
        [0.9388, 0.0],      # detached, on W-O
    ]
    ends = []
    for b in locus_a.branches:
        for E in (b.vertices[0], b.vertices[-1]):
            if np.linalg.norm(E - locus_a.base) > 1e-6:
                ends.append(E)
    for exp in expected_ends:
        assert min(np.linalg.norm(np.array(ends) - exp, axis=1)) <= 2e-3


def test_rh_residual_along_branches(locus_a):
    for b in locus_a.branches:
        for N, s in zip(b.vertices[::11], b.sigma[::11]):
            if not np.isfinite(s) or np.linalg.norm(N - locus_a.base) < 1e-3:
                continue
            assert hg.rh_residual(N, locus_a.base, P) <= 1e-8


def test_attached_branches_touch_base(locus_a):
    for b in locus_a.attached:
        d = min(np.linalg.norm(b.vertices[0] - locus_a.base),
                np.linalg.norm(b.vertices[-1] - locus_a.base))
        assert d <= 1e-9


def test_detached_branch_flips_to_edge_lens(locus_c):
    # past the G-D segment the detached branch becomes a small lens whose
    # endpoints both sit on the W-O edge
    det = locus_c.detached
    assert len(det) == 1
    v = det[0].vertices
    assert abs(v[0, 1]) <= 1e-9 and abs(v[-1, 1]) <= 1e-9
    assert np.max(v[:, 1]) <= 0.05
    lo, hi = v[:, 0].min(), v[:, 0].max()
    assert lo == pytest.approx(0.0122, abs=2e-3)
    assert hi == pytest.approx(0.1000, abs=2e-3)


def test_edge_base_includes_edge_line():
    # a base on the W-O edge has the whole edge in its locus (exact branch)
    loc = hg.trace_hugoniot(np.array([0.45, 0.0]), P, grid_n=512)
    names = [b.labels.get("line") for b in loc.special_lines]
    assert "edge-WO" in names


def test_umbilic_base_contains_secondary_bifurcation_lines():
    # the three secondary-bifurcation segments all pass through U, so the
    # Hugoniot locus of U contains them exactly
    loc = hg.trace_hugoniot(NS.U, P, grid_n=512)
    names = {b.labels.get("line") for b in loc.special_lines}
    assert {"sb-EW", "sb-GD", "sb-OB"} <= names


# ---------------------------------------------------------------------------
# classification along the backward locus (base = right state)

def test_classification_sequence_toward_B(locus_a):
    # [DERIVED 2026-08] the local branch from the base toward the G-W edge
    # carries s-, o-, f-, then u-shocks in that order
    b = next(b for b in locus_a.attached
             if np.linalg.norm(b.vertices[-1] - [0.6799, 0.3201]) < 2e-3
             or np.linalg.norm(b.vertices[0] - [0.6799, 0.3201]) < 2e-3)
    verts, sig = b.vertices, b.sigma
    if np.linalg.norm(verts[0] - locus_a.base) > 1e-6:
        verts, sig = verts[::-1], sig[::-1]
    kinds = []
    for N, s in zip(verts[1:], sig[1:]):
        if not np.isfinite(s):
            continue
        c = hg.classify_shock(N, locus_a.base, P, sigma=s)
        if not kinds or kinds[-1] != c.kind:
            kinds.append(c.kind)
    assert kinds == ["s", "o", "f", "u"]


def test_transition_points_toward_B(locus_a):
    # the s->o and f->u transitions sit where sigma crosses lambda_f(base);
    # the o->f transition where sigma = lambda_s(left state) at the sigma
    # maximum along the branch
    pts = hg.characteristic_points(locus_a, "sigma=lambda_f(base)", P)
    lam_fR = cf.eigenvalues(R_A, P)[1]
    on_b = [q for q in pts if np.allclose(q["sigma"], lam_fR, atol=1e-6)]
    assert len(on_b) >= 2
    states = np.array([q["state"] for q in on_b])
    assert min(np.linalg.norm(states - [0.1846, 0.0649], axis=1)) <= 2e-3
    assert min(np.linalg.norm(states - [0.2771, 0.1121], axis=1)) <= 2e-3

    pts_s = hg.characteristic_points(locus_a, "sigma=lambda_s(point)", P)
    states_s = np.array([q["state"] for q in pts_s])
    k = int(np.argmin(np.linalg.norm(states_s - [0.2269, 0.0863], axis=1)))
    assert np.linalg.norm(states_s[k] - [0.2269, 0.0863]) <= 2e-3
    assert pts_s[k]["sigma"] == pytest.approx(2.2517, abs=1e-3)


def test_fast_characteristic_points(locus_a):
    # [DERIVED 2026-08] sigma = lambda_f(point) crossings: one on the branch
    # toward the G-W edge, one on the detached branch
    pts = hg.characteristic_points(locus_a, "sigma=lambda_f(point)", P)
    states = np.array([q["state"] for q in pts])
    sig = np.array([q["sigma"] for q in pts])
    kA1 = int(np.argmin(np.linalg.norm(states - [0.0386, 0.1710], axis=1)))
    assert np.linalg.norm(states[kA1] - [0.0386, 0.1710]) <= 2e-3
    assert sig[kA1] == pytest.approx(3.5358, abs=2e-3)
    kA2 = int(np.argmin(np.linalg.norm(states - [0.2744, 0.0336], axis=1)))
    assert np.linalg.norm(states[kA2] - [0.2744, 0.0336]) <= 2e-3
    assert sig[kA2] == pytest.approx(2.4347, abs=2e-3)


def test_characteristic_point_speeds_match(locus_a):
    for which, fam, side in (("sigma=lambda_f(point)", 1, "point"),
                             ("sigma=lambda_s(point)", 0, "point"),
                             ("sigma=lambda_f(base)", 1, "base")):
        for q in hg.characteristic_points(locus_a, which, P):
            S = q["state"] if side == "point" else locus_a.base
            lam = cf.eigenvalues(S, P)[fam]
            assert q["sigma"] == pytest.approx(lam, abs=1e-6)


# ---------------------------------------------------------------------------
# triple shock rule

def test_triple_shock_rule_on_edge():
    # three states on the W-O edge with pairwise equal sigma: construct by
    # equal chord slopes of the scalar flux
    M = np.array([0.45, 0.0])
    loc = hg.trace_hugoniot(M, P, grid_n=512)
    # find a locus point N off the edge, then a third point C on H(N) with
    # the same sigma, and check (M, C) is an RH pair
    for b in loc.branches:
        for N in b.vertices[::17]:
            if N[1] < 1e-3 or np.linalg.norm(N - M) < 1e-2:
                continue
            sig = hg.shock_speed(M, N, P, check=False)
            if hg.rh_residual(M, N, P) > 1e-10:
                continue
            ok, s2, resid = hg.verify_triple_shock(M, N, N, P)
            assert ok and s2 == pytest.approx(sig, abs=1e-8)
            return
    pytest.skip("no off-edge locus point found")


def test_classify_shock_label_format():
    c = hg.ShockClass("f", "s", None, 1.0)
    assert c.label() == "'Sf"
    c = hg.ShockClass("s", None, "f", 1.0)
    assert c.label() == "Ss'"
