import numpy as np
import pytest

import coreyflow as cf
from coreyflow import hugoniot as hg
from coreyflow import loci as lc
from coreyflow import rarefaction as rf

P = cf.DEFAULT_PARAMS
NS = cf.named_states(P)

# [DERIVED 2026-08] landmark states frozen from polished continuation runs
C3 = np.array([0.00133, 0.04904])
C4 = np.array([0.30044, 0.03193])
PPT = np.array([0.17543, 0.05800])
P_PRIME = np.array([0.08206, 0.30483])
R_P = np.array([0.128760, 0.124128])
C3_PRIME = np.array([0.00133, 0.45787])
E0 = np.array([0.5, 0.02261307])
D0 = np.array([0.047619, 0.5])


@pytest.fixture(scope="module")
def dc_pair():
    return lc.double_contact_trace(P)


# ---------------------------------------------------------------------------
# secondary bifurcation

def test_secondary_bifurcation_segments():
    segs = lc.secondary_bifurcation(P)
    assert {s.kind for s in segs} == {"sb-EW", "sb-GD", "sb-OB"}
    for s in segs:
        d = np.min(np.linalg.norm(s.vertices - NS.U, axis=1))
        assert d <= 1e-2  # U lies on every segment (between grid vertices)


def test_secondary_bifurcation_gd_endpoint():
    seg = next(s for s in lc.secondary_bifurcation(P) if s.kind == "sb-GD")
    ends = [seg.vertices[0], seg.vertices[-1]]
    assert any(np.allclose(E, NS.D, atol=1e-12) for E in ends)
    assert any(np.allclose(E, NS.G, atol=1e-12) for E in ends)


def test_secondary_bifurcation_is_rh_invariant():
    # the Hugoniot locus of a state on a segment contains the segment
    seg = next(s for s in lc.secondary_bifurcation(P) if s.kind == "sb-EW")
    M = seg.vertices[40]
    for N in seg.vertices[::13]:
        if np.linalg.norm(N - M) < 1e-9:
            continue
        assert abs(hg.hug_value(N, M, P)) <= 1e-8


# ---------------------------------------------------------------------------
# (f,f) double contact

def test_double_contact_residuals(dc_pair):
    sS, _ = dc_pair
    assert sS is not None
    for V, W in list(zip(sS.vertices, sS.partner))[::5]:
        r = lc._contact_residual(np.concatenate([V, W]), (lc.FAST, lc.FAST), P)
        assert np.max(np.abs(r)) <= 1e-8


def test_double_contact_endpoints(dc_pair):
    sS, _ = dc_pair
    ends = [sS.vertices[0], sS.vertices[-1]]
    assert min(np.linalg.norm(E - C3) for E in ends) <= 2e-3
    assert min(np.linalg.norm(E - C4) for E in ends) <= 2e-3


def test_double_contact_collapses_at_tangency_point(dc_pair):
    sS, _ = dc_pair
    sep = np.linalg.norm(sS.vertices - sS.partner, axis=1)
    k = int(np.argmin(sep))
    assert sep[k] <= 5e-3
    assert np.linalg.norm(sS.vertices[k] - PPT) <= 5e-3


def test_double_contact_involutive(dc_pair):
    # the extension of C3-P by the fast family, characteristic on the base,
    # recovers the stored partner on P-C4 (and vice-versa by symmetry)
    sS, _ = dc_pair
    sep = np.linalg.norm(sS.vertices - sS.partner, axis=1)
    for k in range(5, len(sS), 17):
        if sep[k] < 2e-2:
            continue
        M, N = sS.vertices[k], sS.partner[k]
        sol = lc._solve_extension(N + [1e-4, -1e-4], M, lc.FAST, P, "base",
                                  tol=1e-13, iters=60)
        assert sol is not None
        assert np.linalg.norm(sol - N) <= 1e-6


# ---------------------------------------------------------------------------
# (s,f) mixed contact

def test_mixed_contact_families():
    fams = lc.mixed_contact_trace(P)
    assert len(fams) >= 2
    for sS, sF in fams:
        for V, W in list(zip(sS.vertices, sS.partner))[::4]:
            r = lc._contact_residual(np.concatenate([V, W]),
                                     (lc.SLOW, lc.FAST), P)
            assert np.max(np.abs(r)) <= 1e-8
    # at least one family collapses onto the umbilic point
    dmin = min(np.min(np.linalg.norm(sS.vertices - NS.U, axis=1))
               for sS, _ in fams)
    assert dmin <= 1e-3


def test_mixed_contact_univocal_speeds():
    # sigma(M'; M) = lambda_s(M') = lambda_f(M) along every family
    for sS, sF in lc.mixed_contact_trace(P):
        for Mp, M, sig in list(zip(sS.vertices, sS.partner, sS.sigma))[::6]:
            assert cf.eigenvalues(Mp, P)[0] == pytest.approx(sig, abs=1e-8)
            assert cf.eigenvalues(M, P)[1] == pytest.approx(sig, abs=1e-8)


# ---------------------------------------------------------------------------
# hysteresis and M_E (through the atlas)

def test_f_hysteresis_endpoints(atlas):
    lm = atlas.landmarks
    assert np.allclose(lm["E0"], E0, atol=2e-3)
    assert np.allclose(lm["D0"], D0, atol=2e-3)
    assert np.allclose(lm["P'"], P_PRIME, atol=2e-3)


def test_f_hysteresis_characteristic_on_base(atlas):
    for e in atlas.loci["f-hysteresis"]:
        for N, M, sig in list(zip(e.vertices, e.partner, e.sigma))[::7]:
            assert abs(hg.hug_value(N, M, P)) <= 1e-8
            assert cf.eigenvalues(M, P)[1] == pytest.approx(sig, abs=1e-8)


def test_s_hysteresis_two_sheets(atlas):
    sheets = atlas.loci["s-hysteresis"]
    assert len(sheets) == 2
    for e in sheets:
        for N, M, sig in list(zip(e.vertices, e.partner, e.sigma))[::19]:
            assert abs(hg.hug_value(N, M, P)) <= 1e-8
            assert cf.eigenvalues(M, P)[0] == pytest.approx(sig, abs=1e-8)


def test_me_extension(atlas):
    (e,) = atlas.loci["M_E"]
    # [DERIVED 2026-08] boundary endpoints of the M_E curve
    ends = [e.vertices[0], e.vertices[-1]]
    assert min(np.linalg.norm(E - [0.3419, 0.0016]) for E in ends) <= 3e-3
    assert min(np.linalg.norm(E - [0.0031, 0.4760]) for E in ends) <= 3e-3
    for N, M, sig in list(zip(e.vertices, e.partner, e.sigma))[::9]:
        assert abs(hg.hug_value(N, M, P)) <= 1e-8
        assert cf.eigenvalues(M, P)[1] == pytest.approx(sig, abs=1e-8)


# ---------------------------------------------------------------------------
# tangential extension

def test_tangential_extension_residuals(atlas):
    segs = atlas.loci["T_I"]
    assert len(segs) >= 3
    for s in segs:
        for M, N in list(zip(s.vertices, s.partner))[::5]:
            tI = lc._inflection_tangent(N, lc.SLOW, P)
            assert abs(hg.hug_value(N, M, P)) <= 1e-8
            assert abs(lc._tangency_cross(M, N, tI, P)) <= 1e-8


# ---------------------------------------------------------------------------
# rarefaction P-R_P, composite, and the extension of C3-P

def test_tangency_rarefaction():
    rar = lc.tangency_rarefaction(P)
    assert np.allclose(rar.vertices[0], PPT, atol=2e-3)
    assert np.allclose(rar.landmarks["R_P"], R_P, atol=2e-3)
    # R_P sits back on the fast inflection locus
    end = rar.vertices[-1]
    _, r = cf.model.eigen_raw(end, P)
    g = rf.directional_speed_derivative(end, rf.FAST, r[rf.FAST], P)
    assert abs(g) <= 1e-6


def test_composite_connects_rp_to_pprime(atlas):
    (e,) = atlas.loci["f-composite"]
    ends = [e.vertices[0], e.vertices[-1]]
    assert min(np.linalg.norm(E - R_P) for E in ends) <= 2e-3
    assert min(np.linalg.norm(E - P_PRIME) for E in ends) <= 2e-3


def test_dc_extension_connects_pprime_to_c3prime(atlas):
    (e,) = atlas.loci["dc-extension"]
    ends = [e.vertices[0], e.vertices[-1]]
    assert min(np.linalg.norm(E - P_PRIME) for E in ends) <= 2e-3
    assert min(np.linalg.norm(E - C3_PRIME) for E in ends) <= 2e-3


# ---------------------------------------------------------------------------
# atlas

def test_atlas_landmarks_present(atlas):
    required = {"P", "P'", "R_P", "C3", "C4", "C3'", "E0", "D0",
                "H1", "H3", "H4", "H5", "J", "K_E", "K_D",
                "M_E^a", "M_E^b", "M_E^c", "M_E^d",
                "I_B", "I_D", "I_E", "I_h", "U", "D", "E", "B"}
    assert required <= set(atlas.landmarks)


def _dist_to_polyline(S, poly):
    S = np.asarray(S, float)
    A, B = poly[:-1], poly[1:]
    AB = B - A
    t = np.clip(np.einsum("ij,ij->i", S - A, AB)
                / np.maximum(np.einsum("ij,ij->i", AB, AB), 1e-30), 0, 1)
    proj = A + t[:, None] * AB
    return float(np.min(np.linalg.norm(proj - S, axis=1)))


def test_atlas_h_landmarks_on_curves(atlas):
    lm = atlas.landmarks
    fh = atlas.loci["f-hysteresis"]
    sh = atlas.loci["s-hysteresis"]
    for name in ("H1", "H5"):
        d_f = min(_dist_to_polyline(lm[name], e.vertices) for e in fh)
        d_s = min(_dist_to_polyline(lm[name], e.vertices) for e in sh)
        assert d_f <= 1e-3 and d_s <= 1e-3
    # H3 on the invariant segment U-W, H4 on the edge W-O
    t = (lm["H3"][0] - NS.U[0]) / (NS.W[0] - NS.U[0])
    on_line = NS.U + t * (NS.W - NS.U)
    assert np.linalg.norm(lm["H3"] - on_line) <= 1e-6
    assert abs(lm["H4"][1]) <= 1e-12


def test_atlas_regions_closed_and_disjoint(atlas):
    from matplotlib.path import Path
    assert set(atlas.regions) == {"Theta", "Omega", "Gamma"}
    for name, poly in atlas.regions.items():
        assert np.allclose(poly[0], poly[-1], atol=1e-12)
        assert atlas.diagnostics["region_gaps"][name] <= 1e-4
    probes = {"Theta": [0.05, 0.15], "Omega": [0.15, 0.02],
              "Gamma": [0.4, 0.3]}
    for name, probe in probes.items():
        for other, poly in atlas.regions.items():
            inside = Path(poly).contains_point(probe)
            assert inside == (other == name)


def test_atlas_serialization_deterministic(atlas):
    import json
    d1 = json.dumps(atlas.to_json_dict(), sort_keys=True)
    d2 = json.dumps(atlas.to_json_dict(), sort_keys=True)
    assert d1 == d2
    assert len(atlas.content_hash()) == 64
