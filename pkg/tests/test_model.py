import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import coreyflow as cf
from coreyflow.model import DomainError, lambda_gradients, s_o

P = cf.DEFAULT_PARAMS
NS = cf.named_states(P)


def interior_states():
    """Strategy: states strictly inside the triangle."""
    return st.tuples(
        st.floats(0.01, 0.98), st.floats(0.01, 0.98)
    ).filter(lambda t: t[0] + t[1] < 0.99).map(lambda t: np.array(t))


# ---------------------------------------------------------------------------
# flux

def test_flux_single_phase_vertices():
    # single-phase water / gas carry all the flow
    assert np.allclose(cf.flux(NS.W), [1, 0], atol=1e-14)
    assert np.allclose(cf.flux(NS.G), [0, 1], atol=1e-14)
    assert np.allclose(cf.flux(NS.O), [0, 0], atol=1e-14)


def test_flux_at_B_is_identity():
    # on the s_o = 0 edge at B the total mobility is 1/(mu_w+mu_g), so f = s
    assert np.allclose(cf.flux(NS.B), NS.B, atol=1e-14)


def test_flux_out_of_triangle_raises():
    with pytest.raises(DomainError):
        cf.flux(np.array([0.7, 0.7]))


@given(interior_states())
@settings(max_examples=200, deadline=None)
def test_flux_closure(S):
    f = cf.flux(S, P)
    fo = 1.0 - f[0] - f[1]
    assert 0.0 <= f[0] <= 1.0 and 0.0 <= f[1] <= 1.0
    assert fo >= -1e-12


@given(interior_states())
@settings(max_examples=100, deadline=None)
def test_flux_wg_relabel_symmetry(S):
    # swapping (mu_w, s_w) <-> (mu_g, s_g) relabels the fluxes
    p2 = cf.ModelParams(P.mu_g, P.mu_o, P.mu_w)
    f = cf.flux(S, P)
    f2 = cf.flux(S[::-1], p2)
    assert np.allclose(f, f2[::-1], atol=1e-14)


# ---------------------------------------------------------------------------
# jacobian / hessian

def _fd_jacobian(S, p, h=1e-5):
    J = np.zeros((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        J[:, k] = (cf.flux(S + e, p, check=False) - cf.flux(S - e, p, check=False)) / (2 * h)
    return J


def test_jacobian_matches_finite_differences():
    S = np.array([0.3, 0.3])
    assert np.max(np.abs(cf.jacobian(S, P) - _fd_jacobian(S, P))) <= 1e-6


@given(interior_states())
@settings(max_examples=100, deadline=None)
def test_jacobian_fd_property(S):
    assert np.max(np.abs(cf.jacobian(S, P) - _fd_jacobian(S, P))) <= 1e-6


def test_jacobian_vanishes_at_vertices():
    for V in (NS.G, NS.W, NS.O):
        lam = cf.eigenvalues(V, P)
        assert np.allclose(lam, 0.0, atol=1e-12)


@given(interior_states())
@settings(max_examples=50, deadline=None)
def test_full_jacobian_rows_sum_to_zero(S):
    # f_w + f_o + f_g = 1 identically, so the 3-component Jacobian rows cancel
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fp = cf.flux(S + e, P, check=False)
        fm = cf.flux(S - e, P, check=False)
        dfw, dfg = (fp - fm) / (2 * h)
        dfo = ((1 - fp[0] - fp[1]) - (1 - fm[0] - fm[1])) / (2 * h)
        assert abs(dfw + dfo + dfg) <= 1e-9


def test_hessian_matches_finite_differences():
    S = np.array([0.22, 0.41])
    h = 1e-4
    H = cf.hessian(S, P)
    for i in range(2):
        for j in range(2):
            ei = np.zeros(2); ei[i] = h
            ej = np.zeros(2); ej[j] = h
            fd = (cf.flux(S + ei + ej, P, check=False) - cf.flux(S + ei - ej, P, check=False)
                  - cf.flux(S - ei + ej, P, check=False) + cf.flux(S - ei - ej, P, check=False)) / (4 * h * h)
            assert np.max(np.abs(H[:, i, j] - fd)) <= 1e-5


# ---------------------------------------------------------------------------
# eigen-structure

def test_eigen_at_umbilic():
    e = cf.eigen(NS.U, P)
    assert abs(e.lambda_f - e.lambda_s) <= 1e-8
    assert e.degenerate


def test_umbilic_coordinates():
    assert np.allclose(NS.U, [1 / 10.95, 0.45 / 10.95], atol=1e-12)


def test_named_state_formulas():
    assert np.allclose(NS.D, [1 / 10.5, 0.0], atol=1e-12)
    assert NS.D0[1] == pytest.approx(0.5)
    assert NS.E0[0] == pytest.approx(0.5)
    for S in NS.as_dict().values():
        assert cf.model.in_triangle(S)


def test_lambda_s_zero_on_edges():
    for t in np.linspace(0.05, 0.95, 7):
        edge_gw = np.array([t, 1 - t])
        edge_wo = np.array([t, 0.0])
        edge_go = np.array([0.0, t])
        for S in (edge_gw, edge_wo, edge_go):
            lam = cf.eigenvalues(S, P)
            assert abs(lam[0]) <= 1e-10


@given(interior_states())
@settings(max_examples=200, deadline=None)
def test_eigen_ordering_and_consistency(S):
    if np.linalg.norm(S - NS.U) < 1e-3:
        return
    lam, r, l = cf.eigen_fields(S, P)
    J = cf.jacobian(S, P)
    assert lam[0] < lam[1]
    assert lam[0] > -1e-12
    for i in range(2):
        assert np.max(np.abs(J @ r[i] - lam[i] * r[i])) <= 1e-9
        assert np.max(np.abs(l[i] @ J - lam[i] * l[i])) <= 1e-9
    # biorthogonality away from the umbilic point
    assert abs(l[0] @ r[1]) <= 1e-10 or abs(l[1] @ r[0]) <= 1e-10


@given(interior_states())
@settings(max_examples=50, deadline=None)
def test_lambda_gradient_matches_fd(S):
    if np.linalg.norm(S - NS.U) < 5e-3:
        return
    g = lambda_gradients(S, P)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2); e[k] = h
        fd = (cf.eigenvalues(S + e, P) - cf.eigenvalues(S - e, P)) / (2 * h)
        assert np.max(np.abs(g[:, k] - fd)) <= 1e-5


def test_eigenvector_orientation_increasing_speed():
    # oriented so the directional derivative of the own speed is >= 0
    from coreyflow.model import char_speed_derivative
    for S in (np.array([0.3, 0.3]), np.array([0.2, 0.6]), np.array([0.6, 0.1])):
        assert char_speed_derivative(S, P, 0) >= -1e-12
        assert char_speed_derivative(S, P, 1) >= -1e-12


# ---------------------------------------------------------------------------
# viscosity-ratio diagnostics

def test_classical_inequalities_default_params():
    rep = cf.classical_inequalities(P)
    assert rep["q_go"] == pytest.approx(8.23141, abs=1e-4)
    assert rep["q_wo"] == pytest.approx(15.2911, abs=1e-4)
    assert rep["classical"]


def test_classical_inequalities_heavy_oil():
    p = cf.ModelParams(mu_w=1e-4, mu_o=1.0, mu_g=1e-5)
    rep = cf.classical_inequalities(p)
    assert rep["q_go"] > 1e2 and rep["q_wo"] > 1e2


def test_classical_inequalities_equal_viscosities_fail():
    rep = cf.classical_inequalities(cf.ModelParams(1.0, 1.0, 1.0))
    assert rep["q_go"] == pytest.approx(0.0, abs=1e-14)
    assert not rep["classical"]


def test_params_validation():
    with pytest.raises(ValueError):
        cf.ModelParams(-1.0, 1.0, 1.0)


def test_state_json_roundtrip():
    S = np.array([0.25, 0.33])
    d = cf.model.state_to_json(S)
    assert set(d) == {"sw", "sg"}
    assert np.allclose(cf.model.state_from_json(d), S)
