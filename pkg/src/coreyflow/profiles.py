"""Traveling-wave (viscous profile) admissibility of shocks.

A shock (M, N) with speed sigma is admissible when the planar ODE

    dS/dxi = -sigma (S - M) + F(S) - F(M)

has a heteroclinic orbit from M (xi -> -inf) to N (xi -> +inf).  The
equilibria of this field are exactly the states on the Hugoniot locus of M
whose shock speed equals sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import hugoniot as hg
from . import model
from .model import DEFAULT_PARAMS, ModelParams

SN_TOL = 1e-7          # saddle-node flag threshold on linearization eigenvalues
EQ_BALL = 1e-8         # event radius around equilibria
SHOOT_OFFSET = 1e-7    # initial offset along the unstable eigenvector
ORBIT_MATCH = 1e-6     # endpoint matching tolerance


def tw_field(S, M, sigma, p: ModelParams = DEFAULT_PARAMS):
    """Right-hand side of the traveling-wave ODE (vectorized over S)."""
    S = np.asarray(S, float)
    M = np.asarray(M, float)
    return -sigma * (S - M) + model.flux(S, p, check=False) - model.flux(M, p, check=False)


@dataclass
class EquilibriumInfo:
    state: np.ndarray
    eigenvalues: np.ndarray       # complex pair of the linearization J(S) - sigma I
    kind: str                     # saddle | node-attractor | node-repeller | saddle-node
    spiral: bool = False

    def is_saddle_node(self):
        return self.kind == "saddle-node"


def _classify_equilibrium(S, sigma, p, sn_tol=SN_TOL) -> EquilibriumInfo:
    A = model.jacobian(S, p, check=False) - sigma * np.eye(2)
    ev = np.linalg.eigvals(A)
    re = np.real(ev)
    spiral = bool(np.max(np.abs(np.imag(ev))) > 1e-12)
    if np.min(np.abs(re)) < sn_tol:
        kind = "saddle-node"
    elif re[0] * re[1] < 0:
        kind = "saddle"
    elif np.max(re) < 0:
        kind = "node-attractor"
    else:
        kind = "node-repeller"
    return EquilibriumInfo(np.asarray(S, float), ev, kind, spiral)


def _newton_equilibrium(S0, M, sigma, p, tol=1e-13, iters=30):
    S = np.array(S0, float)
    for _ in range(iters):
        f = tw_field(S, M, sigma, p)
        if np.max(np.abs(f)) < tol:
            break
        A = model.jacobian(S, p, check=False) - sigma * np.eye(2)
        try:
            step = np.linalg.solve(A, f)
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(step) > 0.05:
            step = step / np.linalg.norm(step) * 0.05
        S = S - step
    return S, float(np.max(np.abs(tw_field(S, M, sigma, p))))


def equilibria(M, sigma, p: ModelParams = DEFAULT_PARAMS,
               locus: hg.HugoniotLocus | None = None,
               sn_tol: float = SN_TOL) -> list:
    """All equilibria of the traveling-wave field inside the triangle.

    Found as intersections of the Hugoniot locus of M with the shock-speed
    level sigma; a precomputed locus can be passed to amortize tracing.
    """
    M = np.asarray(M, float)
    if locus is None:
        locus = hg.trace_hugoniot(M, p)
    found = [M.copy()]
    for br in list(locus.branches) + list(locus.special_lines):
        pts, sig = br.vertices, br.sigma
        vals = sig - sigma
        for k in range(len(pts) - 1):
            a, b = vals[k], vals[k + 1]
            if not (np.isfinite(a) and np.isfinite(b)):
                continue
            if a == 0.0 or a * b < 0:
                w = abs(a) / (abs(a) + abs(b)) if a * b < 0 else 0.0
                S0 = (1 - w) * pts[k] + w * pts[k + 1]
                S, res = _newton_equilibrium(S0, M, sigma, p)
                if res < 1e-10 and model.in_triangle(S, tol=1e-9):
                    found.append(S)
        # tangential intersections (double roots at saddle-node merges) give
        # no sign change; seed from local minima of |sigma - level|
        av = np.abs(vals)
        for k in range(1, len(pts) - 1):
            if not np.isfinite(av[k - 1] + av[k] + av[k + 1]):
                continue
            if av[k] <= av[k - 1] and av[k] <= av[k + 1] and av[k] < 1e-3:
                from scipy.optimize import least_squares
                sol = least_squares(lambda S: tw_field(S, M, sigma, p),
                                    pts[k], xtol=1e-15, ftol=1e-15, gtol=1e-15)
                S = sol.x
                if (np.max(np.abs(sol.fun)) < 1e-9
                        and model.in_triangle(S, tol=1e-9)):
                    found.append(S)
    uniq = []
    for S in found:
        if all(np.linalg.norm(S - T) > 1e-7 for T in uniq):
            uniq.append(S)
    return [_classify_equilibrium(S, sigma, p, sn_tol) for S in uniq]


@dataclass
class ProfileResult:
    admissible: bool
    marginal: bool
    sigma: float
    orbit: np.ndarray | None = None        # (n, 2) states, M end first
    equilibria: list = field(default_factory=list)
    reason: str = ""

    def __bool__(self):
        return self.admissible


def _manifold_directions(S, sigma, p, stable: bool):
    """Real eigenvector directions of the unstable (or stable) subspace."""
    A = model.jacobian(S, p, check=False) - sigma * np.eye(2)
    ev, V = np.linalg.eig(A)
    dirs = []
    for k in range(2):
        good = np.real(ev[k]) < 0 if stable else np.real(ev[k]) > 0
        if good and abs(np.imag(ev[k])) < 1e-12:
            v = np.real(V[:, k])
            dirs.append(v / np.linalg.norm(v))
    if not dirs:
        has_side = (np.min(np.real(ev)) < 0) if stable else (np.max(np.real(ev)) > 0)
        if has_side and np.max(np.abs(np.imag(ev))) > 1e-12:
            # focus: leave along any direction
            dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    return dirs


def _integrate_orbit(S0, M, sigma, p, targets, xi_max=4000.0, backward=False):
    """Integrate the TW field until an equilibrium ball or the exterior.

    targets: list of equilibrium states.  Returns (states, hit_index or None).
    """
    tsign = -1.0 if backward else 1.0

    def rhs(_xi, S):
        return tsign * tw_field(S, M, sigma, p)

    events = []
    for T in targets:
        def ev(_xi, S, T=T):
            return np.linalg.norm(S - T) - EQ_BALL
        ev.terminal = True
        ev.direction = -1
        events.append(ev)

    def outside(_xi, S):
        return min(S[0], S[1], 1 - S[0] - S[1]) + 0.05
    outside.terminal = True
    events.append(outside)

    sol = solve_ivp(rhs, (0.0, xi_max), S0, method="LSODA",
                    rtol=1e-10, atol=1e-12, events=events, dense_output=False)
    states = sol.y.T
    hit = None
    for k, T in enumerate(targets):
        if len(sol.t_events[k]):
            hit = k
            states = np.vstack([states, sol.y_events[k][0]])
            break
    return states, hit


def has_viscous_profile(M, N, p: ModelParams = DEFAULT_PARAMS,
                        locus: hg.HugoniotLocus | None = None,
                        sn_tol: float = SN_TOL) -> ProfileResult:
    """Heteroclinic-orbit admissibility of the shock M (left) -> N (right).

    Shoots from M along its unstable directions with event detection at all
    equilibria; near-saddle-node configurations are flagged marginal.
    """
    M = np.asarray(M, float)
    N = np.asarray(N, float)
    sigma = hg.shock_speed(M, N, p, check=False)
    if hg.rh_residual(M, N, p) > hg.RH_TOL:
        raise ValueError("(M, N) is not a Rankine-Hugoniot pair")
    eqs = equilibria(M, sigma, p, locus=locus, sn_tol=sn_tol)
    marginal = any(e.is_saddle_node() for e in eqs)
    kN = min(range(len(eqs)), key=lambda k: np.linalg.norm(eqs[k].state - N))
    if np.linalg.norm(eqs[kN].state - N) > 1e-6:
        eqs.append(_classify_equilibrium(N, sigma, p, sn_tol))
        kN = len(eqs) - 1
    AM = model.jacobian(M, p, check=False) - sigma * np.eye(2)
    AN = model.jacobian(N, p, check=False) - sigma * np.eye(2)
    n_unstable_M = int(np.sum(np.real(np.linalg.eigvals(AM)) > 0))
    n_stable_N = int(np.sum(np.real(np.linalg.eigvals(AN)) < 0))
    if n_unstable_M == 0:
        return ProfileResult(False, marginal, sigma, None, eqs,
                             "left state has no unstable direction")
    if n_stable_N == 0:
        return ProfileResult(False, marginal, sigma, None, eqs,
                             "right state has no stable direction")

    others = [e.state for e in eqs
              if np.linalg.norm(e.state - M) > 1e-9
              and np.linalg.norm(e.state - N) > 1e-9]

    def shoot(start, dirs, backward, goal):
        """Shoot from `start` toward `goal`; return (hit, best_orbit)."""
        targets = [goal] + others
        best = None
        for v in dirs:
            for sgn in (+1.0, -1.0):
                S0 = start + sgn * SHOOT_OFFSET * v
                states, hit = _integrate_orbit(S0, M, sigma, p, targets,
                                               backward=backward)
                d = np.linalg.norm(states[-1] - goal)
                if hit == 0 or d < ORBIT_MATCH:
                    return True, states
                if best is None or d < best[0]:
                    best = (d, states, hit)
        return False, best

    if n_stable_N == 2:
        # N attracts: generic forward orbits from the unstable set of M land
        ok, res = shoot(M, _manifold_directions(M, sigma, p, stable=False),
                        False, N)
        if ok:
            orbit = np.vstack([M[None, :], res, N[None, :]])
            return ProfileResult(True, marginal, sigma, orbit, eqs, "orbit found")
        captured = res is not None and res[2] is not None
    elif n_unstable_M == 2:
        # M repels, N is a saddle: the connection arrives along the stable
        # manifold of N, so integrate backward from N toward M
        ok, res = shoot(N, _manifold_directions(N, sigma, p, stable=True),
                        True, M)
        if ok:
            orbit = np.vstack([M[None, :], res[::-1], N[None, :]])
            return ProfileResult(True, marginal, sigma, orbit, eqs, "orbit found")
        captured = res is not None and res[2] is not None
    else:
        # saddle-saddle (undercompressive): forward orbit from M and backward
        # orbit from N must coincide; accept on closest-approach matching
        _, fw = shoot(M, _manifold_directions(M, sigma, p, stable=False), False, N)
        _, bw = shoot(N, _manifold_directions(N, sigma, p, stable=True), True, M)
        if fw is not None and bw is not None:
            if fw[0] < ORBIT_MATCH or bw[0] < ORBIT_MATCH:
                orbit = np.vstack([M[None, :], fw[1], N[None, :]])
                return ProfileResult(True, marginal, sigma, orbit, eqs, "orbit found")
            d = np.min(np.linalg.norm(fw[1][:, None, :] - bw[1][None, :, :],
                                      axis=-1))
            if d < ORBIT_MATCH:
                orbit = np.vstack([M[None, :], fw[1], bw[1][::-1], N[None, :]])
                return ProfileResult(True, marginal, sigma, orbit, eqs,
                                     "orbit found (matched manifolds)")
        captured = ((fw is not None and fw[2] is not None)
                    or (bw is not None and bw[2] is not None))

    reason = ("orbit captured by intermediate equilibrium" if captured
              else "no orbit reaches the right state")
    if marginal:
        return ProfileResult(False, True, sigma, None, eqs,
                             "marginal: near saddle-node, " + reason)
    return ProfileResult(False, marginal, sigma, None, eqs, reason)


# ---------------------------------------------------------------------------
# invariant-line shortcuts

def _invariant_lines(p):
    ns = model.named_states(p)
    return [
        ("edge-WO", ns.W, ns.O), ("edge-GO", ns.G, ns.O), ("edge-GW", ns.G, ns.W),
        ("sb-EW", ns.E, ns.W), ("sb-GD", ns.G, ns.D), ("sb-OB", ns.O, ns.B),
    ]


def _line_coord(S, A, B, tol):
    """Signed offset of S from segment A-B and the along-line parameter."""
    d = B - A
    L = np.linalg.norm(d)
    d = d / L
    v = S - A
    off = d[0] * v[1] - d[1] * v[0]
    t = float(np.dot(v, d)) / L
    return off, t


def invariant_line_side_test(M, N, p: ModelParams = DEFAULT_PARAMS,
                             tol: float = 1e-9) -> str:
    """Admissibility shortcut from the flow-invariant segments.

    The triangle edges and the three interior segments E-W, G-D, O-B are
    invariant under the traveling-wave flow whenever they consist of
    equilibrium-compatible states of the base M (the segment lies in the
    Hugoniot locus of M).  Returns 'admissible', 'inadmissible', or
    'needs-full-check'.
    """
    M = np.asarray(M, float)
    N = np.asarray(N, float)
    sigma = hg.shock_speed(M, N, p, check=False)
    for name, A, B in _invariant_lines(p):
        offM, tM = _line_coord(M, A, B, tol)
        offN, tN = _line_coord(N, A, B, tol)
        if abs(offM) <= tol and abs(offN) <= tol:
            # both on the invariant segment: scalar Oleinik-type check, the
            # flow along the line must run from M to N on the whole interval
            d = (B - A) / np.linalg.norm(B - A)
            direction = np.sign(np.dot(N - M, d))
            ts = np.linspace(0, 1, 257)[1:-1]
            pts = M[None, :] * (1 - ts[:, None]) + N[None, :] * ts[:, None]
            phi = np.einsum("ij,j->i", tw_field(pts, M, sigma, p), d) * direction
            if np.all(phi > 0):
                return "admissible"
            if np.any(phi < -1e-12):
                return "inadmissible"
            return "needs-full-check"
        if abs(offM) > tol and abs(offN) > tol and offM * offN < 0:
            # opposite sides: no orbit can cross a segment made entirely of
            # equilibria of this field (uniqueness of solutions)
            ts = np.linspace(0, 1, 17)[:, None]
            seg = A[None, :] * (1 - ts) + B[None, :] * ts
            if np.max(np.abs(tw_field(seg, M, sigma, p))) < 1e-10:
                return "inadmissible"
    return "needs-full-check"
