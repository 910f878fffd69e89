"""Rarefaction (integral) curves and inflection loci.

Rarefaction curves follow the right-eigenvector field of one family with the
characteristic speed monotone along the curve; they stop at the inflection
locus (speed extremum), the triangle boundary, or the umbilic vicinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import model
from .contour import marching_squares_aligned, refine_polyline
from .model import DEFAULT_PARAMS, ModelParams, UMBILIC_RADIUS

SLOW, FAST = 0, 1


@dataclass
class RarefactionCurve:
    family: int
    states: np.ndarray          # (n, 2)
    lambdas: np.ndarray         # (n,)
    reason: str                 # inflection | boundary | umbilic | length | empty
    direction: str = "increasing"

    def __len__(self):
        return len(self.states)


def _oriented_r(S, family, ref, p):
    """Unit eigenvector of `family` at S, sign-aligned with `ref`."""
    lam, r = model.eigen_raw(S, p)
    v = r[..., family, :]
    if np.dot(v, ref) < 0:
        v = -v
    return v, lam[..., family]


def integrate_rarefaction(S0, family, direction, p: ModelParams = DEFAULT_PARAMS,
                          max_step: float = 1e-2, rtol: float = 1e-9,
                          max_length: float = 4.0,
                          stop_at_inflection: bool = True) -> RarefactionCurve:
    """Integrate the rarefaction curve of `family` from S0.

    direction: 'increasing' or 'decreasing' characteristic speed.  The curve
    is arclength-parameterized and integrated in chunks of `max_step` with
    the eigenvector orientation frozen per chunk (the field is only defined
    up to sign); stops at the inflection locus (sign change of
    d(lambda)/d(arclength)), the triangle boundary, or the umbilic vicinity.
    """
    S0 = np.asarray(S0, float)
    ns = model.named_states(p)
    U = ns.U
    vertices = [ns.G, ns.W, ns.O]
    if np.linalg.norm(S0 - U) < UMBILIC_RADIUS:
        raise ValueError("start point inside umbilic exclusion ball")
    sgn = +1.0 if direction == "increasing" else -1.0

    lam0, r0, _ = model.eigen_fields(S0, p)
    g0 = model.lambda_gradients(S0, p)[family]
    v0 = r0[family]
    d0 = np.dot(g0, v0)
    if abs(d0) < 1e-11:
        return RarefactionCurve(family, S0[None, :], np.array([lam0[family]]),
                                "empty", direction)
    if sgn * d0 < 0:
        v0 = -v0

    ref_cell = {"ref": v0}

    def rhs(_t, Y):
        v, _ = _oriented_r(Y, family, ref_cell["ref"], p)
        return v

    def dlam(S):
        v, _ = _oriented_r(S, family, ref_cell["ref"], p)
        g = model.lambda_gradients(S, p)[family]
        return sgn * float(np.dot(g, v))

    def tri_dist(S):
        return float(min(S[0], S[1], 1.0 - S[0] - S[1]))

    from scipy.integrate import RK45

    solver = RK45(rhs, 0.0, S0, t_bound=max_length, rtol=rtol, atol=1e-12,
                  max_step=max_step, first_step=min(max_step, 1e-4))
    states = [S0.copy()]
    reason = "length"

    def bisect(interp, t0, t1, f, want_positive=True):
        lo, hi = t0, t1
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if (f(interp(mid)) > 0) == want_positive:
                lo = mid
            else:
                hi = mid
        return interp(0.5 * (lo + hi))

    while solver.status == "running":
        t_prev = solver.t
        msg = solver.step()
        if msg is not None:
            reason = "stalled"
            break
        S1 = solver.y
        interp = solver.dense_output()

        if tri_dist(S1) <= 1e-12:
            Sb = bisect(interp, t_prev, solver.t, tri_dist)
            states.append(model.clip_to_triangle(Sb))
            reason = "boundary"
            break
        if np.linalg.norm(S1 - U) < max(UMBILIC_RADIUS, 1e-5):
            states.append(S1.copy())
            reason = "umbilic"
            break
        hit = [V for V in vertices if np.linalg.norm(S1 - V) < 5e-4]
        if hit:
            # the integral curve enters the vertex radially; finish with a
            # straight tail (the solver's steps collapse approaching the
            # degenerate point)
            V = hit[0]
            d = S1 - V
            states.append(S1.copy())
            for fac in (0.5, 0.25, 0.1, 0.03, 0.01, 1e-3, 1e-4, 1e-6):
                states.append(V + fac * d)
            states.append(V.copy())
            reason = "boundary"
            break
        if stop_at_inflection and dlam(S1) <= 0.0:
            states.append(bisect(interp, t_prev, solver.t, dlam))
            reason = "inflection"
            break

        states.append(S1.copy())
        v1, _ = _oriented_r(S1, family, ref_cell["ref"], p)
        ref_cell["ref"] = v1

    states = model.clip_to_triangle(np.array(states))
    lams = model.eigenvalues(states, p)[:, family]
    return RarefactionCurve(family, states, lams, reason, direction)


# ---------------------------------------------------------------------------
# inflection loci

@dataclass
class InflectionLocus:
    family: int
    polylines: list
    landmarks: dict = field(default_factory=dict)


def directional_speed_derivative(S, family, ref, p):
    """g(S) = grad(lambda) . r with r sign-aligned against `ref`."""
    v, _ = _oriented_r(np.asarray(S, float), family, ref, p)
    g = model.lambda_gradients(np.asarray(S, float), p)[family]
    return float(np.dot(g, v))


_EDGES = (
    # (point on edge, unit direction, inward normal)
    (np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])),   # W-O
    (np.array([0.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0])),   # G-O
    (np.array([1.0, 0.0]), np.array([-1.0, 1.0]) / np.sqrt(2),
     np.array([-1.0, -1.0]) / np.sqrt(2)),                                # G-W
)


def _nearest_edge(S, tol):
    dists = [S[1], S[0], (1.0 - S[0] - S[1]) / np.sqrt(2)]
    k = int(np.argmin(dists))
    return (k, *_EDGES[k]) if dists[k] < tol else None


def _polish_point(S, family, p, tol=1e-10, edge_tol=5e-3):
    """Newton-polish one point onto the inflection locus.

    Points close to a triangle edge are polished along the edge (1-D), the
    rest in 2-D along the residual gradient.  Returns (point, |residual|).
    """
    S = np.array(S, float)
    lam, r = model.eigen_raw(S, p)
    ref = r[family]

    def g(X):
        return directional_speed_derivative(X, family, ref, p)

    edge = _nearest_edge(S, edge_tol)
    if edge is not None:
        _, P0, d, _ = edge
        t = float(np.dot(S - P0, d))
        h = 1e-6
        for _ in range(30):
            val = g(P0 + t * d)
            dval = (g(P0 + (t + h) * d) - g(P0 + (t - h) * d)) / (2 * h)
            if abs(dval) < 1e-14:
                break
            step = val / dval
            t -= np.clip(step, -0.02, 0.02)
            if abs(val) < tol:
                break
        X = P0 + t * d
        return X, abs(g(X))

    h = 1e-7
    for _ in range(20):
        f0 = g(S)
        if abs(f0) < tol:
            break
        gx = (g(S + [h, 0]) - g(S - [h, 0])) / (2 * h)
        gy = (g(S + [0, h]) - g(S - [0, h])) / (2 * h)
        gg = gx * gx + gy * gy
        if gg < 1e-20:
            break
        step = f0 / gg * np.array([gx, gy])
        if np.linalg.norm(step) > 0.02:
            step = step / np.linalg.norm(step) * 0.02
        S = S - step
    return S, abs(g(S))


def _polish_and_filter(poly, family, p, tol=1e-10, keep_tol=1e-8, min_len=4):
    """Polish every vertex, then keep maximal runs of converged vertices."""
    pts = []
    res = []
    for S in poly:
        X, r = _polish_point(S, family, p, tol=tol)
        pts.append(X)
        res.append(r)
    pts = np.array(pts)
    res = np.array(res)
    good = (res <= keep_tol) & model.in_triangle(pts, tol=1e-12)
    out = []
    start = None
    for k in range(len(pts) + 1):
        if k < len(pts) and good[k]:
            if start is None:
                start = k
        else:
            if start is not None and k - start >= min_len:
                out.append(pts[start:k])
            start = None
    return out


def inflection_locus(family, p: ModelParams = DEFAULT_PARAMS,
                     grid_n: int = 512) -> InflectionLocus:
    """Zero set of grad(lambda_i) . r_i inside the triangle."""
    if grid_n < 64:
        raise ValueError("grid_n >= 64 required")
    xs = np.linspace(0.0, 1.0, grid_n)
    ys = np.linspace(0.0, 1.0, grid_n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    S = np.stack([X, Y], axis=-1)
    lam, r, l = model.eigen_fields(S, p)
    g = model.lambda_gradients(S, p, lam=lam, r=r, l=l)
    vals = np.einsum("...k,...k->...", g[..., family, :], r[..., family, :])
    so = 1.0 - X - Y
    margin = 1.0 / grid_n
    vals = np.where(so < -margin, np.nan, vals)
    U = model.named_states(p).U
    near_u = (X - U[0]) ** 2 + (Y - U[1]) ** 2 < (4.0 / grid_n) ** 2
    vals = np.where(near_u, np.nan, vals)
    align = r[..., family, :]
    polys = marching_squares_aligned(xs, ys, vals, align)
    polys = [pl for pl in polys if len(pl) >= 3]
    polished = []
    for pl in polys:
        polished.extend(_polish_and_filter(pl, family, p))
    polished.sort(key=len, reverse=True)
    loc = InflectionLocus(family, polished)
    _label_landmarks(loc, p)
    return loc


def _label_landmarks(loc: InflectionLocus, p):
    """Edge intersections and distinguished points of the inflection loci."""
    lm = loc.landmarks
    for pl in loc.polylines:
        for end in (pl[0], pl[-1]):
            sw, sg = end
            so = 1 - sw - sg
            if abs(so) < 5e-3 and loc.family == FAST:
                lm["I_B"] = np.array(end)
            elif abs(sg) < 5e-3 and loc.family == FAST:
                lm["I_D"] = np.array(end)
            elif abs(sw) < 5e-3 and loc.family == FAST:
                lm["I_E"] = np.array(end)
    if loc.family == SLOW and loc.polylines:
        # summit of the slow inflection: maximal characteristic speed
        pl = loc.polylines[0]
        lams = model.eigenvalues(pl, p)[:, SLOW]
        lm["I_h"] = pl[int(np.argmax(lams))]
    if loc.family == FAST and loc.polylines:
        P = _tangency_point(loc.polylines, FAST, p)
        if P is not None:
            lm["P"] = P


def _tangency_point(polylines, family, p):
    """Point where the family's eigenvector is tangent to the locus (P)."""
    if isinstance(polylines, np.ndarray):
        polylines = [polylines]
    for poly in polylines:
        vals = []
        mids = []
        ref = None
        for k in range(len(poly) - 1):
            t = poly[k + 1] - poly[k]
            nrm = np.linalg.norm(t)
            if nrm < 1e-14:
                continue
            t = t / nrm
            mid = 0.5 * (poly[k] + poly[k + 1])
            v, _ = _oriented_r(mid, family, t if ref is None else ref, p)
            ref = v
            vals.append(float(v[0] * t[1] - v[1] * t[0]))
            mids.append(mid)
        for k in range(len(vals) - 1):
            if vals[k] * vals[k + 1] < 0:
                w = abs(vals[k]) / (abs(vals[k]) + abs(vals[k + 1]))
                return (1 - w) * mids[k] + w * mids[k + 1]
    return None
