"""Hugoniot loci: implicit-curve tracing, shock speeds, shock classification,
and characteristic (Bethe-Wendroff) points.

The locus of base state M is the zero set of the sigma-eliminated form

    H(S) = (f_w(S) - f_w(M)) (s_g - s_g(M)) - (f_g(S) - f_g(M)) (s_w - s_w(M))

contoured on a grid and Newton-polished; the shock speed then follows from
least squares on sigma (S - M) = F(S) - F(M).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import DEFAULT_PARAMS, ModelParams

RH_TOL = 1e-8
CHAR_TOL = 1e-7


# ---------------------------------------------------------------------------
# pointwise quantities

def shock_speed(M, N, p: ModelParams = DEFAULT_PARAMS, tol: float = RH_TOL,
                check: bool = True) -> float:
    """Least-squares sigma for the jump M -> N; errors if (M, N) is not an
    RH pair within `tol`."""
    M = np.asarray(M, float)
    N = np.asarray(N, float)
    dS = M - N
    dF = model.flux(M, p, check=False) - model.flux(N, p, check=False)
    nrm2 = float(dS @ dS)
    if nrm2 < 1e-28:
        raise ValueError("shock_speed requires M != N")
    sigma = float(dS @ dF) / nrm2
    if check:
        resid = float(np.max(np.abs(sigma * dS - dF)))
        if resid > tol:
            raise ValueError(f"not an RH pair: residual {resid:.3e} > {tol:.1e}")
    return sigma


def rh_residual(M, N, p: ModelParams = DEFAULT_PARAMS) -> float:
    M = np.asarray(M, float)
    N = np.asarray(N, float)
    dS = M - N
    dF = model.flux(M, p, check=False) - model.flux(N, p, check=False)
    nrm2 = float(dS @ dS)
    if nrm2 < 1e-28:
        return 0.0
    sigma = float(dS @ dF) / nrm2
    return float(np.max(np.abs(sigma * dS - dF)))


def hug_value(S, M, p: ModelParams = DEFAULT_PARAMS):
    """Sigma-eliminated Hugoniot function H(S; M) (vectorized)."""
    S = np.asarray(S, float)
    M = np.asarray(M, float)
    F = model.flux(S, p, check=False)
    FM = model.flux(M, p, check=False)
    return ((F[..., 0] - FM[0]) * (S[..., 1] - M[1])
            - (F[..., 1] - FM[1]) * (S[..., 0] - M[0]))


def hug_gradient(S, M, p: ModelParams = DEFAULT_PARAMS):
    """Analytic gradient of H(.; M) (vectorized)."""
    S = np.asarray(S, float)
    M = np.asarray(M, float)
    F = model.flux(S, p, check=False)
    FM = model.flux(M, p, check=False)
    J = model.jacobian(S, p, check=False)
    g = (J[..., 0, :] * (S[..., 1] - M[1])[..., None]
         - J[..., 1, :] * (S[..., 0] - M[0])[..., None])
    g[..., 1] += F[..., 0] - FM[0]
    g[..., 0] -= F[..., 1] - FM[1]
    return g


def polish_onto_locus(S, M, p: ModelParams = DEFAULT_PARAMS, tol: float = 1e-13,
                      iters: int = 8):
    """Newton steps S <- S - H grad(H)/|grad(H)|^2 (vectorized over points)."""
    S = np.array(S, float)
    for _ in range(iters):
        h = hug_value(S, M, p)
        g = hug_gradient(S, M, p)
        gg = np.sum(g * g, axis=-1)
        step = (h / np.maximum(gg, 1e-30))[..., None] * g
        nrm = np.linalg.norm(step, axis=-1, keepdims=True)
        step = np.where(nrm > 2e-3, step / np.maximum(nrm, 1e-30) * 2e-3, step)
        S = S - step
        if np.all(np.abs(h) < tol):
            break
    return S


# ---------------------------------------------------------------------------
# shock classification

@dataclass
class ShockClass:
    kind: str                 # 's' | 'f' | 'u' | 'o' | 'degenerate'
    left_char: str | None     # 's' | 'f' | None : sigma = lambda_i(M)
    right_char: str | None    # 's' | 'f' | None : sigma = lambda_i(N)
    sigma: float

    def label(self) -> str:
        if self.kind == "degenerate":
            return "degenerate"
        s = f"S{self.kind}"
        if self.left_char:
            s = "'" + s
        if self.right_char:
            s = s + "'"
        return s


def classify_shock(M, N, p: ModelParams = DEFAULT_PARAMS,
                   char_tol: float = CHAR_TOL, sigma: float | None = None) -> ShockClass:
    """Lax-type classification of the discontinuity with M on the left."""
    M = np.asarray(M, float)
    N = np.asarray(N, float)
    if np.linalg.norm(M - N) <= model.STATE_EPS:
        return ShockClass("degenerate", None, None, float("nan"))
    if sigma is None:
        sigma = shock_speed(M, N, p, check=False)
    lsM, lfM = model.eigenvalues(M, p)
    lsN, lfN = model.eigenvalues(N, p)
    left_char = ("s" if abs(sigma - lsM) <= char_tol
                 else "f" if abs(sigma - lfM) <= char_tol else None)
    right_char = ("s" if abs(sigma - lsN) <= char_tol
                  else "f" if abs(sigma - lfN) <= char_tol else None)
    t = char_tol
    s_shock = (lsN < sigma + t) and (sigma < lsM + t) and (sigma < lfN + t)
    f_shock = (lfN < sigma + t) and (sigma < lfM + t) and (lsM < sigma + t)
    o_shock = (lfN < sigma + t) and (sigma < lsM + t)
    u_shock = (lsM < sigma + t) and (sigma < lfM + t) and (lsN < sigma + t) and (sigma < lfN + t)
    if o_shock:
        kind = "o"
    elif s_shock and not f_shock:
        kind = "s"
    elif f_shock and not s_shock:
        kind = "f"
    elif u_shock:
        kind = "u"
    elif s_shock and f_shock:
        kind = "o"
    else:
        kind = "degenerate"
    return ShockClass(kind, left_char, right_char, float(sigma))


# ---------------------------------------------------------------------------
# locus tracing

@dataclass
class HugoniotBranch:
    vertices: np.ndarray          # (n, 2)
    sigma: np.ndarray             # (n,)
    attached: bool
    labels: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.vertices)

    def classes(self, M, p):
        return [classify_shock(M, N, p, sigma=s) for N, s in zip(self.vertices, self.sigma)]


@dataclass
class HugoniotLocus:
    base: np.ndarray
    branches: list
    special_lines: list = field(default_factory=list)  # exact line branches

    @property
    def attached(self):
        return [b for b in self.branches if b.attached]

    @property
    def detached(self):
        return [b for b in self.branches if not b.attached]


def _candidate_lines(M, p, tol=1e-10):
    """Edges / secondary-bifurcation segments that belong to H(M) exactly."""
    ns = model.named_states(p)
    lines = [
        ("edge-WO", ns.W, ns.O), ("edge-GO", ns.G, ns.O), ("edge-GW", ns.G, ns.W),
        ("sb-EW", ns.E, ns.W), ("sb-GD", ns.G, ns.D), ("sb-OB", ns.O, ns.B),
    ]
    out = []
    for name, A, Bp in lines:
        ts = np.linspace(0, 1, 33)[:, None]
        pts = A[None, :] * (1 - ts) + Bp[None, :] * ts
        vals = hug_value(pts, M, p)
        if np.max(np.abs(vals)) < tol:
            out.append((name, A, Bp))
    return out


def _dist_to_segment(P, A, B):
    AB = B - A
    t = np.clip(((P - A) @ AB) / (AB @ AB), 0.0, 1.0)
    proj = A + np.outer(t, AB) if P.ndim > 1 else A + t * AB
    return np.linalg.norm(P - proj, axis=-1)


def trace_hugoniot(M, p: ModelParams = DEFAULT_PARAMS, grid_n: int = 1024,
                   base_radius: float = 1.5e-3) -> HugoniotLocus:
    """Trace all branches of the Hugoniot locus of M inside the triangle."""
    from skimage import measure

    M = np.asarray(M, float)
    model.require_in_triangle(M, 1e-7)

    xs = np.linspace(0.0, 1.0, grid_n)
    ys = np.linspace(0.0, 1.0, grid_n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    S = np.stack([X, Y], axis=-1)
    vals = hug_value(S, M, p)
    margin = 1.5 / grid_n
    vals = np.where(1.0 - X - Y < -margin, np.nan, vals)

    # lines (edges / secondary bifurcations) on which H vanishes identically
    # are handled exactly and masked out of the grid
    lines = _candidate_lines(M, p)
    flat = S.reshape(-1, 2)
    mask = np.zeros(flat.shape[0], bool)
    for name, A, Bp in lines:
        mask |= _dist_to_segment(flat, A, Bp) < 2.5 * margin
    vals = np.where(mask.reshape(vals.shape), np.nan, vals)

    dx = xs[1] - xs[0]
    raw = measure.find_contours(vals, 0.0)
    polys = []
    for c in raw:
        pts = np.column_stack([xs[0] + c[:, 0] * dx, ys[0] + c[:, 1] * dx])
        if len(pts) >= 3:
            polys.append(pts)

    # polish, drop points that failed to converge or left the triangle
    branches = []
    for pts in polys:
        pts = polish_onto_locus(pts, M, p)
        ok = (np.abs(hug_value(pts, M, p)) < 1e-11) & model.in_triangle(pts, tol=1e-9)
        # split at the base point vicinity and at non-converged points
        ok &= np.linalg.norm(pts - M, axis=-1) > base_radius
        runs = _mask_runs(ok)
        for a, b in runs:
            if b - a >= 3:
                branches.append(pts[a:b])

    branches = _reattach_base(branches, M, base_radius)
    branches = [_snap_ends_to_edges(b, M, p) for b in branches]

    out = []
    for pts in branches:
        sig = _sigma_along(pts, M, p)
        attached = bool(np.min(np.linalg.norm(pts - M, axis=-1)) <= model.STATE_EPS * 10)
        out.append(HugoniotBranch(pts, sig, attached))
    out.sort(key=len, reverse=True)
    special = []
    for name, A, Bp in lines:
        tline = np.linspace(0, 1, 257)[:, None]
        pts = A[None, :] * (1 - tline) + Bp[None, :] * tline
        sig = _sigma_along(pts, M, p)
        attached = bool(_dist_to_segment(M[None, :], A, Bp)[0] < 1e-9)
        br = HugoniotBranch(pts, sig, attached, labels={"line": name})
        special.append(br)
    return HugoniotLocus(M, out, special)


def _mask_runs(ok):
    runs = []
    start = None
    for k in range(len(ok) + 1):
        if k < len(ok) and ok[k]:
            if start is None:
                start = k
        else:
            if start is not None:
                runs.append((start, k))
            start = None
    return runs


def _reattach_base(branches, M, base_radius):
    """Extend branch ends that point at the excised base region to M itself."""
    out = []
    for pts in branches:
        pts = np.asarray(pts)
        if np.linalg.norm(pts[0] - M) < 3.5 * base_radius:
            pts = np.vstack([M, pts])
        if np.linalg.norm(pts[-1] - M) < 3.5 * base_radius:
            pts = np.vstack([pts, M])
        out.append(pts)
    # merge fragments whose free ends coincide (contouring splits at NaNs)
    merged = True
    while merged:
        merged = False
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                a, b = out[i], out[j]
                pairs = [(-1, 0, False, False), (-1, -1, False, True),
                         (0, 0, True, False), (0, -1, True, True)]
                for ea, eb, rev_a, rev_b in pairs:
                    if np.linalg.norm(a[ea] - b[eb]) < 4e-3:
                        if np.allclose(a[ea], M) and np.allclose(b[eb], M):
                            continue  # both at base: genuinely distinct branches
                        aa = a[::-1] if rev_a else a
                        bb = b[::-1] if rev_b else b
                        out[i] = np.vstack([aa, bb[1:]])
                        out.pop(j)
                        merged = True
                        break
                if merged:
                    break
            if merged:
                break
    return out


def _snap_ends_to_edges(pts, M, p, tol=5e-3):
    """Polish dangling branch ends onto the exact triangle edge crossing."""
    pts = np.array(pts)
    for end in (0, -1):
        P = pts[end]
        if np.allclose(P, M):
            continue
        edge = _nearest_edge_h(P, tol)
        if edge is None:
            continue
        P0, d = edge
        t = float((P - P0) @ d)
        h = 1e-7
        for _ in range(30):
            val = hug_value(P0 + t * d, M, p)
            dv = (hug_value(P0 + (t + h) * d, M, p)
                  - hug_value(P0 + (t - h) * d, M, p)) / (2 * h)
            if abs(dv) < 1e-16:
                break
            t -= np.clip(val / dv, -0.02, 0.02)
            if abs(val) < 1e-14:
                break
        X = P0 + t * d
        if model.in_triangle(X, tol=1e-9) and np.linalg.norm(X - P) < 2 * tol:
            pts[end] = X
    return pts


def _nearest_edge_h(S, tol):
    edges = [
        (np.array([0.0, 0.0]), np.array([1.0, 0.0])),
        (np.array([0.0, 0.0]), np.array([0.0, 1.0])),
        (np.array([1.0, 0.0]), np.array([-1.0, 1.0]) / np.sqrt(2)),
    ]
    dists = [S[1], S[0], (1.0 - S[0] - S[1]) / np.sqrt(2)]
    k = int(np.argmin(dists))
    return edges[k] if dists[k] < tol else None


def _sigma_along(pts, M, p):
    dS = pts - M
    dF = model.flux(pts, p, check=False) - model.flux(M, p, check=False)
    nrm2 = np.sum(dS * dS, axis=-1)
    sig = np.sum(dS * dF, axis=-1) / np.maximum(nrm2, 1e-30)
    # at the base point itself sigma is the characteristic limit; fill from
    # the neighbouring vertex
    bad = nrm2 < 1e-20
    if np.any(bad):
        idx = np.where(bad)[0]
        for i in idx:
            j = i + 1 if i + 1 < len(sig) and not bad[i + 1] else i - 1
            if 0 <= j < len(sig):
                sig[i] = sig[j]
    return sig


# ---------------------------------------------------------------------------
# characteristic (Bethe-Wendroff) points

_COND_FUNS = {
    # 'point' = the state running along the locus, 'base' = the locus base.
    # On a backward Hugoniot curve the point is the left state of the shock.
    "sigma=lambda_f(point)": lambda sig, lamN, lamM: sig - lamN[1],
    "sigma=lambda_s(point)": lambda sig, lamN, lamM: sig - lamN[0],
    "sigma=lambda_f(base)": lambda sig, lamN, lamM: sig - lamM[1],
    "sigma=lambda_s(base)": lambda sig, lamN, lamM: sig - lamM[0],
}


def characteristic_points(locus: HugoniotLocus, which: str,
                          p: ModelParams = DEFAULT_PARAMS,
                          include_lines: bool = False):
    """All points on the locus where the given characteristic equality holds.

    which: one of 'sigma=lambda_f(point)', 'sigma=lambda_s(point)',
    'sigma=lambda_f(base)', 'sigma=lambda_s(base)'.  Returns a list of dicts
    with the refined state, sigma, and branch index.
    """
    cond = _COND_FUNS[which]
    M = locus.base
    lamM = model.eigenvalues(M, p)
    found = []
    branch_lists = [locus.branches] + ([locus.special_lines] if include_lines else [])
    for blist_id, blist in enumerate(branch_lists):
        for bi, br in enumerate(blist):
            pts, sig = br.vertices, br.sigma
            lamN = model.eigenvalues(pts, p)
            vals = np.array([cond(sig[k], lamN[k], lamM) for k in range(len(pts))])
            base_mask = np.linalg.norm(pts - M, axis=-1) < 1e-6
            for k in range(len(pts) - 1):
                if base_mask[k] or base_mask[k + 1]:
                    continue
                if not (np.isfinite(vals[k]) and np.isfinite(vals[k + 1])):
                    continue
                if vals[k] == 0.0 or vals[k] * vals[k + 1] < 0:
                    N = _refine_char_point(M, pts[k], pts[k + 1], cond, p,
                                           on_line=(blist_id == 1), br=br)
                    if N is not None:
                        found.append({
                            "state": N,
                            "sigma": shock_speed(M, N, p, check=False),
                            "branch": bi if blist_id == 0 else f"line:{br.labels.get('line')}",
                            "which": which,
                        })
    # dedupe
    uniq = []
    for f in found:
        if all(np.linalg.norm(f["state"] - u["state"]) > 1e-7 for u in uniq):
            uniq.append(f)
    return uniq


def _refine_char_point(M, A, B, cond, p, on_line=False, br=None, iters=80):
    """Bisection refinement along the locus between bracketing vertices."""
    lamM = model.eigenvalues(M, p)

    def val_at(S):
        sig = shock_speed(M, S, p, check=False)
        return cond(sig, model.eigenvalues(S, p), lamM)

    def project(S):
        if on_line and br is not None:
            A0, B0 = br.vertices[0], br.vertices[-1]
            d = (B0 - A0) / np.linalg.norm(B0 - A0)
            return A0 + float((S - A0) @ d) * d
        return polish_onto_locus(S, M, p)

    fa = val_at(A)
    fb = val_at(B)
    if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
        # may have lost the bracket after polish; fall back to midpoint
        return None
    a, b = np.array(A, float), np.array(B, float)
    for _ in range(iters):
        mid = project(0.5 * (a + b))
        fm = val_at(mid)
        if not np.isfinite(fm):
            break
        if fa * fm <= 0:
            b, fb = mid, fm
        else:
            a, fa = mid, fm
        if np.linalg.norm(b - a) < 1e-12:
            break
    return project(0.5 * (a + b))


def verify_triple_shock(A, B, C, p: ModelParams = DEFAULT_PARAMS,
                        tol: float = RH_TOL):
    """Triple shock rule: (A,B) and (B,C) RH pairs with equal sigma imply
    (A,C) is an RH pair at the same sigma.  Returns (ok, sigma, residual)."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    C = np.asarray(C, float)
    if np.linalg.norm(A - B) <= model.STATE_EPS or np.linalg.norm(B - C) <= model.STATE_EPS:
        sig = shock_speed(A, C, p, check=False) if np.linalg.norm(A - C) > model.STATE_EPS else float("nan")
        return True, sig, 0.0
    s1 = shock_speed(A, B, p, tol=tol)
    s2 = shock_speed(B, C, p, tol=tol)
    if abs(s1 - s2) > tol * 10:
        raise ValueError(f"pre-condition: sigma(A,B)={s1} != sigma(B,C)={s2}")
    sig = 0.5 * (s1 + s2)
    dS = A - C
    dF = model.flux(A, p, check=False) - model.flux(C, p, check=False)
    resid = float(np.max(np.abs(sig * dS - dF)))
    return resid <= tol * 10, sig, resid
