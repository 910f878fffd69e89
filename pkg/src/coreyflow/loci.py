"""Bifurcation loci: extensions, hysteresis, double/mixed contacts, T_I.

These curves partition the saturation triangle into regions with distinct
wave-curve structure.  All loci are represented as LocusPolyline objects
whose vertices satisfy the defining residuals to locus_tol; paired loci
(extensions, contacts) carry the partner state per vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hugoniot as hg
from . import model
from . import rarefaction as rf
from .model import DEFAULT_PARAMS, ModelParams

LOCUS_TOL = 1e-8
NEWTON_TOL = 1e-10
SLOW, FAST = rf.SLOW, rf.FAST


@dataclass
class LocusPolyline:
    kind: str
    vertices: np.ndarray                  # (n, 2) states
    meta: dict = field(default_factory=dict)       # per-vertex arrays
    landmarks: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.vertices)

    @property
    def partner(self):
        return self.meta.get("partner")

    @property
    def sigma(self):
        return self.meta.get("sigma")


def _sigma_pair(M, N, p):
    dS = N - M
    dF = model.flux(N, p, check=False) - model.flux(M, p, check=False)
    den = float(dS @ dS)
    if den < 1e-28:
        return np.nan
    return float(dF @ dS) / den


# ---------------------------------------------------------------------------
# secondary bifurcation

def secondary_bifurcation(p: ModelParams = DEFAULT_PARAMS, n: int = 129) -> list:
    """The three straight segments E-W, G-D, O-B through the umbilic point."""
    ns = model.named_states(p)
    segs = [("sb-EW", ns.E, ns.W), ("sb-GD", ns.G, ns.D), ("sb-OB", ns.O, ns.B)]
    out = []
    for name, A, B in segs:
        ts = np.linspace(0.0, 1.0, n)[:, None]
        pts = A[None, :] * (1 - ts) + B[None, :] * ts
        out.append(LocusPolyline(name, pts,
                                 landmarks={"start": A.copy(), "end": B.copy()}))
    return out


# ---------------------------------------------------------------------------
# extension loci

def _solve_extension(N0, M, family, p, char_on, tol=NEWTON_TOL, iters=25):
    """Newton solve for the extension state N of base vertex M."""
    lamM = model.eigenvalues(M, p)[family]

    def res(N):
        r1 = hg.hug_value(N, M, p)
        sig = _sigma_pair(M, N, p)
        lam = lamM if char_on == "base" else model.eigenvalues(N, p)[family]
        return np.array([r1, sig - lam])

    N = np.array(N0, float)
    h = 1e-7
    for _ in range(iters):
        f = res(N)
        if not np.all(np.isfinite(f)):
            return None
        if np.max(np.abs(f)) < tol:
            return N
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            J[:, k] = (res(N + e) - res(N - e)) / (2 * h)
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            return None
        if np.linalg.norm(step) > 0.05:
            step = step / np.linalg.norm(step) * 0.05
        N = N - step
    return N if np.max(np.abs(res(N))) < 1e-8 else None


def _extension_seeds(M, family, p, char_on, exclude_radius=1e-3):
    """All extension states of a single base vertex, found on its traced
    Hugoniot locus by a sign scan of sigma - lambda_target."""
    locus = hg.trace_hugoniot(M, p, grid_n=512)
    lamM = model.eigenvalues(M, p)[family]
    seeds = []
    for br in list(locus.branches) + list(locus.special_lines):
        pts, sig = br.vertices, br.sigma
        if char_on == "base":
            vals = sig - lamM
        else:
            vals = sig - model.eigenvalues(pts, p)[:, family]
        for k in range(len(pts) - 1):
            a, b = vals[k], vals[k + 1]
            if not (np.isfinite(a) and np.isfinite(b)) or a * b >= 0:
                continue
            w = abs(a) / (abs(a) + abs(b))
            N0 = (1 - w) * pts[k] + w * pts[k + 1]
            N = _solve_extension(N0, M, family, p, char_on)
            if N is None or np.linalg.norm(N - M) < exclude_radius:
                continue
            if not model.in_triangle(N, tol=1e-9):
                continue
            if all(np.linalg.norm(N - S) > 1e-6 for S in seeds):
                seeds.append(N)
    return seeds


def resample_polyline(pts, ds):
    """Resample a polyline at uniform arclength spacing ds (endpoints kept)."""
    pts = np.asarray(pts, float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    L = np.concatenate([[0.0], np.cumsum(seg)])
    if L[-1] < ds:
        return pts.copy()
    n = max(int(np.ceil(L[-1] / ds)) + 1, 2)
    t = np.linspace(0.0, L[-1], n)
    return np.column_stack([np.interp(t, L, pts[:, k]) for k in range(2)])


def _step_extension(N, M_prev, M, family, p, char_on, depth=0):
    """Advance the extension state from base vertex M_prev to M, subdividing
    the base step when the extension moves too fast or Newton fails."""
    sol = _solve_extension(N, M, family, p, char_on)
    if sol is not None and np.linalg.norm(sol - N) <= 0.05:
        return sol
    if depth >= 6:
        return None
    mid = 0.5 * (M_prev + M)
    half = _step_extension(N, M_prev, mid, family, p, char_on, depth + 1)
    if half is None:
        return None
    return _step_extension(half, mid, M, family, p, char_on, depth + 1)


def _continue_along(base, anchor, seed, family, p, char_on):
    """Continue one extension seed from base[anchor] toward both base ends."""
    sols = {anchor: seed}
    for order in (range(anchor + 1, len(base)), range(anchor - 1, -1, -1)):
        N = seed
        prev = anchor
        for k in order:
            sol = _step_extension(N, base[prev], base[k], family, p, char_on)
            if sol is None or not model.in_triangle(sol, tol=1e-6):
                break
            sols[k] = sol
            N = sol
            prev = k
    if len(sols) < 2:
        return None
    ks = sorted(sols)
    # keep the maximal contiguous run containing the anchor
    runs, cur = [], [ks[0]]
    for a, b in zip(ks, ks[1:]):
        if b == a + 1:
            cur.append(b)
        else:
            runs.append(cur)
            cur = [b]
    runs.append(cur)
    run = next((r for r in runs if anchor in r), max(runs, key=len))
    if len(run) < 2:
        return None
    Ns = np.array([sols[k] for k in run])
    Ms = base[run[0]:run[-1] + 1]
    sigs = np.array([_sigma_pair(M, N, p) for M, N in zip(Ms, Ns)])
    return Ns, Ms, sigs


def extension_trace(base_vertices, family, p: ModelParams = DEFAULT_PARAMS,
                    char_on: str = "base", direction: str = "forward",
                    kind: str = "extension", ds: float | None = 0.005,
                    n_anchors: int = 9) -> list:
    """Trace the i-extension of a base polyline vertex-by-vertex.

    For each base vertex M the extension state N satisfies N in H(M) with
    sigma = lambda_i(M) (characteristic on the base) or sigma = lambda_i(N)
    (characteristic on itself).  Seeds are gathered from traced Hugoniot
    loci at several anchor vertices (extensions may start or stop anywhere
    along the base) and continued in both directions; gaps split the output.
    """
    base = np.asarray(base_vertices, float)
    if len(base) < 2:
        return []
    if ds is not None:
        base = resample_polyline(base, ds)
    anchors = sorted({int(k) for k in np.linspace(0, len(base) - 1, n_anchors)})
    out = []
    for anchor in anchors:
        for seed in _extension_seeds(base[anchor], family, p, char_on):
            if any(np.min(np.linalg.norm(pl.vertices - seed, axis=1)) < 1e-3
                   for pl in out):
                continue  # already on a traced branch
            res = _continue_along(base, anchor, seed, family, p, char_on)
            if res is None:
                continue
            Ns, Ms, sigs = res
            out.append(_make_ext_poly(kind, Ns, Ms, sigs,
                                      family, direction, char_on))
    # drop pieces mostly covered by a longer one (different anchors can
    # retrace the same branch with slightly shifted vertices)
    out.sort(key=len, reverse=True)
    kept = []
    for pl in out:
        covered = 0.0
        for q in kept:
            d = np.min(np.linalg.norm(
                pl.vertices[:, None, :] - q.vertices[None, :, :], axis=-1), axis=1)
            covered = max(covered, float(np.mean(d < 1e-3)))
        if covered < 0.6:
            kept.append(pl)
    return kept


def _make_ext_poly(kind, Ns, Ms, sigs, family, direction, char_on):
    return LocusPolyline(kind, np.array(Ns),
                         meta={"partner": np.array(Ms),
                               "sigma": np.array(sigs),
                               "family": family,
                               "direction": direction,
                               "char_on": char_on})


# ---------------------------------------------------------------------------
# double and mixed contact loci

def _contact_residual(X, fams, p):
    """3-residual of the (i,j)-contact system in X = (S, S')."""
    S, Sp = X[:2], X[2:]
    sig = _sigma_pair(S, Sp, p)
    lamS = model.eigenvalues(S, p)[fams[0]]
    lamSp = model.eigenvalues(Sp, p)[fams[1]]
    return np.array([hg.hug_value(Sp, S, p), lamS - sig, lamSp - sig])


def _contact_jac(X, fams, p, h=1e-7):
    J = np.empty((3, 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        J[:, k] = (_contact_residual(X + e, fams, p)
                   - _contact_residual(X - e, fams, p)) / (2 * h)
    return J


def _contact_correct(X, fams, p, tangent=None, X_pred=None,
                     tol=NEWTON_TOL, iters=20):
    """Newton-correct onto the contact manifold, optionally with the
    pseudo-arclength constraint tangent . (X - X_pred) = 0."""
    X = np.array(X, float)
    for _ in range(iters):
        r = _contact_residual(X, fams, p)
        J = _contact_jac(X, fams, p)
        if tangent is not None:
            r = np.append(r, tangent @ (X - X_pred))
            J = np.vstack([J, tangent])
            try:
                step = np.linalg.solve(J, r)
            except np.linalg.LinAlgError:
                return None
        else:
            step, *_ = np.linalg.lstsq(J, r, rcond=None)
        if not np.all(np.isfinite(step)):
            return None
        if np.linalg.norm(step) > 0.05:
            step = step / np.linalg.norm(step) * 0.05
        X = X - step
        if np.max(np.abs(_contact_residual(X, fams, p))) < tol:
            return X
    return None


def _contact_tangent(X, fams, p, prev=None):
    J = _contact_jac(X, fams, p)
    _, _, Vt = np.linalg.svd(J)
    t = Vt[-1]
    if prev is not None and t @ prev < 0:
        t = -t
    return t


def _level_curves(value_grid, xs, ys, level):
    from .contour import scalar_zero_contours
    # NaNs (outside the triangle) are filled above the level; spurious
    # boundary crossings are filtered by triangle membership downstream
    vals = np.where(np.isfinite(value_grid), value_grid - level, 1.0)
    return scalar_zero_contours(xs, ys, vals)


def _fixed_separation_correct(X0, fams, d, p, tol=NEWTON_TOL, iters=60):
    """Solve the contact system with the pair separation pinned to d.

    Appending |S - S'|^2 = d^2 makes the system square (4 equations, 4
    unknowns) and removes the trivial manifold S' -> S that plain
    least-squares corrections collapse onto.
    """
    X = np.array(X0, float)

    def res(X):
        r = _contact_residual(X, fams, p)
        c = (X[:2] - X[2:]) @ (X[:2] - X[2:]) - d * d
        return np.append(r, c)

    h = 1e-7
    for _ in range(iters):
        r = res(X)
        if not np.all(np.isfinite(r)):
            return None
        J = np.empty((4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            J[:, k] = (res(X + e) - res(X - e)) / (2 * h)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        if np.linalg.norm(step) > 0.02:
            step = step / np.linalg.norm(step) * 0.02
        X = X - step
        if np.max(np.abs(_contact_residual(X, fams, p))) < tol:
            return X
    return None


def _tangency_pair_seed(p, d=0.1):
    """Seed the (f, f) contact near the tangency point of the fast
    inflection locus.

    The contact pairs collapse onto that point, so a pair straddling it
    along the fast eigenvector at separation d is an excellent initial
    guess for the fixed-separation Newton solve.
    """
    infl = rf.inflection_locus(FAST, p, grid_n=192)
    Ppt = infl.landmarks.get("P")
    if Ppt is None:
        return None
    _, r = model.eigen_raw(Ppt, p)
    t = r[FAST]
    X0 = np.concatenate([Ppt + 0.5 * d * t, Ppt - 0.5 * d * t])
    sol = _fixed_separation_correct(X0, (FAST, FAST), d, p)
    if sol is None or np.linalg.norm(sol[:2] - sol[2:]) < 0.5 * d:
        return None
    if not (model.in_triangle(sol[:2]) and model.in_triangle(sol[2:])):
        return None
    return sol


def _umbilic_pair_seeds(fams, p, d=0.06):
    """Seed the (s, f) mixed contact near the umbilic point.

    The contact pairs collapse onto the umbilic point (where the two
    characteristic speeds coincide), so pairs straddling it at separation
    d seed the fixed-separation Newton solve.  Distinct solutions seed
    distinct pair families.
    """
    U = model.named_states(p).U
    sols = []
    for th in np.linspace(0.0, np.pi, 8, endpoint=False):
        u = np.array([np.cos(th), np.sin(th)])
        X0 = np.concatenate([U + 0.5 * d * u, U - 0.5 * d * u])
        sol = _fixed_separation_correct(X0, fams, d, p)
        if sol is None or np.linalg.norm(sol[:2] - sol[2:]) < 0.5 * d:
            continue
        if not (model.in_triangle(sol[:2]) and model.in_triangle(sol[2:])):
            continue
        if all(min(np.linalg.norm(sol - s), np.linalg.norm(
                np.concatenate([sol[2:], sol[:2]]) - s)) > 1e-3 for s in sols):
            sols.append(sol)
    return sols


def mixed_contact_trace(p: ModelParams = DEFAULT_PARAMS, step: float = 5e-3,
                        max_steps: int = 4000) -> list:
    """Trace all (s, f) mixed-contact pair families.

    Returns a list of (slow_side, fast_side) LocusPolyline pairs; the pair
    families collapse onto the umbilic point where the two characteristic
    speeds coincide.
    """
    out = []
    for seed in _umbilic_pair_seeds((SLOW, FAST), p):
        pair = double_contact_trace(p, fams=(SLOW, FAST), step=step,
                                    max_steps=max_steps, seed=seed)
        if pair[0] is not None:
            out.append(pair)
    return out


def _contact_seed(fams, p, grid_n=192, n_levels=6):
    """Search for one contact pair (S, S') by sweeping speed levels.

    Both states lie on level curves of their characteristic speed at the
    common value v; candidate pairs minimizing the RH residual are polished
    with the full Newton system.
    """
    xs = np.linspace(0.0, 1.0, grid_n)
    ys = np.linspace(0.0, 1.0, grid_n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    S = np.stack([X, Y], axis=-1)
    lam = model.eigenvalues(S, p)
    so = 1.0 - X - Y
    lam = np.where(so[..., None] < 0, np.nan, lam)
    F = model.flux(S, p, check=False)
    li, lj = lam[..., fams[0]], lam[..., fams[1]]
    vmin = max(np.nanmin(li), np.nanmin(lj))
    vmax = min(np.nanmax(li), np.nanmax(lj))
    for v in np.linspace(vmin + 0.25 * (vmax - vmin),
                         vmax - 0.25 * (vmax - vmin), n_levels):
        curves_i = [resample_polyline(c, 0.01)
                    for c in _level_curves(li, xs, ys, v)]
        curves_j = [resample_polyline(c, 0.01)
                    for c in _level_curves(lj, xs, ys, v)]
        best = None
        for ci in curves_i:
            ci = ci[model.in_triangle(ci, tol=1e-9)]
            for cj in curves_j:
                cj = cj[model.in_triangle(cj, tol=1e-9)]
                if not len(ci) or not len(cj):
                    continue
                Fi = model.flux(ci, p, check=False)
                Fj = model.flux(cj, p, check=False)
                dS = cj[None, :, :] - ci[:, None, :]
                dF = Fj[None, :, :] - Fi[:, None, :]
                res = np.linalg.norm(dF - v * dS, axis=-1)
                sep = np.linalg.norm(dS, axis=-1)
                res = np.where(sep < 0.05, np.inf, res)
                k = np.unravel_index(np.argmin(res), res.shape)
                if np.isfinite(res[k]) and (best is None or res[k] < best[0]):
                    best = (res[k], ci[k[0]], cj[k[1]])
        if best is not None and best[0] < 0.02:
            X0 = np.concatenate([best[1], best[2]])
            sol = _contact_correct_frozen(X0, fams, p)
            if sol is not None and np.linalg.norm(sol[:2] - sol[2:]) > 0.02:
                if model.in_triangle(sol[:2]) and model.in_triangle(sol[2:]):
                    return sol
    return None


def _contact_correct_frozen(X0, fams, p, tol=NEWTON_TOL, iters=30):
    """Polish a contact seed with one coordinate of S frozen.

    The full 3-equation system in 4 unknowns has the trivial manifold
    S = S' nearby which attracts unconstrained least-squares steps; fixing
    the S coordinate with the larger pair separation removes it.
    """
    X = np.array(X0, float)
    frozen = int(np.argmax(np.abs(X[:2] - X[2:])))
    free = [k for k in range(4) if k != frozen]
    h = 1e-7
    for _ in range(iters):
        r = _contact_residual(X, fams, p)
        if not np.all(np.isfinite(r)):
            return None
        if np.max(np.abs(r)) < tol:
            return X
        J = np.empty((3, 3))
        for c, k in enumerate(free):
            e = np.zeros(4)
            e[k] = h
            J[:, c] = (_contact_residual(X + e, fams, p)
                       - _contact_residual(X - e, fams, p)) / (2 * h)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        if np.linalg.norm(step) > 0.03:
            step = step / np.linalg.norm(step) * 0.03
        for c, k in enumerate(free):
            X[k] -= step[c]
    return None


def double_contact_trace(p: ModelParams = DEFAULT_PARAMS,
                         fams=(FAST, FAST), step: float = 5e-3,
                         max_steps: int = 4000, seed=None) -> tuple:
    """Trace the (i,j)-contact locus by pseudo-arclength continuation.

    Returns (S_side, S'_side) LocusPolyline pair with cross-linked partner
    states and per-vertex sigma.
    """
    if seed is None and fams == (FAST, FAST):
        seed = _tangency_pair_seed(p)
    if seed is None and set(fams) == {SLOW, FAST}:
        seeds = _umbilic_pair_seeds(fams, p)
        seed = seeds[0] if seeds else None
    if seed is None:
        seed = _contact_seed(fams, p)
    if seed is None:
        return None, None
    pts = [np.array(seed, float)]
    # walk both directions from the seed
    for direction in (+1.0, -1.0):
        X = pts[0] if direction > 0 else pts[0]
        t = _contact_tangent(X, fams, p) * direction
        h = step
        chain = []
        for _ in range(max_steps):
            Xp = X + h * t
            sol = _contact_correct(Xp, fams, p, tangent=t, X_pred=Xp)
            if sol is None:
                if h > step / 16:
                    h *= 0.5
                    continue
                break
            inside = (model.in_triangle(sol[:2], tol=1e-9)
                      and model.in_triangle(sol[2:], tol=1e-9))
            if not inside:
                break
            if np.linalg.norm(sol - pts[0]) < 0.75 * h and len(chain) > 5:
                break  # closed the loop
            t = _contact_tangent(sol, fams, p, prev=(sol - X) / np.linalg.norm(sol - X))
            X = sol
            chain.append(sol)
            if h < step:
                h = min(step, h * 2)
        if direction > 0:
            pts = pts + chain
        else:
            pts = chain[::-1] + pts
    arr = np.array(pts)
    name = "double-contact" if fams == (FAST, FAST) else "mixed-contact"
    sig = np.array([_sigma_pair(X[:2], X[2:], p) for X in arr])
    side_S = LocusPolyline(name, arr[:, :2],
                           meta={"partner": arr[:, 2:], "sigma": sig,
                                 "families": fams})
    side_Sp = LocusPolyline(name + "-prime", arr[:, 2:],
                            meta={"partner": arr[:, :2], "sigma": sig,
                                  "families": fams})
    return side_S, side_Sp


# ---------------------------------------------------------------------------
# tangential extension

def _inflection_tangent(S, family, p, h=1e-6):
    """Unit tangent of the family's inflection locus at a point on it."""
    S = np.asarray(S, float)
    _, r = model.eigen_raw(S, p)
    ref = r[family]

    def g(X):
        return rf.directional_speed_derivative(X, family, ref, p)

    grad = np.array([(g(S + [h, 0.0]) - g(S - [h, 0.0])) / (2 * h),
                     (g(S + [0.0, h]) - g(S - [0.0, h])) / (2 * h)])
    n = np.linalg.norm(grad)
    if n < 1e-14:
        return None
    return np.array([-grad[1], grad[0]]) / n


def _tangency_cross(M, N, tI, p):
    """Cross product of the Hugoniot tangent of H(M) at N with tI."""
    gH = hg.hug_gradient(N, M, p)
    n = np.linalg.norm(gH)
    if n < 1e-14:
        return np.nan
    tH = np.array([-gH[1], gH[0]]) / n
    return tH[0] * tI[1] - tH[1] * tI[0]


def _solve_tangential(M0, N, tI, p, tol=NEWTON_TOL, iters=25):
    """Newton-solve {hug(N; M) = 0, tangency cross = 0} for M."""
    M = np.array(M0, float)
    h = 1e-7

    def res(M):
        return np.array([hg.hug_value(N, M, p),
                         _tangency_cross(M, N, tI, p)])

    for _ in range(iters):
        r = res(M)
        if not np.all(np.isfinite(r)):
            return None
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            J[:, k] = (res(M + e) - res(M - e)) / (2 * h)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        sn = np.linalg.norm(step)
        if sn > 0.02:
            step = step / sn * 0.02
        M = M - step
        if np.max(np.abs(res(M))) < tol:
            return M
    return None


def _tangential_scan(N, tI, p, grid_n=512, exclude=1e-2):
    """All tangency states M on H(N) found by sign scan + Newton polish."""
    try:
        loc = hg.trace_hugoniot(N, p, grid_n=grid_n)
    except Exception:
        return []
    sols = []
    for b in loc.branches:
        V = b.vertices
        keep = np.linalg.norm(V - N, axis=1) > exclude
        vals = np.array([_tangency_cross(M, N, tI, p) if k else np.nan
                         for M, k in zip(V, keep)])
        for i in np.where(vals[:-1] * vals[1:] < 0)[0]:
            sol = _solve_tangential(0.5 * (V[i] + V[i + 1]), N, tI, p)
            if sol is None or not model.in_triangle(sol, tol=1e-9):
                continue
            if np.linalg.norm(sol - N) < exclude:
                continue
            if all(np.linalg.norm(sol - s) > 1e-4 for s in sols):
                sols.append(sol)
    return sols


def tangential_extension_trace(inflection, p: ModelParams = DEFAULT_PARAMS,
                               ds: float = 0.005, rescan_every: int = 20) -> list:
    """Trace the tangential extension of the slow inflection locus.

    For each N on the inflection, finds states M whose Hugoniot locus
    passes through N tangentially to the inflection.  Solutions are
    marched along the inflection with periodic rescans to pick up new
    branches; returns LocusPolylines of the M-projection labelled
    T_I1, T_I2, ... with partner states N.
    """
    segments = []
    for poly in inflection.polylines:
        V = resample_polyline(poly, ds)
        threads = []
        for k, N in enumerate(V):
            tI = _inflection_tangent(N, inflection.family, p)
            if tI is None:
                continue
            for th in threads:
                if not th["alive"]:
                    continue
                M = _solve_tangential(th["Ms"][-1], N, tI, p)
                if (M is None or not model.in_triangle(M, tol=1e-9)
                        or np.linalg.norm(M - th["Ms"][-1]) > 0.05):
                    th["alive"] = False
                    continue
                th["Ms"].append(M)
                th["Ns"].append(N)
            if k % rescan_every == 0:
                live = [th["Ms"][-1] for th in threads if th["alive"]]
                for sol in _tangential_scan(N, tI, p):
                    if all(np.linalg.norm(sol - M) > 1e-3 for M in live):
                        threads.append({"Ms": [sol], "Ns": [N], "k0": k,
                                        "alive": True})
                        live.append(sol)
        for th in threads:
            if len(th["Ms"]) < 3:
                continue
            # threads spawn at rescan vertices; walk backward to the true
            # start of the branch
            Ms, Ns = th["Ms"], th["Ns"]
            M = Ms[0]
            for k in range(th["k0"] - 1, -1, -1):
                tI = _inflection_tangent(V[k], inflection.family, p)
                if tI is None:
                    break
                sol = _solve_tangential(M, V[k], tI, p)
                if (sol is None or not model.in_triangle(sol, tol=1e-9)
                        or np.linalg.norm(sol - M) > 0.05):
                    break
                Ms.insert(0, sol)
                Ns.insert(0, V[k])
                M = sol
            segments.append((np.array(Ms), np.array(Ns)))
    segments.sort(key=lambda s: -len(s[0]))
    # drop segments mostly covered by an already-kept longer one (threads
    # spawned by rescans can shadow each other)
    kept = []
    for Ms, Ns in segments:
        covered = 0
        for Km, _ in kept:
            d = np.min(np.linalg.norm(Ms[:, None, :] - Km[None, :, :], axis=-1),
                       axis=1)
            covered = max(covered, float(np.mean(d < 3e-3)))
        if covered < 0.5:
            kept.append((Ms, Ns))
    segments = kept
    out = []
    for i, (Ms, Ns) in enumerate(segments):
        sig = np.array([_sigma_pair(M, N, p) for M, N in zip(Ms, Ns)])
        out.append(LocusPolyline(
            "tangential-extension", Ms,
            meta={"partner": Ns, "sigma": sig, "segment": "T_I%d" % (i + 1)}))
    return out


# ---------------------------------------------------------------------------
# atlas assembly

def _segment_intersection(A, B):
    """First intersection point of two polylines, or None."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    for i in range(len(A) - 1):
        p0, p1 = A[i], A[i + 1]
        d1 = p1 - p0
        for j in range(len(B) - 1):
            q0, q1 = B[j], B[j + 1]
            d2 = q1 - q0
            den = d1[0] * d2[1] - d1[1] * d2[0]
            if abs(den) < 1e-16:
                continue
            r = q0 - p0
            t = (r[0] * d2[1] - r[1] * d2[0]) / den
            u = (r[0] * d1[1] - r[1] * d1[0]) / den
            if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
                return p0 + t * d1
    return None


def _nearest_index(poly, S):
    return int(np.argmin(np.linalg.norm(np.asarray(poly) - np.asarray(S), axis=1)))


def _slice_between(poly, A, B, bridges=None):
    """Sub-polyline running from (the vertex nearest) A to B.

    Endpoints within 1e-3 of the targets are snapped onto them; farther
    targets are appended as a straight bridge whose length is recorded in
    `bridges` (regions may legitimately close through corner chords where
    a locus is truncated by grid resolution near a vertex of the
    triangle).
    """
    poly = np.asarray(poly, float)
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    i, j = _nearest_index(poly, A), _nearest_index(poly, B)
    if i <= j:
        part = poly[i:j + 1].copy()
    else:
        part = poly[j:i + 1][::-1].copy()
    if len(part) == 0:
        part = np.array([A, B], float)
    for end, target in ((0, A), (-1, B)):
        d = float(np.linalg.norm(part[end] - target))
        if d <= 1e-3:
            part[end] = target
        else:
            if bridges is not None:
                bridges.append(d)
            part = (np.vstack([target[None, :], part]) if end == 0
                    else np.vstack([part, target[None, :]]))
    return part


def _chain_pieces(pieces, tol=1e-4):
    """Concatenate boundary pieces head-to-tail, flipping as needed.

    Returns (closed polyline, max gap); gaps are bridged by the shared
    vertex so the output is always a closed loop.
    """
    chain = [np.asarray(pieces[0], float)]
    max_gap = 0.0
    for piece in pieces[1:]:
        piece = np.asarray(piece, float)
        end = chain[-1][-1]
        if np.linalg.norm(piece[-1] - end) < np.linalg.norm(piece[0] - end):
            piece = piece[::-1]
        max_gap = max(max_gap, float(np.linalg.norm(piece[0] - end)))
        chain.append(piece[1:] if np.linalg.norm(piece[0] - end) < 1e-12 else piece)
    out = np.vstack(chain)
    max_gap = max(max_gap, float(np.linalg.norm(out[-1] - out[0])))
    if np.linalg.norm(out[-1] - out[0]) > 1e-12:
        out = np.vstack([out, out[0]])
    return out, max_gap


@dataclass
class LocusAtlas:
    params: ModelParams
    settings: dict
    loci: dict                       # kind -> list of LocusPolyline
    landmarks: dict                  # name -> (2,) state
    regions: dict                    # name -> closed boundary polyline
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self):
        def arr(a):
            return np.asarray(a, float).tolist()
        return {
            "version": 1,
            "params": {"mu_w": self.params.mu_w, "mu_g": self.params.mu_g,
                       "mu_o": self.params.mu_o},
            "settings": dict(self.settings),
            "loci": {
                kind: [{
                    "kind": pl.kind,
                    "vertices": arr(pl.vertices),
                    "meta": {k: (arr(v) if isinstance(v, np.ndarray) else v)
                             for k, v in pl.meta.items()},
                    "landmarks": {k: arr(v) for k, v in pl.landmarks.items()},
                } for pl in pls]
                for kind, pls in self.loci.items()},
            "landmarks": {k: arr(v) for k, v in self.landmarks.items()},
            "regions": {k: arr(v) for k, v in self.regions.items()},
            "diagnostics": self.diagnostics,
        }

    def content_hash(self):
        import hashlib
        import json
        blob = json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _line_poly(A, B, n=65):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(A, float)[None, :] * (1 - t) + np.asarray(B, float)[None, :] * t


def tangency_rarefaction(p: ModelParams = DEFAULT_PARAMS) -> LocusPolyline:
    """The fast rarefaction segment from the tangency point P of the fast
    inflection locus up to its transversal crossing R_P of the other
    inflection branch.

    P lies on the inflection, so the integration is bootstrapped by a short
    explicit march along the oriented eigenvector field before handing off
    to the event-driven integrator.
    """
    infl = rf.inflection_locus(FAST, p, grid_n=192)
    Ppt = infl.landmarks["P"]
    _, r0 = model.eigen_raw(Ppt, p)
    ref = -r0[FAST]
    S = Ppt.copy()
    h = 1e-3
    traj = [Ppt.copy()]

    def ffield(X, ref):
        _, r = model.eigen_raw(X, p)
        v = r[FAST]
        return v if v @ ref >= 0 else -v

    for _ in range(5):
        k1 = ffield(S, ref)
        k2 = ffield(S + 0.5 * h * k1, k1)
        k3 = ffield(S + 0.5 * h * k2, k1)
        k4 = ffield(S + h * k3, k1)
        S = S + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ref = k1
        traj.append(S.copy())
    c = rf.integrate_rarefaction(S, FAST, "increasing", p)
    pts = np.vstack([np.array(traj), c.states[1:]])
    return LocusPolyline("f-rarefaction-P", pts,
                         landmarks={"P": Ppt, "R_P": pts[-1].copy()})


def build_locus_atlas(p: ModelParams = DEFAULT_PARAMS,
                      settings: dict | None = None) -> LocusAtlas:
    """Compute the full locus atlas: inflections, secondary bifurcation,
    double and mixed contacts, hysteresis loci, M_E, T_I, the derived
    extension segments, landmark states, and the assembled boundaries of
    the structure regions.
    """
    st = {"inflection_grid": 256, "ds": 0.005, "sb_n": 129}
    if settings:
        st.update(settings)
    ns = model.named_states(p)
    loci: dict = {}
    lm: dict = {}
    diag: dict = {}

    # inflection loci
    infl_f = rf.inflection_locus(FAST, p, grid_n=st["inflection_grid"])
    infl_s = rf.inflection_locus(SLOW, p, grid_n=st["inflection_grid"])
    loci["inflection-f"] = [LocusPolyline("inflection-f", q)
                            for q in infl_f.polylines]
    loci["inflection-s"] = [LocusPolyline("inflection-s", q)
                            for q in infl_s.polylines]
    lm.update({k: np.asarray(v, float) for k, v in infl_f.landmarks.items()})
    lm.update({k: np.asarray(v, float) for k, v in infl_s.landmarks.items()})
    for nm in ("U", "D", "E", "B", "G", "W", "O"):
        lm[nm] = getattr(ns, nm).copy()

    # secondary bifurcation
    loci["secondary-bifurcation"] = secondary_bifurcation(p, n=st["sb_n"])

    # (f,f) double contact; the S-side traverses C4 -> P -> C3
    dc_S, dc_Sp = double_contact_trace(p)
    loci["double-contact"] = [dc_S, dc_Sp] if dc_S is not None else []
    if dc_S is not None:
        V = dc_S.vertices
        sep = np.linalg.norm(V - dc_S.partner, axis=1)
        kP = int(np.argmin(sep))
        ends = [V[0], V[-1]]
        c3_first = ends[0][0] < ends[1][0]
        lm["C3"] = (ends[0] if c3_first else ends[1]).copy()
        lm["C4"] = (ends[1] if c3_first else ends[0]).copy()
        dc_C3P = V[:kP + 1][::-1] if c3_first else V[kP:]
        dc_S.landmarks.update({"C3": lm["C3"], "C4": lm["C4"],
                               "P": V[kP].copy()})
    else:
        dc_C3P = None
        diag["double-contact"] = "seeding failed"

    # mixed contact
    mc = mixed_contact_trace(p)
    loci["mixed-contact"] = [pl for pair in mc for pl in pair]
    for sS, sF in mc:
        VF, VS = sF.vertices, sS.vertices
        for end in (0, -1):
            Ef = VF[end]
            if Ef[0] < 5e-3:                      # fast side on edge G-O
                lm["K_E"], lm["K_E'"] = Ef.copy(), VS[end].copy()
            elif Ef[1] < 5e-3:                    # fast side on edge W-O
                lm["K_D"], lm["K_D'"] = Ef.copy(), VS[end].copy()

    # f-inflection segment U-P (base of the f-hysteresis)
    pl_P = min(infl_f.polylines,
               key=lambda q: np.min(np.linalg.norm(q - lm["P"], axis=1)))
    iU = _nearest_index(pl_P, ns.U)
    iP = _nearest_index(pl_P, lm["P"])
    lo, hi = min(iU, iP), max(iU, iP)
    UP = pl_P[lo:hi + 1]
    UP = np.vstack([ns.U, UP]) if iU <= iP else np.vstack([ns.U, UP[::-1]])
    loci["inflection-UP"] = [LocusPolyline("inflection-UP", UP)]

    # f-hysteresis: forward f-extensions of U-P characteristic on U-P
    fh = extension_trace(UP, FAST, p, char_on="base", kind="f-hysteresis",
                         ds=st["ds"])
    fh_PE0 = fh_PD0 = None
    for e in fh:
        ends = [e.vertices[0], e.vertices[-1]]
        if any(np.linalg.norm(E - lm["P"]) < 2e-3 for E in ends):
            if fh_PE0 is None or len(e) > len(fh_PE0):
                fh_PE0 = e
        d_gd = [abs(E[0] - ns.D[0] * (1 - E[1])) for E in ends]
        if min(d_gd) < 2e-3 and all(np.linalg.norm(E - lm["P"]) > 1e-2
                                    for E in ends):
            if fh_PD0 is None or len(e) > len(fh_PD0):
                fh_PD0 = e
    loci["f-hysteresis"] = [e for e in (fh_PE0, fh_PD0) if e is not None]
    if fh_PE0 is not None:
        ends = [fh_PE0.vertices[0], fh_PE0.vertices[-1]]
        lm["E0"] = max(ends, key=lambda E: np.linalg.norm(E - lm["P"])).copy()
        fh_PE0.landmarks.update({"P": lm["P"], "E0": lm["E0"]})
    if fh_PD0 is not None:
        ends = [fh_PD0.vertices[0], fh_PD0.vertices[-1]]
        d_gd = [abs(E[0] - ns.D[0] * (1 - E[1])) for E in ends]
        k0 = int(np.argmin(d_gd))
        lm["D0"] = ends[k0].copy()
        lm["P'"] = ends[1 - k0].copy()
        fh_PD0.landmarks.update({"D0": lm["D0"], "P'": lm["P'"]})

    # s-hysteresis and M_E from the main slow inflection branch
    Is_main = max(infl_s.polylines, key=len)
    sh = extension_trace(Is_main, SLOW, p, char_on="base",
                         kind="s-hysteresis", ds=st["ds"], n_anchors=17)
    sh = sorted(sh, key=len, reverse=True)[:2]
    sheet_G = sheet_W = None
    for e in sh:
        if e.vertices[:, 1].max() > 0.4:
            sheet_G = e
        else:
            sheet_W = e
    loci["s-hysteresis"] = [e for e in (sheet_G, sheet_W) if e is not None]
    me = extension_trace(Is_main, FAST, p, char_on="base", kind="M_E",
                         ds=st["ds"])
    me_main = max(me, key=len) if me else None
    loci["M_E"] = [me_main] if me_main is not None else []

    # tangential extension of the slow inflection
    loci["T_I"] = tangential_extension_trace(infl_s, p, ds=st["ds"])

    # f-rarefaction P-R_P and its forward composite R_P-P'
    rar = tangency_rarefaction(p)
    loci["f-rarefaction-P"] = [rar]
    lm["R_P"] = rar.landmarks["R_P"].copy()
    comp = extension_trace(rar.vertices, FAST, p, char_on="base",
                           kind="f-composite", ds=st["ds"])
    comp_main = None
    for e in comp:
        ends = [e.vertices[0], e.vertices[-1]]
        if any(np.linalg.norm(E - lm["R_P"]) < 2e-3 for E in ends):
            comp_main = e
            break
    loci["f-composite"] = [comp_main] if comp_main is not None else []

    # P'-C3': forward f-extension of the double contact segment C3-P
    pc3 = []
    if dc_C3P is not None:
        pc3 = extension_trace(dc_C3P, FAST, p, char_on="base",
                              kind="dc-extension", ds=st["ds"])
    ext_PC3 = None
    if "P'" in lm:
        for e in pc3:
            ends = [e.vertices[0], e.vertices[-1]]
            if any(np.linalg.norm(E - lm["P'"]) < 2e-3 for E in ends):
                ext_PC3 = e
                break
    loci["dc-extension"] = [ext_PC3] if ext_PC3 is not None else []
    if ext_PC3 is not None:
        ends = [ext_PC3.vertices[0], ext_PC3.vertices[-1]]
        lm["C3'"] = max(ends, key=lambda E: np.linalg.norm(E - lm["P'"])).copy()
        ext_PC3.landmarks.update({"P'": lm["P'"], "C3'": lm["C3'"]})

    # landmark intersections
    if sheet_W is not None and fh_PE0 is not None:
        H1 = _segment_intersection(sheet_W.vertices, fh_PE0.vertices)
        if H1 is not None:
            lm["H1"] = H1
    if sheet_G is not None and fh_PD0 is not None:
        H5 = _segment_intersection(sheet_G.vertices, fh_PD0.vertices)
        if H5 is not None:
            lm["H5"] = H5
    if sheet_W is not None:
        H3 = _segment_intersection(sheet_W.vertices, _line_poly(ns.U, ns.W, 257))
        if H3 is not None:
            lm["H3"] = H3
        # the sheet descends to the W-O edge; its terminal vertex projects
        # onto the edge at H4
        V = sheet_W.vertices
        k4 = int(np.argmin(V[:, 1]))
        lm["H4"] = np.array([V[k4][0], 0.0])
        diag["H4_gap"] = float(V[k4][1])
    if me_main is not None:
        for q in infl_f.polylines:
            J = _segment_intersection(me_main.vertices, q)
            if J is not None:
                lm["J"] = J
                break
        lm["M_E^a"] = me_main.vertices[0].copy()
        lm["M_E^d"] = me_main.vertices[-1].copy()
        if fh_PE0 is not None:
            Mb = _segment_intersection(me_main.vertices, fh_PE0.vertices)
            if Mb is not None:
                lm["M_E^b"] = Mb
        if fh_PD0 is not None:
            Mc = _segment_intersection(me_main.vertices, fh_PD0.vertices)
            if Mc is not None:
                lm["M_E^c"] = Mc

    # region boundaries
    regions: dict = {}
    gaps: dict = {}
    bridges: dict = {}

    def assemble(name, pieces, br):
        regions[name], g = _chain_pieces(pieces)
        gaps[name] = g
        bridges[name] = max(br) if br else 0.0

    try:
        br: list = []
        pieces = [
            _line_poly(ns.E, ns.U),
            _slice_between(UP, ns.U, lm["P"], br),
            _slice_between(rar.vertices, lm["P"], lm["R_P"], br),
            _slice_between(comp_main.vertices, lm["R_P"], lm["P'"], br),
            _slice_between(ext_PC3.vertices, lm["P'"], lm["C3'"], br),
            _line_poly(lm["C3'"], ns.E),
        ]
        assemble("Theta", pieces, br)
    except (KeyError, AttributeError, TypeError):
        diag["Theta"] = "missing pieces"
    try:
        br = []
        pieces = [
            _line_poly(ns.D, ns.U),
            _slice_between(UP, ns.U, lm["P"], br),
            _slice_between(fh_PE0.vertices, lm["P"], lm["H1"], br),
            _slice_between(sheet_W.vertices, lm["H1"], lm["H4"], br),
            _line_poly(lm["H4"], ns.D),
        ]
        assemble("Omega", pieces, br)
    except (KeyError, AttributeError, TypeError):
        diag["Omega"] = "missing pieces"
    try:
        br = []
        pieces = [
            _slice_between(rar.vertices, lm["P"], lm["R_P"], br),
            _slice_between(comp_main.vertices, lm["R_P"], lm["P'"], br),
            _slice_between(fh_PD0.vertices, lm["P'"], lm["H5"], br),
            _slice_between(sheet_G.vertices, lm["H5"], ns.G, br),
            _line_poly(ns.G, ns.W),
            _slice_between(sheet_W.vertices, ns.W, lm["H1"], br),
            _slice_between(fh_PE0.vertices, lm["H1"], lm["P"], br),
        ]
        assemble("Gamma", pieces, br)
    except (KeyError, AttributeError, TypeError):
        diag["Gamma"] = "missing pieces"
    diag["region_gaps"] = gaps
    diag["region_bridges"] = bridges

    return LocusAtlas(params=p, settings=st, loci=loci, landmarks=lm,
                      regions=regions, diagnostics=diag)
