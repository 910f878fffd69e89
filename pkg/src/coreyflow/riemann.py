"""Riemann solutions by the wave-curve method.

The backward fast wave curve W_f(R) is assembled from generic rules:
rarefactions integrated until an inflection or the boundary, admissible
shock runs on the Hugoniot locus of R (with viscous-profile cutoffs),
characteristic take-offs at Bethe-Wendroff points, and composite segments
traced as forward extensions of rarefaction bases.  Every take-off state
on the curve is linked backward to the injection edge G-W through the slow
family; the Riemann solution is the speed-compatible intersection with
the prescribed left state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hugoniot as hg
from . import loci as lc
from . import model
from . import profiles as pf
from . import rarefaction as rf
from .model import DEFAULT_PARAMS, DomainError, ModelParams

SLOW, FAST = rf.SLOW, rf.FAST
CHAR_TOL = hg.CHAR_TOL
BOUNDARY_EPS = 2e-4       # region classification ambiguity band
EDGE_TOL = 1e-7           # membership of L on edge G-W
MATCH_TOL = 1e-7          # |L0 - L| accepted as an intersection
MERGE_TOL = 1e-5          # speed coincidence for triple-shock merging
COMPAT_TOL = 1e-6         # slack in v_se <= v_fb


class NoCompatibleSolution(Exception):
    """Raised when no speed-compatible assembly reaches L; carries the
    nearest-miss diagnostics."""

    def __init__(self, message, nearest=None):
        super().__init__(message)
        self.nearest = nearest or []


# ---------------------------------------------------------------------------
# domain types

@dataclass
class WaveSegment:
    """A parameterized piece of a wave curve, or a single wave of a solution.

    For wave-curve segments `states` are take-off states ordered so the last
    vertex is the end adjacent to the downstream structure; `tail` holds the
    fixed waves from that end to R.  For solution waves `states` is the
    traversal polyline (2 points for a shock) and `label` the shock label.
    """

    family: int
    kind: str                       # rarefaction | shock | composite
    states: np.ndarray
    speeds: np.ndarray
    partner: np.ndarray | None = None
    label: str | None = None
    labels: dict = field(default_factory=dict)
    tail: list = field(default_factory=list)
    base_index: int | None = None

    def __len__(self):
        return len(self.states)

    @property
    def v_begin(self):
        return float(self.speeds[0])

    @property
    def v_end(self):
        return float(self.speeds[-1])


@dataclass
class WaveGroup:
    family: str                     # "s" | "f" | "mixed"
    waves: list

    @property
    def v_begin(self):
        return self.waves[0].v_begin

    @property
    def v_end(self):
        return self.waves[-1].v_end


@dataclass
class RegionLabel:
    major: str                      # Lambda | Theta | Omega | Gamma
    sub: str = ""                   # e.g. "1b", "2e"
    ambiguous: bool = False
    candidates: list = field(default_factory=list)

    @property
    def code(self):
        return self.major + ("-" + self.sub if self.sub else "")

    def __str__(self):
        return self.code


@dataclass
class RiemannSolution:
    L: np.ndarray
    R: np.ndarray
    groups: list
    region: RegionLabel | None
    signature: str
    notes: dict = field(default_factory=dict)

    def to_json_dict(self):
        def st(a):
            return np.asarray(a, float).tolist()
        return {
            "L": model.state_to_json(self.L),
            "R": model.state_to_json(self.R),
            "region": (self.region.code if self.region else None),
            "groups": [{
                "family": g.family,
                "segments": [{
                    "kind": w.kind,
                    "family": "sf"[w.family] if w.kind == "rarefaction" else None,
                    "label": w.label,
                    "states": st(w.states),
                    "speeds": st(w.speeds),
                } for w in g.waves],
            } for g in self.groups],
            "signature": self.signature,
            "speeds": {
                "v_sb": self.groups[0].v_begin if self.groups else None,
                "v_se": self.groups[0].v_end if self.groups else None,
                "v_fb": self.groups[-1].v_begin if self.groups else None,
                "v_fe": self.groups[-1].v_end if self.groups else None,
            },
            "notes": self.notes,
        }


@dataclass
class WaveCurve:
    R: np.ndarray
    segments: list
    labels: dict
    locus: object


# ---------------------------------------------------------------------------
# small geometry helpers

def _dist_to_poly(S, poly):
    S = np.asarray(S, float)
    poly = np.asarray(poly, float)
    if len(poly) == 1:
        return float(np.linalg.norm(poly[0] - S))
    A, B = poly[:-1], poly[1:]
    AB = B - A
    t = np.clip(np.einsum("ij,ij->i", S - A, AB)
                / np.maximum(np.einsum("ij,ij->i", AB, AB), 1e-30), 0, 1)
    proj = A + t[:, None] * AB
    return float(np.min(np.linalg.norm(proj - S, axis=1)))


def _poly_crossing(poly, curve):
    """First intersection of two polylines, or None."""
    return lc._segment_intersection(poly, curve)


def _line_side(S, A, B):
    """Sign of the cross product (B-A) x (S-A)."""
    return float((B[0] - A[0]) * (S[1] - A[1]) - (B[1] - A[1]) * (S[0] - A[0]))


def _on_edge_gw(S, tol=EDGE_TOL):
    S = np.asarray(S, float)
    return abs(1.0 - S[0] - S[1]) <= tol


def _inflection_crossings(points, family, p):
    """Indices where the polyline crosses the inflection locus of `family`,
    detected as sign changes of grad(lambda) . r with r oriented
    continuously along the polyline."""
    points = np.asarray(points, float)
    if len(points) < 3:
        return []
    ref = points[1] - points[0]
    if np.linalg.norm(ref) < 1e-14:
        ref = np.array([1.0, 0.0])
    vals = []
    for S in points:
        try:
            v, _ = rf._oriented_r(S, family, ref, p)
        except Exception:
            vals.append(np.nan)
            continue
        g = model.lambda_gradients(S, p)[family]
        vals.append(float(np.dot(g, v)))
        ref = v
    vals = np.asarray(vals)
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out = []
    for k in range(len(vals) - 1):
        a, b = vals[k], vals[k + 1]
        if np.isfinite(a) and np.isfinite(b) and a * b < 0:
            w = abs(a) / (abs(a) + abs(b))
            S = (1 - w) * points[k] + w * points[k + 1]
            # the eigenstructure degenerates at the corners; skip artifacts
            if np.min(np.linalg.norm(corners - S, axis=1)) < 0.02:
                continue
            out.append((k + w, S))
    return out


# ---------------------------------------------------------------------------
# backward fast wave curve

def _raref_segment(S0, p, tail, labels=None, start_label=None):
    """Backward fast rarefaction from S0 (decreasing lambda_f), stored with
    the last vertex at S0 so traversal toward S0 has increasing speed."""
    c = rf.integrate_rarefaction(S0, FAST, "decreasing", p)
    if len(c.states) < 2:
        return None, c
    seg = WaveSegment(FAST, "rarefaction", c.states[::-1].copy(),
                      c.lambdas[::-1].copy(), tail=list(tail),
                      labels=dict(labels or {}))
    if start_label:
        seg.labels["end"] = start_label
    seg.labels["reason"] = c.reason
    return seg, c


def _shock_wave(M, N, sigma, label, family=FAST):
    return WaveSegment(family, "shock", np.array([M, N], float),
                       np.array([sigma, sigma], float), label=label)


def _raref_wave_from(base_seg, Y, p):
    """Solution rarefaction wave from state Y (on base_seg) to the segment's
    last vertex, following the stored polyline."""
    lamY = float(model.eigenvalues(Y, p)[FAST])
    lams = base_seg.speeds
    k = int(np.searchsorted(lams, lamY + 1e-12))
    pts = [np.asarray(Y, float)]
    sp = [lamY]
    if k < len(base_seg.states):
        pts.extend(base_seg.states[k:])
        sp.extend(base_seg.speeds[k:])
    if len(pts) < 2:
        return None
    return WaveSegment(FAST, "rarefaction", np.array(pts), np.array(sp))


def _lax_f_mask(verts, sigs, lamR, p):
    lamM = model.eigenvalues(verts, p)
    return ((sigs >= lamR[1] - 1e-9)
            & (sigs <= lamM[:, 1] + 1e-9)
            & (sigs >= lamM[:, 0] + 1e-9))


def _bisect_on_branch(A, B, R, p, fun, iters=60):
    """Bisection between neighbouring locus vertices, polished onto H(R)."""
    va = fun(A)
    for _ in range(iters):
        M = hg.polish_onto_locus(0.5 * (A + B), R, p)
        vm = fun(M)
        if va * vm <= 0:
            B = M
        else:
            A, va = M, vm
        if np.linalg.norm(A - B) < 1e-12:
            break
    return hg.polish_onto_locus(0.5 * (A + B), R, p)


def _admissibility_cut(verts, R, p):
    """Find the admissibility transition index range on a shock run.

    Returns (lo, hi, cut_state): the admissible part is verts[lo:hi], and
    cut_state is the polished boundary state when a transition exists."""
    n = len(verts)
    probes = sorted({max(1, n // 6), n // 2, min(n - 2, (5 * n) // 6)})
    adm = {}

    def check(k):
        if k not in adm:
            M = hg.polish_onto_locus(verts[k], R, p)
            if np.linalg.norm(M - R) < 5e-3:
                adm[k] = True
            else:
                try:
                    adm[k] = bool(pf.has_viscous_profile(M, R, p).admissible)
                except Exception:
                    adm[k] = True
        return adm[k]

    flags = [check(k) for k in probes]
    if all(flags):
        return 0, n, None
    if not any(flags):
        return 0, 0, None
    # one transition: bisect between the last admissible and first
    # inadmissible probe (in index order)
    ks = probes
    lo_k = None
    for a, b in zip(ks, ks[1:]):
        if adm[a] != adm[b]:
            lo_k, hi_k = a, b
            break
    while hi_k - lo_k > 1:
        mid = (lo_k + hi_k) // 2
        if check(mid) == adm[lo_k]:
            lo_k = mid
        else:
            hi_k = mid
    cut = hg.polish_onto_locus(0.5 * (verts[lo_k] + verts[hi_k]), R, p)
    if adm[ks[0]]:
        return 0, hi_k, cut
    return hi_k, n, cut


def _polish_cut_to_speed(C, inner, R, p, sig_star):
    """Relocate an admissibility-cut state along the locus so that
    sigma(cut; R) = sig_star (the equal-speed condition), by expanding a
    bracket from the grid-accurate cut and bisecting on the locus."""

    def f(M):
        return hg.shock_speed(R, M, p, check=False) - sig_star

    d = np.asarray(C, float) - np.asarray(inner, float)
    nd = np.linalg.norm(d)
    if nd < 1e-14:
        return np.asarray(C, float)
    d = d / nd
    A = hg.polish_onto_locus(C, R, p)
    fa = f(A)
    step = max(nd, 1e-4)
    B = None
    for _ in range(8):
        for sgn in (1.0, -1.0):
            cand = hg.polish_onto_locus(A + sgn * step * d, R, p)
            if f(cand) * fa < 0:
                B = cand
                break
        if B is not None:
            break
        step *= 2.0
    if B is None:
        return A
    for _ in range(80):
        Mid = hg.polish_onto_locus(0.5 * (A + B), R, p)
        fm = f(Mid)
        if abs(fm) <= 1e-12 or np.linalg.norm(A - B) < 1e-13:
            return Mid
        if fm * fa < 0:
            B = Mid
        else:
            A, fa = Mid, fm
    return hg.polish_onto_locus(0.5 * (A + B), R, p)


def _composite_runs(ext, p):
    """Split an extension polyline into valid composite runs: the jump
    M' -> M must be a compressive f-shock with sigma = lambda_f(M)."""
    Mp, M, sig = ext.vertices, ext.partner, ext.sigma
    lamp = model.eigenvalues(Mp, p)
    ok = ((lamp[:, 1] >= sig - 1e-9)
          & (lamp[:, 0] <= sig - 1e-9)
          & np.array([model.in_triangle(S, tol=1e-7) for S in Mp]))
    runs = []
    for a, b in hg._mask_runs(ok):
        if b - a >= 3:
            runs.append((a, b))
    return runs


def _composite_jump_admissible(Mp, Mb, sig, p):
    """Viscous admissibility of the right-characteristic jump M' -> M.

    M is a saddle-node of the traveling-wave field (sigma = lambda_f(M)),
    so convergence is only algebraic; accept when the orbit shot from M'
    approaches M instead of being captured elsewhere or leaving."""
    from scipy.integrate import solve_ivp
    Mp = np.asarray(Mp, float)
    Mb = np.asarray(Mb, float)

    def rhs(_t, S):
        return pf.tw_field(S, Mp, sig, p)

    def near(_t, S):
        return np.linalg.norm(S - Mb) - 1e-4
    near.terminal = True
    near.direction = -1

    def outside(_t, S):
        return min(S[0], S[1], 1 - S[0] - S[1]) + 0.05
    outside.terminal = True

    best = np.inf
    for v in pf._manifold_directions(Mp, sig, p, stable=False):
        for sgn in (1.0, -1.0):
            S0 = Mp + sgn * 1e-7 * v
            sol = solve_ivp(rhs, (0.0, 6000.0), S0, method="LSODA",
                            rtol=1e-9, atol=1e-11, events=[near, outside])
            if len(sol.t_events[0]):
                return True
            d = float(np.min(np.linalg.norm(sol.y.T - Mb, axis=1)))
            best = min(best, d)
    return best < 1e-3


def _solve_fold_dc(Mp0, base, k_near, p):
    """Solve the double-contact system with the base point confined to the
    base polyline: hug(M'; M(t)) = 0, sigma = lambda_f(M(t)) = lambda_f(M').

    The double contact is a fold of the extension map, so plain continuation
    stalls just short of it; this Newton lands exactly on (Q1', Q1)."""
    base = np.asarray(base, float)

    def Mt(t):
        t = min(max(t, 0.0), len(base) - 1.0)
        k = min(int(np.floor(t)), len(base) - 2)
        w = t - k
        return (1 - w) * base[k] + w * base[k + 1]

    def F(x):
        Mp = x[:2]
        M = Mt(x[2])
        sig = lc._sigma_pair(M, Mp, p)
        lam = model.eigenvalues(M, p)[1]
        lamp = model.eigenvalues(Mp, p)[1]
        return np.array([hg.hug_value(Mp, M, p), sig - lam, sig - lamp])

    x = np.array([Mp0[0], Mp0[1], float(k_near)])
    for _ in range(40):
        f = F(x)
        if np.max(np.abs(f)) < 1e-11:
            break
        J = np.empty((3, 3))
        for j in range(3):
            h = 1e-7 * max(1.0, abs(x[j]))
            e = np.zeros(3)
            e[j] = h
            J[:, j] = (F(x + e) - F(x - e)) / (2 * h)
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            return None
        n = np.linalg.norm(step[:2])
        if n > 0.05:
            step *= 0.05 / n
        x = x - step
    if np.max(np.abs(F(x))) > 1e-9:
        return None
    Mp = x[:2].copy()
    M = Mt(x[2])
    if not (model.in_triangle(Mp, tol=1e-9) and 0.0 <= x[2] <= len(base) - 1):
        return None
    return Mp, M


_WC_CACHE: dict = {}


def _wc_key(R, p):
    return (round(float(R[0]), 12), round(float(R[1]), 12),
            p.mu_w, p.mu_g, p.mu_o)


def backward_f_wave_curve(R, p: ModelParams = DEFAULT_PARAMS,
                          atlas=None) -> WaveCurve:
    """Assemble the backward fast wave curve W_f(R)."""
    R = np.asarray(R, float)
    model.require_in_triangle(R, 1e-9)
    key = _wc_key(R, p)
    if key in _WC_CACHE:
        return _WC_CACHE[key]

    segments: list = []
    labels: dict = {}
    lamR = model.eigenvalues(R, p)

    # 1. local backward rarefaction from R
    seg_down, c_down = _raref_segment(R, p, tail=[])
    if seg_down is None:
        raise DomainError("cannot start rarefaction at R (near-umbilic?)")
    seg_down.labels["end"] = "R"
    segments.append(seg_down)
    if c_down.reason == "inflection":
        labels["F"] = seg_down.states[0].copy()
        seg_down.labels["start"] = "F"

    # 2. admissible f-shock runs on H(R)
    locus = hg.trace_hugoniot(R, p)
    for br in locus.branches:
        verts, sigs = br.vertices, br.sigma
        mask = _lax_f_mask(verts, sigs, lamR, p)
        for a, b in hg._mask_runs(mask):
            if b - a < 3:
                continue
            run = verts[a:b].copy()
            rsig = sigs[a:b].copy()
            # polish characteristic endpoints
            ends = {}
            for side, k_in, k_out in ((0, a, a - 1), (-1, b - 1, b)):
                if k_out < 0 or k_out >= len(verts):
                    continue
                A, B = verts[k_in], verts[k_out]
                if min(np.linalg.norm(A - R), np.linalg.norm(B - R)) < 1e-6:
                    continue
                df = (lambda S: hg.shock_speed(R, S, p, check=False)
                      - model.eigenvalues(S, p)[1])
                db = (lambda S: hg.shock_speed(R, S, p, check=False)
                      - lamR[1])
                if df(A) * df(B) < 0:
                    E = _bisect_on_branch(A, B, R, p, df)
                    ends[side] = (E, "bw")
                elif db(A) * db(B) < 0:
                    E = _bisect_on_branch(A, B, R, p, db)
                    ends[side] = (E, "a3")
            for side, (E, knd) in ends.items():
                if side == 0:
                    run = np.vstack([E[None, :], run])
                    rsig = np.concatenate(
                        [[hg.shock_speed(R, E, p, check=False)], rsig])
                else:
                    run = np.vstack([run, E[None, :]])
                    rsig = np.concatenate(
                        [rsig, [hg.shock_speed(R, E, p, check=False)]])
            # viscous-profile admissibility
            lo, hi, cut = _admissibility_cut(run, R, p)
            if hi - lo < 3:
                continue
            seg = WaveSegment(FAST, "shock", run[lo:hi], rsig[lo:hi],
                              labels={"attached": br.attached})
            if cut is not None:
                nm = "A1'"
                labels[nm] = cut.copy()
                seg.labels["cut"] = nm
            segments.append(seg)
            # spawn rarefaction continuations at Bethe-Wendroff ends
            for side, (E, knd) in ends.items():
                if knd == "a3":
                    nm = "A3"
                    labels[nm] = E.copy()
                    seg.labels[{0: "start", -1: "end"}[side]] = nm
                    continue
                # only spawn if the BW end survived the admissibility cut
                kept = seg.states[0 if side == 0 else -1]
                if np.linalg.norm(kept - E) > 1e-6:
                    continue
                nm = "A1" if br.attached else "A2"
                if nm in labels:
                    nm = nm + "b"
                labels[nm] = E.copy()
                seg.labels[{0: "start", -1: "end"}[side]] = nm
                sigE = hg.shock_speed(R, E, p, check=False)
                tail = [_shock_wave(E, R, sigE, "'Sf")]
                sp, cc = _raref_segment(E, p, tail=tail)
                if sp is not None:
                    sp.labels["end"] = nm
                    if cc.reason == "inflection":
                        sp.labels["start"] = "F_" + nm
                        labels["F_" + nm] = sp.states[0].copy()
                    segments.append(sp)

    # polish the admissibility cut onto the equal-speed condition: the
    # viscous-profile transition happens exactly where sigma(M; R) equals
    # the speed of the saddle-node state A1
    if "A1'" in labels and "A1" in labels:
        sig_star = hg.shock_speed(R, labels["A1"], p, check=False)
        for seg in segments:
            if seg.kind != "shock" or seg.labels.get("cut") != "A1'":
                continue
            dists = [np.linalg.norm(seg.states[0] - labels["A1'"]),
                     np.linalg.norm(seg.states[-1] - labels["A1'"])]
            k = 0 if dists[0] < dists[1] else -1
            inner = seg.states[1] if k == 0 else seg.states[-2]
            Cn = _polish_cut_to_speed(labels["A1'"], inner, R, p, sig_star)
            labels["A1'"] = Cn.copy()
            seg.states[k] = Cn
            seg.speeds[k] = hg.shock_speed(R, Cn, p, check=False)

    # 3. composite segments: forward extensions of the rarefaction bases
    raref_idx = [i for i, s in enumerate(segments) if s.kind == "rarefaction"]
    for i in raref_idx:
        base_seg = segments[i]
        blen = float(np.sum(np.linalg.norm(np.diff(base_seg.states, axis=0),
                                           axis=1)))
        ds = max(min(0.005, blen / 150.0), 5e-4)
        exts = lc.extension_trace(base_seg.states, FAST, p, char_on="base",
                                  kind="f-wave-composite", ds=ds,
                                  n_anchors=7)
        for ext in exts:
            for a, b in _composite_runs(ext, p):
                Mp = ext.vertices[a:b].copy()
                Mb = ext.partner[a:b].copy()
                sg = ext.sigma[a:b].copy()
                seg = WaveSegment(FAST, "composite", Mp, sg, partner=Mb,
                                  base_index=i)
                # viscous admissibility of the leading jump (interior probes)
                n = len(Mp)
                probes = sorted({max(1, n // 4), n // 2,
                                 min(n - 2, (3 * n) // 4)})
                adm = [_composite_jump_admissible(Mp[k], Mb[k], sg[k], p)
                       for k in probes]
                if sum(adm) * 2 < len(adm):
                    continue
                # anchor analysis at both run ends
                anchored = False
                for side in (0, -1):
                    e_mp, e_m = Mp[side], Mb[side]
                    lam_mp = model.eigenvalues(e_mp, p)[1]
                    if np.linalg.norm(e_m - R) < 2e-3:
                        seg.labels["A3_end"] = side
                        anchored = True
                    elif np.linalg.norm(e_mp - e_m) < 3e-3:
                        seg.labels["F_end"] = side
                        anchored = True
                    else:
                        # near an admissibility cut of a shock run?
                        for s2 in segments:
                            if s2.kind != "shock":
                                continue
                            if min(np.linalg.norm(s2.states[0] - e_mp),
                                   np.linalg.norm(s2.states[-1] - e_mp)) < 3e-3:
                                seg.labels["cut_end"] = side
                                anchored = True
                                break
                        if "cut_end" in seg.labels or abs(
                                lam_mp - sg[side]) > 0.6:
                            continue
                        # double-contact end (a fold of the extension map):
                        # land on (Q1', Q1) and spawn the rarefaction from Q1'
                        kb = int(np.argmin(np.linalg.norm(
                            base_seg.states - e_m, axis=1)))
                        dc = _solve_fold_dc(e_mp, base_seg.states, kb, p)
                        if dc is None:
                            continue
                        Q1p, Q1 = dc
                        if np.linalg.norm(Q1 - e_m) > 0.05 \
                                or np.linalg.norm(Q1p - e_mp) > 0.15:
                            continue
                        Mp[side], Mb[side] = Q1p, Q1
                        sg[side] = lc._sigma_pair(Q1, Q1p, p)
                        seg.labels["Q_end"] = side
                        labels.setdefault("Q1'", Q1p.copy())
                        labels.setdefault("Q1", Q1.copy())
                        anchored = True
                        tail = ([_shock_wave(Q1p, Q1, sg[side], "'Sf'")]
                                + _tail_through(base_seg, Q1, p))
                        spq, _ = _raref_segment(Q1p, p, tail=tail)
                        if spq is not None:
                            spq.labels["end"] = "Q1'"
                            segments.append(spq)
                if not anchored:
                    continue
                if "Q_end" not in seg.labels and "A3_end" not in seg.labels \
                        and "F_end" not in seg.labels \
                        and "cut_end" not in seg.labels:
                    continue
                if "A3_end" not in seg.labels and "F_end" not in seg.labels \
                        and "cut_end" not in seg.labels:
                    # free far end: label as the secondary-bifurcation stop
                    labels.setdefault("Z2", Mp[0 if seg.labels.get("Q_end") != 0
                                               else -1].copy())
                segments.append(seg)

    wc = WaveCurve(R=R, segments=segments, labels=labels, locus=locus)
    _WC_CACHE[key] = wc
    return wc


def _tail_through(base_seg, Y, p):
    """Fixed waves from state Y on base_seg through its end and tail."""
    out = []
    w = _raref_wave_from(base_seg, Y, p)
    if w is not None and len(w.states) >= 2 \
            and w.speeds[-1] - w.speeds[0] > 1e-12:
        out.append(w)
    out.extend(base_seg.tail)
    return out


# ---------------------------------------------------------------------------
# backward slow link to the edge G-W

@dataclass
class SlowLink:
    ok: bool
    kind: str                  # edge | rarefaction | shock
    L0: np.ndarray | None
    v_se: float
    T: np.ndarray | None = None
    raref: object = None
    reason: str = ""


def _local_extension(X, lamX, p, hmax=0.04):
    """Small left-characteristic extension T of X on the slow-tangent
    Hugoniot branch through X.  Near a degenerate extension sigma - lambda_s
    has a double root at X and the global seed scan misses the nearby second
    root; march along the local branch and bisect instead."""
    try:
        _, r, _ = model.eigen_fields(X, p)
    except Exception:
        return None

    def fval(T):
        return lc._sigma_pair(T, X, p) - model.eigenvalues(T, p)[0]

    nrm = np.linalg.norm(r[SLOW])
    if not np.isfinite(nrm) or nrm < 1e-12:
        return None
    best = None
    for sgn in (1.0, -1.0):
        d = sgn * r[SLOW] / nrm
        prev_f, prev_T = None, None
        s = 1e-6
        while s < hmax:
            s *= 1.6
            try:
                T1 = hg.polish_onto_locus(X + s * d, X, p)
            except Exception:
                break
            if T1 is None or not model.in_triangle(T1, tol=1e-9) \
                    or np.linalg.norm(T1 - X) < 0.25 * s:
                break
            f = fval(T1)
            if not np.isfinite(f):
                break
            if prev_f is not None and prev_f * f < 0:
                a, fa, b = prev_T, prev_f, T1
                for _ in range(60):
                    try:
                        m = hg.polish_onto_locus(0.5 * (a + b), X, p)
                        fm = fval(m)
                    except Exception:
                        break
                    if not np.isfinite(fm):
                        break
                    if fa * fm <= 0:
                        b = m
                    else:
                        a, fa = m, fm
                T = 0.5 * (a + b)
                if _valid_T(T, X, lamX, p) and (
                        best is None or np.linalg.norm(T - X)
                        < np.linalg.norm(best - X)):
                    best = T
                break
            prev_f, prev_T = f, T1
    return best


def _slow_link(X, p, warm=None):
    X = np.asarray(X, float)
    if _on_edge_gw(X, 1e-9):
        return SlowLink(True, "edge", X.copy(),
                        float(model.eigenvalues(X, p)[0]))
    lamX = model.eigenvalues(X, p)
    # case A: the backward slow rarefaction reaches the edge directly
    try:
        c = rf.integrate_rarefaction(X, SLOW, "decreasing", p)
    except ValueError:
        c = None
    if c is not None and len(c.states) >= 2 and _on_edge_gw(c.states[-1], 1e-5):
        return SlowLink(True, "rarefaction", c.states[-1].copy(),
                        float(lamX[0]), raref=c)
    # case B: left-characteristic slow shock T -> X, then rarefaction from T
    T = None
    if warm is not None:
        T = lc._solve_extension(np.asarray(warm, float), X, SLOW, p, "self")
        if T is not None and not _valid_T(T, X, lamX, p):
            T = None
    if T is None:
        cands = [S for S in lc._extension_seeds(X, SLOW, p, "self")
                 if _valid_T(S, X, lamX, p)]
        if not cands:
            Tl = _local_extension(X, lamX, p)
            if Tl is not None:
                cands = [Tl]
        if not cands:
            return SlowLink(False, "shock", None, np.nan,
                            reason="no admissible extension")
        cands.sort(key=lambda S: np.linalg.norm(S - X))
        T = cands[0]
        if len(cands) > 1:
            for S in cands:
                try:
                    if pf.has_viscous_profile(S, X, p).admissible:
                        T = S
                        break
                except Exception:
                    continue
    if np.linalg.norm(T - X) < 1e-7:
        return SlowLink(True, "rarefaction", None, float(lamX[0]),
                        reason="degenerate extension")
    sig = lc._sigma_pair(T, X, p)
    try:
        c2 = rf.integrate_rarefaction(T, SLOW, "decreasing", p)
    except ValueError:
        return SlowLink(False, "shock", None, np.nan, T=T,
                        reason="rarefaction from T failed")
    if len(c2.states) < 2 or not _on_edge_gw(c2.states[-1], 1e-5):
        return SlowLink(False, "shock", None, np.nan, T=T,
                        reason="rarefaction from T misses edge G-W")
    return SlowLink(True, "shock", c2.states[-1].copy(), float(sig),
                    T=T, raref=c2)


def _valid_T(T, X, lamX, p):
    if not model.in_triangle(T, tol=1e-9):
        return False
    sig = lc._sigma_pair(T, X, p)
    if not np.isfinite(sig):
        return False
    # left-characteristic slow Lax shock: lambda_s(X) < sigma = lambda_s(T)
    # < lambda_f(X), and subcharacteristic on the right of T
    return (sig > lamX[0] - 1e-9 and sig < lamX[1] - 1e-9)


# ---------------------------------------------------------------------------
# take-off bookkeeping on the wave curve

def _takeoff_speed(seg, k):
    return float(seg.speeds[k])


def _sample_links(seg, p):
    """Cache slow links at subsampled take-off states of a segment."""
    if getattr(seg, "_links", None) is not None:
        return seg._links
    n = len(seg.states)
    ks = sorted({int(k) for k in np.linspace(0, n - 1, min(n, 41))})
    links = {}
    warm = None
    for k in ks:
        li = _slow_link(seg.states[k], p, warm=warm)
        links[k] = li
        if li.ok and li.T is not None:
            warm = li.T
        elif li.ok:
            warm = None
    seg._links = links
    return links


def _state_at(seg, t, R, p):
    """Interpolated (and polished) take-off state at fractional index t."""
    k = int(np.floor(t))
    k = min(max(k, 0), len(seg.states) - 2)
    w = t - k
    X = (1 - w) * seg.states[k] + w * seg.states[k + 1]
    if seg.kind == "shock":
        X = hg.polish_onto_locus(X, R, p)
        return X, None
    if seg.kind == "composite":
        Mb = (1 - w) * seg.partner[k] + w * seg.partner[k + 1]
        Xp = lc._solve_extension(X, Mb, FAST, p, "base")
        if Xp is not None:
            return Xp, Mb
        return X, Mb
    return X, None


def _match_segment(seg, L, R, p):
    """Take-off parameters on `seg` whose slow link lands on L."""
    target = float(L[0])
    links = _sample_links(seg, p)
    ks = sorted(links)
    vals = {k: (links[k].L0[0] - target if links[k].ok and links[k].L0
                is not None else np.nan) for k in ks}
    roots = []
    warm = {k: links[k].T for k in ks}

    def _bisect(a, b, va, la, wstart):
        lm = None
        for _ in range(60):
            m = 0.5 * (a + b)
            X, Mb = _state_at(seg, m, R, p)
            lm = _slow_link(X, p, warm=wstart)
            if not lm.ok or lm.L0 is None:
                # shrink toward the valid side
                b = m
                continue
            vm = lm.L0[0] - target
            if abs(vm) <= MATCH_TOL or abs(b - a) < 1e-9:
                break
            if va * vm <= 0:
                b = m
            else:
                a, va = m, vm
            if lm.T is not None:
                wstart = lm.T
        if lm is not None and lm.ok and lm.L0 is not None \
                and abs(lm.L0[0] - target) <= 1e-5:
            roots.append((0.5 * (a + b), lm))

    for ka, kb in zip(ks, ks[1:]):
        va, vb = vals[ka], vals[kb]
        if np.isfinite(va) != np.isfinite(vb):
            # the slow link is valid on only part of this span: locate the
            # validity boundary (cached per segment) and look for a root on
            # the valid side
            good = ka if np.isfinite(va) else kb
            cache = getattr(seg, "_vbnd", None)
            if cache is None:
                cache = seg._vbnd = {}
            if (ka, kb) not in cache:
                a, b = float(good), float(ka + kb - good)
                lb = links[good]
                wstart = warm.get(good)
                for _ in range(18):
                    m = 0.5 * (a + b)
                    X, _ = _state_at(seg, m, R, p)
                    lm = _slow_link(X, p, warm=wstart)
                    if lm.ok and lm.L0 is not None:
                        a, lb = m, lm
                        if lm.T is not None:
                            wstart = lm.T
                    else:
                        b = m
                cache[(ka, kb)] = (a, lb)
            t_b, lb = cache[(ka, kb)]
            vbnd = lb.L0[0] - target
            if abs(vbnd) <= MATCH_TOL:
                roots.append((t_b, lb))
            elif vals[good] * vbnd < 0:
                _bisect(float(good), t_b, vals[good], links[good],
                        warm.get(good))
            continue
        if not (np.isfinite(va) and np.isfinite(vb)):
            continue
        if abs(va) <= MATCH_TOL:
            roots.append((float(ka), links[ka]))
            continue
        if va * vb >= 0:
            continue
        wstart = warm.get(ka) if warm.get(ka) is not None else warm.get(kb)
        _bisect(float(ka), float(kb), va, links[ka], wstart)
    kb = ks[-1]
    if np.isfinite(vals[kb]) and abs(vals[kb]) <= MATCH_TOL:
        roots.append((float(kb), links[kb]))
    return roots


# ---------------------------------------------------------------------------
# solution assembly

def _slow_waves(L, link, p):
    if link.kind == "edge":
        return []
    waves = []
    if link.kind == "rarefaction":
        c = link.raref
        pts = c.states[::-1].copy()
        pts[0] = L
        lam = model.eigenvalues(pts, p)[:, 0]
        waves.append(WaveSegment(SLOW, "rarefaction", pts, lam))
        return waves
    # shock case: rarefaction L -> T then 'Ss T -> X
    c = link.raref
    pts = c.states[::-1].copy()
    pts[0] = L
    lam = model.eigenvalues(pts, p)[:, 0]
    if len(pts) >= 2 and np.linalg.norm(pts[-1] - pts[0]) > 1e-9:
        waves.append(WaveSegment(SLOW, "rarefaction", pts, lam))
    return waves


def _fast_waves(seg, t, X, Mb, wc, p):
    """Solution waves of the fast group for a take-off at (seg, t)."""
    if seg.kind == "rarefaction":
        w = _raref_wave_from(seg, X, p)
        out = []
        if w is not None and w.speeds[-1] - w.speeds[0] > 1e-10:
            out.append(w)
        out.extend(seg.tail)
        if not out:
            out.extend(seg.tail)
        return out, float(model.eigenvalues(X, p)[1])
    if seg.kind == "shock":
        sig = hg.shock_speed(wc.R, X, p, check=False)
        lamX = model.eigenvalues(X, p)
        lamR = model.eigenvalues(wc.R, p)
        left = "f" if abs(sig - lamX[1]) <= CHAR_TOL else None
        right = "f" if abs(sig - lamR[1]) <= CHAR_TOL else None
        label = ("'" if left else "") + "Sf" + ("'" if right else "")
        return [_shock_wave(X, wc.R, sig, label)], float(sig)
    # composite
    base = wc.segments[seg.base_index]
    sig = lc._sigma_pair(Mb, X, p)
    waves = [_shock_wave(X, Mb, sig, "Sf'")]
    waves.extend(_tail_through(base, Mb, p))
    return waves, float(sig)


def _merge_triple_shock(slow_waves, fast_waves, p):
    """At speed coincidence merge the adjacent slow and fast shocks into a
    single crossing shock (triple shock rule)."""
    if not slow_waves or not fast_waves:
        return None
    sw, fw = slow_waves[-1], fast_waves[0]
    if sw.kind != "shock" or fw.kind != "shock":
        return None
    if abs(sw.v_end - fw.v_begin) > MERGE_TOL:
        return None
    T = sw.states[0]
    N = fw.states[1]
    if hg.rh_residual(T, N, p) > 1e-6:
        return None
    sig = hg.shock_speed(T, N, p, check=False)
    cls = hg.classify_shock(T, N, p, char_tol=1e-5, sigma=sig)
    label = cls.label()
    merged = _shock_wave(T, N, sig, label, family=SLOW)
    merged.kind = "shock"
    return slow_waves[:-1] + [merged] + fast_waves[1:]


def _build_groups(slow_waves, fast_waves, merged):
    if merged is not None:
        return [WaveGroup("mixed", merged)]
    groups = []
    if slow_waves:
        groups.append(WaveGroup("s", slow_waves))
    if fast_waves:
        groups.append(WaveGroup("f", fast_waves))
    return groups


def _group_signature(groups):
    parts = []
    for g in groups:
        toks = []
        for w in g.waves:
            if w.kind == "rarefaction":
                toks.append("Rs" if w.family == SLOW else "Rf")
            else:
                toks.append(w.label or "S?")
        parts.append(" ".join(toks))
    return " | ".join(p for p in parts if p)


def solution_signature(sol: RiemannSolution) -> str:
    return _group_signature(sol.groups)


def solve_riemann(L, R, p: ModelParams = DEFAULT_PARAMS, atlas=None,
                  region: RegionLabel | None = None) -> RiemannSolution:
    """Solve the Riemann problem with L on edge G-W and R in the triangle."""
    L = np.asarray(L, float)
    R = np.asarray(R, float)
    model.require_in_triangle(L, 1e-9)
    model.require_in_triangle(R, 1e-9)
    if not _on_edge_gw(L, 1e-3):
        raise DomainError("unsupported-input: L must lie on edge G-W")
    notes: dict = {}
    if not _on_edge_gw(L, EDGE_TOL):
        L = np.array([L[0], 1.0 - L[0]])
        notes["projected_L"] = True
    if region is None and atlas is not None:
        region = classify_region(R, atlas, p)
    if region is not None and region.major == "Lambda":
        notes["flag"] = "unverified-region"
    if model.states_equal(L, R):
        return RiemannSolution(L, R, [], region, "", notes)

    wc = backward_f_wave_curve(R, p, atlas)
    candidates = []
    for si, seg in enumerate(wc.segments):
        for t, link in _match_segment(seg, L, R, p):
            X, Mb = _state_at(seg, t, R, p)
            if seg.kind == "composite" and Mb is None:
                continue
            fast, v_fb = _fast_waves(seg, t, X, Mb, wc, p)
            if not fast:
                continue
            slow = _slow_waves(L, link, p)
            if link.kind == "shock":
                slow.append(_shock_wave(link.T, X, link.v_se, "'Ss",
                                        family=SLOW))
            v_se = link.v_se if slow else float(model.eigenvalues(X, p)[0])
            candidates.append({
                "seg": si, "t": t, "X": X, "link": link,
                "slow": slow, "fast": fast,
                "v_se": float(v_se), "v_fb": float(v_fb),
                "compatible": v_se <= v_fb + COMPAT_TOL,
            })
    compat = [c for c in candidates if c["compatible"]]
    # deduplicate take-offs found on two adjacent segments
    kept = []
    for c in sorted(compat, key=lambda c: (c["seg"], c["t"])):
        if any(np.linalg.norm(c["X"] - k["X"]) < 1e-5 for k in kept):
            continue
        kept.append(c)
    if not kept:
        nearest = [{"segment": c["seg"], "v_se": c["v_se"], "v_fb": c["v_fb"]}
                   for c in candidates]
        raise NoCompatibleSolution(
            "no speed-compatible wave-curve intersection reaches L",
            nearest=nearest)
    primary = kept[0]
    if len(kept) > 1:
        notes["alternates"] = [
            {"segment": c["seg"],
             "signature": _group_signature(
                 _build_groups(c["slow"], c["fast"], None))}
            for c in kept[1:]]
    merged = _merge_triple_shock(primary["slow"], primary["fast"], p)
    groups = _build_groups(primary["slow"], primary["fast"], merged)
    sig = _group_signature(groups)
    notes["v_se"] = primary["v_se"]
    notes["v_fb"] = primary["v_fb"]
    return RiemannSolution(L, R, groups, region, sig, notes)


# ---------------------------------------------------------------------------
# forward slow wave curve (exposed surface)

def forward_s_wave_curve(L, p: ModelParams = DEFAULT_PARAMS, atlas=None):
    """W_s+(L) for L on the edge G-W: the slow rarefaction from L plus its
    left-characteristic shock continuations (backward s-extensions)."""
    L = np.asarray(L, float)
    if not _on_edge_gw(L, 1e-6):
        raise DomainError("unsupported-input: L must lie on edge G-W")
    c = rf.integrate_rarefaction(L, SLOW, "increasing", p)
    segs = [WaveSegment(SLOW, "rarefaction", c.states.copy(),
                        c.lambdas.copy(), labels={"reason": c.reason})]
    exts = lc.extension_trace(c.states, SLOW, p, char_on="base",
                              kind="s-forward-extension", ds=0.01,
                              n_anchors=7)
    for e in exts:
        lam = model.eigenvalues(e.vertices, p)
        ok = (lam[:, 0] < e.sigma - 1e-9) & (lam[:, 1] > e.sigma + 1e-9)
        for a, b in hg._mask_runs(ok):
            if b - a < 3:
                continue
            segs.append(WaveSegment(SLOW, "shock", e.vertices[a:b],
                                    e.sigma[a:b], partner=e.partner[a:b],
                                    label="'Ss"))
    return segs


# ---------------------------------------------------------------------------
# profile evaluation

def evaluate_profile(sol: RiemannSolution, xi):
    """Sample the self-similar solution at speeds xi = x/t."""
    xi = np.atleast_1d(np.asarray(xi, float))
    out = np.empty((len(xi), 2))
    out[:] = sol.L
    pieces = []       # (v0, v1, wave) in increasing speed order
    for g in sol.groups:
        for w in g.waves:
            pieces.append((w.v_begin, w.v_end, w))
    right = sol.R
    for i, x in enumerate(xi):
        S = sol.L
        placed = False
        for v0, v1, w in pieces:
            if x < v0 - 1e-14:
                out[i] = S
                placed = True
                break
            if w.kind == "rarefaction" and v0 - 1e-14 <= x <= v1 + 1e-14:
                out[i] = _fan_state(w, x)
                placed = True
                break
            S = w.states[-1]
        if not placed:
            out[i] = right if not pieces or x >= pieces[-1][1] - 1e-14 else S
    return out


def _fan_state(w, x, p: ModelParams = DEFAULT_PARAMS):
    lam = w.speeds
    pts = w.states
    x = min(max(x, lam[0]), lam[-1])
    S = np.array([np.interp(x, lam, pts[:, 0]), np.interp(x, lam, pts[:, 1])])
    ref = pts[-1] - pts[0]
    for _ in range(3):
        v, lmb = rf._oriented_r(S, w.family, ref, p)
        g = float(np.dot(model.lambda_gradients(S, p)[w.family], v))
        if abs(g) < 1e-12:
            break
        S = S + v * (x - lmb) / g
    return model.clip_to_triangle(S)


# ---------------------------------------------------------------------------
# region classification

def _region_path(poly):
    from matplotlib.path import Path
    return Path(np.asarray(poly, float))


def _mc_fast_side(atlas, corner):
    """Mixed-contact fast-side polyline whose edge landmark matches `corner`
    ('K_E' for the G-O side, 'K_D' for the W-O side)."""
    K = atlas.landmarks.get(corner)
    if K is None:
        return None
    best, dbest = None, np.inf
    for pl in atlas.loci.get("mixed-contact", []):
        d = _dist_to_poly(K, pl.vertices)
        if d < dbest:
            best, dbest = pl, d
    return best


def _k_point(atlas, corner=None):
    """Intersection of the mixed contact with the f-inflection segment U-P
    (unique; scan all traced mixed-contact pieces)."""
    up = atlas.loci["inflection-UP"][0].vertices
    for pl in atlas.loci.get("mixed-contact", []):
        x = _poly_crossing(pl.vertices, up)
        if x is not None:
            return x
    return None


def _arc_position(poly, S):
    """Arclength of the projection of S onto the polyline."""
    poly = np.asarray(poly, float)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    A, B = poly[:-1], poly[1:]
    AB = B - A
    t = np.clip(np.einsum("ij,ij->i", S - A, AB)
                / np.maximum(np.einsum("ij,ij->i", AB, AB), 1e-30), 0, 1)
    proj = A + t[:, None] * AB
    d = np.linalg.norm(proj - S, axis=1)
    k = int(np.argmin(d))
    return float(cum[k] + t[k] * seg[k])


def _theta_letter(R, atlas, p, raref_from, region12):
    """Subregion letter within Theta-1/2/3 (and the Omega-1 mirror)."""
    ns = model.named_states(p)
    c = rf.integrate_rarefaction(raref_from, FAST, "decreasing", p)
    mirror = region12.startswith("Omega")
    inv_end = ns.D if mirror else ns.E
    sb = lc._line_poly(inv_end, ns.W if not mirror else ns.G, 257)
    # the relevant invariant line is E-W for Theta, G-D for Omega
    sb = lc._line_poly(ns.E, ns.W, 257) if not mirror \
        else lc._line_poly(ns.G, ns.D, 257)
    crosses_sb = _poly_crossing(c.states, sb) is not None
    mc = _mc_fast_side(atlas, "K_D" if mirror else "K_E")
    crosses_mc = (mc is not None
                  and _poly_crossing(c.states, mc.vertices) is not None)
    if region12.endswith("1"):
        if crosses_sb:
            return "b" if crosses_mc else "a"
        up = atlas.loci["inflection-UP"][0].vertices
        K = _k_point(atlas, "K_D" if mirror else "K_E")
        F = c.states[-1]
        if K is not None and _arc_position(up, F) > _arc_position(up, K):
            return "e"
        return "d" if crosses_mc else "c"
    # Theta-2 / Theta-3 letters
    if crosses_sb:
        return "a"
    up = atlas.loci["inflection-UP"][0].vertices
    K = _k_point(atlas, "K_E")
    F = c.states[-1]
    if K is not None and _arc_position(up, F) > _arc_position(up, K):
        return "c"
    return "b"


def _find_bw_points(R, p, grid_n=512):
    """Bethe-Wendroff landmarks on H(R).

    Returns a dict with A1 (BW point of the f-shock run through R), A2 (BW
    point of the separate run), A1' (equal-speed state on the A2 run), and
    the oriented run polylines runA1 (R -> A1) and runA2 (A2 -> far end)."""
    locus = hg.trace_hugoniot(R, p, grid_n=grid_n)
    lamR = model.eigenvalues(R, p)
    out = {"locus": locus, "A1": None, "A2": None, "A1p": None,
           "runA1": None, "runA2": None}

    def df(S):
        return hg.shock_speed(R, S, p, check=False) \
            - model.eigenvalues(S, p)[1]

    for br in locus.branches:
        mask = _lax_f_mask(br.vertices, br.sigma, lamR, p)
        for a, b in hg._mask_runs(mask):
            if b - a < 3:
                continue
            verts = br.vertices[a:b]
            near_R = float(np.min(np.linalg.norm(verts - R, axis=1))) < 5e-3
            for k_in, k_out in ((a, a - 1), (b - 1, b)):
                if k_out < 0 or k_out >= len(br.vertices):
                    continue
                A, B = br.vertices[k_in], br.vertices[k_out]
                if min(np.linalg.norm(A - R), np.linalg.norm(B - R)) < 1e-6:
                    continue
                if df(A) * df(B) >= 0:
                    continue
                E = _bisect_on_branch(A, B, R, p, df)
                if near_R and out["A1"] is None:
                    out["A1"] = E
                    kR = int(np.argmin(np.linalg.norm(verts - R, axis=1)))
                    kE = 0 if k_in == a else len(verts) - 1
                    lo, hi = min(kR, kE), max(kR, kE)
                    run = verts[lo:hi + 1]
                    if kR > kE:
                        run = run[::-1]
                    out["runA1"] = np.vstack([run, E[None, :]])
                elif not near_R and out["A2"] is None:
                    out["A2"] = E
                    run = verts if k_in == a else verts[::-1]
                    out["runA2"] = np.vstack([E[None, :], run])
    if out["A1"] is not None and out["runA2"] is not None:
        sigA1 = hg.shock_speed(R, out["A1"], p, check=False)
        run = out["runA2"]
        sig = np.array([hg.shock_speed(R, S, p, check=False) for S in run])
        vals = sig - sigA1
        for k in range(len(vals) - 1):
            if vals[k] * vals[k + 1] < 0:
                out["A1p"] = _bisect_on_branch(
                    run[k], run[k + 1], R, p,
                    lambda S: hg.shock_speed(R, S, p, check=False) - sigA1)
                break
    return out


def _crossing_segments(chain_parts, p):
    """Where the wave curve crosses the slow inflection: list of part names."""
    names = []
    pts = []
    idx = []
    for name, part in chain_parts:
        for S in part:
            names.append(name)
            pts.append(S)
    pts = np.asarray(pts)
    hits = _inflection_crossings(pts, SLOW, p)
    return [names[int(k)] for k, _ in hits]


def _omega2_letter(R, atlas, p):
    bw = _find_bw_points(R, p)
    A1, A2, A1p = bw["A1"], bw["A2"], bw["A1p"]
    parts = []
    if A2 is not None:
        cW = rf.integrate_rarefaction(A2, FAST, "decreasing", p)
        parts.append(("raref", cW.states[::-1]))
        if A1p is not None:
            run = bw["runA2"]
            kA1p = int(np.argmin(np.linalg.norm(run - A1p, axis=1)))
            parts.append(("shock", run[:kA1p + 1]))
    hits = _crossing_segments(parts, p) if parts else []
    col = 0 if not hits else (1 if hits[0] == "shock" else 2)
    # row: the rarefaction through A1 either escapes past the mixed contact
    # or stops at the f-inflection on the U side / P side of K
    if A1 is None:
        return ("a", "b", "c")[col]
    cA1 = rf.integrate_rarefaction(A1, FAST, "decreasing", p)
    if cA1.reason != "inflection":
        return ("a", "b", "c")[col]
    K = _k_point(atlas)
    up = atlas.loci["inflection-UP"][0].vertices
    if K is not None and _arc_position(up, cA1.states[-1]) \
            < _arc_position(up, K):
        return ("d", "e", "f")[col]
    return ("g", "h", "i")[col]


def _gamma_letter(R, atlas, p, gamma1):
    bw = _find_bw_points(R, p)
    A1 = bw["A1"]
    if A1 is None:
        return ""
    cR = rf.integrate_rarefaction(R, FAST, "decreasing", p)
    cA1 = rf.integrate_rarefaction(A1, FAST, "decreasing", p)
    shock_run = bw["runA1"]
    # chain ordered from the G end to the W end
    if shock_run is None:
        shock_run = np.array([R, A1])          # oriented R -> A1
    if gamma1:
        parts = [("raref_G", cA1.states[::-1]),
                 ("shock", shock_run[::-1]),
                 ("raref_W", cR.states)]
    else:
        parts = [("raref_G", cR.states[::-1]),
                 ("shock", shock_run),
                 ("raref_W", cA1.states)]
    hits = _crossing_segments(parts, p)
    hits = [h for h in hits]
    if not hits:
        return "a"
    pair = (hits[0], hits[-1])
    if gamma1:
        table = {("shock", "shock"): "b",
                 ("shock", "raref_W"): "c",
                 ("raref_W", "raref_W"): "d",
                 ("raref_G", "shock"): "e",
                 ("raref_G", "raref_W"): "f"}
    else:
        table = {("shock", "shock"): "b",
                 ("shock", "raref_W"): "c",
                 ("raref_W", "raref_W"): "d",
                 ("raref_G", "raref_W"): "e",
                 ("raref_G", "shock"): "e"}
    return table.get(pair, "")


def _classify_core(R, atlas, p):
    ns = model.named_states(p)
    lam_quad = np.array([ns.O, ns.E, ns.U, ns.D, ns.O])
    if _region_path(lam_quad).contains_point(R):
        return RegionLabel("Lambda")
    major = None
    for name in ("Theta", "Omega", "Gamma"):
        poly = atlas.regions.get(name)
        if poly is not None and _region_path(poly).contains_point(R):
            major = name
            break
    if major is None:
        dists = {name: _dist_to_poly(R, poly)
                 for name, poly in atlas.regions.items()}
        dists["Lambda"] = _dist_to_poly(R, lam_quad)
        major = min(dists, key=dists.get)
        if major == "Lambda":
            return RegionLabel("Lambda")
    lm = atlas.landmarks
    if major == "Theta":
        theta2 = _subregion_poly_theta2(atlas, p)
        theta3 = _subregion_poly_theta3(atlas, p)
        if theta3 is not None and _region_path(theta3).contains_point(R):
            A1 = _find_bw_points(R, p)["A1"]
            letter = _theta_letter(R, atlas, p, A1 if A1 is not None else R,
                                   "Theta3")
            return RegionLabel("Theta", "3" + letter)
        if theta2 is not None and _region_path(theta2).contains_point(R):
            letter = _theta_letter(R, atlas, p, R, "Theta2")
            return RegionLabel("Theta", "2" + letter)
        letter = _theta_letter(R, atlas, p, R, "Theta1")
        return RegionLabel("Theta", "1" + letter)
    if major == "Omega":
        omega2 = _subregion_poly_omega2(atlas, p)
        if omega2 is not None and _region_path(omega2).contains_point(R):
            return RegionLabel("Omega", "2" + _omega2_letter(R, atlas, p))
        return RegionLabel("Omega",
                           "1" + _theta_letter(R, atlas, p, R, "Omega1"))
    # Gamma: split by the f-inflection branch R_P - I_B
    gamma2 = _subregion_poly_gamma2(atlas, p)
    g1 = not (gamma2 is not None and _region_path(gamma2).contains_point(R))
    sub = ("1" if g1 else "2") + _gamma_letter(R, atlas, p, g1)
    return RegionLabel("Gamma", sub)


def _slice(atlas_poly, A, B):
    return lc._slice_between(np.asarray(atlas_poly, float),
                             np.asarray(A, float), np.asarray(B, float))


def _infl_branch_through(atlas, *points):
    best, dbest = None, np.inf
    for pl in atlas.loci["inflection-f"]:
        d = max(_dist_to_poly(P, pl.vertices) for P in points)
        if d < dbest:
            best, dbest = pl, d
    return best


def _subregion_poly_theta2(atlas, p):
    lm = atlas.landmarks
    try:
        dc = atlas.loci["double-contact"][0].vertices
        rarP = atlas.loci["f-rarefaction-P"][0].vertices
        infl = _infl_branch_through(atlas, lm["R_P"], lm["I_E"]).vertices
        pieces = [_slice(dc, lm["C3"], lm["P"]),
                  _slice(rarP, lm["P"], lm["R_P"]),
                  _slice(infl, lm["R_P"], lm["I_E"]),
                  lc._line_poly(lm["I_E"], lm["C3"])]
        poly, _ = lc._chain_pieces(pieces)
        return poly
    except (KeyError, IndexError, AttributeError):
        return None


def _subregion_poly_theta3(atlas, p):
    lm = atlas.landmarks
    try:
        infl = _infl_branch_through(atlas, lm["R_P"], lm["I_E"]).vertices
        comp = atlas.loci["f-composite"][0].vertices
        dce = atlas.loci["dc-extension"][0].vertices
        pieces = [_slice(infl, lm["I_E"], lm["R_P"]),
                  _slice(comp, lm["R_P"], lm["P'"]),
                  _slice(dce, lm["P'"], lm["C3'"]),
                  lc._line_poly(lm["C3'"], lm["I_E"])]
        poly, _ = lc._chain_pieces(pieces)
        return poly
    except (KeyError, IndexError, AttributeError):
        return None


def _subregion_poly_omega2(atlas, p):
    lm = atlas.landmarks
    try:
        infl = _infl_branch_through(atlas, lm["P"], lm["I_D"]).vertices
        fh = None
        for e in atlas.loci["f-hysteresis"]:
            if _dist_to_poly(lm["E0"], e.vertices) < 1e-2:
                fh = e.vertices
        sh = None
        for e in atlas.loci["s-hysteresis"]:
            if _dist_to_poly(lm["H4"], e.vertices) < 2e-2:
                sh = e.vertices
        pieces = [_slice(infl, lm["I_D"], lm["P"]),
                  _slice(fh, lm["P"], lm["H1"]),
                  _slice(sh, lm["H1"], lm["H4"]),
                  lc._line_poly(lm["H4"], lm["I_D"])]
        poly, _ = lc._chain_pieces(pieces)
        return poly
    except (KeyError, IndexError, AttributeError, TypeError):
        return None


def _subregion_poly_gamma2(atlas, p):
    lm = atlas.landmarks
    ns = model.named_states(p)
    try:
        infl = _infl_branch_through(atlas, lm["R_P"], lm["I_B"]).vertices
        comp = atlas.loci["f-composite"][0].vertices
        fh = None
        for e in atlas.loci["f-hysteresis"]:
            if _dist_to_poly(lm["D0"], e.vertices) < 1e-2:
                fh = e.vertices
        sh = None
        for e in atlas.loci["s-hysteresis"]:
            if _dist_to_poly(lm["H5"], e.vertices) < 2e-2:
                sh = e.vertices
        end_g = sh[np.argmin(np.linalg.norm(
            sh - np.asarray(ns.G)[None, :], axis=1))]
        pieces = [_slice(comp, lm["R_P"], lm["P'"]),
                  _slice(fh, lm["P'"], lm["H5"]),
                  _slice(sh, lm["H5"], end_g),
                  lc._line_poly(end_g, ns.G, 9),
                  lc._line_poly(ns.G, lm["I_B"]),
                  _slice(infl, lm["I_B"], lm["R_P"])]
        poly, _ = lc._chain_pieces(pieces)
        return poly
    except (KeyError, IndexError, AttributeError, TypeError):
        return None


def classify_region(R, atlas, p: ModelParams = DEFAULT_PARAMS) -> RegionLabel:
    """Deterministic region/subregion label of R, with a boundary-ambiguity
    flag within BOUNDARY_EPS of any major-region boundary."""
    R = np.asarray(R, float)
    model.require_in_triangle(R, 1e-9)
    label = _classify_core(R, atlas, p)
    ns = model.named_states(p)
    dmin = np.inf
    for poly in atlas.regions.values():
        dmin = min(dmin, _dist_to_poly(R, poly))
    dmin = min(dmin, _dist_to_poly(
        R, np.array([ns.O, ns.E, ns.U, ns.D, ns.O])))
    if dmin <= BOUNDARY_EPS:
        label.ambiguous = True
        cands = {label.code}
        for dx in (-1.5 * BOUNDARY_EPS, 1.5 * BOUNDARY_EPS):
            for dy in (-1.5 * BOUNDARY_EPS, 1.5 * BOUNDARY_EPS):
                Rn = model.clip_to_triangle(R + np.array([dx, dy]))
                try:
                    cands.add(_classify_core(Rn, atlas, p).code)
                except Exception:
                    pass
        label.candidates = sorted(cands)
    else:
        label.candidates = [label.code]
    return label
