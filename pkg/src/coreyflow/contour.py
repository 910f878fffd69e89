"""Marching-squares contouring helpers.

Two flavours: plain scalar fields (delegated to skimage) and eigenvector-based
fields like g = grad(lambda_i) . r_i whose sign is only defined up to the
orientation of r_i.  For the latter the corner values of every grid cell are
sign-aligned against one corner's eigenvector before extracting the zero
crossing, which keeps the contour well-defined without a global orientation.
"""

from __future__ import annotations

import numpy as np


def _chain_segments(segments, tol=1e-12):
    """Join a soup of 2-point segments into polylines by endpoint matching."""
    if not segments:
        return []
    key = lambda P: (round(P[0] / tol) if tol else P[0], round(P[1] / tol))
    # adjacency: endpoint key -> list of (segment index, end index)
    adj = {}
    for i, (a, b) in enumerate(segments):
        adj.setdefault(key(a), []).append((i, 0))
        adj.setdefault(key(b), []).append((i, 1))
    used = np.zeros(len(segments), bool)
    polylines = []
    for i0 in range(len(segments)):
        if used[i0]:
            continue
        used[i0] = True
        line = [np.asarray(segments[i0][0]), np.asarray(segments[i0][1])]
        # grow forward then backward
        for end in (1, 0):
            while True:
                k = key(line[-1 if end else 0])
                cands = [(j, e) for j, e in adj.get(k, []) if not used[j]]
                if not cands:
                    break
                j, e = cands[0]
                used[j] = True
                nxt = np.asarray(segments[j][1 - e])
                if end:
                    line.append(nxt)
                else:
                    line.insert(0, nxt)
        polylines.append(np.array(line))
    return polylines


def marching_squares_aligned(xs, ys, values, align):
    """Zero contour of an orientation-ambiguous field.

    values[i, j] is the field at (xs[i], ys[j]); align[i, j] a 2-vector whose
    sign fixes the local orientation.  NaNs mark cells to skip.  Returns a
    list of (n, 2) polylines in (x, y) coordinates.
    """
    values = np.asarray(values)
    segments = []
    nx, ny = values.shape
    for i in range(nx - 1):
        for j in range(ny - 1):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            v = np.empty(4)
            ref = align[i, j]
            ok = True
            for c, (a, b) in enumerate(corners):
                val = values[a, b]
                if not np.isfinite(val):
                    ok = False
                    break
                s = np.dot(align[a, b], ref)
                if abs(s) < 1e-12:
                    ok = False
                    break
                v[c] = val if s > 0 else -val
            if not ok or np.all(v > 0) or np.all(v < 0):
                continue
            pts = []
            P = [np.array([xs[i], ys[j]]), np.array([xs[i + 1], ys[j]]),
                 np.array([xs[i + 1], ys[j + 1]]), np.array([xs[i], ys[j + 1]])]
            for c in range(4):
                a, b = v[c], v[(c + 1) % 4]
                if (a > 0) != (b > 0):
                    t = a / (a - b)
                    pts.append(P[c] + t * (P[(c + 1) % 4] - P[c]))
            if len(pts) == 2:
                segments.append((pts[0], pts[1]))
            elif len(pts) == 4:
                # saddle cell: pair by shortest connections
                segments.append((pts[0], pts[1]))
                segments.append((pts[2], pts[3]))
    return _chain_segments(segments, tol=1e-9)


def scalar_zero_contours(xs, ys, values):
    """Zero contours of a plain scalar grid via skimage, in (x, y) coords."""
    from skimage import measure

    values = np.asarray(values, float)
    raw = measure.find_contours(values, 0.0)
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    out = []
    for c in raw:
        pts = np.column_stack([xs[0] + c[:, 0] * dx, ys[0] + c[:, 1] * dy])
        out.append(pts)
    return out


def refine_polyline(poly, residual_and_grad, tol=1e-10, max_iter=12):
    """Newton-polish each vertex along the residual gradient direction."""
    poly = np.array(poly, float)
    for k in range(len(poly)):
        S = poly[k]
        for _ in range(max_iter):
            r, g = residual_and_grad(S)
            gg = g @ g
            if not np.isfinite(r) or gg < 1e-20:
                break
            step = r / gg * g
            if np.linalg.norm(step) > 0.05:  # do not jump across cells
                break
            S = S - step
            if abs(r) < tol:
                break
        poly[k] = S
    return poly
