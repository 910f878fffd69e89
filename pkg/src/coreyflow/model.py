"""Corey-type three-phase flux model: fluxes, derivatives, eigen-structure,
named states and viscosity-ratio diagnostics.

States are numpy arrays (s_w, s_g); the oil saturation is s_o = 1 - s_w - s_g.
All operations accept arrays of shape (..., 2) and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_EPS = 1e-9          # absolute tolerance for state equality / membership
UMBILIC_RADIUS = 1e-6     # pointwise eigenvectors unreliable inside this ball


class DomainError(ValueError):
    """Raised for states outside the closed saturation triangle."""


@dataclass(frozen=True)
class ModelParams:
    """Phase viscosities (only ratios matter)."""

    mu_w: float = 1.0
    mu_o: float = 9.5
    mu_g: float = 0.45

    def __post_init__(self):
        if not (self.mu_w > 0 and self.mu_o > 0 and self.mu_g > 0):
            raise ValueError("viscosities must be strictly positive")

    @property
    def r_w(self) -> float:
        return self.mu_w / self.mu_o

    @property
    def r_g(self) -> float:
        return self.mu_g / self.mu_o

    @property
    def mu_tot(self) -> float:
        return self.mu_w + self.mu_o + self.mu_g

    def to_json(self) -> dict:
        return {"mu_w": self.mu_w, "mu_o": self.mu_o, "mu_g": self.mu_g}

    @classmethod
    def from_json(cls, d: dict) -> "ModelParams":
        return cls(float(d["mu_w"]), float(d["mu_o"]), float(d["mu_g"]))


DEFAULT_PARAMS = ModelParams()


# ---------------------------------------------------------------------------
# geometry helpers

def state(sw, sg) -> np.ndarray:
    return np.array([float(sw), float(sg)])


def s_o(S) -> np.ndarray:
    S = np.asarray(S, float)
    return 1.0 - S[..., 0] - S[..., 1]


def in_triangle(S, tol: float = STATE_EPS):
    S = np.asarray(S, float)
    return (S[..., 0] >= -tol) & (S[..., 1] >= -tol) & (s_o(S) >= -tol)


def require_in_triangle(S, tol: float = STATE_EPS):
    if not np.all(in_triangle(S, tol)):
        raise DomainError(f"state outside saturation triangle: {np.asarray(S)}")


def clip_to_triangle(S) -> np.ndarray:
    """Project slightly-outside states back onto the closed triangle."""
    S = np.array(S, float)
    S[..., 0] = np.clip(S[..., 0], 0.0, 1.0)
    S[..., 1] = np.clip(S[..., 1], 0.0, 1.0)
    over = S[..., 0] + S[..., 1] - 1.0
    mask = over > 0
    if np.any(mask):
        S[..., 0] = np.where(mask, S[..., 0] - over / 2, S[..., 0])
        S[..., 1] = np.where(mask, S[..., 1] - over / 2, S[..., 1])
    return S


def states_equal(A, B, tol: float = STATE_EPS) -> bool:
    return bool(np.max(np.abs(np.asarray(A, float) - np.asarray(B, float))) <= tol)


# ---------------------------------------------------------------------------
# named states

@dataclass(frozen=True)
class NamedStates:
    G: np.ndarray
    W: np.ndarray
    O: np.ndarray
    B: np.ndarray
    D: np.ndarray
    E: np.ndarray
    U: np.ndarray
    D0: np.ndarray
    E0: np.ndarray

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in "G W O B D E U D0 E0".split()}


def named_states(p: ModelParams = DEFAULT_PARAMS) -> NamedStates:
    mw, mo, mg = p.mu_w, p.mu_o, p.mu_g
    return NamedStates(
        G=state(0, 1),
        W=state(1, 0),
        O=state(0, 0),
        B=state(mw / (mw + mg), mg / (mw + mg)),       # on edge G-W
        D=state(mw / (mw + mo), 0),                    # on edge W-O
        E=state(0, mg / (mg + mo)),                    # on edge G-O
        U=state(mw / p.mu_tot, mg / p.mu_tot),         # umbilic point
        D0=state(mw / (2 * (mw + mo)), 0.5),           # on G-D with s_g = 1/2
        E0=state(0.5, mg / (2 * (mg + mo))),           # on W-E with s_w = 1/2
    )


def classical_inequalities(p: ModelParams = DEFAULT_PARAMS) -> dict:
    """Quotients (R-)^2 / R+ for the go and wo ratio pairs; classical waves
    prevail when both are >= 8."""
    rw, rg = p.r_w, p.r_g
    q_go = ((rg - 1.0) / rw) ** 2 / ((rg + 1.0) / rw)
    q_wo = ((rw - 1.0) / rg) ** 2 / ((rw + 1.0) / rg)
    return {
        "q_go": q_go,
        "q_wo": q_wo,
        "classical": bool(q_go >= 8.0 and q_wo >= 8.0),
    }


# ---------------------------------------------------------------------------
# flux and derivatives

def _mobilities(S, p):
    S = np.asarray(S, float)
    sw, sg = S[..., 0], S[..., 1]
    so = 1.0 - sw - sg
    aw = sw * sw / p.mu_w
    ao = so * so / p.mu_o
    ag = sg * sg / p.mu_g
    return sw, sg, so, aw, ao, ag, aw + ao + ag


def flux(S, p: ModelParams = DEFAULT_PARAMS, check: bool = True) -> np.ndarray:
    """Fractional flow F(S) = (f_w, f_g)."""
    if check:
        require_in_triangle(S, 1e-7)
    _, _, _, aw, ao, ag, D = _mobilities(S, p)
    return np.stack([aw / D, ag / D], axis=-1)


def jacobian(S, p: ModelParams = DEFAULT_PARAMS, check: bool = True) -> np.ndarray:
    """dF/dS, shape (..., 2, 2); closed form via the quotient rule."""
    if check:
        require_in_triangle(S, 1e-7)
    sw, sg, so, aw, ao, ag, D = _mobilities(S, p)
    # gradients of the mobilities w.r.t. (s_w, s_g); note ds_o = -(dsw + dsg)
    gaw = np.stack([2 * sw / p.mu_w, np.zeros_like(sw)], axis=-1)
    gao = np.stack([-2 * so / p.mu_o, -2 * so / p.mu_o], axis=-1)
    gag = np.stack([np.zeros_like(sg), 2 * sg / p.mu_g], axis=-1)
    gD = gaw + gao + gag
    D = D[..., None]
    row_w = (gaw * D - aw[..., None] * gD) / D**2
    row_g = (gag * D - ag[..., None] * gD) / D**2
    return np.stack([row_w, row_g], axis=-2)


def hessian(S, p: ModelParams = DEFAULT_PARAMS) -> np.ndarray:
    """Second derivatives H[..., k, i, j] = d^2 f_k / ds_i ds_j (k: w, g)."""
    sw, sg, so, aw, ao, ag, D = _mobilities(S, p)
    z = np.zeros_like(sw)
    gaw = np.stack([2 * sw / p.mu_w, z], axis=-1)
    gao = np.stack([-2 * so / p.mu_o, -2 * so / p.mu_o], axis=-1)
    gag = np.stack([z, 2 * sg / p.mu_g], axis=-1)
    gD = gaw + gao + gag
    one = np.ones_like(sw)
    Hw = np.stack([np.stack([2 * one / p.mu_w, z], -1), np.stack([z, z], -1)], -2)
    Hg = np.stack([np.stack([z, z], -1), np.stack([z, 2 * one / p.mu_g], -1)], -2)
    Ho = (2.0 / p.mu_o) * np.stack([np.stack([one, one], -1),
                                    np.stack([one, one], -1)], -2)
    HD = Hw + Hg + Ho

    def hess_of_quotient(a, ga, Ha):
        D1 = D[..., None, None]
        a1 = a[..., None, None]
        sym = ga[..., :, None] * gD[..., None, :] + gD[..., :, None] * ga[..., None, :]
        return (Ha / D1 - sym / D1**2 - a1 * HD / D1**2
                + 2 * a1 * gD[..., :, None] * gD[..., None, :] / D1**3)

    return np.stack([hess_of_quotient(aw, gaw, Hw),
                     hess_of_quotient(ag, gag, Hg)], axis=-3)


# ---------------------------------------------------------------------------
# eigen-structure

@dataclass
class EigenData:
    lambda_s: float
    lambda_f: float
    r_s: np.ndarray
    r_f: np.ndarray
    l_s: np.ndarray
    l_f: np.ndarray
    degenerate: bool  # within the umbilic exclusion ball


def eigenvalues(S, p: ModelParams = DEFAULT_PARAMS) -> np.ndarray:
    """Vectorized (lambda_s, lambda_f), shape (..., 2)."""
    J = jacobian(S, p, check=False)
    tr = J[..., 0, 0] + J[..., 1, 1]
    disc = (J[..., 0, 0] - J[..., 1, 1]) ** 2 + 4 * J[..., 0, 1] * J[..., 1, 0]
    # hyperbolicity is a model property; tiny negatives are roundoff
    root = np.sqrt(np.maximum(disc, 0.0))
    return np.stack([(tr - root) / 2, (tr + root) / 2], axis=-1)


def _eigvec_right(J, lam):
    """Right eigenvector of a 2x2 matrix for eigenvalue lam (unnormalized)."""
    c1 = np.stack([J[..., 0, 1], lam - J[..., 0, 0]], axis=-1)
    c2 = np.stack([lam - J[..., 1, 1], J[..., 1, 0]], axis=-1)
    n1 = np.linalg.norm(c1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(c2, axis=-1, keepdims=True)
    return np.where(n1 >= n2, c1, c2)


def eigen_raw(S, p: ModelParams = DEFAULT_PARAMS):
    """Eigenvalues and unit right eigenvectors with arbitrary sign (fast
    path: no gradient/orientation work)."""
    S = np.asarray(S, float)
    J = jacobian(S, p, check=False)
    lam = eigenvalues(S, p)
    r = np.stack([_eigvec_right(J, lam[..., 0]), _eigvec_right(J, lam[..., 1])], axis=-2)
    r = r / np.maximum(np.linalg.norm(r, axis=-1, keepdims=True), 1e-300)
    return lam, r


def eigen_fields(S, p: ModelParams = DEFAULT_PARAMS):
    """Vectorized eigen decomposition.

    Returns (lam, r, l) with lam shape (..., 2) ordered slow/fast, r and l
    shape (..., 2, 2) with [..., i, :] the unit right/left eigenvector of
    family i.  Right eigenvectors are oriented so grad(lambda_i) . r_i >= 0.
    """
    S = np.asarray(S, float)
    J = jacobian(S, p, check=False)
    lam = eigenvalues(S, p)
    JT = np.swapaxes(J, -1, -2)
    r = np.stack([_eigvec_right(J, lam[..., 0]), _eigvec_right(J, lam[..., 1])], axis=-2)
    l = np.stack([_eigvec_right(JT, lam[..., 0]), _eigvec_right(JT, lam[..., 1])], axis=-2)
    r = r / np.maximum(np.linalg.norm(r, axis=-1, keepdims=True), 1e-300)
    l = l / np.maximum(np.linalg.norm(l, axis=-1, keepdims=True), 1e-300)
    # orient toward increasing characteristic speed
    g = lambda_gradients(S, p, lam=lam, r=r, l=l)
    dots = np.sum(g * r, axis=-1, keepdims=True)
    sign = np.where(dots >= 0, 1.0, -1.0)
    r = r * sign
    return lam, r, l


def lambda_gradients(S, p: ModelParams = DEFAULT_PARAMS, lam=None, r=None, l=None):
    """grad(lambda_i), shape (..., 2, 2): [..., i, :] for family i.

    Uses d(lambda)/ds_k = l . (dJ/ds_k) . r / (l . r) with the analytic
    flux Hessian; degenerates (l.r ~ 0) near the umbilic point.
    """
    S = np.asarray(S, float)
    if lam is None or r is None or l is None:
        J = jacobian(S, p, check=False)
        lam = eigenvalues(S, p)
        JT = np.swapaxes(J, -1, -2)
        r = np.stack([_eigvec_right(J, lam[..., 0]), _eigvec_right(J, lam[..., 1])], -2)
        l = np.stack([_eigvec_right(JT, lam[..., 0]), _eigvec_right(JT, lam[..., 1])], -2)
        r = r / np.maximum(np.linalg.norm(r, axis=-1, keepdims=True), 1e-300)
        l = l / np.maximum(np.linalg.norm(l, axis=-1, keepdims=True), 1e-300)
    H = hessian(S, p)  # H[..., k, i, j] = d^2 f_k / ds_i ds_j
    # dJ/ds_k has entries (dJ/ds_k)[a, b] = H[a, b, k]
    # grad_k = l_a H[a, b, k] r_b / (l . r)
    lr = np.einsum("...fa,...fa->...f", l, r)
    num = np.einsum("...fa,...abk,...fb->...fk", l, H, r)
    return num / np.where(np.abs(lr) < 1e-14, np.nan, lr)[..., None]


def char_speed_derivative(S, p: ModelParams, family: int):
    """Directional derivative grad(lambda_i) . r_i with the oriented field.

    family: 0 = slow, 1 = fast.  Nonnegative by the orientation convention;
    use `eigen_fields` directly when the sign relative to a travel direction
    matters.
    """
    lam, r, l = eigen_fields(S, p)
    g = lambda_gradients(S, p, lam=lam, r=r, l=l)
    return np.sum(g[..., family, :] * r[..., family, :], axis=-1)


def eigen(S, p: ModelParams = DEFAULT_PARAMS) -> EigenData:
    """Pointwise eigen data with umbilic degeneracy flagging."""
    S = np.asarray(S, float)
    require_in_triangle(S, 1e-7)
    U = named_states(p).U
    lam, r, l = eigen_fields(S, p)
    return EigenData(
        lambda_s=float(lam[..., 0]),
        lambda_f=float(lam[..., 1]),
        r_s=r[..., 0, :], r_f=r[..., 1, :],
        l_s=l[..., 0, :], l_f=l[..., 1, :],
        degenerate=bool(np.linalg.norm(S - U) < UMBILIC_RADIUS),
    )


# ---------------------------------------------------------------------------
# JSON helpers (the {"sw","sg"} schema used by every surface)

def state_to_json(S) -> dict:
    S = np.asarray(S, float)
    return {"sw": float(S[0]), "sg": float(S[1])}


def state_from_json(d: dict) -> np.ndarray:
    return state(d["sw"], d["sg"])
