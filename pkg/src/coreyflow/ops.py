"""Operation layer shared by the CLI and the HTTP service.

Each op_* takes plain JSON-ready inputs, runs the corresponding module
operation, and returns a plain dict.  Both surfaces serialize these dicts
with jsonio.dumps, so their outputs are byte-identical for equal inputs.

States cross this boundary as {"sw": ..., "sg": ...}; the CLI additionally
accepts the "sw,so" text form used throughout the source figures.
"""

import numpy as np

from . import cache, model, riemann as rm, simulator as sim
from .model import DEFAULT_PARAMS, ModelParams


def params_from_json(d: dict | None) -> ModelParams:
    if not d:
        return DEFAULT_PARAMS
    return ModelParams(mu_w=float(d.get("mu_w", 1.0)),
                       mu_o=float(d.get("mu_o", 9.5)),
                       mu_g=float(d.get("mu_g", 0.45)))


def params_to_json(p: ModelParams) -> dict:
    return {"mu_w": p.mu_w, "mu_o": p.mu_o, "mu_g": p.mu_g}


def get_atlas(p: ModelParams, settings: dict | None = None):
    return cache.load_or_build_atlas(p, settings=settings)


def op_atlas(p: ModelParams, settings: dict | None = None,
             full: bool = True) -> dict:
    atlas = get_atlas(p, settings)
    out = {"atlas_hash": atlas.content_hash(),
           "params": params_to_json(p),
           "landmarks": {k: model.state_to_json(v)
                         for k, v in atlas.landmarks.items()}}
    if full:
        out["atlas"] = atlas.to_json_dict()
    return out


def op_classify(R, p: ModelParams) -> dict:
    atlas = get_atlas(p)
    lab = rm.classify_region(np.asarray(R, float), atlas, p)
    return {"R": model.state_to_json(R),
            "region": lab.code,
            "major": lab.major,
            "sub": lab.sub,
            "ambiguous": bool(lab.ambiguous),
            "candidates": [str(c) for c in lab.candidates]}


def op_hugoniot(M, p: ModelParams, grid_n: int = 1024) -> dict:
    from . import hugoniot as hg
    loc = hg.trace_hugoniot(np.asarray(M, float), p, grid_n=grid_n)
    return {"M": model.state_to_json(M),
            "branches": [{
                "attached": bool(b.attached),
                "labels": {k: str(v) for k, v in (b.labels or {}).items()},
                "vertices": np.asarray(b.vertices, float),
                "sigma": np.asarray(b.sigma, float),
            } for b in loc.branches]}


def _wave_json(w):
    return {"kind": w.kind,
            "family": "sf"[w.family] if w.family in (0, 1) else None,
            "label": w.label,
            "states": np.asarray(w.states, float),
            "speeds": np.asarray(w.speeds, float)}


def op_wavecurve(R, p: ModelParams) -> dict:
    wc = rm.backward_f_wave_curve(np.asarray(R, float), p)
    return {"R": model.state_to_json(R),
            "labels": {k: model.state_to_json(v)
                       for k, v in wc.labels.items()},
            "segments": [{
                "kind": seg.kind,
                "states": np.asarray(seg.states, float),
                "speeds": np.asarray(seg.speeds, float),
                "tail": [_wave_json(w) for w in seg.tail],
            } for seg in wc.segments]}


def op_solve(L, R, p: ModelParams, classify: bool = True) -> dict:
    atlas = get_atlas(p) if classify else None
    sol = rm.solve_riemann(np.asarray(L, float), np.asarray(R, float), p,
                           atlas=atlas)
    return sol.to_json_dict()


def _sim_config(payload: dict | None) -> sim.SimConfig:
    d = dict(payload or {})
    kw = {}
    for k in ("x_min", "x_max", "t_end", "cfl", "epsilon", "dt",
              "newton_tol", "dt_floor"):
        if k in d:
            kw[k] = float(d[k])
    for k in ("n_cells", "newton_maxit"):
        if k in d:
            kw[k] = int(d[k])
    return sim.SimConfig(**kw)


def _profile_json(pr: sim.SimProfile) -> dict:
    return {"time": pr.time, "x": pr.x, "sw": pr.states[:, 0],
            "sg": pr.states[:, 1]}


def op_simulate(L, R, p: ModelParams, config: dict | None = None) -> dict:
    cfg = _sim_config(config)
    res = sim.run_simulation(np.asarray(L, float), np.asarray(R, float), p,
                             cfg)
    return {"L": model.state_to_json(L), "R": model.state_to_json(R),
            "config": {"x_min": cfg.x_min, "x_max": cfg.x_max,
                       "n_cells": cfg.n_cells, "t_end": cfg.t_end,
                       "epsilon": cfg.epsilon, "cfl": cfg.cfl},
            "diagnostics": res.diagnostics,
            "final": _profile_json(res.final)}


def op_profile(L, R, p: ModelParams, xi) -> dict:
    sol = rm.solve_riemann(np.asarray(L, float), np.asarray(R, float), p)
    xi = np.asarray(xi, float)
    states = rm.evaluate_profile(sol, xi)
    return {"signature": sol.signature, "xi": xi,
            "sw": states[:, 0], "sg": states[:, 1]}


def op_compare(L, R, p: ModelParams, config: dict | None = None) -> dict:
    L = np.asarray(L, float)
    R = np.asarray(R, float)
    sol = rm.solve_riemann(L, R, p)
    cfg = _sim_config(config)
    res = sim.run_simulation(L, R, p, cfg)
    prof = res.final
    analytic = rm.evaluate_profile(sol, prof.x / prof.time)
    errs = sim.compare_profiles(analytic, prof)
    fronts = []
    for g in sol.groups:
        for w in g.waves:
            if w.kind != "shock":
                continue
            try:
                v = sim.measured_front_speed(res, w.states[0], w.states[-1])
            except ValueError:
                continue
            fronts.append({"label": w.label, "analytic": w.v_begin,
                           "measured": v,
                           "rel_error": abs(v - w.v_begin)
                           / max(abs(w.v_begin), 1e-12)})
    return {"signature": sol.signature, "l1": errs, "fronts": fronts,
            "diagnostics": res.diagnostics}
