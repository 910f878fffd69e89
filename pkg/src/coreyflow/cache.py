"""Disk cache for expensive derived objects (the locus atlas).

The cache directory is taken from the ``COREYFLOW_CACHE_DIR`` environment
variable, falling back to ``~/.cache/coreyflow``.  Entries are keyed by a
content hash of the model parameters and build settings, so a cache hit is
guaranteed to correspond to the same construction.
"""

import hashlib
import json
import os
import pickle
from pathlib import Path

from .model import DEFAULT_PARAMS, ModelParams
from . import loci as lc


def cache_dir() -> Path:
    d = os.environ.get("COREYFLOW_CACHE_DIR")
    if d:
        return Path(d)
    return Path.home() / ".cache" / "coreyflow"


def _atlas_key(p: ModelParams, settings: dict | None) -> str:
    blob = json.dumps({
        "what": "locus-atlas",
        "version": 1,
        "params": {"mu_w": p.mu_w, "mu_g": p.mu_g, "mu_o": p.mu_o},
        "settings": settings or {},
    }, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_or_build_atlas(p: ModelParams = DEFAULT_PARAMS,
                        settings: dict | None = None,
                        refresh: bool = False) -> lc.LocusAtlas:
    """Return the locus atlas for `p`, building it once and caching the
    result on disk."""
    d = cache_dir()
    path = d / f"atlas-{_atlas_key(p, settings)}.pkl"
    if path.exists() and not refresh:
        try:
            with open(path, "rb") as fh:
                atlas = pickle.load(fh)
            if isinstance(atlas, lc.LocusAtlas):
                return atlas
        except Exception:
            pass
    atlas = lc.build_locus_atlas(p, settings=settings)
    try:
        d.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(atlas, fh)
        os.replace(tmp, path)
    except OSError:
        pass
    return atlas
