"""Deterministic JSON serialization shared by the CLI and the HTTP service.

Floats are rendered with 17 significant digits (shortest exact round-trip
is not used, so both surfaces emit byte-identical documents), keys are
sorted, and numpy containers are converted transparently.
"""

import numpy as np


def _render(obj, out):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x) or np.isinf(x):
            raise ValueError("non-finite float in JSON document")
        out.append(format(x, ".17g"))
    elif isinstance(obj, str):
        import json
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _render(obj.tolist(), out)
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for k, v in enumerate(obj):
            if k:
                out.append(",")
            _render(v, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for k, key in enumerate(sorted(obj, key=str)):
            if k:
                out.append(",")
            import json
            out.append(json.dumps(str(key)))
            out.append(":")
            _render(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def dumps(obj) -> str:
    out: list = []
    _render(obj, out)
    return "".join(out)
