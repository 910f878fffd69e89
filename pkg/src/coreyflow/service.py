"""HTTP/JSON service exposing the package operations.

Responses are rendered with jsonio.dumps, so documents are byte-identical
to the CLI output for equal inputs.  Error mapping: 400 for schema
violations, 422 for domain errors (out-of-triangle states, off-edge L),
500 for numeric failures, each with a diagnostic JSON body.
"""

import numpy as np
from fastapi import FastAPI, Request, Response

from . import jsonio, model, ops
from .model import DomainError
from .riemann import NoCompatibleSolution
from .simulator import NewtonFailure

app = FastAPI(title="coreyflow", version="0.1.0")


class SchemaError(ValueError):
    pass


def _json_response(doc, status=200):
    return Response(content=jsonio.dumps(doc), status_code=status,
                    media_type="application/json")


def _state(body, key):
    d = body.get(key)
    if not isinstance(d, dict) or "sw" not in d or "sg" not in d:
        raise SchemaError(f"field '{key}' must be a state {{sw, sg}}")
    try:
        return model.state_from_json(d)
    except (TypeError, ValueError):
        raise SchemaError(f"field '{key}' has non-numeric entries")


def _params(body):
    d = body.get("params")
    if d is None:
        return ops.DEFAULT_PARAMS
    if not isinstance(d, dict):
        raise SchemaError("field 'params' must be an object")
    try:
        return ops.params_from_json(d)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"invalid params: {e}")


async def _body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise SchemaError("request body must be a JSON object")
    if not isinstance(body, dict):
        raise SchemaError("request body must be a JSON object")
    return body


@app.exception_handler(SchemaError)
async def _schema_error(request, exc):
    return _json_response({"error": "schema", "message": str(exc)}, 400)


@app.exception_handler(DomainError)
async def _domain_error(request, exc):
    return _json_response({"error": "domain", "message": str(exc)}, 422)


@app.exception_handler(NoCompatibleSolution)
async def _numeric_error(request, exc):
    return _json_response({"error": "numeric", "message": str(exc),
                           "nearest": exc.nearest}, 500)


@app.exception_handler(NewtonFailure)
async def _newton_error(request, exc):
    return _json_response({"error": "numeric", "message": str(exc)}, 500)


@app.get("/health")
async def health():
    return _json_response({"status": "ok", "version": "0.1.0"})


@app.post("/atlas")
async def atlas(request: Request):
    body = await _body(request)
    p = _params(body)
    full = bool(body.get("full", False))
    return _json_response(ops.op_atlas(p, settings=body.get("settings"),
                                       full=full))


@app.post("/classify")
async def classify(request: Request):
    body = await _body(request)
    return _json_response(ops.op_classify(_state(body, "R"), _params(body)))


@app.post("/hugoniot")
async def hugoniot(request: Request):
    body = await _body(request)
    grid = body.get("grid_n", 1024)
    if not isinstance(grid, int) or grid < 64:
        raise SchemaError("grid_n must be an integer >= 64")
    return _json_response(ops.op_hugoniot(_state(body, "M"), _params(body),
                                          grid_n=grid))


@app.post("/wavecurve")
async def wavecurve(request: Request):
    body = await _body(request)
    return _json_response(ops.op_wavecurve(_state(body, "R"), _params(body)))


@app.post("/solve")
async def solve(request: Request):
    body = await _body(request)
    return _json_response(ops.op_solve(_state(body, "L"), _state(body, "R"),
                                       _params(body),
                                       classify=bool(body.get("classify",
                                                              True))))


@app.post("/simulate")
async def simulate(request: Request):
    body = await _body(request)
    cfgd = body.get("config", {})
    if cfgd is not None and not isinstance(cfgd, dict):
        raise SchemaError("config must be an object")
    try:
        return _json_response(ops.op_simulate(_state(body, "L"),
                                              _state(body, "R"),
                                              _params(body), config=cfgd))
    except ValueError as e:
        if isinstance(e, (SchemaError, DomainError)):
            raise
        raise SchemaError(f"invalid config: {e}")


@app.post("/profile")
async def profile(request: Request):
    body = await _body(request)
    xi = body.get("xi")
    if not isinstance(xi, list) or not xi \
            or not all(isinstance(v, (int, float)) for v in xi):
        raise SchemaError("field 'xi' must be a non-empty list of numbers")
    return _json_response(ops.op_profile(_state(body, "L"),
                                         _state(body, "R"), _params(body),
                                         np.asarray(xi, float)))


@app.post("/compare")
async def compare(request: Request):
    body = await _body(request)
    cfgd = body.get("config", {})
    if cfgd is not None and not isinstance(cfgd, dict):
        raise SchemaError("config must be an object")
    return _json_response(ops.op_compare(_state(body, "L"),
                                         _state(body, "R"), _params(body),
                                         config=cfgd))
