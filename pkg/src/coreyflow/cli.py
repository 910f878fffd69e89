"""Command-line interface.

States are entered as "sw,so" (water and oil saturations, matching the
labeling conventions of the source figures); JSON documents use the
internal {"sw", "sg"} schema.
"""

import argparse
import csv
import sys

import numpy as np

from . import jsonio, ops
from .model import DomainError
from .riemann import NoCompatibleSolution
from .simulator import NewtonFailure


def parse_state(text: str) -> np.ndarray:
    """Parse "sw,so" into the internal (sw, sg) coordinates."""
    try:
        sw, so = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'sw,so' (two comma-separated numbers), got {text!r}")
    return np.array([sw, 1.0 - sw - so])


def _add_params(sp):
    sp.add_argument("--mu", type=str, default=None, metavar="MU_W,MU_O,MU_G",
                    help="phase viscosities (default 1,9.5,0.45)")
    sp.add_argument("--out", type=str, default=None,
                    help="write the JSON document (or CSV for simulate) here")


def _params(args):
    if not args.mu:
        return ops.DEFAULT_PARAMS
    mw, mo, mg = (float(t) for t in args.mu.split(","))
    return ops.ModelParams(mu_w=mw, mu_o=mo, mu_g=mg)


def _emit(doc: dict, args, summary: str):
    text = jsonio.dumps(doc)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    print(summary, file=sys.stderr)


def _sim_config_args(sp):
    sp.add_argument("--n-cells", type=int, default=None)
    sp.add_argument("--t-end", type=float, default=None)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.add_argument("--cfl", type=float, default=None)
    sp.add_argument("--x-min", type=float, default=None)
    sp.add_argument("--x-max", type=float, default=None)


def _sim_config_payload(args):
    d = {"n_cells": args.n_cells, "t_end": args.t_end,
         "epsilon": args.epsilon, "cfl": args.cfl,
         "x_min": args.x_min, "x_max": args.x_max}
    return {k: v for k, v in d.items() if v is not None}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="coreyflow",
        description="Riemann solutions for three-phase Corey flow")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("atlas", help="build (or load) the locus atlas")
    sp.add_argument("--summary", action="store_true",
                    help="emit only the hash and landmarks")
    _add_params(sp)

    sp = sub.add_parser("hugoniot", help="trace the Hugoniot locus of M")
    sp.add_argument("--M", type=parse_state, required=True)
    sp.add_argument("--grid", type=int, default=1024)
    _add_params(sp)

    sp = sub.add_parser("wavecurve", help="backward fast wave curve of R")
    sp.add_argument("--R", type=parse_state, required=True)
    _add_params(sp)

    sp = sub.add_parser("solve", help="solve the Riemann problem (L, R)")
    sp.add_argument("--L", type=parse_state, required=True)
    sp.add_argument("--R", type=parse_state, required=True)
    sp.add_argument("--no-classify", action="store_true")
    _add_params(sp)

    sp = sub.add_parser("simulate", help="direct finite-difference run")
    sp.add_argument("--L", type=parse_state, required=True)
    sp.add_argument("--R", type=parse_state, required=True)
    _sim_config_args(sp)
    _add_params(sp)
    sp.add_argument("--csv", type=str, default=None,
                    help="write the final profile as CSV (x,sw,sg,so)")

    sp = sub.add_parser("compare", help="analytic vs numeric comparison")
    sp.add_argument("--L", type=parse_state, required=True)
    sp.add_argument("--R", type=parse_state, required=True)
    _sim_config_args(sp)
    _add_params(sp)

    sp = sub.add_parser("classify", help="structure region of R")
    sp.add_argument("--R", type=parse_state, required=True)
    _add_params(sp)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", type=str, default="127.0.0.1")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        p = _params(args) if hasattr(args, "mu") else ops.DEFAULT_PARAMS
        if args.cmd == "atlas":
            doc = ops.op_atlas(p, full=not args.summary)
            _emit(doc, args, f"atlas hash {doc['atlas_hash']}")
        elif args.cmd == "hugoniot":
            doc = ops.op_hugoniot(args.M, p, grid_n=args.grid)
            _emit(doc, args, f"{len(doc['branches'])} branches")
        elif args.cmd == "wavecurve":
            doc = ops.op_wavecurve(args.R, p)
            _emit(doc, args,
                  f"{len(doc['segments'])} segments, "
                  f"labels {sorted(doc['labels'])}")
        elif args.cmd == "solve":
            doc = ops.op_solve(args.L, args.R, p,
                               classify=not args.no_classify)
            _emit(doc, args, f"signature: {doc['signature']}")
        elif args.cmd == "simulate":
            doc = ops.op_simulate(args.L, args.R, p,
                                  config=_sim_config_payload(args))
            if args.csv:
                with open(args.csv, "w", newline="") as fh:
                    wr = csv.writer(fh)
                    wr.writerow(["x", "sw", "sg", "so"])
                    fin = doc["final"]
                    for x, sw, sg in zip(fin["x"], fin["sw"], fin["sg"]):
                        wr.writerow([f"{x:.17g}", f"{sw:.17g}",
                                     f"{sg:.17g}", f"{1 - sw - sg:.17g}"])
            _emit(doc, args, f"diagnostics: {doc['diagnostics']}")
        elif args.cmd == "compare":
            doc = ops.op_compare(args.L, args.R, p,
                                 config=_sim_config_payload(args))
            _emit(doc, args,
                  f"signature: {doc['signature']}  "
                  f"L1 total {doc['l1']['total']:.5f}")
        elif args.cmd == "classify":
            doc = ops.op_classify(args.R, p)
            note = " (ambiguous: " + ", ".join(doc["candidates"]) + ")" \
                if doc["ambiguous"] else ""
            _emit(doc, args, f"region: {doc['region']}{note}")
        elif args.cmd == "serve":
            import uvicorn
            from .service import app
            uvicorn.run(app, host=args.host, port=args.port)
        return 0
    except (DomainError, NoCompatibleSolution, NewtonFailure, ValueError) as e:
        print(jsonio.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
