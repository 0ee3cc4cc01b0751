"""Command-line front end.

Every subcommand prints a JSON summary on standard output; failures print
a single-line JSON error object on standard error and exit nonzero (2 for
invalid input).  Floats are written with 17 significant digits.
"""

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import dispersion as ds
from . import lapprobe as lp
from . import model
from . import mourre as mo
from . import thresholds as th
from .errors import InvalidParams, LatMaxwellError

DEFAULTS = {
    "eps": [1.0, 1.0, 1.0],
    "mu": [1.0, 1.0, 1.0],
    "grid": None,
    "seed": 0,
    "out": None,
    "threads": None,
    "phi": None,
    "t_prime": "full",
    "samples": 1000,
    "lam": None,
    "eps_list": [1e-1, 1e-2, 1e-3, 1e-4],
    "broadening": 0.01,
    "range": None,
}


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return "null"
        return format(v, ".17g")
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return json.dumps(str(v))


def dumps(obj):
    """JSON text with 17 significant digits for every float."""
    return _fmt(obj)


class Outputs:
    """Files written by a command; removed again if the command fails."""

    def __init__(self, prefix):
        self.prefix = prefix
        self.written = []

    def path(self, suffix):
        if self.prefix is None:
            return None
        p = f"{self.prefix}{suffix}"
        d = os.path.dirname(p)
        if d:
            os.makedirs(d, exist_ok=True)
        return p

    def write_csv(self, suffix, header, rows):
        p = self.path(suffix)
        if p is None:
            return None
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(v) for v in r) + "\n")
        self.written.append(p)
        return p

    def write_json(self, suffix, obj):
        p = self.path(suffix)
        if p is None:
            return None
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(obj) + "\n")
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            try:
                os.remove(p)
            except OSError:
                pass


# ---------------------------------------------------------------- config


def _triple(text):
    vals = [float(v) for v in str(text).split(",")]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return vals


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def effective_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg.update(json.load(fh))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def params_from(cfg):
    return model.MaterialParams(tuple(cfg["eps"]), tuple(cfg["mu"]))


def window_from(cfg):
    phi = cfg.get("phi")
    if phi is None:
        raise InvalidParams("--phi center,inner,outer is required")
    if isinstance(phi, dict):
        phi = [phi["center"], phi["inner_halfwidth"], phi["outer_halfwidth"]]
    c, wi, wo = (float(v) for v in phi)
    return mo.EnergyWindow(c, wi, wo)


def t_prime_from(cfg):
    tp = cfg.get("t_prime", "full")
    if isinstance(tp, str) and tp not in ("full", "full_T", "zero", "zero_only"):
        return _floats(tp)
    return tp


def _set_threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


# ---------------------------------------------------------------- commands


def cmd_derive(cfg, out):
    p = params_from(cfg)
    d = model.derive_params(p)
    res = model.identity_residuals(d.alpha, d.beta, d.gamma, p.eps, p.mu)
    nd = model.normalized_derived(p)
    return {
        **d.to_dict(),
        "normalized_beta": nd.beta.tolist(),
        "identity_max_residual": max(float(np.max(np.abs(v))) for v in res.values()),
    }


def _path(n):
    """Gamma-X-M-R-Gamma in x-space with n points per segment."""
    corners = np.array([[0, 0, 0], [np.pi / 2, 0, 0], [np.pi / 2, np.pi / 2, 0], [np.pi / 2] * 3, [0, 0, 0]])
    pts = []
    for a, b in zip(corners[:-1], corners[1:]):
        t = np.linspace(0.0, 1.0, n, endpoint=False)
        pts.append(a + t[:, None] * (b - a))
    pts.append(corners[-1:])
    return np.vstack(pts)


def cmd_bands(cfg, out):
    p = params_from(cfg)
    n = cfg["grid"] or 64
    x = _path(n)
    vals, double = ds.analytic_eigenvalues(p, x)
    rows = [list(xi) + [v[4], v[5], bool(dbl)] for xi, v, dbl in zip(x, vals, double)]
    out.write_csv("_bands.csv", ["x1", "x2", "x3", "sqrt_tau_minus", "sqrt_tau_plus", "double"], rows)
    lo, hi = lp.spectrum_extent(p, 101)
    tset = th.enumerate_thresholds(p)
    return {"points": len(x), "lambda_plus": tset.lambda_plus, "grid_max_band": hi, "grid_min_positive_band": lo}


def cmd_thresholds(cfg, out):
    p = params_from(cfg)
    tset = th.enumerate_thresholds(p)
    body = {
        "case": tset.derived.case,
        "values": tset.values,
        "t_sm": tset.T_sm,
        "t_sa": tset.T_sa,
        "lambda_plus": tset.lambda_plus,
        "lambda_minus": tset.lambda_minus,
        "thresholds": [t.to_dict() for t in tset.thresholds],
    }
    out.write_json("_thresholds.json", body)
    return body


def cmd_mourre(cfg, out):
    p = params_from(cfg)
    n = cfg["grid"] or 64
    prob = mo.MourreProblem(p, window_from(cfg), t_prime_from(cfg))
    cut = mo.calibrate(prob, n)
    delta, argmin, (xa, dl) = mo.mourre_gap(prob, cut, n, return_field=True)
    out.write_csv("_delta.csv", ["x1", "x2", "x3", "delta"], [list(a) + [b] for a, b in zip(xa, dl)])
    ck = cut.checks
    return {
        "delta": delta,
        "argmin": list(argmin),
        "b0": cut.b0,
        "b": cut.b,
        "grid_n": n,
        "case": prob.case,
        "checks": {
            "partition": ck.get("partition_error"),
            "xi_bound": ck.get("xi_bound"),
            "support_disjointness": ck.get("support_disjointness"),
            "all": ck,
        },
    }


def cmd_commcheck(cfg, out):
    p = params_from(cfg)
    n = cfg["grid"] or 32
    prob = mo.MourreProblem(p, window_from(cfg), t_prime_from(cfg))
    cut = mo.calibrate(prob, 64)
    res = {}
    for m in (n, n + n // 2):
        A = mo.build_Aout(prob, cut, m) + mo.build_Ain(prob, cut, m)
        H = mo.h1_closed_form(prob, cut, mo.torus_grid(m))
        res[m] = mo.commutator_oracle(prob, A, H, modes=5, count=20, seed=int(cfg["seed"]))
    return {"residual": {str(k): v for k, v in res.items()}, "b": cut.b, "b0": cut.b0, "case": prob.case}


def cmd_lap(cfg, out):
    p = params_from(cfg)
    n = cfg["grid"] or 48
    lam = cfg.get("lam")
    if lam is None:
        raise InvalidParams("--lam is required")
    u = lp.TrigSection.random(2, seed=int(cfg["seed"]), vanish_planes=True)
    sweep = lp.eps_sweep(p, u, float(lam), cfg["eps_list"], grid_n=n)
    rows = [[sweep.lam, e, v.real, v.imag, n, False] for e, v in zip(sweep.eps, sweep.values)]
    out.write_csv("_lap.csv", ["lambda", "eps", "re", "im", "grid_n", "refined"], rows)
    meta = {"config": cfg, "holder_exponent": sweep.holder_exponent, "C": sweep.C, "norm": sweep.graph_norm}
    out.write_json("_lap.json", meta)
    return {"lambda": sweep.lam, "eps": sweep.eps, "re": sweep.values.real, "im": sweep.values.imag,
            "holder_exponent": sweep.holder_exponent, "C": sweep.C}


def cmd_dos(cfg, out):
    p = params_from(cfg)
    n = cfg["grid"] or 128
    top = th.enumerate_thresholds(p).lambda_plus
    rng = cfg.get("range")
    lo, hi, k = (-1.1 * top, 1.1 * top, 441) if rng is None else (rng[0], rng[1], int(rng[2]))
    lam = np.linspace(lo, hi, k)
    eps = float(cfg["broadening"])
    dv = lp.dos(p, lam, eps, n)
    out.write_csv("_dos.csv", ["lambda", "density"], zip(lam, dv))
    edge = lp.dos_edge(p, eps, n, top)
    out.write_json("_dos.json", {"config": cfg, "edge": edge, "lambda_plus": top})
    return {"points": k, "edge": edge, "lambda_plus": top, "min_density": float(dv.min())}


def cmd_oracle(cfg, out):
    p = params_from(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    k = int(cfg["samples"])
    x = rng.uniform(-np.pi, np.pi, (k, 3))
    vals, _ = ds.analytic_eigenvalues(p, x)
    num = np.linalg.eigvalsh(model.sym_fiber(p, x))
    scale = np.maximum(np.abs(num).max(axis=1, keepdims=True), 1e-300)
    dev = float(np.max(np.abs(np.sort(vals, axis=1) - num) / scale))
    tset = th.enumerate_thresholds(p)
    grid = th.critical_value_oracle(p, cfg["grid"] or 161)
    tdev = max(min(abs(g - v) for g in grid) for v in tset.values) if len(grid) else float("inf")
    lines = [
        f"eig max rel dev < 1e-9: {'PASS' if dev < 1e-9 else 'FAIL'} ({dev:.3e})",
        f"thresholds vs grid oracle < 0.02: {'PASS' if tdev < 0.02 else 'FAIL'} ({tdev:.3e})",
    ]
    for ln in lines:
        print(ln, file=sys.stderr)
    return {"eig_max_rel_dev": dev, "threshold_max_dev": tdev, "grid_values": grid, "report": lines}


COMMANDS = {
    "derive": cmd_derive,
    "bands": cmd_bands,
    "thresholds": cmd_thresholds,
    "mourre": cmd_mourre,
    "commcheck": cmd_commcheck,
    "lap": cmd_lap,
    "dos": cmd_dos,
    "oracle": cmd_oracle,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises on bad usage so the error can be reported as one JSON line."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    ap = _Parser(prog="latmaxwell", description="Spectral tools for the lattice Maxwell operator.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)  # subparsers inherit the parser class
        sp.add_argument("--eps", type=_triple)
        sp.add_argument("--mu", type=_triple)
        sp.add_argument("--grid", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--config")
        sp.add_argument("--phi", type=_triple, help="center,inner,outer of the energy bump")
        sp.add_argument("--tprime", dest="t_prime", help="full, zero or a comma list of thresholds")
        sp.add_argument("--samples", type=int)
        sp.add_argument("--lam", type=float)
        sp.add_argument("--eps-list", dest="eps_list", type=_floats)
        sp.add_argument("--broadening", type=float)
        sp.add_argument("--range", type=_triple, help="lo,hi,count for the dos grid")
    return ap


def _fail(msg, code, kind):
    sys.stderr.write(json.dumps({"error": msg, "type": kind}) + "\n")
    return code


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as e:
        return _fail(str(e), 2, "usage")
    except SystemExit as e:
        if e.code in (0, None):
            return 0
        return _fail("invalid command line", 2, "usage")
    out = Outputs(args.out)
    try:
        cfg = effective_config(args)
        _set_threads(cfg.get("threads"))
        t0 = time.time()
        body = COMMANDS[args.command](cfg, out)
        out.write_json("_summary.json", {"command": args.command, "config": cfg, "result": body,
                                          "metadata": {"elapsed_s": time.time() - t0, "version": __version__}})
    except (InvalidParams, ValueError, argparse.ArgumentTypeError, OSError, json.JSONDecodeError) as e:
        out.cleanup()
        return _fail(str(e), 2, type(e).__name__)
    except LatMaxwellError as e:
        out.cleanup()
        return _fail(str(e), 1, type(e).__name__)
    sys.stdout.write(dumps(body) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
