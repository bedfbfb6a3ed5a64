"""Command-line interface.

Subcommands: wavecone (membership and gap of a state vector), experiment
(alternating-projection runs from a config file, CSV reports), probe-commutator
(order check of [A, phi]), project (kernel-project a field dump), catalog
(list built-in operators).

Exit codes: 0 success, 2 parse/config error, 3 dimension mismatch, 4 numeric
abort.  Scientific verdicts are data, never exit codes.  Output files are
written atomically and reruns with identical inputs produce byte-identical
data files.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import fields as flds
from .fields import PeriodicField, PeriodicGrid, read_field, write_field
from .lab import (
    NumericAbortError,
    TwoStateProblem,
    alternating_projection_run,
    generate_afree_noise,
)
from .operators import OperatorSpecError, catalog, parse_operator
from .spectral import afree_project, commutator_order_probe
from .wavecone import ellipticity_constant, in_wave_cone

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIMENSION = 3
EXIT_NUMERIC = 4

CATALOG_HELP = "catalog selector: curl:MxD, div:MxD, or curlcurl:D (e.g. curl:2x2)"


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _fail(message, code=EXIT_CONFIG):
    raise CliError(message, code)


def _load_operator(catalog_sel, opfile):
    if (catalog_sel is None) == (opfile is None):
        _fail("exactly one of --catalog or --opfile is required")
    if catalog_sel is not None:
        return _catalog_from_selector(catalog_sel)
    try:
        with open(opfile, "r", encoding="utf-8") as fh:
            return parse_operator(fh.read())
    except FileNotFoundError:
        _fail(f"operator file not found: {opfile}")
    except OperatorSpecError as exc:
        _fail(f"bad operator file {opfile}: {exc}")


def _catalog_from_selector(selector):
    parts = selector.split(":")
    try:
        if parts[0] in ("curl", "div"):
            if len(parts) != 2:
                _fail(f"selector {selector!r} should read {parts[0]}:MxD")
            m_txt, _, d_txt = parts[1].partition("x")
            return catalog(parts[0], m=int(m_txt), d=int(d_txt))
        if parts[0] == "curlcurl":
            if len(parts) != 2:
                _fail(f"selector {selector!r} should read curlcurl:D")
            return catalog("curlcurl", d=int(parts[1]))
    except (ValueError, TypeError) as exc:
        _fail(f"bad catalog selector {selector!r}: {exc}")
    _fail(f"unknown catalog operator {parts[0]!r} (try: wclab catalog)")


def _parse_vector(text):
    try:
        return np.array([float(tok) for tok in text.split(",") if tok.strip() != ""])
    except ValueError as exc:
        _fail(f"bad decimal list {text!r}: {exc}")


def _format_vector(v):
    return ",".join(repr(float(x)) for x in v)


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".wclab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _thread_count():
    raw = os.environ.get("WCLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_wavecone(args):
    op = _load_operator(args.catalog, args.opfile)
    v = _parse_vector(args.v)
    if v.shape != (op.ell,):
        _fail(f"state vector has {v.size} entries, operator expects {op.ell}", EXIT_DIMENSION)
    if not np.any(v):
        _fail("state vector must be nonzero")
    member, result = in_wave_cone(op, v, tol=args.tol)
    print(f"operator: {op.name or 'custom'} (d={op.d} ell={op.ell} n={op.n} k={op.k})")
    print(f"symbol gap over the unit sphere: {result.gap:.6e}")
    print(f"argmin direction: ({_format_vector(result.argmin_xi)})")
    print(f"grid points searched: {result.grid_points}, refinement iterations: {result.refinement_iterations}")
    print(f"certified resolution: {result.certified_resolution:.3e}")
    if member:
        print("verdict: inside the wave cone (one-dimensional oscillations admissible)")
    else:
        c = ellipticity_constant(op, v, tol=args.tol)
        print(f"verdict: outside the wave cone; ellipticity constant c = {c!r}")
    print(f"gap={result.gap!r} member={'true' if member else 'false'} xi={_format_vector(result.argmin_xi)}")
    return EXIT_OK


EXPERIMENT_KEYS = {
    "operator", "lambda", "mu", "theta", "N", "iterations", "seeds",
    "amplitude", "eps_low", "delta", "outdir",
}


def _parse_experiment_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        _fail(f"config file not found: {path}")
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            _fail(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in EXPERIMENT_KEYS:
            _fail(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            _fail(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    missing = {"operator", "lambda", "mu", "theta", "N", "iterations", "seeds", "outdir"} - set(raw)
    if missing:
        _fail(f"{path}: missing keys: {', '.join(sorted(missing))}")

    source = raw["operator"]
    if source.startswith("catalog:"):
        op = _catalog_from_selector(source[len("catalog:"):])
    else:
        op = _load_operator(None, source)
    lam = _parse_vector(raw["lambda"])
    mu = _parse_vector(raw["mu"])
    if lam.shape != (op.ell,) or mu.shape != (op.ell,):
        _fail(f"{path}: states must have {op.ell} entries", EXIT_DIMENSION)
    try:
        theta = float(raw["theta"])
        n_axis = int(raw["N"])
        iterations = int(raw["iterations"])
        seeds = [int(tok) for tok in raw["seeds"].split(",") if tok.strip() != ""]
        amplitude = float(raw["amplitude"]) if "amplitude" in raw else None
        eps_low = float(raw["eps_low"]) if "eps_low" in raw else None
        delta = float(raw["delta"]) if "delta" in raw else 0.1
    except ValueError as exc:
        _fail(f"{path}: bad numeric value: {exc}")
    if not seeds:
        _fail(f"{path}: seeds list is empty")
    return {
        "op": op, "lam": lam, "mu": mu, "theta": theta, "N": n_axis,
        "iterations": iterations, "seeds": seeds, "amplitude": amplitude,
        "eps_low": eps_low, "delta": delta, "outdir": raw["outdir"],
    }


def cmd_experiment(args):
    cfg = _parse_experiment_config(args.config)
    try:
        grid = PeriodicGrid(cfg["op"].d, cfg["N"])
        problems = [
            TwoStateProblem(cfg["op"], cfg["lam"], cfg["mu"], cfg["theta"], grid, seed)
            for seed in cfg["seeds"]
        ]
    except ValueError as exc:
        _fail(f"bad experiment setup: {exc}")

    def run(problem):
        amp = cfg["amplitude"]
        if amp is None:
            amp = 0.5 * problem.state_distance
        init = generate_afree_noise(problem, amp, seed=problem.seed)
        return alternating_projection_run(
            problem, init, cfg["iterations"],
            eps_low=cfg["eps_low"], delta=cfg["delta"], keep_final=False,
        )

    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, problems))
    else:
        reports = [run(p) for p in problems]

    os.makedirs(cfg["outdir"], exist_ok=True)
    summary = ["seed,verdict,final_objective,final_fraction,final_residual"]
    for report in reports:
        _atomic_write(os.path.join(cfg["outdir"], f"run_seed{report.seed}.csv"), report.to_csv_text())
        summary.append(
            f"{report.seed},{report.verdict},{report.objective[-1]!r},"
            f"{report.fraction[-1]!r},{report.residual[-1]!r}"
        )
        print(f"seed {report.seed}: verdict={report.verdict} "
              f"objective={report.objective[-1]:.3e} fraction={report.fraction[-1]:.3f}")
    _atomic_write(os.path.join(cfg["outdir"], "summary.csv"), "\n".join(summary) + "\n")
    print(f"wrote {len(reports)} run files and summary.csv to {cfg['outdir']}")
    return EXIT_OK


def cmd_probe_commutator(args):
    op = _load_operator(args.catalog, args.opfile)
    try:
        grid = PeriodicGrid(op.d, args.N)
    except ValueError as exc:
        _fail(str(exc))
    m_list = [int(tok) for tok in args.frequencies.split(",") if tok.strip() != ""]
    q = _parse_vector(args.direction) if args.direction else np.eye(op.d)[0]
    if q.shape != (op.d,):
        _fail(f"direction has {q.size} entries, operator expects {op.d}", EXIT_DIMENSION)

    coords = grid.coordinates()
    phi = PeriodicField(grid, np.cos(2.0 * np.pi * coords[..., 0])[..., None])
    try:
        probe = commutator_order_probe(op, phi, q.astype(np.int64), m_list)
    except ValueError as exc:
        _fail(str(exc))
    print(f"operator: {op.name or 'custom'} (order k={op.k})")
    print(f"probe frequencies: {probe.frequencies}")
    if probe.degenerate:
        print("commutator response is identically ~0 (degenerate probe, e.g. constant cutoff)")
    else:
        print(f"commutator slope: {probe.commutator_slope:.4f} (order-(k-1) claim: expect <= {op.k - 1}+0.2)")
    if probe.direct_slope is not None:
        print(f"direct operator slope: {probe.direct_slope:.4f} (expect ~ {op.k})")
    comm = "degenerate" if probe.degenerate else repr(probe.commutator_slope)
    direct = "degenerate" if probe.direct_slope is None else repr(probe.direct_slope)
    print(f"commutator_slope={comm} direct_slope={direct}")
    return EXIT_OK


def cmd_project(args):
    op = _load_operator(args.catalog, args.opfile)
    try:
        field = read_field(args.input)
    except FileNotFoundError:
        _fail(f"field dump not found: {args.input}")
    except ValueError as exc:
        _fail(f"bad field dump: {exc}")
    if field.channels != op.ell or field.grid.d != op.d:
        _fail(
            f"field has d={field.grid.d} channels={field.channels}, "
            f"operator expects d={op.d} channels={op.ell}",
            EXIT_DIMENSION,
        )
    projected = afree_project(op, field)
    directory = os.path.dirname(os.path.abspath(args.output)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".wclab-", suffix=".tmp")
    os.close(fd)
    try:
        write_field(projected, tmp)
        os.replace(tmp, args.output)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    print(f"projected field written to {args.output}")
    return EXIT_OK


def cmd_catalog(_args):
    print("built-in operators (selector syntax):")
    print("  curl:MxD      first-order curl of M x D matrix fields (ell = M*D)")
    print("                wave cone: matrices of rank one (for 2x2)")
    print("  div:MxD       row-wise divergence of M x D matrix fields")
    print("                wave cone: singular matrices (for 2x2)")
    print("  curlcurl:D    second-order incompatibility operator on symmetric")
    print("                D x D fields, D in {2,3}; wave cone: symmetrized")
    print("                products a (.) xi")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="wclab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("wavecone", help="symbol gap and wave-cone membership of a state vector")
    p.add_argument("--catalog", help=CATALOG_HELP)
    p.add_argument("--opfile", help="path to an operator spec file")
    p.add_argument("--v", required=True, help="state vector as comma-separated decimals")
    p.add_argument("--tol", type=float, default=1e-6, help="relative membership tolerance")
    p.set_defaults(func=cmd_wavecone)

    p = sub.add_parser("experiment", help="alternating-projection rigidity runs from a config file")
    p.add_argument("config", help="experiment config path")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("probe-commutator", help="order probe for the commutator [A, phi]")
    p.add_argument("--catalog", help=CATALOG_HELP)
    p.add_argument("--opfile", help="path to an operator spec file")
    p.add_argument("--N", type=int, default=127, help="grid resolution (odd)")
    p.add_argument("--frequencies", default="2,4,8", help="probe frequencies, comma separated")
    p.add_argument("--direction", default=None, help="integer lattice direction (default: first axis)")
    p.set_defaults(func=cmd_probe_commutator)

    p = sub.add_parser("project", help="apply the kernel projection to a field dump")
    p.add_argument("--catalog", help=CATALOG_HELP)
    p.add_argument("--opfile", help="path to an operator spec file")
    p.add_argument("--input", required=True, help="input .wclf field dump")
    p.add_argument("--output", required=True, help="output .wclf field dump")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("catalog", help="list built-in operators")
    p.set_defaults(func=cmd_catalog)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericAbortError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
