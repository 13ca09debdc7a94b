"""Command-line interface: every engine behind one reproducible front door.

Commands
    fbm sample       draw an fBm path on a dyadic grid, dump CSV
    moments          expected iterated integrals by any of the four engines
    gamma            expansion-operator coefficients for a field family
    expand           validate the small-time expansion against Monte Carlo
    invariant        weak-form residuals of a candidate invariant measure
    signature-check  Chen-identity defect of a random piecewise-linear path

Every run emits its fully resolved configuration (defaults included)
alongside the results: to stderr when results go to stdout, or to
``<out>.config.json`` next to an output file.  Identical resolved config
and seed produce identical output bytes; ``--threads`` changes wall time
only.  ``--seed`` is mandatory for every stochastic command — there is no
silent entropy source.

Exit codes: 0 success, 2 usage error, 3 capability error, 4 numerical
failure, 5 assertion failure (with ``--assert``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (CapabilityError, DivergenceError, DomainError,
                     NumericalError, ResourceError, TruncationError)
from .expansion import (ValidationConfig, default_test_functions,
                        density_on_box, geometric_grid, invariant_residual,
                        lebesgue_box, point_mass, uniform_circle,
                        validate_expansion)
from .fbm import sample_fbm, write_grid_csv
from .moments import (expected_iterated_closed_form, expected_iterated_interpolated,
                      expected_iterated_wick, gamma2_coefficients,
                      mc_expected_iterated)
from .operators import build_gamma, load_fields, load_functions
from .rng import TAG_SIGCHECK, stream
from .sde import SdeSpec
from .signature import PiecewisePath, check_chen
from .symbolic import parse_expr

_ASSERT_FAILED = 5


# Floats are pre-rendered at 17 significant digits and smuggled through the
# JSON encoder as marked strings; the marks are stripped afterwards, leaving
# plain JSON numbers.  (The stdlib encoder offers no float-format hook.)
_FLOAT_MARK = "\x00f\x00"


def _wrap_floats(obj):
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        return f"{_FLOAT_MARK}{obj:.17g}{_FLOAT_MARK}"
    if isinstance(obj, dict):
        return {k: _wrap_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_wrap_floats(v) for v in obj]
    return obj


def _json_dumps(obj):
    text = json.dumps(_wrap_floats(obj), indent=2, sort_keys=True)
    mark = json.dumps(_FLOAT_MARK)[1:-1]
    return text.replace(f'"{mark}', "").replace(f'{mark}"', "")


def _resolved_config(args, command):
    cfg = {"command": command}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command_name"):
            continue
        if isinstance(value, Path):
            value = str(value)
        cfg[key] = value
    return cfg


def _output_path(out):
    if out is None:
        return None
    path = Path(out)
    outdir = os.environ.get("FBMSDE_OUTDIR")
    if outdir and not path.is_absolute() and path.parent == Path("."):
        path = Path(outdir) / path
    return path


def _emit(args, text, command):
    """Send results to --out or stdout; resolved config always rides along."""
    config_text = _json_dumps(_resolved_config(args, command)) + "\n"
    path = _output_path(args.out)
    if path is None:
        sys.stdout.write(text)
        sys.stderr.write(config_text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    Path(str(path) + ".config.json").write_text(config_text)
    print(f"wrote {path}")


def _require_seed(args):
    if args.seed is None:
        raise DomainError("this command is stochastic; --seed is required")


def _parse_word(text):
    try:
        word = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise DomainError(f"cannot parse word {text!r}; expected e.g. 1,2,1")
    if not word or any(c < 1 for c in word):
        raise DomainError("word letters are 1-based positive integers")
    return word


def _parse_point(text):
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise DomainError(f"cannot parse point {text!r}; expected e.g. 1.0,0.0")


def _parse_box(text):
    box = []
    for part in text.split(","):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise DomainError(
                f"cannot parse box {text!r}; expected lo:hi,lo:hi,.."
            )
        box.append((float(pieces[0]), float(pieces[1])))
    return box


# ---------------------------------------------------------------------------
# Commands.


def cmd_fbm_sample(args):
    _require_seed(args)
    grid = sample_fbm(args.hurst, args.mesh, args.dim, args.seed,
                      method=args.method)
    buf = io.StringIO()
    write_grid_csv(grid, buf)
    _emit(args, buf.getvalue(), "fbm sample")
    return 0


def cmd_moments(args):
    rows = []
    for text in args.word:
        word = _parse_word(text)
        if args.method == "closed":
            est = expected_iterated_closed_form(args.hurst, word)
        elif args.method == "wick":
            est = expected_iterated_wick(args.hurst, word)
        elif args.method == "interp":
            est = expected_iterated_interpolated(args.hurst, word, args.mesh)
        else:
            _require_seed(args)
            est = mc_expected_iterated(args.hurst, word, args.mesh,
                                       args.replicates, args.seed,
                                       threads=args.threads)
        rows.append(est)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["H", "word", "method", "value", "std_error",
                     "mesh_level", "replicates"])
    for est in rows:
        writer.writerow([
            f"{est.hurst:.17g}",
            ",".join(str(c) for c in est.word),
            est.method,
            f"{est.value:.17g}",
            f"{est.std_error:.17g}",
            "" if est.mesh_level is None else est.mesh_level,
            "" if est.replicates is None else est.replicates,
        ])
    _emit(args, buf.getvalue(), "moments")
    return 0


def cmd_gamma(args):
    fields = load_fields(Path(args.fields).read_text())
    if args.engine == "mc":
        _require_seed(args)
    gamma = build_gamma(args.k, args.hurst, fields, engine=args.engine,
                        mesh_level=args.mesh, replicates=args.replicates,
                        seed=args.seed, threads=args.threads)
    payload = {
        "k": args.k,
        "H": args.hurst,
        "engine": gamma.engine,
        "terms": [
            {
                "word": list(word),
                "coefficient": coeff,
                "se": None if gamma.coefficient_se is None
                else gamma.coefficient_se.get(word, 0.0),
            }
            for word, coeff in sorted(gamma.terms.items())
        ],
    }
    if args.k == 2 and args.hurst > 0.25:
        triple = gamma2_coefficients(args.hurst)
        payload["pairing_triple"] = list(triple.as_tuple())
    if args.format == "json":
        text = _json_dumps(payload) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["word", "coefficient", "se"])
        for term in payload["terms"]:
            writer.writerow([
                ",".join(str(c) for c in term["word"]),
                f"{term['coefficient']:.17g}",
                "" if term["se"] is None else f"{term['se']:.17g}",
            ])
        text = buf.getvalue()
    _emit(args, text, "gamma")
    return 0


def cmd_expand(args):
    _require_seed(args)
    fields = load_fields(Path(args.fields).read_text())
    f = parse_expr(args.function)
    x0 = _parse_point(args.x0)
    spec = SdeSpec.from_fields(fields, hurst=args.hurst, initial=x0)
    t_grid = geometric_grid(args.t_min, args.t_max, args.t_count)
    config = ValidationConfig(replicates=args.replicates, seed=args.seed,
                              mesh_level=args.mesh,
                              substeps_per_cell=args.substeps,
                              threads=args.threads, solver=args.solver)
    report = validate_expansion(spec, f, x=x0, n_terms=args.n_terms,
                                t_grid=t_grid, config=config,
                                engine=args.engine)
    if args.format == "json":
        text = _json_dumps(report.to_json_dict()) + "\n"
    else:
        buf = io.StringIO()
        report.write_csv(buf)
        text = buf.getvalue()
    _emit(args, text, "expand")
    if args.assert_:
        ok = report.verdict == "remainder below MC resolution" or (
            report.fitted_slope is not None
            and report.fitted_slope > 5.0 * args.hurst
        )
        if not ok:
            print(f"assertion failed: {report.verdict}", file=sys.stderr)
            return _ASSERT_FAILED
    return 0


def _build_measure(args, dimension):
    if args.measure == "circle":
        return uniform_circle(radius=args.radius, n_nodes=args.nodes)
    if args.measure == "point":
        if args.x0 is None:
            raise DomainError("point measures need --x0")
        return point_mass(_parse_point(args.x0))
    if args.box is None:
        raise DomainError("box measures need --box lo:hi,lo:hi,..")
    box = _parse_box(args.box)
    if args.density is None:
        return lebesgue_box(box, quad_order=args.order)
    return density_on_box(parse_expr(args.density), box,
                          quad_order=args.order)


def cmd_invariant(args):
    fields = load_fields(Path(args.fields).read_text())
    dimension = fields[0].dimension
    spec_x0 = [0.0] * dimension
    spec = SdeSpec.from_fields(fields, hurst=args.hurst, initial=spec_x0)
    mu = _build_measure(args, dimension)
    if args.functions is not None:
        functions = load_functions(Path(args.functions).read_text())
    else:
        functions = default_test_functions(dimension, degree=args.degree)
    if args.engine == "mc" or mu.kind == "sampler":
        _require_seed(args)
    result = invariant_residual(spec, mu, functions, args.kmax,
                                engine=args.engine, seed=args.seed,
                                mesh_level=args.mesh,
                                replicates=args.replicates,
                                threads=args.threads)
    if args.format == "json":
        payload = {
            "H": args.hurst,
            "k_max": args.kmax,
            "measure": args.measure,
            "functions": [str(g) for g in result.functions],
            "values": [[v for v in row] for row in result.values.tolist()],
            "errors": [[v for v in row] for row in result.errors.tolist()],
        }
        text = _json_dumps(payload) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "function_index", "value", "error"])
        for i, row in enumerate(result.values):
            for j, value in enumerate(row):
                writer.writerow([i + 1, j, f"{value:.17g}",
                                 f"{result.errors[i, j]:.17g}"])
        text = buf.getvalue()
    _emit(args, text, "invariant")
    if args.assert_:
        worst = float(np.max(np.abs(result.values)))
        if worst > args.tol:
            print(f"assertion failed: max |residual| = {worst:.3e} "
                  f"> {args.tol:.3e}", file=sys.stderr)
            return _ASSERT_FAILED
    return 0


def cmd_signature_check(args):
    _require_seed(args)
    if args.segments < 1:
        raise DomainError("need at least one segment")
    gen = stream(args.seed, TAG_SIGCHECK, 0)
    knots = np.linspace(0.0, 1.0, args.segments + 1)
    values = gen.standard_normal((args.segments + 1, args.dim))
    path = PiecewisePath(knots=knots, values=values)
    defect = check_chen(path, args.split, args.degree)
    payload = {
        "segments": args.segments,
        "degree": args.degree,
        "dim": args.dim,
        "split": args.split,
        "max_defect": defect,
    }
    _emit(args, _json_dumps(payload) + "\n", "signature-check")
    if args.assert_ and defect > args.tol:
        print(f"assertion failed: Chen defect {defect:.3e} > {args.tol:.3e}",
              file=sys.stderr)
        return _ASSERT_FAILED
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.


def _add_common(parser, *, seed=True, threads=True, fmt=None):
    parser.add_argument("--out", default=None,
                        help="output file (default: stdout; bare names land "
                             "in $FBMSDE_OUTDIR when set)")
    if seed:
        parser.add_argument("--seed", type=int, default=None,
                            help="RNG seed (required for stochastic runs)")
    if threads:
        parser.add_argument("--threads", type=int, default=1,
                            help="worker threads inside MC engines; never "
                                 "changes output values")
    if fmt is not None:
        parser.add_argument("--format", choices=("json", "csv"), default=fmt)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fbmsde",
        description="Small-time expansion toolkit for SDEs driven by "
                    "fractional Brownian motion.",
    )
    sub = parser.add_subparsers(dest="command_name")

    p_fbm = sub.add_parser("fbm", help="fractional Brownian motion utilities")
    fbm_sub = p_fbm.add_subparsers(dest="fbm_command")
    p_sample = fbm_sub.add_parser("sample", help="draw one path, dump CSV")
    p_sample.add_argument("--hurst", type=float, required=True)
    p_sample.add_argument("--mesh", type=int, required=True,
                          help="dyadic level m; the grid has 2^m + 1 nodes")
    p_sample.add_argument("--dim", type=int, default=1)
    p_sample.add_argument("--method", choices=("auto", "cholesky", "circulant"),
                          default="auto")
    _add_common(p_sample, threads=False)
    p_sample.set_defaults(func=cmd_fbm_sample)

    p_mom = sub.add_parser("moments", help="expected iterated integrals")
    p_mom.add_argument("--word", action="append", required=True,
                       help="comma-separated letters, e.g. 1,1,2,2; repeatable")
    p_mom.add_argument("--hurst", type=float, required=True)
    p_mom.add_argument("--method", choices=("closed", "wick", "interp", "mc"),
                       default="closed")
    p_mom.add_argument("--mesh", type=int, default=10)
    p_mom.add_argument("--replicates", type=int, default=100_000)
    _add_common(p_mom)
    p_mom.set_defaults(func=cmd_moments)

    p_gamma = sub.add_parser("gamma", help="expansion-operator coefficients")
    p_gamma.add_argument("--k", type=int, required=True)
    p_gamma.add_argument("--hurst", type=float, required=True)
    p_gamma.add_argument("--fields", required=True,
                         help="vector-field file (blank-line-separated blocks)")
    p_gamma.add_argument("--engine",
                         choices=("auto", "closed", "commutative", "mc"),
                         default="auto")
    p_gamma.add_argument("--mesh", type=int, default=10)
    p_gamma.add_argument("--replicates", type=int, default=100_000)
    _add_common(p_gamma, fmt="json")
    p_gamma.set_defaults(func=cmd_gamma)

    p_exp = sub.add_parser("expand",
                           help="validate the small-time expansion by MC")
    p_exp.add_argument("--n-terms", "--N", dest="n_terms", type=int, default=2)
    p_exp.add_argument("--hurst", type=float, required=True)
    p_exp.add_argument("--fields", required=True)
    p_exp.add_argument("--function", required=True,
                       help="observable, e.g. 'x2^2'")
    p_exp.add_argument("--x0", required=True, help="initial point, e.g. 1,0")
    p_exp.add_argument("--t-min", type=float, default=0.02)
    p_exp.add_argument("--t-max", type=float, default=0.3)
    p_exp.add_argument("--t-count", type=int, default=6)
    p_exp.add_argument("--replicates", type=int, required=True)
    p_exp.add_argument("--mesh", type=int, default=8)
    p_exp.add_argument("--substeps", type=int, default=2)
    p_exp.add_argument("--solver", choices=("wong_zakai", "commutative"),
                       default="wong_zakai")
    p_exp.add_argument("--engine",
                       choices=("auto", "closed", "commutative", "mc"),
                       default="auto")
    p_exp.add_argument("--assert", dest="assert_", action="store_true",
                       help="exit 5 unless the expansion order is confirmed")
    _add_common(p_exp, fmt="json")
    p_exp.set_defaults(func=cmd_expand)

    p_inv = sub.add_parser("invariant",
                           help="weak-form residuals of a candidate measure")
    p_inv.add_argument("--kmax", type=int, default=2)
    p_inv.add_argument("--hurst", type=float, required=True)
    p_inv.add_argument("--fields", required=True)
    p_inv.add_argument("--measure", choices=("circle", "box", "point"),
                       required=True)
    p_inv.add_argument("--radius", type=float, default=1.0)
    p_inv.add_argument("--nodes", type=int, default=256)
    p_inv.add_argument("--box", default=None, help="lo:hi,lo:hi,..")
    p_inv.add_argument("--density", default=None,
                       help="density expression for box measures "
                            "(default: normalized Lebesgue)")
    p_inv.add_argument("--order", type=int, default=64,
                       help="Gauss-Legendre order per axis for box measures")
    p_inv.add_argument("--x0", default=None, help="location for point measures")
    p_inv.add_argument("--functions", default=None,
                       help="test-function file (default: Hermite-windowed "
                            "dictionary)")
    p_inv.add_argument("--degree", type=int, default=4)
    p_inv.add_argument("--engine",
                       choices=("auto", "closed", "commutative", "mc"),
                       default="auto")
    p_inv.add_argument("--mesh", type=int, default=10)
    p_inv.add_argument("--replicates", type=int, default=100_000)
    p_inv.add_argument("--tol", type=float, default=1e-6)
    p_inv.add_argument("--assert", dest="assert_", action="store_true",
                       help="exit 5 if any |residual| exceeds --tol")
    _add_common(p_inv, fmt="json")
    p_inv.set_defaults(func=cmd_invariant)

    p_sig = sub.add_parser("signature-check",
                           help="Chen-identity defect of a random path")
    p_sig.add_argument("--segments", type=int, required=True)
    p_sig.add_argument("--degree", type=int, required=True)
    p_sig.add_argument("--split", type=float, required=True)
    p_sig.add_argument("--dim", type=int, default=2)
    p_sig.add_argument("--tol", type=float, default=1e-12)
    p_sig.add_argument("--assert", dest="assert_", action="store_true",
                       help="exit 5 if the defect exceeds --tol")
    _add_common(p_sig, threads=False)
    p_sig.set_defaults(func=cmd_signature_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, DivergenceError, TruncationError,
            ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
