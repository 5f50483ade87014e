"""Command-line front end: simulate, build-chain, analyze, fit, compare.

Reports are JSON objects carrying ``schema_version`` and the resolved
configuration.  Exit codes: 0 success, 1 numerical failure, 2 usage or input
error; failures print a JSON error object on stderr.
"""

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import blocks, kernel, markov, maxent, simulator, stats
from .params import ParamsError, load_params

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _report(command, config, body):
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": config, **body}


def _dump_json(obj):
    return json.dumps(obj, indent=2) + "\n"


def _dump_csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, rows)
    elif isinstance(value, (list, tuple)):
        for k, v in enumerate(value):
            _flatten(f"{prefix}[{k}]", v, rows)
    else:
        rows.append([prefix, value])


def _write_report(report, args):
    if getattr(args, "format", "json") == "csv":
        rows = [["key", "value"]]
        _flatten("", report, rows)
        _emit(_dump_csv(rows), args.out)
    else:
        _emit(_dump_json(report), args.out)


def _constants(params):
    vc = kernel.variation_constants(params)
    nf = kernel.no_fire_step_bounds(params)
    return {
        "K": vc.k_const,
        "K_prime": vc.k_prime,
        "a": vc.a_bound,
        "b": vc.b_bound,
        "pi_minus": nf.pi_minus,
        "pi_plus": nf.pi_plus,
    }


# --- simulate -------------------------------------------------------------------


def cmd_simulate(args):
    params = load_params(args.params)
    burn = simulator.default_burn_in(params.leak) if args.burn_in is None else args.burn_in
    out = simulator.run(params, args.steps, args.seed, burn, keep_traces=args.traces is not None)
    text = blocks.format_raster(out.raster)
    if args.out is None:
        sys.stdout.write(text)
        return
    Path(args.out).write_text(text)
    if args.traces is not None:
        simulator.write_traces(out.traces, args.traces)
    config = {
        "params": params.to_dict(),
        "steps": args.steps,
        "seed": args.seed,
        "burn_in": burn,
        "out": args.out,
        "traces": args.traces,
    }
    body = {"rates": stats.empirical_rates(out.raster).tolist()}
    sys.stdout.write(_dump_json(_report("simulate", config, body)))


# --- build-chain ----------------------------------------------------------------


def cmd_build_chain(args):
    params = load_params(args.params)
    chain = markov.build_chain(params, args.R)
    markov.write_chain(chain, args.out)
    config = {"params": params.to_dict(), "R": args.R, "out": args.out}
    body = {"n_states": chain.n_states, "transitions": int(chain.log_weights.size)}
    sys.stdout.write(_dump_json(_report("build-chain", config, body)))


# --- analyze --------------------------------------------------------------------


def _parse_density(tokens):
    spec = {"neuron": 1, "grid": "auto"}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"--density expects key=value items, got {tok!r}")
        key, value = tok.split("=", 1)
        if key not in spec:
            raise UsageError(f"unknown --density key {key!r}")
        spec[key] = value
    try:
        spec["neuron"] = int(spec["neuron"])
    except ValueError:
        raise UsageError("--density neuron must be an integer") from None
    return spec


def _density_grid(spec, analysis, chain):
    grid = spec["grid"]
    if grid == "auto":
        return markov.density_grid(analysis, chain, spec["neuron"] - 1)
    try:
        lo, hi, n = grid.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise UsageError(f"grid must be 'auto' or lo:hi:n, got {grid!r}") from None


def cmd_analyze(args):
    params = load_params(args.params)
    chain = markov.build_chain(params, args.R)
    analysis = markov.stationary(chain)
    body = {"analysis": analysis.to_dict(args.measure), "constants": _constants(params)}
    if args.gibbs_len is not None:
        c1, c2 = markov.gibbs_ratio_bounds(analysis, chain, args.gibbs_len)
        body["gibbs_bounds"] = {"max_len": args.gibbs_len, "c1": c1, "c2": c2}
    density = None
    if args.density is not None:
        spec = _parse_density(args.density)
        if not 1 <= spec["neuron"] <= params.n_neurons:
            raise UsageError(f"--density neuron must be in 1..{params.n_neurons}")
        grid = _density_grid(spec, analysis, chain)
        values = markov.membrane_density(analysis, chain, spec["neuron"] - 1, grid)
        density = [["v", "density"]] + [[repr(float(g)), repr(float(d))] for g, d in zip(grid, values)]
        body["density"] = {
            "neuron": spec["neuron"],
            "points": int(grid.size),
            "integral": float(trapezoid(values, grid)),
        }
        if args.density_out is not None:
            Path(args.density_out).write_text(_dump_csv(density))
    config = {
        "params": params.to_dict(),
        "R": args.R,
        "measure": args.measure,
        "density": args.density,
        "gibbs_len": args.gibbs_len,
        "format": args.format,
    }
    report = _report("analyze", config, body)
    if args.format == "csv" and density is not None and args.density_out is None:
        _emit(_dump_csv(density), args.out)
    else:
        _write_report(report, args)


# --- fit ------------------------------------------------------------------------


def _read_numbers(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"targets not found: {path}")
    text = " ".join(ln.split("#", 1)[0] for ln in path.read_text().splitlines())
    try:
        return np.array([float(tok) for tok in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ValueError(f"bad number in {path}: {exc}") from None


def _read_monomials(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"monomials not found: {path}")
    out = []
    for ln in path.read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if ln:
            out.append(maxent.parse_monomial(ln))
    return out


def _resolve_monomials(spec, n_neurons):
    if spec == "bernoulli":
        return maxent.bernoulli_monomials(n_neurons)
    if spec == "pairwise":
        return maxent.pairwise_monomials(n_neurons)
    return _read_monomials(spec)


def _infer_neurons(spec, n_targets):
    if spec == "bernoulli":
        return n_targets
    if spec == "pairwise":
        n = int(round((np.sqrt(8 * n_targets + 1) - 1) / 2))
        if n * (n + 1) // 2 == n_targets:
            return n
        raise UsageError(f"{n_targets} targets do not match a pairwise model")
    raise UsageError("--neurons is required with a monomial file and explicit targets")


def _raster_targets(raster, monomials, depth):
    n = raster.n_neurons
    words = blocks.sliding_words(raster.codes, depth + 1, n)
    design = maxent.design_matrix(monomials, n, depth)
    counts = np.bincount(words, minlength=design.shape[0])
    return counts @ design / words.size


def cmd_fit(args):
    if (args.targets is None) == (args.raster is None):
        raise UsageError("give exactly one of --targets and --raster")
    raster = None
    if args.raster is not None:
        raster = blocks.read_raster(args.raster)
        n = raster.n_neurons
    else:
        targets = _read_numbers(args.targets)
        n = args.neurons or _infer_neurons(args.monomials, targets.size)
    monomials = _resolve_monomials(args.monomials, n)
    canon = [m.canonical() for m in monomials]
    depth = max([args.R] + [m.depth for m in canon])
    if raster is not None:
        targets = _raster_targets(raster, canon, depth)
    result = maxent.fit(targets, monomials, n, depth, tol=args.tol, max_iter=args.max_iter)
    body = {"fit": result.to_dict()}
    ref = None
    if args.reference is not None:
        ref = load_params(args.reference)
        if ref.n_neurons != n:
            raise ValueError("reference network has a different number of neurons")
        ref_depth = args.reference_R or max(depth, 1)
        chain = markov.build_chain(ref, ref_depth)
        analysis = markov.stationary(chain)
        body["divergence"] = maxent.model_divergence(analysis, chain, result.potential)
        body["reference_R"] = ref_depth
    if args.potential_out is not None:
        maxent.write_potential(result.potential, args.potential_out)
    config = {
        "monomials": args.monomials,
        "targets": args.targets,
        "raster": args.raster,
        "n_neurons": n,
        "R": depth,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "reference": None if ref is None else ref.to_dict(),
    }
    _write_report(_report("fit", config, body), args)


# --- compare --------------------------------------------------------------------


def cmd_compare(args):
    params = load_params(args.params)
    chain = markov.build_chain(params, args.R)
    analysis = markov.stationary(chain)
    body = {"entropy": analysis.entropy}
    if args.raster is not None:
        raster = blocks.read_raster(args.raster)
        d, avg, h = stats.kl_terms(raster, analysis, chain)
        body["raster"] = {"divergence": d, "mean_potential": avg, "entropy_rate": h}
    if args.potential is not None:
        pot = maxent.read_potential(args.potential)
        body["potential"] = {"divergence": maxent.model_divergence(analysis, chain, pot)}
    if args.fine_R is not None:
        if args.fine_R < args.R:
            raise UsageError("--fine-R must be >= --R")
        fine = markov.build_chain(params, args.fine_R)
        vc = kernel.variation_constants(params)
        body["range"] = {
            "fine_R": args.fine_R,
            "divergence": markov.kl_divergence(analysis, chain, fine),
            "bound": vc.k_prime * params.leak**args.R,
        }
    if len(body) == 1:
        raise UsageError("compare needs --raster, --potential or --fine-R")
    config = {
        "params": params.to_dict(),
        "R": args.R,
        "raster": args.raster,
        "potential": args.potential,
        "fine_R": args.fine_R,
    }
    _write_report(_report("compare", config, body), args)


# --- entry point ----------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="lifgibbs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="simulate the network and write a raster")
    p.add_argument("--params", required=True)
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=_nonneg_int, default=None)
    p.add_argument("--out", default=None, help="raster file (default: stdout)")
    p.add_argument("--traces", default=None, help="CSV file for membrane potentials")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-chain", help="write the range-R transition table")
    p.add_argument("--params", required=True)
    p.add_argument("--R", type=_positive_int, required=True)
    p.add_argument("--out", required=True, help="text dump, or .npz")
    p.set_defaults(func=cmd_build_chain)

    p = sub.add_parser("analyze", help="stationary analysis of the range-R chain")
    p.add_argument("--params", required=True)
    p.add_argument("--R", type=_positive_int, default=4)
    p.add_argument("--measure", action="store_true", help="include the word measure")
    p.add_argument("--density", nargs="+", metavar="KEY=VALUE", default=None)
    p.add_argument("--density-out", default=None)
    p.add_argument("--gibbs-len", type=_positive_int, default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="maximum-entropy fit of monomial averages")
    p.add_argument("--monomials", required=True, help="bernoulli, pairwise or a file")
    p.add_argument("--targets", default=None)
    p.add_argument("--raster", default=None)
    p.add_argument("--neurons", type=_positive_int, default=None)
    p.add_argument("--R", type=_positive_int, default=1)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=_positive_int, default=20_000)
    p.add_argument("--reference", default=None, help="params of a reference network")
    p.add_argument("--reference-R", type=_positive_int, default=None)
    p.add_argument("--potential-out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="divergence of rasters or models from a network chain")
    p.add_argument("--params", required=True)
    p.add_argument("--R", type=_positive_int, default=4)
    p.add_argument("--raster", default=None)
    p.add_argument("--potential", default=None)
    p.add_argument("--fine-R", type=_positive_int, default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": message, "kind": kind, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        return _fail(2, "usage", str(exc))
    except (markov.ConvergenceError, maxent.FitError) as exc:
        return _fail(1, "numerical", str(exc))
    except FileNotFoundError as exc:
        return _fail(2, "input", str(exc))
    except (ParamsError, ValueError, OSError) as exc:
        return _fail(2, "input", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
