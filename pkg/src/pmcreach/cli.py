"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 parse or validation error, 3 undecidable
criterion, 4 precondition violated, 5 resource bound exhausted or unknown.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .case1 import approx_case1, qualitative_case1
from .case2 import approx_case2, qualitative_case2
from .chain import DEFAULT_EXACT_CAP
from .model import (CounterOverflow, ModelError, Pmc, PreconditionViolated, ResourceExhausted, classify_criterion,
                    make_config, make_criterion, z_all, z_minus)
from .sim import estimate_probability
from .textio import ParseError, model_hash, parse_pmc, write_report

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_UNDECIDABLE, EXIT_PRECONDITION, EXIT_RESOURCE = range(6)

_UNDECIDABLE = {
    "a": "reachability for criteria with a member of more than one counter is undecidable",
    "b": "reachability for criteria leaving two or more counters unconstrained is undecidable",
}


class UsageError(Exception):
    pass


class Undecidable(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- argument helpers ---------------------------------------------------------------

def _load(path: str) -> Pmc:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from e
    return parse_pmc(text)


def _start(pmc: Pmc, state: str | None, counters: str | None):
    if state is None:
        state = pmc.states[0]
    if state not in pmc.states:
        raise UsageError(f"unknown state {state!r}")
    if counters is None:
        vec = (1,) * pmc.dimension
    else:
        try:
            vec = tuple(int(x) for x in counters.split(","))
        except ValueError as e:
            raise UsageError(f"counters must be comma-separated integers, got {counters!r}") from e
    if len(vec) != pmc.dimension:
        raise UsageError(f"expected {pmc.dimension} counters, got {len(vec)}")
    if any(x < 0 for x in vec):
        raise UsageError("counters must be non-negative")
    return make_config(state, vec)


def parse_criterion(text: str, d: int):
    """``all``, ``minus:I``, ``none`` or explicit sets such as ``{1,2}`` or ``{1},{3}``."""
    text = text.strip()
    if text == "none":
        return None
    if text == "all":
        return z_all(d)
    m = re.fullmatch(r"minus:(\d+)", text)
    if m:
        i = int(m.group(1))
        if not 1 <= i <= d:
            raise UsageError(f"counter {i} out of range")
        return z_minus(d, i)
    body = text
    if body.startswith("{{") and body.endswith("}}"):
        body = body[1:-1]
    sets = re.findall(r"\{([^{}]*)\}", body)
    if not sets or re.sub(r"\{[^{}]*\}|[,\s]", "", body):
        raise UsageError(f"cannot read criterion {text!r}")
    try:
        return make_criterion([[int(x) for x in s.split(",") if x.strip()] for s in sets], d)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _check_decidable(z, d: int):
    cls = classify_criterion(d, z)
    if cls.kind == "undecidable":
        raise Undecidable(_UNDECIDABLE[cls.reason])
    return cls


# --- report helpers ---------------------------------------------------------------------

def _plain(x):
    """Turn analysis objects into JSON-friendly values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (Fraction, int, float, str, bool)) or x is None:
        return x
    if hasattr(x, "tolist"):
        return _plain(x.tolist())
    return str(x)


def _report(query: str, pmc: Pmc, path: str, start, result, witnesses=None, constants=None, diagnostics=None):
    return {
        "query": query,
        "model": {"name": pmc.name, "path": path, "hash": model_hash(pmc)},
        "initial": None if start is None else {"state": start.state, "counters": list(start.counters)},
        "result": _plain(result),
        "witnesses": _plain(witnesses or []),
        "constants": _plain(constants or {}),
        "diagnostics": _plain(diagnostics or {}),
        "version": __version__,
    }


def _bscc_constants(analyses) -> list:
    out = []
    for an in analyses:
        out.append({"component": list(an.component), "trend": list(an.trend),
                    "botfin": {str(j): {str(q): v for q, v in tab.items()} for j, tab in an.botfin.items()},
                    "diverging": list(an.diverging)})
    return out


def _oc_constants(analyses) -> list:
    out = []
    for an in analyses:
        out.append({"component": list(an.component), "t_oc": list(an.t_oc), "diverging": list(an.diverging),
                    "botinf": {str(j): {str(q): v for q, v in tab.items()} for j, tab in an.botinf.items()}})
    return out


def _num(x) -> str:
    if isinstance(x, Fraction):
        return f"{x} (~{float(x):.10g})" if x.denominator != 1 else str(x)
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.10g}"
    return str(x)


# --- commands ------------------------------------------------------------------------

def cmd_validate(args):
    pmc = _load(args.file)
    rep = _report("validate", pmc, args.file, None, {"valid": True, "dimension": pmc.dimension,
                                                      "states": len(pmc.states), "rules": len(pmc.rules),
                                                      "kind": pmc.kind})
    text = f"{args.file}: ok ({pmc.dimension} counters, {len(pmc.states)} states, {len(pmc.rules)} rules)"
    return rep, text, EXIT_OK


def _case1_qual(args, pmc, start):
    res = qualitative_case1(pmc, start, node_budget=args.node_budget)
    rep = _report("case1-qualitative", pmc, args.file, start, {"verdict": res.verdict},
                  witnesses=[res.witness] if res.witness else [], constants={"bsccs": _bscc_constants(res.analyses)},
                  diagnostics=res.diagnostics)
    return rep, f"verdict: {res.verdict}", EXIT_OK


def _case2_qual(args, pmc, start, i):
    res = qualitative_case2(pmc, start, i, search_bound=args.bound, node_budget=args.node_budget)
    rep = _report("case2-qualitative", pmc, args.file, start, {"verdict": res.verdict, "free_counter": i},
                  witnesses=[res.witness] if res.witness else [], constants={"components": _oc_constants(res.analyses)},
                  diagnostics=res.diagnostics)
    code = EXIT_RESOURCE if res.verdict == "unknown" else EXIT_OK
    return rep, f"verdict: {res.verdict}", code


def cmd_analyze_case1(args):
    pmc = _load(args.file)
    start = _start(pmc, args.state, args.counters)
    if args.criterion is not None:
        z = parse_criterion(args.criterion, pmc.dimension)
        cls = _check_decidable(z, pmc.dimension) if z is not None else None
        if cls is None or cls.kind != "case1":
            raise UsageError("case1-qual answers the criterion that stops on any zero counter; "
                             "use 'analyze reach' or 'case2 analyze' for other criteria")
    return _case1_qual(args, pmc, start)


def cmd_analyze_reach(args):
    pmc = _load(args.file)
    start = _start(pmc, args.state, args.counters)
    z = parse_criterion(args.criterion, pmc.dimension)
    if z is None:
        raise UsageError("a stopping criterion is required")
    cls = _check_decidable(z, pmc.dimension)
    if cls.kind == "case1":
        return _case1_qual(args, pmc, start)
    if pmc.dimension == 1:
        raise UsageError("criterion leaves the only counter unconstrained")
    return _case2_qual(args, pmc, start, cls.counter)


def cmd_approx_case1(args):
    pmc = _load(args.file)
    start = _start(pmc, args.state, args.counters)
    res = approx_case1(pmc, start, args.eps, relative=args.relative, exact_cap=args.exact_cap)
    rep = _report("case1-approx", pmc, args.file, start, {"nu": res.nu, "nu_float": float(res.nu), "eps": args.eps,
                                                          "relative": args.relative},
                  constants=res.constants, diagnostics=res.diagnostics)
    return rep, f"nu = {_num(res.nu)}  (eps = {args.eps:g}{', relative' if args.relative else ''})", EXIT_OK


def cmd_case2_analyze(args):
    pmc = _load(args.file)
    start = _start(pmc, args.state, args.counters)
    _check_free(pmc, args.free_counter)
    return _case2_qual(args, pmc, start, args.free_counter)


def cmd_case2_approx(args):
    pmc = _load(args.file)
    start = _start(pmc, args.state, args.counters)
    _check_free(pmc, args.free_counter)
    res = approx_case2(pmc, start, args.free_counter, args.eps, search_bound=args.bound)
    rep = _report("case2-approx", pmc, args.file, start, {"nu": res.nu, "nu_float": float(res.nu), "eps": args.eps,
                                                          "free_counter": args.free_counter},
                  constants=res.constants, diagnostics=res.diagnostics)
    return rep, f"nu = {_num(res.nu)}  (eps = {args.eps:g}, certified = {res.diagnostics.get('certified', True)})", EXIT_OK


def _check_free(pmc, i):
    if pmc.dimension < 2:
        raise UsageError("a free counter needs at least two counters")
    if not 1 <= i <= pmc.dimension:
        raise UsageError(f"free counter {i} out of range")


def cmd_simulate(args):
    pmc = _load(args.file)
    start = _start(pmc, args.state, args.counters)
    z = parse_criterion(args.criterion, pmc.dimension)
    if args.runs < 1 or args.max_steps < 0:
        raise UsageError("runs must be >= 1 and max-steps >= 0")
    est = estimate_probability(pmc, start, z, args.max_steps, args.runs, args.seed)
    rep = _report("simulate", pmc, args.file, start,
                  {"estimate": est.estimate, "ci95": list(est.ci), "runs": est.runs, "stopped": est.stopped,
                   "censored": est.censored},
                  constants={"seed": args.seed, "max_steps": args.max_steps, "criterion": args.criterion},
                  diagnostics={"backend": "numpy" if _numba_off() else "numba"})
    text = (f"stopped {est.stopped}/{est.runs} = {est.estimate:.6g}, 95% CI [{est.ci[0]:.6g}, {est.ci[1]:.6g}], "
            f"censored {est.censored}")
    return rep, text, EXIT_OK


def _numba_off() -> bool:
    from ._kernels import numba_disabled
    return numba_disabled()


# --- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # suppressed defaults let the global options appear before or after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="print a JSON report")
    common.add_argument("--exact-cap", type=int, default=argparse.SUPPRESS,
                        help=f"largest linear system solved in rational arithmetic (default {DEFAULT_EXACT_CAP})")

    def start_opts(p):
        p.add_argument("file")
        p.add_argument("--state", help="initial control state (default: first declared)")
        p.add_argument("--counters", help="comma-separated initial counters (default: all ones)")
        p.add_argument("--node-budget", type=int, default=200_000)

    parser = _Parser(prog="pmcreach", description="Termination analysis for probabilistic multi-counter systems.",
                     parents=[common])
    parser.add_argument("--version", action="version", version=f"pmcreach {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("validate", parents=[common], help="parse and check a model file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    an = sub.add_parser("analyze", help="qualitative analysis").add_subparsers(dest="what", parser_class=_Parser,
                                                                               required=True)
    p = an.add_parser("case1-qual", parents=[common], help="is hitting a zero counter almost sure")
    start_opts(p)
    p.add_argument("--criterion", help="optional explicit criterion (must stop on every zero counter)")
    p.set_defaults(func=cmd_analyze_case1)
    p = an.add_parser("reach", parents=[common], help="almost-sure stopping under an explicit criterion")
    start_opts(p)
    p.add_argument("--criterion", required=True, help="all, minus:I or sets like {1},{2}")
    p.add_argument("--bound", type=int, default=64, help="search bound on the free counter")
    p.set_defaults(func=cmd_analyze_reach)

    ap = sub.add_parser("approx", help="quantitative approximation").add_subparsers(dest="what", parser_class=_Parser,
                                                                                    required=True)
    p = ap.add_parser("case1", parents=[common], help="probability of hitting a zero counter")
    start_opts(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--relative", action="store_true", help="interpret eps as a relative error")
    p.set_defaults(func=cmd_approx_case1)

    c2 = sub.add_parser("case2", help="analyses with one free counter").add_subparsers(dest="what",
                                                                                        parser_class=_Parser,
                                                                                        required=True)
    p = c2.add_parser("analyze", parents=[common], help="is stopping almost sure when counter I is ignored")
    start_opts(p)
    p.add_argument("--free-counter", type=int, required=True)
    p.add_argument("--bound", type=int, default=64, help="search bound on the free counter")
    p.set_defaults(func=cmd_case2_analyze)
    p = c2.add_parser("approx", parents=[common], help="stopping probability when counter I is ignored")
    start_opts(p)
    p.add_argument("--free-counter", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--bound", type=int, default=64)
    p.set_defaults(func=cmd_case2_approx)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate of the stopping probability")
    start_opts(p)
    p.add_argument("--criterion", default="all", help="all, minus:I, none or sets like {1},{2}")
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--max-steps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    as_json = False
    try:
        args = parser.parse_args(argv)
        as_json = getattr(args, "json", False)
        args.exact_cap = getattr(args, "exact_cap", DEFAULT_EXACT_CAP)
        rep, text, code = args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except Undecidable as e:
        print(f"undecidable: {e}", file=sys.stderr)
        return EXIT_UNDECIDABLE
    except PreconditionViolated as e:
        print(f"precondition violated: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ModelError as e:
        print(f"invalid model: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ResourceExhausted, CounterOverflow) as e:
        print(f"resource bound exhausted: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    print(write_report(rep) if as_json else text)
    return code


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
