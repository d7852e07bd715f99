"""Command-line front end: ``declqg synth | simulate | verify | bench``.

Exit codes: 0 success, 1 invalid input (problem/gains files), 2 solver
failure, 3 oracle disagreement, 4 scaling assertion failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings

import numpy as np

from . import files
from .blocktri import solve_block_tridiagonal
from .centralized import solve_centralized
from .controller import CentralizedController, TwoPlayerController
from .errors import (
    ConsistencyError,
    DeclqgError,
    EliminationSingular,
    IllConditioned,
    ParseError,
    PivotFailure,
    SchemaError,
    SingularHessian,
    SingularInnovation,
    ValidationError,
)
from .montecarlo import estimate_cost
from .oracles import (
    disturbance_feedback_optimum,
    evaluate_policy_cost,
    fixed_point_gains,
    pbp_perturbation_check,
)
from .problem import BlockDims, load_spec, random_instance, validate
from .synthesis import (
    assemble_boundary_system,
    coupled_residuals,
    decoupled_schedules,
    synthesize,
)

log = logging.getLogger("declqg")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_ORACLE, EXIT_SCALING = 0, 1, 2, 3, 4
SOLVER_ERRORS = (SingularInnovation, SingularHessian, EliminationSingular, PivotFailure,
                 ConsistencyError)

QP_RTOL = 1e-6
GAIN_ATOL = 1e-7
PERTURB_RTOL = 1e-10
RESIDUAL_TOL = 1e-9


class InputError(Exception):
    pass


def _load_problem(path):
    try:
        return validate(load_spec(path))
    except (ParseError, SchemaError, ValidationError, OSError) as exc:
        raise InputError(f"{type(exc).__name__}: {exc}") from None


def _load_gains(path, spec):
    try:
        gf = files.load_gains(path)
    except (ParseError, SchemaError, OSError) as exc:
        raise InputError(f"{type(exc).__name__}: {exc}") from None
    why = gf.mismatch(spec)
    if why:
        raise InputError(f"gains file does not match problem: {why}")
    return gf


def cmd_synth(args) -> int:
    spec = _load_problem(args.problem)
    if args.method == "tridiag":
        syn = synthesize(spec)
        cen, gains, res = syn.centralized, syn.gains, syn.residuals
    else:
        cen = solve_centralized(spec)
        out = fixed_point_gains(spec, tol=args.tol, max_iter=args.max_iter, centralized=cen)
        if not out.converged:
            print(f"NonConvergence: fixed point not reached after {out.iterations} "
                  f"iteration(s) (last change {out.change:.3e})")
            return EXIT_SOLVER
        print(f"fixed point converged in {out.iterations} iteration(s)")
        gains = out.gains
        res = coupled_residuals(spec, cen, gains)
    print(f"J0      = {cen.J0:.12g}")
    print(f"J_hat0  = {gains.JHat0:.12g}")
    print(f"max coupled-recursion residual = {res.max:.3e} "
          f"(Sigma_hat {res.sigma_hat:.1e}, L_hat {res.l_hat:.1e}, "
          f"P_hat {res.p_hat:.1e}, K_hat {res.k_hat:.1e})")
    if args.out:
        files.save_gains(args.out, spec, cen, gains, method=args.method)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load_problem(args.problem)
    gf = _load_gains(args.gains, spec)
    if args.controller == "centralized":
        cen = solve_centralized(spec)
        ctrl = CentralizedController(spec, cen)
        target = gf.J0
    else:
        try:
            ctrl = TwoPlayerController(spec, gf.schedule)
        except ValidationError as exc:
            raise InputError(str(exc)) from None
        target = gf.J_hat0
    rep = estimate_cost(spec, ctrl, args.rollouts, args.seed)
    z = abs(rep.mean_cost - target) / rep.stderr if rep.stderr > 0 else float("inf")
    print(f"controller {rep.controller}: mean cost {rep.mean_cost:.6g} +/- {rep.stderr:.3g} "
          f"(N={rep.rollouts}, seed={rep.seed})")
    print(f"|mean - predicted| / stderr = {z:.3f} (predicted {target:.10g})")
    if args.out:
        rep.save(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def cmd_verify(args) -> int:
    spec = _load_problem(args.problem)
    cen = solve_centralized(spec)
    syn = None
    if args.gains:
        gf = _load_gains(args.gains, spec)
        schedule = gf.schedule
        try:
            schedule.check_structure(spec.dims)
        except ValidationError as exc:
            raise InputError(str(exc)) from None
        J_claim = evaluate_policy_cost(spec, schedule)
        label = "provided gains"
    else:
        syn = synthesize(spec)
        schedule = None
        J_claim = syn.gains.JHat0
        label = "synthesized J_hat0"
    oracles = ["qp", "fixedpoint", "perturb"] if args.oracle == "all" else [args.oracle]
    results = []

    if "qp" in oracles:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", IllConditioned)
            qp = disturbance_feedback_optimum(spec)
        for w in caught:
            print(f"warning: {w.message}")
        err = abs(qp.cost - J_claim)
        results.append(_report(
            "qp", err <= QP_RTOL * (1 + abs(J_claim)),
            f"optimum {qp.cost:.12g} vs {label} {J_claim:.12g} (|diff| {err:.3e})"))

    if "fixedpoint" in oracles:
        out = fixed_point_gains(spec, tol=args.tol, max_iter=args.max_iter, centralized=cen)
        if not out.converged:
            print(f"[WARN] fixedpoint: NonConvergence after {out.iterations} iteration(s); "
                  "inconclusive")
        else:
            ref_K = schedule.KHat if schedule is not None else syn.gains.KHat
            ref_L = schedule.LHat if schedule is not None else syn.gains.LHat
            diff = max(np.abs(out.gains.KHat - ref_K).max(), np.abs(out.gains.LHat - ref_L).max())
            results.append(_report(
                "fixedpoint", diff <= GAIN_ATOL,
                f"{out.iterations} iteration(s), max gain difference {diff:.3e}"))

    if "perturb" in oracles:
        if schedule is None:
            from .controller import two_player_schedule
            schedule = two_player_schedule(cen, syn.gains)
        dec = pbp_perturbation_check(spec, schedule, args.eps, args.trials, args.seed)
        results.append(_report(
            "perturb", dec <= PERTURB_RTOL * (1 + abs(J_claim)),
            f"largest cost decrease {dec:.3e} over {args.trials} trials per player"))

    return EXIT_OK if all(results) else EXIT_ORACLE


def time_assemble_solve(spec, repeats: int = 3):
    """Best-of-``repeats`` wall time of boundary assembly plus block solve."""
    cen = solve_centralized(spec)
    dec = decoupled_schedules(spec)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        system = assemble_boundary_system(spec, cen, dec)
        eta = solve_block_tridiagonal(system)
        best = min(best, time.perf_counter() - t0)
    return best, system.residual(eta)


def run_bench(horizons, dims: BlockDims, seed: int = 0, repeats: int = 3):
    rows = []
    for T in horizons:
        spec = validate(random_instance(seed, dims, T))
        elapsed, res = time_assemble_solve(spec, repeats)
        rows.append((T, elapsed, res))
    return rows


def scaling_ratio(rows):
    """Time ratio of the two largest horizons, normalized to a doubling."""
    (T1, t1, _), (T2, t2, _) = sorted(rows)[-2:]
    return (t2 / t1) * (2.0 * T1 / T2)


def _horizon_list(text):
    try:
        hs = [int(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid horizon list {text!r}") from None
    if not hs or any(h < 1 for h in hs):
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return sorted(set(hs))


def cmd_bench(args) -> int:
    dims = BlockDims(args.n1, args.n2, args.m1, args.m2, args.p1, args.p2)
    rows = run_bench(args.horizons, dims, seed=args.seed, repeats=args.repeats)
    print(f"{'T':>8} {'seconds':>12} {'residual':>12}")
    for T, el, res in rows:
        print(f"{T:>8d} {el:>12.4f} {res:>12.2e}")
    if args.assert_linear and len(rows) >= 2:
        r = scaling_ratio(rows)
        ok = r <= 2.5
        print(f"time(2T)/time(T) for the largest pair: {r:.3f} "
              f"({'ok' if ok else 'exceeds 2.5'})")
        if not ok:
            return EXIT_SCALING
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="declqg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="compute optimal two-player gains")
    s.add_argument("--problem", required=True)
    s.add_argument("--out")
    s.add_argument("--method", choices=["tridiag", "fixedpoint"], default="tridiag")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=500)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="Monte Carlo cost estimate")
    s.add_argument("--problem", required=True)
    s.add_argument("--gains", required=True)
    s.add_argument("--rollouts", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--controller", choices=["two-player", "centralized"], default="two-player")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run independent optimality oracles")
    s.add_argument("--problem", required=True)
    s.add_argument("--gains", help="check these gains instead of synthesizing")
    s.add_argument("--oracle", choices=["qp", "fixedpoint", "perturb", "all"], default="all")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("bench", help="time the boundary-value solve against T")
    s.add_argument("--horizons", type=_horizon_list, required=True)
    s.add_argument("--assert-linear", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=3)
    for k, v in (("n1", 2), ("n2", 2), ("m1", 1), ("m2", 1), ("p1", 2), ("p2", 2)):
        s.add_argument(f"--{k}", type=int, default=v)
    s.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "rollouts", 2) < 2:
        print("error: --rollouts must be at least 2", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DeclqgError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
