"""``depca-lab``: config-driven batch runner.

Every subcommand reads one JSON configuration, writes CSV/JSON artifacts
into the output directory together with ``manifest.json``, and exits with
0 on success, 2 when a hypothesis of the theory fails on the window and 1
on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .core import CoefficientSpec, SequenceWindow, build_grid, compile_expression, demo_sequence, load_config, validate_system
from .errors import ConfigError, DepcaLabError, HypothesisFailure, WindowTooSmall
from .io import matrix_header, write_csv, write_json

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS = 0, 1, 2
SUBCOMMANDS = ("solve", "reduce", "dichotomy", "rap-scan", "perturb", "nonlinear", "lasota", "oracle-check")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="depca-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON configuration file")
        s.add_argument("-o", "--out", help="output directory (default: config 'output' or ./out-<command>)")
        s.add_argument("--m", type=int, help="grid points per unit interval")
        s.add_argument("--window", type=int, nargs=2, metavar=("START", "END"), help="integer window")
        s.add_argument("--tol", type=float)
        s.add_argument("--nu", type=float)
        s.add_argument("--gamma", type=float)
        s.add_argument("--epsilon", type=float)
        s.add_argument("--seed", type=int)
    return p


# ---------------------------------------------------------------------------
# configuration helpers
# ---------------------------------------------------------------------------


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    for key in ("tol", "seed"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    for section, key in (("perturb", "nu"), ("lasota", "gamma"), ("rap", "epsilon"), ("lasota", "epsilon")):
        val = getattr(args, key)
        if val is not None:
            cfg[section] = {**cfg.get(section, {}), key: val}
    for section in ("system", "lasota"):
        if section not in cfg:
            continue
        block = dict(cfg[section])
        w = dict(block.get("window", {}))
        if args.m is not None:
            w["m"] = args.m
        if args.window is not None:
            w["start"], w["end"] = args.window
        if w:
            block["window"] = w
        cfg[section] = block
    return cfg


def _section(cfg, name) -> dict:
    v = cfg.get(name, {})
    if not isinstance(v, dict):
        raise ConfigError(f"'{name}' must be an object")
    return v


def _window(block, what="window"):
    w = block.get("window")
    if not isinstance(w, dict) or "start" not in w or "end" not in w:
        raise ConfigError(f"{what} must be {{'start', 'end', 'm'}}")
    return build_grid(w["start"], w["end"], w.get("m", 10))


def _system(cfg):
    if "system" not in cfg:
        raise ConfigError("configuration has no 'system' section")
    spec = CoefficientSpec.from_dict(cfg["system"])
    grid = spec.grid()
    return validate_system(spec, grid), grid


def _vector_field(exprs, q: int, names: tuple[str, ...]):
    """Callable ``(t, x, y[, nu]) -> (S, q)`` from per-component expressions.

    Variables: the names in ``names`` (``t``, ``nu``), the components
    ``x0 .. x{q-1}``, ``y0 ..`` and, for q = 1, ``x`` and ``y``.
    """
    if isinstance(exprs, (str, int, float)):
        exprs = [exprs]
    if len(exprs) != q:
        raise ConfigError(f"expected {q} component expressions")
    comps = [f"x{i}" for i in range(q)] + [f"y{i}" for i in range(q)]
    extra = ("x", "y") if q == 1 else ()
    variables = tuple(names) + tuple(comps) + extra
    fns = [compile_expression(e, variables) for e in exprs]

    def field(t, x, y, *rest):
        t = np.asarray(t, dtype=float).reshape(-1)
        x = np.asarray(x, dtype=float).reshape(len(t), q)
        y = np.asarray(y, dtype=float).reshape(len(t), q)
        scalars = [np.broadcast_to(np.asarray(v, dtype=float), t.shape) for v in rest]
        vals = [t, *scalars, *x.T, *y.T]
        if q == 1:
            vals += [x[:, 0], y[:, 0]]
        return np.stack([f(*vals) for f in fns], axis=-1)

    return field


def _number_or_expression(v):
    if isinstance(v, (int, float)):
        return float(v)
    return compile_expression(v, ("t",))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_solve(cfg, out: Path) -> dict:
    from .depca import rap_solution

    system, grid = _system(cfg)
    sol = rap_solution(system, grid, cfg.get("tol", 1e-10), P=_section(cfg, "dichotomy").get("P"),
                       substeps=cfg.get("substeps", 4))
    sol.to_csv(out / "trajectory.csv")
    summary = {k: v for k, v in sol.meta.items()}
    summary["sup_norm"] = sol.sup_norm()
    write_json(out / "summary.json", summary)
    return {"sup_norm": sol.sup_norm()}


def cmd_reduce(cfg, out: Path) -> dict:
    from .reduction import reduce
    from .transition import build_kernels

    system, grid = _system(cfg)
    hk = build_kernels(system, grid, cfg.get("substeps", 4))
    disc = reduce(hk, system)
    disc.to_csv(out / "discrete.csv")
    hk.to_csv(out / "Z.csv", "Z")
    summary = {"window": list(disc.window), "K0": hk.transition.K0, "j_condition": hk.j_condition}
    write_json(out / "summary.json", summary)
    return summary


def cmd_dichotomy(cfg, out: Path) -> dict:
    from .dichotomy import bisummability_scan, detect_dichotomy
    from .reduction import DiscreteSystem, reduce
    from .transition import build_kernels

    block = _section(cfg, "dichotomy")
    if "C" in block:
        C = np.atleast_2d(np.asarray(block["C"], dtype=float))
        lo, hi = block.get("n_range", [-20, 20])
        disc = DiscreteSystem.constant_system(C, np.zeros(C.shape[0]), lo, hi)
    else:
        system, grid = _system(cfg)
        disc = reduce(build_kernels(system, grid, cfg.get("substeps", 4)), system)
    dd = detect_dichotomy(disc, block.get("P"))
    summary = dd.summary()
    taus = block.get("scan_taus")
    if taus:
        mid = (dd.n_min + dd.n_max) // 2
        try:
            table = bisummability_scan(dd, taus, [mid], tol=cfg.get("tol", 1e-10))
            table.to_csv(out / "bisummability.csv")
            summary["bisummability_proxy"] = table.proxy
        except WindowTooSmall as exc:
            summary["bisummability_proxy"] = f"skipped: {exc}"
    write_json(out / "dichotomy.json", summary)
    return {"alpha": dd.alpha, "K": dd.K}


def cmd_rap_scan(cfg, out: Path) -> dict:
    from .rap import SampledFunction, scan_function, scan_sequence

    block = _section(cfg, "rap")
    source = block.get("source", "demo")
    eps = float(block.get("epsilon", 0.5))
    T0, T = block.get("T0", 500), block.get("T", 2000)
    tau_max = int(block.get("tau_max", 100))
    L = block.get("density_bound")
    if source in ("demo", "sequence"):
        if source == "demo":
            fn = demo_sequence
        else:
            fn = compile_expression(block["expression"], ("n",))
        reach = int(T + tau_max)
        u = SequenceWindow.from_function(fn, -reach, reach)
        report = scan_sequence(u, eps, T0, tau_max, T, L)
    elif source in ("solution", "expression"):
        if source == "solution":
            from .depca import rap_solution

            system, grid = _system(cfg)
            samples = SampledFunction.from_solution(rap_solution(system, grid, cfg.get("tol", 1e-10), scan_taus=()))
        else:
            w = block.get("window") or {"start": -int(T + tau_max), "end": int(T + tau_max), "m": 10}
            grid = build_grid(w["start"], w["end"], w.get("m", 10))
            samples = SampledFunction.from_callable(compile_expression(block["expression"], ("t",)), grid)
        step = float(block.get("tau_step", 1))
        taus = np.arange(0, tau_max + 1e-12, step)
        report = scan_function(samples, eps, T0, taus, block.get("mode", "RAP"), T, L)
    else:
        raise ConfigError(f"unknown rap source {source!r}")
    report.to_csv(out / "rap_scan.csv")
    report.to_json(out / "rap_summary.json")
    return {"verdict": report.verdict, "accepted": len(report.taus_found)}


def _perturbation(block, q, seed):
    from .perturb import Perturbation

    if "g" not in block:
        raise ConfigError("perturb section needs an expression 'g'")
    field = _vector_field(block["g"], q, ("t", "nu"))
    g = lambda t, x, y, nu: field(t, x, y, nu)
    return Perturbation(g, float(block.get("nu", 0.1)), float(block.get("r", 1.0)), seed=seed,
                        samples=int(block.get("samples", 10_000)))


def cmd_perturb(cfg, out: Path) -> dict:
    from .dichotomy import bounded_solution, detect_dichotomy
    from .perturb import nu_ladder, solve_perturbed_depca, solve_perturbed_discrete, write_ladder
    from .reduction import DiscreteSystem, reduce

    block = _section(cfg, "perturb")
    seed = int(cfg.get("seed", 0))
    tol = float(block.get("tol", 1e-9))
    mode = block.get("mode", "depca")
    if mode == "discrete":
        if "C" in block:
            C = np.atleast_2d(np.asarray(block["C"], dtype=float))
            h = np.asarray(block.get("h", np.zeros(C.shape[0])), dtype=float).reshape(C.shape[0])
            lo, hi = block.get("n_range", [-60, 60])
            disc = DiscreteSystem.constant_system(C, h, lo, hi)
        else:
            from .transition import build_kernels

            system, grid = _system(cfg)
            disc = reduce(build_kernels(system, grid), system)
        dd = detect_dichotomy(disc)
        xi = bounded_solution(disc, dd, out="full")
        pert = _perturbation(block, disc.q, seed)

        def solve(nu):
            return solve_perturbed_discrete(disc, dd, pert.at(nu), xi, tol)

        psi = solve(pert.nu)
        write_csv(out / "solution.csv", ["n", *matrix_header("x", disc.q, False)],
                  [[n, *v] for n, v in zip(psi.ns, psi.values)])
    elif mode == "depca":
        from .depca import rap_solution
        from .transition import build_kernels

        system, grid = _system(cfg)
        xi = rap_solution(system, grid, cfg.get("tol", 1e-10), scan_taus=())
        hk = build_kernels(system, grid)
        dd = detect_dichotomy(reduce(hk, system))
        pert = _perturbation(block, system.q, seed)

        def solve(nu):
            return solve_perturbed_depca(system, xi, pert.at(nu), tol, hk=hk, dd=dd)

        psi = solve(pert.nu)
        psi.to_csv(out / "solution.csv")
    else:
        raise ConfigError("perturb mode must be 'discrete' or 'depca'")
    cert = psi.meta["certificate"]
    cert.to_json(out / "certificate.json")
    ladder = block.get("ladder")
    if ladder:
        write_ladder(out / "nu_ladder.csv", nu_ladder(solve, ladder))
    return {"kappa": cert.contraction_factor, "iterations": cert.iterations}


def cmd_nonlinear(cfg, out: Path) -> dict:
    from .depca import rap_solution
    from .perturb import solve_nonlinear

    block = _section(cfg, "nonlinear")
    system, grid = _system(cfg)
    if "f" not in block:
        raise ConfigError("nonlinear section needs an expression 'f'")
    f = _vector_field(block["f"], system.q, ("t",))
    # reference trajectory: bounded solution of the linear system in 'system'
    xi = rap_solution(system, grid, cfg.get("tol", 1e-10), scan_taus=())
    sol = solve_nonlinear(f, xi, float(block.get("tol", 1e-9)), float(block.get("r", 1.0)),
                          int(cfg.get("seed", 0)), int(block.get("samples", 10_000)))
    sol.to_csv(out / "solution.csv")
    cert = sol.meta["certificate"]
    cert.to_json(out / "certificate.json")
    return {"kappa": cert.contraction_factor, "iterations": cert.iterations}


def cmd_lasota(cfg, out: Path) -> dict:
    from .lasota import LasotaParams, ergodic_kernel_scan, gamma_sweep, rap_positive_solution, write_sweep

    block = _section(cfg, "lasota")
    params = LasotaParams(
        _number_or_expression(block.get("delta", 1.0)),
        _number_or_expression(block.get("p", 1.0)),
        float(block.get("gamma", 0.1)),
        delta_minus=block.get("delta_minus"),
    )
    grid = _window(block)
    tol = float(cfg.get("tol", 1e-10))
    eps = block.get("epsilon")
    sol = rap_positive_solution(params, grid, tol, rap_epsilon=eps)
    sol.to_csv(out / "trajectory.csv")
    summary = {k: v for k, v in sol.meta.items() if k != "residual_ratios"}
    summary["min"] = float(sol.values.min())
    summary["max"] = float(sol.values.max())
    write_json(out / "summary.json", summary)
    if block.get("gammas"):
        write_sweep(out / "gamma_sweep.csv", gamma_sweep(params, grid, block["gammas"], tol))
    if block.get("kernel_taus"):
        T = min(-grid.t_start, grid.t_end)
        scan = ergodic_kernel_scan(params.delta_fn, block["kernel_taus"], max(1, T // 4), T)
        scan.to_csv(out / "kernel_scan.csv")
    return {"gamma_star": sol.meta["gamma_star"], "min": summary["min"]}


def cmd_oracle_check(cfg, out: Path) -> dict:
    from .depca import oracle_suite

    block = _section(cfg, "oracle")
    rows = oracle_suite(int(block.get("cases", 50)), int(cfg.get("seed", 0)), int(block.get("m", 100)),
                        int(block.get("t_end", 10)), float(cfg.get("tol", 1e-10)))
    cols = ["a", "b", "c", "C", "error"]
    write_csv(out / "oracle.csv", cols, [[r[c] for c in cols] for r in rows])
    worst = max(r["error"] for r in rows)
    write_json(out / "summary.json", {"cases": len(rows), "max_error": worst})
    print(f"max error {worst:.3e} over {len(rows)} cases")
    return {"max_error": worst}


COMMANDS = {
    "solve": cmd_solve,
    "reduce": cmd_reduce,
    "dichotomy": cmd_dichotomy,
    "rap-scan": cmd_rap_scan,
    "perturb": cmd_perturb,
    "nonlinear": cmd_nonlinear,
    "lasota": cmd_lasota,
    "oracle-check": cmd_oracle_check,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out or cfg.get("output") or f"out-{args.command}")
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out)
        status = EXIT_OK
        message = None
    except HypothesisFailure as exc:
        print(f"error: {exc.describe()}", file=sys.stderr)
        result, status, message = None, EXIT_HYPOTHESIS, exc.describe()
    except (DepcaLabError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_json(
        out / "manifest.json",
        {
            "subcommand": args.command,
            "config": str(args.config),
            "output": str(out),
            "seed": cfg.get("seed", 0),
            "version": __version__,
            "backend": kernels.BACKEND,
            "exit_status": status,
            "error": message,
            "result": result,
            "wall_time": round(time.perf_counter() - start, 3),
        },
    )
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
