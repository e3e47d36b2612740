"""Command-line runner: ``sinkflow [--config C] [--seed S] [--out-dir D] <command>``.

Commands: ``solve``, ``flow``, ``stochastic``, ``bridge``, ``plot`` and
``certify``. Exit codes: 0 success, 1 usage or config error, 2 a
non-convergence or failed-verdict flag, 3 numerical degeneracy.
Thread count for seed and particle sweeps: ``SINKFLOW_NUM_THREADS``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bridge, certify, flow, io, kernels, plotting, sinkhorn, stochastic
from .config import ConfigError, ExperimentConfig, load_config
from .measures import ConvergenceError, DegeneracyError, ParameterError, StructureError, total_variation

EXIT_OK, EXIT_CONFIG, EXIT_FLAG, EXIT_DEGENERATE = 0, 1, 2, 3

SOLVE_COLUMNS = ["iter", "t", "gamma", "objective", "marginal_err_x", "marginal_err_y", "breg_to_opt"]
FLOW_COLUMNS = SOLVE_COLUMNS + ["rate_product", "rate_constant", "rate_ok"]
SUMMARY_COLUMNS = [
    "experiment", "gamma", "n_iters", "n_seeds", "bound", "empirical", "std_err", "ratio",
    "sigma2_hat", "sigma2_full", "bound_full", "kl_ref", "converged_fraction", "rng",
]


def _say(msg: str) -> None:
    print(msg, flush=True)


def _short(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else io.fmt(v)


def _outputs(cfg: ExperimentConfig, out_dir: Path, default_stem: str):
    o = cfg.section("output")
    csv_path = out_dir / o.get("csv_path", f"{default_stem}.csv")
    svg = o.get("svg_path")
    return csv_path, (out_dir / svg if svg else None)


def _sibling(path: Path, suffix: str, ext: str | None = None) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{ext or path.suffix}")


def _write_svg(path, x, series, title, xlabel, logy=False) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(plotting.line_chart(x, series, title, xlabel, logy))


def _sub_seed(seed: int, key: int) -> int:
    return int(np.random.SeedSequence([seed, key]).generate_state(1, np.uint64)[0])


def cmd_solve(cfg: ExperimentConfig, out_dir: Path) -> int:
    ref = cfg.reference()
    res = sinkhorn.solve_reference(ref, cfg.solver_config())
    csv_path, svg_path = _outputs(cfg, out_dir, "solve")
    rows = [[getattr(r, c) for c in SOLVE_COLUMNS] for r in res.trace]
    io.write_csv(csv_path, SOLVE_COLUMNS, rows)
    its = [r.iter for r in res.trace]
    _write_svg(svg_path, its, {"objective": [r.objective for r in res.trace]}, "objective", "iteration", logy=True)
    _say(f"solve: status={res.status} iterations={res.n_iter} objective={res.trace[-1].objective:.3e}")
    return {"converged": EXIT_OK, "max_iter": EXIT_FLAG}.get(res.status, EXIT_DEGENERATE)


def _flow_rows(traj, ref, g_opt, report):
    bound = report.constant * (1.0 + report.rtol) + report.atol
    rows = []
    for t, g in zip(traj.times, traj.potentials):
        n = int(round(t / traj.dt))
        rec = sinkhorn._record(n, float(t), traj.dt, g, ref)
        prod = float(t) * rec.objective
        rows.append([n, float(t), traj.dt, rec.objective, rec.marginal_err_x, rec.marginal_err_y,
                     sinkhorn.bregman_dual(g, g_opt, ref), prod, report.constant, t == 0 or prod <= bound])
    return rows


def cmd_flow(cfg: ExperimentConfig, out_dir: Path) -> int:
    ref = cfg.reference()
    f = cfg.section("flow")
    opt = sinkhorn.solve_reference(ref, sinkhorn.SolverConfig(sinkhorn.StepSchedule.constant(1.0), max_iter=100_000, tol=1e-14))
    if not opt.converged:
        _say(f"flow: reference solve did not converge ({opt.status})")
        return EXIT_FLAG if opt.status == "max_iter" else EXIT_DEGENERATE
    g_opt = opt.potentials.g
    start = f.get("start", "reference")
    if start not in ("reference", "optimum"):
        raise cfg.error("flow.start must be 'reference' or 'optimum'", "flow", "start")
    g0 = g_opt if start == "optimum" else np.zeros(ref.shape[1])
    csv_path, svg_path = _outputs(cfg, out_dir, "flow")
    traj = flow.integrate(g0, ref, cfg.integrator_config())
    report = flow.rate_certificate(traj, g_opt, ref)
    io.write_csv(csv_path, FLOW_COLUMNS, _flow_rows(traj, ref, g_opt, report))
    summary = [
        ("method", traj.method), ("status", traj.status), ("constant_primary", report.constant_primary),
        ("constant_swapped", report.constant_swapped), ("worst_ratio", report.worst_ratio),
        ("max_increase", traj.max_increase), ("rate_pass", report.passed),
    ]
    series = {"t*objective": report.products, "constant": np.full(report.times.size, report.constant)}
    code = EXIT_OK
    if "compare_method" in f:
        other_cfg = cfg.integrator_config(f["compare_method"], f.get("compare_dt"))
        other = flow.integrate(g0, ref, other_cfg)
        other_rep = flow.rate_certificate(other, g_opt, ref)
        io.write_csv(_sibling(csv_path, other_cfg.method), FLOW_COLUMNS, _flow_rows(other, ref, g_opt, other_rep))
        # potentials are defined up to a constant, compare gauge-fixed
        gap = float(np.max(np.abs(sinkhorn.gauge_fix(other.potentials[-1], ref) - sinkhorn.gauge_fix(traj.potentials[-1], ref))))
        summary.append(("final_g_gap", gap))
        _say(f"flow: final g gap {traj.method} vs {other_cfg.method} = {gap:.3e}")
        if other.status != "ok":
            code = EXIT_DEGENERATE
        elif not other_rep.passed:
            code = EXIT_FLAG
    io.write_csv(_sibling(csv_path, "summary"), ["key", "value"], summary)
    _write_svg(svg_path, report.times, series, "rate check", "t")
    _say(f"flow: rate_pass={report.passed} worst_ratio={report.worst_ratio:.3g} constant={report.constant:.6g}")
    if traj.status != "ok":
        return EXIT_DEGENERATE
    if not report.passed or traj.max_increase > 1e-10:
        return EXIT_FLAG
    return code


def _trace_rows(runs, schedule, every):
    rows = []
    for r in runs:
        t = 0.0
        for n, obj in enumerate(r.objectives):
            if n % every == 0 or n == r.objectives.size - 1:
                rows.append([r.seed, n, t, schedule(n), obj])
            t += schedule(n)
    return rows


def cmd_stochastic(cfg: ExperimentConfig, out_dir: Path) -> int:
    seed = cfg.require_seed()
    ref = cfg.reference()
    s = cfg.section("stochastic")
    experiment = s.get("experiment", "constant_step")
    model = cfg.noise_model(seed)
    csv_path, svg_path = _outputs(cfg, out_dir, "stochastic")
    n_iters, n_seeds = int(s.get("n_iters", 2000)), int(s.get("n_seeds", 200))
    every = int(s.get("record_every", max(n_iters // 20, 1)))
    summary, code = [], EXIT_OK
    try:
        if experiment == "constant_step":
            run_cfg = stochastic.StochasticRunConfig(cfg.schedule("stochastic", stochastic.StepSchedule.constant(0.05)), n_iters, n_seeds, "ergodic")
            res = stochastic.run_constant_step(ref, run_cfg, model)
            runs = res.runs
            summary.append(_constant_row("constant_step", res, n_seeds))
            if s.get("optimized_step", False):
                g_star = stochastic.optimal_constant_step(res.kl_ref, res.sigma2_hat, n_iters)
                opt_cfg = stochastic.StochasticRunConfig(stochastic.StepSchedule.constant(g_star), n_iters, n_seeds, "ergodic")
                summary.append(_constant_row("optimized_step", stochastic.run_constant_step(ref, opt_cfg, model), n_seeds))
            code = EXIT_OK if all(r[7] <= 1.0 for r in summary) else EXIT_FLAG
        elif experiment == "robbins_monro":
            schedule = cfg.schedule("stochastic", stochastic.StepSchedule.harmonic(1.0, 1.0))
            run_cfg = stochastic.StochasticRunConfig(schedule, n_iters, n_seeds, "last_iterate")
            tol = float(s.get("tol", 1e-3))
            res = stochastic.run_robbins_monro(ref, run_cfg, model, tol)
            runs = res.runs
            summary.append(_rm_row("robbins_monro", res, run_cfg))
            if s.get("negative_control", False):
                control = stochastic.NoiseModel(model.sigma_noise, float(s.get("negative_bias_scale", 0.5)), 0.0, model.seed)
                summary.append(_rm_row("negative_control", stochastic.run_robbins_monro(ref, run_cfg, control, tol), run_cfg))
            code = EXIT_OK if res.converged_fraction == 1.0 else EXIT_FLAG
        else:
            raise cfg.error("stochastic.experiment must be 'constant_step' or 'robbins_monro'", "stochastic", "experiment")
    except ParameterError as exc:
        raise cfg.error(str(exc), "stochastic") from None
    io.write_csv(csv_path, ["seed", "iter", "t", "gamma", "objective"], _trace_rows(runs, run_cfg.gamma, every))
    io.write_csv(_sibling(csv_path, "summary"), SUMMARY_COLUMNS, summary)
    objs = np.mean([r.objectives for r in runs], axis=0)
    its = np.arange(objs.size)
    keep = (its % every == 0) | (its == objs.size - 1)
    _write_svg(svg_path, its[keep], {"mean objective": objs[keep]}, experiment, "iteration", logy=True)
    for row in summary:
        _say("stochastic: " + " ".join(f"{k}={_short(v)}" for k, v in zip(SUMMARY_COLUMNS, row) if v != ""))
    return code


def _constant_row(name, res, n_seeds):
    return [name, res.gamma, res.n_iters, n_seeds, res.bound, res.mean_kl, res.std_err, res.ratio,
            res.sigma2_hat, res.sigma2_full, res.bound_full, res.kl_ref, "", res.rng]


def _rm_row(name, res, run_cfg):
    finals = res.final_objectives
    return [name, "", run_cfg.n_iters, run_cfg.n_seeds, res.tol, float(np.mean(finals)), "", "",
            "", "", "", "", res.converged_fraction, res.rng]


def cmd_bridge(cfg: ExperimentConfig, out_dir: Path) -> int:
    seed = cfg.require_seed()
    problem = cfg.bridge_problem()
    b = cfg.section("bridge")
    t_grid = np.linspace(float(b.get("t_min", 0.01)), float(b.get("t_max", 0.99)), int(b.get("nt", 99)))
    n_particles, n_steps = int(b.get("n_particles", 100_000)), int(b.get("n_steps", 200))
    csv_path, svg_path = _outputs(cfg, out_dir, "bridge")
    z = problem.grid
    try:
        pot = bridge.static_bridge(problem)
    except ConvergenceError as exc:
        _say(f"bridge: {exc}")
        return EXIT_FLAG
    try:
        v = bridge.lift_drift(pot.g, problem, t_grid)
    except ParameterError as exc:
        raise cfg.error(str(exc), "bridge") from None
    out_dir.mkdir(parents=True, exist_ok=True)
    _sibling(csv_path, "drift", ".txt").write_text(v.to_text())
    fwd = bridge.simulate_em(v, problem.mu0, n_particles, n_steps, _sub_seed(seed, 0), sigma_diff=problem.sigma_diff)
    _sibling(csv_path, "ensemble", ".txt").write_text(fwd.to_text())
    summary = [("static_objective", sinkhorn.objective(pot.g, pot.reference)),
               ("tv_forward", fwd.tv_to(problem.muT.weights, z))]
    snaps = [float(t) for t in b.get("snapshots", [t_grid[0], 0.25, 0.5, 0.75, t_grid[-1]])]
    idx = [int(np.argmin(np.abs(t_grid - t))) for t in snaps]
    io.write_csv(_sibling(csv_path, "snapshots"), ["z"] + [f"b_t{t_grid[k]:.4g}" for k in idx],
                 [[zz] + [v.values[k, j] for k in idx] for j, zz in enumerate(z)])
    if b.get("reversal", True):
        pi = pot.coupling()
        w = bridge.reversal_drift(v, pi, sigma_diff=problem.sigma_diff)
        gap = float(np.max(np.abs(bridge.reversal_drift(w, pi, sigma_diff=problem.sigma_diff).values - v.values)[:, 1:-1]))
        back = bridge.simulate_em(w, problem.muT, n_particles, n_steps, _sub_seed(seed, 1),
                                  sigma_diff=problem.sigma_diff, time_flip=True)
        summary += [("involution_gap", gap), ("tv_reverse", back.tv_to(problem.mu0.weights, z))]
    value_rows = []
    gammas = [float(x) for x in b.get("value_gammas", [])]
    if gammas:
        t0, x0 = float(b.get("value_t", 0.3)), float(b.get("value_x", 0.0))
        ratio = bridge.DriftField(t_grid, z, np.full(v.values.shape, float(b.get("value_score", 1.0))))
        for k, gam in enumerate(gammas):
            for e, est in enumerate(("feynman_kac", "killed")):
                ve = bridge.value_function_mc(x0, t0, v, ratio, gam, problem.sigma_diff, int(b.get("value_samples", 10_000)),
                                              int(b.get("value_steps", 100)), _sub_seed(seed, 10 + 2 * k + e), est)
                value_rows.append([gam, t0, x0, est, ve.mean, ve.std_err, ve.n_samples])
        io.write_csv(_sibling(csv_path, "value"), ["gamma", "t", "x", "estimator", "V", "std_err", "n_samples"], value_rows)
    if "gamma_ipf" in b:
        gam = float(b["gamma_ipf"])
        step = bridge.gamma_ipf_step(problem, np.zeros(z.size), gam, t_grid, int(b.get("ipf_t_nodes", 15)),
                                     int(b.get("ipf_z_nodes", 41)), int(b.get("ipf_samples", 1000)), seed=_sub_seed(seed, 2))
        ens = bridge.simulate_em(step.drift, problem.mu0, n_particles, n_steps, _sub_seed(seed, 3), sigma_diff=problem.sigma_diff)
        summary += [("gamma_ipf", gam), ("tv_gamma_ipf", ens.tv_to(step.target_masses(), z)),
                    ("max_value", float(np.max(step.value)))]
    io.write_csv(csv_path, ["metric", "value"], summary)
    hist = fwd.histogram(z)
    _write_svg(svg_path, z, {"simulated": hist, "target": problem.muT.weights}, "terminal marginal", "z")
    for k, val in summary:
        _say(f"bridge: {k}={_short(val)}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        header, body = io.read_csv(args.csv)
    except (OSError, StructureError) as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not body:
        print(f"plot: {args.csv} has no data rows", file=sys.stderr)
        return EXIT_CONFIG
    cols = [c for c in args.columns.split(",") if c]
    xcol = args.x or header[0]
    missing = [c for c in cols + [xcol] if c not in header]
    if missing or not cols:
        print(f"plot: missing column(s) {missing or '(none given)'} in {args.csv}", file=sys.stderr)
        return EXIT_CONFIG

    def col(name):
        k = header.index(name)
        return np.array([float(r[k]) if r[k] != "" else np.nan for r in body])

    try:
        svg = plotting.line_chart(col(xcol), {c: col(c) for c in cols}, args.title or "", xlabel=xcol, logy=args.logy)
    except ValueError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.svg)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    return EXIT_OK


def cmd_certify(args, out_dir: Path) -> int:
    numbers = sorted({int(x) for x in args.criteria.split(",")}) if args.criteria else None
    if numbers and any(n not in certify.CHECKS for n in numbers):
        print(f"certify: criteria must be in 1..{len(certify.CHECKS)}", file=sys.stderr)
        return EXIT_CONFIG
    _say(f"certify: kernel backend {kernels.BACKEND}")
    results = certify.run(numbers, echo=_say)
    io.write_csv(out_dir / "certify.csv", ["criterion", "title", "passed"],
                 [[c.number, c.title, c.passed and c.in_time] for c in results])
    return EXIT_OK if all(c.passed and c.in_time for c in results) else EXIT_FLAG


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment file (TOML)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides output.seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs (default: .)")
    p = argparse.ArgumentParser(prog="sinkflow", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "run the Sinkhorn iteration"), ("flow", "integrate the flow and check the rate"),
                           ("stochastic", "noisy-gradient experiments"), ("bridge", "1D bridge sandbox")):
        sub.add_parser(name, parents=[common], help=helptext)
    pp = sub.add_parser("plot", parents=[common], help="SVG line chart from a CSV")
    pp.add_argument("--csv", required=True)
    pp.add_argument("--columns", required=True, help="comma-separated y columns")
    pp.add_argument("--x", default=None, help="x column (default: first column)")
    pp.add_argument("--svg", required=True)
    pp.add_argument("--title", default=None)
    pp.add_argument("--logy", action="store_true")
    pc = sub.add_parser("certify", parents=[common], help="run acceptance checks")
    pc.add_argument("--criteria", default=None, help="comma-separated criterion numbers (default: all)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    out_dir = Path(getattr(args, "out_dir", None) or ".")
    if args.command == "plot":
        return cmd_plot(args)
    if args.command == "certify":
        return cmd_certify(args, out_dir)
    config_path = getattr(args, "config", None)
    try:
        if config_path is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg = load_config(config_path)
        if getattr(args, "seed", None) is not None:
            cfg.data.setdefault("output", {})["seed"] = args.seed
        handler = {"solve": cmd_solve, "flow": cmd_flow, "stochastic": cmd_stochastic, "bridge": cmd_bridge}[args.command]
        return handler(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_FLAG
    except DegeneracyError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ParameterError, StructureError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
