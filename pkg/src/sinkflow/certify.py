"""Acceptance checks, one function per criterion.

Each check returns a :class:`Check` carrying the verdict, the measured
quantities and the wall time. ``run`` executes a selection and formats one
line per check.
"""
from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bridge, flow, instances, sinkhorn, stochastic
from .measures import kl_divergence

LIMITS = {1: 5, 2: 10, 3: 5, 4: 30, 5: 120, 6: 120, 7: 5, 8: 60, 9: 60, 10: 300, 11: 60}
TITLES = {
    1: "unit step equals classical Sinkhorn",
    2: "dual and primal updates agree",
    3: "coupling derivative matches finite differences",
    4: "1/t rate along the flow",
    5: "fixed-step noisy bound",
    6: "decreasing-step last iterate",
    7: "Bregman gap equals swapped KL",
    8: "bridge transport and reversal",
    9: "value function estimators",
    10: "step-size IPF drift cross-check",
    11: "byte-identical CLI reruns",
}
SUITE_SEED = 20240611


@dataclass
class Check:
    number: int
    passed: bool
    metrics: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def title(self) -> str:
        return TITLES[self.number]

    @property
    def limit(self) -> float:
        return LIMITS[self.number]

    @property
    def in_time(self) -> bool:
        return self.elapsed <= self.limit

    def line(self) -> str:
        verdict = "PASS" if self.passed and self.in_time else "FAIL"
        parts = ", ".join(f"{k}={_short(v)}" for k, v in self.metrics.items())
        return f"[{verdict}] criterion {self.number:2d}: {self.title} ({parts}; {self.elapsed:.1f}s of {self.limit}s)"


def _short(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3g}"
    return str(v)


def _random_g(rng, ref, scale=1.0):
    return scale * rng.standard_normal(ref.shape[1])


def check_unit_step() -> dict:
    rng = np.random.default_rng(SUITE_SEED + 1)
    gap = 0.0
    for ref in instances.random_suite(SUITE_SEED, 20):
        g = _random_g(rng, ref)
        gap = max(gap, float(np.max(np.abs(sinkhorn.gamma_step_dual(g, 1.0, ref) - sinkhorn.classical_step(g, ref)))))
    return {"passed": gap < 1e-12, "sup_gap": gap}


def check_dual_primal() -> dict:
    rng = np.random.default_rng(SUITE_SEED + 2)
    gap = 0.0
    for ref in instances.random_suite(SUITE_SEED, 20):
        g = _random_g(rng, ref)
        pi = sinkhorn.coupling_from_g(g, ref)
        for gamma in (0.1, 0.5, 0.9, 1.0):
            a = sinkhorn.gamma_step_primal(pi, gamma, ref).log_density
            b = sinkhorn.coupling_from_g(sinkhorn.gamma_step_dual(g, gamma, ref), ref).log_density
            gap = max(gap, float(np.max(np.abs(a - b))))
    return {"passed": gap < 1e-10, "sup_gap": gap}


def check_derivative(h: float = 1e-4) -> dict:
    rng = np.random.default_rng(SUITE_SEED + 3)
    gap = 0.0
    for ref in instances.random_suite(SUITE_SEED + 3, 10):
        g = _random_g(rng, ref, 0.5)
        lp0 = sinkhorn.coupling_from_g(g, ref).log_density
        lp1 = sinkhorn.coupling_from_g(sinkhorn.gamma_step_dual(g, h, ref), ref).log_density
        gap = max(gap, float(np.max(np.abs((lp1 - lp0) / h - flow.primal_velocity(g, ref)))))
    return {"passed": gap < 5e-4, "sup_gap": gap}


def rate_suite() -> list:
    rng = np.random.default_rng(SUITE_SEED + 4)
    return [
        ("symmetric_2x2", instances.symmetric_2x2()),
        ("asymmetric_2x2", instances.asymmetric_2x2()),
        ("random_2x2_eps0.1", instances.random_instance(rng, 2, 2, 0.1)),
        ("random_2x2_eps2", instances.random_instance(rng, 2, 2, 2.0)),
        ("random_20x20_eps0.1", instances.random_instance(rng, 20, 20, 0.1)),
    ]


def _optimum(ref):
    res = sinkhorn.solve_reference(ref, sinkhorn.SolverConfig(sinkhorn.StepSchedule.constant(1.0), max_iter=100_000, tol=1e-14))
    return res.potentials.g


def check_rate(dt: float = 0.01, t_end: float = 100.0) -> dict:
    cfg = flow.IntegratorConfig("euler", dt, t_end, dt)
    worst, max_inc, ok = 0.0, 0.0, True
    for _, ref in rate_suite():
        traj = flow.integrate(np.zeros(ref.shape[1]), ref, cfg)
        rep = flow.rate_certificate(traj, _optimum(ref), ref, rtol=1e-6, atol=1e-12)
        ok &= rep.passed and traj.ok
        worst = max(worst, rep.worst_ratio)
        max_inc = max(max_inc, traj.max_increase)
    return {"passed": ok and max_inc <= 1e-10, "worst_ratio": worst, "max_increase": max_inc}


def constant_step_setup():
    return (
        instances.asymmetric_2x2(),
        stochastic.StochasticRunConfig(sinkhorn.StepSchedule.constant(0.05), 2000, 200, "ergodic"),
        stochastic.NoiseModel(sigma_noise=0.2, seed=SUITE_SEED + 5),
    )


def check_constant_step() -> dict:
    ref, cfg, model = constant_step_setup()
    res = stochastic.run_constant_step(ref, cfg, model)
    return {
        "passed": res.passed,
        "empirical": res.mean_kl,
        "bound": res.bound,
        "ratio": res.ratio,
        "sigma2_hat": res.sigma2_hat,
    }


def robbins_monro_setup():
    rng = np.random.default_rng(SUITE_SEED + 6)
    cfg = stochastic.StochasticRunConfig(sinkhorn.StepSchedule.harmonic(1.0, 1.0), 10_000, 100, "last_iterate")
    model = stochastic.NoiseModel(sigma_noise=0.3, bias_scale=0.5, bias_decay=1.0, seed=SUITE_SEED + 6)
    return [("asymmetric_2x2", instances.asymmetric_2x2()), ("random_20x20_eps0.1", instances.random_instance(rng, 20, 20, 0.1))], cfg, model


def check_robbins_monro() -> dict:
    problems, cfg, model = robbins_monro_setup()
    out, ok = {}, True
    control = stochastic.NoiseModel(model.sigma_noise, model.bias_scale, 0.0, model.seed)
    for name, ref in problems:
        frac = stochastic.run_robbins_monro(ref, cfg, model).converged_fraction
        out[f"fraction_{name}"] = frac
        ok &= frac == 1.0
    out["control_fraction"] = stochastic.run_robbins_monro(problems[0][1], cfg, control).converged_fraction
    return {"passed": ok, **out}


def check_isometry() -> dict:
    rng = np.random.default_rng(SUITE_SEED + 7)
    refs = instances.random_suite(SUITE_SEED + 7, 10, sizes=(2, 30))
    gap = 0.0
    for k in range(50):
        ref = refs[k % len(refs)]
        ga, gb = _random_g(rng, ref), _random_g(rng, ref)
        pa = np.exp(sinkhorn.coupling_from_g(ga, ref).log_density)
        pb = np.exp(sinkhorn.coupling_from_g(gb, ref).log_density)
        gap = max(gap, abs(sinkhorn.bregman_dual(ga, gb, ref) - kl_divergence(pb, pa)))
    return {"passed": gap < 1e-10, "max_gap": gap}


def bridge_t_grid():
    return np.linspace(0.01, 0.99, 99)


def check_bridge(seed: int = SUITE_SEED + 8) -> dict:
    problem = bridge.gaussian_problem()
    pot = bridge.static_bridge(problem)
    v = bridge.lift_drift(pot.g, problem, bridge_t_grid())
    fwd = bridge.simulate_em(v, problem.mu0, 100_000, 200, seed)
    tv_fwd = fwd.tv_to(problem.muT.weights, problem.grid)
    pi = pot.coupling()
    w = bridge.reversal_drift(v, pi)
    invol = float(np.max(np.abs(bridge.reversal_drift(w, pi).values - v.values)[:, 1:-1]))
    back = bridge.simulate_em(w, problem.muT, 100_000, 200, seed + 1, time_flip=True)
    tv_back = back.tv_to(problem.mu0.weights, problem.grid)
    return {
        "passed": tv_fwd < 0.05 and invol < 1e-8 and tv_back < 0.05,
        "tv_forward": tv_fwd,
        "involution_gap": invol,
        "tv_reverse": tv_back,
    }


def _flat_field(value, t_grid=None, z_grid=None):
    t = np.linspace(0.0, 0.99, 100) if t_grid is None else t_grid
    z = np.linspace(-4.0, 4.0, 81) if z_grid is None else z_grid
    return bridge.DriftField(t, z, np.full((t.size, z.size), float(value)))


def check_value_function(seed: int = SUITE_SEED + 9) -> dict:
    zero = _flat_field(0.0)
    a, t = 2.0, 0.3
    ratio = _flat_field(a)
    exact_zero = all(
        bridge.value_function_mc(0.1, t, zero, ratio, g, 1.0, 1000, 50, seed, est).mean == 0.0
        for g in (0.0, 1.0)
        for est in bridge.ESTIMATORS
    )
    closed = a * a * (1.0 - t) / 8.0
    fk = bridge.value_function_mc(0.1, t, zero, ratio, 0.5, 1.0, 10_000, 100, seed, "feynman_kac")
    kd = bridge.value_function_mc(0.1, t, zero, ratio, 0.5, 1.0, 10_000, 100, seed + 1, "killed")
    closed_ok = abs(fk.mean - closed) <= 3 * fk.std_err + 1e-12 and abs(kd.mean - closed) <= 3 * kd.std_err
    tg, zg = np.linspace(0.0, 0.99, 100), np.linspace(-4.0, 4.0, 81)
    base = bridge.DriftField(tg, zg, np.tile(-zg, (tg.size, 1)))
    shaped = bridge.DriftField(tg, zg, np.tile(1.5 * np.tanh(zg), (tg.size, 1)))
    fk2 = bridge.value_function_mc(0.5, 0.2, base, shaped, 0.5, 1.0, 10_000, 100, seed + 2, "feynman_kac")
    kd2 = bridge.value_function_mc(0.5, 0.2, base, shaped, 0.5, 1.0, 10_000, 100, seed + 3, "killed")
    gap = abs(fk2.mean - kd2.mean)
    agree = gap <= 3 * math.hypot(fk2.std_err, kd2.std_err)
    return {
        "passed": exact_zero and closed_ok and agree,
        "zero_exact": exact_zero,
        "closed_form": closed,
        "fk": fk.mean,
        "killed": kd.mean,
        "agree_gap": gap,
        "agree_3se": 3 * math.hypot(fk2.std_err, kd2.std_err),
    }


def check_gamma_ipf(seed: int = SUITE_SEED + 10, gamma: float = 0.5) -> dict:
    problem = bridge.gaussian_problem()
    step = bridge.gamma_ipf_step(problem, np.zeros(problem.grid.size), gamma, bridge_t_grid(), seed=seed)
    ens = bridge.simulate_em(step.drift, problem.mu0, 100_000, 200, seed + 1)
    tv = ens.tv_to(step.target_masses(), problem.grid)
    return {"passed": tv < 0.1, "tv": tv, "max_V": float(np.max(step.value))}


DETERMINISM_CONFIGS = {
    "solve": """
epsilon = 0.5
[problem]
kind = "inline"
mu = [0.3, 0.7]
nu = [0.6, 0.4]
cost = [[0.0, 1.0], [1.0, 0.0]]
[solver]
schedule = "constant"
gamma = 0.5
max_iter = 500
tol = 1e-12
[output]
csv_path = "solve.csv"
svg_path = "solve.svg"
seed = 1
""",
    "flow": """
epsilon = 0.5
[problem]
kind = "inline"
mu = [0.3, 0.7]
nu = [0.6, 0.4]
cost = [[0.0, 1.0], [1.0, 0.0]]
[flow]
method = "euler"
dt = 0.1
t_end = 50.0
record_dt = 0.1
compare_method = "rk4"
[output]
csv_path = "flow.csv"
svg_path = "flow.svg"
seed = 1
""",
    "stochastic": """
epsilon = 0.5
[problem]
kind = "inline"
mu = [0.3, 0.7]
nu = [0.6, 0.4]
cost = [[0.0, 1.0], [1.0, 0.0]]
[noise]
sigma_noise = 0.2
[stochastic]
experiment = "constant_step"
schedule = "constant"
gamma = 0.05
n_iters = 500
n_seeds = 20
record_every = 50
[output]
csv_path = "stochastic.csv"
svg_path = "stochastic.svg"
seed = 7
""",
    "bridge": """
[problem]
kind = "gaussian-1d"
m = 101
mean0 = -1.0
var0 = 0.25
meanT = 1.0
varT = 0.25
extent = 4.0
[bridge]
nt = 50
n_particles = 5000
n_steps = 50
reversal = false
value_gammas = [0.0, 0.5, 1.0]
value_samples = 500
[output]
csv_path = "bridge.csv"
svg_path = "bridge.svg"
seed = 11
""",
}


def check_determinism() -> dict:
    from . import cli

    def run_all(root: Path) -> dict:
        files = {}
        for name, text in DETERMINISM_CONFIGS.items():
            d = root / name
            d.mkdir()
            (d / "config.toml").write_text(text.lstrip())
            code = cli.main(["--config", str(d / "config.toml"), "--out-dir", str(d / "out"), name])
            if code not in (0, 2):
                raise RuntimeError(f"{name} exited with {code}")
            if name == "solve":
                cli.main(["plot", "--csv", str(d / "out" / "solve.csv"), "--columns", "objective,marginal_err_y",
                          "--x", "iter", "--svg", str(d / "out" / "plot.svg")])
            for p in sorted((d / "out").rglob("*")):
                if p.is_file():
                    files[str(p.relative_to(root))] = p.read_bytes()
        return files

    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        with contextlib.redirect_stdout(io.StringIO()):
            first, second = run_all(Path(a)), run_all(Path(b))
    differing = sorted(k for k in first if first[k] != second.get(k))
    same_set = set(first) == set(second)
    return {"passed": same_set and not differing and bool(first), "files": len(first), "differing": len(differing)}


CHECKS = {
    1: check_unit_step,
    2: check_dual_primal,
    3: check_derivative,
    4: check_rate,
    5: check_constant_step,
    6: check_robbins_monro,
    7: check_isometry,
    8: check_bridge,
    9: check_value_function,
    10: check_gamma_ipf,
    11: check_determinism,
}


def run_check(number: int) -> Check:
    start = time.perf_counter()
    out = dict(CHECKS[number]())
    elapsed = time.perf_counter() - start
    passed = bool(out.pop("passed"))
    return Check(number, passed, out, elapsed)


def run(numbers=None, echo=print) -> list:
    results = []
    for n in sorted(numbers or CHECKS):
        c = run_check(n)
        if echo is not None:
            echo(c.line())
        results.append(c)
    return results
