"""Step-size generalized Sinkhorn driven by noisy and biased gradients.

Two experiments are provided. ``run_constant_step`` uses a fixed step and
an unbiased oracle, and compares the seed-averaged KL of the ergodic
Y-marginal with ``KL(pi* || pi_ref) / (gamma n) + gamma sigma^2``.
``run_robbins_monro`` uses a decreasing schedule with vanishing bias and
reports how many seeds bring the last iterate below a tolerance.

Every seed owns a Philox stream keyed by ``(model.seed, seed index)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._parallel import ordered_map
from .measures import ParameterError, ReferenceCoupling, kl_divergence
from .sinkhorn import (
    SolverConfig,
    StepSchedule,
    _check_g,
    first_variation,
    optimal_coupling_kl,
    solve_reference,
)

RNG_NAME = "numpy.random.Philox"
AVERAGING = ("ergodic", "last_iterate")


@dataclass(frozen=True)
class NoiseModel:
    """Gradient perturbation ``lambda_n + omega_n``.

    ``omega_n`` is i.i.d. Gaussian with per-coordinate scale
    ``sigma_noise``; ``lambda_n = bias_scale * (n + 1) ** -bias_decay``
    times the alternating pattern ``(+1, -1, +1, ...)``.
    """

    sigma_noise: float = 0.0
    bias_scale: float = 0.0
    bias_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma_noise >= 0 and self.bias_scale >= 0 and self.bias_decay >= 0):
            raise ParameterError("noise scales and bias decay must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    @staticmethod
    def pattern(m: int) -> np.ndarray:
        return np.where(np.arange(m) % 2 == 0, 1.0, -1.0)

    def bias(self, n: int, m: int) -> np.ndarray:
        return self.bias_scale * (n + 1.0) ** (-self.bias_decay) * self.pattern(m)

    def bias_rows(self, n_iters: int, m: int) -> np.ndarray:
        scale = self.bias_scale * (np.arange(n_iters) + 1.0) ** (-self.bias_decay)
        return scale[:, None] * self.pattern(m)[None, :]

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(self.seed), int(stream)])))


@dataclass(frozen=True)
class StochasticRunConfig:
    gamma: StepSchedule = StepSchedule.constant(0.05)
    n_iters: int = 2000
    n_seeds: int = 200
    averaging: str = "ergodic"

    def __post_init__(self):
        if self.averaging not in AVERAGING:
            raise ParameterError(f"averaging must be one of {AVERAGING}")
        if self.n_iters < 1 or self.n_seeds < 1:
            raise ParameterError("n_iters and n_seeds must be positive")
        if (self.averaging == "ergodic") != (self.gamma.kind == "constant"):
            raise ParameterError("ergodic averaging goes with a constant step, last_iterate with a schedule")


def noisy_gradient(g, ref: ReferenceCoupling, model: NoiseModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``log(pi_Y / nu) + lambda_n + omega_n`` at the coupling built from ``g``."""
    fv = first_variation(g, ref)
    out = fv + model.bias(n, fv.size)
    if model.sigma_noise > 0:
        out = out + model.sigma_noise * rng.standard_normal(fv.size)
    return out


def _noise(model: NoiseModel, stream: int, n_iters: int, m: int) -> np.ndarray:
    rng = model.rng(stream)
    if model.sigma_noise > 0:
        return model.sigma_noise * rng.standard_normal((n_iters, m))
    return np.zeros((n_iters, m))


@dataclass
class SeedRun:
    seed: int
    objectives: np.ndarray
    g_final: np.ndarray
    ergodic_kl: float
    noise_sup_sq: float
    estimate_sup_sq: float


def _run_seed(ref, gammas, model, g0, stream) -> SeedRun:
    n_iters, m = gammas.size, ref.shape[1]
    omega = _noise(model, stream, n_iters, m)
    perturb = omega + model.bias_rows(n_iters, m) if model.bias_scale > 0 else omega
    g, obj, msum, est_sq = kernels.dual_recursion(
        ref.log_density, ref.log_mu, ref.log_nu, g0, gammas, np.ascontiguousarray(perturb)
    )
    pbar = msum / n_iters
    return SeedRun(
        seed=stream,
        objectives=obj,
        g_final=g,
        ergodic_kl=kl_divergence(pbar / pbar.sum(), ref.nu),
        noise_sup_sq=float(np.mean(np.max(omega * omega, axis=1))),
        estimate_sup_sq=est_sq / n_iters,
    )


def _sweep(ref, config, model, g0):
    g0 = np.zeros(ref.shape[1]) if g0 is None else _check_g(g0, ref)
    gammas = config.gamma.take(config.n_iters)
    return ordered_map(lambda s: _run_seed(ref, gammas, model, g0, s), range(config.n_seeds))


def _reference_solution(ref):
    res = solve_reference(ref, SolverConfig(StepSchedule.constant(1.0), max_iter=100_000, tol=1e-14))
    if not res.converged:
        raise ParameterError("noiseless solve did not converge; cannot form the bound")
    return res.potentials.g


@dataclass
class ConstantStepResult:
    """Outcome of the fixed-step experiment.

    ``bound`` uses ``sigma2_hat``, the mean squared sup-norm of the zero-mean
    noise. ``bound_full`` uses the mean squared sup-norm of the whole
    gradient estimate, which is the larger and more conservative choice.
    """

    runs: list = field(repr=False)
    gamma: float
    n_iters: int
    kl_ref: float
    sigma2_hat: float
    sigma2_full: float
    mean_kl: float
    std_err: float
    rng: str = RNG_NAME

    @property
    def bound(self) -> float:
        return self.kl_ref / (self.gamma * self.n_iters) + self.gamma * self.sigma2_hat

    @property
    def bound_full(self) -> float:
        return self.kl_ref / (self.gamma * self.n_iters) + self.gamma * self.sigma2_full

    @property
    def ratio(self) -> float:
        return self.mean_kl / self.bound if self.bound > 0 else (0.0 if self.mean_kl == 0 else float("inf"))

    @property
    def passed(self) -> bool:
        return self.mean_kl <= self.bound


def run_constant_step(ref: ReferenceCoupling, config: StochasticRunConfig, model: NoiseModel, g0=None, g_opt=None) -> ConstantStepResult:
    """Fixed-step run averaged over ``config.n_seeds`` independent streams.

    The ergodic coupling averages the iterates ``0..n-1``.
    """
    if config.gamma.kind != "constant":
        raise ParameterError("the fixed-step experiment needs a constant schedule")
    if model.bias_scale > 0:
        raise ParameterError("the fixed-step bound assumes an unbiased oracle")
    g_opt = _reference_solution(ref) if g_opt is None else g_opt
    runs = _sweep(ref, config, model, g0)
    kls = np.array([r.ergodic_kl for r in runs])
    return ConstantStepResult(
        runs=runs,
        gamma=config.gamma(0),
        n_iters=config.n_iters,
        kl_ref=optimal_coupling_kl(ref, g_opt),
        sigma2_hat=float(np.mean([r.noise_sup_sq for r in runs])),
        sigma2_full=float(np.mean([r.estimate_sup_sq for r in runs])),
        mean_kl=float(kls.mean()),
        std_err=float(kls.std(ddof=1) / math.sqrt(kls.size)) if kls.size > 1 else 0.0,
    )


def optimal_constant_step(kl_ref: float, sigma2: float, n_iters: int) -> float:
    """Step minimizing ``kl_ref / (gamma n) + gamma sigma2``, capped at 1."""
    if sigma2 <= 0:
        return 1.0
    return min(math.sqrt(kl_ref / (sigma2 * n_iters)), 1.0)


@dataclass
class RobbinsMonroResult:
    runs: list = field(repr=False)
    tol: float
    final_objectives: np.ndarray
    summable: bool | None
    rng: str = RNG_NAME

    @property
    def converged_fraction(self) -> float:
        return float(np.mean(self.final_objectives < self.tol))


def run_robbins_monro(ref: ReferenceCoupling, config: StochasticRunConfig, model: NoiseModel, tol: float = 1e-3, g0=None) -> RobbinsMonroResult:
    """Decreasing-step run; reports the last-iterate objective per seed.

    Built-in schedules that fail ``sum gamma = inf, sum gamma^2 < inf`` are
    rejected. Custom schedules cannot be checked and only trigger a warning.
    """
    ok = config.gamma.robbins_monro()
    if ok is False:
        raise ParameterError(f"schedule {config.gamma.kind!r} violates the step-size summability conditions")
    if ok is None:
        warnings.warn("custom schedule: summability conditions not checked", stacklevel=2)
    runs = _sweep(ref, config, model, g0)
    return RobbinsMonroResult(runs, tol, np.array([r.objectives[-1] for r in runs]), ok)
