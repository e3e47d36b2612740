"""Classical and step-size generalized Sinkhorn in potential (dual) and coupling (primal) form.

A coupling in the constraint set ``{pi : pi_X = mu}`` that is absolutely
continuous with respect to the reference is parameterized by its column
potential ``g``: the row potential is recovered from ``g`` so that the
X-marginal is exactly ``mu``. The step with size ``gamma`` moves ``g``
along ``-log(pi_Y / nu)``; ``gamma = 1`` is one full Sinkhorn sweep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import (
    Coupling,
    CostMatrix,
    DiscreteMeasure,
    ParameterError,
    ReferenceCoupling,
    StructureError,
    build_reference,
    kl_divergence,
    log_sum_exp,
    total_variation,
)

PRIMAL_MARGINAL_TOL = 1e-8


@dataclass(frozen=True)
class Potentials:
    """Row/column potential pair, relative to ``reference``."""

    f: np.ndarray
    g: np.ndarray
    reference: ReferenceCoupling = field(repr=False)

    def coupling(self) -> Coupling:
        return Coupling(self.reference.log_density + self.f[:, None] + self.g[None, :])


@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequence ``gamma_n`` indexed from ``n = 0``.

    ``constant``: ``a``; ``harmonic``: ``a / (n + b)``; ``inverse_sqrt``:
    ``a / sqrt(n + b)``; ``power``: ``a / (n + b) ** power``; ``custom``:
    ``values[n]``, the last value repeating past the end.
    """

    kind: str = "constant"
    a: float = 1.0
    b: float = 1.0
    power: float = 1.0
    values: tuple = ()

    KINDS = ("constant", "harmonic", "inverse_sqrt", "power", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ParameterError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "custom":
            if not self.values:
                raise ParameterError("custom schedule needs values")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            bad = [v for v in self.values if not 0 < v <= 1]
        else:
            if self.kind != "constant" and not self.b > 0:
                raise ParameterError("schedule offset b must be positive")
            # every built-in family is non-increasing, so gamma_0 bounds the rest
            bad = [] if 0 < self(0) <= 1 else [self(0)]
        if bad:
            raise ParameterError(f"step sizes must lie in (0, 1], got {bad[0]!r}")

    @classmethod
    def constant(cls, gamma: float) -> "StepSchedule":
        return cls("constant", a=gamma)

    @classmethod
    def harmonic(cls, a: float = 1.0, b: float = 1.0) -> "StepSchedule":
        return cls("harmonic", a=a, b=b)

    @classmethod
    def inverse_sqrt(cls, a: float = 1.0, b: float = 1.0) -> "StepSchedule":
        return cls("inverse_sqrt", a=a, b=b)

    @classmethod
    def custom(cls, values: Sequence[float]) -> "StepSchedule":
        return cls("custom", values=tuple(values))

    def __call__(self, n: int) -> float:
        if self.kind == "constant":
            return self.a
        if self.kind == "harmonic":
            return self.a / (n + self.b)
        if self.kind == "inverse_sqrt":
            return self.a / math.sqrt(n + self.b)
        if self.kind == "power":
            return self.a / (n + self.b) ** self.power
        return self.values[min(n, len(self.values) - 1)]

    def take(self, n: int) -> np.ndarray:
        return np.array([self(k) for k in range(n)], dtype=np.float64)

    def robbins_monro(self) -> bool | None:
        """Whether ``sum gamma = inf`` and ``sum gamma^2 < inf``; ``None`` if undecidable."""
        if self.kind == "harmonic":
            return True
        if self.kind == "power":
            return 0.5 < self.power <= 1.0
        if self.kind in ("constant", "inverse_sqrt"):
            return False
        return None


@dataclass(frozen=True)
class SolverConfig:
    gamma_schedule: StepSchedule = StepSchedule()
    max_iter: int = 1000
    tol: float = 1e-12
    record_every: int = 1

    def __post_init__(self):
        if self.max_iter < 1 or self.record_every < 1:
            raise ParameterError("max_iter and record_every must be positive")
        if not self.tol > 0:
            raise ParameterError("tol must be positive")


@dataclass
class IterateRecord:
    iter: int
    t: float
    gamma: float
    objective: float
    marginal_err_x: float
    marginal_err_y: float
    breg_to_opt: float | None = None


@dataclass
class SolveResult:
    """Output of :func:`solve`. ``status`` is ``converged``, ``max_iter`` or ``degenerate``."""

    potentials: Potentials
    trace: list
    converged: bool
    status: str
    n_iter: int

    def __iter__(self):
        yield self.potentials
        yield self.trace


def _check_g(g, ref: ReferenceCoupling) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (ref.shape[1],):
        raise StructureError(f"potential has shape {g.shape}, expected ({ref.shape[1]},)")
    if not np.all(np.isfinite(g)):
        raise ParameterError("potential has non-finite entries")
    return g


def f_from_g(g, ref: ReferenceCoupling) -> np.ndarray:
    """Row potential making the X-marginal of ``exp(f + g) * ref`` equal to ``mu``."""
    g = _check_g(g, ref)
    return ref.log_mu - log_sum_exp(ref.log_density + g[None, :], axis=1)


def _log_coupling(g: np.ndarray, ref: ReferenceCoupling) -> np.ndarray:
    z = ref.log_density + g[None, :]
    return z - log_sum_exp(z, axis=1)[:, None] + ref.log_mu[:, None]


def coupling_from_g(g, ref: ReferenceCoupling) -> Coupling:
    return Coupling(_log_coupling(_check_g(g, ref), ref))


def log_y_marginal(g, ref: ReferenceCoupling) -> np.ndarray:
    return log_sum_exp(_log_coupling(_check_g(g, ref), ref), axis=0)


def first_variation(g, ref: ReferenceCoupling) -> np.ndarray:
    """``log(pi_Y / nu)`` for ``pi`` built from ``g``; zero exactly at the optimum."""
    return log_y_marginal(g, ref) - ref.log_nu


def _objective_from_log_marginal(log_py: np.ndarray, ref: ReferenceCoupling) -> float:
    py = np.exp(log_py)
    return float(max(np.sum(py * (log_py - ref.log_nu)), 0.0))


def objective(g, ref: ReferenceCoupling) -> float:
    """``KL(pi_Y || nu)`` of the coupling built from ``g``."""
    return _objective_from_log_marginal(log_y_marginal(g, ref), ref)


def gamma_step_dual(g, gamma: float, ref: ReferenceCoupling) -> np.ndarray:
    """``g - gamma * log(pi_Y / nu)``."""
    if not 0 < gamma <= 1:
        raise ParameterError(f"gamma must lie in (0, 1], got {gamma!r}")
    g = _check_g(g, ref)
    return g - gamma * first_variation(g, ref)


def classical_step(g, ref: ReferenceCoupling) -> np.ndarray:
    """One Sinkhorn sweep (project on the Y-marginal, then on the X-marginal)."""
    return gamma_step_dual(g, 1.0, ref)


def gamma_step_primal(pi: Coupling, gamma: float, ref: ReferenceCoupling) -> Coupling:
    """Step computed from the coupling alone.

    Row by row, the new conditional is the normalized geometric mixture
    ``pi_half(y|x)^gamma * pi(y|x)^(1-gamma)`` where ``pi_half`` rescales
    the columns of ``pi`` to have marginal ``nu``.
    """
    if not 0 <= gamma <= 1:
        raise ParameterError(f"gamma must lie in [0, 1], got {gamma!r}")
    lp = pi.log_density
    if lp.shape != ref.shape:
        raise StructureError("coupling and reference differ in shape")
    row = log_sum_exp(lp, axis=1)
    if np.max(np.abs(np.exp(row) - ref.mu)) > PRIMAL_MARGINAL_TOL:
        raise ParameterError("coupling violates the X-marginal constraint")
    half = lp + (ref.log_nu - log_sum_exp(lp, axis=0))[None, :]
    cond_half = half - log_sum_exp(half, axis=1)[:, None]
    cond = lp - row[:, None]
    mixed = gamma * cond_half + (1.0 - gamma) * cond
    return Coupling(mixed - log_sum_exp(mixed, axis=1)[:, None] + ref.log_mu[:, None])


def bregman_dual(g_a, g_b, ref: ReferenceCoupling) -> float:
    """Bregman divergence of the conjugate potential between two dual points.

    Evaluated as ``<pi_b, h_b - h_a>`` with ``h = f (+) g`` the full log
    density ratio to the reference; equal to ``KL(pi_b || pi_a)``.
    """
    g_a, g_b = _check_g(g_a, ref), _check_g(g_b, ref)
    f_a, f_b = f_from_g(g_a, ref), f_from_g(g_b, ref)
    pi_b = np.exp(_log_coupling(g_b, ref))
    diff = (f_b - f_a)[:, None] + (g_b - g_a)[None, :]
    return float(max(np.sum(pi_b * diff), 0.0))


def gauge_fix(g, ref: ReferenceCoupling) -> np.ndarray:
    """Shift ``g`` to have zero mean under ``nu``."""
    g = np.asarray(g, dtype=np.float64)
    return g - float(np.dot(ref.nu, g))


def potentials_from_g(g, ref: ReferenceCoupling) -> Potentials:
    g = gauge_fix(g, ref)
    return Potentials(f_from_g(g, ref), g, ref)


def _record(n, t, gamma, g, ref) -> IterateRecord:
    lp = _log_coupling(g, ref)
    log_px = log_sum_exp(lp, axis=1)
    log_py = log_sum_exp(lp, axis=0)
    return IterateRecord(
        iter=n,
        t=t,
        gamma=gamma,
        objective=_objective_from_log_marginal(log_py, ref),
        marginal_err_x=total_variation(np.exp(log_px), ref.mu),
        marginal_err_y=total_variation(np.exp(log_py), ref.nu),
    )


def solve_reference(ref: ReferenceCoupling, config: SolverConfig = SolverConfig(), g0=None) -> SolveResult:
    """Run the step-size generalized Sinkhorn iteration from ``g0`` (default: the reference)."""
    g = np.zeros(ref.shape[1]) if g0 is None else _check_g(g0, ref).copy()
    schedule = config.gamma_schedule
    trace, kept = [], []
    t, n, status = 0.0, 0, "max_iter"
    while True:
        fv = first_variation(g, ref)
        obj = _objective_from_log_marginal(fv + ref.log_nu, ref)
        gamma = schedule(n)
        if n % config.record_every == 0 or obj < config.tol or n == config.max_iter:
            rec = _record(n, t, gamma, g, ref)
            trace.append(rec)
            kept.append(g.copy())
        if not np.isfinite(obj) or not np.all(np.isfinite(fv)):
            status = "degenerate"
            break
        if obj < config.tol:
            status = "converged"
            break
        if n == config.max_iter:
            break
        g = g - gamma * fv
        t += gamma
        n += 1
    if status == "converged":
        for rec, gk in zip(trace, kept):
            rec.breg_to_opt = bregman_dual(gk, g, ref)
    return SolveResult(potentials_from_g(g, ref), trace, status == "converged", status, n)


def solve(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostMatrix,
    epsilon: float,
    config: SolverConfig = SolverConfig(),
) -> SolveResult:
    """Solve entropic OT between ``mu`` and ``nu``; unpacks as ``(potentials, trace)``."""
    return solve_reference(build_reference(mu, nu, cost, epsilon), config)


def optimal_coupling_kl(ref: ReferenceCoupling, g_opt) -> float:
    """``KL(pi* || pi_ref)``, the distance from the starting point to the optimum."""
    return kl_divergence(coupling_from_g(g_opt, ref), ref.coupling())
