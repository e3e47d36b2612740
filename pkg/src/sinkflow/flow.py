"""Continuous-time Sinkhorn flow on potentials and couplings.

The state is the column potential ``g``; the row potential is always
recovered from it, so every state lies in the X-marginal constraint set
and is of Schrödinger form. The flow is ``dg/dt = -log(pi_Y / nu)``. Its
explicit Euler scheme with step ``dt`` is the step-size generalized
Sinkhorn iteration with ``gamma = dt``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measures import ParameterError, ReferenceCoupling, log_sum_exp, total_variation
from .sinkhorn import (
    _check_g,
    _log_coupling,
    _objective_from_log_marginal,
    bregman_dual,
    first_variation,
    gamma_step_dual,
    objective,
)

METHODS = ("euler", "rk4")
OPTIMALITY_TOL = 1e-10


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "euler"
    dt: float = 0.01
    t_end: float = 10.0
    record_dt: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown integrator {self.method!r}")
        if not 0 < self.dt <= 1:
            raise ParameterError("dt must lie in (0, 1]")
        if not self.dt <= self.record_dt <= self.t_end:
            raise ParameterError("need dt <= record_dt <= t_end")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def record_stride(self) -> int:
        return max(int(round(self.record_dt / self.dt)), 1)


@dataclass
class FlowTrajectory:
    """Recorded states of one flow run.

    ``max_increase`` is the largest step-to-step increase of the objective
    over every integration step, recorded or not.
    """

    times: np.ndarray
    potentials: list
    objectives: np.ndarray
    marginal_err_y: np.ndarray
    status: str = "ok"
    max_increase: float = 0.0
    method: str = "euler"
    dt: float = 0.0

    @property
    def rate_products(self) -> np.ndarray:
        return self.times * self.objectives

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def velocity(g, ref: ReferenceCoupling) -> np.ndarray:
    """Time derivative ``-log(pi_Y / nu)`` of the column potential."""
    return -first_variation(g, ref)


def row_velocity(g, ref: ReferenceCoupling) -> np.ndarray:
    """Time derivative of the row potential, ``E_{pi(.|x)}[log(pi_Y / nu)]``."""
    g = _check_g(g, ref)
    lp = _log_coupling(g, ref)
    cond = np.exp(lp - ref.log_mu[:, None])
    return cond @ first_variation(g, ref)


def primal_velocity(g, ref: ReferenceCoupling) -> np.ndarray:
    """Time derivative of ``log pi`` on X x Y.

    Equal to ``-log(pi_Y/nu)(y) + E_{pi(.|x)}[log(pi_Y/nu)]``; each row
    integrates to zero against the conditional ``pi(.|x)``.
    """
    fv = first_variation(g, ref)
    return -fv[None, :] + row_velocity(g, ref)[:, None]


def _rk4_step(g: np.ndarray, dt: float, ref: ReferenceCoupling) -> np.ndarray:
    k1 = velocity(g, ref)
    k2 = velocity(g + 0.5 * dt * k1, ref)
    k3 = velocity(g + 0.5 * dt * k2, ref)
    k4 = velocity(g + dt * k3, ref)
    return g + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _diagnostics(g, ref):
    lp = _log_coupling(g, ref)
    log_py = log_sum_exp(lp, axis=0)
    return _objective_from_log_marginal(log_py, ref), total_variation(np.exp(log_py), ref.nu)


def integrate(g0, ref: ReferenceCoupling, config: IntegratorConfig = IntegratorConfig()) -> FlowTrajectory:
    """Integrate the potential flow from ``g0`` up to ``config.t_end``.

    With ``method="euler"`` each step calls :func:`gamma_step_dual` with
    ``gamma = dt``, so step ``n`` reproduces the ``n``-th iterate of the
    discrete recursion bit for bit. A non-finite state stops the run and
    the partial trajectory is returned with ``status="degenerate"``.
    """
    g = _check_g(g0, ref).copy()
    dt, stride, n_steps = config.dt, config.record_stride, config.n_steps
    times, gs, objs, errs = [], [], [], []
    status, max_inc = "ok", 0.0
    prev, err = _diagnostics(g, ref)
    times.append(0.0), gs.append(g.copy()), objs.append(prev), errs.append(err)
    for n in range(1, n_steps + 1):
        # overflow shows up as a non-finite state and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            g = gamma_step_dual(g, dt, ref) if config.method == "euler" else _rk4_step(g, dt, ref)
        if not np.all(np.isfinite(g)):
            status = "degenerate"
            break
        obj, err = _diagnostics(g, ref)
        if not np.isfinite(obj):
            status = "degenerate"
            break
        max_inc = max(max_inc, obj - prev)
        prev = obj
        if n % stride == 0 or n == n_steps:
            times.append(n * dt), gs.append(g.copy()), objs.append(obj), errs.append(err)
    return FlowTrajectory(
        times=np.array(times),
        potentials=gs,
        objectives=np.array(objs),
        marginal_err_y=np.array(errs),
        status=status,
        max_increase=max_inc,
        method=config.method,
        dt=dt,
    )


@dataclass
class RateReport:
    """Check of ``t * F(pi^t) <= C`` along a trajectory.

    ``constant_primary`` is ``KL(pi* || pi^0)``, ``constant_swapped`` is
    ``KL(pi^0 || pi*)``; the verdicts use the larger one.
    """

    times: np.ndarray
    products: np.ndarray
    constant_primary: float
    constant_swapped: float
    verdicts: np.ndarray = field(repr=False)
    rtol: float = 1e-6
    atol: float = 1e-12

    @property
    def constant(self) -> float:
        return max(self.constant_primary, self.constant_swapped)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.verdicts))

    @property
    def worst_ratio(self) -> float:
        if self.constant == 0:
            return 0.0 if np.all(self.products == 0) else float("inf")
        return float(np.max(self.products) / self.constant)


def rate_certificate(traj: FlowTrajectory, g_opt, ref: ReferenceCoupling, rtol: float = 1e-6, atol: float = 1e-12) -> RateReport:
    """Certify the ``1/t`` decay of the objective along ``traj``.

    ``atol`` only absorbs round-off when the run starts at the optimum.
    """
    g_opt = _check_g(g_opt, ref)
    if objective(g_opt, ref) >= OPTIMALITY_TOL:
        raise ParameterError("g_opt is not an optimal potential")
    g0 = traj.potentials[0]
    primary = bregman_dual(g0, g_opt, ref)
    swapped = bregman_dual(g_opt, g0, ref)
    keep = traj.times > 0
    times, products = traj.times[keep], traj.rate_products[keep]
    bound = max(primary, swapped) * (1.0 + rtol) + atol
    return RateReport(times, products, primary, swapped, products <= bound, rtol, atol)


@dataclass
class DensityTrajectory:
    times: np.ndarray
    log_densities: list
    objectives: np.ndarray
    status: str = "ok"


def entropy_jko_flow(
    log_p0,
    grad_oracle: Callable[[np.ndarray], np.ndarray],
    config: IntegratorConfig,
    objective: Callable[[np.ndarray], float] | None = None,
) -> DensityTrajectory:
    """Unconstrained flow ``d/dt log p = -grad_oracle(log p)``, renormalized each step.

    ``grad_oracle`` receives a log-density and returns a first variation
    defined up to an additive constant. ``objective``, if given, is
    evaluated on every recorded log-density.
    """
    lp = np.asarray(log_p0, dtype=np.float64)
    lp = lp - log_sum_exp(lp)
    dt, stride, n_steps = config.dt, config.record_stride, config.n_steps

    def step(x):
        if config.method == "euler":
            return x - dt * grad_oracle(x)
        k1 = -grad_oracle(x)
        k2 = -grad_oracle(x + 0.5 * dt * k1)
        k3 = -grad_oracle(x + 0.5 * dt * k2)
        k4 = -grad_oracle(x + dt * k3)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def score(x):
        return float("nan") if objective is None else float(objective(x))

    times, states, objs, status = [0.0], [lp.copy()], [score(lp)], "ok"
    for n in range(1, n_steps + 1):
        nxt = step(lp)
        if not np.all(np.isfinite(nxt)):
            status = "degenerate"
            break
        lp = nxt - log_sum_exp(nxt)
        if n % stride == 0 or n == n_steps:
            times.append(n * dt), states.append(lp.copy()), objs.append(score(lp))
    return DensityTrajectory(np.array(times), states, np.array(objs), status)
