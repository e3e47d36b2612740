"""One-dimensional Schrödinger bridge on a uniform grid.

The static problem is entropic OT with cost ``|x - y|^2 / 2`` and
``epsilon = sigma^2``. A column potential ``g`` is lifted to the drift of
an SDE ``dX = b(t, X) dt + sigma dW`` by the heat semigroup. The path
measure pinned by a coupling ``pi`` has marginals that are Gaussian
mixtures, which gives scores for the time-reversal formula and for the
score ratio of the step-size generalized IPF update.

Grid conventions: both marginals live on the same uniform grid and their
weights are masses per cell. Drift fields are tabulated on a uniform time
grid inside ``[0, 1)``; outside the tabulated range they are clamped to
the nearest edge, in time and in space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._parallel import ordered_map
from .measures import (
    ConvergenceError,
    CostMatrix,
    DegeneracyError,
    DiscreteMeasure,
    ParameterError,
    ReferenceCoupling,
    StructureError,
    build_reference,
    log_sum_exp,
    total_variation,
)
from .sinkhorn import (
    Potentials,
    SolverConfig,
    StepSchedule,
    _log_coupling,
    gamma_step_dual,
    log_y_marginal,
    potentials_from_g,
    solve_reference,
)

GRID_RTOL = 1e-9
COVERAGE_SD = 5.0
DEFAULT_DELTA = 1e-2
CHUNK = 25_000
ESTIMATORS = ("feynman_kac", "killed", "girsanov")


def _uniform_step(grid: np.ndarray, name: str) -> float:
    if grid.ndim != 1 or grid.size == 0:
        raise StructureError(f"{name} must be a non-empty vector")
    if grid.size == 1:
        return 1.0
    d = np.diff(grid)
    if np.any(d <= 0) or np.max(np.abs(d - d[0])) > GRID_RTOL * max(1.0, abs(d[0])) * grid.size:
        raise StructureError(f"{name} must be uniform and increasing")
    return float((grid[-1] - grid[0]) / (grid.size - 1))


def cell_edges(z: np.ndarray) -> np.ndarray:
    mid = 0.5 * (z[:-1] + z[1:])
    return np.concatenate([[-np.inf], mid, [np.inf]])


def bin_masses(points: np.ndarray, z: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Histogram of ``points`` on the cells of grid ``z``, normalized to mass 1."""
    h = np.histogram(points, cell_edges(z), weights=weights)[0].astype(np.float64)
    return h / h.sum()


@dataclass(frozen=True)
class BridgeProblem:
    """Endpoint marginals on a shared uniform grid, diffusion ``sigma_diff``, horizon ``T = 1``."""

    mu0: DiscreteMeasure
    muT: DiscreteMeasure
    sigma_diff: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.mu0.support is None or self.muT.support is None:
            raise StructureError("bridge marginals need grid supports")
        if self.mu0.support.shape != self.muT.support.shape or not np.array_equal(self.mu0.support, self.muT.support):
            raise StructureError("both marginals must share one grid")
        _uniform_step(self.mu0.support, "support")
        if not self.sigma_diff > 0:
            raise ParameterError("sigma_diff must be positive")
        if self.T != 1.0:
            raise ParameterError("only the unit horizon T = 1 is supported")
        z = self.grid
        for name, m in (("mu0", self.mu0), ("muT", self.muT)):
            mean = float(np.dot(m.weights, z))
            sd = math.sqrt(max(float(np.dot(m.weights, (z - mean) ** 2)), 0.0))
            if mean - COVERAGE_SD * sd < z[0] - 1e-12 or mean + COVERAGE_SD * sd > z[-1] + 1e-12:
                raise ParameterError(f"grid does not cover {name} to +-{COVERAGE_SD:g} standard deviations")

    @property
    def grid(self) -> np.ndarray:
        return self.mu0.support

    @property
    def dz(self) -> float:
        return _uniform_step(self.grid, "support")

    @property
    def epsilon(self) -> float:
        return self.sigma_diff ** 2

    def reference(self) -> ReferenceCoupling:
        z = self.grid
        return build_reference(self.mu0, self.muT, CostMatrix.quadratic(z, z), self.epsilon)


def gaussian_problem(m=201, mean0=-1.0, var0=0.25, meanT=1.0, varT=0.25, extent=4.0, sigma_diff=1.0) -> BridgeProblem:
    """Two discretized Gaussians on ``m`` points over ``[-extent, extent]``."""
    if m < 3 or not extent > 0 or not var0 > 0 or not varT > 0:
        raise ParameterError("need m >= 3 and positive extent and variances")
    z = np.linspace(-extent, extent, m)

    def hist(mean, var):
        lw = -((z - mean) ** 2) / (2.0 * var)
        return DiscreteMeasure(np.exp(lw - log_sum_exp(lw)), z)

    return BridgeProblem(hist(mean0, var0), hist(meanT, varT), sigma_diff)


@dataclass(frozen=True)
class DriftField:
    """Values ``b(t, z)`` on a uniform time grid inside ``[0, 1)`` and a uniform space grid."""

    t_grid: np.ndarray
    z_grid: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.array(self.t_grid, dtype=np.float64)
        z = np.array(self.z_grid, dtype=np.float64)
        v = np.array(self.values, dtype=np.float64, order="C")
        _uniform_step(t, "t_grid")
        _uniform_step(z, "z_grid")
        if z.size < 2:
            raise StructureError("z_grid needs at least two points")
        if t[0] < 0 or t[-1] >= 1:
            raise ParameterError("t_grid must lie in [0, 1)")
        if v.shape != (t.size, z.size):
            raise StructureError(f"values have shape {v.shape}, expected {(t.size, z.size)}")
        if not np.all(np.isfinite(v)):
            raise DegeneracyError("drift field has non-finite values")
        for name, a in (("t_grid", t), ("z_grid", z), ("values", v)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dt(self) -> float:
        return _uniform_step(self.t_grid, "t_grid")

    @property
    def dz(self) -> float:
        return _uniform_step(self.z_grid, "z_grid")

    def same_grid(self, other: "DriftField") -> bool:
        return np.array_equal(self.t_grid, other.t_grid) and np.array_equal(self.z_grid, other.z_grid)

    def at(self, t: float, x, out=None) -> np.ndarray:
        """Bilinear interpolation at time ``t`` and positions ``x``, clamped at the edges."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        out = np.empty_like(x) if out is None else out
        return kernels.interp_bilinear(self.values, self.t_grid[0], self.dt, self.z_grid[0], self.dz, float(t), x, out)

    def _combine(self, other, op):
        if isinstance(other, DriftField):
            if not self.same_grid(other):
                raise StructureError("drift fields live on different grids")
            other = other.values
        return DriftField(self.t_grid, self.z_grid, op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __neg__(self):
        return DriftField(self.t_grid, self.z_grid, -self.values)

    def scaled(self, c: float) -> "DriftField":
        return DriftField(self.t_grid, self.z_grid, c * self.values)

    def to_text(self) -> str:
        """Header ``# nt nz t0 dt z0 dz`` followed by one row of values per time."""
        nt, nz = self.values.shape
        lines = [f"# {nt} {nz} {self.t_grid[0]:.17g} {self.dt:.17g} {self.z_grid[0]:.17g} {self.dz:.17g}"]
        lines += [" ".join(f"{v:.17g}" for v in row) for row in self.values]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DriftField":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise StructureError("drift file must start with '# nt nz t0 dt z0 dz'")
        head = lines[0][1:].split()
        if len(head) != 6:
            raise StructureError("drift header needs six fields")
        nt, nz = int(head[0]), int(head[1])
        t0, dt, z0, dz = (float(h) for h in head[2:])
        values = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
        if values.shape != (nt, nz):
            raise StructureError(f"drift body has shape {values.shape}, header says {(nt, nz)}")
        return cls(t0 + dt * np.arange(nt), z0 + dz * np.arange(nz), values)


def static_bridge(problem: BridgeProblem, tol: float = 1e-13, max_iter: int = 100_000, marginal_tol: float = 1e-10, polish: int = 1000) -> Potentials:
    """Optimal potentials of the static problem; raises if the solve does not converge.

    The objective stop leaves a marginal error near ``sqrt(tol)``, so up to
    ``polish`` further unit steps run until the terminal marginal is within
    ``marginal_tol`` in total variation, keeping the best iterate.
    """
    ref = problem.reference()
    res = solve_reference(ref, SolverConfig(StepSchedule.constant(1.0), max_iter=max_iter, tol=tol))
    if not res.converged:
        raise ConvergenceError(f"static bridge solve stopped with status {res.status!r}")
    g = best = res.potentials.g
    err_best = _y_error(g, ref)
    for _ in range(polish):
        if err_best <= marginal_tol:
            break
        g = gamma_step_dual(g, 1.0, ref)
        err = _y_error(g, ref)
        if err < err_best:
            best, err_best = g, err
    return potentials_from_g(best, ref)


def _y_error(g, ref: ReferenceCoupling) -> float:
    # the X-marginal is exact by construction
    return total_variation(np.exp(log_y_marginal(g, ref)), ref.nu)


def path_potential(g, problem: BridgeProblem) -> np.ndarray:
    """Terminal log-weight ``g + log nu`` acting on grid masses, up to a constant."""
    return np.asarray(g, dtype=np.float64) + problem.muT.log_weights


def _resolution_floor(problem: BridgeProblem, z_grid: np.ndarray) -> float:
    h = max(problem.dz, _uniform_step(z_grid, "z_grid") if z_grid.size > 1 else 0.0)
    return (h / (2.0 * problem.sigma_diff)) ** 2


def lift_potential(g, problem: BridgeProblem, t_grid, z_grid=None, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """``g_t(z) = log E[exp(G(X_1)) | X_t = z]`` for Brownian ``X`` with scale ``sigma``.

    The expectation is a Gaussian quadrature over the grid, normalized per
    row so that constants are reproduced exactly. ``t_grid`` must stay
    below ``1 - delta``.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    z = problem.grid if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    if delta < _resolution_floor(problem, z):
        raise ParameterError(f"delta={delta!r} is below the grid resolution floor")
    if t_grid.size == 0 or t_grid.min() < 0 or t_grid.max() > 1.0 - delta + 1e-12:
        raise ParameterError(f"t_grid must lie in [0, 1 - {delta!r}]")
    G = path_potential(g, problem)
    if G.shape != problem.grid.shape or not np.all(np.isfinite(G)):
        raise ParameterError("potential must be finite on the grid")
    y = problem.grid
    sq = (z[:, None] - y[None, :]) ** 2
    out = np.empty((t_grid.size, z.size))
    for k, t in enumerate(t_grid):
        kern = -sq / (2.0 * problem.epsilon * (1.0 - t))
        out[k] = log_sum_exp(kern + G[None, :], axis=1) - log_sum_exp(kern, axis=1)
    return out


def lift_drift(g, problem: BridgeProblem, t_grid, z_grid=None, delta: float = DEFAULT_DELTA) -> DriftField:
    """Drift ``sigma^2 d/dz g_t`` of the path measure whose endpoint coupling is built from ``g``."""
    z = problem.grid if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    gt = lift_potential(g, problem, t_grid, z, delta)
    return DriftField(t_grid, z, problem.epsilon * np.gradient(gt, _uniform_step(z, "z_grid"), axis=1))


def _as_log_matrix(pi) -> np.ndarray:
    lp = getattr(pi, "log_density", pi)
    return np.ascontiguousarray(lp, dtype=np.float64)


def path_log_density(pi, t: float, z_grid, x=None, y=None, sigma_diff: float = 1.0):
    """Log-density and score at ``0 < t < 1`` of the bridge mixture pinned by ``pi``.

    ``p_t(z) = sum_ij pi_ij N(z; (1-t) x_i + t y_j, sigma^2 t (1-t))``.
    """
    if not 0.0 < t < 1.0:
        raise ParameterError("the mixture has a density only for 0 < t < 1")
    lp = _as_log_matrix(pi)
    z = np.ascontiguousarray(z_grid, dtype=np.float64)
    x = z if x is None else np.ascontiguousarray(x, dtype=np.float64)
    y = z if y is None else np.ascontiguousarray(y, dtype=np.float64)
    if lp.shape != (x.size, y.size):
        raise StructureError("coupling shape does not match the supports")
    return kernels.mixture_logpdf(lp, x, y, float(t), sigma_diff ** 2 * t * (1.0 - t), z)


def path_marginal(pi, t: float, z_grid, x=None, y=None, sigma_diff: float = 1.0) -> np.ndarray:
    """Density of the time-``t`` marginal of the pinned bridge on ``z_grid``.

    At ``t = 0`` and ``t = 1`` the marginal is atomic; its atoms are binned
    to the grid cells and divided by the spacing.
    """
    z = np.asarray(z_grid, dtype=np.float64)
    dz = _uniform_step(z, "z_grid")
    if not 0.0 <= t <= 1.0:
        raise ParameterError("t must lie in [0, 1]")
    if 0.0 < t < 1.0:
        return np.exp(path_log_density(pi, t, z, x, y, sigma_diff)[0])
    lp = _as_log_matrix(pi)
    axis, pts = (1, z if x is None else np.asarray(x)) if t == 0.0 else (0, z if y is None else np.asarray(y))
    masses = np.exp(log_sum_exp(lp, axis=axis))
    if pts is z:
        return masses / dz
    return bin_masses(pts, z, masses) / dz


def path_score(pi, t_grid, z_grid, x=None, y=None, sigma_diff: float = 1.0) -> DriftField:
    """Score ``d/dz log p_t`` of the pinned bridge on a grid of interior times."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    lp = _as_log_matrix(pi)
    z = np.ascontiguousarray(z_grid, dtype=np.float64)

    def one(t):
        logp, score = path_log_density(lp, t, z, x, y, sigma_diff)
        if not np.all(np.isfinite(logp)):
            raise DegeneracyError(f"path density vanishes on the grid at t={t!r}")
        return score

    return DriftField(t_grid, z, np.array(ordered_map(one, t_grid)))


def reverse_drift(v: DriftField, score: DriftField, sigma_diff: float = 1.0) -> DriftField:
    """``-v + sigma^2 * score``, the drift of the time-reversed diffusion (indexed by forward time)."""
    return (-v) + score.scaled(sigma_diff ** 2)


def reversal_drift(v: DriftField, pi, x=None, y=None, sigma_diff: float = 1.0) -> DriftField:
    """Reversal drift with the score of the bridge pinned by ``pi`` on ``v``'s grids."""
    return reverse_drift(v, path_score(pi, v.t_grid, v.z_grid, x, y, sigma_diff), sigma_diff)


@dataclass
class ParticleEnsemble:
    positions: np.ndarray = field(repr=False)
    time: float
    seed: int

    def histogram(self, z_grid) -> np.ndarray:
        return bin_masses(self.positions, np.asarray(z_grid, dtype=np.float64))

    def tv_to(self, masses, z_grid) -> float:
        return total_variation(self.histogram(z_grid), masses)

    def to_text(self) -> str:
        return "".join(f"{p:.17g}\n" for p in self.positions)


def _stream(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def simulate_em(
    drift: DriftField,
    init: DiscreteMeasure,
    n_particles: int,
    n_steps: int,
    seed: int,
    t_end: float = 1.0,
    sigma_diff: float = 1.0,
    time_flip: bool = False,
) -> ParticleEnsemble:
    """Euler–Maruyama for ``dX = b(t, X) dt + sigma dW`` from ``X_0 ~ init`` to ``t_end``.

    Initial positions are grid atoms drawn by weight. With ``time_flip``
    the drift is read at ``1 - t``, which runs a reversal drift tabulated in
    forward time. Particles are split in chunks, each with its own stream.
    """
    if init.support is None:
        raise StructureError("initial measure needs a support")
    if n_particles < 1 or n_steps < 1 or not t_end > 0:
        raise ParameterError("n_particles, n_steps and t_end must be positive")
    h = t_end / n_steps
    sq = sigma_diff * math.sqrt(h)

    def run(chunk):
        rng = _stream(seed, chunk)
        n = min(CHUNK, n_particles - chunk * CHUNK)
        x = rng.choice(init.support, size=n, p=init.weights)
        b = np.empty(n)
        for k in range(n_steps):
            t = k * h
            drift.at(1.0 - t if time_flip else t, x, b)
            x += b * h + sq * rng.standard_normal(n)
        return x

    n_chunks = -(-n_particles // CHUNK)
    x = np.concatenate(ordered_map(run, range(n_chunks)))
    if not np.all(np.isfinite(x)):
        raise DegeneracyError("particle positions became non-finite")
    return ParticleEnsemble(x, t_end, seed)


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_err: float
    n_samples: int
    estimator: str
    survivors: int | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.mean)


def _kill_rate(score_ratio: DriftField, gamma: float, sigma_diff: float):
    c = 0.5 * sigma_diff ** 2 * gamma * (1.0 - gamma)
    sq = DriftField(score_ratio.t_grid, score_ratio.z_grid, c * score_ratio.values ** 2)
    return c, sq


def value_function_mc(
    x: float,
    t: float,
    base_drift: DriftField,
    score_ratio: DriftField,
    gamma: float,
    sigma_diff: float = 1.0,
    n_samples: int = 10_000,
    n_steps: int = 100,
    seed: int = 0,
    estimator: str = "feynman_kac",
) -> ValueEstimate:
    """Monte-Carlo estimate of ``V_t(x) = -log E[exp(-int_t^1 k(s, Y_s) ds)]``.

    ``k = sigma^2 gamma (1 - gamma) / 2 * score_ratio^2`` and ``Y`` follows
    ``dY = base_drift dt + sigma dW`` from ``Y_t = x``.

    ``feynman_kac`` averages the path weights; ``killed`` removes each path
    with probability ``1 - exp(-k dt)`` per step and uses the survival
    fraction; ``girsanov`` samples plain Brownian paths and reweights them.
    """
    if estimator not in ESTIMATORS:
        raise ParameterError(f"estimator must be one of {ESTIMATORS}")
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0, 1]")
    if not 0.0 <= t < 1.0 or n_samples < 2 or n_steps < 1:
        raise ParameterError("need 0 <= t < 1, n_samples >= 2 and n_steps >= 1")
    c, rate = _kill_rate(score_ratio, gamma, sigma_diff)
    # a vanishing rate gives V = 0 exactly, which the reweighted estimator only matches on average
    if c == 0.0 or not np.any(rate.values):
        return ValueEstimate(0.0, 0.0, n_samples, estimator, n_samples if estimator == "killed" else None)
    rng = _stream(seed, 0)
    h = (1.0 - t) / n_steps
    sq = math.sqrt(h)
    y = np.full(n_samples, float(x))
    b = np.empty(n_samples)
    k = np.empty(n_samples)
    logw = np.zeros(n_samples)
    alive = np.ones(n_samples, dtype=bool)
    for i in range(n_steps):
        s = t + i * h
        rate.at(s, y, k)
        base_drift.at(s, y, b)
        dw = sq * rng.standard_normal(n_samples)
        if estimator == "feynman_kac":
            logw -= k * h
            y += b * h + sigma_diff * dw
        elif estimator == "killed":
            alive &= rng.random(n_samples) < np.exp(-k * h)
            y += b * h + sigma_diff * dw
        else:
            logw += b * dw / sigma_diff - (b * b / (2.0 * sigma_diff ** 2) + k) * h
            y += sigma_diff * dw
    if estimator == "killed":
        n_alive = int(alive.sum())
        if n_alive == 0:
            return ValueEstimate(float("inf"), float("inf"), n_samples, estimator, 0)
        p = n_alive / n_samples
        return ValueEstimate(-math.log(p), math.sqrt((1.0 - p) / (n_samples * p)), n_samples, estimator, n_alive)
    top = logw.max()
    w = np.exp(logw - top)
    m = w.mean()
    return ValueEstimate(-(top + math.log(m)), float(w.std(ddof=1) / (math.sqrt(n_samples) * m)), n_samples, estimator)


def value_function_grid(
    t_nodes,
    z_nodes,
    base_drift: DriftField,
    score_ratio: DriftField,
    gamma: float,
    sigma_diff: float = 1.0,
    n_samples: int = 1000,
    dt: float = 0.01,
    seed: int = 0,
):
    """Feynman–Kac estimates of ``V`` on a node grid with common random numbers.

    All space nodes at one time node share the same Brownian increments,
    so differences between neighbouring nodes are not dominated by noise.
    Returns ``(V, std_err)`` as arrays of shape ``(len(t_nodes), len(z_nodes))``.
    """
    t_nodes = np.asarray(t_nodes, dtype=np.float64)
    z_nodes = np.asarray(z_nodes, dtype=np.float64)
    c, rate = _kill_rate(score_ratio, gamma, sigma_diff)
    shape = (t_nodes.size, z_nodes.size)
    if c == 0.0:
        return np.zeros(shape), np.zeros(shape)

    def one(idx):
        t = float(t_nodes[idx])
        rng = _stream(seed, idx)
        n_steps = max(1, int(round((1.0 - t) / dt)))
        h = (1.0 - t) / n_steps
        y = np.repeat(z_nodes, n_samples)
        b = np.empty_like(y)
        k = np.empty_like(y)
        logw = np.zeros_like(y)
        for i in range(n_steps):
            s = t + i * h
            rate.at(s, y, k)
            base_drift.at(s, y, b)
            logw -= k * h
            y += b * h + sigma_diff * math.sqrt(h) * np.tile(rng.standard_normal(n_samples), z_nodes.size)
        logw = logw.reshape(z_nodes.size, n_samples)
        top = logw.max(axis=1, keepdims=True)
        w = np.exp(logw - top)
        m = w.mean(axis=1)
        return -(top[:, 0] + np.log(m)), w.std(axis=1, ddof=1) / (math.sqrt(n_samples) * m)

    rows = ordered_map(one, range(t_nodes.size))
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


def gamma_ipf_drift(v_n: DriftField, score_ratio: DriftField, gamma: float, grad_V: DriftField | None, sigma_diff: float = 1.0) -> DriftField:
    """``v + gamma sigma^2 d/dz log r - sigma^2 d/dz V``; the value term is dropped for ``gamma`` in {0, 1}."""
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0, 1]")
    if not v_n.same_grid(score_ratio):
        raise StructureError("drift and score ratio live on different grids")
    s2 = sigma_diff ** 2
    out = v_n + score_ratio.scaled(gamma * s2)
    if gamma * (1.0 - gamma) == 0.0 or grad_V is None:
        return out
    if not v_n.same_grid(grad_V):
        raise StructureError("value gradient lives on a different grid")
    return out - grad_V.scaled(s2)


def resample_field(values: np.ndarray, t_nodes, z_nodes, t_grid, z_grid) -> np.ndarray:
    """Bilinear resampling of a node table onto finer uniform grids, clamped at the edges."""
    t_nodes = np.asarray(t_nodes, dtype=np.float64)
    z_nodes = np.asarray(z_nodes, dtype=np.float64)
    vals = np.ascontiguousarray(values, dtype=np.float64)
    dtn, dzn = _uniform_step(t_nodes, "t_nodes"), _uniform_step(z_nodes, "z_nodes")
    z = np.ascontiguousarray(z_grid, dtype=np.float64)
    out = np.empty((len(t_grid), z.size))
    for k, t in enumerate(t_grid):
        kernels.interp_bilinear(vals, t_nodes[0], dtn, z_nodes[0], dzn, float(t), z, out[k])
    return out


@dataclass
class GammaIPFStep:
    """Everything produced by one step-size generalized IPF update from a potential ``g``."""

    drift: DriftField
    base: DriftField
    score_ratio: DriftField
    grad_V: DriftField
    value: np.ndarray = field(repr=False)
    value_err: np.ndarray = field(repr=False)
    t_nodes: np.ndarray = field(repr=False)
    z_nodes: np.ndarray = field(repr=False)
    g_next: np.ndarray = field(repr=False)
    log_coupling_next: np.ndarray = field(repr=False)

    def target_masses(self) -> np.ndarray:
        """Terminal marginal of the matching static iterate."""
        return np.exp(log_sum_exp(self.log_coupling_next, axis=0))


def gamma_ipf_step(
    problem: BridgeProblem,
    g,
    gamma: float,
    t_grid,
    n_t_nodes: int = 15,
    n_z_nodes: int = 41,
    n_samples: int = 1000,
    value_dt: float = 0.01,
    seed: int = 0,
) -> GammaIPFStep:
    """Drift of the next iterate, built from the current coupling ``Pi[g]``.

    The half step rescales the terminal marginal to ``nu``; the score
    ratio compares the two pinned bridges; the value gradient comes from
    :func:`value_function_grid` on a coarse node grid followed by central
    differences and bilinear resampling.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0, 1]")
    ref = problem.reference()
    g = np.asarray(g, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    z, s = problem.grid, problem.sigma_diff
    lp = _log_coupling(g, ref)
    lp_half = lp + (ref.log_nu - log_sum_exp(lp, axis=0))[None, :]
    v_n = lift_drift(g, problem, t_grid)
    ratio = path_score(lp_half, t_grid, z, sigma_diff=s) - path_score(lp, t_grid, z, sigma_diff=s)
    base = v_n + ratio.scaled(gamma * s * s)
    t_nodes = np.linspace(t_grid[0], t_grid[-1], n_t_nodes)
    z_nodes = np.linspace(z[0], z[-1], n_z_nodes)
    V, V_err = value_function_grid(t_nodes, z_nodes, base, ratio, gamma, s, n_samples, value_dt, seed)
    dV = np.gradient(V, _uniform_step(z_nodes, "z_nodes"), axis=1)
    grad_V = DriftField(t_grid, z, resample_field(dV, t_nodes, z_nodes, t_grid, z))
    drift = gamma_ipf_drift(v_n, ratio, gamma, grad_V, s)
    g_next = g.copy() if gamma == 0.0 else gamma_step_dual(g, gamma, ref)
    return GammaIPFStep(drift, base, ratio, grad_V, V, V_err, t_nodes, z_nodes, g_next, _log_coupling(g_next, ref))
