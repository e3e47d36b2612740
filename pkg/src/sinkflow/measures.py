"""Discrete measures, costs, reference couplings and log-domain helpers.

Every coupling is stored as a dense matrix of log-masses. Probability-domain
values are only materialized for diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-12
NORMALIZATION_TOL = 1e-10


class StructureError(ValueError):
    """Shapes or dimensions that do not fit together."""


class ParameterError(ValueError):
    """A numeric parameter outside its admissible range."""


class DegeneracyError(ArithmeticError):
    """A computation produced non-finite or nonpositive values where they are not allowed."""


class ConvergenceError(RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability weights on a finite support.

    Parameters
    ----------
    weights : array-like, shape (n,)
        Nonnegative masses summing to one.
    support : array-like, shape (n,), optional
        Strictly increasing grid coordinates.
    """

    weights: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise StructureError("weights must be a non-empty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ParameterError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ParameterError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _freeze(w))
        if self.support is not None:
            s = np.asarray(self.support, dtype=np.float64)
            if s.shape != w.shape:
                raise StructureError("support and weights differ in length")
            if s.size > 1 and np.any(np.diff(s) <= 0):
                raise ParameterError("support must be strictly increasing")
            object.__setattr__(self, "support", _freeze(s))

    @classmethod
    def from_unnormalized(cls, weights, support=None) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum(), support)

    def __len__(self):
        return self.weights.size

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)


@dataclass(frozen=True)
class CostMatrix:
    """Dense cost matrix, entry ``(i, j)`` is the cost of moving ``x_i`` to ``y_j``."""

    entries: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.entries, dtype=np.float64)
        if c.ndim != 2:
            raise StructureError("cost must be a matrix")
        if not np.all(np.isfinite(c)):
            raise ParameterError("cost entries must be finite")
        object.__setattr__(self, "entries", _freeze(c))

    @classmethod
    def quadratic(cls, x, y) -> "CostMatrix":
        """Half squared distance ``|x - y|^2 / 2`` between two 1D supports."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return cls(0.5 * (x[:, None] - y[None, :]) ** 2)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class Coupling:
    """Joint probability matrix stored as log-masses."""

    log_density: np.ndarray

    def __post_init__(self):
        ld = np.asarray(self.log_density, dtype=np.float64)
        if ld.ndim != 2:
            raise StructureError("coupling must be a matrix")
        object.__setattr__(self, "log_density", _freeze(ld))

    @property
    def shape(self):
        return self.log_density.shape

    def density(self) -> np.ndarray:
        return np.exp(self.log_density)

    def total_mass(self) -> float:
        return float(np.exp(log_sum_exp(self.log_density.ravel())))


@dataclass(frozen=True)
class ReferenceCoupling:
    """Normalized Gibbs reference ``mu (x) nu * exp(-c/eps) / Z``.

    ``normalizer`` is the shift ``eps * log Z`` added to the cost so that
    the reference is a probability matrix; ``cost + normalizer`` is the
    shifted cost used in every potential formula.
    """

    log_density: np.ndarray
    epsilon: float
    log_mu: np.ndarray
    log_nu: np.ndarray
    normalizer: float
    cost: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.log_density.shape

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_mu)

    @property
    def nu(self) -> np.ndarray:
        return np.exp(self.log_nu)

    @property
    def shifted_cost(self) -> np.ndarray:
        return self.cost + self.normalizer

    def coupling(self) -> Coupling:
        return Coupling(self.log_density)


def log_sum_exp(v, axis=None):
    """``log(sum(exp(v)))`` with max-subtraction.

    With ``axis=None`` the input must be a non-empty vector and a float is
    returned. Rows or columns that are entirely ``-inf`` give ``-inf``.
    """
    v = np.asarray(v, dtype=np.float64)
    if axis is None:
        if v.ndim != 1 or v.size == 0:
            raise StructureError("log_sum_exp expects a non-empty vector")
        m = v.max()
        if not np.isfinite(m):
            return float(m)
        return float(m + np.log(np.sum(np.exp(v - m))))
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def build_reference(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, epsilon: float) -> ReferenceCoupling:
    """Normalized reference coupling for cost ``cost`` and regularization ``epsilon``."""
    c = cost.entries if isinstance(cost, CostMatrix) else CostMatrix(cost).entries
    if c.shape != (len(mu), len(nu)):
        raise StructureError(f"cost shape {c.shape} does not match measures ({len(mu)}, {len(nu)})")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if np.any(mu.weights == 0) or np.any(nu.weights == 0):
        raise ParameterError("zero-mass atoms must be pruned before building the reference")
    log_mu, log_nu = mu.log_weights, nu.log_weights
    unnormalized = log_mu[:, None] + log_nu[None, :] - c / epsilon
    log_z = log_sum_exp(unnormalized.ravel())
    return ReferenceCoupling(
        log_density=_freeze(unnormalized - log_z),
        epsilon=float(epsilon),
        log_mu=_freeze(log_mu),
        log_nu=_freeze(log_nu),
        normalizer=float(epsilon * log_z),
        cost=_freeze(c),
    )


def marginals(pi: Coupling) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Row and column sums of ``pi`` as measures."""
    px = np.exp(log_sum_exp(pi.log_density, axis=1))
    py = np.exp(log_sum_exp(pi.log_density, axis=0))
    for p in (px, py):
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL:
            raise StructureError(f"coupling mass {p.sum()!r} is not 1")
    # renormalize away round-off so the result passes the simplex check
    return DiscreteMeasure(px / px.sum()), DiscreteMeasure(py / py.sum())


def kl_divergence(p, q) -> float:
    """Relative entropy ``sum p log(p/q)`` with ``0 log 0 = 0``.

    Accepts vectors, matrices or :class:`Coupling` objects (compared in log
    domain). Returns ``inf`` when ``p`` charges an atom where ``q`` has none.
    """
    if isinstance(p, Coupling) or isinstance(q, Coupling):
        lp = p.log_density if isinstance(p, Coupling) else np.log(np.asarray(p, dtype=np.float64))
        lq = q.log_density if isinstance(q, Coupling) else np.log(np.asarray(q, dtype=np.float64))
        return _kl_log(lp, lq)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise StructureError("kl_divergence arguments differ in shape")
    support = p > 0
    if np.any(q[support] <= 0):
        return float("inf")
    ps, qs = p[support], q[support]
    return float(max(np.sum(ps * (np.log(ps) - np.log(qs))), 0.0))


def _kl_log(lp: np.ndarray, lq: np.ndarray) -> float:
    if lp.shape != lq.shape:
        raise StructureError("kl_divergence arguments differ in shape")
    support = np.isfinite(lp)
    if np.any(~np.isfinite(lq[support])):
        return float("inf")
    p = np.exp(lp[support])
    return float(max(np.sum(p * (lp[support] - lq[support])), 0.0))


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64))))
