"""Small named problems and a random instance generator."""
import numpy as np

from .measures import CostMatrix, DiscreteMeasure, ReferenceCoupling, build_reference

SWAP_COST = np.array([[0.0, 1.0], [1.0, 0.0]])


def symmetric_2x2(epsilon: float = 1.0) -> ReferenceCoupling:
    half = DiscreteMeasure(np.array([0.5, 0.5]))
    return build_reference(half, half, CostMatrix(SWAP_COST), epsilon)


def asymmetric_2x2(epsilon: float = 0.5) -> ReferenceCoupling:
    return build_reference(
        DiscreteMeasure(np.array([0.3, 0.7])), DiscreteMeasure(np.array([0.6, 0.4])), CostMatrix(SWAP_COST), epsilon
    )


def random_instance(rng: np.random.Generator, n: int, m: int, epsilon: float) -> ReferenceCoupling:
    """Weights uniform on ``[0.1, 1]`` before normalization, costs uniform on ``[0, 1]``."""
    mu = DiscreteMeasure.from_unnormalized(rng.uniform(0.1, 1.0, n))
    nu = DiscreteMeasure.from_unnormalized(rng.uniform(0.1, 1.0, m))
    return build_reference(mu, nu, CostMatrix(rng.uniform(0.0, 1.0, (n, m))), epsilon)


def random_suite(seed: int, count: int, sizes=(2, 50), epsilons=(0.05, 0.5, 5.0)) -> list:
    """``count`` instances with sizes drawn from ``sizes`` and epsilon cycling through ``epsilons``."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n, m = (int(v) for v in rng.integers(sizes[0], sizes[1] + 1, 2))
        out.append(random_instance(rng, n, m, epsilons[k % len(epsilons)]))
    return out
