"""Random finite chains for the stopping-game tests."""

import numpy as np

from ddztd.dynkin import DynkinGameSpec


def random_chain(rng: np.random.Generator, n: int, T: int, ordering: str, integer: bool = False) -> DynkinGameSpec:
    """Random kernel (some zero entries) and payoffs with the requested ordering.

    ``ordering`` is "ADC" (psi <= zeta <= phi) or "DDC" (phi <= zeta <= psi).
    ``integer=True`` draws small integers so that ties between payoffs are common.
    """
    P = rng.random((n, n)) * (rng.random((n, n)) < 0.7)
    P[np.arange(n), rng.integers(0, n, n)] += 0.1
    P /= P.sum(axis=1, keepdims=True)
    if integer:
        lo = rng.integers(-3, 3, n).astype(float)
        gap1 = rng.integers(0, 3, n).astype(float)
        gap2 = rng.integers(0, 3, n).astype(float)
    else:
        lo = rng.normal(size=n)
        gap1 = rng.exponential(size=n)
        gap2 = rng.exponential(size=n)
    mid, hi = lo + gap1, lo + gap1 + gap2
    if ordering == "ADC":
        return DynkinGameSpec(P, phi=hi, zeta=mid, psi=lo, T=T)
    return DynkinGameSpec(P, phi=lo, zeta=mid, psi=hi, T=T)
