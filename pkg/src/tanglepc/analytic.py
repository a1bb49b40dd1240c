"""Reference distributions for the number of approvers of a transaction.

Three models, all over ``n >= 1`` approvers:

* ``p_u``        -- uniform random tip selection (URTS),
* ``p_urw``      -- unbiased random walk with a linear exit profile
  ``e(x) = 1 + a (x - 1/2)``, sampling the whole Tangle,
* ``p_urw_star`` -- the same walk, sampling only transactions a walk passes
  through (each tip weighted by its exit probability).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import mpmath
import numpy as np
from scipy import integrate

from .tangle import EdgePolicy

A_ZERO = 1e-6
DEFAULT_N_MAX = 40


class ProbabilityVector:
    """A finite distribution over approver counts; ``probs[n]`` is P(n)."""

    def __init__(self, probs: Iterable[float], label: str = "", atol: float = 1e-9):
        p = np.asarray(list(probs) if not isinstance(probs, np.ndarray) else probs, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("probability vector must be a non-empty 1-d sequence")
        if (p < 0).any():
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > atol:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        self.probs = p
        self.label = label

    @classmethod
    def from_counts(cls, counts: Mapping[int, int] | Iterable[int], label: str = "") -> "ProbabilityVector":
        """Normalise a histogram (``{n: count}``) or a raw sample of counts."""
        if not isinstance(counts, Mapping):
            sample = list(counts)
            counts = {}
            for n in sample:
                counts[n] = counts.get(n, 0) + 1
        total = sum(counts.values())
        if total == 0:
            raise ValueError("empty sample")
        p = np.zeros(max(counts) + 1)
        for n, c in counts.items():
            if n < 0:
                raise ValueError("approver counts are non-negative")
            p[n] += c
        return cls(p / total, label)

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, n: int) -> float:
        return float(self.probs[n]) if 0 <= n < len(self.probs) else 0.0

    def __repr__(self) -> str:
        head = ", ".join(f"{n}: {p:.4g}" for n, p in enumerate(self.probs[:6]) if p)
        return f"ProbabilityVector({self.label!r}, {{{head}{', ...' if len(self) > 6 else ''}}})"

    def padded(self, length: int) -> np.ndarray:
        out = np.zeros(max(length, len(self.probs)))
        out[: len(self.probs)] = self.probs
        return out

    def survival(self, length: int | None = None) -> np.ndarray:
        """``Q(n) = sum_{m >= n} P(m)``."""
        p = self.padded(length or len(self.probs))
        return p[::-1].cumsum()[::-1]

    @property
    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def as_dict(self) -> dict[int, float]:
        return {n: float(p) for n, p in enumerate(self.probs) if p > 0}


@dataclass(frozen=True)
class ModelParams:
    lam: float
    edge_policy: EdgePolicy = EdgePolicy.SEM
    a: float = 0.0
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        object.__setattr__(self, "edge_policy", EdgePolicy(self.edge_policy))
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if not 0.0 <= self.a <= 2.0:
            raise ValueError("a must lie in [0, 2]")
        if self.n_max < 2:
            raise ValueError("n_max too small")
        if 1.0 - poisson_cdf(self.lambda_u, self.n_max - 1) > 1e-12:
            raise ValueError(f"n_max={self.n_max} leaves a Poisson tail above 1e-12")

    @property
    def lambda_u(self) -> float:
        return lambda_u(self.lam, self.edge_policy)


def tip_count(lam: float) -> float:
    """Mean tip count assumed by the models, ``1 + 2 lambda``."""
    return 1.0 + 2.0 * lam


def poisson_pmf(gamma: float, n: int) -> float:
    if gamma < 0:
        raise ValueError("negative rate")
    if n < 0:
        return 0.0
    if gamma == 0:
        return 1.0 if n == 0 else 0.0
    if n <= 20:
        return math.exp(-gamma) * gamma**n / math.factorial(n)
    return math.exp(n * math.log(gamma) - gamma - math.lgamma(n + 1))


def poisson_cdf(gamma: float, n: int) -> float:
    return math.fsum(poisson_pmf(gamma, k) for k in range(n + 1))


def lambda_u(lam: float, edge_policy: EdgePolicy | str) -> float:
    """Rate of additional approvals a URTS tip collects during one reveal delay."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    L = tip_count(lam)
    rate = 2.0 * lam / L
    if EdgePolicy(edge_policy) is EdgePolicy.SEM:
        rate *= 1.0 - 0.5 / L
    return rate


def _normalised(p: np.ndarray, label: str) -> ProbabilityVector:
    return ProbabilityVector(p / p.sum(), label)


def p_u(params: ModelParams) -> ProbabilityVector:
    lu = params.lambda_u
    p = np.array([0.0] + [poisson_pmf(lu, n - 1) for n in range(1, params.n_max + 1)])
    return _normalised(p, "P_U")


def g(n: int, a: float, lu: float) -> float:
    """``g(n) = int_0^1 exp(-f(x) lu) (1 + f(x))^n dx`` for ``f(x) = a (x - 1/2)``,
    evaluated from its closed-form antiderivative.

    The alternating sum cancels badly once ``n!`` grows, so it runs in
    arbitrary precision with enough digits to absorb the largest term.
    """
    if a <= A_ZERO:
        return 1.0
    # log10 of the largest term is below n log10(n) + (n + 1) |log10(lu)| + a lu
    digits = n * math.log10(max(n, 1)) + (n + 1) * abs(math.log10(lu)) + a * lu
    with mpmath.workdps(30 + int(digits)):
        a_ = mpmath.mpf(a)
        lu_ = mpmath.mpf(lu)
        lo, hi = -a_ / 2, a_ / 2

        def antideriv_terms(y):
            ey = mpmath.exp(-y * lu_)
            return mpmath.fsum(
                lu_ ** (-j - 1) * mpmath.ff(n, j) * ey * (1 + y) ** (n - j) for j in range(n + 1)
            )

        # d/dy of -sum(...) is exp(-y lu)(1+y)^n, so the integral over
        # [lo, hi] is the bracket evaluated at lo minus at hi.
        return float((antideriv_terms(lo) - antideriv_terms(hi)) / a_)


@functools.lru_cache(maxsize=256)
def _g_table(params: ModelParams) -> tuple[float, ...]:
    return tuple(g(n, params.a, params.lambda_u) for n in range(params.n_max + 1))


def p_urw(params: ModelParams) -> ProbabilityVector:
    gs = _g_table(params)
    lu = params.lambda_u
    p = np.array([0.0] + [poisson_pmf(lu, n - 1) * gs[n - 1] for n in range(1, params.n_max + 1)])
    return _normalised(p, "P_URW")


def p_urw_star(params: ModelParams) -> ProbabilityVector:
    gs = _g_table(params)
    lu = params.lambda_u
    p = np.array([0.0] + [poisson_pmf(lu, n - 1) * gs[n] for n in range(1, params.n_max + 1)])
    return _normalised(p, "P*_URW")


def quadrature_reference(params: ModelParams, n: int, weighted: bool = False, lu: float | None = None) -> float:
    """Direct numerical integration of the walk models over the relative tip
    index; the closed forms above are checked against this.  ``lu`` overrides
    the rate implied by ``params.lam``."""
    lu = params.lambda_u if lu is None else lu
    a = params.a

    def exit_prob(x):
        return 1.0 + a * (x - 0.5)

    def integrand(x):
        e = exit_prob(x)
        v = poisson_pmf(max(e * lu, 0.0), n - 1)
        return v * e if weighted else v

    value, err = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    if err > 1e-10:
        raise ArithmeticError(f"quadrature did not converge (error estimate {err:.2e})")
    if not weighted:
        return value
    norm, err = integrate.quad(exit_prob, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return value / norm
