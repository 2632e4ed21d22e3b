"""Approximation functions and Diophantine certification.

An approximation function Delta is a continuous, non-decreasing function on
[1, inf) with Delta(1) = 1 whose companion Lambda(t) = t * Delta(t) has a
convergent log-integral  int_tau^inf log(Lambda(t)) / t^2 dt.  That integral
is what ultimately controls the total analyticity-width loss of the
iteration, so it is computed here with quadrature and, for tabulated
functions, an explicit power-law tail.

A frequency vector omega is certified against Delta by brute force: the
scan over all lattice modes 0 < |k| <= K (sum-norm) returns the largest
admissible Diophantine constant  alpha = min_k |<k, omega>| * Delta(|k|)
together with the minimizing mode.  Dirichlet's pigeonhole bound
min |<k, omega>| <= |omega| / K^(n-1) gives the scale the scan has to beat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import CertificationError, DivergenceError, DomainError
from .util import lattice_ball, max_norm, sum_norm

#: Brute-force scan cap for dimension 2; scaled down for higher dimensions so
#: the enumerated ball stays a comparable size.
K_CAP_DIM2 = 200


def default_k_cap(n: int) -> int:
    if n <= 2:
        return K_CAP_DIM2
    return max(5, int(round(K_CAP_DIM2 ** (2.0 / n))))


@dataclass(frozen=True)
class ApproxFn:
    """Approximation function Delta, power-law or tabulated.

    kind="power": Delta(t) = t**rho with rho >= 0 (rho > n-1 is what makes
    n-dimensional frequencies certifiable; rho = 0 is admitted because the
    degenerate Lambda(t) = t has convenient closed forms).

    kind="table": strictly positive samples (ts, values) with ts[0] == 1,
    values[0] == 1, both non-decreasing; log-linear interpolation between
    knots and power-law extrapolation beyond the last knot.
    """

    kind: str = "power"
    rho: float = 2.0
    ts: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "power":
            if not (self.rho >= 0.0 and math.isfinite(self.rho)):
                raise DomainError(f"power-law exponent must be >= 0, got {self.rho}")
        elif self.kind == "table":
            ts, vs = np.asarray(self.ts, float), np.asarray(self.values, float)
            if ts.size < 2 or ts.size != vs.size:
                raise DomainError("table needs matching ts/values with >= 2 entries")
            if ts[0] != 1.0 or vs[0] != 1.0:
                raise DomainError("table must start at Delta(1) = 1")
            if np.any(np.diff(ts) <= 0):
                raise DomainError("table abscissae must be strictly increasing")
            if np.any(np.diff(vs) < 0) or np.any(vs <= 0):
                raise DomainError("table values must be positive and non-decreasing")
        else:
            raise DomainError(f"unknown ApproxFn kind {self.kind!r}")

    def _tail_exponent(self) -> float:
        """Log-log slope of the last table segment (power kind: rho)."""
        if self.kind == "power":
            return self.rho
        t0, t1 = self.ts[-2], self.ts[-1]
        v0, v1 = self.values[-2], self.values[-1]
        if v1 == v0:
            return 0.0
        return math.log(v1 / v0) / math.log(t1 / t0)

    def delta(self, t: float) -> float:
        """Delta(t) for t >= 1."""
        if t < 1.0:
            raise DomainError(f"approximation functions are defined for t >= 1, got {t}")
        if self.kind == "power":
            return t**self.rho
        ts, vs = self.ts, self.values
        if t >= ts[-1]:
            return vs[-1] * (t / ts[-1]) ** self._tail_exponent()
        logv = np.interp(math.log(t), np.log(ts), np.log(vs))
        return math.exp(float(logv))

    def __call__(self, t: float) -> float:
        return self.delta(t)


def eval_lambda(delta: ApproxFn, t: float) -> float:
    """Companion function Lambda(t) = t * Delta(t), t >= 1."""
    return t * delta.delta(t)


def lambda_inverse(delta: ApproxFn, y: float) -> float:
    """Largest t >= 1 with Lambda(t) <= y, for y >= 1.

    Closed form y**(1/(1+rho)) for power laws; elsewhere bisection to
    relative tolerance 1e-12 (Lambda is continuous and increasing, so the
    supremum is the root of Lambda(t) = y).
    """
    if y < 1.0:
        raise DomainError(f"lambda_inverse needs y >= 1, got {y}")
    if delta.kind == "power":
        return y ** (1.0 / (1.0 + delta.rho))
    lo, hi = 1.0, 2.0
    while eval_lambda(delta, hi) <= y:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if eval_lambda(delta, mid) <= y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * lo:
            break
    return lo


def _power_tail_integral(tau: float, c: float, gamma: float) -> float:
    """Exact integral of (log c + gamma*log t)/t^2 over [tau, inf)."""
    return gamma * (1.0 + math.log(tau)) / tau + math.log(c) / tau


def russmann_integral(delta: ApproxFn, tau: float, return_error: bool = False):
    """Convergence integral  int_tau^inf log(Lambda(t)) / t^2 dt.

    Adaptive quadrature on the resolved range plus an exact power-law tail
    beyond it.  For tabulated kinds the knots are passed to the quadrature
    as breakpoints and the tail uses the last segment's log-log slope; the
    quadrature's absolute-error estimate is reported with ``return_error``.
    """
    if tau < 1.0:
        raise DomainError(f"russmann_integral needs tau >= 1, got {tau}")

    def integrand(t: float) -> float:
        return math.log(eval_lambda(delta, t)) / (t * t)

    if delta.kind == "table":
        t_end = max(float(delta.ts[-1]), tau)
        gamma = 1.0 + delta._tail_exponent()
        if gamma < 0.0:
            raise DivergenceError("table tail slope implies Lambda decreasing")
        # The power-law tail model only applies when the integrand is already
        # decaying across the last resolved knots.
        ta, tb = float(delta.ts[-2]), float(delta.ts[-1])
        if tb > tau and integrand(tb) > integrand(max(tau, ta)):
            raise DivergenceError(
                "integrand log Lambda(t)/t^2 not decaying at the table end")
    else:
        t_end = tau
        gamma = 1.0 + delta.rho

    value = 0.0
    err = 0.0
    if t_end > tau:
        knots = [t for t in delta.ts if tau < t < t_end]
        v, e = quad(integrand, tau, t_end, points=knots or None, limit=400,
                    epsabs=0.0, epsrel=1e-12)
        value += v
        err += e
        c = eval_lambda(delta, t_end) / t_end**gamma
        value += _power_tail_integral(t_end, c, gamma)
    else:
        if delta.kind == "power":
            v, e = quad(integrand, tau, np.inf, limit=400, epsabs=0.0, epsrel=1e-12)
            value += v
            err += e
        else:
            c = eval_lambda(delta, t_end) / t_end**gamma
            value += _power_tail_integral(t_end, c, gamma)
    if not math.isfinite(value):
        raise DivergenceError(f"convergence integral not finite at tau={tau}")
    if return_error:
        return value, err
    return value


@dataclass
class FrequencyDomain:
    """A frequency vector with its certification bookkeeping.

    omega_star is the frequency the homological equations divide by; h is
    the radius of the complex neighbourhood carried through the norm
    bookkeeping; alpha the Diophantine constant; K_cert the largest
    sum-norm up to which  |<k, omega_star>| >= alpha / Delta(|k|)  has been
    verified by brute force.
    """

    omega_star: np.ndarray
    h: float
    alpha: float
    K_cert: int = 0

    def __post_init__(self):
        self.omega_star = np.asarray(self.omega_star, dtype=float).reshape(-1)
        if self.h <= 0:
            raise DomainError(f"neighbourhood radius h must be > 0, got {self.h}")
        if self.alpha <= 0:
            raise DomainError(f"Diophantine constant alpha must be > 0, got {self.alpha}")

    @property
    def n(self) -> int:
        return self.omega_star.size

    def divisor(self, k) -> float:
        return float(np.dot(np.asarray(k, dtype=float), self.omega_star))


@dataclass
class CertificationReport:
    """Outcome of a brute-force Diophantine scan up to sum-norm K."""

    K: int
    alpha_max: float              # min over the scan of |<k,omega>| * Delta(|k|)
    argmin_k: tuple[int, ...]
    alpha_requested: float
    passed: bool
    margin: float                 # alpha_max - alpha_requested
    violations: list[tuple[int, ...]] = field(default_factory=list)
    indeterminate: list[tuple[int, ...]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "alpha_max": self.alpha_max,
            "argmin_k": list(self.argmin_k),
            "alpha_requested": self.alpha_requested,
            "passed": self.passed,
            "margin": self.margin,
            "violations": [list(k) for k in self.violations],
            "indeterminate": [list(k) for k in self.indeterminate],
        }


def _canonical_mode(k: np.ndarray) -> tuple[int, ...]:
    """Pick the representative of {k, -k} whose first nonzero entry is > 0."""
    for x in k:
        if x > 0:
            return tuple(int(v) for v in k)
        if x < 0:
            return tuple(int(-v) for v in k)
    return tuple(int(v) for v in k)


def certify_diophantine(fd: FrequencyDomain, delta: ApproxFn, K: int) -> CertificationReport:
    """Scan all 0 < |k| <= K and certify fd.alpha, updating fd.K_cert on success.

    Certification is a query: a failing alpha produces a report listing the
    violating modes, not an exception.  Products within floating rounding of
    the threshold (below 1e-12 * |k| * |omega|) are flagged indeterminate.
    """
    if K < 1:
        raise DomainError(f"certification needs K >= 1, got {K}")
    n = fd.n
    cap = default_k_cap(n)
    if K > cap:
        raise DomainError(f"K={K} exceeds the scan cap {cap} for dimension {n}")
    ks = lattice_ball(n, K)
    divisors = np.abs(ks @ fd.omega_star)
    knorms = np.abs(ks).sum(axis=1)
    weights = np.array([delta.delta(float(m)) for m in knorms])
    products = divisors * weights

    imin = int(np.argmin(products))
    alpha_max = float(products[imin])
    scale = 1e-12 * knorms * max_norm(fd.omega_star)
    viol_idx = np.nonzero(products < fd.alpha - scale)[0]
    indet_idx = np.nonzero(np.abs(products - fd.alpha) <= scale)[0]
    violations = sorted({_canonical_mode(ks[i]) for i in viol_idx})
    indeterminate = sorted({_canonical_mode(ks[i]) for i in indet_idx})
    passed = len(violations) == 0
    report = CertificationReport(
        K=K,
        alpha_max=alpha_max,
        argmin_k=_canonical_mode(ks[imin]),
        alpha_requested=fd.alpha,
        passed=passed,
        margin=alpha_max - fd.alpha,
        violations=violations,
        indeterminate=indeterminate,
    )
    if passed:
        fd.K_cert = max(fd.K_cert, K)
    return report


def require_certified(fd: FrequencyDomain, knorm: int) -> None:
    """Raise unless modes of the given sum-norm are covered by fd.K_cert."""
    if knorm > fd.K_cert:
        raise CertificationError(
            f"mode with |k|={knorm} exceeds certified range K_cert={fd.K_cert}",
            details={"knorm": knorm, "K_cert": fd.K_cert},
        )


def dirichlet_bound(fd: FrequencyDomain, K: int) -> tuple[float, float]:
    """(min divisor over 0 < |k| <= K,  pigeonhole bound |omega| / K^(n-1)).

    For nonresonant omega the first component never exceeds the second; in
    dimension 1 the bound is vacuous (equal to |omega|) and returned anyway.
    """
    if K < 1:
        raise DomainError(f"dirichlet_bound needs K >= 1, got {K}")
    ks = lattice_ball(fd.n, K)
    min_div = float(np.abs(ks @ fd.omega_star).min())
    bound = max_norm(fd.omega_star) / K ** (fd.n - 1)
    return min_div, bound


def golden2() -> np.ndarray:
    """The standard 2-d strongly nonresonant test frequency (1, (1+sqrt 5)/2)."""
    return np.array([1.0, (1.0 + math.sqrt(5.0)) / 2.0])
