"""One conjugation step: split, homological solve, transport, certificate.

Given X = N + P with constant part N = omega and ||P||_s <= eps, a step
with width loss sigma and cutoff tau (a = 1 - e^(-tau sigma)) proceeds as:

  1. split P into the reweighted infrared part Ptilde (on the wider strip,
     with bound a*eps) and the ultraviolet rest Phat (factor 1-a);
  2. solve the homological equation [F, N] = Ptilde - P0 mode-wise,
     F_k = ptilde_k / (i <k, omega>), with every divisor checked against
     the certified floor 1/Delta(tau);
  3. assemble the new perturbation
     P+ = (time-1 flow of F)^* Phat + int_0^1 (flow at t)^* [P_t, F] dt,
     P_t = t Ptilde + (1-t) P0, and record the constant P0 = a * mean(P)
     as this step's frequency shift;
  4. certify the contraction:  ||P+||_{s-2 sigma} + tail charges <= q eps
     with q = (1 - a + a^2 b)(1 + b) e^a and b = Lambda(tau) eps.

A step that cannot meet its own certificate aborts with the full norm
ledger; there is no silent retry here (retry policy belongs to the
scheduler).

Coefficients are constant in the frequency parameter throughout the loop,
so each step's parameter map is the exact translation by -P0 and the
composed parameter map is a running vector sum.  The general
contraction-based inversion of a near-identity analytic map is still
provided (invert_near_identity) and exercised on synthetic maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .approx import ApproxFn, FrequencyDomain, eval_lambda, require_certified
from .calculus import PullbackBudget, integrated_pullback_bracket, lie_bracket, lie_pullback
from .errors import (ContractionError, DivisorError, DomainError,
                     HypothesisError, KamError)
from .fourier import TrigVectorField, mean_value, split_ir_uv, weighted_norm
from .util import max_norm, sum_norm

#: Adaptive Lie-series truncation: stop once the tail bound drops below this
#: fraction of the remaining contraction budget.
TAIL_BUDGET_FACTOR = 1e-3


def contraction_factor(a: float, b: float) -> float:
    """Per-step contraction factor q = (1 - a + a^2 b)(1 + b) e^a."""
    return (1.0 - a + a * a * b) * (1.0 + b) * math.exp(a)


@dataclass
class StepParams:
    """Width loss, mode cutoff, and the derived step constants."""

    sigma: float
    tau: float
    a: float
    b: float
    sigma_tilde: float
    q: float

    def __post_init__(self):
        if not (0.0 < self.a < 1.0):
            raise DomainError(f"split weight a must lie in (0,1), got {self.a}")
        a_expected = -math.expm1(-self.tau * self.sigma)
        if not math.isclose(self.a, a_expected, rel_tol=1e-12, abs_tol=0.0):
            raise DomainError(
                f"coupling violated: a={self.a!r}, 1-e^(-tau sigma)={a_expected!r}")
        if self.a > self.tau * self.sigma * (1.0 + 1e-12):
            raise DomainError("a <= tau*sigma violated")

    @classmethod
    def from_widths(cls, sigma: float, tau: float, eps: float,
                    delta: ApproxFn) -> "StepParams":
        """Build from (sigma, tau) and the current perturbation size eps."""
        if sigma <= 0.0 or tau < 1.0:
            raise DomainError(f"need sigma > 0 and tau >= 1, got {sigma}, {tau}")
        a = -math.expm1(-tau * sigma)
        b = eval_lambda(delta, tau) * eps
        return cls(sigma=sigma, tau=tau, a=a, b=b,
                   sigma_tilde=sigma * (1.0 - a) / a, q=contraction_factor(a, b))

    @classmethod
    def from_cutoff(cls, tau: float, a: float, eps: float,
                    delta: ApproxFn) -> "StepParams":
        """Build from the cutoff tau and target a; sigma = log(1/(1-a))/tau."""
        if not (0.0 < a < 1.0):
            raise DomainError(f"split weight a must lie in (0,1), got {a}")
        sigma = -math.log1p(-a) / tau
        b = eval_lambda(delta, tau) * eps
        return cls(sigma=sigma, tau=tau, a=a, b=b,
                   sigma_tilde=sigma * (1.0 - a) / a, q=contraction_factor(a, b))


@dataclass
class HypothesisReport:
    """Outcome of the step smallness check, with one margin per condition."""

    passed: bool
    eps: float
    margins: dict[str, float]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "eps": self.eps, "margins": dict(self.margins)}


def check_step_hypothesis(eps: float, h: float, lambda_tau: float, a: float
                          ) -> HypothesisReport:
    """Check eps < min(h/(2a), 1/(2 Lambda(tau))) and h <= 1/Lambda(tau).

    The eps inequalities are strict; all three margins (positive = satisfied)
    are reported so a caller can name the binding one.
    """
    if min(eps, h, lambda_tau, a) < 0.0 or h == 0.0 or lambda_tau == 0.0 or a == 0.0:
        raise DomainError("hypothesis check needs positive h, Lambda(tau), a")
    margins = {
        "eps_vs_h": h / (2.0 * a) - eps,
        "eps_vs_lambda": 1.0 / (2.0 * lambda_tau) - eps,
        "h_vs_lambda": 1.0 / lambda_tau - h,
    }
    passed = margins["eps_vs_h"] > 0.0 and margins["eps_vs_lambda"] > 0.0 \
        and margins["h_vs_lambda"] >= 0.0
    return HypothesisReport(passed=passed, eps=eps, margins=margins)


@dataclass
class StepRecord:
    """Everything one accepted step produced, for reports and verification."""

    F: TrigVectorField
    p0: np.ndarray
    widths_in: tuple[float, float]          # (s, h)
    s_out: float                            # s - 2 sigma
    h_out_param: float                      # h - 2 a eps  (parameter map domain)
    h_out_pert: float                       # h - 2 eps    (perturbation bound domain)
    eps_in: float
    eps_out_budget: float                   # q * eps_in
    eps_out_measured: float
    tail_charge: float
    norm_F: float                           # ||F|| at s + sigma_tilde
    norm_F_budget: float                    # Lambda(tau) sigma eps
    sigma: float
    tau: float
    lambda_tau: float
    q: float
    h_widths_differ: bool = field(init=False)

    def __post_init__(self):
        self.p0 = np.asarray(self.p0)
        # The two book-kept output radii in h never coincide for a < 1;
        # both are carried rather than picking one.
        self.h_widths_differ = self.h_out_param != self.h_out_pert

    def to_dict(self) -> dict:
        return {
            "p0": [float(x) for x in np.real(self.p0)],
            "s_in": self.widths_in[0],
            "h_in": self.widths_in[1],
            "s_out": self.s_out,
            "h_out_param": self.h_out_param,
            "h_out_pert": self.h_out_pert,
            "eps_in": self.eps_in,
            "eps_out_budget": self.eps_out_budget,
            "eps_out_measured": self.eps_out_measured,
            "tail_charge": self.tail_charge,
            "norm_F": self.norm_F,
            "norm_F_budget": self.norm_F_budget,
            "sigma": self.sigma,
            "tau": self.tau,
            "lambda_tau": self.lambda_tau,
            "q": self.q,
            "F": self.F.to_json_dict(),
        }


#: Relative floor for the certified small-divisor check.
_DIVISOR_SLACK = 1.0 - 1e-12
#: Homological residual tolerance, relative to ||Ptilde||_0.
_RESIDUAL_REL = 1e-13


def solve_homological(P_tilde: TrigVectorField, fd: FrequencyDomain,
                      delta: ApproxFn, tau: float) -> TrigVectorField:
    """Solve [F, N] = Ptilde for N = omega_star, F_k = ptilde_k / (i <k, omega>).

    Ptilde must carry modes 0 < |k| < tau only (the caller removes the mean
    first).  Every support mode must lie within the certified range, and its
    divisor must clear the floor 1/Delta(tau) that the certification
    reserves (certified alpha at omega_star minus the drift allowance
    tau*h <= 1/Delta(tau) across the h-neighbourhood).  The solution is
    verified by recomputing the bracket residual directly.
    """
    floor = 1.0 / delta.delta(tau)
    coeffs: dict[tuple[int, ...], np.ndarray] = {}
    for k, v in P_tilde.modes():
        m = sum_norm(k)
        if m == 0:
            raise DomainError("homological right-hand side must be mean-free")
        if m >= tau:
            raise DomainError(
                f"mode {k} with |k|={m} at or above the cutoff tau={tau}")
        require_certified(fd, m)
        d = fd.divisor(k)
        if abs(d) < floor * _DIVISOR_SLACK:
            raise DivisorError(
                f"divisor |<k, omega>|={abs(d):.6g} below floor {floor:.6g} at k={k}",
                details={"k": list(k), "divisor": abs(d), "floor": floor})
        coeffs[k] = v / (1j * d)
    F = TrigVectorField(P_tilde.n, coeffs, real=P_tilde.real, validate=False)

    norm_rhs = weighted_norm(P_tilde, 0.0)
    if norm_rhs > 0.0:
        N_field = TrigVectorField.constant(fd.omega_star)
        residual = lie_bracket(F, N_field) - P_tilde
        if weighted_norm(residual, 0.0) > _RESIDUAL_REL * norm_rhs:
            raise KamError(
                "homological residual exceeds tolerance",
                details={"residual": weighted_norm(residual, 0.0), "rhs": norm_rhs})
    return F


def kam_step(P: TrigVectorField, s: float, h: float, fd: FrequencyDomain,
             delta: ApproxFn, sp: StepParams, prune_rel: float = 0.0,
             k_max: int | None = None) -> tuple[TrigVectorField, StepRecord]:
    """Run one full conjugation step and certify its contraction.

    prune_rel > 0 drops the smallest output modes worth at most
    prune_rel * q * eps of norm at the output width; k_max additionally
    drops all modes above that sum-norm.  Either way the dropped norm is
    charged to the step's tail account, so the certificate
    eps_out_measured + tail_charge <= q * eps_in stays meaningful.
    """
    if sp.sigma >= s / 2.0:
        raise HypothesisError(
            f"width loss sigma={sp.sigma:.6g} must stay below s/2={s / 2.0:.6g}")
    eps_in = weighted_norm(P, s)
    if not math.isfinite(eps_in):
        raise HypothesisError("input norm overflowed: perturbation outside any budget")
    lambda_tau = eval_lambda(delta, sp.tau)
    hyp = check_step_hypothesis(eps_in, h, lambda_tau, sp.a)
    if not hyp.passed:
        raise HypothesisError("step hypothesis fails", details=hyp.to_dict())

    P_tilde, P_hat = split_ir_uv(P, sp.tau, sp.sigma, sp.a)
    p0 = mean_value(P_tilde)
    P_osc = P_tilde - TrigVectorField.constant(p0)

    F = solve_homological(P_osc, fd, delta, sp.tau) if len(P_osc) else \
        TrigVectorField.zero(P.n, real=P.real)

    norm_F = weighted_norm(F, s + sp.sigma_tilde)
    norm_F_budget = lambda_tau * sp.sigma * eps_in
    if norm_F > norm_F_budget * (1.0 + 1e-9) + 1e-300:
        raise ContractionError(
            "generator norm exceeds its budget",
            details={"norm_F": norm_F, "budget": norm_F_budget})

    budget_out = sp.q * eps_in
    pb = PullbackBudget.for_generator(F, r=s - sp.sigma, sigma=sp.sigma, lam=1.0 / sp.a)
    uv_target = TAIL_BUDGET_FACTOR * budget_out
    T_uv, tail_uv = lie_pullback(F, P_hat, 1.0, pb, tail_target=uv_target)
    partial = weighted_norm(T_uv, s - 2.0 * sp.sigma)
    br_target = TAIL_BUDGET_FACTOR * max(budget_out - partial, 0.0)
    T_br, tail_br = integrated_pullback_bracket(P_tilde, p0, F, pb,
                                                tail_target=br_target)
    P_plus = T_uv + T_br

    tail_charge = tail_uv + tail_br
    s_out = s - 2.0 * sp.sigma
    if k_max is not None:
        high = {k: v for k, v in P_plus.coeffs.items() if sum_norm(k) > k_max}
        if high:
            dropped = TrigVectorField(P.n, high, real=False, validate=False)
            tail_charge += weighted_norm(dropped, s_out)
            kept = {k: v for k, v in P_plus.coeffs.items() if sum_norm(k) <= k_max}
            P_plus = TrigVectorField(P.n, kept, real=P_plus.real, validate=False)
    if prune_rel > 0.0:
        P_plus, charge = P_plus.prune(s_out, prune_rel * budget_out)
        tail_charge += charge

    eps_out = weighted_norm(P_plus, s_out)
    ledger = {
        "eps_in": eps_in,
        "eps_out_measured": eps_out,
        "tail_charge": tail_charge,
        "eps_out_budget": budget_out,
        "norm_F": norm_F,
        "norm_P_hat": weighted_norm(P_hat, s - sp.sigma),
        "norm_P_tilde_wide": weighted_norm(P_tilde, s + sp.sigma_tilde),
        "tail_uv": tail_uv,
        "tail_bracket": tail_br,
        "sigma": sp.sigma,
        "tau": sp.tau,
        "a": sp.a,
        "b": sp.b,
        "q": sp.q,
    }
    if eps_out + tail_charge > budget_out * (1.0 + 1e-12):
        raise ContractionError("step contraction certificate failed", details=ledger)

    p0_norm = max_norm(p0)
    if p0_norm > sp.a * eps_in * (1.0 + 1e-12):
        raise ContractionError("frequency shift exceeds a*eps", details=ledger)
    if p0_norm >= h / 2.0:
        raise HypothesisError("frequency shift reaches h/2; parameter map not invertible",
                              details=ledger)

    rec = StepRecord(
        F=F,
        p0=np.real(p0) if P.real else p0,
        widths_in=(s, h),
        s_out=s_out,
        h_out_param=h - 2.0 * sp.a * eps_in,
        h_out_pert=h - 2.0 * eps_in,
        eps_in=eps_in,
        eps_out_budget=budget_out,
        eps_out_measured=eps_out,
        tail_charge=tail_charge,
        norm_F=norm_F,
        norm_F_budget=norm_F_budget,
        sigma=sp.sigma,
        tau=sp.tau,
        lambda_tau=lambda_tau,
        q=sp.q,
    )
    return P_plus, rec


def invert_near_identity(shift, h: float, eps: float, k_target: float,
                         center=None, n_samples: int = 128, seed: int = 0,
                         max_iter: int = 200):
    """Invert f = id + shift on a radius-k_target neighbourhood by fixed point.

    ``shift`` maps a point to f(omega) - omega; it must satisfy
    sup |shift| <= eps < h/2 on the radius-h neighbourhood of ``center``
    (validated on samples).  The returned callable phi evaluates the inverse
    by iterating  x <- omega - shift(x)  until successive iterates differ by
    at most 1e-14 (at most ``max_iter`` iterations), and checks
    |f(phi(omega)) - omega| <= 1e-13 and |phi - id| <= eps at every call.
    """
    if not (eps < h / 2.0):
        raise HypothesisError(f"need eps < h/2, got eps={eps}, h={h}")
    if not (0.0 < k_target <= h - 2.0 * eps):
        raise HypothesisError(
            f"target radius must lie in (0, h - 2 eps]; got {k_target}")
    center = np.zeros(1) if center is None else np.asarray(center, dtype=float).reshape(-1)
    n = center.size

    rng = np.random.Generator(np.random.Philox(seed))
    samples = center + h * (2.0 * rng.random((n_samples, n)) - 1.0)
    for x in samples:
        g = np.asarray(shift(x), dtype=float).reshape(-1)
        if max_norm(g) > eps * (1.0 + 1e-12):
            raise HypothesisError(
                f"|f - id| = {max_norm(g):.6g} exceeds eps = {eps} at a sample",
                details={"point": x.tolist(), "value": max_norm(g)})

    def phi(omega):
        omega = np.asarray(omega, dtype=float).reshape(-1)
        x = omega.copy()
        for _ in range(max_iter):
            x_new = omega - np.asarray(shift(x), dtype=float).reshape(-1)
            step = max_norm(x_new - x)
            x = x_new
            if step <= 1e-14:
                break
        else:
            raise ContractionError("fixed-point inversion did not converge",
                                   details={"omega": omega.tolist()})
        residual = max_norm(x + np.asarray(shift(x), dtype=float).reshape(-1) - omega)
        if residual > 1e-13 * max(1.0, max_norm(omega)):
            raise ContractionError("inverse residual above tolerance",
                                   details={"residual": residual})
        if max_norm(x - omega) > eps * (1.0 + 1e-9):
            raise ContractionError("inverse strayed farther than eps from identity",
                                   details={"deviation": max_norm(x - omega)})
        return x

    return phi


@dataclass
class AlphaRescale:
    """Record of the time rescaling that normalizes the Diophantine constant to 2."""

    factor: float          # fields and frequencies were multiplied by this
    alpha_original: float

    def to_original_norm(self, x: float) -> float:
        return x / self.factor

    def to_original_vector(self, v):
        return np.asarray(v) / self.factor


def normalize_alpha(P: TrigVectorField, fd: FrequencyDomain
                    ) -> tuple[TrigVectorField, FrequencyDomain, AlphaRescale]:
    """Rescale time so the Diophantine condition holds with alpha = 2.

    Multiplies the field, the frequency, and the neighbourhood radius by
    2/alpha; weighted norms scale by the same factor, and the certified
    range K_cert is preserved because the products |<k, omega>| Delta(|k|)
    scale linearly.
    """
    if fd.alpha <= 0.0:
        raise DomainError(f"alpha must be positive, got {fd.alpha}")
    c = 2.0 / fd.alpha
    fd2 = FrequencyDomain(omega_star=c * fd.omega_star, h=c * fd.h, alpha=2.0,
                          K_cert=fd.K_cert)
    return c * P, fd2, AlphaRescale(factor=c, alpha_original=fd.alpha)
