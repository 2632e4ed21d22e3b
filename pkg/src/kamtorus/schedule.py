"""Geometric step schedules and the iteration driver.

All per-step budgets come from three geometric sequences with the same base
q = (1 - a + a^2 b)(1 + b) e^a < 1:

    eps_nu = eps0 q^nu,   h_nu = h0 q^nu,   Lambda_nu = Lambda0 q^(-nu),

with the cutoffs tau_nu = sup{tau : Lambda(tau) <= Lambda_nu}, the width
losses sigma_nu from 1 - a = e^(-tau_nu sigma_nu), and s_{nu+1} = s_nu -
2 sigma_nu.  The total width loss r = sum sigma_nu is finite exactly when
the convergence integral of log Lambda is, which is what ties admissible
approximation functions to a positive limit strip s0 - 2r > 0.

The driver applies one conjugation step per schedule row, asserts the
measured perturbation norm against its geometric budget, and accumulates
the generators and frequency shifts into a Conjugacy.  Convergence of the
composed transformations is monitored directly (summed shift and generator
norms against the global budgets) rather than argued by compactness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .approx import ApproxFn, FrequencyDomain, certify_diophantine, default_k_cap, \
    eval_lambda, lambda_inverse, russmann_integral
from .errors import CertificationError, DomainError, HypothesisError, \
    InvalidConstantsError, WidthExhaustedError
from .fourier import TrigVectorField, weighted_norm
from .kamstep import StepParams, contraction_factor, kam_step
from .verify import Conjugacy

#: Budgets below this floor are numerically indistinguishable from zero in
#: double precision; schedules stop materializing rows there.
EPS_FLOOR = 1e-14
#: Hard cap on materialized schedule rows.
NU_MAX_DEFAULT = 500
#: Default measured-norm stopping tolerance for the driver.
STOP_TOL_DEFAULT = 1e-12


def make_step_constants(a: float, b: float) -> tuple[float, float]:
    """(q, log(1-a)/log q) for step constants a in (0,1), b in (0, 1/2].

    Rejects combinations with q >= 1: those cannot contract no matter how
    small the perturbation is.
    """
    if not (0.0 < a < 1.0):
        raise DomainError(f"a must lie in (0, 1), got {a}")
    if not (0.0 < b <= 0.5):
        raise DomainError(f"b must lie in (0, 1/2], got {b}")
    q = contraction_factor(a, b)
    if q >= 1.0:
        raise InvalidConstantsError(
            f"(a={a}, b={b}) give q={q:.6f} >= 1: no contraction", details={"q": q})
    return q, math.log(1.0 - a) / math.log(q)


@dataclass
class SmallnessReport:
    """Evaluation of the global smallness chain and the width-loss integral.

    The chain  eps < h/16 <= alpha/(32 Lambda(tau))  together with
    r = 8 * integral < s/2 is the sufficient condition of the convergence
    theorem.  Margins are positive when satisfied.
    """

    passed: bool
    r: float
    margins: dict[str, float]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "r": self.r, "margins": dict(self.margins)}


def check_main_smallness(eps: float, h: float, alpha: float, delta: ApproxFn,
                         tau: float, s: float) -> SmallnessReport:
    """Evaluate eps < h/16 <= alpha/(32 Lambda(tau)) and 8*integral < s/2."""
    if min(eps, h, alpha, tau, s) < 0.0:
        raise DomainError("smallness check needs nonnegative inputs")
    lam = eval_lambda(delta, tau)
    r = 8.0 * russmann_integral(delta, tau)
    margins = {
        "eps_vs_h16": h / 16.0 - eps,
        "h16_vs_alpha": alpha / (32.0 * lam) - h / 16.0,
        "r_vs_half_s": s / 2.0 - r,
    }
    passed = margins["eps_vs_h16"] > 0.0 and margins["h16_vs_alpha"] >= 0.0 \
        and margins["r_vs_half_s"] > 0.0
    return SmallnessReport(passed=passed, r=r, margins=margins)


def effective_h0(h: float, lambda0: float) -> float:
    """Largest admissible initial radius: h capped just inside 1/Lambda0.

    The step hypothesis needs h_nu <= 1/Lambda(tau_nu) at every step; a
    configured radius above that only widens the parameter neighbourhood
    beyond what the divisor-drift allowance covers, so the schedule tightens
    it.  The cap sits a hair inside so the per-step comparison survives
    rounding in Lambda(tau_nu).
    """
    return min(h, (1.0 - 1e-12) / lambda0)


@dataclass
class Schedule:
    """Materialized geometric sequences for a run."""

    a: float
    b: float
    q: float
    ratio: float                       # log(1-a)/log q
    eps0: float
    h0: float
    h_config: float
    Lambda0: float
    s0: float
    delta: ApproxFn
    nu_max: int
    eps_nu: np.ndarray = field(repr=False)
    h_nu: np.ndarray = field(repr=False)
    Lambda_nu: np.ndarray = field(repr=False)
    tau_nu: np.ndarray = field(repr=False)
    sigma_nu: np.ndarray = field(repr=False)
    s_nu: np.ndarray = field(repr=False)   # length nu_max + 1
    r: float = 0.0                     # numeric total width loss (full series)
    r_bound: float = math.inf          # integral bound on r

    def step_params(self, nu: int) -> StepParams:
        return StepParams.from_cutoff(tau=float(self.tau_nu[nu]), a=self.a,
                                      eps=float(self.eps_nu[nu]), delta=self.delta)

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "q": self.q, "ratio": self.ratio,
            "eps0": self.eps0, "h0": self.h0, "h_config": self.h_config,
            "Lambda0": self.Lambda0, "s0": self.s0, "nu_max": self.nu_max,
            "r": self.r, "r_bound": self.r_bound,
            "s_limit": self.s0 - 2.0 * self.r,
        }


def build_schedule(eps0: float, h: float, s0: float, a: float, b: float,
                   delta: ApproxFn, tau0: float | None = None,
                   nu_max: int | None = None) -> Schedule:
    """Materialize the geometric schedule and verify its invariants.

    tau0 = None picks the largest admissible cutoff, Lambda(tau0) = b/eps0,
    which makes eps_nu Lambda_nu = b along the whole run.  Raises with a
    named margin when an iteration hypothesis fails, and WidthExhaustedError
    when the total width loss would eat the strip (remedy: larger tau0,
    i.e. a faster-growing approximation function or smaller eps0).
    """
    q, ratio = make_step_constants(a, b)
    if eps0 <= 0.0 or h <= 0.0 or s0 <= 0.0:
        raise DomainError("eps0, h, s0 must be positive")
    if tau0 is None:
        if b / eps0 < 1.0:
            raise HypothesisError(f"eps0={eps0} exceeds b={b}: nothing to schedule")
        tau0 = lambda_inverse(delta, b / eps0)
    if tau0 < 1.0:
        raise DomainError(f"initial cutoff tau0 must be >= 1, got {tau0}")
    Lambda0 = eval_lambda(delta, tau0)
    if eps0 * Lambda0 > b * (1.0 + 1e-12):
        raise HypothesisError(
            "eps0 * Lambda0 <= b violated",
            details={"eps0": eps0, "Lambda0": Lambda0, "b": b,
                     "margin": b - eps0 * Lambda0})
    if Lambda0 < 1.0 / q:
        raise HypothesisError(
            "Lambda(tau0) >= 1/q violated (integral bound needs it)",
            details={"Lambda0": Lambda0, "q_inv": 1.0 / q})
    h0 = effective_h0(h, Lambda0)
    if not (eps0 < (1.0 - q) * h0 / (2.0 * a)):
        raise HypothesisError(
            "eps0 < (1-q) h0 / (2a) violated",
            details={"eps0": eps0, "bound": (1.0 - q) * h0 / (2.0 * a), "h0": h0})

    if nu_max is None:
        nu_max = NU_MAX_DEFAULT
    # materialize until the budget underflows the floor (or the cap)
    n_rows = min(nu_max, max(1, int(math.ceil(math.log(EPS_FLOOR / eps0) / math.log(q)))
                             if eps0 > EPS_FLOOR else 1))
    nus = np.arange(n_rows)
    eps_nu = eps0 * q**nus
    h_nu = h0 * q**nus
    Lambda_nu = Lambda0 * q**(-nus)
    tau_nu = np.array([lambda_inverse(delta, L) for L in Lambda_nu])
    sigma_nu = -math.log1p(-a) / tau_nu
    s_nu = np.empty(n_rows + 1)
    s_nu[0] = s0
    s_nu[1:] = s0 - 2.0 * np.cumsum(sigma_nu)

    # full-series width loss: extend the sigma sum until it is exhausted
    log_inv = -math.log1p(-a)
    r = float(sigma_nu.sum())
    nu = n_rows
    while nu < 200_000:
        tau = lambda_inverse(delta, Lambda0 * q**(-nu))
        term = log_inv / tau
        if term < 1e-18:
            break
        r += term
        nu += 1
    integral = russmann_integral(delta, tau0)
    r_bound = ratio * integral

    if r > r_bound * (1.0 + 1e-9):
        raise HypothesisError("numeric width loss exceeds its integral bound",
                              details={"r": r, "r_bound": r_bound})
    if s0 - 2.0 * r <= 0.0:
        raise WidthExhaustedError(
            "total width loss exhausts the strip: initial cutoff too small",
            details={"r": r, "s0": s0, "needed": f"tau0 with r < {s0 / 2.0}"})

    sched = Schedule(a=a, b=b, q=q, ratio=ratio, eps0=eps0, h0=h0, h_config=h,
                     Lambda0=Lambda0, s0=s0, delta=delta, nu_max=n_rows,
                     eps_nu=eps_nu, h_nu=h_nu, Lambda_nu=Lambda_nu, tau_nu=tau_nu,
                     sigma_nu=sigma_nu, s_nu=s_nu, r=r, r_bound=r_bound)
    _check_schedule_invariants(sched)
    return sched


def _check_schedule_invariants(sched: Schedule) -> None:
    prod = sched.eps_nu * sched.Lambda_nu
    if not np.allclose(prod, prod[0], rtol=1e-12, atol=0.0):
        raise HypothesisError("eps_nu * Lambda_nu drifted from its constant value")
    if prod[0] > sched.b * (1.0 + 1e-12):
        raise HypothesisError("eps_nu * Lambda_nu exceeds b")
    lam_tau = np.array([eval_lambda(sched.delta, t) for t in sched.tau_nu])
    if np.any(lam_tau > sched.Lambda_nu * (1.0 + 1e-9)):
        raise HypothesisError("Lambda(tau_nu) <= Lambda_nu violated")
    head = (sched.h_nu - 2.0 * sched.a * sched.eps_nu)[:-1]
    if np.any(head < sched.h_nu[1:] * (1.0 - 1e-12)):
        raise HypothesisError("(h_nu - 2 a eps_nu) >= h_{nu+1} violated")
    if np.any(np.diff(sched.s_nu) >= 0.0):
        raise HypothesisError("s_nu failed to decrease strictly")


@dataclass
class RunReport:
    """Per-step rows plus the convergence summary of one driver run."""

    rows: list[dict] = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    eps_final: float = math.nan
    steps_taken: int = 0

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "eps_final": self.eps_final,
            "steps_taken": self.steps_taken,
            "rows": self.rows,
        }


CSV_COLUMNS = ["nu", "s_nu", "sigma_nu", "tau_nu", "Lambda_nu", "eps_budget",
               "eps_measured", "p0_norm", "F_norm", "tail_charge", "q_eff"]


def run_iteration(P0: TrigVectorField, fd: FrequencyDomain, delta: ApproxFn,
                  sched: Schedule, stop_tol: float = STOP_TOL_DEFAULT,
                  prune_rel: float = 0.0, k_max: int | None = None,
                  alpha_rescale: float = 1.0,
                  row_callback=None) -> tuple[Conjugacy, RunReport]:
    """Drive the step repeatedly along the schedule until the norm floor.

    Asserts measured ||P_nu||_{s_nu} <= eps0 q^nu after every step.  A
    certification shortfall triggers one brute-force extension of the
    certified range, then aborts if still short.  Certificate failures
    propagate with their ledgers attached.
    """
    conj = Conjugacy(omega_star=fd.omega_star, alpha_rescale=alpha_rescale)
    report = RunReport()
    P = P0
    eps_prev = None
    extended = False

    eps_start = weighted_norm(P0, sched.s0)
    if eps_start > sched.eps0 * (1.0 + 1e-12):
        raise HypothesisError(
            "initial perturbation exceeds eps0",
            details={"measured": eps_start, "eps0": sched.eps0})

    nu = 0
    while nu < sched.nu_max:
        s_nu = float(sched.s_nu[nu])
        eps_meas = weighted_norm(P, s_nu)
        budget = float(sched.eps_nu[nu])
        if eps_meas > budget * (1.0 + 1e-12):
            raise HypothesisError(
                "measured norm exceeds its geometric budget",
                details={"nu": nu, "measured": eps_meas, "budget": budget})
        if eps_meas < stop_tol:
            report.converged = True
            report.stop_reason = f"eps_measured below stop tolerance {stop_tol:g}"
            report.eps_final = eps_meas
            break

        sp = sched.step_params(nu)
        try:
            P_next, rec = kam_step(P, s_nu, float(sched.h_nu[nu]), fd, delta, sp,
                                   prune_rel=prune_rel, k_max=k_max)
        except CertificationError as exc:
            if extended:
                raise
            needed = int(exc.details.get("knorm", 0))
            cap = default_k_cap(fd.n)
            if needed <= fd.K_cert or needed > cap:
                raise
            rep = certify_diophantine(fd, delta, needed)
            extended = True
            if not rep.passed:
                raise CertificationError(
                    f"extension to K={needed} failed certification",
                    details=rep.to_dict()) from exc
            continue  # retry the same nu with the extended range

        conj.steps.append(rec)
        row = {
            "nu": nu,
            "s_nu": s_nu,
            "sigma_nu": float(sched.sigma_nu[nu]),
            "tau_nu": float(sched.tau_nu[nu]),
            "Lambda_nu": float(sched.Lambda_nu[nu]),
            "eps_budget": budget,
            "eps_measured": rec.eps_out_measured,
            "p0_norm": float(np.max(np.abs(rec.p0))),
            "F_norm": rec.norm_F,
            "tail_charge": rec.tail_charge,
            "q_eff": rec.eps_out_measured / eps_prev if eps_prev else math.nan,
        }
        report.rows.append(row)
        if row_callback is not None:
            row_callback(row)
        eps_prev = rec.eps_out_measured
        P = P_next
        nu += 1
    else:
        eps_meas = weighted_norm(P, float(sched.s_nu[sched.nu_max]))
        report.eps_final = eps_meas
        if eps_meas < stop_tol:
            report.converged = True
            report.stop_reason = "budget floor reached with measured norm below tolerance"
        else:
            report.stop_reason = f"step horizon nu_max={sched.nu_max} reached"

    report.steps_taken = len(report.rows)
    if math.isnan(report.eps_final):
        report.eps_final = weighted_norm(P, float(sched.s_nu[report.steps_taken]))
    conj.s_final = float(sched.s_nu[report.steps_taken])
    conj.h_final = float(sched.h_nu[min(report.steps_taken, sched.nu_max - 1)])
    return conj, report
