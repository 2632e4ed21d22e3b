"""Independent verification of a computed conjugacy.

The spectral iteration certifies itself through norm bookkeeping; this
module checks the result by a route that shares none of that machinery.
The torus map Phi is realized as the composition of the time-1 flows of the
recorded step generators; the defect

    d(theta) = DPhi(theta) . omega - (phi(omega) + P)(Phi(theta))

measures, pointwise on a grid, how far Phi fails to straighten the
corrected field to the rotation omega (DPhi by central finite differences).
Orbit comparison integrates the corrected field directly and matches it
against the rotation pushed through Phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import flow_map_eval, integrate_field
from .fourier import TrigVectorField, field_eval_real, weighted_norm
from .kamstep import StepRecord
from .util import max_norm, sum_norm, torus_distance

#: Central-difference step for the Jacobian of Phi; its error floor sits
#: well below the verification tolerances.
FD_STEP = 1e-5


@dataclass
class Conjugacy:
    """Accumulated result of a run: generators, shifts, and unit bookkeeping.

    total_shift is the sum of the per-step constants; the parameter map is
    the translation phi(omega) = omega - total_shift, mapping the certified
    frequency back to the constant part of the field that Phi straightens.
    All stored quantities are in normalized (alpha = 2) units; alpha_rescale
    converts back to original units.
    """

    omega_star: np.ndarray
    steps: list[StepRecord] = field(default_factory=list)
    alpha_rescale: float = 1.0
    s_final: float = 0.0
    h_final: float = 0.0

    def __post_init__(self):
        self.omega_star = np.asarray(self.omega_star, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.omega_star.size

    @property
    def total_shift(self) -> np.ndarray:
        if not self.steps:
            return np.zeros(self.n)
        return np.sum([np.real(r.p0) for r in self.steps], axis=0)

    # original-unit views ----------------------------------------------------

    @property
    def omega_star_original(self) -> np.ndarray:
        return self.omega_star / self.alpha_rescale

    @property
    def total_shift_original(self) -> np.ndarray:
        return self.total_shift / self.alpha_rescale

    def phi_of_omega(self, original_units: bool = True) -> np.ndarray:
        """The corrected constant part phi(omega_star) = omega_star - total_shift."""
        if original_units:
            return self.omega_star_original - self.total_shift_original
        return self.omega_star - self.total_shift

    def generator_norm_sum(self) -> float:
        """Sum of the recorded generator norms (scale-invariant under rescaling)."""
        return float(np.sum([r.norm_F for r in self.steps])) if self.steps else 0.0

    def to_json_dict(self) -> dict:
        return {
            "omega_star": [float(x) for x in self.omega_star],
            "alpha_rescale": self.alpha_rescale,
            "s_final": self.s_final,
            "h_final": self.h_final,
            "total_shift": [float(x) for x in self.total_shift],
            "steps": [r.to_dict() for r in self.steps],
        }


def conjugacy_eval(c: Conjugacy, theta) -> np.ndarray:
    """Phi(theta): straightened coordinates -> original coordinates.

    The last step's flow acts first; accepts a single point (n,) or a batch
    (B, n).  The returned lift is unwrapped so finite differences across
    nearby inputs stay smooth.
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    pts = np.atleast_2d(theta)
    for rec in reversed(c.steps):
        if len(rec.F) == 0:
            continue
        pts = flow_map_eval(rec.F, pts, 1.0, wrap=False)
    return pts[0] if single else pts


def _lipschitz_bound(P: TrigVectorField) -> float:
    """Crude sup bound on the Jacobian of P: sum_k |k| |p_k| (max-norm rows)."""
    return float(sum(sum_norm(k) * max_norm(v) for k, v in P.modes()))


def conjugacy_defect(c: Conjugacy, P: TrigVectorField, fd, grid: int,
                     batch: int = 4096) -> float:
    """Max over a grid^n mesh of |DPhi(theta).omega - (phi(omega)+P)(Phi(theta))|.

    P, fd are in original units.  A small defect certifies the conjugacy
    numerically, independently of the spectral norm ledger.
    """
    n = c.n
    omega = np.asarray(fd.omega_star, dtype=float).reshape(-1)
    y_const = c.phi_of_omega(original_units=True)
    axes = [np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False) for _ in range(n)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)

    worst = 0.0
    for start in range(0, len(mesh), batch):
        pts = mesh[start:start + batch]
        stacked = [pts]
        for j in range(n):
            e = np.zeros(n)
            e[j] = FD_STEP
            stacked.extend([pts + e, pts - e])
        images = conjugacy_eval(c, np.concatenate(stacked, axis=0))
        m = len(pts)
        base = images[:m]
        dphi_omega = np.zeros_like(base)
        for j in range(n):
            plus = images[(1 + 2 * j) * m:(2 + 2 * j) * m]
            minus = images[(2 + 2 * j) * m:(3 + 2 * j) * m]
            dphi_omega += (plus - minus) / (2.0 * FD_STEP) * omega[j]
        y_vals = y_const + field_eval_real(P, base)
        defect = np.abs(dphi_omega - y_vals).max()
        worst = max(worst, float(defect))
    return worst


def orbit_compare(c: Conjugacy, P: TrigVectorField, fd, theta0, T: float,
                  n_samples: int = 100) -> float:
    """Sup toroidal deviation between the true orbit and the conjugated rotation.

    Integrates theta' = (phi(omega) + P)(theta) from Phi(theta0) over [0, T]
    and compares, at n_samples times, with Phi(theta0 + omega t).
    """
    omega = np.asarray(fd.omega_star, dtype=float).reshape(-1)
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    y_field = TrigVectorField.constant(c.phi_of_omega(original_units=True)) + P
    times = np.linspace(0.0, float(T), n_samples)

    start = conjugacy_eval(c, theta0)
    traj = integrate_field(y_field, start, times)
    rotated = theta0[None, :] + times[:, None] * omega[None, :]
    images = conjugacy_eval(c, rotated)
    return max(torus_distance(traj[i], images[i]) for i in range(len(times)))


def gronwall_envelope(c: Conjugacy, P: TrigVectorField, defect: float, T: float,
                      integration_tol: float = 1e-12) -> float:
    """Right-hand side of the orbit/defect consistency inequality.

    The orbit deviation over [0, T] is bounded by
    T * (defect + integration tolerance) * e^(L T) with L a measured
    Lipschitz bound of the integrated field.
    """
    y_field = TrigVectorField.constant(c.phi_of_omega(original_units=True)) + P
    L = _lipschitz_bound(y_field)
    return T * (defect + integration_tol) * float(np.exp(L * T))


def verification_block(c: Conjugacy, P: TrigVectorField, fd, grid: int,
                       theta0, T: float) -> dict:
    """The verification section of a run report (all in original units)."""
    defect = conjugacy_defect(c, P, fd, grid)
    dev = orbit_compare(c, P, fd, theta0, T)
    envelope = gronwall_envelope(c, P, defect, T)
    return {
        "defect_max": defect,
        "grid": grid,
        "orbit_dev": dev,
        "T": T,
        "orbit_envelope": envelope,
        "phi_shift_norm": float(max_norm(c.total_shift_original)),
        "Phi_dist_bound": c.generator_norm_sum(),
    }
