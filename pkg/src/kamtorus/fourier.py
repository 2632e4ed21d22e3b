"""Trigonometric-polynomial vector fields on the n-torus and weighted norms.

A field P(theta) = sum_k p_k exp(i <k, theta>) is stored as a finite sparse
map from integer modes k to complex coefficient n-vectors p_k.  The weighted
norm  ||P||_s = sum_k |p_k| e^(|k| s)  (|p_k| the max-norm of the coefficient
vector, |k| the sum-norm) dominates the sup-norm of P on the complex strip
|Im theta| < s, which is why all budget bookkeeping runs through it.

The infrared/ultraviolet split implemented here does not simply cut at the
mode threshold tau: the ultraviolet part also absorbs the fraction
(1-a) e^(|k| sigma) of every low mode, with a = 1 - e^(-tau sigma).  The
remaining infrared part  ptilde_k = (1 - (1-a) e^(|k| sigma)) p_k  is then
bounded on a strip *wider* by sigma_tilde = sigma (1-a)/a, with the better
bound a * ||P||_s; the ultraviolet part loses sigma of width and keeps the
factor (1-a).  Both facts are what makes a single conjugation step contract.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError
from .util import exp_weight, max_norm, sum_norm


class TrigVectorField:
    """Finite Fourier representation of a vector field on T^n.

    Treat instances as immutable: all operations return new fields.  The
    representation is normalized (no exactly-zero coefficient vectors), and
    a field marked ``real`` satisfies p_{-k} = conj(p_k) for every mode, so
    its values at real angles are real.
    """

    __slots__ = ("n", "coeffs", "real", "_packed", "_radius")

    def __init__(self, n: int, coeffs: dict | None = None, real: bool = False,
                 validate: bool = True):
        if n < 1:
            raise DomainError(f"dimension must be >= 1, got {n}")
        self.n = int(n)
        clean: dict[tuple[int, ...], np.ndarray] = {}
        for k, v in (coeffs or {}).items():
            key = tuple(int(x) for x in k)
            if len(key) != self.n:
                raise DomainError(f"mode {key} has wrong dimension (expected {self.n})")
            vec = np.asarray(v, dtype=complex).reshape(-1)
            if vec.size != self.n:
                raise DomainError(f"coefficient at {key} has wrong length")
            if np.any(vec != 0):
                clean[key] = vec
        self.coeffs = clean
        self.real = bool(real)
        self._packed = None
        self._radius = None
        if validate and self.real:
            self._check_reality()

    def _check_reality(self):
        for k, v in self.coeffs.items():
            mk = tuple(-x for x in k)
            w = self.coeffs.get(mk)
            if w is None or not np.allclose(np.conj(v), w, rtol=1e-12, atol=0.0):
                raise DomainError(
                    f"field marked real but p_(-k) != conj(p_k) at k={k}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, n: int, real: bool = True) -> "TrigVectorField":
        return cls(n, {}, real=real)

    @classmethod
    def constant(cls, vec) -> "TrigVectorField":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        real = bool(np.all(vec.imag == 0.0))
        return cls(vec.size, {(0,) * vec.size: vec}, real=real)

    @classmethod
    def single_mode(cls, n: int, k, vec, real: bool = False) -> "TrigVectorField":
        """Field v * e_k; with ``real`` the conjugate mode is added."""
        key = tuple(int(x) for x in k)
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        modes = {key: vec}
        if real:
            mk = tuple(-x for x in key)
            if mk == key:
                if np.any(np.abs(vec.imag) > 0):
                    raise DomainError("real field needs a real k=0 coefficient")
            else:
                modes[mk] = np.conj(vec)
        return cls(n, modes, real=real)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def support_radius(self) -> int:
        if self._radius is None:
            self._radius = max((sum_norm(k) for k in self.coeffs), default=0)
        return self._radius

    def modes(self):
        """Modes in canonical (lexicographic) order; all reductions use it."""
        return sorted(self.coeffs.items())

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """(K, C): integer modes (M, n) and coefficients (M, n), canonical order."""
        if self._packed is None:
            items = self.modes()
            if items:
                K = np.array([k for k, _ in items], dtype=np.int64)
                C = np.array([v for _, v in items], dtype=complex)
            else:
                K = np.zeros((0, self.n), dtype=np.int64)
                C = np.zeros((0, self.n), dtype=complex)
            self._packed = (K, C)
        return self._packed

    def __len__(self) -> int:
        return len(self.coeffs)

    def __repr__(self) -> str:
        return (f"TrigVectorField(n={self.n}, modes={len(self.coeffs)}, "
                f"radius={self.support_radius}, real={self.real})")

    # -- algebra -------------------------------------------------------------

    def _binop(self, other: "TrigVectorField", sign: float) -> "TrigVectorField":
        if not isinstance(other, TrigVectorField):
            return NotImplemented
        if other.n != self.n:
            raise DomainError("dimension mismatch")
        out = {k: v.copy() for k, v in self.coeffs.items()}
        for k, v in other.coeffs.items():
            if k in out:
                out[k] = out[k] + sign * v
            else:
                out[k] = sign * v
        return TrigVectorField(self.n, out, real=self.real and other.real,
                               validate=False)

    def __add__(self, other):
        return self._binop(other, 1.0)

    def __sub__(self, other):
        return self._binop(other, -1.0)

    def __mul__(self, c):
        c = complex(c)
        real = self.real and c.imag == 0.0
        if c.imag == 0.0:
            c = c.real
        return TrigVectorField(self.n, {k: c * v for k, v in self.coeffs.items()},
                               real=real, validate=False)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    # -- analysis ------------------------------------------------------------

    def norm(self, s: float) -> float:
        return weighted_norm(self, s)

    def prune(self, s: float, budget: float) -> tuple["TrigVectorField", float]:
        """Drop the smallest modes whose joint norm at width s fits in budget.

        Returns the pruned field and the exact dropped norm, which the caller
        must charge to its truncation-defect account.
        """
        if budget <= 0.0 or not self.coeffs:
            return self, 0.0
        items = [(max_norm(v) * exp_weight(sum_norm(k), s), k) for k, v in self.modes()]
        items.sort()
        dropped: set[tuple[int, ...]] = set()
        charge = 0.0
        for w, k in items:
            if self.real:
                mk = tuple(-x for x in k)
                if k in dropped:
                    continue
                extra = w if mk == k else 2.0 * w  # conjugate pair leaves together
                if charge + extra > budget:
                    break
                dropped.add(k)
                dropped.add(mk)
                charge += extra
            else:
                if charge + w > budget:
                    break
                dropped.add(k)
                charge += w
        if not dropped:
            return self, 0.0
        kept = {k: v for k, v in self.coeffs.items() if k not in dropped}
        return TrigVectorField(self.n, kept, real=self.real, validate=False), charge

    # -- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        modes = []
        for k, v in self.modes():
            modes.append({
                "k": [int(x) for x in k],
                "re": [float(x) for x in v.real],
                "im": [float(x) for x in v.imag],
            })
        return {"n": self.n, "real": self.real, "modes": modes}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrigVectorField":
        n = int(obj["n"])
        coeffs = {}
        for m in obj.get("modes", []):
            k = tuple(int(x) for x in m["k"])
            coeffs[k] = np.asarray(m["re"], float) + 1j * np.asarray(m["im"], float)
        return cls(n, coeffs, real=bool(obj.get("real", False)))


def weighted_norm(P: TrigVectorField, s: float) -> float:
    """||P||_s = sum_k |p_k| e^(|k| s); exact finite sum, +inf on overflow."""
    if s < 0.0:
        raise DomainError(f"weighted norm needs s >= 0, got {s}")
    terms = [max_norm(v) * exp_weight(sum_norm(k), s) for k, v in P.modes()]
    if any(math.isinf(t) for t in terms):
        return math.inf
    return math.fsum(terms)


def mean_value(P: TrigVectorField) -> np.ndarray:
    """The k = 0 coefficient (zero vector if absent)."""
    v = P.coeffs.get((0,) * P.n)
    return v.copy() if v is not None else np.zeros(P.n, dtype=complex)


def split_weight(knorm: float, sigma: float, a: float) -> float:
    """Infrared coefficient weight 1 - (1-a) e^(|k| sigma), in [0, a] below the cutoff."""
    return 1.0 - (1.0 - a) * math.exp(knorm * sigma)


def split_envelope(t: float, sigma: float, a: float) -> float:
    """Scalar envelope g(t) = (1 - (1-a) e^(t sigma)) e^(t sigma_tilde).

    g(0) = a and g is non-increasing on [0, tau]; it is the pointwise bound
    that puts the infrared part on the wider strip.
    """
    sigma_tilde = sigma * (1.0 - a) / a
    return split_weight(t, sigma, a) * math.exp(t * sigma_tilde)


def split_ir_uv(P: TrigVectorField, tau: float, sigma: float, a: float
                ) -> tuple[TrigVectorField, TrigVectorField]:
    """Split P into the reweighted infrared part and the ultraviolet rest.

    Requires the exact coupling a = 1 - e^(-tau sigma) (relative 1e-12); the
    split weights partition each coefficient, so Ptilde + Phat == P holds
    coefficient-wise up to floating rounding.  Ptilde is supported on
    |k| < tau (strict); everything else, plus the (1-a) e^(|k| sigma)
    fractions of the low modes, goes to Phat.
    """
    if tau < 1.0:
        raise DomainError(f"cutoff tau must be >= 1, got {tau}")
    if sigma <= 0.0:
        raise DomainError(f"width loss sigma must be > 0, got {sigma}")
    a_expected = -math.expm1(-tau * sigma)
    if not math.isclose(a, a_expected, rel_tol=1e-12, abs_tol=0.0):
        raise DomainError(
            f"split coupling violated: a={a!r} but 1-e^(-tau sigma)={a_expected!r}")
    ir: dict[tuple[int, ...], np.ndarray] = {}
    uv: dict[tuple[int, ...], np.ndarray] = {}
    for k, v in P.coeffs.items():
        m = sum_norm(k)
        if m < tau:
            w_uv = (1.0 - a) * math.exp(m * sigma)
            ir[k] = (1.0 - w_uv) * v
            uv[k] = w_uv * v
        else:
            uv[k] = v.copy()
    Pt = TrigVectorField(P.n, ir, real=P.real, validate=False)
    Ph = TrigVectorField(P.n, uv, real=P.real, validate=False)
    return Pt, Ph


def check_larger_domain_bound(P_tilde: TrigVectorField, s: float, sigma: float,
                              a: float, eps: float) -> tuple[float, float]:
    """Measure ||Ptilde|| on the wider strip s + sigma (1-a)/a against a * eps.

    Returns (measured, budget); whenever ||P||_s <= eps held before the
    split, measured <= budget is guaranteed by the envelope monotonicity.
    """
    sigma_tilde = sigma * (1.0 - a) / a
    return weighted_norm(P_tilde, s + sigma_tilde), a * eps


def field_eval(P: TrigVectorField, theta) -> np.ndarray:
    """Evaluate P at an angle vector (complex entries allowed).

    Accepts a single point of shape (n,) or a batch of shape (B, n); the
    result has the matching shape.
    """
    theta = np.asarray(theta)
    single = theta.ndim == 1
    pts = np.atleast_2d(theta).astype(complex)
    if pts.shape[1] != P.n:
        raise DomainError("evaluation point has wrong dimension")
    K, C = P.packed()
    if len(K) == 0:
        out = np.zeros((pts.shape[0], P.n), dtype=complex)
    else:
        phases = np.exp(1j * (pts @ K.T.astype(float)))  # (B, M)
        out = phases @ C                                  # (B, n)
    return out[0] if single else out


def field_eval_real(P: TrigVectorField, theta) -> np.ndarray:
    """Evaluate a real-flagged field at real angles, returning a real vector."""
    if not P.real:
        raise DomainError("field_eval_real needs a real-flagged field")
    return np.real(field_eval(P, theta))
