"""Bregman divergences, their conjugate potentials, and numeric certificates.

Two potentials give rise to KL divergences:

* negative entropy ``F_tau(p) = tau * sum p log p`` with transfer
  ``f_tau(p) = tau * (log p + 1)``;
* scaled log-sum-exp ``F*_tau(s) = tau * logsumexp(s / tau)`` with transfer
  ``f*_tau(s) = softmax(s / tau)``.

``D_{F_tau}(p||q) = tau KL(p||q)`` and ``D_{F*_tau}(s||r) = tau KL(q||p)`` where
``p = f*_tau(s)`` and ``q = f*_tau(r)``. The certificates below make the
mean-value (Taylor remainder) arguments relating the two divergence
directions checkable by finding the interpolation points explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

SIMPLEX_TOL = 1e-12
BISECT_WIDTH = 1e-12
CERT_TOL = 1e-9
_SCAN_POINTS = 257
_FLAT_TOL = 1e-13


def as_simplex_point(p) -> np.ndarray:
    """Validate a strictly interior probability vector (no clamping)."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("simplex point must be a vector of length >= 2")
    if not np.all(p > 0):
        raise ValueError("simplex point must be strictly interior (all entries > 0)")
    if abs(math.fsum(p) - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"simplex point sums to {math.fsum(p)!r}, not 1")
    return p


def kl(p, q) -> float:
    """``KL(p||q) = sum p log(p / q)`` for interior simplex points."""
    p, q = as_simplex_point(p), as_simplex_point(q)
    if p.shape != q.shape:
        raise ValueError("dimension mismatch")
    return float(np.sum(p * (np.log(p) - np.log(q))))


def entropy(p) -> float:
    p = as_simplex_point(p)
    return float(-np.sum(p * np.log(p)))


class Potential:
    """A strictly convex, twice differentiable potential ``F``."""

    name = "potential"

    def __call__(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    def quad_form(self, x, d) -> float:
        """``dᵀ H(x) d``."""
        d = np.asarray(d, dtype=float)
        return float(d @ self.hessian(x) @ d)

    def _quad_unchecked(self, x: np.ndarray, d: np.ndarray) -> float:
        # x is a convex combination of already-validated points
        return self.quad_form(x, d)

    def check_domain(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def __repr__(self):
        return f"{type(self).__name__}()"


class Quadratic(Potential):
    """``F(x) = ½‖x‖²``; its Bregman divergence is ``½‖p - q‖²``."""

    name = "quadratic"

    def __call__(self, x):
        x = self.check_domain(x)
        return 0.5 * float(x @ x)

    def gradient(self, x):
        return self.check_domain(x).copy()

    def hessian(self, x):
        return np.eye(len(self.check_domain(x)))


@dataclass(frozen=True, repr=True)
class NegEntropy(Potential):
    """``F_tau(p) = -tau H(p)`` on the positive orthant."""

    tau: float = 1.0
    name = "neg_entropy"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(x > 0):
            raise ValueError("negative entropy needs strictly positive entries")
        return x

    def __call__(self, p):
        p = self.check_domain(p)
        return self.tau * float(np.sum(p * np.log(p)))

    def gradient(self, p):
        p = self.check_domain(p)
        return self.tau * (np.log(p) + 1.0)

    def hessian(self, p):
        return np.diag(self.tau / self.check_domain(p))

    def quad_form(self, p, d):
        return self._quad_unchecked(self.check_domain(p), np.asarray(d, dtype=float))

    def _quad_unchecked(self, p, d):
        return self.tau * float((d * d) @ (1.0 / p))


@dataclass(frozen=True, repr=True)
class LogSumExp(Potential):
    """``F*_tau(s) = tau logsumexp(s / tau)`` on logit vectors."""

    tau: float = 1.0
    name = "log_sum_exp"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def check_domain(self, s):
        s = np.asarray(s, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError("logits must be finite")
        return s

    def __call__(self, s):
        s = self.check_domain(s)
        z = s / self.tau
        top = z.max()
        return self.tau * float(top + np.log(np.exp(z - top).sum()))

    def gradient(self, s):
        return lse_transfer(self.check_domain(s), self.tau)

    def hessian(self, s):
        return lse_hessian(self.check_domain(s), self.tau)

    def quad_form(self, s, d):
        return _variance_form(np.asarray(d, dtype=float), self.check_domain(s), self.tau)

    def _quad_unchecked(self, s, d):
        return _variance_form(d, s, self.tau)


def bregman(F: Potential, p, q) -> float:
    """``D_F(p||q) = F(p) - F(q) - (p - q)·∇F(q)``."""
    p, q = F.check_domain(p), F.check_domain(q)
    return F(p) - F(q) - float((p - q) @ F.gradient(q))


def entropy_transfer(p, tau: float) -> np.ndarray:
    """``f_tau(p) = tau (log p + 1)``, the gradient of negative entropy."""
    return tau * (np.log(as_simplex_point(p)) + 1.0)


def lse_transfer(s, tau: float) -> np.ndarray:
    """``softmax(s / tau)``; invariant to adding a constant to every logit."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = np.asarray(s, dtype=float) / tau
    z = z - z.max()
    u = np.exp(z)
    return u / u.sum()


def lse_hessian(r, tau: float) -> np.ndarray:
    """Hessian of ``F*_tau`` at ``r``: ``(Diag(u) - u uᵀ) / tau`` with ``u = softmax(r / tau)``."""
    u = lse_transfer(r, tau)
    return (np.diag(u) - np.outer(u, u)) / tau


def quad_form_as_variance(delta, r, tau: float):
    """``δᵀ H_{F*_tau}(r) δ`` and ``Var_{y~u}[δ(y)] / tau``, computed separately.

    Returns ``(quadratic_form, variance_form)``.
    """
    delta, r = np.asarray(delta, dtype=float), np.asarray(r, dtype=float)
    quad = float(delta @ lse_hessian(r, tau) @ delta)
    return quad, _variance_form(delta, r, tau)


def _variance_form(delta: np.ndarray, r: np.ndarray, tau: float) -> float:
    z = r / tau
    u = np.exp(z - z.max())
    u /= u.sum()
    centered = delta - u @ delta
    return float(u @ (centered * centered)) / tau


@dataclass
class CheckReport:
    """Outcome of one identity check: the two sides and their gap."""

    name: str
    lhs: float
    rhs: float
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def error(self) -> float:
        return abs(self.lhs - self.rhs)

    def passed(self, tol: float) -> bool:
        return self.error < tol


def dual_divergence_check(p, q, tau: float) -> CheckReport:
    """Both Bregman duality directions for the entropy / log-sum-exp pair.

    ``D_F(p||q) = D_F*(f(q)||f(p))`` and ``D_F(q||p) = D_F*(f(p)||f(q))``.
    ``lhs``/``rhs`` hold the forward pair; the report's ``details`` carry
    the reverse pair, the transfer-inverse error, and ``max_error``.
    """
    p, q = as_simplex_point(p), as_simplex_point(q)
    F, Fs = NegEntropy(tau), LogSumExp(tau)
    fp, fq = entropy_transfer(p, tau), entropy_transfer(q, tau)
    fwd_l, fwd_r = bregman(F, p, q), bregman(Fs, fq, fp)
    rev_l, rev_r = bregman(F, q, p), bregman(Fs, fp, fq)
    inverse_err = max(
        float(np.max(np.abs(lse_transfer(fp, tau) - p))),
        float(np.max(np.abs(lse_transfer(fq, tau) - q))),
    )
    rep = CheckReport("dual_divergence", fwd_l, fwd_r)
    rep.details.update(
        reverse_lhs=rev_l,
        reverse_rhs=rev_r,
        reverse_error=abs(rev_l - rev_r),
        transfer_inverse_error=inverse_err,
    )
    rep.details["max_error"] = max(rep.error, rep.details["reverse_error"])
    return rep


def tempered_kl_check(s, r, tau: float) -> CheckReport:
    """``D_{F*_tau}(s||r)`` from potential values vs ``tau KL(f*(r)||f*(s))``."""
    lhs = bregman(LogSumExp(tau), s, r)
    rhs = tau * kl(lse_transfer(r, tau), lse_transfer(s, tau))
    return CheckReport("tempered_kl", lhs, rhs)


@dataclass
class Prop1Certificate:
    """Interpolation coefficients certifying the two-direction divergence identity.

    ``alpha`` locates ``a = (1 - alpha) p + alpha q`` and ``beta`` locates
    ``b = (1 - beta) q + beta p``; both lie in ``[0, ½]``. ``residual_a`` and
    ``residual_b`` are the achieved ``|g(coef) - target|`` gaps, and
    ``identity_error`` is ``|D(q||p) - D(p||q) - g_a(alpha) + g_b(beta)|``.
    """

    alpha: float
    beta: float
    residual_a: float
    residual_b: float
    target_a: float
    target_b: float
    quad_a: float
    quad_b: float
    d_pq: float
    d_qp: float
    identity_error: float

    @property
    def ok(self) -> bool:
        return (
            0.0 <= self.alpha <= 0.5
            and 0.0 <= self.beta <= 0.5
            and max(self.residual_a, self.residual_b, self.identity_error) < CERT_TOL
        )


class CertificateError(RuntimeError):
    """No interpolation point brackets the required remainder."""


def _bracket(g, target: float):
    lo, hi = 0.0, 0.5
    g_lo, g_hi = g(lo) - target, g(hi) - target
    if g_lo == 0.0:
        return lo, lo
    if g_hi == 0.0:
        return hi, hi
    if g_lo * g_hi < 0:
        return lo, hi
    # the remainder is an average of g over the segment, so a sign change
    # exists inside even when g is not monotone
    grid = np.linspace(0.0, 0.5, _SCAN_POINTS)
    vals = [g(t) - target for t in grid]
    for a, b, va, vb in zip(grid, grid[1:], vals, vals[1:]):
        if va == 0.0:
            return a, a
        if va * vb < 0:
            return a, b
    # g flat at the target up to rounding (e.g. a pure logit shift)
    best = int(np.argmin(np.abs(vals)))
    if abs(vals[best]) < _FLAT_TOL:
        return grid[best], grid[best]
    raise CertificateError(
        f"certificate failed: g(0)-target={g_lo:.3e}, g(1/2)-target={g_hi:.3e},"
        f" min over scan={min(vals):.3e}, max over scan={max(vals):.3e}"
    )


def _bisect(g, target: float) -> float:
    lo, hi = _bracket(g, target)
    f_lo = g(lo) - target
    while hi - lo > BISECT_WIDTH:
        mid = 0.5 * (lo + hi)
        f_mid = g(mid) - target
        if f_mid == 0.0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def prop1_certificate(F: Potential, p, q) -> Prop1Certificate:
    """Find ``alpha, beta ∈ [0, ½]`` with

    ``D(q||p) = F(p) + F(q) - 2F(mid) + ¼ (q-p)ᵀ H(a) (q-p)`` and
    ``D(p||q) = F(p) + F(q) - 2F(mid) + ¼ (p-q)ᵀ H(b) (p-q)``,

    so that ``D(q||p) = D(p||q) + g_a(alpha) - g_b(beta)``.

    Raises:
        CertificateError: if no bracket is found, which would indicate a bug
            in the potential rather than a counterexample.
    """
    p, q = F.check_domain(p), F.check_domain(q)
    if np.array_equal(p, q):
        raise ValueError("certificate needs p != q")
    d = q - p
    mid_gap = F(p) + F(q) - 2.0 * F(0.5 * (p + q))
    d_qp, d_pq = bregman(F, q, p), bregman(F, p, q)
    target_a, target_b = d_qp - mid_gap, d_pq - mid_gap

    def g_a(alpha):
        return 0.25 * F._quad_unchecked(p + alpha * d, d)

    def g_b(beta):
        return 0.25 * F._quad_unchecked(q - beta * d, d)

    alpha = _bisect(g_a, target_a)
    beta = _bisect(g_b, target_b)
    qa, qb = g_a(alpha), g_b(beta)
    return Prop1Certificate(
        alpha=alpha,
        beta=beta,
        residual_a=abs(qa - target_a),
        residual_b=abs(qb - target_b),
        target_a=target_a,
        target_b=target_b,
        quad_a=qa,
        quad_b=qb,
        d_pq=d_pq,
        d_qp=d_qp,
        identity_error=abs(d_qp - (d_pq + qa - qb)),
    )


@dataclass
class Prop2Report:
    kl_pq: float
    kl_qp: float
    bound: float
    variance_gap: float
    sup_gap: float
    max_sq_norm: float
    certificate: Prop1Certificate

    @property
    def holds(self) -> bool:
        return (
            self.kl_pq < self.kl_qp + self.bound
            and self.sup_gap <= 2.0
            and self.max_sq_norm <= 1.0
        )


def prop2_inequality_check(s, r, tau: float) -> Prop2Report:
    """Check ``KL(p||q) < KL(q||p) + ‖s - r‖² / tau²`` with ``p = f*(s)``, ``q = f*(r)``.

    Also certifies the interpolants ``a`` (between ``s`` and ``r``, near ``s``)
    and ``b`` (near ``r``) under the log-sum-exp potential, and records the
    bound ingredients ``‖u_a - u_b‖_∞`` and ``max ‖u‖₂²`` at those points.
    ``variance_gap`` is ``(Var_a - Var_b) / (4 tau²)`` of ``s - r``, which
    must equal ``KL(p||q) - KL(q||p)``.
    """
    s, r = np.asarray(s, dtype=float), np.asarray(r, dtype=float)
    if np.array_equal(s, r):
        raise ValueError("inequality is strict only for s != r")
    p, q = lse_transfer(s, tau), lse_transfer(r, tau)
    delta = s - r
    cert = prop1_certificate(LogSumExp(tau), s, r)
    a = (1 - cert.alpha) * s + cert.alpha * r
    b = (1 - cert.beta) * r + cert.beta * s
    u_a, u_b = lse_transfer(a, tau), lse_transfer(b, tau)
    _, var_a = quad_form_as_variance(delta, a, tau)
    _, var_b = quad_form_as_variance(delta, b, tau)
    return Prop2Report(
        kl_pq=kl(p, q),
        kl_qp=kl(q, p),
        bound=float(delta @ delta) / tau**2,
        variance_gap=(var_a - var_b) / (4.0 * tau),
        sup_gap=float(np.max(np.abs(u_a - u_b))),
        max_sq_norm=max(float(u_a @ u_a), float(u_b @ u_b)),
        certificate=cert,
    )
