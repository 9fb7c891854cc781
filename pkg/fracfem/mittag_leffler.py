"""Two-parameter Mittag-Leffler function on the real axis.

E_{a,b}(z) = sum_k z^k / Gamma(a k + b), evaluated in three regimes:

- ``series``: |z| <= 1 (and any z > 0, where all terms are positive).
  Term count follows a geometric remainder bound.
- ``integral``: -100 < z < -1. The Hankel contour is collapsed onto the
  negative real axis, leaving a real integral on [0, inf) that is integrated
  with QUADPACK (algebraic end-point weight near 0, break point at the
  peak of the kernel when a > 1/2).
- ``asymptotic``: z <= -100. E ~ -sum_{k>=1} z^-k / Gamma(b - a k), summed
  until a reflection-formula bound on the next term is below tolerance.

Parameters b >= 1 + a are reduced with E_{a,b}(z) = (E_{a,b-a}(z) - 1/Gamma(b-a)) / z.
a = 1 is supported for integer b only (exp and its recurrences).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special

from .config import settings

logger = logging.getLogger(__name__)

SERIES_RADIUS = 1.0
ASYMPTOTIC_THRESHOLD = -100.0
MIN_REL_TOL = 1e-14

# Integrand cutoff: exp(-u**(1/a)) below exp(-_EXP_CUTOFF) is dropped.
_EXP_CUTOFF = 60.0


class MittagLefflerError(ArithmeticError):
    """A regime did not converge within its iteration budget."""

    def __init__(self, message: str, *, regime: str, alpha: float, beta: float, z: float):
        super().__init__(f"[{regime}] {message} (alpha={alpha!r}, beta={beta!r}, z={z!r})")
        self.regime = regime
        self.alpha = alpha
        self.beta = beta
        self.z = z


@dataclass(frozen=True)
class MLQuery:
    alpha: float
    beta: float
    z: float
    rel_tol: float = 1e-12

    def __post_init__(self) -> None:
        _validate(self.alpha, self.beta, self.rel_tol)
        if not math.isfinite(self.z):
            raise ValueError(f"z must be finite, got {self.z!r}")


def _validate(alpha: float, beta: float, rel_tol: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
    if not (beta > 0.0) or not math.isfinite(beta):
        raise ValueError(f"beta must be a positive finite number, got {beta!r}")
    if not (rel_tol >= MIN_REL_TOL):
        raise ValueError(f"rel_tol must be >= {MIN_REL_TOL:g}, got {rel_tol!r}")


def ml(q: MLQuery) -> float:
    """E_{alpha,beta}(z) to relative accuracy ``q.rel_tol``."""

    return _ml_scalar(float(q.alpha), float(q.beta), float(q.z), float(q.rel_tol))


def mittag_leffler(alpha: float, beta: float, z: float, rel_tol: Optional[float] = None) -> float:
    """Convenience wrapper around :func:`ml` with the configured default tolerance."""

    return ml(MLQuery(alpha=alpha, beta=beta, z=z, rel_tol=rel_tol if rel_tol is not None else settings.ml_rel_tol))


def regime_of(alpha: float, beta: float, z: float) -> str:
    if alpha == 1.0:
        return "exponential"
    if z > 0 or abs(z) <= SERIES_RADIUS:
        return "series"
    if z <= ASYMPTOTIC_THRESHOLD:
        return "asymptotic"
    return "integral"


def _ml_scalar(alpha: float, beta: float, z: float, rel_tol: float) -> float:
    if z == 0.0:
        return float(special.rgamma(beta))
    if alpha == 1.0:
        return _ml_alpha_one(beta, z, rel_tol)
    if z > 0 or abs(z) <= SERIES_RADIUS:
        return _series(alpha, beta, z, rel_tol)
    if beta >= 1.0 + alpha:
        lower = _ml_scalar(alpha, beta - alpha, z, rel_tol)
        return (lower - float(special.rgamma(beta - alpha))) / z
    if z <= ASYMPTOTIC_THRESHOLD:
        k_max = _asymptotic_terms(alpha, beta, abs(ASYMPTOTIC_THRESHOLD), rel_tol)
        return float(_asymptotic_sum(alpha, beta, np.array([z]), k_max)[0])
    return _integral(alpha, beta, z, rel_tol)


def _ml_alpha_one(beta: float, z: float, rel_tol: float) -> float:
    if beta == 1.0:
        return math.exp(z)
    if abs(z) <= SERIES_RADIUS or z > 0:
        return _series(1.0, beta, z, rel_tol)
    if float(beta).is_integer():
        if beta == 2.0:
            return math.expm1(z) / z
        lower = _ml_alpha_one(beta - 1.0, z, rel_tol)
        return (lower - float(special.rgamma(beta - 1.0))) / z
    raise ValueError(f"alpha=1 supports only integer beta for |z| > 1, got beta={beta!r}")


def _series(alpha: float, beta: float, z: float, rel_tol: float) -> float:
    az = abs(z)
    tol = 0.1 * rel_tol
    # Terms peak once Gamma(a k + b) outgrows |z|^k; keep a generous margin for small alpha.
    k_budget = 200 + int(math.ceil((60.0 + 2.0 * az ** (1.0 / alpha)) / alpha))
    terms = []
    acc = 0.0
    log_az = math.log(az)
    for k in range(k_budget):
        arg = alpha * k + beta
        term = (z**k) * float(special.rgamma(arg))
        terms.append(term)
        acc += term
        if arg < 2.0:
            continue
        # Gamma is increasing beyond 2, so the tail is dominated by a geometric series.
        rho = math.exp(log_az + float(special.gammaln(arg)) - float(special.gammaln(arg + alpha)))
        if rho < 1.0:
            tail = abs(term) * rho / (1.0 - rho)
            if tail <= tol * abs(acc) or tail == 0.0:
                return math.fsum(terms)
    raise MittagLefflerError(
        f"series did not converge in {k_budget} terms", regime="series", alpha=alpha, beta=beta, z=z
    )


@lru_cache(maxsize=1024)
def _asymptotic_terms(alpha: float, beta: float, abs_z_min: float, rel_tol: float) -> int:
    """Number of asymptotic terms that meets ``rel_tol`` for every |z| >= abs_z_min."""

    tol = 0.01 * rel_tol
    log_z = math.log(abs_z_min)
    partial = 0.0
    prev_bound = math.inf
    for k in range(1, 400):
        s = beta - alpha * k
        r = float(special.rgamma(s))
        partial += -((-1.0) ** k) * math.exp(-k * log_z) * r
        # |1/Gamma(s)| <= Gamma(1 - s) / pi for s < 0 (reflection formula).
        if s > 0:
            bound = abs(r) * math.exp(-k * log_z)
        else:
            bound = math.exp(float(special.gammaln(1.0 - s)) - k * log_z) / math.pi
        if k > 1 and bound < tol * abs(partial):
            return k
        if bound > prev_bound and k > 2 and bound > tol * abs(partial):
            break
        prev_bound = bound
    raise MittagLefflerError(
        "asymptotic expansion terms grew before reaching tolerance",
        regime="asymptotic",
        alpha=alpha,
        beta=beta,
        z=-abs_z_min,
    )


def _asymptotic_sum(alpha: float, beta: float, z: np.ndarray, k_max: int) -> np.ndarray:
    out = np.zeros_like(z, dtype=float)
    inv = 1.0 / z
    power = np.ones_like(z, dtype=float)
    for k in range(1, k_max + 1):
        power = power * inv
        out -= power * float(special.rgamma(beta - alpha * k))
    return out


def _kernel_parts(alpha: float, beta: float) -> Tuple[float, float, float]:
    c = math.cos(math.pi * alpha)
    sb = math.sin(math.pi * beta)
    sab = math.sin(math.pi * (alpha - beta))
    return c, sb, sab


def _integral(alpha: float, beta: float, z: float, rel_tol: float) -> float:
    c, sb, sab = _kernel_parts(alpha, beta)
    inv_alpha = 1.0 / alpha
    expo = (1.0 - beta) * inv_alpha

    def smooth(u: float) -> float:
        num = u * sb + z * sab
        den = u * u - 2.0 * z * u * c + z * z
        return math.exp(-(u**inv_alpha)) * num / den

    def full(u: float) -> float:
        return (u**expo) * smooth(u)

    upper = _EXP_CUTOFF**alpha
    peak = -z * c if c < 0.0 else 0.0  # denominator minimum for alpha > 1/2
    split = 0.5 * min(1.0, upper, peak) if peak > 0.0 else 0.5 * min(1.0, upper)

    epsrel = max(0.1 * rel_tol, 1e-14)
    fail_tol = max(1e3 * rel_tol, 1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if expo == 0.0:
            head, err_head = integrate.quad(smooth, 0.0, split, epsabs=0.0, epsrel=epsrel, limit=200)
        else:
            head, err_head = integrate.quad(
                smooth, 0.0, split, weight="alg", wvar=(expo, 0.0), epsabs=0.0, epsrel=epsrel, limit=200
            )
        points = [peak] if split < peak < upper else None
        tail, err_tail = integrate.quad(full, split, upper, points=points, epsabs=0.0, epsrel=epsrel, limit=400)

    value = (head + tail) / (math.pi * alpha)
    err = (err_head + err_tail) / (math.pi * alpha)
    if not math.isfinite(value) or err > fail_tol * abs(value):
        logger.warning(
            "Mittag-Leffler integral regime failed",
            extra={"regime": "integral", "alpha": alpha},
        )
        raise MittagLefflerError(
            f"quadrature error estimate {err:.3e} exceeds tolerance for value {value:.6e}",
            regime="integral",
            alpha=alpha,
            beta=beta,
            z=z,
        )
    return value


def ml_array(alpha: float, beta: float, z: np.ndarray, rel_tol: Optional[float] = None) -> np.ndarray:
    """Vectorized E_{alpha,beta}(z) over an array of real arguments.

    Arguments in the asymptotic regime are summed in one numpy pass; the rest
    are evaluated once per distinct value.
    """

    tol = settings.ml_rel_tol if rel_tol is None else float(rel_tol)
    _validate(alpha, beta, tol)
    zz = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(zz)):
        raise ValueError("z must be finite")
    flat = zz.ravel()
    out = np.empty_like(flat)

    asym = flat <= ASYMPTOTIC_THRESHOLD
    if alpha < 1.0 and beta < 1.0 + alpha and np.any(asym):
        k_max = _asymptotic_terms(alpha, beta, abs(ASYMPTOTIC_THRESHOLD), tol)
        out[asym] = _asymptotic_sum(alpha, beta, flat[asym], k_max)
    else:
        asym = np.zeros_like(flat, dtype=bool)

    rest = ~asym
    if np.any(rest):
        values, inverse = np.unique(flat[rest], return_inverse=True)
        evaluated = np.array([_ml_scalar(alpha, beta, float(v), tol) for v in values])
        out[rest] = evaluated[inverse]
    return out.reshape(zz.shape)


_DECAY_GRID = np.concatenate(([0.0], np.logspace(-3.0, 8.0, 221)))


@lru_cache(maxsize=64)
def decay_constant(alpha: float) -> float:
    """C_alpha = 1.05 * max (1 + x) E_{alpha,1}(-x) over a log grid of x in [0, 1e8]."""

    values = ml_array(alpha, 1.0, -_DECAY_GRID)
    return 1.05 * float(np.max((1.0 + _DECAY_GRID) * values))


def ml_e1_decay_bound(alpha: float, x: float) -> bool:
    """True iff 0 < E_{alpha,1}(-x) <= C_alpha / (1 + x)."""

    try:
        if x < 0 or not (0.0 < alpha <= 1.0):
            return False
        value = _ml_scalar(float(alpha), 1.0, -float(x), settings.ml_rel_tol)
        return bool(0.0 < value <= decay_constant(float(alpha)) / (1.0 + x))
    except (MittagLefflerError, ValueError):
        return False
