"""Semidiscrete solutions by numerical Laplace inversion.

M d^a u + A u = 0 transforms to (z^a M + A) U(z) = z^(a-1) M v, and

    u(t) = (1 / 2 pi i) * integral over C of e^(z t) U(z) dz

is evaluated with the trapezoid rule on the hyperbola
z(s) = mu (1 + sin(i s - sigma)). The data are real, so only the upper half
of the contour is solved for. Used where no closed-form discrete
eigenbasis exists (consistent mass in 2D).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import OperatorPair
from .config import settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperbolicContour:
    n_nodes: int = 24
    sigma: float = 1.1721
    step_factor: float = 1.0818
    mu_factor: float = 4.4921

    def __post_init__(self) -> None:
        if self.n_nodes < 4:
            raise ValueError(f"n_nodes must be >= 4, got {self.n_nodes!r}")

    def nodes(self, t: float) -> Tuple[np.ndarray, np.ndarray, float]:
        """Points z_k, derivatives z'(s_k) for k = 0..N, and the step."""

        if not (t > 0.0):
            raise ValueError(f"t must be positive, got {t!r}")
        step = self.step_factor / self.n_nodes
        mu = self.mu_factor * self.n_nodes / t
        s = step * np.arange(self.n_nodes + 1)
        z = mu * (1.0 + np.sin(1j * s - self.sigma))
        dz = mu * (1j * math.cos(self.sigma) * np.cosh(s) - math.sin(self.sigma) * np.sinh(s))
        return z, dz, step


def _half_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[0] = 0.5
    return w


def contour_solve(
    pair: OperatorPair,
    v_h: np.ndarray,
    alpha: float,
    times: Iterable[float],
    contour: Optional[HyperbolicContour] = None,
) -> Dict[float, np.ndarray]:
    """u_h(t) for each requested time. One complex sparse LU per contour node and time."""

    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
    rule = contour or HyperbolicContour(n_nodes=settings.laplace_nodes)
    a = pair.stiffness.astype(complex)
    m = pair.mass.astype(complex)
    mv = pair.mass @ v_h
    out: Dict[float, np.ndarray] = {}
    for t in times:
        started = time.perf_counter()
        z, dz, step = rule.nodes(float(t))
        weights = _half_weights(rule.n_nodes)
        acc = np.zeros(v_h.shape[0], dtype=complex)
        for zk, dzk, wk in zip(z, dz, weights):
            za = zk**alpha
            lu = spla.splu(sp.csc_matrix(za * m + a))
            sol = lu.solve((zk ** (alpha - 1.0)) * mv.astype(complex))
            acc += wk * np.exp(zk * t) * dzk * sol
        out[float(t)] = (step / math.pi) * acc.imag
        logger.debug(
            "contour inversion done",
            extra={"alpha": alpha, "t": float(t), "duration_s": round(time.perf_counter() - started, 4)},
        )
    return out


def contour_scalar(lam: float, alpha: float, t: float, contour: Optional[HyperbolicContour] = None) -> float:
    """The scalar problem, i.e. E_{a,1}(-lam t^a); used to cross-check the rule."""

    rule = contour or HyperbolicContour(n_nodes=settings.laplace_nodes)
    z, dz, step = rule.nodes(t)
    vals = np.exp(z * t) * z ** (alpha - 1.0) / (z**alpha + lam) * dz
    return float((step / math.pi) * np.sum(_half_weights(rule.n_nodes) * vals).imag)
