"""Linear part of the observer: Bessel-parametrized D, fixed F, and system norms."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Sequence

import numpy as np
from scipy import linalg, optimize, signal

from .errors import DesignError, InputError, NumericalError

logger = logging.getLogger(__name__)

_ROOT_RESIDUAL_TOL = 1e-10
_NEWTON_ITERATIONS = 50
_LYAPUNOV_RESIDUAL_TOL = 1e-10
_HINF_MAX_ITER = 200


@dataclass
class FilterDesign:
    """The contracting filter z' = D z + F y of the observer."""

    omega_c: float
    d_z: int
    poles: np.ndarray
    D: np.ndarray
    F: np.ndarray
    lambda_min: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "omega_c": float(self.omega_c),
            "d_z": int(self.d_z),
            "poles": [[float(p.real), float(p.imag)] for p in self.poles],
            "D": self.D.tolist(),
            "F": self.F.tolist(),
            "lambda_min": float(self.lambda_min),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FilterDesign":
        poles = np.array([complex(re, im) for re, im in data["poles"]])
        return cls(
            omega_c=float(data["omega_c"]),
            d_z=int(data["d_z"]),
            poles=poles,
            D=np.asarray(data["D"], dtype=float),
            F=np.asarray(data["F"], dtype=float),
            lambda_min=float(data["lambda_min"]),
        )


def reverse_bessel_coefficients(order: int) -> np.ndarray:
    """Coefficients of theta_n(s), highest power first (s^3+6s^2+15s+15 for n=3)."""
    return np.array(
        [
            math.factorial(2 * order - k)
            / (2 ** (order - k) * math.factorial(k) * math.factorial(order - k))
            for k in range(order, -1, -1)
        ]
    )


def _polish_roots(coeffs: np.ndarray, roots: np.ndarray) -> np.ndarray:
    dcoeffs = np.polyder(coeffs)
    scale = np.max(np.abs(coeffs))
    for _ in range(_NEWTON_ITERATIONS):
        values = np.polyval(coeffs, roots)
        if np.max(np.abs(values)) / scale < _ROOT_RESIDUAL_TOL * 1e-3:
            break
        roots = roots - values / np.polyval(dcoeffs, roots)
    residual = float(np.max(np.abs(np.polyval(coeffs, roots))) / scale)
    if residual > _ROOT_RESIDUAL_TOL:
        raise NumericalError(f"Bessel root refinement did not converge (residual {residual:.3e})")
    return roots


@lru_cache(maxsize=None)
def _delay_normalized_poles(order: int) -> tuple[complex, ...]:
    _, poles, _ = signal.besselap(order, norm="delay")
    return tuple(_polish_roots(reverse_bessel_coefficients(order), np.asarray(poles)))


@lru_cache(maxsize=None)
def cutoff_normalization(order: int) -> float:
    """Frequency where the delay-normalized Bessel filter is 3 dB down."""
    coeffs = reverse_bessel_coefficients(order)
    dc = coeffs[-1]

    def excess(w: float) -> float:
        return abs(dc / np.polyval(coeffs, 1j * w)) ** 2 - 0.5

    upper = 1.0
    while excess(upper) > 0:
        upper *= 2.0
    return float(optimize.brentq(excess, 1e-9, upper, xtol=1e-15, rtol=1e-15))


def _canonical_order(poles: np.ndarray) -> np.ndarray:
    """Sort by |Im| then Re; each conjugate pair appears as (Im > 0, Im < 0)."""
    poles = np.asarray(poles, dtype=complex)
    return np.array(sorted(poles, key=lambda p: (round(abs(p.imag), 12), p.real, -p.imag)))


def bessel_poles(order: int, omega_c: float, normalize: bool = True) -> np.ndarray:
    """Poles of the order-n Bessel filter with cut-off 2*pi*omega_c.

    With ``normalize`` the prototype is scaled to be 3 dB down at unit
    frequency; without it the poles are the raw roots of theta_n.
    """
    if order < 1:
        raise InputError(f"filter order must be >= 1, got {order}")
    if omega_c <= 0:
        raise InputError(f"omega_c must be positive, got {omega_c}")
    prototype = np.asarray(_delay_normalized_poles(order))
    if normalize:
        prototype = prototype / cutoff_normalization(order)
    scaled = prototype * (2.0 * np.pi * omega_c)
    scaled = np.where(np.abs(scaled.imag) < 1e-12 * np.abs(scaled), scaled.real + 0j, scaled)
    # rebuild pairs so conjugates are exact
    real, upper = _pair_poles(scaled)
    return _canonical_order(
        np.array(real + [q for p in upper for q in (p, p.conjugate())], dtype=complex)
    )


def _pair_poles(poles: np.ndarray) -> tuple[list[float], list[complex]]:
    """Split into real poles and one representative (Im > 0) per conjugate pair."""
    real = [float(p.real) for p in poles if p.imag == 0]
    upper = [complex(p) for p in poles if p.imag > 0]
    lower = sorted((complex(p) for p in poles if p.imag < 0), key=lambda p: (p.real, p.imag))
    if len(upper) != len(lower):
        raise DesignError("poles are not closed under conjugation")
    for p, q in zip(sorted(upper, key=lambda p: (p.real, -p.imag)), lower):
        if abs(p - q.conjugate()) > 1e-9 * max(1.0, abs(p)):
            raise DesignError(f"pole {p} has no conjugate partner")
    return real, upper


def assemble_D(poles: Sequence[complex]) -> np.ndarray:
    """Block-diagonal real matrix with the given spectrum.

    Real poles become 1x1 blocks; each pair a +/- bj becomes [[a, b], [-b, a]].
    """
    poles = _canonical_order(np.asarray(poles, dtype=complex))
    if np.any(poles.real >= 0):
        raise DesignError(f"all poles must have negative real part, got {poles}")
    _pair_poles(poles)
    blocks = []
    for p in poles:
        if p.imag == 0:
            blocks.append(np.array([[p.real]]))
        elif p.imag > 0:
            blocks.append(np.array([[p.real, p.imag], [-p.imag, p.real]]))
    return linalg.block_diag(*blocks)


def controllability_matrix(D: np.ndarray, F: np.ndarray) -> np.ndarray:
    blocks = [F]
    for _ in range(D.shape[0] - 1):
        blocks.append(D @ blocks[-1])
    return np.hstack(blocks)


def is_hurwitz(D: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(D).real < 0))


def design_from_poles(poles: Sequence[complex], omega_c: float, d_y: int = 1) -> FilterDesign:
    """Assemble and validate a design for an arbitrary Hurwitz pole set."""
    poles = _canonical_order(np.asarray(poles, dtype=complex))
    D = assemble_D(poles)
    d_z = D.shape[0]
    F = np.ones((d_z, d_y))
    rank = np.linalg.matrix_rank(controllability_matrix(D, F))
    if rank < d_z:
        raise DesignError(f"(D, F) is not controllable: rank {rank} < {d_z}")
    return FilterDesign(
        omega_c=float(omega_c),
        d_z=d_z,
        poles=poles,
        D=D,
        F=F,
        lambda_min=float(np.min(np.abs(poles.real))),
    )


def build_design(omega_c: float, d_x: int, d_y: int) -> FilterDesign:
    """Bessel design of order d_y * (d_x + 1) at cut-off omega_c."""
    if omega_c <= 0:
        raise InputError(f"omega_c must be positive, got {omega_c}")
    d_z = d_y * (d_x + 1)
    return design_from_poles(bessel_poles(d_z, omega_c), omega_c, d_y=d_y)


def solve_lyapunov(D: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve D P + P D^T + Q = 0 for a Hurwitz D."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if not is_hurwitz(D):
        raise DesignError("Lyapunov equation requires a Hurwitz matrix")
    P = linalg.solve_continuous_lyapunov(D, -Q)
    P = 0.5 * (P + P.T)
    residual = np.linalg.norm(D @ P + P @ D.T + Q)
    q_norm = max(np.linalg.norm(Q), 1.0)
    if residual > _LYAPUNOV_RESIDUAL_TOL * q_norm:
        logger.warning(f"Lyapunov residual {residual:.3e} above tolerance")
    return P


def h2_norm_Gz(design: FilterDesign) -> float:
    """H2 norm of (sI - D)^-1, the initial-error-to-state map."""
    P = solve_lyapunov(design.D, np.eye(design.d_z))
    return float(np.sqrt(np.trace(P)))


def _sigma_max(D: np.ndarray, F: np.ndarray, w: float) -> float:
    n = D.shape[0]
    G = np.linalg.solve(1j * w * np.eye(n) - D, F)
    return float(np.linalg.svd(G, compute_uv=False)[0])


def _imaginary_crossings(D: np.ndarray, F: np.ndarray, gamma: float, eig_tol: float) -> np.ndarray:
    """Frequencies where gamma is a singular value of (jwI - D)^-1 F."""
    n = D.shape[0]
    H = np.block([[D, F @ F.T / gamma], [-np.eye(n) / gamma, -D.T]])
    eigs = np.linalg.eigvals(H)
    mask = np.abs(eigs.real) <= eig_tol * np.maximum(1.0, np.abs(eigs))
    return np.unique(np.round(np.abs(eigs[mask].imag), 12))


def _hinf_grid(D: np.ndarray, F: np.ndarray, lambda_min: float) -> float:
    freqs = np.concatenate([[0.0], np.logspace(-4, 4, 10_000) * lambda_min])
    gains = np.array([_sigma_max(D, F, w) for w in freqs])
    best = int(np.argmax(gains))
    if best == 0 or best == len(freqs) - 1:
        return float(gains[best])
    log_lo, log_hi = np.log(max(freqs[best - 1], 1e-300)), np.log(freqs[best + 1])
    result = optimize.minimize_scalar(
        lambda lw: -_sigma_max(D, F, float(np.exp(lw))),
        bracket=(log_lo, np.log(freqs[best]), log_hi),
        method="golden",
    )
    return float(max(gains[best], -result.fun))


def hinf_norm_Geps(design: FilterDesign, rtol: float = 1e-6, eig_tol: float = 1e-8) -> float:
    """Peak gain of (sI - D)^-1 F over the imaginary axis.

    Bisection on gamma: the Hamiltonian has imaginary eigenvalues exactly
    when gamma is attained at some frequency. The lower bound is always an
    attained gain, refreshed at the midpoints of crossing intervals, so the
    returned value is a true singular value within rtol of the supremum.
    """
    D, F = design.D, design.F
    if not is_hurwitz(D):
        raise DesignError("H-infinity norm requires a Hurwitz matrix")
    starts = [0.0] + sorted({abs(p) for p in design.poles} | {abs(p.imag) for p in design.poles})
    lo = max(_sigma_max(D, F, w) for w in starts)
    if lo == 0.0:
        return 0.0

    hi = 2.0 * lo
    while _imaginary_crossings(D, F, hi, eig_tol).size:
        hi *= 2.0
        if hi > 1e12 * lo:
            raise NumericalError("H-infinity bisection could not bracket the norm")

    for iteration in range(_HINF_MAX_ITER):
        if hi - lo <= rtol * lo:
            logger.debug(f"H-infinity bisection converged after {iteration} steps")
            return lo
        mid = 0.5 * (lo + hi)
        crossings = _imaginary_crossings(D, F, mid, eig_tol)
        if crossings.size == 0:
            hi = mid
            continue
        edges = np.concatenate([[0.0], crossings])
        candidates = list(edges) + list(0.5 * (edges[1:] + edges[:-1]))
        attained = max(_sigma_max(D, F, w) for w in candidates)
        if attained < mid * (1.0 - 10 * rtol):
            logger.warning("H-infinity eigenvalue test ambiguous; falling back to frequency grid")
            return max(lo, _hinf_grid(D, F, design.lambda_min))
        lo = max(lo, attained)
    raise NumericalError(f"H-infinity bisection did not converge: bracket [{lo}, {hi}]")
