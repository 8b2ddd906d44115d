"""Electron-vibration coupling tensors in the oscillator eigenbasis.

The inverse-power pair interaction is Taylor-expanded to first order in
the mobile monomer's angular displacement; matrix elements then reduce
to a diagonal (static) part plus a nearest-neighbour ladder part whose
strength is the zero-point ratio times the potential derivative.  An
independent Gauss-Hermite quadrature oracle integrates either the
linearized or the exact distance law for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_hermite

from .errors import (
    ConvergenceError,
    DegenerateGeometry,
    SelectionRuleViolation,
    TruncationError,
    ValidationError,
)
from .model import (
    MONOMERS,
    OscillatorSpec,
    ScatteringProblem,
    monomer_index,
    site_positions,
    zero_point_ratio,
)

#: Default inverse-power exponent of the distance law (dipole-dipole).
POWER = 3


def taylor_coefficients(theta_nn: float, power: int = POWER):
    """First-order expansion of (1 - cos(theta + D))^(-power/2) around D = 0.

    Returns (F0, F1) with F0 the equilibrium value and F1 the first
    derivative.  Raises DegenerateGeometry for coincident monomers.
    """
    c = 1.0 - math.cos(theta_nn)
    if abs(c) < 1e-12:
        raise DegenerateGeometry(
            f"monomer separation angle {theta_nn} is a multiple of 2*pi"
        )
    half = power / 2.0
    f0 = c ** (-half)
    f1 = -half * c ** (-half - 1.0) * math.sin(theta_nn)
    return f0, f1


def gamma_factor(v: int, w: int) -> float:
    """Ladder weight sqrt(v! w!)/((v+w-1)/2)! for adjacent levels.

    For |v - w| = 1 this closed form collapses to sqrt(max(v, w)), which
    is exact and overflow-free at any truncation; the factorial form is
    checked against it in the test suite via log-gamma.
    """
    if abs(v - w) != 1:
        raise SelectionRuleViolation(
            f"first-order coupling connects only adjacent levels, got ({v}, {w})"
        )
    if v < 0 or w < 0:
        raise ValidationError("vibrational quantum numbers must be >= 0")
    return math.sqrt(max(v, w))


def ladder_matrix(n: int) -> np.ndarray:
    """Symmetric matrix of <j|(a + a^dag)/sqrt(2)... displacement ladder
    weights: entry (j, j+1) = (j+1, j) = sqrt(j+1)."""
    off = np.sqrt(np.arange(1, n))
    return np.diag(off, 1) + np.diag(off, -1)


# -- distance-law descriptors -------------------------------------------------


@dataclass(frozen=True)
class DisplacementPotential:
    """Pair interaction as a function of the mobile monomer's angular
    displacement.

    fn evaluates the exact law, (v0, v1) its zeroth and first Taylor
    coefficients at equilibrium; R converts the oscillator ground-state
    width to angular units.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    v0: float
    v1: float
    R: float

    def linearized(self, delta):
        return self.v0 + self.v1 * np.asarray(delta)


def ring_pair_potential(problem: ScatteringProblem, n, n_p) -> DisplacementPotential:
    """Interaction between ring monomers n and n' versus the mobile
    monomer's displacement (constant when neither is mobile)."""
    i, ip = monomer_index(n), monomer_index(n_p)
    if i == ip:
        raise ValidationError("ring pair requires two distinct monomers")
    geo = problem.geometry
    theta_sep = geo.equilibrium_angles[i] - geo.equilibrium_angles[ip]
    m = problem.mobile_index
    sign = 1.0 if m == i else (-1.0 if m == ip else 0.0)
    amp = -problem.mu_sq * 2.0 ** (-1.5) / geo.R**3

    def fn(delta, _amp=amp, _th=theta_sep, _s=sign):
        return _amp * (1.0 - np.cos(_th + _s * np.asarray(delta))) ** -1.5

    f0, f1 = taylor_coefficients(theta_sep)
    return DisplacementPotential(fn=fn, v0=amp * f0, v1=amp * f1 * sign, R=geo.R)


def chain_coupling_potential(problem: ScatteringProblem) -> DisplacementPotential:
    """Entrance-monomer to chain-site-0 interaction versus the mobile
    monomer's displacement (constant unless the entrance monomer itself
    is mobile)."""
    geo = problem.geometry
    theta_eq = geo.monomer_angle(0)
    mobile_is_entrance = problem.mobile_index == 0
    d, R = geo.d, geo.R

    def fn(delta, _m=problem.mu_sq, _on=mobile_is_entrance):
        ang = theta_eq + (np.asarray(delta) if _on else 0.0)
        r_sq = d * d + R * R - 2.0 * d * R * np.cos(ang)
        return -_m * r_sq ** -1.5

    r0_sq = d * d + R * R - 2.0 * d * R * math.cos(theta_eq)
    v0 = -problem.mu_sq * r0_sq ** -1.5
    # d/dDelta of -mu^2 (d^2+R^2-2dR cos(theta))^(-3/2)
    v1 = 3.0 * problem.mu_sq * d * R * math.sin(theta_eq) * r0_sq ** -2.5
    if not mobile_is_entrance:
        v1 = 0.0
    return DisplacementPotential(fn=fn, v0=v0, v1=v1, R=geo.R)


# -- analytic matrix elements -------------------------------------------------


def _check_indices(problem, *indices):
    for j in indices:
        if not 0 <= j < problem.n_vib:
            raise TruncationError(
                f"vibrational index {j} outside truncation n_vib={problem.n_vib}"
            )


def _element(potential: DisplacementPotential, lam: float, j: int, jp: int) -> float:
    if j == jp:
        return potential.v0
    if abs(j - jp) == 1 and potential.v1 != 0.0:
        return potential.v1 * lam * gamma_factor(j, jp)
    return 0.0


def f_matrix_element(n, n_p, j: int, jp: int, problem: ScatteringProblem) -> float:
    """Ring-pair coupling element between vibrational levels j and j'.

    Frozen monomers are pinned to their ground state, so the indices
    refer to the mobile monomer; spectator pairs are diagonal.
    """
    _check_indices(problem, j, jp)
    pot = ring_pair_potential(problem, n, n_p)
    return _element(pot, problem.lam, j, jp)


def g_matrix_element(j: int, jp: int, problem: ScatteringProblem) -> float:
    """Chain-to-entrance coupling element between levels j and j'.

    Diagonal for the pole-facing symmetric setup; a rotated unit adds a
    ladder term from the first-order expansion of the distance law.
    """
    _check_indices(problem, j, jp)
    pot = chain_coupling_potential(problem)
    return _element(pot, problem.lam, j, jp)


# -- quadrature oracle ---------------------------------------------------------


def _scaled_hermite(n_max: int, u: np.ndarray) -> np.ndarray:
    """Orthonormal-oscillator Hermite values h_j(u) = H_j(u)/sqrt(2^j j! sqrt(pi)),
    rows j = 0..n_max."""
    out = np.empty((n_max + 1, u.size))
    out[0] = math.pi ** -0.25
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * u * out[0]
    for j in range(1, n_max):
        out[j + 1] = (
            math.sqrt(2.0 / (j + 1)) * u * out[j]
            - math.sqrt(j / (j + 1)) * out[j - 1]
        )
    return out


def quadrature_matrix_element(potential: DisplacementPotential, j: int, jp: int,
                              oscillator: OscillatorSpec, mode: str = "linearized",
                              n_nodes: int | None = None) -> float:
    """Oscillator matrix element of a distance-law potential by
    Gauss-Hermite quadrature.

    mode='linearized' integrates the first-order Taylor potential and
    must reproduce the analytic elements to near machine precision;
    mode='exact' integrates the full law and quantifies the truncation
    error of the first-order expansion.
    """
    if mode not in ("linearized", "exact"):
        raise ValidationError(f"unknown quadrature mode {mode!r}")
    min_nodes = 4 * max(j, jp) + 16
    if n_nodes is None:
        n_nodes = min_nodes
    elif n_nodes < min_nodes:
        raise ValidationError(
            f"need at least {min_nodes} Gauss-Hermite nodes for levels ({j}, {jp})"
        )
    lam = zero_point_ratio(oscillator, potential.R)
    func = potential.linearized if mode == "linearized" else potential.fn

    def integrate(n):
        u, w = roots_hermite(n)
        h = _scaled_hermite(max(j, jp), u)
        return float(np.sum(w * h[j] * h[jp] * func(math.sqrt(2.0) * lam * u)))

    first = integrate(n_nodes)
    second = integrate(2 * n_nodes)
    scale = max(abs(first), abs(second), abs(potential.v0), 1e-300)
    if abs(second - first) > 1e-9 * scale:
        raise ConvergenceError(
            f"quadrature not converged for levels ({j}, {jp}): "
            f"{first!r} vs {second!r} at {n_nodes}/{2 * n_nodes} nodes"
        )
    return second


# -- tensor assembly -----------------------------------------------------------

PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass
class CouplingTensors:
    """Precomputed coupling matrices over the truncated vibrational basis.

    f maps each unordered ring pair to its (n_vib, n_vib) matrix; g is
    the chain-entrance matrix.  All matrices are real symmetric; treat
    as read-only once built.
    """

    f: dict
    g: np.ndarray
    lam: float

    @property
    def n_vib(self) -> int:
        return self.g.shape[0]

    def f_pair(self, n, n_p) -> np.ndarray:
        key = tuple(sorted((monomer_index(n), monomer_index(n_p))))
        return self.f[key]


def _pair_matrix(problem, pot: DisplacementPotential) -> np.ndarray:
    n = problem.n_vib
    mat = pot.v0 * np.eye(n)
    if pot.v1 != 0.0:
        mat += pot.v1 * problem.lam * ladder_matrix(n)
    return mat


@lru_cache(maxsize=64)
def build_coupling_tensors(problem: ScatteringProblem) -> CouplingTensors:
    """Assemble all F and G matrices for a problem (memoized)."""
    f = {}
    for i, ip in PAIRS:
        pot = ring_pair_potential(problem, i, ip)
        f[(i, ip)] = _pair_matrix(problem, pot)
    g = _pair_matrix(problem, chain_coupling_potential(problem))
    return CouplingTensors(f=f, g=g, lam=problem.lam)


def static_coupling_values(problem: ScatteringProblem, displacement: float = 0.0):
    """Bare interaction values with the mobile monomer held at a fixed
    displacement: ({pair: F}, G).

    Used by the static transfer-matrix reference and the frozen-angle
    transmission average.
    """
    disp = [0.0, 0.0, 0.0]
    if displacement != 0.0:
        m = problem.mobile_index
        if m is None:
            raise ValidationError("displacement requires a mobile monomer")
        disp[m] = displacement
    pts = site_positions(problem.geometry, disp)
    f = {}
    for i, ip in PAIRS:
        r = float(np.hypot(*(pts[i + 1] - pts[ip + 1])))
        f[(i, ip)] = -problem.mu_sq / r**POWER
    r0 = float(np.hypot(*(pts[1] - pts[0])))
    g = -problem.mu_sq / r0**POWER
    return f, g


def dump_tensors(tensors: CouplingTensors, fh) -> None:
    """Write all coupling matrices as labeled text blocks, row-major,
    17 significant digits."""

    def block(name, mat):
        fh.write(f"# {name} shape={mat.shape[0]}x{mat.shape[1]}\n")
        for row in np.atleast_2d(mat):
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")

    for (i, ip), mat in sorted(tensors.f.items()):
        block(f"F_{MONOMERS[i]}_{MONOMERS[ip]}", mat)
    block("G", tensors.g)
    fh.write(f"# lambda {tensors.lam:.17g}\n")
