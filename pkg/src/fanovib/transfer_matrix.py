"""Static (vibrationless) transfer-matrix reference.

The three-monomer ring maps onto an energy-dependent point defect on
chain site 0 with strength V_eff = det(E - H2) * G^2 / det(E - H3); the
closed-form transmission and the general matrix-product route are both
provided for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfBand, PoleAtEigenvalue, ValidationError
from .coupling import static_coupling_values
from .model import ScatteringProblem

#: Relative determinant threshold below which an energy counts as a pole.
POLE_TOL = 1e-13


@dataclass
class StaticCU:
    """Frozen control unit: full ring Hamiltonian, the reduced ring
    without the entrance monomer, and the static chain coupling."""

    h3: np.ndarray
    h2: np.ndarray
    g: float

    def __post_init__(self):
        self.h3 = np.asarray(self.h3, dtype=float)
        self.h2 = np.asarray(self.h2, dtype=float)
        if self.h3.shape != (3, 3) or self.h2.shape != (2, 2):
            raise ValidationError("expected 3x3 and 2x2 ring Hamiltonians")

    def determinants(self, E: float):
        """(D2, D3) = det(E - H2), det(E - H3)."""
        return (
            float(np.linalg.det(E * np.eye(2) - self.h2)),
            float(np.linalg.det(E * np.eye(3) - self.h3)),
        )

    def determinant_derivatives(self, E: float):
        """Energy derivatives of the characteristic polynomials."""
        p2 = np.poly(self.h2)
        p3 = np.poly(self.h3)
        return (
            float(np.polyval(np.polyder(p2), E)),
            float(np.polyval(np.polyder(p3), E)),
        )


def static_cu(problem: ScatteringProblem, displacement: float = 0.0) -> StaticCU:
    """Build the frozen control unit, optionally with the mobile monomer
    held at a fixed angular displacement."""
    f, g = static_coupling_values(problem, displacement)
    h3 = np.zeros((3, 3))
    for (i, ip), val in f.items():
        h3[i, ip] = h3[ip, i] = val
    h2 = h3[1:, 1:].copy()
    return StaticCU(h3=h3, h2=h2, g=g)


def _pole_scale(E: float) -> float:
    return max(1.0, abs(E)) ** 3


def effective_potential(E: float, cu: StaticCU) -> float:
    """Defect strength V_eff = D2 * G^2 / D3.

    Raises PoleAtEigenvalue when E sits on an eigenvalue of the full
    ring (D3 ~ 0); callers treat transmission as 0 there.
    """
    d2, d3 = cu.determinants(E)
    if abs(d3) < POLE_TOL * _pole_scale(E):
        raise PoleAtEigenvalue(f"E={E} is an eigenvalue of the ring Hamiltonian")
    return d2 * cu.g**2 / d3


def transmission_static(E: float, cu: StaticCU, J: float = 1.0) -> float:
    """Closed-form transmission T = (4J^2 - E^2)/(4J^2 - E^2 + V_eff^2).

    At a ring eigenvalue the transmission vanishes by continuity; when
    numerator and denominator of D2/D3 vanish together the limit is
    taken with one l'Hopital step on the ratio.
    """
    if not abs(E) < 2.0 * J:
        raise OutOfBand(f"|E|={abs(E)} outside the band |E| < {2 * J}")
    d2, d3 = cu.determinants(E)
    scale = POLE_TOL * _pole_scale(E)
    if abs(d3) < scale:
        if abs(d2) >= scale:
            return 0.0
        dp2, dp3 = cu.determinant_derivatives(E)
        if abs(dp3) < scale:
            return 0.0
        v = dp2 / dp3 * cu.g**2
    else:
        v = d2 / d3 * cu.g**2
    band = 4.0 * J * J - E * E
    return band / (band + v * v)


# -- matrix-product route ------------------------------------------------------


def transfer_matrix_product(E: float, defect_potential_per_site, J: float = 1.0):
    """Ordered product of site transfer matrices over a window covering
    all defects.

    defect_potential_per_site maps chain site -> potential strength.
    Returns (P, log_scale); P is renormalized whenever entries approach
    overflow, with the removed magnitude accumulated in log_scale (zero
    for any in-band energy in practice).
    """
    defects = dict(defect_potential_per_site)
    m = max((abs(int(n)) for n in defects), default=0) + 1
    p = np.eye(2, dtype=complex)
    log_scale = 0.0
    for n in range(-m, m + 1):
        v = defects.get(n, 0.0)
        t_n = np.array([[(E - v) / J, -1.0], [1.0, 0.0]], dtype=complex)
        p = t_n @ p
        peak = np.abs(p).max()
        if peak > 1e150:
            p /= peak
            log_scale += math.log(peak)
    return p, log_scale


def product_transmission(E: float, defect_potential_per_site, J: float = 1.0) -> float:
    """Transmission from the transfer-matrix product with plane-wave
    boundary conditions on both sides."""
    if not abs(E) < 2.0 * J:
        raise OutOfBand(f"|E|={abs(E)} outside the band |E| < {2 * J}")
    defects = dict(defect_potential_per_site)
    m = max((abs(int(n)) for n in defects), default=0) + 1
    p, log_scale = transfer_matrix_product(E, defects, J)
    k = math.acos(E / (2.0 * J))
    # psi_n = t e^{ikn} (n>0), e^{ikn} + r e^{-ikn} (n<0); the product maps
    # (psi_{-m}, psi_{-m-1}) to (psi_{m+1}, psi_m).
    v_right = np.array([np.exp(1j * k * (m + 1)), np.exp(1j * k * m)])
    v_in = np.array([np.exp(-1j * k * m), np.exp(-1j * k * (m + 1))])
    v_left = np.array([np.exp(1j * k * m), np.exp(1j * k * (m + 1))])
    a = np.column_stack([v_right, -(p @ v_left)])
    t, _r = np.linalg.solve(a, p @ v_in)
    return float(abs(t) ** 2 * math.exp(2.0 * log_scale))
