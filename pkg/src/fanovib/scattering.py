"""Stationary multichannel scattering solver.

For each outgoing vibrational channel j0 an auxiliary eigenproblem with
a single outgoing plane wave on the right is solved exactly: the ring
amplitudes follow from an inhomogeneous linear system (the amplitude on
chain site 0 is delta_{j,j0} by construction), the site -1 amplitude
from the chain equation at site 0, and the left-side coefficients
A_j^{j0} from matching the two-exponential boundary form.  Superposing
the auxiliary solutions with coefficients C = A^{-1} e_{j_in} restores a
single incoming channel and yields all transmission and reflection
amplitudes.  Closed channels participate with complex momenta but carry
no flux.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coupling import CouplingTensors, build_coupling_tensors
from .errors import (
    BandEdgeSingularity,
    ChannelClosed,
    IllConditionedWarning,
    SingularRing,
)
from .model import ChannelSet, ScatteringProblem, channel_set

#: Relative pivot threshold declaring the ring system singular.
PIVOT_TOL = 1e-13

#: |sin k| below which a channel sits on a band edge.
EDGE_TOL = 1e-12

#: Condition estimate of the channel-mixing matrix that triggers a warning.
COND_LIMIT = 1e12

#: Energy nudge applied when the ring system is singular, in units of J.
POLE_NUDGE = 1e-9


@dataclass
class AuxiliarySolution:
    """Solution of one outgoing-channel eigenproblem."""

    j0: int
    psi_ring: np.ndarray  # (3, n_vib) ring amplitudes (alpha, beta, eta)
    psi_m1: np.ndarray  # (n_vib,) chain amplitude at site -1
    a_col: np.ndarray  # (n_vib,) boundary coefficients A_j^{j0}


@dataclass
class ScatteringSolution:
    """Amplitudes and flux coefficients for one (E, j_in)."""

    E: float
    j_in: int
    channels: ChannelSet
    C: np.ndarray  # outgoing-channel superposition coefficients
    trans_amp: np.ndarray
    refl_amp: np.ndarray
    T: np.ndarray  # flux transmission per channel (0 for closed)
    R: np.ndarray  # flux reflection per channel (0 for closed)
    psi_ring: np.ndarray  # (3, n_vib) physical ring amplitudes
    condition_estimate: float
    conservation_defect: float = field(init=False)
    flags: tuple = ()

    def __post_init__(self):
        self.conservation_defect = abs(float(self.T.sum() + self.R.sum()) - 1.0)

    @property
    def t_total(self) -> float:
        return float(self.T.sum())

    @property
    def r_total(self) -> float:
        return float(self.R.sum())


def ring_matrix(E: float, tensors: CouplingTensors, eps: np.ndarray) -> np.ndarray:
    """Block matrix of the ring linear system, shape (3n, 3n)."""
    n = len(eps)
    d = np.diag(E - eps)
    z01 = -tensors.f_pair(0, 1)
    z02 = -tensors.f_pair(0, 2)
    z12 = -tensors.f_pair(1, 2)
    return np.block([[d, z01, z02], [z01, d, z12], [z02, z12, d]])


def _factor_ring(E, tensors, eps):
    m = ring_matrix(E, tensors, eps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_TOL * pivots.max():
        raise SingularRing(f"ring system singular at E={E} (bound-state pole)")
    return lu, piv


def _ring_columns(E, tensors, channels):
    """Ring amplitudes for every outgoing channel at once: (3, n, n_j0)."""
    n = tensors.n_vib
    rhs = np.zeros((3 * n, n))
    rhs[:n, :] = tensors.g  # alpha rows; psi_{0 j'} = delta_{j' j0}
    lu_piv = _factor_ring(E, tensors, channels.eps)
    sol = scipy.linalg.lu_solve(lu_piv, rhs)
    return sol.reshape(3, n, n)


def solve_ring_system(E: float, j0: int, tensors: CouplingTensors,
                      channels: ChannelSet) -> np.ndarray:
    """Ring amplitudes psi^{(j0)} for one outgoing channel, shape (3, n_vib)."""
    n = tensors.n_vib
    rhs = np.zeros(3 * n)
    rhs[:n] = tensors.g[:, j0]
    lu_piv = _factor_ring(E, tensors, channels.eps)
    return scipy.linalg.lu_solve(lu_piv, rhs).reshape(3, n)


def _check_edges(channels: ChannelSet):
    sin_k = np.sin(channels.k)
    if np.abs(sin_k).min() < EDGE_TOL:
        j = int(np.abs(sin_k).argmin())
        raise BandEdgeSingularity(
            f"channel {j} sits on a band edge at E={channels.E}"
        )
    return sin_k


def boundary_amplitudes(E: float, j0: int, psi_ring: np.ndarray,
                        tensors: CouplingTensors, channels: ChannelSet, J: float = 1.0):
    """Site -1 amplitudes and boundary coefficients for one outgoing channel.

    psi_{-1,j} follows from the chain equation at site 0; A_j^{j0} from
    matching the left boundary form at n = -1, using the analytic
    continuation of sin k for closed channels.
    """
    sin_k = _check_edges(channels)
    k = channels.k
    eps = channels.eps
    delta = np.zeros(len(channels))
    delta[j0] = 1.0
    coupled = tensors.g @ psi_ring[0]
    psi_m1 = -(J * delta * np.exp(1j * k[j0]) + (eps - E) * delta + coupled) / J
    a_col = (delta * np.exp(1j * k) - psi_m1) / (2j * sin_k)
    return psi_m1, a_col


def auxiliary_solution(E, j0, tensors, channels, J=1.0) -> AuxiliarySolution:
    psi_ring = solve_ring_system(E, j0, tensors, channels)
    psi_m1, a_col = boundary_amplitudes(E, j0, psi_ring, tensors, channels, J)
    return AuxiliarySolution(j0=j0, psi_ring=psi_ring.astype(complex),
                             psi_m1=psi_m1, a_col=a_col)


def _assemble(E, tensors, channels, J):
    """Channel-mixing matrix A[j, j0] plus the ring columns used to build it."""
    sin_k = _check_edges(channels)
    k = channels.k
    eps = channels.eps
    rings = _ring_columns(E, tensors, channels)
    n = tensors.n_vib
    delta = np.eye(n)
    coupled = tensors.g @ rings[0]  # (n_j, n_j0)
    psi_m1 = -(
        J * delta * np.exp(1j * k)[None, :]
        + (eps - E)[:, None] * delta
        + coupled
    ) / J
    a = (delta * np.exp(1j * k)[:, None] - psi_m1) / (2j * sin_k)[:, None]
    return a, rings, psi_m1


def assemble_and_invert(E: float, problem: ScatteringProblem,
                        tensors: CouplingTensors | None = None):
    """Full channel-mixing matrix A, its inverse Q and a condition estimate."""
    if tensors is None:
        tensors = build_coupling_tensors(problem)
    channels = channel_set(E, problem)
    a, _rings, _psi_m1 = _assemble(E, tensors, channels, problem.J)
    cond = float(np.linalg.cond(a))
    if cond > COND_LIMIT:
        warnings.warn(
            f"channel-mixing matrix condition estimate {cond:.3g} at E={E}",
            IllConditionedWarning,
            stacklevel=2,
        )
    return a, np.linalg.inv(a), cond


def solve_scattering(E: float, problem: ScatteringProblem,
                     tensors: CouplingTensors | None = None) -> ScatteringSolution:
    """Solve the full scattering problem at total energy E.

    The incoming channel is problem.j_in and must be open.  Flux
    coefficients use squared amplitudes weighted by the group-velocity
    ratio sin(k_j)/sin(k_in); closed channels keep their evanescent
    amplitudes but contribute zero flux.  If E sits exactly on a ring
    bound-state pole the energy is nudged by +-1e-9 J and the solution
    is flagged 'pole_nudged'.
    """
    if tensors is None:
        tensors = build_coupling_tensors(problem)
    channels = channel_set(E, problem)
    j_in = problem.j_in
    if not channels.channels[j_in].open:
        raise ChannelClosed(f"incoming channel {j_in} closed at E={E}")
    flags = []
    try:
        a, rings, _ = _assemble(E, tensors, channels, problem.J)
    except SingularRing:
        flags.append("pole_nudged")
        last = None
        for nudge in (POLE_NUDGE * problem.J, -POLE_NUDGE * problem.J):
            try:
                channels = channel_set(E + nudge, problem)
                a, rings, _ = _assemble(E + nudge, tensors, channels, problem.J)
                E = E + nudge
                break
            except SingularRing as exc:  # pragma: no cover - double pole
                last = exc
        else:
            raise SingularRing(
                f"ring system singular at E={E} even after nudging"
            ) from last

    cond = float(np.linalg.cond(a))
    if cond > COND_LIMIT:
        flags.append("ill_conditioned")
        warnings.warn(
            f"channel-mixing matrix condition estimate {cond:.3g} at E={E}",
            IllConditionedWarning,
            stacklevel=2,
        )
    lu_piv = scipy.linalg.lu_factor(a)
    e_in = np.zeros(len(channels))
    e_in[j_in] = 1.0
    c = scipy.linalg.lu_solve(lu_piv, e_in)
    trans_amp = c.copy()
    refl_amp = c - e_in  # sum_j0 (delta - A) C = C - A C with A C = e_in
    psi_ring = np.tensordot(rings, c, axes=([2], [0])).astype(complex)

    sin_k = np.sin(channels.k)
    open_mask = channels.open_mask
    vel_ratio = np.zeros(len(channels))
    vel_ratio[open_mask] = np.real(sin_k[open_mask]) / np.real(sin_k[j_in])
    t_flux = np.abs(trans_amp) ** 2 * vel_ratio
    r_flux = np.abs(refl_amp) ** 2 * vel_ratio
    return ScatteringSolution(
        E=float(E),
        j_in=j_in,
        channels=channels,
        C=c,
        trans_amp=trans_amp,
        refl_amp=refl_amp,
        T=t_flux,
        R=r_flux,
        psi_ring=psi_ring,
        condition_estimate=cond,
        flags=tuple(flags),
    )


# -- residual oracles ----------------------------------------------------------


def _ring_rows_residual(E, psi_ring, psi_site0, tensors, eps):
    """Residual of the three ring rows of (H - E)|psi> = 0."""
    res = []
    pairs = {(0, 1), (0, 2), (1, 2)}
    for n in range(3):
        row = (eps - E) * psi_ring[n]
        for n_p in range(3):
            if n_p == n:
                continue
            row = row + tensors.f_pair(n, n_p) @ psi_ring[n_p]
        if n == 0:
            row = row + tensors.g @ psi_site0
        res.append(np.abs(row).max())
    return max(res)


def auxiliary_residual(aux: AuxiliarySolution, E: float, tensors: CouplingTensors,
                       channels: ChannelSet, J: float = 1.0) -> float:
    """Max residual of one auxiliary solution over chain sites -2..2 and
    the ring rows, with boundary-form amplitudes substituted."""
    n = len(channels)
    k = channels.k
    eps = channels.eps
    delta = np.zeros(n)
    delta[aux.j0] = 1.0

    def psi(site):
        if site == -1:
            return aux.psi_m1
        if site <= 0:
            return aux.a_col * np.exp(1j * k * site) + (delta - aux.a_col) * np.exp(
                -1j * k * site
            )
        return delta * np.exp(1j * k[aux.j0] * site)

    worst = 0.0
    for site in (-2, -1, 0, 1, 2):
        row = (eps - E) * psi(site) + J * (psi(site + 1) + psi(site - 1))
        if site == 0:
            row = row + tensors.g @ aux.psi_ring[0]
        worst = max(worst, np.abs(row).max())
    worst = max(
        worst, _ring_rows_residual(E, aux.psi_ring, delta, tensors, eps)
    )
    return worst


def solution_residual(sol: ScatteringSolution, problem: ScatteringProblem,
                      tensors: CouplingTensors | None = None) -> float:
    """Max residual of a physical solution over chain sites -2..2 and the
    ring rows; scale against max(|E|, J)."""
    if tensors is None:
        tensors = build_coupling_tensors(problem)
    channels = sol.channels
    n = len(channels)
    k = channels.k
    eps = channels.eps
    j_in = sol.j_in
    incoming = np.zeros(n)
    incoming[j_in] = 1.0

    def psi(site):
        if site <= 0:
            return incoming * np.exp(1j * k[j_in] * site) + sol.refl_amp * np.exp(
                -1j * k * site
            )
        return sol.trans_amp * np.exp(1j * k * site)

    worst = 0.0
    for site in (-2, -1, 0, 1, 2):
        row = (eps - sol.E) * psi(site) + problem.J * (psi(site + 1) + psi(site - 1))
        if site == 0:
            row = row + tensors.g @ sol.psi_ring[0]
        worst = max(worst, np.abs(row).max())
    worst = max(
        worst,
        _ring_rows_residual(sol.E, sol.psi_ring, psi(0), tensors, eps),
    )
    return worst
