"""Time-dependent verification oracle: Gaussian wavepacket propagation
on the full chain + ring lattice.

The state lives on a (n_sites + 3) x n_levels complex grid (chain rows
first, then the three ring rows) and evolves under a sparse real
symmetric Hamiltonian with a fixed-step classic 4th-order integrator.
Transmission is read off from the population beyond a split site after
the packet has cleared the scattering region; the vibrational basis is
diagonal, so per-channel yields are direct column sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .coupling import CouplingTensors, build_coupling_tensors
from .errors import BadGeometry, PrematureExtraction, StepSizeTooLarge, ValidationError
from .model import ScatteringProblem

#: Norm drift that aborts a propagation.
NORM_ABORT = 1e-6

#: Default dt safety factor against the Hamiltonian row-sum norm.
DT_SAFETY = 0.02


@dataclass(frozen=True)
class WavepacketSpec:
    """Incoming Gaussian packet <n|psi> ~ exp(-(n - n0)^2/sigma^2 + i k n).

    n0 must sit well left of the scatterer (n0 + 4 sigma < 0).
    """

    n0: int
    sigma: float
    k_in: float

    def __post_init__(self):
        if not 0.0 < self.k_in < math.pi:
            raise ValidationError("k_in must lie in (0, pi)")
        if self.sigma <= 0:
            raise ValidationError("sigma must be > 0")

    def effective_mass(self, J: float = 1.0) -> float:
        """Band mass 1/|d^2E/dk^2| = 1/(2 J |cos k|)."""
        curv = 2.0 * J * abs(math.cos(self.k_in))
        return math.inf if curv == 0 else 1.0 / curv

    def energy_width(self, J: float = 1.0) -> float:
        """Energy width from spatial localisation, 2 k/(m sigma)."""
        m = self.effective_mass(J)
        return 0.0 if math.isinf(m) else 2.0 * self.k_in / (m * self.sigma)

    def energy(self, J: float = 1.0) -> float:
        return 2.0 * J * math.cos(self.k_in)


@dataclass
class WavepacketState:
    """Complex amplitude grid over lattice rows x vibrational levels."""

    psi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.ndim != 2 or self.psi.shape[0] < 11:
            raise ValidationError("state grid must be (n_sites + 3, n_levels)")

    @property
    def n_sites(self) -> int:
        return self.psi.shape[0] - 3

    @property
    def n_levels(self) -> int:
        return self.psi.shape[1]

    @property
    def offset(self) -> int:
        """Row index of chain site 0."""
        return self.n_sites // 2

    def row(self, site: int) -> int:
        return site + self.offset

    @property
    def chain(self) -> np.ndarray:
        return self.psi[:-3]

    @property
    def cu(self) -> np.ndarray:
        return self.psi[-3:]

    def norm(self) -> float:
        return float(np.linalg.norm(self.psi))

    def copy(self) -> "WavepacketState":
        return WavepacketState(psi=self.psi.copy(), t=self.t)


class LatticeHamiltonian:
    """Sparse real symmetric Hamiltonian on the chain + ring grid."""

    def __init__(self, problem: ScatteringProblem, tensors: CouplingTensors | None = None,
                 n_levels: int | None = None):
        if tensors is None:
            tensors = build_coupling_tensors(problem)
        m = problem.n_vib if n_levels is None else int(n_levels)
        if not 1 <= m <= problem.n_vib:
            raise ValidationError("n_levels must be in [1, n_vib]")
        n = problem.n_sites
        self.n_sites = n
        self.n_levels = m
        self.problem = problem
        eps = problem.vibrational_energies()[:m]

        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        def put_block(row_site, col_site, mat):
            base_r, base_c = row_site * m, col_site * m
            jj, kk = np.nonzero(mat)
            for a, b in zip(jj, kk):
                put(base_r + a, base_c + b, mat[a, b])

        # vibrational energies on every lattice row
        for r in range(n + 3):
            for j in range(m):
                if eps[j] != 0.0:
                    put(r * m + j, r * m + j, eps[j])
        # chain hopping, hard walls at the ends
        for site_row in range(n - 1):
            for j in range(m):
                a = site_row * m + j
                b = (site_row + 1) * m + j
                put(a, b, problem.J)
                put(b, a, problem.J)
        alpha, beta, eta = n, n + 1, n + 2
        site0 = n // 2
        g = tensors.g[:m, :m]
        put_block(site0, alpha, g)
        put_block(alpha, site0, g)
        for (i, ip) in ((0, 1), (0, 2), (1, 2)):
            f = tensors.f_pair(i, ip)[:m, :m]
            put_block(n + i, n + ip, f)
            put_block(n + ip, n + i, f)

        dim = (n + 3) * m
        self.matrix = scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(dim, dim)
        ).tocsr()

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """H @ psi on the 2-d grid."""
        shape = psi.shape
        return (self.matrix @ psi.reshape(-1)).reshape(shape)

    def expectation(self, psi: np.ndarray) -> float:
        flat = psi.reshape(-1)
        return float(np.real(np.vdot(flat, self.matrix @ flat)))

    def row_sum_norm(self) -> float:
        return float(np.abs(self.matrix).sum(axis=1).max())

    def suggested_dt(self) -> float:
        return DT_SAFETY / self.row_sum_norm()


def initial_state(spec: WavepacketSpec, j_in: int, problem: ScatteringProblem,
                  n_levels: int | None = None) -> WavepacketState:
    """Normalized Gaussian x vibrational-eigenstate product, zero on the
    ring rows."""
    m = problem.n_vib if n_levels is None else int(n_levels)
    if not 0 <= j_in < m:
        raise ValidationError(f"j_in={j_in} outside the level grid {m}")
    if spec.n0 + 4.0 * spec.sigma >= 0:
        raise BadGeometry("packet overlaps the scattering region: need n0 + 4 sigma < 0")
    n = problem.n_sites
    offset = n // 2
    if spec.n0 - 4.0 * spec.sigma <= -offset:
        raise BadGeometry("packet overlaps the left chain end")
    sites = np.arange(n) - offset
    envelope = np.exp(-((sites - spec.n0) ** 2) / spec.sigma**2 + 1j * spec.k_in * sites)
    psi = np.zeros((n + 3, m), dtype=complex)
    psi[:n, j_in] = envelope
    psi /= np.linalg.norm(psi)
    return WavepacketState(psi=psi, t=0.0)


def rhs(state: WavepacketState, problem: ScatteringProblem,
        tensors: CouplingTensors | None = None,
        hamiltonian: LatticeHamiltonian | None = None) -> np.ndarray:
    """Time derivative -i H psi on the grid."""
    h = hamiltonian or LatticeHamiltonian(problem, tensors, state.n_levels)
    return -1j * h.apply(state.psi)


def cu_population(state: WavepacketState) -> float:
    """Total excitation probability on the three ring monomers."""
    return float(np.sum(np.abs(state.cu) ** 2))


def von_neumann_entropy(state: WavepacketState) -> float:
    """Entanglement entropy between lattice position and vibration.

    The reduced electronic density matrix rho_el[n, n'] = sum_j psi_nj
    psi*_n'j shares its nonzero spectrum with the level-space Gram
    matrix, which is the cheaper side to diagonalize.
    """
    psi = state.psi
    if psi.shape[1] <= psi.shape[0]:
        gram = psi.conj().T @ psi
    else:
        gram = psi @ psi.conj().T
    evals = np.linalg.eigvalsh(gram).real
    evals = evals[evals > 1e-300]
    total = evals.sum()
    if total <= 0:
        return 0.0
    p = evals / total
    return float(-np.sum(p * np.log(p)))


@dataclass
class Trajectory:
    """Sampled observables along one propagation plus the final state."""

    t: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    cu_population: np.ndarray
    entropy: np.ndarray | None
    state: WavepacketState
    dt: float
    stopped_early: bool = False
    wall_contaminated: bool = False


def _mid_population(state: WavepacketState, half_width: int) -> float:
    lo = state.row(-half_width)
    hi = state.row(half_width) + 1
    return float(np.sum(np.abs(state.chain[max(lo, 0):hi]) ** 2))


def _wall_population(state: WavepacketState, width: int = 5) -> float:
    chain = state.chain
    return float(
        np.sum(np.abs(chain[:width]) ** 2) + np.sum(np.abs(chain[-width:]) ** 2)
    )


def propagate(state: WavepacketState, dt: float, t_end: float,
              problem: ScatteringProblem, tensors: CouplingTensors | None = None,
              *, sample_interval: float | None = None, compute_entropy: bool = False,
              stop_when_clear: bool = False, clear_margin: int | None = None,
              norm_tol: float = NORM_ABORT, wall_guard: bool = True,
              snapshot_fh=None, snapshot_stride: int = 1,
              hamiltonian: LatticeHamiltonian | None = None) -> Trajectory:
    """Propagate to t_end with a fixed-step 4th-order integrator.

    Observables are sampled every sample_interval time units.  With
    stop_when_clear the run ends as soon as the ring population falls
    below 1e-10 and the region within clear_margin sites of the ring is
    empty.  Raises StepSizeTooLarge when the norm drifts beyond
    norm_tol.
    """
    if dt <= 0 or t_end <= state.t:
        raise ValidationError("need dt > 0 and t_end > state.t")
    h = hamiltonian or LatticeHamiltonian(problem, tensors, state.n_levels)
    span = t_end - state.t
    n_steps = max(1, math.ceil(span / dt))
    dt_eff = span / n_steps
    if sample_interval is None:
        sample_interval = max(span / 200.0, dt_eff)
    stride = max(1, round(sample_interval / dt_eff))
    if clear_margin is None:
        clear_margin = state.n_sites // 8

    mat = h.matrix
    psi = state.psi.reshape(-1).copy()
    t = state.t

    samples = {"t": [], "norm": [], "energy": [], "pu": [], "s": []}
    flags = {"early": False, "wall": False}
    sample_count = 0

    def record():
        nonlocal sample_count
        cur = WavepacketState(psi=psi.reshape(state.psi.shape), t=t)
        nrm = cur.norm()
        if abs(nrm - 1.0) > norm_tol:
            raise StepSizeTooLarge(
                f"norm drift {abs(nrm - 1.0):.3e} at t={t:.3f}; reduce dt"
            )
        samples["t"].append(t)
        samples["norm"].append(nrm)
        samples["energy"].append(h.expectation(cur.psi))
        samples["pu"].append(cu_population(cur))
        samples["s"].append(von_neumann_entropy(cur) if compute_entropy else math.nan)
        if wall_guard and _wall_population(cur) > 1e-9:
            flags["wall"] = True
        if snapshot_fh is not None and sample_count % snapshot_stride == 0:
            _write_snapshot(snapshot_fh, cur)
        sample_count += 1
        if (
            stop_when_clear
            and samples["pu"][-1] < 1e-10
            and _mid_population(cur, clear_margin) < 1e-9
        ):
            flags["early"] = True
        return cur

    record()
    done = 0
    while done < n_steps and not flags["early"]:
        chunk = min(stride, n_steps - done)
        for _ in range(chunk):
            k1 = -1j * (mat @ psi)
            k2 = -1j * (mat @ (psi + 0.5 * dt_eff * k1))
            k3 = -1j * (mat @ (psi + 0.5 * dt_eff * k2))
            k4 = -1j * (mat @ (psi + dt_eff * k3))
            psi += (dt_eff / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        done += chunk
        t = state.t + done * dt_eff
        record()

    final = WavepacketState(psi=psi.reshape(state.psi.shape), t=t)
    entropy = np.array(samples["s"]) if compute_entropy else None
    return Trajectory(
        t=np.array(samples["t"]),
        norm=np.array(samples["norm"]),
        energy=np.array(samples["energy"]),
        cu_population=np.array(samples["pu"]),
        entropy=entropy,
        state=final,
        dt=dt_eff,
        stopped_early=flags["early"],
        wall_contaminated=flags["wall"],
    )


def _write_snapshot(fh, state: WavepacketState) -> None:
    """Columnar dump: t, site, level, Re psi, Im psi (ring rows use the
    labels alpha/beta/eta)."""
    labels = [str(s - state.offset) for s in range(state.n_sites)] + [
        "alpha",
        "beta",
        "eta",
    ]
    for r, lab in enumerate(labels):
        for j in range(state.n_levels):
            z = state.psi[r, j]
            fh.write(f"{state.t:.17g} {lab} {j} {z.real:.17g} {z.imag:.17g}\n")


@dataclass
class ChannelYields:
    """Per-channel transmission/reflection read from a final state."""

    t_total: float
    r_total: float
    t_j: np.ndarray
    r_j: np.ndarray
    unresolved: float  # population still inside the split region + ring

    def __post_init__(self):
        self.t_j = np.asarray(self.t_j)
        self.r_j = np.asarray(self.r_j)


def transmission_from_dynamics(state: WavepacketState, problem: ScatteringProblem,
                               n_split: int = 10, *, pu_tol: float = 1e-10,
                               mid_tol: float = 1e-8) -> ChannelYields:
    """Channel-resolved yields after the packet has left the scattering
    region: T_j sums |psi|^2 beyond +n_split, R_j below -n_split.

    Raises PrematureExtraction while the ring or the mid region still
    holds population above tolerance.
    """
    pu = cu_population(state)
    if pu > pu_tol:
        raise PrematureExtraction(f"ring population {pu:.3e} above {pu_tol:.1e}")
    mid = _mid_population(state, n_split)
    if mid > mid_tol:
        raise PrematureExtraction(
            f"population {mid:.3e} within |n| <= {n_split} above {mid_tol:.1e}"
        )
    chain = state.chain
    prob = np.abs(chain) ** 2
    right = state.row(n_split) + 1
    left = state.row(-n_split)
    t_j = prob[right:].sum(axis=0)
    r_j = prob[:left].sum(axis=0)
    return ChannelYields(
        t_total=float(t_j.sum()),
        r_total=float(r_j.sum()),
        t_j=t_j,
        r_j=r_j,
        unresolved=float(mid + pu),
    )
