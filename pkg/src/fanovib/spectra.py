"""Sweep orchestration and derived analyses.

Public energy axes are incoming electronic band energies (the quantity
plotted in transmission profiles); the stationary solver works in total
energy, shifted by the incoming channel's vibrational energy.  Sweeps
guard grid points away from every channel band edge, where flux
normalisation is singular.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_hermite

from . import wavepacket
from .coupling import build_coupling_tensors
from .errors import (
    ConvergenceError,
    FanovibError,
    FeatureNotFound,
    ValidationError,
)
from .model import ScatteringProblem, channel_set
from .scattering import solve_scattering
from .transfer_matrix import static_cu, transmission_static

#: Default guard distance from channel band edges, in units of J.
EDGE_GUARD = 1e-3


def _incoming_offset(problem: ScatteringProblem) -> float:
    """Vibrational energy of the incoming channel."""
    return float(problem.vibrational_energies()[problem.j_in])


def channel_edge_energies(problem: ScatteringProblem) -> np.ndarray:
    """Band energies at which some channel momentum hits a band edge."""
    eps = problem.vibrational_energies()
    rel = eps - _incoming_offset(problem)
    edges = np.concatenate([rel + 2.0 * problem.J, rel - 2.0 * problem.J])
    return np.unique(edges)


def guarded_grid(problem: ScatteringProblem, e_min: float, e_max: float,
                 n_points: int, eps_edge: float | None = None):
    """Uniform band-energy grid with points near any channel edge shifted
    away by the guard distance.  Returns (energies, shifted_mask)."""
    if eps_edge is None:
        eps_edge = EDGE_GUARD * problem.J
    grid = np.linspace(e_min, e_max, n_points)
    shifted = np.zeros(n_points, dtype=bool)
    edges = channel_edge_energies(problem)
    for i, e in enumerate(grid):
        d = e - edges
        nearest = np.abs(d).argmin()
        if abs(d[nearest]) < eps_edge:
            side = 1.0 if d[nearest] >= 0 else -1.0
            grid[i] = edges[nearest] + side * eps_edge
            shifted[i] = True
    return grid, shifted


@dataclass
class SpectrumTable:
    """Per-energy scattering results over a band-energy grid."""

    energies: np.ndarray  # incoming band energies
    e_total: np.ndarray
    T: np.ndarray  # (n_E, n_vib)
    R: np.ndarray
    t_total: np.ndarray
    r_total: np.ndarray
    defect: np.ndarray
    cond: np.ndarray
    flags: list
    problem: ScatteringProblem
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.energies)

    def to_csv(self, fh, header_lines=()):
        for line in header_lines:
            fh.write(f"# {line}\n")
        for key in sorted(self.meta):
            fh.write(f"# {key} = {self.meta[key]}\n")
        n_vib = self.T.shape[1]
        cols = ["E", "E_total", "T_total", "R_total", "defect", "cond", "flags"]
        cols += [f"T_{j}" for j in range(n_vib)]
        fh.write(",".join(cols) + "\n")
        for i in range(len(self)):
            row = [
                f"{self.energies[i]:.17g}",
                f"{self.e_total[i]:.17g}",
                f"{self.t_total[i]:.17g}",
                f"{self.r_total[i]:.17g}",
                f"{self.defect[i]:.17g}",
                f"{self.cond[i]:.17g}",
                ";".join(self.flags[i]),
            ]
            row += [f"{x:.17g}" for x in self.T[i]]
            fh.write(",".join(row) + "\n")

    def summary(self) -> dict:
        bad = [i for i, f in enumerate(self.flags) if any(x.startswith("error") for x in f)]
        return {
            "n_points": len(self),
            "e_min": float(self.energies.min()),
            "e_max": float(self.energies.max()),
            "max_defect": float(np.nanmax(self.defect)) if len(self) else math.nan,
            "max_cond": float(np.nanmax(self.cond)) if len(self) else math.nan,
            "t_total_min": float(np.nanmin(self.t_total)),
            "t_total_max": float(np.nanmax(self.t_total)),
            "error_rows": bad,
            **self.meta,
        }


def _solve_row(args):
    problem, e_band = args
    e_tot = e_band + _incoming_offset(problem)
    n = problem.n_vib
    try:
        sol = solve_scattering(e_tot, problem)
        return (sol.T, sol.R, sol.conservation_defect, sol.condition_estimate,
                tuple(sol.flags))
    except FanovibError as exc:
        nan = np.full(n, math.nan)
        return (nan, nan.copy(), math.nan, math.nan,
                (f"error:{type(exc).__name__}",))


def sweep(problem: ScatteringProblem, energies=None, *, e_min: float | None = None,
          e_max: float | None = None, n_points: int = 400, workers: int = 1,
          eps_edge: float | None = None) -> SpectrumTable:
    """Transmission/reflection spectrum over a band-energy grid.

    Either pass an explicit `energies` array (used verbatim) or grid
    bounds; generated grids are guard-shifted away from channel edges.
    Solver failures are flagged per row and never abort the sweep.
    Energy points are independent; workers > 1 distributes them over
    processes with a fixed aggregation order.
    """
    if eps_edge is None:
        eps_edge = EDGE_GUARD * problem.J
    if energies is not None:
        grid = np.asarray(energies, dtype=float)
        shifted = np.zeros(len(grid), dtype=bool)
    else:
        lim = 2.0 * problem.J - eps_edge
        e_min = -lim if e_min is None else e_min
        e_max = lim if e_max is None else e_max
        grid, shifted = guarded_grid(problem, e_min, e_max, n_points, eps_edge)

    build_coupling_tensors(problem)  # warm the cache before forking workers
    jobs = [(problem, float(e)) for e in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_row, jobs, chunksize=16))
    else:
        results = [_solve_row(job) for job in jobs]

    n = problem.n_vib
    t = np.vstack([r[0] for r in results]) if results else np.zeros((0, n))
    r = np.vstack([r[1] for r in results]) if results else np.zeros((0, n))
    flags = []
    for i, res in enumerate(results):
        f = list(res[4])
        if shifted[i]:
            f.append("edge_shifted")
        flags.append(tuple(f))
    table = SpectrumTable(
        energies=grid,
        e_total=grid + _incoming_offset(problem),
        T=t,
        R=r,
        t_total=t.sum(axis=1),
        r_total=r.sum(axis=1),
        defect=np.array([x[2] for x in results]),
        cond=np.array([x[3] for x in results]),
        flags=flags,
        problem=problem,
        meta={
            "problem_sha256": problem.fingerprint(),
            "j_in": problem.j_in,
            "n_vib": problem.n_vib,
            "eps_edge": eps_edge,
        },
    )
    return table


@dataclass
class ChannelDecomposition:
    """Elastic/inelastic split of a transmission table."""

    energies: np.ndarray
    elastic: np.ndarray
    inelastic_total: np.ndarray
    per_channel: np.ndarray
    inelastic_share: np.ndarray


def channel_decomposition(table: SpectrumTable) -> ChannelDecomposition:
    """Split T_j into the elastic channel (j = j_in) and the inelastic
    family, with the inelastic share of the total per energy."""
    j_in = table.problem.j_in
    elastic = table.T[:, j_in]
    total = table.t_total
    inelastic = total - elastic
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total > 0, inelastic / total, 0.0)
    return ChannelDecomposition(
        energies=table.energies,
        elastic=elastic,
        inelastic_total=inelastic,
        per_channel=table.T,
        inelastic_share=share,
    )


@dataclass
class VibrationalFeature:
    """Peak/dip pair of a vibrational resonance."""

    peak_energy: float
    peak_t: float
    dip_energy: float
    dip_t: float
    center: float
    prominence: float
    asymmetry_sign: int  # +1 when the peak sits below the dip in energy


def _interior_extrema(energies, values, min_prominence):
    """Indices of local extrema detected from derivative sign changes."""
    dv = np.diff(values)
    extrema = []
    for i in range(len(dv) - 1):
        if dv[i] == 0:
            continue
        if dv[i] > 0 >= dv[i + 1]:
            extrema.append((i + 1, "max"))
        elif dv[i] < 0 <= dv[i + 1]:
            extrema.append((i + 1, "min"))
    # drop wiggles below the prominence floor
    out = []
    for idx, kind in extrema:
        lo = max(0, idx - 2)
        hi = min(len(values), idx + 3)
        if np.ptp(values[lo:hi]) >= min_prominence:
            out.append((idx, kind))
    return out


def locate_vibrational_resonance(table: SpectrumTable, omega: float | None = None, *,
                                 refine: int = 10, min_points: int = 800,
                                 eps_edge: float | None = None,
                                 min_prominence: float = 1e-9) -> VibrationalFeature:
    """Locate the peak/dip pair near band energy J + hbar*omega.

    The candidate window [J + 0.5 w, J + 1.5 w + 0.05 J] is resampled on
    a dense local grid (at least `refine` times the table density and
    `min_points` points) before extremum detection, since the features
    can be far narrower than any practical global grid.  Raises
    FeatureNotFound when no derivative sign change survives inside the
    window.
    """
    problem = table.problem
    j = problem.J
    if omega is None:
        osc = problem.mobile_oscillator
        if osc is None:
            raise ValidationError("resonance search needs a mobile monomer")
        omega = osc.omega
    lo = j + 0.5 * omega
    hi = j + 1.5 * omega + 0.05 * j
    band_hi = 2.0 * j - (EDGE_GUARD * j if eps_edge is None else eps_edge)
    hi = min(hi, band_hi)
    if lo >= hi:
        raise FeatureNotFound(
            f"search window [{j + 0.5 * omega:.3g}, ...] lies outside the band"
        )
    in_window = np.sum((table.energies >= lo) & (table.energies <= hi))
    n_points = max(refine * max(int(in_window), 2), min_points)
    dense = sweep(
        problem,
        e_min=lo,
        e_max=hi,
        n_points=n_points,
        eps_edge=1e-4 * j if eps_edge is None else eps_edge,
    )
    good = ~np.isnan(dense.t_total)
    energies = dense.energies[good]
    values = dense.t_total[good]
    extrema = _interior_extrema(energies, values, min_prominence)
    kinds = [k for _, k in extrema]
    if "max" not in kinds or "min" not in kinds:
        raise FeatureNotFound(
            f"no peak/dip pair in window [{lo:.4g}, {hi:.4g}]"
        )
    best = None
    for (i1, k1), (i2, k2) in zip(extrema[:-1], extrema[1:]):
        if {k1, k2} != {"max", "min"}:
            continue
        drop = abs(values[i1] - values[i2])
        if best is None or drop > best[0]:
            best = (drop, (i1, k1), (i2, k2))
    if best is None or best[0] < min_prominence:
        raise FeatureNotFound(
            f"no adjacent peak/dip pair in window [{lo:.4g}, {hi:.4g}]"
        )
    _, (ia, ka), (ib, _kb) = best
    i_peak, i_dip = (ia, ib) if ka == "max" else (ib, ia)
    return VibrationalFeature(
        peak_energy=float(energies[i_peak]),
        peak_t=float(values[i_peak]),
        dip_energy=float(energies[i_dip]),
        dip_t=float(values[i_dip]),
        center=float(0.5 * (energies[i_peak] + energies[i_dip])),
        prominence=float(best[0]),
        asymmetry_sign=1 if energies[i_peak] < energies[i_dip] else -1,
    )


def static_average(problem: ScatteringProblem, E: float, n_nodes: int = 128,
                   rtol: float = 1e-6) -> float:
    """Frozen-angle transmission average over the mobile monomer's
    ground-state angular density.

    T_avg = int T_static(theta) p(theta) dtheta with p the Gaussian of
    variance hbar/(2 M omega R^2), evaluated by Gauss-Hermite
    quadrature; the effective potential is fully recomputed at each
    frozen angle.
    """
    if problem.mobile_index is None:
        raise ValidationError("static average needs a mobile monomer")
    lam = problem.lam

    def integrate(n):
        u, w = roots_hermite(n)
        acc = 0.0
        for ui, wi in zip(u, w):
            cu = static_cu(problem, displacement=math.sqrt(2.0) * lam * ui)
            acc += wi * transmission_static(E, cu, problem.J)
        return acc / math.sqrt(math.pi)

    first = integrate(n_nodes)
    second = integrate(2 * n_nodes)
    if abs(second - first) > rtol * max(abs(first), abs(second), 1e-12):
        raise ConvergenceError(
            f"static average not converged at E={E}: {first!r} vs {second!r}"
        )
    return second


@dataclass
class CrossValidationEntry:
    energy: float
    t_qsm: float
    t_tdse: float
    delta_total: float
    delta_channels: float
    packet_width: float
    tolerance: float
    passed: bool


@dataclass
class CrossValidationReport:
    entries: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def as_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "entries": [vars(e) for e in self.entries],
        }


def cross_validate(problem: ScatteringProblem, sample_energies, *,
                   tolerance: float = 0.02, qsm_table: SpectrumTable | None = None,
                   sigma: float = 25.0, n0: int = -140, n_split: int = 10,
                   dt: float | None = None, tdse_levels: int | None = None) -> CrossValidationReport:
    """Compare stationary and time-dependent transmission at sample band
    energies.

    A precomputed table may supply the stationary side but is refused
    (ValidationError) unless its problem hash matches.  Each entry
    records the packet energy width alongside the fixed tolerance.
    """
    if qsm_table is not None and qsm_table.meta.get("problem_sha256") != problem.fingerprint():
        raise ValidationError(
            "spectrum table problem hash does not match; refusing comparison"
        )
    tensors = build_coupling_tensors(problem)
    offset = _incoming_offset(problem)
    entries = []
    for e_band in sample_energies:
        e_band = float(e_band)
        t_qsm, tj_qsm = _stationary_totals(problem, qsm_table, e_band, offset)
        spec = wavepacket.WavepacketSpec(
            n0=n0, sigma=sigma, k_in=math.acos(e_band / (2.0 * problem.J))
        )
        state = wavepacket.initial_state(spec, problem.j_in, problem, tdse_levels)
        ham = wavepacket.LatticeHamiltonian(problem, tensors, state.n_levels)
        step = ham.suggested_dt() if dt is None else dt
        v = 2.0 * problem.J * math.sin(spec.k_in)
        t_max = 0.95 * (abs(n0) + problem.n_sites // 2 - 5.0 * sigma) / v
        traj = wavepacket.propagate(
            state, step, t_max, problem, tensors,
            stop_when_clear=True, clear_margin=max(n_split, int(5 * sigma)),
            hamiltonian=ham,
        )
        yields = wavepacket.transmission_from_dynamics(traj.state, problem, n_split)
        m = min(len(tj_qsm), len(yields.t_j))
        delta_ch = float(np.max(np.abs(tj_qsm[:m] - yields.t_j[:m]))) if m else 0.0
        tail = max(
            float(np.sum(tj_qsm[m:])), float(np.sum(yields.t_j[m:]))
        )
        delta_ch = max(delta_ch, tail)
        delta = abs(t_qsm - yields.t_total)
        entries.append(
            CrossValidationEntry(
                energy=e_band,
                t_qsm=t_qsm,
                t_tdse=yields.t_total,
                delta_total=delta,
                delta_channels=delta_ch,
                packet_width=spec.energy_width(problem.J),
                tolerance=tolerance,
                passed=bool(delta <= tolerance and delta_ch <= tolerance),
            )
        )
    return CrossValidationReport(entries=entries, tolerance=tolerance)


def _stationary_totals(problem, table, e_band, offset):
    if table is not None:
        hit = np.flatnonzero(np.abs(table.energies - e_band) < 1e-12)
        if hit.size:
            i = int(hit[0])
            return float(table.t_total[i]), table.T[i]
    sol = solve_scattering(e_band + offset, problem)
    return sol.t_total, sol.T
