"""Physical system definition: chain, ring control unit, oscillators and
open/closed channel kinematics.

Natural units are used throughout: hbar = 1, the chain hopping J is the
energy unit and the lattice spacing is the length unit.  All types are
immutable after construction and safe to share across parallel workers.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NoOpenChannel, ValidationError, ZeroPointWarning

#: Ring monomer labels in storage order.  The first one (alpha) is the
#: entrance site coupled to chain site 0.
MONOMERS = ("alpha", "beta", "eta")

#: Warn when the dimensionless zero-point ratio exceeds this; the
#: first-order Taylor coupling degrades beyond it.
ZERO_POINT_WARN = 0.2


def monomer_index(name) -> int:
    """Map a monomer label or index to its storage index."""
    if isinstance(name, str):
        try:
            return MONOMERS.index(name)
        except ValueError:
            raise ValidationError(f"unknown monomer {name!r}") from None
    i = int(name)
    if i not in (0, 1, 2):
        raise ValidationError(f"monomer index {name!r} out of range")
    return i


@dataclass(frozen=True)
class OscillatorSpec:
    """Harmonic angular trap of one ring monomer.

    omega is the trap frequency in units of J/hbar, mass the effective
    monomer mass; a monomer with mobile=False is pinned to its trap
    ground state and carries no vibrational basis.
    """

    omega: float
    mass: float
    mobile: bool = False

    def __post_init__(self):
        if not self.omega > 0:
            raise ValidationError("oscillator omega must be > 0")
        if not self.mass > 0:
            raise ValidationError("oscillator mass must be > 0")


@dataclass(frozen=True)
class ControlUnitGeometry:
    """Ring of radius R at distance d from the chain.

    Monomer angles are measured from the north pole (the point of the
    ring closest to the chain); theta0 rigidly rotates the whole unit.
    """

    d: float
    R: float
    theta0: float = 0.0
    equilibrium_angles: tuple[float, float, float] = (
        0.0,
        2.0 * math.pi / 3.0,
        4.0 * math.pi / 3.0,
    )

    def __post_init__(self):
        if not (self.d > self.R > 0):
            raise ValidationError(
                "CU intersects chain: require d > R > 0, "
                f"got d={self.d}, R={self.R}"
            )
        if len(self.equilibrium_angles) != 3:
            raise ValidationError("need exactly three equilibrium angles")
        object.__setattr__(
            self, "equilibrium_angles", tuple(float(a) for a in self.equilibrium_angles)
        )

    def monomer_angle(self, n, displacement=0.0) -> float:
        """Actual ring angle of monomer n: equilibrium + rotation + displacement."""
        return self.equilibrium_angles[monomer_index(n)] + self.theta0 + displacement


def site_positions(geometry: ControlUnitGeometry, displacements=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Cartesian coordinates of chain site 0 and the three ring monomers.

    The chain runs along the x axis with site 0 at the origin; the ring
    center sits at (0, d).  Returns an array of shape (4, 2) ordered as
    (site 0, alpha, beta, eta).
    """
    pts = np.zeros((4, 2))
    pts[0] = (0.0, 0.0)
    for i in range(3):
        ang = geometry.monomer_angle(i, displacements[i])
        pts[i + 1] = (geometry.R * math.sin(ang), geometry.d - geometry.R * math.cos(ang))
    return pts


def zero_point_ratio(osc: OscillatorSpec, R: float) -> float:
    """Dimensionless zero-point displacement (1/R)*sqrt(hbar/(2*M*omega))."""
    return math.sqrt(1.0 / (2.0 * osc.mass * osc.omega)) / R


@dataclass(frozen=True)
class ScatteringProblem:
    """Immutable description of one chain + control-unit scattering setup.

    n_vib truncates the vibrational basis of the mobile monomer; frozen
    monomers are pinned to their ground state.  j_in is the incoming
    vibrational quantum number.  n_sites is only used by the
    time-dependent solver (the stationary solver is chain-length free).
    """

    geometry: ControlUnitGeometry
    oscillators: tuple[OscillatorSpec, OscillatorSpec, OscillatorSpec]
    mu_sq: float
    J: float = 1.0
    n_sites: int = 1000
    j_in: int = 0
    n_vib: int = 50

    def __post_init__(self):
        object.__setattr__(self, "oscillators", tuple(self.oscillators))
        if len(self.oscillators) != 3:
            raise ValidationError("need one oscillator spec per ring monomer")
        if not self.J > 0:
            raise ValidationError("J must be > 0")
        if not self.mu_sq > 0:
            raise ValidationError("mu_sq must be > 0")
        if self.n_vib < 1:
            raise ValidationError("n_vib must be >= 1")
        if not 0 <= self.j_in < self.n_vib:
            raise ValidationError("require 0 <= j_in < n_vib")
        if self.n_sites < 8:
            raise ValidationError("n_sites too small for a chain")
        n_mobile = sum(o.mobile for o in self.oscillators)
        if n_mobile > 1:
            raise ValidationError(
                "only a single mobile monomer is supported "
                "(extension point for several mobile monomers)"
            )
        if n_mobile == 0 and self.n_vib != 1:
            raise ValidationError(
                "n_vib > 1 requires a mobile monomer; frozen monomers are "
                "truncated to their ground state"
            )
        if n_mobile == 1:
            lam = zero_point_ratio(self.mobile_oscillator, self.geometry.R)
            if not math.isfinite(lam):
                raise ValidationError("zero-point ratio is not finite")
            if lam > ZERO_POINT_WARN:
                warnings.warn(
                    f"zero-point ratio {lam:.3g} > {ZERO_POINT_WARN}; first-order "
                    "coupling may be inaccurate",
                    ZeroPointWarning,
                    stacklevel=2,
                )

    # -- mobile-monomer helpers -------------------------------------------

    @property
    def mobile_index(self):
        """Index of the mobile monomer in MONOMERS order, or None."""
        for i, o in enumerate(self.oscillators):
            if o.mobile:
                return i
        return None

    @property
    def mobile_oscillator(self):
        i = self.mobile_index
        return None if i is None else self.oscillators[i]

    @property
    def lam(self) -> float:
        """Zero-point ratio of the mobile monomer (0 when all frozen)."""
        osc = self.mobile_oscillator
        return 0.0 if osc is None else zero_point_ratio(osc, self.geometry.R)

    def vibrational_energies(self) -> np.ndarray:
        """Channel energies of the active mode, hbar*omega*(j + 1/2).

        Zero-point offsets of frozen monomers are constant shifts that
        cancel in every observable and are dropped; with no mobile
        monomer the single channel sits at zero.
        """
        osc = self.mobile_oscillator
        if osc is None:
            return np.zeros(self.n_vib)
        return osc.omega * (np.arange(self.n_vib) + 0.5)

    # -- serialisation -----------------------------------------------------

    def as_dict(self) -> dict:
        return {
            "J": self.J,
            "n_sites": self.n_sites,
            "j_in": self.j_in,
            "n_vib": self.n_vib,
            "mu_sq": self.mu_sq,
            "geometry": {
                "d": self.geometry.d,
                "R": self.geometry.R,
                "theta0": self.geometry.theta0,
                "equilibrium_angles": list(self.geometry.equilibrium_angles),
            },
            "oscillators": [
                {"omega": o.omega, "mass": o.mass, "mobile": o.mobile}
                for o in self.oscillators
            ],
        }

    def fingerprint(self) -> str:
        """Content hash of the full problem description."""
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def problem_from_dict(data: dict) -> ScatteringProblem:
    """Inverse of ScatteringProblem.as_dict."""
    geo = data["geometry"]
    return ScatteringProblem(
        geometry=ControlUnitGeometry(
            d=float(geo["d"]),
            R=float(geo["R"]),
            theta0=float(geo.get("theta0", 0.0)),
            equilibrium_angles=tuple(geo.get("equilibrium_angles", (0.0, 2 * math.pi / 3, 4 * math.pi / 3))),
        ),
        oscillators=tuple(
            OscillatorSpec(float(o["omega"]), float(o["mass"]), bool(o["mobile"]))
            for o in data["oscillators"]
        ),
        mu_sq=float(data["mu_sq"]),
        J=float(data.get("J", 1.0)),
        n_sites=int(data.get("n_sites", 1000)),
        j_in=int(data.get("j_in", 0)),
        n_vib=int(data.get("n_vib", 50)),
    )


# -- dispersion and channels ------------------------------------------------


def dispersion_energy(k, J):
    """Exciton band energy E_k = 2*J*cos(k)."""
    return 2.0 * J * np.cos(k)


@dataclass(frozen=True)
class Channel:
    """One vibrational channel at fixed total energy."""

    j: int
    eps: float
    k: complex
    open: bool


@dataclass(frozen=True)
class ChannelSet:
    """All channels j < n_vib at total energy E.

    Open channels carry real k in (0, pi); closed channels carry the
    analytic continuation with Im(k) > 0 so that e^{+ikn} decays to the
    right and e^{-ikn} decays to the left.
    """

    E: float
    channels: tuple[Channel, ...]

    @property
    def k(self) -> np.ndarray:
        return np.array([c.k for c in self.channels], dtype=complex)

    @property
    def eps(self) -> np.ndarray:
        return np.array([c.eps for c in self.channels])

    @property
    def open_mask(self) -> np.ndarray:
        return np.array([c.open for c in self.channels], dtype=bool)

    @property
    def open_indices(self) -> np.ndarray:
        return np.flatnonzero(self.open_mask)

    def __len__(self):
        return len(self.channels)


def channel_wavenumber(E, eps_j, J):
    """Solve 2*J*cos(k) = E - eps_j for one channel.

    Returns (k, open).  Outside the band the analytic continuation keeps
    Im(k) > 0: k = i*arccosh(x) above the band (x > 1) and
    k = pi + i*arccosh(-x) below (x < -1), with x = (E - eps_j)/(2J).
    """
    x = (E - eps_j) / (2.0 * J)
    if -1.0 < x < 1.0:
        return complex(math.acos(x)), True
    if x >= 1.0:
        return 1j * math.acosh(x), False
    return math.pi + 1j * math.acosh(-x), False


def channel_set(E: float, problem: ScatteringProblem) -> ChannelSet:
    """Channel kinematics at total energy E for every j < n_vib.

    Raises NoOpenChannel when every channel is evanescent (the energy is
    outside all accessible bands).
    """
    eps = problem.vibrational_energies()
    channels = []
    for j, e in enumerate(eps):
        k, is_open = channel_wavenumber(E, e, problem.J)
        channels.append(Channel(j=j, eps=float(e), k=k, open=is_open))
    cs = ChannelSet(E=float(E), channels=tuple(channels))
    if not cs.open_mask.any():
        raise NoOpenChannel(f"all {problem.n_vib} channels closed at E={E}")
    return cs


# -- calibrated default setup ------------------------------------------------


def default_geometry(g_strength: float = 1.5, J: float = 1.0, R: float = 1.0,
                     theta0: float = 0.0):
    """Equilateral ring calibrated so the static couplings are simple.

    R fixes mu^2 through |F| = mu^2/(sqrt(3)R)^3 = J and d is then chosen
    to give the requested static chain coupling |G| = mu^2/(d-R)^3.
    Returns (geometry, mu_sq).
    """
    mu_sq = J * (math.sqrt(3.0) * R) ** 3
    d = R + (mu_sq / g_strength) ** (1.0 / 3.0)
    return ControlUnitGeometry(d=d, R=R, theta0=theta0), mu_sq


#: Default effective mass of a ring monomer, in units hbar^2/(J a^2).
#: Chosen so the zero-point ratio stays within the first-order coupling
#: regime down to omega = 0.01 J while keeping the vibrational features
#: at omega ~ 0.5 J resolvable.
DEFAULT_MASS = 1250.0


def default_problem(omega: float = 0.01, mobile="alpha", *, mass: float = DEFAULT_MASS,
                    n_vib: int = 50, j_in: int = 0, n_sites: int = 1000,
                    theta0: float = 0.0, g_strength: float = 1.5,
                    J: float = 1.0) -> ScatteringProblem:
    """Calibrated reference problem with one mobile monomer.

    Pass mobile=None for the fully static setup (n_vib is forced to 1).
    """
    geometry, mu_sq = default_geometry(g_strength=g_strength, J=J, theta0=theta0)
    mobile_i = None if mobile is None else monomer_index(mobile)
    oscillators = tuple(
        OscillatorSpec(omega=omega, mass=mass, mobile=(i == mobile_i))
        for i in range(3)
    )
    if mobile_i is None:
        n_vib = 1
        j_in = 0
    return ScatteringProblem(
        geometry=geometry,
        oscillators=oscillators,
        mu_sq=mu_sq,
        J=J,
        n_sites=n_sites,
        j_in=j_in,
        n_vib=n_vib,
    )


def static_problem(**kwargs) -> ScatteringProblem:
    """Fully static (vibrationless) reference problem."""
    return default_problem(mobile=None, **kwargs)
