"""Transmission and reflection spectra for a single excitation on a 1D
tight-binding chain side-coupled to a three-monomer ring whose sites may
vibrate.

The stationary multichannel solver (`scattering`) is cross-checked by a
static transfer-matrix reference (`transfer_matrix`) and a
time-dependent wavepacket oracle (`wavepacket`); `spectra` orchestrates
energy sweeps and derived analyses, `cli` exposes everything as
subcommands.
"""

from .model import (
    ChannelSet,
    ControlUnitGeometry,
    OscillatorSpec,
    ScatteringProblem,
    channel_set,
    default_problem,
    dispersion_energy,
    site_positions,
    static_problem,
)
from .coupling import (
    CouplingTensors,
    build_coupling_tensors,
    f_matrix_element,
    g_matrix_element,
    gamma_factor,
    quadrature_matrix_element,
    taylor_coefficients,
)
from .scattering import (
    ScatteringSolution,
    assemble_and_invert,
    boundary_amplitudes,
    solve_ring_system,
    solve_scattering,
)
from .transfer_matrix import (
    StaticCU,
    effective_potential,
    static_cu,
    transfer_matrix_product,
    transmission_static,
)
from .wavepacket import (
    WavepacketSpec,
    WavepacketState,
    cu_population,
    initial_state,
    propagate,
    transmission_from_dynamics,
    von_neumann_entropy,
)
from .spectra import (
    SpectrumTable,
    channel_decomposition,
    cross_validate,
    locate_vibrational_resonance,
    static_average,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelSet",
    "ControlUnitGeometry",
    "CouplingTensors",
    "OscillatorSpec",
    "ScatteringProblem",
    "ScatteringSolution",
    "SpectrumTable",
    "StaticCU",
    "WavepacketSpec",
    "WavepacketState",
    "assemble_and_invert",
    "boundary_amplitudes",
    "build_coupling_tensors",
    "channel_decomposition",
    "channel_set",
    "cross_validate",
    "cu_population",
    "default_problem",
    "dispersion_energy",
    "effective_potential",
    "f_matrix_element",
    "g_matrix_element",
    "gamma_factor",
    "initial_state",
    "locate_vibrational_resonance",
    "propagate",
    "quadrature_matrix_element",
    "site_positions",
    "solve_ring_system",
    "solve_scattering",
    "static_average",
    "static_cu",
    "static_problem",
    "sweep",
    "taylor_coefficients",
    "transfer_matrix_product",
    "transmission_from_dynamics",
    "transmission_static",
    "von_neumann_entropy",
]
