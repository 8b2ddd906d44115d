"""Command-line entry point: config ingestion, subcommand dispatch and
deterministic output writing.

Configs are nested YAML/JSON documents with sections `problem`, `sweep`,
`tdse`, `crossval`, `average` and `outputs`; unknown keys are rejected.
Dotted-path overrides (`--set problem.n_vib=50`) are applied before
validation.  Outputs are CSV curves (17 significant digits) plus one
JSON summary per run, written atomically; reruns with an identical
effective config are byte-identical.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys

import numpy as np
import yaml

from . import spectra, wavepacket
from .coupling import build_coupling_tensors
from .errors import (
    FanovibError,
    FeatureNotFound,
    ParseError,
    PrematureExtraction,
    ValidationError,
)
from .model import ScatteringProblem, problem_from_dict
from .output import atomic_write_text, canonical_json, fmt17, header_block, sha256_of
from .transfer_matrix import static_cu, effective_potential, transmission_static
from .errors import PoleAtEigenvalue, ConvergenceError

SUBCOMMANDS = ("spectrum", "tmm", "tdse", "average", "crossval", "entropy")

_SWEEP_DEFAULTS = {"e_min": None, "e_max": None, "n_points": 400,
                   "energies": None, "eps_edge": None}
_TDSE_DEFAULTS = {"n0": -120, "sigma": 10.0, "energy": None, "k_in": None,
                  "dt": None, "t_end": None, "n_split": 10, "n_levels": None,
                  "sample_interval": None}
_CROSSVAL_DEFAULTS = {"energies": [0.5, 0.9, 1.0, 1.1, 1.5], "tolerance": 0.02,
                      "sigma": 25.0, "n0": -140, "n_split": 10, "n_levels": None}
_AVERAGE_DEFAULTS = {"nodes": 128, "rtol": 1e-6}
_OUTPUT_DEFAULTS = {"directory": "out"}


class RunConfig:
    """Validated configuration with defaults applied."""

    def __init__(self, problem: ScatteringProblem, sections: dict):
        self.problem = problem
        self.sweep = sections["sweep"]
        self.tdse = sections["tdse"]
        self.crossval = sections["crossval"]
        self.average = sections["average"]
        self.outputs = sections["outputs"]
        self.effective = dict(sections)
        self.effective["problem"] = problem.as_dict()

    @property
    def sha(self) -> str:
        return sha256_of(self.effective)

    def echo_params(self) -> dict:
        flat = {}

        def walk(prefix, obj):
            if isinstance(obj, dict):
                for k in sorted(obj):
                    walk(f"{prefix}.{k}" if prefix else k, obj[k])
            elif isinstance(obj, list):
                flat[prefix] = obj
            else:
                flat[prefix] = obj

        walk("", self.effective)
        return flat


def _merge_defaults(section_name, raw, defaults):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError(f"section {section_name!r} must be a mapping")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ValidationError(
            f"unknown key(s) in section {section_name!r}: {sorted(unknown)}"
        )
    merged = dict(defaults)
    merged.update(raw)
    return merged


def _validate_problem_dict(raw: dict) -> ScatteringProblem:
    if not isinstance(raw, dict):
        raise ValidationError("section 'problem' must be a mapping")
    known = {"J", "n_sites", "n_vib", "j_in", "mu_sq", "geometry", "oscillators"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown key(s) in section 'problem': {sorted(unknown)}")
    for required in ("mu_sq", "geometry", "oscillators"):
        if required not in raw:
            raise ValidationError(f"section 'problem' is missing {required!r}")
    geo = raw["geometry"]
    if not isinstance(geo, dict):
        raise ValidationError("'problem.geometry' must be a mapping")
    geo_unknown = set(geo) - {"d", "R", "theta0", "equilibrium_angles"}
    if geo_unknown:
        raise ValidationError(
            f"unknown key(s) in 'problem.geometry': {sorted(geo_unknown)}"
        )
    oscs = raw["oscillators"]
    if not isinstance(oscs, list) or len(oscs) != 3:
        raise ValidationError("'problem.oscillators' must list exactly 3 entries")
    for i, o in enumerate(oscs):
        extra = set(o) - {"omega", "mass", "mobile"}
        if extra:
            raise ValidationError(
                f"unknown key(s) in 'problem.oscillators[{i}]': {sorted(extra)}"
            )
    return problem_from_dict(raw)


def parse_config(path, overrides=()) -> RunConfig:
    """Load, override and validate a run configuration."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark else ""
        raise ParseError(f"cannot parse config {path}{where}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(f"config root must be a mapping, got {type(raw).__name__}")
    for dotted in overrides:
        raw = _apply_override(raw, dotted)
    known = {"problem", "sweep", "tdse", "crossval", "average", "outputs"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown top-level section(s): {sorted(unknown)}")
    if "problem" not in raw:
        raise ValidationError("config must contain a 'problem' section")
    problem = _validate_problem_dict(raw["problem"])
    sections = {
        "sweep": _merge_defaults("sweep", raw.get("sweep"), _SWEEP_DEFAULTS),
        "tdse": _merge_defaults("tdse", raw.get("tdse"), _TDSE_DEFAULTS),
        "crossval": _merge_defaults("crossval", raw.get("crossval"), _CROSSVAL_DEFAULTS),
        "average": _merge_defaults("average", raw.get("average"), _AVERAGE_DEFAULTS),
        "outputs": _merge_defaults("outputs", raw.get("outputs"), _OUTPUT_DEFAULTS),
    }
    return RunConfig(problem, sections)


def _apply_override(raw: dict, dotted: str) -> dict:
    if "=" not in dotted:
        raise ValidationError(f"override {dotted!r} must look like path.key=value")
    path, _, value = dotted.partition("=")
    keys = path.strip().split(".")
    parsed = yaml.safe_load(value)
    node = raw
    for key in keys[:-1]:
        if isinstance(node, list):
            node = node[int(key)]
        else:
            node = node.setdefault(key, {})
        if not isinstance(node, (dict, list)):
            raise ValidationError(f"override path {path!r} crosses a scalar")
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = parsed
    else:
        node[last] = parsed
    return raw


# -- output helpers -------------------------------------------------------------


def _csv_text(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def _write_outputs(config: RunConfig, outdir, name, csv_payloads, summary) -> None:
    lines = header_block(config.echo_params(), config.sha)
    for fname, (columns, rows) in csv_payloads.items():
        atomic_write_text(os.path.join(outdir, fname), _csv_text(lines, columns, rows))
    summary = {"config_sha256": config.sha, **summary}
    atomic_write_text(os.path.join(outdir, f"{name}.json"), canonical_json(summary) + "\n")


def _grid_bounds(config: RunConfig):
    s = config.sweep
    j = config.problem.J
    eps = s["eps_edge"] if s["eps_edge"] is not None else spectra.EDGE_GUARD * j
    e_min = s["e_min"] if s["e_min"] is not None else -2.0 * j + eps
    e_max = s["e_max"] if s["e_max"] is not None else 2.0 * j - eps
    return e_min, e_max, s["n_points"], s["eps_edge"]


# -- subcommand implementations ---------------------------------------------------


def _cmd_spectrum(config: RunConfig, outdir, workers):
    s = config.sweep
    if s["energies"] is not None:
        table = spectra.sweep(config.problem, np.asarray(s["energies"], dtype=float),
                              workers=workers)
    else:
        e_min, e_max, n_points, eps = _grid_bounds(config)
        table = spectra.sweep(config.problem, e_min=e_min, e_max=e_max,
                              n_points=n_points, workers=workers, eps_edge=eps)
    buf = io.StringIO()
    table.to_csv(buf, header_lines=header_block(config.echo_params(), config.sha))
    atomic_write_text(os.path.join(outdir, "spectrum.csv"), buf.getvalue())
    summary = table.summary()
    feature = None
    if config.problem.mobile_index is not None:
        try:
            feature = vars(spectra.locate_vibrational_resonance(table))
        except (FeatureNotFound, ValidationError) as exc:
            feature = {"not_found": str(exc)}
    summary["resonance_feature"] = feature
    _write_outputs(config, outdir, "spectrum", {}, summary)
    return 0


def _cmd_tmm(config: RunConfig, outdir, workers):
    e_min, e_max, n_points, _ = _grid_bounds(config)
    cu = static_cu(config.problem)
    energies = np.linspace(e_min, e_max, n_points)
    rows = []
    for e in energies:
        t = transmission_static(float(e), cu, config.problem.J)
        try:
            v = effective_potential(float(e), cu)
        except PoleAtEigenvalue:
            v = math.inf
        rows.append([fmt17(e), fmt17(t), fmt17(v)])
    summary = {
        "n_points": int(n_points),
        "t_min": fmt17(min(float(r[1]) for r in rows)),
        "h3_eigenvalues": sorted(np.linalg.eigvalsh(cu.h3).tolist()),
        "h2_eigenvalues": sorted(np.linalg.eigvalsh(cu.h2).tolist()),
        "g_static": cu.g,
    }
    _write_outputs(config, outdir, "tmm",
                   {"static_profile.csv": (["E", "T", "V_eff"], rows)}, summary)
    return 0


def _packet_spec(config: RunConfig):
    t = config.tdse
    j = config.problem.J
    if (t["energy"] is None) == (t["k_in"] is None):
        raise ValidationError("tdse section needs exactly one of 'energy' or 'k_in'")
    k_in = t["k_in"] if t["k_in"] is not None else math.acos(t["energy"] / (2.0 * j))
    return wavepacket.WavepacketSpec(n0=int(t["n0"]), sigma=float(t["sigma"]), k_in=float(k_in))


def _run_tdse(config: RunConfig, compute_entropy: bool):
    problem = config.problem
    t = config.tdse
    spec = _packet_spec(config)
    tensors = build_coupling_tensors(problem)
    state = wavepacket.initial_state(spec, problem.j_in, problem, t["n_levels"])
    ham = wavepacket.LatticeHamiltonian(problem, tensors, state.n_levels)
    dt = t["dt"] if t["dt"] is not None else ham.suggested_dt()
    v = 2.0 * problem.J * math.sin(spec.k_in)
    t_end = t["t_end"]
    if t_end is None:
        t_end = 0.95 * (abs(spec.n0) + problem.n_sites // 2 - 5.0 * spec.sigma) / v
    traj = wavepacket.propagate(
        state, dt, t_end, problem, tensors,
        sample_interval=t["sample_interval"], compute_entropy=compute_entropy,
        stop_when_clear=True, clear_margin=max(int(t["n_split"]), int(5 * spec.sigma)),
        hamiltonian=ham,
    )
    return spec, traj, dt


def _series_rows(traj, with_entropy):
    rows = []
    for i in range(len(traj.t)):
        row = [fmt17(traj.t[i]), fmt17(traj.norm[i]), fmt17(traj.energy[i]),
               fmt17(traj.cu_population[i])]
        if with_entropy:
            row.append(fmt17(traj.entropy[i]))
        rows.append(row)
    return rows


def _cmd_tdse(config: RunConfig, outdir, workers):
    spec, traj, dt = _run_tdse(config, compute_entropy=True)
    problem = config.problem
    summary = {
        "k_in": spec.k_in,
        "energy": spec.energy(problem.J),
        "packet_energy_width": spec.energy_width(problem.J),
        "dt": dt,
        "t_final": float(traj.t[-1]),
        "stopped_early": traj.stopped_early,
        "wall_contaminated": traj.wall_contaminated,
        "norm_drift": float(np.abs(traj.norm - 1.0).max()),
        "energy_drift": float(np.abs(traj.energy - traj.energy[0]).max()),
    }
    payloads = {
        "tdse_series.csv": (["t", "norm", "energy", "cu_population", "entropy"],
                            _series_rows(traj, True)),
    }
    try:
        yields = wavepacket.transmission_from_dynamics(
            traj.state, problem, int(config.tdse["n_split"])
        )
        summary["t_total"] = yields.t_total
        summary["r_total"] = yields.r_total
        summary["unresolved"] = yields.unresolved
        payloads["tdse_channels.csv"] = (
            ["j", "T_j", "R_j"],
            [[str(j), fmt17(yields.t_j[j]), fmt17(yields.r_j[j])]
             for j in range(len(yields.t_j))],
        )
    except PrematureExtraction as exc:
        summary["t_total"] = None
        summary["extraction_blocked"] = str(exc)
    _write_outputs(config, outdir, "tdse", payloads, summary)
    return 0


def _cmd_entropy(config: RunConfig, outdir, workers):
    spec, traj, dt = _run_tdse(config, compute_entropy=True)
    summary = {
        "k_in": spec.k_in,
        "energy": spec.energy(config.problem.J),
        "dt": dt,
        "t_final": float(traj.t[-1]),
        "entropy_final": float(traj.entropy[-1]),
        "entropy_max": float(np.nanmax(traj.entropy)),
        "cu_population_final": float(traj.cu_population[-1]),
    }
    payloads = {
        "entropy_series.csv": (["t", "entropy", "cu_population"],
                               [[fmt17(traj.t[i]), fmt17(traj.entropy[i]),
                                 fmt17(traj.cu_population[i])]
                                for i in range(len(traj.t))]),
    }
    _write_outputs(config, outdir, "entropy", payloads, summary)
    return 0


def _cmd_average(config: RunConfig, outdir, workers):
    problem = config.problem
    e_min, e_max, n_points, _ = _grid_bounds(config)
    nodes = int(config.average["nodes"])
    rtol = float(config.average["rtol"])
    cu = static_cu(problem)
    energies = np.linspace(e_min, e_max, n_points)
    rows = []
    failures = 0
    for e in energies:
        t_static = transmission_static(float(e), cu, problem.J)
        try:
            t_avg = spectra.static_average(problem, float(e), n_nodes=nodes, rtol=rtol)
            flag = ""
        except ConvergenceError:
            t_avg = math.nan
            flag = "not_converged"
            failures += 1
        rows.append([fmt17(e), fmt17(t_avg), fmt17(t_static), flag])
    summary = {"n_points": int(n_points), "nodes": nodes, "failures": failures}
    _write_outputs(config, outdir, "average",
                   {"static_average.csv": (["E", "T_avg", "T_static", "flag"], rows)},
                   summary)
    return 0


def _cmd_crossval(config: RunConfig, outdir, workers):
    cv = config.crossval
    report = spectra.cross_validate(
        config.problem,
        [float(e) for e in cv["energies"]],
        tolerance=float(cv["tolerance"]),
        sigma=float(cv["sigma"]),
        n0=int(cv["n0"]),
        n_split=int(cv["n_split"]),
        tdse_levels=cv["n_levels"],
    )
    _write_outputs(config, outdir, "crossval", {}, report.as_dict())
    return 0 if report.passed else 2


_HANDLERS = {
    "spectrum": _cmd_spectrum,
    "tmm": _cmd_tmm,
    "tdse": _cmd_tdse,
    "average": _cmd_average,
    "crossval": _cmd_crossval,
    "entropy": _cmd_entropy,
}


def run(subcommand: str, config: RunConfig, workers: int | None = None,
        outdir: str | None = None) -> int:
    """Execute one subcommand; returns the process exit status."""
    if subcommand not in _HANDLERS:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    if workers is None:
        workers = int(os.environ.get("FANOVIB_WORKERS", 0)) or os.cpu_count() or 1
    if outdir is None:
        outdir = config.outputs["directory"]
    return _HANDLERS[subcommand](config, outdir, workers)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fanovib",
        description="Transmission spectra for a chain coupled to a vibrating ring scatterer",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("config", help="YAML/JSON configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="PATH=VALUE",
                        help="override a config field by dotted path (repeatable)")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel worker count (default: all cores, or "
                             "FANOVIB_WORKERS)")
    parser.add_argument("--outdir", default=None, help="output directory override")
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config, args.overrides)
        return run(args.subcommand, config, args.workers, args.outdir)
    except (ValidationError, ParseError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(canonical_json(record), file=sys.stderr)
        return 2
    except FanovibError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(canonical_json(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
