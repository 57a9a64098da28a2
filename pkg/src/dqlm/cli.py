"""Config-driven experiment runner.

One JSON config document (schema below, unknown keys rejected) drives
every task; subcommand flags override config values. Each run writes CSV
artifacts (header row with column names and units, 17 significant
digits) plus a manifest JSON with the config echo, artifact hashes,
timings, and diagnostics. Files are written atomically (temp + rename)
and CSV payloads are byte-identical across reruns of the same config.

Exit codes: 0 success, 2 config/flag error, 3 infeasible or oversized
sector, 4 solver or verification failure. Errors print one JSON object
on stderr.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__
from .exact import (
    EnsembleError,
    centered_quadrupole,
    eigenoperator_set,
    ensemble_marginals,
    enumeration_marginals,
    exact_steady_state,
    link_polarization,
    similarity_transform,
    special_steady_states,
    steady_site_coefficients,
)
from .lattice import build_layout, commutator
from .liouvillian import AssemblyError, assemble, assemble_twisted, \
    diagonal_expectation, lindblad_apply, steady_residual
from .models import (
    DisorderSpec,
    JumpSpec,
    ModelError,
    ModelSpec,
    build_hamiltonian,
    build_jump_set,
)
from .numerics import (
    DENSE_CAP,
    KERNEL_TOL,
    SolverError,
    evolve,
    hausdorff_distance,
    link_z_diagonals,
    multiset_distance,
    pure_state_vector,
    site_number_diagonals,
    spectrum_of,
    steady_states,
)
from .symmetry import InfeasibleSectorError, SectorLeakageError, \
    weak_sector, _site_slots

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SECTOR = 3
EXIT_SOLVER = 4

TASKS = ("spectrum", "steady-state", "dynamics", "winding", "verify-exact",
         "profile")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_RATE = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "task": {"enum": list(TASKS)},
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["layout"],
            "properties": {
                "layout": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "L"],
                    "properties": {
                        "kind": {"enum": ["chain-obc", "chain-pbc",
                                          "hierarchical", "square-2d"]},
                        "L": {"type": "integer", "minimum": 2},
                        "Ly": {"type": "integer", "minimum": 0},
                    },
                },
                "hamiltonian": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["qlm", "hierarchical", "qlm-2d"]},
                        "J": _NUM, "J1": _NUM, "J2": _NUM,
                        "twist": {"type": "number", "minimum": 0},
                    },
                },
                "jumps": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["family"],
                        "properties": {
                            "family": {"enum": ["biased", "x-like",
                                                "dephasing", "gauge-fix",
                                                "effective-asep"]},
                            "gamma_up": _RATE, "gamma_down": _RATE,
                            "gamma_up_v": _RATE, "gamma_down_v": _RATE,
                            "gamma": _RATE, "strength": _RATE,
                            "gamma_right": _RATE, "gamma_left": _RATE,
                        },
                    },
                },
                "disorder": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "properties": {
                        "field_strength": _RATE,
                        "long_range_strength": _RATE,
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "sector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_particles": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"boundary": {"enum": ["obc", "pbc", "both"]}},
        },
        "winding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "phi_steps": {"type": "integer", "minimum": 2},
                "variant": {"enum": ["lindblad", "double-space"]},
            },
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_final": _POS,
                "t_points": {"type": "integer", "minimum": 2},
                "initial_sites": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                },
                "rtol": _POS,
                "atol": _POS,
            },
        },
        "profile": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layout": {"enum": ["chain", "hierarchical", "square-2d"]},
                "L": {"type": "integer", "minimum": 2},
                "Ly": {"type": "integer", "minimum": 2},
                "beta": _POS,
                "beta_prime": {"type": ["number", "null"],
                               "exclusiveMinimum": 0},
                "alpha": _POS,
                "alpha_prime": _POS,
                "fillings": {"type": "array", "items": _RATE,
                             "minItems": 1},
                "sector": {
                    "type": ["array", "null"],
                    "items": {"type": "integer"},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"L": {"type": "integer", "minimum": 3}},
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kernel_tol": _POS,
                "dense_cap": {"type": "integer", "minimum": 1},
                "leak_tol": _POS,
            },
        },
    },
    "required": ["task", "model"],
}


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


class JsonArgumentParser(argparse.ArgumentParser):
    """argparse variant whose usage errors match the JSON error contract."""

    def error(self, message):
        _emit_error(EXIT_CONFIG, "usage", message)
        raise SystemExit(EXIT_CONFIG)


def _emit_error(code, kind, message):
    payload = {"error": {"exit_code": code, "kind": kind,
                         "message": str(message)}}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


# -- formatting and atomic output -----------------------------------------

def format_number(x):
    """17-significant-digit decimal text, locale independent."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_csv(path, header, rows):
    lines = [",".join(header)]
    count = 0
    for row in rows:
        lines.append(",".join(format_number(cell) if not isinstance(cell, str)
                              else cell for cell in row))
        count += 1
    digest = _atomic_write(path, "\n".join(lines) + "\n")
    return digest, count


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def write_json(path, obj):
    return _atomic_write(path, json.dumps(_plain(obj), indent=2,
                                          sort_keys=True) + "\n")


class Recorder:
    """Collects artifacts, timings, and diagnostics into the manifest."""

    def __init__(self, out_dir, config):
        self.out_dir = out_dir
        self.config = config
        self.artifacts = []
        self.timings = {}
        self.diagnostics = {}

    def csv(self, name, header, rows, **meta):
        path = os.path.join(self.out_dir, name)
        digest, count = write_csv(path, header, rows)
        entry = {"file": name, "sha256": digest, "rows": count}
        entry.update(_plain(meta))
        self.artifacts.append(entry)
        return path

    def finish(self):
        overall = hashlib.sha256(
            "".join(a["sha256"] for a in self.artifacts).encode()).hexdigest()
        manifest = {
            "package_version": __version__,
            "task": self.config["task"],
            "config": self.config,
            "artifacts": self.artifacts,
            "content_hash": overall,
            "timings_s": self.timings,
            "diagnostics": self.diagnostics,
        }
        write_json(os.path.join(self.out_dir, "manifest.json"), manifest)


# -- config assembly -------------------------------------------------------

def default_config(task):
    cfg = {
        "task": task,
        "output_dir": "runs",
        "model": {
            "layout": {"kind": "chain-obc", "L": 4},
            "hamiltonian": {"kind": "qlm", "J": 1.0},
            "jumps": [{"family": "biased", "gamma_up": 2.4,
                       "gamma_down": 1.6}],
        },
        "sector": {},
        "tolerances": {},
    }
    if task == "spectrum":
        cfg["spectrum"] = {"boundary": "obc"}
        cfg["sector"] = {"n_particles": 2}
    elif task == "steady-state":
        cfg["sector"] = {"n_particles": None}
    elif task == "winding":
        cfg["model"]["layout"]["kind"] = "chain-pbc"
        cfg["winding"] = {"phi_steps": 8, "variant": "double-space"}
        cfg["sector"] = {"n_particles": 1}
    elif task == "dynamics":
        cfg["dynamics"] = {"t_final": 40.0, "t_points": 81,
                           "initial_sites": [1, 2],
                           "rtol": 1e-9, "atol": 1e-9}
    elif task == "profile":
        cfg["profile"] = {"layout": "chain", "L": 8, "beta": 3.0,
                          "alpha": 1.0, "alpha_prime": 1.0,
                          "beta_prime": None, "fillings": [0.5],
                          "sector": None, "Ly": 2}
    elif task == "verify-exact":
        cfg["verify"] = {"L": 4}
    return cfg


def _deep_merge(base, extra):
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], val)
        else:
            base[key] = val
    return base


def _set_path(cfg, dotted, value):
    node = cfg
    parts = dotted.split(".")
    for key in parts[:-1]:
        node = node.setdefault(key, {})
    node[parts[-1]] = value


def _first_jump(cfg):
    jumps = cfg["model"].setdefault("jumps", [])
    if not jumps:
        jumps.append({"family": "biased"})
    return jumps[0]


def build_config(args):
    task = args.task
    cfg = default_config(task)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_CONFIG, "config-io", str(exc))
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, "config-parse", str(exc))
        if not isinstance(file_cfg, dict):
            raise CliError(EXIT_CONFIG, "config-parse",
                           "config root must be a JSON object")
        _deep_merge(cfg, file_cfg)
    cfg["task"] = task

    simple = {
        "output_dir": "output_dir",
        "L": "model.layout.L",
        "Ly": "model.layout.Ly",
        "J": "model.hamiltonian.J",
        "J1": "model.hamiltonian.J1",
        "J2": "model.hamiltonian.J2",
        "n_particles": "sector.n_particles",
        "dense_cap": "tolerances.dense_cap",
        "kernel_tol": "tolerances.kernel_tol",
        "phi_steps": "winding.phi_steps",
        "variant": "winding.variant",
        "t_final": "dynamics.t_final",
        "t_points": "dynamics.t_points",
        "rtol": "dynamics.rtol",
        "atol": "dynamics.atol",
        "beta": "profile.beta",
        "beta_prime": "profile.beta_prime",
        "alpha": "profile.alpha",
        "alpha_prime": "profile.alpha_prime",
    }
    for attr, dotted in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(cfg, dotted, value)
    for attr in ("gamma_up", "gamma_down", "gamma_up_v", "gamma_down_v",
                 "gamma", "strength"):
        value = getattr(args, attr, None)
        if value is not None:
            _first_jump(cfg)[attr] = value
    if getattr(args, "jump_family", None) is not None:
        _first_jump(cfg)["family"] = args.jump_family
    if getattr(args, "add_gauge_fix", None) is not None:
        cfg["model"].setdefault("jumps", []).append(
            {"family": "gauge-fix", "strength": args.add_gauge_fix})
    if getattr(args, "disorder_seed", None) is not None:
        dis = cfg["model"].get("disorder") or {}
        dis["seed"] = args.disorder_seed
        cfg["model"]["disorder"] = dis
    if getattr(args, "boundary", None) is not None:
        if task == "spectrum":
            _set_path(cfg, "spectrum.boundary", args.boundary)
        elif args.boundary == "both":
            raise CliError(EXIT_CONFIG, "usage",
                           "boundary 'both' is only valid for task=spectrum")
        else:
            cfg["model"]["layout"]["kind"] = (
                "chain-obc" if args.boundary == "obc" else "chain-pbc")
    if getattr(args, "initial_sites", None) is not None:
        _set_path(cfg, "dynamics.initial_sites",
                  _parse_int_list(args.initial_sites, "initial-sites"))
    if getattr(args, "fillings", None) is not None:
        _set_path(cfg, "profile.fillings",
                  _parse_float_list(args.fillings, "fillings"))
    if getattr(args, "sector", None) is not None:
        _set_path(cfg, "profile.sector",
                  _parse_int_list(args.sector, "sector"))
    if getattr(args, "layout", None) is not None:
        if task == "profile":
            _set_path(cfg, "profile.layout", args.layout)
        else:
            kind = {"chain": "chain-obc"}.get(args.layout, args.layout)
            cfg["model"]["layout"]["kind"] = kind
            if kind == "hierarchical":
                cfg["model"]["hamiltonian"]["kind"] = "hierarchical"
            elif kind == "square-2d":
                cfg["model"]["hamiltonian"]["kind"] = "qlm-2d"
    if task == "verify-exact" and getattr(args, "L", None) is not None:
        _set_path(cfg, "verify.L", args.L)
    if task == "profile" and getattr(args, "L", None) is not None:
        _set_path(cfg, "profile.L", args.L)
    if task == "profile" and getattr(args, "Ly", None) is not None:
        _set_path(cfg, "profile.Ly", args.Ly)

    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(EXIT_CONFIG, "schema", exc.message)
    return cfg


def _parse_int_list(text, name):
    try:
        return [int(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError:
        raise CliError(EXIT_CONFIG, "usage",
                       f"--{name} expects comma-separated integers")


def _parse_float_list(text, name):
    try:
        return [float(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError:
        raise CliError(EXIT_CONFIG, "usage",
                       f"--{name} expects comma-separated numbers")


# -- model construction ----------------------------------------------------

def model_from_config(cfg, kind_override=None):
    m = cfg["model"]
    lay = dict(m["layout"])
    if kind_override is not None:
        lay["kind"] = kind_override
    ham = m.get("hamiltonian", {})
    ham_kind = ham.get("kind", "qlm")
    if lay["kind"] == "hierarchical" and ham_kind == "qlm":
        ham_kind = "hierarchical"
    if lay["kind"] == "square-2d" and ham_kind == "qlm":
        ham_kind = "qlm-2d"
    jumps = tuple(JumpSpec(**j) for j in m.get("jumps", []))
    dis = m.get("disorder")
    disorder = DisorderSpec(**dis) if dis else None
    layout = build_layout(lay["kind"], lay["L"], lay.get("Ly", 0))
    return ModelSpec(layout=layout, hamiltonian=ham_kind,
                     J=ham.get("J", 1.0), J1=ham.get("J1", 1.0),
                     J2=ham.get("J2", 1.0), twist=ham.get("twist", 0.0),
                     jumps=jumps, disorder=disorder)


def _dense_cap(cfg):
    return cfg.get("tolerances", {}).get("dense_cap", DENSE_CAP)


def _kernel_tol(cfg):
    return cfg.get("tolerances", {}).get("kernel_tol", KERNEL_TOL)


def _weak_sector_checked(layout, n_particles, cap):
    dsec = weak_sector(layout, n_particles)
    if dsec.dim == 0:
        raise CliError(EXIT_SECTOR, "empty-sector",
                       f"sector N={n_particles} holds no states")
    if cap is not None and dsec.dim > cap:
        raise CliError(
            EXIT_SECTOR, "sector-too-large",
            f"sector dimension {dsec.dim} exceeds the dense cap {cap}; "
            "reduce L or pick a smaller particle number")
    return dsec


# -- task runners ----------------------------------------------------------

SPECTRUM_HEADER = ("re_lambda[J]", "im_lambda[J]")


def run_spectrum(cfg, rec):
    boundary = cfg.get("spectrum", {}).get("boundary", "obc")
    n_part = cfg.get("sector", {}).get("n_particles")
    cap = _dense_cap(cfg)
    kinds = {"obc": ["chain-obc"], "pbc": ["chain-pbc"],
             "both": ["chain-obc", "chain-pbc"]}[boundary]
    base_kind = cfg["model"]["layout"]["kind"]
    if base_kind not in ("chain-obc", "chain-pbc"):
        kinds = [None]  # hierarchical / 2d: use the layout as configured
    for kind in kinds:
        spec = model_from_config(cfg, kind_override=kind)
        tag = {"chain-obc": "obc", "chain-pbc": "pbc"}.get(
            spec.layout.kind, spec.layout.kind)
        t0 = time.perf_counter()
        dsec = _weak_sector_checked(spec.layout, n_part, cap)
        superop = assemble(spec, sector=dsec)
        spectrum = spectrum_of(superop, cap=cap)
        rec.timings[f"spectrum_{tag}"] = time.perf_counter() - t0
        rec.csv(f"spectrum_{tag}.csv", SPECTRUM_HEADER,
                ((v.real, v.imag) for v in spectrum.eigenvalues),
                sector_dim=dsec.dim)
        rec.diagnostics[f"{tag}_dim"] = dsec.dim
        rec.diagnostics[f"{tag}_kernel"] = len(
            spectrum.kernel_indices(_kernel_tol(cfg)))
        rec.diagnostics[f"{tag}_max_real"] = spectrum.max_real()


def run_steady_state(cfg, rec):
    n_part = cfg.get("sector", {}).get("n_particles")
    cap = _dense_cap(cfg)
    spec = model_from_config(cfg)
    t0 = time.perf_counter()
    dsec = _weak_sector_checked(spec.layout, n_part, cap)
    superop = assemble(spec, sector=dsec)
    states = steady_states(superop, dsec, tol=_kernel_tol(cfg), cap=cap)
    rec.timings["kernel"] = time.perf_counter() - t0
    ham, jumps = build_hamiltonian(spec), build_jump_set(spec)
    site_diag = site_number_diagonals(spec.layout)
    link_diag = link_z_diagonals(spec.layout)
    rows = []
    residuals = []
    for idx, rho in enumerate(states):
        diag = np.asarray(rho.diagonal()).real
        for pos, arr in enumerate(site_diag, start=1):
            rows.append((idx, "site_density", pos, float((diag * arr).sum())))
        for pos, arr in enumerate(link_diag, start=1):
            rows.append((idx, "link_sz", pos, float((diag * arr).sum())))
        residuals.append(steady_residual(ham, jumps, rho))
    rec.csv("steady_state_profiles.csv",
            ("state[index]", "kind[name]", "position[index]", "value[1]"),
            rows)
    rec.diagnostics["kernel_dim"] = len(states)
    rec.diagnostics["max_residual"] = float(max(residuals))
    rec.diagnostics["sector_dim"] = dsec.dim


def run_dynamics(cfg, rec):
    spec = model_from_config(cfg)
    layout = spec.layout
    dyn = cfg.get("dynamics", {})
    sites = dyn.get("initial_sites", [1, 2])
    if any(s < 1 or s > layout.L for s in sites) or len(set(sites)) != len(sites):
        raise CliError(EXIT_CONFIG, "usage",
                       f"initial sites must be distinct values in 1..{layout.L}")
    n_part = cfg.get("sector", {}).get("n_particles")
    if n_part is None:
        n_part = len(sites)
    if n_part != len(sites):
        raise CliError(EXIT_CONFIG, "usage",
                       "sector.n_particles must match the initial occupation")
    dsec = _weak_sector_checked(layout, n_part, cap=None)
    t0 = time.perf_counter()
    superop = assemble(spec, sector=dsec)
    rec.timings["assemble"] = time.perf_counter() - t0

    slots = _site_slots(layout)
    state = 0
    for s in sites:
        state |= 1 << slots[s - 1]
    v0 = pure_state_vector(state, dsec)
    times = np.linspace(0.0, dyn.get("t_final", 40.0),
                        dyn.get("t_points", 81))
    site_diag = site_number_diagonals(layout)
    obs = {f"N_{n}": (lambda v, a=arr: diagonal_expectation(v, dsec, a))
           for n, arr in enumerate(site_diag, start=1)}
    t0 = time.perf_counter()
    try:
        series = evolve(superop.matrix, v0, times, observables=obs,
                        dsec=dsec, rtol=dyn.get("rtol", 1e-9),
                        atol=dyn.get("atol", 1e-9))
    except SolverError as exc:
        raise CliError(EXIT_SOLVER, "integration", str(exc))
    rec.timings["evolve"] = time.perf_counter() - t0

    header = ["time[1/J]"] + [f"N_{n}[1]" for n in range(1, len(site_diag) + 1)]
    header.append("trace_defect[1]")
    rows = []
    for j, t in enumerate(times):
        row = [t]
        row += [series.observables[f"N_{n}"][j].real
                for n in range(1, len(site_diag) + 1)]
        row.append(series.trace_defect[j])
        rows.append(tuple(row))
    rec.csv("dynamics.csv", tuple(header), rows, sector_dim=dsec.dim)
    rec.diagnostics["sector_dim"] = dsec.dim
    rec.diagnostics["max_trace_defect"] = float(series.trace_defect.max())
    rec.diagnostics["final_profile"] = [
        float(series.observables[f"N_{n}"][-1].real)
        for n in range(1, len(site_diag) + 1)]


def run_winding(cfg, rec):
    spec = model_from_config(cfg, kind_override="chain-pbc")
    wind = cfg.get("winding", {})
    steps = wind.get("phi_steps", 8)
    variant = wind.get("variant", "double-space")
    n_part = cfg.get("sector", {}).get("n_particles")
    cap = _dense_cap(cfg)
    dsec = _weak_sector_checked(spec.layout, n_part, cap)
    phis = [2.0 * np.pi * j / steps for j in range(steps)]
    spectra = []
    summary = []
    for j, phi in enumerate(phis):
        t0 = time.perf_counter()
        try:
            superop = assemble_twisted(spec, phi, variant, sector=dsec)
        except AssemblyError as exc:
            raise CliError(EXIT_CONFIG, "usage", str(exc))
        spectrum = spectrum_of(superop, cap=cap)
        rec.timings[f"phi_{j:03d}"] = time.perf_counter() - t0
        spectra.append(spectrum)
        rec.csv(f"spectrum_phi_{j:03d}.csv", SPECTRUM_HEADER,
                ((v.real, v.imag) for v in spectrum.eigenvalues),
                phi=phi, variant=variant)
        summary.append((phi, spectrum.max_real(),
                        len(spectrum.kernel_indices(_kernel_tol(cfg)))))
    rec.csv("winding_summary.csv",
            ("phi[rad]", "max_re_lambda[J]", "kernel_count[1]"), summary)
    rec.diagnostics["variant"] = variant
    rec.diagnostics["sector_dim"] = dsec.dim
    rec.diagnostics["max_drift_from_phi0"] = float(max(
        multiset_distance(spectra[0].eigenvalues, s.eigenvalues)
        for s in spectra))
    rec.diagnostics["max_hausdorff_from_phi0"] = float(max(
        hausdorff_distance(spectra[0].eigenvalues, s.eigenvalues)
        for s in spectra))


def _profile_layout(prof):
    kind = prof.get("layout", "chain")
    if kind == "chain":
        return build_layout("chain-obc", prof.get("L", 8))
    if kind == "hierarchical":
        return build_layout("hierarchical", prof.get("L", 8))
    return build_layout("square-2d", prof.get("L", 2), prof.get("Ly", 2))


def _filling_to_count(f, n_sites):
    return int(round(f * n_sites)) if 0 < f < 1 else int(round(f))


def run_profile(cfg, rec):
    prof = cfg.get("profile", {})
    layout = _profile_layout(prof)
    beta = prof.get("beta", 3.0)
    alpha = prof.get("alpha", 1.0)
    alpha_prime = prof.get("alpha_prime", 1.0)
    beta_prime = prof.get("beta_prime")
    t0 = time.perf_counter()
    if layout.kind == "chain-obc":
        fillings = prof.get("fillings", [0.5])
        counts = [_filling_to_count(f, layout.L) for f in fillings]
        if any(not 0 <= n <= layout.L for n in counts):
            raise CliError(EXIT_SECTOR, "empty-sector",
                           f"fillings {fillings} leave 0..{layout.L}")
        margs = []
        for n in counts:
            ens = exact_steady_state(layout, beta, alpha, n_particles=n)
            margs.append(ensemble_marginals(ens))
        site_rows = [(n,) + tuple(m["site_density"][n - 1] for m in margs)
                     for n in range(1, layout.L + 1)]
        link_rows = [(m,) + tuple(mm["link_sz"][m - 1] for mm in margs)
                     for m in range(1, layout.L)]
        site_head = ("n[site]",) + tuple(f"density_N{n}[1]" for n in counts)
        link_head = ("m[link]",) + tuple(f"link_sz_N{n}[1]" for n in counts)
        rec.csv("profile_sites.csv", site_head, site_rows, beta=beta)
        rec.csv("profile_links.csv", link_head, link_rows, beta=beta)
        rec.diagnostics["link_sz_expected"] = link_polarization(beta)
        rec.diagnostics["fillings"] = counts
    elif layout.kind == "hierarchical":
        sector = prof.get("sector")
        charges = tuple(sector) if sector is not None else None
        ens = exact_steady_state(layout, beta, alpha,
                                 alpha_prime=alpha_prime,
                                 hier_charges=charges)
        marg = ensemble_marginals(ens)
        rec.csv("profile_top.csv", ("n[site]", "sigma_z[1]", "density[1]"),
                [(n, marg["top_sz"][n - 1], marg["top_density"][n - 1])
                 for n in range(1, layout.L + 1)])
        rec.csv("profile_mid.csv", ("m[link]", "tau_z[1]"),
                [(m, marg["mid_sz"][m - 1]) for m in range(1, layout.L)])
        rec.csv("profile_bot.csv", ("j[link]", "s_z[1]"),
                [(j, marg["bot_sz"][j - 2]) for j in range(2, layout.L)])
        rec.diagnostics["top_quadrupole"] = centered_quadrupole(marg["top_sz"])
        rec.diagnostics["mid_sign_changes"] = int(
            np.count_nonzero(np.diff(np.sign(marg["mid_sz"]))))
        rec.diagnostics["sector"] = list(charges) if charges else None
    else:
        if beta_prime is None:
            raise CliError(EXIT_CONFIG, "usage",
                           "square-2d profile needs beta_prime")
        fillings = prof.get("fillings")
        n_sites = layout.L * layout.Ly
        n_part = (_filling_to_count(fillings[0], n_sites)
                  if fillings else None)
        ens = exact_steady_state(layout, beta, alpha, beta_prime=beta_prime,
                                 n_particles=n_part)
        marg = ensemble_marginals(ens)
        rows = [(x, y, marg["site_density"][y - 1][x - 1])
                for y in range(1, layout.Ly + 1)
                for x in range(1, layout.L + 1)]
        rec.csv("profile_sites.csv", ("x[col]", "y[row]", "density[1]"), rows)
        hrows = [(x, y, marg["hlink_sz"][y - 1][x - 1])
                 for y in range(1, layout.Ly + 1) for x in range(1, layout.L)]
        vrows = [(x, y, marg["vlink_sz"][y - 1][x - 1])
                 for y in range(1, layout.Ly) for x in range(1, layout.L + 1)]
        rec.csv("profile_hlinks.csv", ("x[col]", "y[row]", "s_z[1]"), hrows)
        rec.csv("profile_vlinks.csv", ("x[col]", "y[row]", "s_z[1]"), vrows)
        rec.diagnostics["n_particles"] = n_part
    rec.timings["profile"] = time.perf_counter() - t0


def _verify_rows(L):
    """The residual battery behind verify-exact, as (name, value, bound)."""
    rows = []
    chain = build_layout("chain-obc", L)
    for gu, gd in ((2.4, 1.6), (3.0, 1.0)):
        beta = gu / gd
        rho = exact_steady_state(chain, beta).materialize()
        for label, extra, dis in (
                ("plain", (), None),
                ("gauge-fix", (JumpSpec(family="gauge-fix", strength=1.0),),
                 None),
                ("disorder", (), DisorderSpec(seed=1))):
            spec = ModelSpec(layout=chain,
                             jumps=(JumpSpec(family="biased", gamma_up=gu,
                                             gamma_down=gd),) + extra,
                             disorder=dis)
            res = steady_residual(build_hamiltonian(spec),
                                  build_jump_set(spec), rho)
            rows.append((f"chain_L{L}_b{beta:g}_{label}", res, 1e-10))

    gu, gd = 2.4, 1.6
    spec = ModelSpec(layout=chain,
                     jumps=(JumpSpec(family="biased", gamma_up=gu,
                                     gamma_down=gd),))
    ham, jumps = build_hamiltonian(spec), build_jump_set(spec)
    worst = 0.0
    for bits, ens, lam in eigenoperator_set(chain, gu, gd):
        op = ens.materialize(normalize="frobenius")
        image = lindblad_apply(ham, jumps, op)
        worst = max(worst, (image - op.scale(lam)).frobenius_norm())
    rows.append((f"eigenoperators_L{L}", worst, 1e-10))

    spec_x = ModelSpec(layout=chain,
                       jumps=(JumpSpec(family="x-like", gamma_up=0.7,
                                       gamma_down=0.7),))
    ham_x, jumps_x = build_hamiltonian(spec_x), build_jump_set(spec_x)
    worst = max(steady_residual(ham_x, jumps_x, ens.materialize())
                for ens in special_steady_states(chain, "x-like-symmetric"))
    rows.append((f"xlike_identity_L{L}", worst, 1e-12))

    coeffs = steady_site_coefficients(chain, 3.0)
    t_op = similarity_transform(chain, coeffs, scale=-0.5)
    rel = commutator(ham, t_op).frobenius_norm() / (
        ham.frobenius_norm() * t_op.frobenius_norm())
    rows.append((f"similarity_commutes_L{L}", rel, 1e-12))

    hier = build_layout("hierarchical", L)
    spec_h = ModelSpec(layout=hier, hamiltonian="hierarchical", J1=1.0,
                       J2=0.8, jumps=(JumpSpec(family="biased", gamma_up=3.0,
                                               gamma_down=1.0),))
    rho_h = exact_steady_state(hier, 3.0).materialize()
    res_h = steady_residual(build_hamiltonian(spec_h), build_jump_set(spec_h),
                            rho_h)
    rows.append((f"hierarchical_L{L}", res_h, 1e-10))

    grid = build_layout("square-2d", 2, Ly=2)
    spec_g = ModelSpec(layout=grid, hamiltonian="qlm-2d", J1=1.0, J2=0.7,
                       jumps=(JumpSpec(family="biased", gamma_up=3.0,
                                       gamma_down=1.0, gamma_up_v=2.0,
                                       gamma_down_v=1.0),))
    rho_g = exact_steady_state(grid, 3.0, beta_prime=2.0).materialize()
    res_g = steady_residual(build_hamiltonian(spec_g), build_jump_set(spec_g),
                            rho_g)
    rows.append(("grid_2x2", res_g, 1e-10))

    enum_l = min(L, 5)
    small = build_layout("chain-obc", enum_l)
    ens = exact_steady_state(small, 3.0, alpha=1.3, n_particles=2)
    dp = ensemble_marginals(ens)
    enum = enumeration_marginals(ens)
    gap = max(np.abs(dp[k] - enum[k]).max() for k in dp)
    rows.append((f"dp_vs_enumeration_L{enum_l}", gap, 1e-12))
    return rows


def run_verify_exact(cfg, rec):
    L = cfg.get("verify", {}).get("L", 4)
    t0 = time.perf_counter()
    rows = _verify_rows(L)
    rec.timings["battery"] = time.perf_counter() - t0
    table = [(name, value, bound, bool(value < bound))
             for name, value, bound in rows]
    rec.csv("verify_exact.csv",
            ("check[name]", "value[1]", "threshold[1]", "passed[bool]"),
            table)
    width = max(len(name) for name, *_ in table)
    for name, value, bound, ok in table:
        print(f"{name:<{width}}  {value:12.3e}  < {bound:g}  "
              f"{'PASS' if ok else 'FAIL'}")
    failed = [name for name, _, _, ok in table if not ok]
    rec.diagnostics["checks"] = len(table)
    rec.diagnostics["failed"] = failed
    if failed:
        rec.finish()
        raise CliError(EXIT_SOLVER, "verification",
                       f"{len(failed)} checks failed: {', '.join(failed)}")


RUNNERS = {
    "spectrum": run_spectrum,
    "steady-state": run_steady_state,
    "dynamics": run_dynamics,
    "winding": run_winding,
    "verify-exact": run_verify_exact,
    "profile": run_profile,
}


# -- argument parsing ------------------------------------------------------

def build_parser():
    parser = JsonArgumentParser(prog="dqlm",
                                description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="task", required=True,
                                parser_class=JsonArgumentParser)

    def common(p, layout_flag=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--L", type=int, dest="L")
        p.add_argument("--Ly", type=int, dest="Ly")
        if layout_flag:
            p.add_argument("--layout",
                           choices=["chain", "chain-obc", "chain-pbc",
                                    "hierarchical", "square-2d"])
        p.add_argument("--J", type=float)
        p.add_argument("--J1", type=float)
        p.add_argument("--J2", type=float)
        p.add_argument("--jump-family",
                       choices=["biased", "x-like", "dephasing", "gauge-fix",
                                "effective-asep"])
        p.add_argument("--gamma-up", type=float, dest="gamma_up")
        p.add_argument("--gamma-down", type=float, dest="gamma_down")
        p.add_argument("--gamma-up-v", type=float, dest="gamma_up_v")
        p.add_argument("--gamma-down-v", type=float, dest="gamma_down_v")
        p.add_argument("--gamma", type=float)
        p.add_argument("--strength", type=float)
        p.add_argument("--add-gauge-fix", type=float, dest="add_gauge_fix",
                       metavar="STRENGTH")
        p.add_argument("--disorder-seed", type=int, dest="disorder_seed")
        p.add_argument("--n-particles", type=int, dest="n_particles")
        p.add_argument("--dense-cap", type=int, dest="dense_cap")
        p.add_argument("--kernel-tol", type=float, dest="kernel_tol")

    p_spec = sub.add_parser("spectrum", help="sector-projected spectra")
    common(p_spec)
    p_spec.add_argument("--boundary", choices=["obc", "pbc", "both"])

    p_ss = sub.add_parser("steady-state", help="kernel states and profiles")
    common(p_ss)
    p_ss.add_argument("--boundary", choices=["obc", "pbc"])

    p_dyn = sub.add_parser("dynamics", help="quench time evolution")
    common(p_dyn)
    p_dyn.add_argument("--boundary", choices=["obc", "pbc"])
    p_dyn.add_argument("--t-final", type=float, dest="t_final")
    p_dyn.add_argument("--t-points", type=int, dest="t_points")
    p_dyn.add_argument("--initial-sites", dest="initial_sites",
                       metavar="N1,N2,...")
    p_dyn.add_argument("--rtol", type=float)
    p_dyn.add_argument("--atol", type=float)

    p_wind = sub.add_parser("winding", help="twisted-boundary phase scans")
    common(p_wind, layout_flag=False)
    p_wind.add_argument("--phi-steps", type=int, dest="phi_steps")
    p_wind.add_argument("--variant", choices=["lindblad", "double-space"])

    p_ver = sub.add_parser("verify-exact",
                           help="run the analytic residual battery")
    p_ver.add_argument("--config", help="JSON config file")
    p_ver.add_argument("--output-dir", dest="output_dir")
    p_ver.add_argument("--L", type=int, dest="L")

    p_prof = sub.add_parser("profile", help="analytic layer profiles")
    p_prof.add_argument("--config", help="JSON config file")
    p_prof.add_argument("--output-dir", dest="output_dir")
    p_prof.add_argument("--layout",
                        choices=["chain", "hierarchical", "square-2d"])
    p_prof.add_argument("--L", type=int, dest="L")
    p_prof.add_argument("--Ly", type=int, dest="Ly")
    p_prof.add_argument("--beta", type=float)
    p_prof.add_argument("--beta-prime", type=float, dest="beta_prime")
    p_prof.add_argument("--alpha", type=float)
    p_prof.add_argument("--alpha-prime", type=float, dest="alpha_prime")
    p_prof.add_argument("--fillings", metavar="F1,F2,...")
    p_prof.add_argument("--sector", metavar="N2,D2")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = build_config(args)
        out_dir = cfg.get("output_dir", "runs")
        os.makedirs(out_dir, exist_ok=True)
        rec = Recorder(out_dir, cfg)
        RUNNERS[cfg["task"]](cfg, rec)
        rec.finish()
        return EXIT_OK
    except CliError as exc:
        _emit_error(exc.code, exc.kind, str(exc))
        return exc.code
    except (ModelError, EnsembleError) as exc:
        kind = "model"
        code = EXIT_CONFIG
        if "empty" in str(exc) or "vanishing" in str(exc):
            kind, code = "empty-sector", EXIT_SECTOR
        _emit_error(code, kind, str(exc))
        return code
    except InfeasibleSectorError as exc:
        _emit_error(EXIT_SECTOR, "infeasible-sector", str(exc))
        return EXIT_SECTOR
    except (SolverError, AssemblyError, SectorLeakageError,
            np.linalg.LinAlgError) as exc:
        _emit_error(EXIT_SOLVER, "solver", str(exc))
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
