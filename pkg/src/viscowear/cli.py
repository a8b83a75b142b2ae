"""Batch front end: parse a scenario config, run simulations and studies.

Configurations are single JSON documents with a strict schema: unknown
keys are fatal and error messages name the offending key (and its line in
the file when it can be located).  Outputs are CSV (comma separated,
header row, 17-significant-digit floats), legacy ASCII VTK snapshots and
a plain-text condition report.

Usage:
    viscowear run <config.json> [--out DIR] [--single-thread]
    viscowear study <config.json> --type time|space --levels K
                    [--no-gate] [--single-thread] [--out DIR]

The environment variable VISCOWEAR_OUT overrides the output directory.
Everything runs sequentially, so identical configs give byte-identical
CSV outputs; --single-thread is accepted as an explicit statement of that
contract.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    Scenario,
    cauchy_convergence_study,
    check_conditions,
    energy_diagnostics,
    estimate_constants,
    run_scenario,
    spatial_convergence_study,
    write_rate_tables_csv,
)
from .fem import MaterialParams, assemble_load
from .friction import FrictionData
from .mesh import SIDES
from .timestepper import (
    ConstantField,
    SmoothBumpField,
    ZeroField,
    write_trajectory_csv,
    write_vtk_series,
    write_wear_csv,
)
from .vi_step import ConvergenceError, SolverOptions

__all__ = ["ScenarioConfig", "load_config", "dump_config", "cmd_run", "cmd_study", "main"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


_SCHEMA = {
    "mesh": {"nx", "ny", "lx", "ly", "tags"},
    "material": {"mu_elastic", "lambda_elastic", "mu_viscous", "lambda_viscous", "rho"},
    "friction": {"beta", "mu", "v_star", "eps_reg"},
    "loads": {"f0", "g"},
    "time": {"T", "N"},
    "initial": {"u0", "v0"},
    "solver": {"tol_rel", "newton_tol_rel", "max_outer", "max_newton", "eps_reg_final"},
    "output": {"dir", "stride", "formats"},
}
_REQUIRED_BLOCKS = ("mesh", "material", "friction", "loads", "time")
_PROFILE_KEYS = {
    "constant": {"type", "value"},
    "linear": {"type", "value", "slope"},
    "sinusoidal": {"type", "amplitude", "omega", "phase"},
    "zero": {"type"},
}
_FIELD_KEYS = {
    "zero": {"type"},
    "constant": {"type", "value"},
    "smooth-bump": {"type", "amplitude", "modes"},
}


@dataclass
class ScenarioConfig:
    """Parsed and validated scenario configuration."""

    mesh: dict
    material: dict
    friction: dict
    loads: dict
    time: dict
    initial: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mesh": self.mesh, "material": self.material, "friction": self.friction,
            "loads": self.loads, "time": self.time, "initial": self.initial,
            "solver": self.solver, "output": self.output,
        }


def _key_line(text: str, key: str) -> str:
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return f" (line {i})"
    return ""


def _check_keys(block: dict, allowed: set, path: str, text: str):
    if not isinstance(block, dict):
        raise ConfigError(f"config block '{path}' must be an object{_key_line(text, path)}")
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'{_key_line(text, key)}")


def load_config(path) -> ScenarioConfig:
    """Read and strictly validate a JSON scenario config."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key '{key}'{_key_line(text, key)}")
    for block in _REQUIRED_BLOCKS:
        if block not in raw:
            raise ConfigError(f"missing required config block '{block}'")
    for name, allowed in _SCHEMA.items():
        if name in raw:
            _check_keys(raw[name], allowed, name, text)
    for side in raw["mesh"].get("tags", {}):
        if side not in SIDES:
            raise ConfigError(f"unknown key 'mesh.tags.{side}'{_key_line(text, side)}")
    for slot in raw["loads"]:
        prof = raw["loads"][slot]
        _check_keys(prof, {"type"} | set().union(*_PROFILE_KEYS.values()), f"loads.{slot}", text)
        ptype = prof.get("type")
        if ptype not in _PROFILE_KEYS:
            raise ConfigError(f"loads.{slot}.type must be one of {sorted(_PROFILE_KEYS)}, got {ptype!r}")
        _check_keys(prof, _PROFILE_KEYS[ptype], f"loads.{slot}", text)
    for slot, spec_keys in (("u0", _FIELD_KEYS), ("v0", _FIELD_KEYS)):
        fielddef = raw.get("initial", {}).get(slot)
        if fielddef is None:
            continue
        ftype = fielddef.get("type")
        if ftype not in spec_keys:
            raise ConfigError(f"initial.{slot}.type must be one of {sorted(spec_keys)}, got {ftype!r}")
        _check_keys(fielddef, spec_keys[ftype], f"initial.{slot}", text)
    cfg = ScenarioConfig(
        mesh=raw["mesh"], material=raw["material"], friction=raw["friction"],
        loads=raw["loads"], time=raw["time"],
        initial=raw.get("initial", {}), solver=raw.get("solver", {}),
        output=raw.get("output", {}),
    )
    build_scenario(cfg)  # full physical validation with named errors
    return cfg


def dump_config(cfg: ScenarioConfig, path):
    """Write a config that re-parses to an identical scenario."""
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _profile(prof: dict, name: str):
    """Closed-form time profile -> callable t -> 2-vector (or None)."""
    ptype = prof["type"]
    if ptype == "zero":
        return None
    if ptype == "constant":
        value = np.asarray(prof["value"], dtype=float)
        return lambda t: value
    if ptype == "linear":
        value = np.asarray(prof["value"], dtype=float)
        slope = np.asarray(prof["slope"], dtype=float)
        return lambda t: value + t * slope
    if ptype == "sinusoidal":
        amp = np.asarray(prof["amplitude"], dtype=float)
        omega = float(prof["omega"])
        phase = float(prof.get("phase", 0.0))
        return lambda t: amp * math.sin(omega * t + phase)
    raise ConfigError(f"{name}: unknown profile type {ptype!r}")


def _initial_field(fielddef, lx, ly, name):
    if fielddef is None or fielddef["type"] == "zero":
        return None
    if fielddef["type"] == "constant":
        return ConstantField(amplitude=tuple(fielddef["value"]))
    if fielddef["type"] == "smooth-bump":
        return SmoothBumpField(amplitude=tuple(fielddef["amplitude"]), lx=lx, ly=ly,
                               modes=tuple(fielddef.get("modes", (1, 1))))
    raise ConfigError(f"{name}: unknown initial field type")


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Turn a validated config into a runnable Scenario."""
    m = cfg.mesh
    try:
        nx, ny = int(m["nx"]), int(m["ny"])
        lx, ly = float(m["lx"]), float(m["ly"])
        tags = dict(m["tags"])
    except KeyError as err:
        raise ConfigError(f"mesh block is missing key {err}") from None
    mat = cfg.material
    try:
        params = MaterialParams(
            mu_elastic=float(mat["mu_elastic"]),
            lam_elastic=float(mat.get("lambda_elastic", 0.0)),
            mu_viscous=float(mat["mu_viscous"]),
            lam_viscous=float(mat.get("lambda_viscous", 0.0)),
            rho=float(mat.get("rho", 1.0)),
        )
    except (KeyError, ValueError) as err:
        raise ConfigError(f"material block: {err}") from None
    fr = cfg.friction
    try:
        friction = FrictionData(
            beta=float(fr["beta"]), mu=float(fr["mu"]),
            v_star=np.asarray(fr.get("v_star", (0.0, 0.0)), dtype=float),
            eps_reg=float(fr.get("eps_reg", 1e-6)),
        )
    except (KeyError, ValueError) as err:
        raise ConfigError(f"friction block: {err}") from None
    f0_prof = _profile(cfg.loads["f0"], "loads.f0") if "f0" in cfg.loads else None
    g_prof = _profile(cfg.loads["g"], "loads.g") if "g" in cfg.loads else None
    if f0_prof is None and g_prof is None:
        load_fields = None
    else:
        def load_fields(t: float):
            f0 = None if f0_prof is None else f0_prof(t)
            g = None if g_prof is None else g_prof(t)
            return f0, g
    try:
        T, N = float(cfg.time["T"]), int(cfg.time["N"])
    except (KeyError, ValueError) as err:
        raise ConfigError(f"time block: {err}") from None
    u0 = _initial_field(cfg.initial.get("u0"), lx, ly, "initial.u0")
    v0 = _initial_field(cfg.initial.get("v0"), lx, ly, "initial.v0")
    sol = cfg.solver
    options = SolverOptions(
        tol_rel=float(sol.get("tol_rel", 1e-9)),
        newton_tol_rel=float(sol.get("newton_tol_rel", 1e-11)),
        max_outer=int(sol.get("max_outer", 200)),
        max_newton=int(sol.get("max_newton", 200)),
        eps_reg_final=(None if sol.get("eps_reg_final") is None else float(sol["eps_reg_final"])),
    )
    try:
        return Scenario(nx=nx, ny=ny, lx=lx, ly=ly, tags=tags, params=params,
                        friction=friction, load_fields=load_fields, T=T, N=N,
                        u0=u0, v0=v0, options=options)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _out_dir(cfg: ScenarioConfig, override) -> str:
    out = override or os.environ.get("VISCOWEAR_OUT") or cfg.output.get("dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_run(config_path, out: str | None = None) -> int:
    """Estimate constants, check conditions, run, write all artifacts."""
    try:
        cfg = load_config(config_path)
        scn = build_scenario(cfg)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out_dir = _out_dir(cfg, out)
    try:
        traj = run_scenario(scn)
    except ConvergenceError as err:
        print(f"error: solver failed: {err}", file=sys.stderr)
        return 1
    system = traj.system
    consts = estimate_constants(system, scn.friction)
    report = check_conditions(consts, scn.T / scn.N)
    with open(os.path.join(out_dir, "conditions.txt"), "w") as fh:
        fh.write(report.format_text() + "\n")
    if not report.all_pass:
        print("warning: some solvability conditions FAIL (see conditions.txt); "
              "results may not be certified", file=sys.stderr)
    load_at = None
    if scn.load_fields is not None:
        load_at = lambda t: assemble_load(system.mesh, system.dofmap, *scn.load_fields(t))
    energy = energy_diagnostics(traj, system, load_at)
    stride = int(cfg.output.get("stride", 1))
    formats = cfg.output.get("formats", ["csv", "vtk"])
    if "csv" in formats:
        write_trajectory_csv(traj, os.path.join(out_dir, "trajectory.csv"))
        write_wear_csv(traj, os.path.join(out_dir, "wear.csv"), stride=stride)
        _write_energy_csv(energy, os.path.join(out_dir, "energy.csv"))
    if "vtk" in formats:
        write_vtk_series(traj, out_dir, stride=stride)
    print(f"run complete: N={scn.N} steps, outputs in {out_dir}")
    for check in report.checks:
        print(f"  condition {check.name}: {check.verdict} (margin {check.margin:.3g})")
    return 0


def _write_energy_csv(energy, path):
    header = "k,kinetic,elastic,viscous_increment,friction_increment,work_increment,balance_residual"
    lines = [header]
    for k in range(energy.kinetic.size):
        lines.append(",".join(f"{float(v):.17g}" for v in (
            k, energy.kinetic[k], energy.elastic[k], energy.viscous_increment[k],
            energy.friction_increment[k], energy.work_increment[k],
            energy.balance_residual[k])))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_study(config_path, study_type: str, levels: int, gate: bool = True,
              out: str | None = None) -> int:
    """Run a time or space refinement study and gate on observed orders."""
    if levels < 3:
        print("error: --levels must be >= 3", file=sys.stderr)
        return 2
    try:
        cfg = load_config(config_path)
        scn = build_scenario(cfg)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out_dir = _out_dir(cfg, out)
    frictionless = (not callable(scn.friction.beta)) and float(scn.friction.beta) == 0.0
    try:
        if study_type == "time":
            N_list = [scn.N * 2 ** i for i in range(levels)]
            result = cauchy_convergence_study(scn, N_list)
            tables = result.tables
            degenerate = result.degenerate
            if frictionless:
                gate_ok = (result.u_table.final_order >= 0.9) if not degenerate else False
                gate_desc = f"time study (frictionless): final u order {result.u_table.final_order:.3f} >= 0.9"
            else:
                gate_ok = (result.nu_table.final_order >= 0.4) if not degenerate else False
                gate_desc = f"time study (frictional): final nu order {result.nu_table.final_order:.3f} >= 0.4"
        elif study_type == "space":
            mults = [2 ** i for i in range(levels)]
            ref = mults[-1] * 4
            table = spatial_convergence_study(scn, mults, ref)
            tables = [table]
            degenerate = table.degenerate
            if frictionless:
                gate_ok = 0.8 <= table.final_order <= 1.2
                gate_desc = f"space study (frictionless): final order {table.final_order:.3f} in [0.8, 1.2]"
            else:
                gate_ok = table.final_order >= 0.7
                gate_desc = f"space study (frictional): final order {table.final_order:.3f} >= 0.7"
        else:
            print(f"error: unknown study type {study_type!r}", file=sys.stderr)
            return 2
    except (ValueError, ConvergenceError) as err:
        print(f"error: study failed: {err}", file=sys.stderr)
        return 1
    write_rate_tables_csv(tables, os.path.join(out_dir, "rates.csv"))
    for t in tables:
        print(t.format_text())
    if degenerate:
        print("degenerate study: all gaps are zero; orders undefined (informational exit)")
        return 0
    print(("PASS: " if gate_ok else "GATE FAIL: ") + gate_desc)
    if not gate:
        return 0
    return 0 if gate_ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="viscowear",
        description="Dynamic viscoelastic frictional contact with wear: runs and studies.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one scenario and write CSV/VTK artifacts")
    p_run.add_argument("config", help="scenario config (JSON)")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--single-thread", action="store_true",
                       help="force fully deterministic sequential execution (the default)")
    p_study = sub.add_parser("study", help="run a refinement study and gate on observed orders")
    p_study.add_argument("config", help="scenario config (JSON)")
    p_study.add_argument("--type", dest="study_type", choices=("time", "space"), required=True)
    p_study.add_argument("--levels", type=int, required=True)
    p_study.add_argument("--no-gate", action="store_true",
                         help="report orders but always exit 0")
    p_study.add_argument("--single-thread", action="store_true",
                         help="force fully deterministic sequential execution (the default)")
    p_study.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, out=args.out)
    return cmd_study(args.config, args.study_type, args.levels,
                     gate=not args.no_gate, out=args.out)


if __name__ == "__main__":
    sys.exit(main())
