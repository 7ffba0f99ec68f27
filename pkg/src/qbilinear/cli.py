"""``qbilinear`` command line: one subcommand per workflow stage.

    bound -> matrix -> abncd -> control | optimal | balance -> truncate
                                          h2model, h2error

Stages talk only through archive directories under ``--out``.  Exit codes:
0 success, 2 invalid input (config, missing or malformed archive), 1
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import archive, config as cfgmod, experiments, storage
from .control import OctConfig, iterate
from .errors import FormatError, IoError, QBilinearError, ValidationError
from .model import (Amo, Gaussian, GridSpec, Mecke, Morse, Overlap, Projector, Taylor,
                    matrix_elements, solve_bound_states, EnergyBasisSystem, Observable,
                    export_energy_basis, import_energy_basis)
from .propagation import (ControlField, Sin2Pulse, TimeGrid, crossover_time, propagate_adaptive,
                          propagate_fixed, sin2_envelope, write_csv)
from .system import (Cat, DephasingModel, Mixed, Pure, RateModel, Thermal, build_lvne, build_tdse,
                     initial_state, spectrum)

INPUT_ERRORS = (ValidationError, FormatError, IoError)


# --- model pieces from config ----------------------------------------------------


def _function(spec, where):
    if spec is None:
        return None
    t = spec["type"]
    need = {"morse": ("d_e", "r_e", "alpha"), "mecke": ("r0", "q0"), "taylor": ("coefficients",),
            "gaussian": ("center", "width"), "double_well": ()}[t]
    for key in need:
        if spec[key] is None:
            raise ValidationError(f"{where}.{key} is required for type '{t}'")
    if t == "morse":
        return Morse(spec["d_e"], spec["r_e"], spec["alpha"])
    if t == "mecke":
        return Mecke(spec["r0"], spec["q0"])
    if t == "taylor":
        return Taylor(tuple(spec["coefficients"]), spec["center"], spec["constant"])
    if t == "gaussian":
        return Gaussian(spec["center"], spec["width"])
    barrier = spec["barrier"] if spec["barrier"] is not None else experiments.DW_BARRIER
    tilt = spec["tilt"] if spec["tilt"] is not None else experiments.DW_TILT
    return experiments.double_well_potential(barrier, tilt)


def model_parts(cfg):
    """``(grid, potential, dipoles, sbc, v_min, v_max)`` from the model section and preset."""
    m = cfg["model"]
    if m is None:
        raise ValidationError("config needs a 'model' section")
    preset = m["preset"]
    if preset == "morse":
        grid, pot = experiments.MORSE_GRID, experiments.MORSE
        dip, sbc, vmax = [experiments.MORSE_DIPOLE], Taylor((1.0,)), None
    elif preset == "double_well":
        grid, pot = experiments.DW_GRID, experiments.double_well_potential()
        dip, sbc, vmax = [Taylor((1.0,))], Taylor((1.0,)), 20
    else:
        grid = pot = sbc = vmax = None
        dip = []
    if m["grid"] is not None:
        g = m["grid"]
        for key in ("n_points", "x_min", "x_max", "mass"):
            if g[key] is None:
                raise ValidationError(f"model.grid.{key} is required")
        grid = GridSpec(g["n_points"], g["x_min"], g["x_max"], g["mass"])
    if m["potential"] is not None:
        pot = _function(m["potential"], "model.potential")
    if m["dipole"] is not None:
        dip = [_function(d, f"model.dipole[{i}]") for i, d in enumerate(m["dipole"])]
    if m["sbc"] is not None:
        sbc = _function(m["sbc"], "model.sbc")
    if m["v_max"] is not None:
        vmax = m["v_max"]
    if grid is None or pot is None:
        raise ValidationError("model needs a grid and a potential (or a preset)")
    return grid, pot, dip, sbc, m["v_min"], vmax


def observables(cfg, n_states):
    obs = cfg["observe"]
    if obs is None or obs["targets"] is None:
        if cfg["model"] and cfg["model"]["preset"] == "double_well":
            return [Projector(experiments.DW_LEFT, "left"), Projector(experiments.DW_RIGHT, "right"),
                    Projector(experiments.DW_DELOCALIZED, "delocalized")]
        return [Projector((i,), f"v{i}") for i in range(n_states)]
    out = []
    for i, t in enumerate(obs["targets"]):
        where = f"observe.targets[{i}]"
        if t["type"] == "amo":
            fn = _function(t["function"], f"{where}.function")
            if fn is None:
                raise ValidationError(f"{where}.function is required for amo observables")
            out.append(Amo(fn, t["label"] or f"amo{i}"))
            continue
        if not t["states"]:
            raise ValidationError(f"{where}.states is required")
        states = tuple(t["states"])
        if max(states) >= n_states or min(states) < 0:
            raise ValidationError(f"{where}.states {list(states)} outside 0..{n_states - 1}")
        cls = Projector if t["type"] == "prj" else Overlap
        out.append(cls(states, t["label"]))
    return out


def time_grid(cfg) -> TimeGrid:
    t = cfg["time"]
    if t is None or t["delta"] is None or t["steps"] is None:
        raise ValidationError("config needs time.delta and time.steps")
    start = int(round(t["start"] / t["delta"]))
    return TimeGrid(t["delta"], start, start + t["steps"])


def control_field(cfg, system, grid: TimeGrid, shaped: bool = False) -> ControlField:
    f = cfg["field"]
    m = system.n_controls
    substeps = (cfg["solver"] or {}).get("substeps", 10) if cfg["solver"] else 10
    dt = (f or {}).get("dt") or grid.delta / substeps
    if f is None or not f["pulses"]:
        if shaped:
            raise ValidationError("optimal control needs a nonzero guess in field.pulses")
        return ControlField.zero(m, grid.t_end, grid.t_start)
    pulses = []
    for i, p in enumerate(f["pulses"]):
        for key in ("amplitude", "frequency", "duration"):
            if p[key] is None:
                raise ValidationError(f"field.pulses[{i}].{key} is required")
        pulses.append(Sin2Pulse(p["amplitude"], p["frequency"], p["duration"], p["t_start"],
                                p["chirp"], p["phase"]))
    if len(pulses) != m and len(pulses) != 1:
        raise ValidationError(f"field.pulses has {len(pulses)} entries for {m} control channels")
    funcs = pulses if len(pulses) == m else pulses * m
    shapes = None
    if shaped:
        dur = f["shape_duration"] or (grid.t_end - grid.t_start)
        shapes = [lambda t, d=dur: sin2_envelope(t, d, grid.t_start)] * m
    alpha = None
    if cfg["optimal"] is not None:
        alpha = np.broadcast_to(np.asarray(cfg["optimal"]["alpha"], float), (m,)).copy()
    return ControlField.from_functions(funcs, grid.t_end, dt, grid.t_start, shapes, alpha)


def initial_vector(cfg, system):
    ini = cfg["initial"] or {"type": "equilibrium", "states": None, "temperature": 0.0}
    t = ini["type"]
    if t == "equilibrium" or system.kind not in ("tdse", "lvne"):
        return system.x0
    st = ini["states"] or []
    need = {"pure": 1, "cat": 2, "mixed": 2}.get(t, 0)
    if len(st) < need:
        raise ValidationError(f"initial.states needs {need} entries for type '{t}'")
    spec = {"pure": lambda: Pure(st[0]), "cat": lambda: Cat(st[0], st[1]),
            "mixed": lambda: Mixed(st[0], st[1]),
            "thermal": lambda: Thermal(ini["temperature"])}[t]()
    try:
        return initial_state(spec, system)
    except IndexError as exc:
        raise ValidationError(f"initial.states: {exc}") from exc


def _rates(cfg):
    r = cfg["relax"]
    lv = cfg["lvne"] or {}
    temp = lv.get("temperature", 0.0) if lv else 0.0
    if r is None or r["model"] == "none":
        return RateModel("constant", 0.0, temp)
    return RateModel(r["model"], r["rate"], temp, r["lower"], r["upper"])


def _dephasing(cfg):
    d = cfg["dephase"]
    if d is None or d["model"] == "none":
        return None
    return DephasingModel(d["model"], d["kappa"], d["rate"])


def _wants_lvne(cfg) -> bool:
    lv = cfg["lvne"]
    if lv is None:
        return False
    return lv["enabled"] is not False


# --- stages ------------------------------------------------------------------------


def _system_path(args, cfg) -> Path:
    if args.system:
        return Path(args.system)
    return Path(args.out) / ("lvne" if _wants_lvne(cfg) else "tdse")


def _load_system(path):
    storage.require_archive(path, Path(path).name)
    return storage.import_system(path)


def stage_bound(args, cfg):
    grid, pot, _, _, vmin, vmax = model_parts(cfg)
    E, U = solve_bound_states(grid, pot, vmin, vmax)
    out = Path(args.out) / "bound"
    archive.write_archive(out, {"energies": E, "vectors": U, "x": grid.x},
                          {"stage": "bound", "v_min": vmin, "grid": [grid.n_points, grid.x_min,
                                                                       grid.x_max, grid.mass]})
    write_csv(Path(args.out) / "bound.csv", np.arange(vmin, vmin + len(E)), E[:, None], ["energy"])
    print(f"{len(E)} bound states, E_0 = {float(E[0])!r}")
    return out, []


def stage_matrix(args, cfg):
    src = storage.require_archive(Path(args.out) / "bound", "bound")
    arrays, meta = archive.read_archive(src)
    grid, _, dips, sbc, _, _ = model_parts(cfg)
    if [grid.n_points, grid.x_min, grid.x_max, grid.mass] != meta["grid"]:
        raise ValidationError("model.grid differs from the grid the 'bound' archive was made on")
    U = np.real(arrays["vectors"])
    n = U.shape[1]
    obs = []
    for i, spec in enumerate(observables(cfg, n)):
        kind = {Amo: "amo", Projector: "prj", Overlap: "ovl"}[type(spec)]
        obs.append(Observable(kind, matrix_elements(U, spec, grid), spec.label or f"{kind}{i}"))
    basis = EnergyBasisSystem(np.real(arrays["energies"]), [matrix_elements(U, d, grid) for d in dips],
                              None if sbc is None else matrix_elements(U, sbc, grid), obs)
    out = Path(args.out) / "tise"
    export_energy_basis(basis, out)
    print(f"matrix elements for {n} states, {len(dips)} dipole(s), {len(obs)} observable(s)")
    return out, [src]


def stage_abncd(args, cfg):
    src = storage.require_archive(Path(args.out) / "tise", "tise")
    basis = import_energy_basis(src)
    ch = cfg["observe"]["choices"] if cfg["observe"] else None
    if _wants_lvne(cfg):
        lv = cfg["lvne"]
        system = build_lvne(basis, _rates(cfg), _dephasing(cfg), ch, lv["ordering"])
        name = "lvne"
    else:
        system = build_tdse(basis, ch)
        name = "tdse"
    out = Path(args.out) / name
    storage.export_system(system, out)
    if system.dim <= 3000:
        lam = spectrum(system)
        lam = lam[np.lexsort((lam.imag, lam.real))]
        write_csv(Path(args.out) / f"{name}_spectrum.csv", np.arange(len(lam)),
                  np.column_stack([lam.real, lam.imag]), ["re", "im"])
    print(f"{name}: dim {system.dim}, {system.n_controls} control(s), {system.n_outputs} output(s)")
    return out, [src]


def stage_control(args, cfg):
    path = _system_path(args, cfg)
    system = _load_system(path)
    grid = time_grid(cfg)
    fld = control_field(cfg, system, grid)
    x0 = initial_vector(cfg, system)
    sol = cfg["solver"] or cfgmod.validate({"solver": {}})["solver"]
    if sol["method"] == "adaptive":
        tr = propagate_adaptive(system, fld, x0, grid, sol["reltol"])
    else:
        tr = propagate_fixed(system, fld, x0, grid, sol["substeps"], sol["method"])
    out = Path(args.out) / "control"
    archive.write_archive(out, {"times": tr.times, "states": tr.states, "outputs": tr.outputs},
                          {"stage": "control", "labels": list(tr.labels), "info": tr.info})
    tr.write_csv(Path(args.out) / "control_outputs.csv")
    fld.write_csv(Path(args.out) / "control_field.csv")
    final = ", ".join(f"{lab}={v:.6g}" for lab, v in zip(tr.labels, tr.outputs[-1]))
    print(f"t = {float(tr.times[-1])!r}: {final}")
    if tr.outputs.shape[1] > 1:
        for q in range(min(tr.outputs.shape[1], 3)):
            tc = crossover_time(tr.times, tr.outputs, q)
            if tc is not None and tc > tr.times[0]:
                print(f"{tr.labels[q]} becomes the largest output at t = {tc!r}")
    return out, [path]


def stage_optimal(args, cfg):
    path = _system_path(args, cfg)
    system = _load_system(path)
    opt = cfg["optimal"] or cfgmod.validate({"optimal": {}})["optimal"]
    grid = time_grid(cfg)
    if opt["terminal"] is not None and not np.isclose(opt["terminal"], grid.t_end):
        raise ValidationError(f"optimal.terminal = {opt['terminal']} differs from the time grid end "
                              f"{grid.t_end}")
    oc = OctConfig(opt["target"], opt["functional"], tuple(opt["alpha"]), opt["eta"], opt["zeta"],
                   opt["max_iter"], opt["tolerance"], opt["j1c_overlap_eval"], opt["substeps"])
    guess = control_field(cfg, system, grid, shaped=True)
    rep = iterate(system, guess, oc, grid, initial_vector(cfg, system))
    out = Path(args.out) / "optimal"
    archive.write_archive(out, {"field": rep.field.values, "shape": rep.field.shape,
                                "times": rep.trajectory.times, "states": rep.trajectory.states,
                                "outputs": rep.trajectory.outputs, "table": rep.table()},
                          {"stage": "optimal", "t0": rep.field.t0, "dt": rep.field.dt,
                           "converged": rep.converged, "labels": list(rep.trajectory.labels)})
    write_csv(Path(args.out) / "optimal_J.csv", np.arange(len(rep.J)), rep.table()[:, 1:],
              ["J1", "J2", "J3", "J", "yield"])
    rep.field.write_csv(Path(args.out) / "optimal_field.csv")
    rep.trajectory.write_csv(Path(args.out) / "optimal_outputs.csv")
    print(f"{rep.iterations} iterations, J = {float(rep.J[-1])!r}, yield = {float(rep.yields[-1])!r}")
    return out, [path]


def _stabilized(cfg, system):
    from .reduction import Shift, SplitUnstable, scale, stabilize

    red = cfg["reduce"] or cfgmod.validate({"reduce": {}})["reduce"]
    how = red["A_stable"]
    if how == "ssu":
        st = stabilize(system, SplitUnstable(red["A_split"]))
    elif how == "evs":
        st = stabilize(system, Shift(red["A_shift"]))
    else:
        st = stabilize(system, SplitUnstable(0))
    return scale(st, red["BN_scale"]), red


def stage_balance(args, cfg):
    from .reduction import balance_srbt

    path = _system_path(args, cfg)
    st, red = _stabilized(cfg, _load_system(path))
    method = "iterative" if red["method"] == "iter" else "bicg"
    res = balance_srbt(st, method=method, tol=red["solver_tol"], max_iter=red["max_iter"])
    out = Path(args.out) / "lvne_b"
    storage.export_reduction(res, out)
    write_csv(Path(args.out) / "hsv.csv", np.arange(1, len(res.hsv) + 1), res.hsv[:, None], ["hsv"])
    print(f"balanced {len(res.hsv)} states; largest HSV {float(res.hsv[0])!r}, "
          f"smallest {float(res.hsv[-1])!r}")
    return out, [path]


def stage_truncate(args, cfg):
    from .reduction import truncate

    src = storage.require_archive(Path(args.out) / "lvne_b", "lvne_b")
    red = cfg["reduce"]
    if red is None or red["d"] is None:
        raise ValidationError("truncate needs reduce.d")
    res = truncate(storage.import_reduction(src), red["d"], red["truncation"])
    out = Path(args.out) / "lvne_t"
    storage.export_reduction(res, out)
    print(f"{res.method}: d = {red['d']}, simulated dimension {res.reduced.dim}")
    return out, [src]


def stage_h2model(args, cfg):
    from .reduction import birka

    path = _system_path(args, cfg)
    st, red = _stabilized(cfg, _load_system(path))
    if red["d"] is None:
        raise ValidationError("h2model needs reduce.d")
    method = "iterative" if red["method"] == "iter" else "bicg"
    res = birka(st, red["d"], red["max_iter"], red["conv_tol"], red["seed"], method,
                red["solver_tol"])
    out = Path(args.out) / "lvne_h"
    storage.export_reduction(res, out)
    hist = res.info["history"]
    write_csv(Path(args.out) / "birka_history.csv", np.arange(1, len(hist) + 1),
              np.asarray(hist)[:, None], ["spectral_change"])
    print(f"BIRKA d = {red['d']}: {res.info['iterations']} iterations, converged = "
          f"{res.info['converged']}")
    return out, [path]


def stage_h2error(args, cfg):
    from .reduction import h2_error

    full = Path(args.full) if args.full else Path(args.out) / "lvne_b"
    reduced = Path(args.reduced) if args.reduced else Path(args.out) / "lvne_t"
    storage.require_archive(full, full.name)
    storage.require_archive(reduced, reduced.name)
    err = h2_error(storage.stable_view(full), storage.stable_view(reduced))
    out = Path(args.out) / "h2error.json"
    out.write_text(json.dumps({"h2_error_squared": err.value, "dual": err.dual,
                               "reference": err.reference, "relative": err.relative},
                              sort_keys=True, indent=1) + "\n")
    print(repr(float(err.value)))
    return None, [full, reduced]


STAGES = {"bound": stage_bound, "matrix": stage_matrix, "abncd": stage_abncd,
          "control": stage_control, "optimal": stage_optimal, "balance": stage_balance,
          "truncate": stage_truncate, "h2model": stage_h2model, "h2error": stage_h2error}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbilinear", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", required=name != "h2error", help="YAML run configuration")
        s.add_argument("--out", "-o", default=".", help="working directory for archives")
        if name in ("control", "optimal", "balance", "h2model"):
            s.add_argument("--system", help="system archive to use instead of the default")
        if name == "h2error":
            s.add_argument("--full", help="full-order (or reference) archive")
            s.add_argument("--reduced", help="reduced archive")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.validate({})
        Path(args.out).mkdir(parents=True, exist_ok=True)
        manifest = storage.RunManifest(args.stage, config_hash=storage.config_hash(cfg),
                                       started=time.time())
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            out, inputs = STAGES[args.stage](args, cfg)
        manifest.inputs = {str(p): storage.archive_hash(p) for p in inputs}
        manifest.finished = time.time()
        if out is not None:
            manifest.write(out)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QBilinearError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
