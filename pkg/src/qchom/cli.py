"""Batch front door: JSON configs in, CSV/PGM/binary fields + manifest out.

Every run resolves its configuration (filling defaults explicitly), writes a
manifest echoing the resolved config, executes the mapped operation, and
emits files under the output directory.  Exit status: 0 success, 2 validation
failure, 3 non-convergence, 1 internal error.  With threads=1 and a fixed
seed, repeated runs produce byte-identical CSV and PGM files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cell import (convex_density, effective_tensor, f_hom_table,
                   isotropic_quadratic, solve_cell_convex, solve_cell_quadratic)
from .cutproject import (CellLattice, CutProjectMap, MAP_PRESETS,
                         QuasiperiodicField, check_diophantine,
                         default_grid_shape, penrose_demo, penrose_map,
                         write_pgm)
from .errors import (ConfigError, InternalError, InvalidInputError,
                     MapValidationError, QchomError)
from .fourier import (SpectralField, exp_trig_scalar_field, save_field,
                      trig_scalar_field)
from .operators import check_constant_rank, from_config as operator_from_config
from .reporting import (convergence_figure, history_figure, image_figure,
                        table_figure, tensor_figure, write_csv)
from .twoscale import (Domain, PairingExperiment, TrigFunction,
                       direct_1d_experiment, oscillatory_pairing, term)

REQUIRED = object()

COMMON_KEYS = {
    "command": REQUIRED,
    "output_dir": "out",
    "seed": 0,
    "threads": 1,
    "verbose": False,
}


def _check_keys(section: dict, allowed: dict, path: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"'{path}' must be an object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'" if path else
                              f"unknown key '{key}'")
    for key, default in allowed.items():
        if default is REQUIRED and key not in section:
            raise ConfigError(f"missing required key "
                              f"'{path + '.' if path else ''}{key}'")


def _resolve(section: dict, allowed: dict, path: str) -> dict:
    _check_keys(section, allowed, path)
    out = {}
    for key, default in allowed.items():
        out[key] = section.get(key, default)
    return out


# ---------------------------------------------------------------------------
# Builders from config values
# ---------------------------------------------------------------------------

def map_from_config(spec, path: str = "map") -> CutProjectMap:
    if isinstance(spec, str):
        spec = {"preset": spec}
    allowed = {"preset": None, "R": None, "cell_basis": None, "grid_shape": None}
    resolved = _resolve(spec, allowed, path)
    grid = resolved["grid_shape"]
    if resolved["preset"] is not None:
        name = resolved["preset"]
        if name not in MAP_PRESETS:
            raise ConfigError(f"'{path}.preset' must be one of "
                              f"{sorted(MAP_PRESETS)}, got {name!r}")
        if resolved["R"] is not None or resolved["cell_basis"] is not None:
            raise ConfigError(f"'{path}': give either a preset or a raw matrix")
        return MAP_PRESETS[name](tuple(grid) if grid else None)
    if resolved["R"] is None:
        raise ConfigError(f"'{path}' needs a preset or an R matrix")
    R = np.asarray(resolved["R"], dtype=float)
    if R.ndim != 2:
        raise ConfigError(f"'{path}.R' must be a matrix")
    m, n = R.shape
    basis = np.asarray(resolved["cell_basis"], dtype=float) \
        if resolved["cell_basis"] is not None else np.eye(m)
    grid_shape = tuple(int(g) for g in grid) if grid else default_grid_shape(m)
    try:
        cell = CellLattice(m, basis, grid_shape)
        return CutProjectMap(n, m, R, cell)
    except InvalidInputError as exc:
        raise ConfigError(f"'{path}': {exc}") from exc


def scalar_field_from_config(cell: CellLattice, spec, path: str) -> SpectralField:
    allowed = {"type": REQUIRED, "value": None, "const": 0.0, "beta": 1.0,
               "terms": []}
    resolved = _resolve(spec, allowed, path)
    kind = resolved["type"]
    terms = []
    for i, t in enumerate(resolved["terms"]):
        tr = _resolve(t, {"k": REQUIRED, "cos": 0.0, "sin": 0.0},
                      f"{path}.terms[{i}]")
        terms.append((tuple(int(v) for v in tr["k"]), float(tr["cos"]),
                      float(tr["sin"])))
    if kind == "constant":
        if resolved["value"] is None:
            raise ConfigError(f"'{path}.value' is required for a constant field")
        return trig_scalar_field(cell, float(resolved["value"]), ())
    if kind == "trig":
        return trig_scalar_field(cell, float(resolved["const"]), terms)
    if kind == "exp_trig":
        return exp_trig_scalar_field(cell, float(resolved["beta"]), terms)
    raise ConfigError(f"'{path}.type' must be constant|trig|exp_trig, got {kind!r}")


def density_from_config(cpmap: CutProjectMap, spec, path: str = "density"):
    allowed = {"type": REQUIRED, "a": None, "d": 1, "quartic": 0.1}
    resolved = _resolve(spec, allowed, path)
    kind = resolved["type"]
    if resolved["a"] is None:
        raise ConfigError(f"'{path}.a' (a scalar field recipe) is required")
    a = scalar_field_from_config(cpmap.cell, resolved["a"], f"{path}.a")
    d = int(resolved["d"])
    if kind == "isotropic_quadratic":
        return isotropic_quadratic(a, d), "quadratic"
    if kind == "iso_power":
        q = float(resolved["quartic"])
        if q < 0:
            raise ConfigError(f"'{path}.quartic' must be >= 0")
        avals = a.values
        amin = float(avals.min())
        if amin <= 0:
            raise ConfigError(f"'{path}.a' must be uniformly positive")

        def value_fn(zeta):
            sq = np.einsum("...i,...i->...", zeta, zeta)
            return avals * (sq + q * sq ** 2)

        def grad_fn(zeta):
            sq = np.einsum("...i,...i->...", zeta, zeta)
            return (avals * (2.0 + 4.0 * q * sq))[..., None] * zeta

        growth_C = float(avals.max()) * (1.0 + q)
        growth_p = 4.0 if q > 0 else 2.0
        return convex_density(value_fn, grad_fn, d, growth_C, growth_p), "convex"
    raise ConfigError(f"'{path}.type' must be isotropic_quadratic|iso_power, "
                      f"got {kind!r}")


def trig_function_from_config(spec, n: int, m: int, path: str) -> TrigFunction:
    allowed = {"terms": REQUIRED}
    resolved = _resolve(spec, allowed, path)
    terms = []
    for i, t in enumerate(resolved["terms"]):
        tr = _resolve(t, {"amplitude": 1.0, "x_freq": [0.0] * n, "x_phase": 0.0,
                          "k": [0] * m, "y_phase": 0.0}, f"{path}.terms[{i}]")
        terms.append(term(tr["amplitude"], tr["x_freq"], tr["x_phase"],
                          tr["k"], tr["y_phase"]))
    return TrigFunction(n, m, tuple(terms))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _summarize_solution(sol) -> dict:
    return {
        "energy": sol.energy,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "converged": bool(sol.converged),
    }


def cmd_check_map(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    report = check_diophantine(cpmap, cfg["k_max"], cfg["hard_tolerance"])
    write_csv(out / "diophantine.csv",
              ["k_max", "min_norm", "argmin_k", "violations", "near_resonant"],
              [[report.k_max, report.min_norm,
                " ".join(str(v) for v in report.argmin_k),
                len(report.violations), report.near_resonant]])
    if report.violations:
        write_csv(out / "violations.csv",
                  [f"k{j + 1}" for j in range(cpmap.m)],
                  [list(k) for k in report.violations])
    manifest["result"] = {
        "min_norm": report.min_norm,
        "argmin_k": list(report.argmin_k),
        "violations": [list(k) for k in report.violations],
        "near_resonant": report.near_resonant,
        "passed": report.passed,
    }
    if cfg["verbose"]:
        print(f"min |R*k| over |k|<= {report.k_max}: {report.min_norm:.6e} "
              f"at k = {report.argmin_k}")
    return 0 if report.passed else 2


def cmd_check_rank(cfg: dict, out: Path, manifest: dict) -> int:
    op = operator_from_config(cfg["operator"])
    report = check_constant_rank(op, cfg["samples"], cfg["seed"],
                                 cfg["svd_rel_tol"])
    rows = [[r, c] for r, c in sorted(report.observed_ranks.items())]
    write_csv(out / "rank_counts.csv", ["rank", "count"], rows)
    write_csv(out / "rank_report.csv",
              ["samples", "constant_rank", "r"],
              [[report.samples, report.constant_rank,
                report.r if report.r is not None else ""]])
    manifest["result"] = {
        "constant_rank": report.constant_rank,
        "r": report.r,
        "observed_ranks": {str(k): v for k, v in report.observed_ranks.items()},
    }
    return 0


def cmd_gen_field(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    sigma = scalar_field_from_config(cpmap.cell, cfg["field"], "field")
    name = cfg["filename"]
    save_field(out / name, sigma)
    write_csv(out / "field_stats.csv", ["mean", "rms", "min", "max"],
              [[float(sigma.values.mean()),
                float(np.sqrt((sigma.values ** 2).mean())),
                float(sigma.values.min()), float(sigma.values.max())]])
    if cpmap.n <= 2:
        from .cutproject import sample_slice
        qf = QuasiperiodicField(cpmap, sigma, cfg["interpolation"])
        extent = float(cfg["preview_extent"])
        res = 256
        axes = np.linspace(0.0, extent, res)
        if cpmap.n == 1:
            pts = axes[:, None]
            img = sample_slice(qf, pts).reshape(1, -1)
        else:
            g1, g2 = np.meshgrid(axes, axes, indexing="xy")
            pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
            img = sample_slice(qf, pts).reshape(res, res)
        image_figure(out / "field_slice.png", img,
                     "slice sample sigma(Rx)", extent=(0, extent, 0, extent))
    manifest["result"] = {"field_file": name,
                          "grid_shape": list(cpmap.cell.grid_shape)}
    return 0


def cmd_penrose(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"]) if cfg["map"] is not None else penrose_map()
    img = penrose_demo(cpmap, cfg["window_radius"], cfg["extent"],
                       cfg["resolution"])
    write_pgm(out / "penrose.pgm", img)
    image_figure(out / "penrose.png", img, "strip-projection raster",
                 extent=(-cfg["extent"], cfg["extent"],
                         -cfg["extent"], cfg["extent"]))
    manifest["result"] = {
        "resolution": cfg["resolution"],
        "fill_fraction": float((img > 0).mean()),
    }
    return 0


def cmd_solve_cell(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    cpmap.validate(cfg["k_max"])
    cpmap.require_validated()
    op = operator_from_config(cfg["operator"])
    density, kind = density_from_config(cpmap, cfg["density"])
    xi = np.asarray(cfg["xi"], dtype=float)
    if kind == "quadratic" and cfg["solver"] == "quadratic":
        sol = solve_cell_quadratic(density, xi, op, cpmap, cfg["tol"],
                                   cfg["max_iter"])
    else:
        sol = solve_cell_convex(density, xi, op, cpmap, cfg["tol"],
                                cfg["max_iter"], seed=cfg["seed"])
    write_csv(out / "history.csv", ["iteration", "energy", "residual"],
              sol.history)
    write_csv(out / "solution.csv",
              ["energy", "iterations", "residual", "converged"],
              [[sol.energy, sol.iterations, sol.residual, sol.converged]])
    save_field(out / "corrector.qlhf", sol.v)
    history_figure(out / "history.png", sol.history,
                   f"cell solve ({kind}), xi = {list(xi)}")
    manifest["result"] = _summarize_solution(sol)
    if cfg["verbose"]:
        print(f"energy = {sol.energy:.12g} after {sol.iterations} iterations "
              f"(residual {sol.residual:.3e})")
    return 0 if sol.converged else 3


def cmd_effective_tensor(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    cpmap.validate(cfg["k_max"])
    op = operator_from_config(cfg["operator"])
    density, kind = density_from_config(cpmap, cfg["density"])
    if kind != "quadratic":
        raise ConfigError("'density.type' must be isotropic_quadratic for "
                          "effective-tensor")
    et = effective_tensor(density, op, cpmap, cfg["tol"], cfg["max_iter"],
                          threads=cfg["threads"])
    d = et.tensor.shape[0]
    write_csv(out / "tensor.csv", [f"a{j + 1}" for j in range(d)],
              [list(row) for row in et.tensor])
    write_csv(out / "solves.csv",
              ["direction", "energy", "iterations", "residual", "converged"],
              [[i, s.energy, s.iterations, s.residual, s.converged]
               for i, s in enumerate(et.per_direction_solutions)])
    tensor_figure(out / "tensor.png", et.tensor, "homogenized tensor")
    ok = all(s.converged for s in et.per_direction_solutions)
    manifest["result"] = {"tensor": [list(map(float, row)) for row in et.tensor],
                          "converged": ok}
    return 0 if ok else 3


def cmd_fhom_table(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    cpmap.validate(cfg["k_max"])
    op = operator_from_config(cfg["operator"])
    density, _ = density_from_config(cpmap, cfg["density"])
    table = f_hom_table(density, op, cpmap, cfg["xis"], cfg["tol"],
                        cfg["max_iter"], threads=cfg["threads"])
    d = len(table[0][0])
    write_csv(out / "fhom_table.csv",
              [f"xi{j + 1}" for j in range(d)] + ["f_hom"],
              [list(x) + [e] for x, e in table])
    labels = [np.array2string(x, precision=3) for x, _ in table]
    table_figure(out / "fhom_table.png", labels, [e for _, e in table],
                 "homogenized density table")
    manifest["result"] = {"values": [e for _, e in table]}
    return 0


def cmd_pairing(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    cpmap.validate(cfg["k_max"])
    cpmap.require_validated()
    n, m = cpmap.n, cpmap.m
    u = trig_function_from_config(cfg["u"], n, m, "u")
    phi = trig_function_from_config(cfg["phi"], n, m, "phi")
    domain = Domain(tuple(float(v) for v in cfg["domain_lo"]),
                    tuple(float(v) for v in cfg["domain_hi"]))
    exp = PairingExperiment(domain=domain, epsilons=tuple(cfg["epsilons"]),
                            quadrature_points_per_axis=cfg["quadrature_points_per_axis"],
                            u=u, phi=phi)
    report = oscillatory_pairing(exp, cpmap)
    write_csv(out / "pairing.csv", ["epsilon", "value", "error"],
              [[e, v, err] for (e, v), err in zip(report.values, report.errors)])
    convergence_figure(out / "pairing.png", [e for e, _ in report.values],
                       report.errors, report.limit, "oscillatory pairing")
    manifest["result"] = {"limit": report.limit,
                          "fitted_rate": report.fitted_rate,
                          "complete": report.complete}
    print("pairing experiment")
    print(f"  limit          {report.limit:.12g}")
    for (e, v), err in zip(report.values, report.errors):
        print(f"  eps = {e:<12.6g} value = {v:<22.12g} error = {err:.3e}")
    print(f"  fitted rate    {report.fitted_rate:.3f}")
    if not report.complete:
        print("  WARNING: quadrature budget exceeded, report is partial")
    return 0


def cmd_verify_1d(cfg: dict, out: Path, manifest: dict) -> int:
    cpmap = map_from_config(cfg["map"])
    sigma = scalar_field_from_config(cpmap.cell, cfg["a"], "a")
    qf = QuasiperiodicField(cpmap, sigma, cfg["interpolation"])
    report = direct_1d_experiment(cpmap, qf, cfg["domain_length"],
                                  cfg["epsilons"], tol=cfg["tol"],
                                  k_max=cfg["k_max"])
    write_csv(out / "verify_1d.csv", ["epsilon", "a_eff", "error"],
              [[e, v, err] for (e, v), err in zip(report.values, report.errors)])
    convergence_figure(out / "verify_1d.png", [e for e, _ in report.values],
                       report.errors, report.limit, "direct vs homogenized (1-D)")
    final_rel = report.errors[-1] / abs(report.limit) if report.values else math.nan
    manifest["result"] = {"cell_value": report.limit,
                          "final_relative_error": final_rel,
                          "fitted_rate": report.fitted_rate,
                          "complete": report.complete}
    print("direct 1-D experiment")
    print(f"  cell value     {report.limit:.12g}")
    for (e, v), err in zip(report.values, report.errors):
        print(f"  eps = {e:<12.6g} a_eff = {v:<22.12g} error = {err:.3e}")
    print(f"  final relative error {final_rel:.3e}")
    return 0


_EPS_DEFAULT = [2.0 ** -k for k in range(3, 10)]

COMMANDS = {
    "check-map": (cmd_check_map, {"map": REQUIRED, "k_max": 8,
                                  "hard_tolerance": 1e-12}),
    "check-rank": (cmd_check_rank, {"operator": REQUIRED, "samples": 64,
                                    "svd_rel_tol": 1e-10}),
    "gen-field": (cmd_gen_field, {"map": REQUIRED, "field": REQUIRED,
                                  "filename": "field.qlhf",
                                  "interpolation": "fourier",
                                  "preview_extent": 10.0}),
    "penrose": (cmd_penrose, {"map": None, "window_radius": 0.5,
                              "extent": 20.0, "resolution": 512}),
    "solve-cell": (cmd_solve_cell, {"map": REQUIRED, "operator": REQUIRED,
                                    "density": REQUIRED, "xi": REQUIRED,
                                    "tol": 1e-8, "max_iter": 500,
                                    "solver": "quadratic", "k_max": 8}),
    "effective-tensor": (cmd_effective_tensor,
                         {"map": REQUIRED, "operator": REQUIRED,
                          "density": REQUIRED, "tol": 1e-8, "max_iter": 500,
                          "k_max": 8}),
    "fhom-table": (cmd_fhom_table, {"map": REQUIRED, "operator": REQUIRED,
                                    "density": REQUIRED, "xis": REQUIRED,
                                    "tol": 1e-8, "max_iter": 500, "k_max": 8}),
    "pairing": (cmd_pairing, {"map": REQUIRED, "u": REQUIRED, "phi": REQUIRED,
                              "domain_lo": [0.0], "domain_hi": [1.0],
                              "epsilons": _EPS_DEFAULT,
                              "quadrature_points_per_axis": 8, "k_max": 8}),
    "verify-1d": (cmd_verify_1d, {"map": REQUIRED, "a": REQUIRED,
                                  "domain_length": 1.0,
                                  "epsilons": _EPS_DEFAULT,
                                  "interpolation": "fourier",
                                  "tol": 1e-10, "k_max": 8}),
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def resolve_config(raw: dict, overrides: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    command = raw.get("command")
    if command is None:
        raise ConfigError("missing required key 'command'")
    if command not in COMMANDS:
        raise ConfigError(f"'command' must be one of {sorted(COMMANDS)}, "
                          f"got {command!r}")
    _, schema = COMMANDS[command]
    allowed = dict(COMMON_KEYS)
    allowed.update(schema)
    resolved = _resolve(raw, allowed, "")
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    threads = resolved["threads"]
    if threads == "auto":
        resolved["threads"] = os.cpu_count() or 1
    else:
        try:
            resolved["threads"] = int(threads)
        except (TypeError, ValueError):
            raise ConfigError("'threads' must be an integer or 'auto'")
    if resolved["threads"] < 1:
        raise ConfigError("'threads' must be >= 1")
    try:
        resolved["seed"] = int(resolved["seed"])
    except (TypeError, ValueError):
        raise ConfigError("'seed' must be an integer")
    return resolved


def _write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def run(resolved: dict) -> int:
    command = resolved["command"]
    handler, _ = COMMANDS[command]
    out = Path(resolved["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"qchom_version": __version__, "config": resolved}
    _write_manifest(out, manifest)
    status = handler(resolved, out, manifest)
    _write_manifest(out, manifest)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qchom",
        description="quasicrystal homogenization experiments (command is "
                    "selected by the 'command' key of the JSON config)")
    parser.add_argument("--config", required=True, help="path to a JSON run config")
    parser.add_argument("--output", default=None, help="output directory "
                        "(overrides the config's output_dir)")
    parser.add_argument("--threads", default=None, help="worker cap: an "
                        "integer or 'auto'")
    parser.add_argument("--seed", default=None, type=int, help="RNG seed")
    parser.add_argument("--verbose", action="store_true", default=None)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as f:
            raw = json.load(f)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2

    overrides = {"output_dir": args.output, "threads": args.threads,
                 "seed": args.seed, "verbose": args.verbose}
    try:
        resolved = resolve_config(raw, overrides)
        return run(resolved)
    except (ConfigError, InvalidInputError, MapValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    except QchomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
