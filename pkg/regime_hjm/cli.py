"""Build, simulate and verify regime-switching forward curve models"""
import json
import logging
import os
import time
from argparse import ArgumentParser
from datetime import datetime
from datetime import timezone

import numpy as np
from marshmallow import ValidationError

from regime_hjm import __version__
from regime_hjm.config import load_config
from regime_hjm.dynamics import simulate_batches
from regime_hjm.dynamics import simulate_paths
from regime_hjm.dynamics import time_grid
from regime_hjm.energy_curves import closed_form_energy_c
from regime_hjm.energy_curves import closed_form_energy_u
from regime_hjm.linalg_core import DimensionError
from regime_hjm.linalg_core import DomainError
from regime_hjm.linalg_core import NumericsError
from regime_hjm.linalg_core import RangeError
from regime_hjm.linalg_core import quadratic_expressions
from regime_hjm.linalg_core import refine
from regime_hjm.linalg_core import vanishing_quadratics
from regime_hjm.market import MarketError
from regime_hjm.market import forward_curve
from regime_hjm.noarb import drift_residual
from regime_hjm.noarb import make_probes
from regime_hjm.noarb import martingale_test
from regime_hjm.rate_curves import closed_form_rate_u
from regime_hjm.regime import GeneratorError


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICS = 3
EXIT_VERIFY_FAILED = 4

QUADRATIC_SAMPLES = 400


def write_csv(path, columns, rows, fmt):
    np.savetxt(path, rows, fmt=fmt, delimiter=",", header=",".join(columns), comments="")
    log.info("wrote %d rows to %s", len(rows), path)


def jsonable(obj):
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_manifest(out, command, config, outputs, tolerances, started):
    manifest = {
        "tool": {"name": "regime-hjm", "version": __version__},
        "command": command,
        "config_sha256": config.sha256,
        "seed": config.seed,
        "n_paths": config.sim["n_paths"],
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "tolerances": tolerances,
        "outputs": outputs,
        "config": config.source,
    }
    path = os.path.join(out, f"{command}_manifest.json")
    with open(path, "w") as f:
        json.dump(jsonable(manifest), f, indent=2)
    log.info("manifest written to %s", path)


def curve_rows(model):
    """(x, regime, u_1..u_d, c) rows, regimes numbered from 1"""
    curves = model.curves
    grid = curves.grid
    n = curves.c.values.shape[1]
    blocks = []
    for z in range(n):
        U = curves.u.values[:, :, z] if model.kind == "energy" else curves.u.values
        block = np.column_stack([grid, np.full(len(grid), z + 1), U, curves.c.values[:, z]])
        blocks.append(block)
    return np.vstack(blocks)


def richardson_change(config, model):
    fine = config.build_model(refine(model.curves.grid))
    du = np.abs(fine.curves.u.values[::2] - model.curves.u.values).max()
    dc = np.abs(fine.curves.c.values[::2] - model.curves.c.values).max()
    return float(max(du, dc))


def build_diagnostics(config, model):
    tolerances = {"grid_points": len(model.curves.grid)}
    if config.grid_settings["richardson"]:
        tolerances["richardson_change"] = richardson_change(config, model)
        log.info("halving the step changes the curves by %.3g", tolerances["richardson_change"])
    params = config.params
    grid = model.curves.grid
    if model.kind == "energy":
        if params.d == 1:
            # closed forms are only evaluated on a coarse subgrid
            xs = grid[:: max(1, len(grid) // 100)]
            U = np.array([closed_form_energy_u(params, x) for x in xs])
            C = np.array([closed_form_energy_c(params, x) for x in xs])
            index = np.searchsorted(grid, xs)
            tolerances["closed_form_u_discrepancy"] = np.abs(U - model.curves.u.values[index, 0]).max()
            tolerances["closed_form_c_discrepancy"] = np.abs(C - model.curves.c.values[index]).max()
        return tolerances
    curves = model.curves
    tolerances["min_wtilde"] = curves.wtilde.values.min()
    tolerances["lambda_residuals"] = curves.lambda_residuals
    stride = max(1, len(grid) // QUADRATIC_SAMPLES)
    basis = vanishing_quadratics(curves.v.values[::stride])
    tolerances["vanishing_quadratics"] = [str(q) for q in quadratic_expressions(basis, params.d)]
    if params.d == 1:
        tolerances["closed_form_u_discrepancy"] = np.abs(closed_form_rate_u(params, grid) - curves.u.values[:, 0]).max()
    return tolerances


def cmd_build(config, args, started):
    model = config.build_model()
    path = os.path.join(args.out, "curves.csv")
    d = config.params.d
    columns = ["x", "regime"] + [f"u_{i + 1}" for i in range(d)] + ["c"]
    write_csv(path, columns, curve_rows(model), ["%.17g", "%d"] + ["%.17g"] * (d + 1))
    write_manifest(args.out, "build", config, [path], build_diagnostics(config, model), started)
    return EXIT_OK


def cmd_simulate(config, args, started):
    sim = config.sim
    spec = config.spec
    path = args.paths_out or os.path.join(args.out, "paths.csv")
    columns = ["path_id", "t", "z"] + [f"y_{i + 1}" for i in range(spec.d)]
    fmt = ["%d", "%.17g", "%d"] + ["%.17g"] * spec.d
    batches = simulate_batches(spec, config.params.Q, sim["dt"], sim["horizon"], sim["n_paths"], sim["seed"], sim["batch_size"])
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for path_ids, times, y, z, _ in batches:
            steps = len(times)
            rows = np.column_stack([
                np.repeat(path_ids, steps),
                np.tile(times, len(path_ids)),
                z.reshape(-1) + 1,
                y.reshape(-1, spec.d),
            ])
            np.savetxt(f, rows, fmt=fmt, delimiter=",")
    log.info("simulated %d paths into %s", sim["n_paths"], path)
    write_manifest(args.out, "simulate", config, [path], {"dt": sim["dt"], "horizon": sim["horizon"]}, started)
    return EXIT_OK


def parse_perturbation(text):
    regime, _, delta = text.partition(":")
    try:
        return int(regime) - 1, float(delta)
    except ValueError:
        raise DomainError(f"--perturb-c expects REGIME:DELTA, got {text!r}")


def cmd_verify(config, args, started):
    model = config.build_model()
    if args.perturb_c:
        regime, delta = parse_perturbation(args.perturb_c)
        if not 0 <= regime < config.params.n:
            raise DomainError(f"--perturb-c regime must be in 1..{config.params.n}")
        log.warning("shifting c of regime %d by %g", regime + 1, delta)
        model = model.with_c_shift(regime, delta)
    verify = config.verify
    sim = config.sim
    probes = make_probes(model, verify["n_probes"], verify["x_probe_max"], sim["seed"], config.spec.vol.truncated)
    residuals = drift_residual(model, probes)
    martingale = martingale_test(
        model,
        config.spec,
        verify["contracts"],
        verify["checkpoints"],
        sim["n_paths"],
        sim["dt"],
        sim["seed"],
        batch_size=sim["batch_size"],
        se_floor=verify["se_floor"],
    )
    residual_ok = residuals.passes(verify["residual_tol"])
    martingale_ok = martingale.passes(verify["z_max"])
    report = {
        "market": model.kind,
        "passed": residual_ok and martingale_ok,
        "residual_tol": verify["residual_tol"],
        "z_max": verify["z_max"],
        "residuals": residuals.as_dict(),
        "martingale": martingale.as_dict(),
    }
    path = os.path.join(args.out, "verify_report.json")
    with open(path, "w") as f:
        json.dump(jsonable(report), f, indent=2)
    tolerances = {"sup_scaled_residual": residuals.sup_scaled, "max_abs_z": martingale.max_abs_z}
    write_manifest(args.out, "verify", config, [path], tolerances, started)
    if not residual_ok:
        log.error("drift condition violated: scaled residual %.3g > %.3g", residuals.sup_scaled, verify["residual_tol"])
    if not martingale_ok:
        log.error("martingale test failed: |z| = %.2f > %.2f", martingale.max_abs_z, verify["z_max"])
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAILED


def cmd_surface(config, args, started):
    sim = config.sim
    horizon = sim["horizon"]
    if args.times:
        times = [float(t) for t in args.times.split(",")]
    else:
        times = list(np.arange(0, horizon + 1e-9, 0.5))
    grid = time_grid(sim["dt"], horizon)
    index = []
    for t in times:
        if not 0 <= t <= horizon + 1e-9:
            raise RangeError(f"surface time {t} outside [0, {horizon:g}]")
        k = int(round(t / sim["dt"]))
        if abs(grid[k] - t) > 1e-9:
            raise DomainError(f"surface time {t} is not on the simulation grid (dt={sim['dt']})")
        index.append(k)
    model = config.build_model()
    [path] = simulate_paths(config.spec, config.params.Q, sim["dt"], horizon, 1, sim["seed"])
    x = model.curves.grid
    blocks = []
    for t, k in zip(times, index):
        f = forward_curve(model, path.y[k], path.z[k])
        blocks.append(np.column_stack([np.full(len(x), t), x, f]))
    out = os.path.join(args.out, "surface.csv")
    write_csv(out, ["t", "x", "f"], np.vstack(blocks), "%.17g")
    write_manifest(args.out, "surface", config, [out], {"times": times}, started)
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "surface": cmd_surface,
}


def make_parser():
    parser = ArgumentParser(prog="regime-hjm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model config JSON (or a run manifest)")
    common.add_argument("--out", default=".", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="overrides sim.seed")
    common.add_argument("--paths", type=int, help="overrides sim.n_paths")
    log_levels = "DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"
    common.add_argument("--log-level", choices=log_levels, default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="solve the curve system and write curves.csv")
    simulate = sub.add_parser("simulate", parents=[common], help="simulate factor and regime paths")
    simulate.add_argument("--paths-out", help="paths CSV (default: OUT/paths.csv)")
    verify = sub.add_parser("verify", parents=[common], help="check drift conditions and martingale property")
    verify.add_argument("--perturb-c", metavar="REGIME:DELTA", help="shift the solved c curve of one regime")
    surface = sub.add_parser("surface", parents=[common], help="forward curves along one simulated path")
    surface.add_argument("--times", help="comma separated times (default: every half year)")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    level_int = getattr(logging, args.log_level)
    logging.basicConfig(format="%(message)s", level=level_int)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        config = load_config(args.config, seed=args.seed, n_paths=args.paths)
        os.makedirs(args.out, exist_ok=True)
        code = COMMANDS[args.command](config, args, started)
    except (ValidationError, GeneratorError, DimensionError, DomainError, RangeError, MarketError) as err:
        log.error("invalid input: %s", err)
        return EXIT_INVALID
    except NumericsError as err:
        log.error("numerical failure: %s", err)
        return EXIT_NUMERICS
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code
