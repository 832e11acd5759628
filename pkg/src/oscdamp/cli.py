"""Command-line front end: config files in, CSV/JSON artifacts out.

Subcommands
    simulate        run the three-stage pipeline, write trajectory + summary
    gauge           evaluate the gauge and maximizing momentum at x0
    mintime         evaluate the minimum-time oracle at x0
    mu              estimate the stall margin and the radius C(A,B)
    match           compute the handover size Theta and amplitude U
    check-canonical residuals of the canonical reduction
    check-local     exact data and definiteness checks of the terminal law

Every subcommand reads one JSON config (--config), validated strictly:
unknown keys are rejected so that typos cannot silently fall back to
defaults.  All JSON output carries a "spec_version" field and is emitted
with sorted keys, so identical config plus seed reproduces byte-identical
bytes.  Exit codes: 0 success (simulate: reached the origin), 2 simulate
ran out of max_time, 1 any error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import contextlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

SPEC_VERSION = "1.0"


class ConfigError(ValueError):
    """Config file rejected; the message is anchored to file and key."""


# Defaults double as the schema: a key absent here is unknown, a nested
# dict recurses.  None means "no override" / "derive at run time".
_CONFIG_DEFAULTS = {
    "omegas": None,
    "x0": None,
    "seed": 0,
    "C_of_AB": None,
    "Theta": None,
    "U": None,
    "quadrature": {
        "scheme": "auto",
        "points_per_axis": None,
        "samples": 1_000_000,
        "seed": 0,
        "deterministic": True,
        "smooth_rel": 1e-4,
    },
    "sim": {
        "step": 0.01,
        "max_time": 1e4,
        "stage1_to_2_radius": None,
        "deadband": 1e-9,
        "dwell_min": None,
        "x_done": 1e-6,
        "T_done": 1e-3,
        "record_every": 1,
        "gauge_tol": 1e-6,
    },
    "matching": {
        "theta_margin": 0.05,
        "U_margin": 0.1,
        "n_probes": 4096,
    },
    "mu": {
        "n_seeds": 8,
        "t_horizon": None,
        "step": None,
        "epsilon_margin": 0.1,
    },
    "mintime": {
        "tol": 1e-4,
    },
    "gauge_tol": 1e-8,
    "compute_tau": False,
    "output": {
        "trajectory": "trajectory.csv",
        "summary": "summary.json",
    },
}


def _merge_config(defaults: dict, doc: dict, prefix: str = "") -> dict:
    out = {}
    for key, dv in defaults.items():
        out[key] = dict(dv) if isinstance(dv, dict) else dv
    for key, value in doc.items():
        path = prefix + key
        if key not in defaults:
            raise ConfigError(f"unknown key '{path}'")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"key '{path}' must be an object")
            out[key] = _merge_config(defaults[key], value, path + ".")
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    """Parse and validate a config file; errors carry file:line anchors."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1:1: top level must be a JSON object")
    try:
        conf = _merge_config(_CONFIG_DEFAULTS, doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if conf["omegas"] is None:
        raise ConfigError(f"{path}: missing required key 'omegas'")
    return conf


def _require_x0(conf, path_hint=""):
    if conf["x0"] is None:
        raise ConfigError(f"{path_hint}missing required key 'x0'")
    return np.asarray(conf["x0"], dtype=np.float64)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def _print_doc(doc, as_json: bool):
    if as_json:
        sys.stdout.write(_dump_json(doc))
        return
    for key in sorted(doc):
        value = _jsonable(doc[key])
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        print(f"{key} {value}")


def _quad_config(conf):
    from .geometry import QuadratureConfig

    q = conf["quadrature"]
    return QuadratureConfig(
        scheme=q["scheme"],
        points_per_axis=q["points_per_axis"],
        samples=q["samples"],
        seed=q["seed"],
        deterministic=q["deterministic"],
        smooth_rel=q["smooth_rel"],
    )


def _sim_config(conf, qcfg):
    from .sim import SimConfig

    s = conf["sim"]
    return SimConfig(
        step=s["step"],
        max_time=s["max_time"],
        stage1_to_2_radius=s["stage1_to_2_radius"],
        deadband=s["deadband"],
        dwell_min=s["dwell_min"],
        x_done=s["x_done"],
        T_done=s["T_done"],
        record_every=s["record_every"],
        gauge_tol=s["gauge_tol"],
        quadrature=qcfg,
    )


def _assemble_plan(conf, system, qcfg, seed):
    """Resolve C(A,B), Theta, U: explicit config values beat derived ones."""
    from .canonical import build_canonical
    from .local import build_controller
    from .matching import MatchingPlan, choose_Theta, choose_U, cond_B_value
    from .singular import estimate_mu

    cf = build_canonical(system.omegas)
    ctrl = build_controller(system.N)
    m = conf["matching"]

    C = conf["C_of_AB"]
    mu = None
    if C is None:
        mc = conf["mu"]
        mu = estimate_mu(
            system,
            n_seeds=mc["n_seeds"],
            t_horizon=mc["t_horizon"],
            step=mc["step"],
            cfg=qcfg,
            seed=seed,
            epsilon_margin=mc["epsilon_margin"],
        )
        C = mu.C_of_AB

    Theta = conf["Theta"]
    Theta_star = math.nan
    if Theta is None:
        Theta, Theta_star = choose_Theta(
            cf, ctrl, margin=m["theta_margin"], full_output=True
        )

    U = conf["U"]
    min_ratio = math.nan
    n_probes = 0
    if U is None:
        U, info = choose_U(
            cf, ctrl, C, Theta, qcfg,
            margin=m["U_margin"], n_probes=m["n_probes"], seed=seed,
            full_output=True,
        )
        min_ratio = info["min_ratio"]
        n_probes = info["n_probes"]
    elif not 0.0 < U <= 1.0:
        raise ConfigError("key 'U' must lie in (0, 1]")

    plan = MatchingPlan(
        Theta=float(Theta),
        Theta_star=float(Theta_star),
        theta_margin=m["theta_margin"],
        U=float(U),
        U_margin=m["U_margin"],
        C_of_AB=float(C),
        cond_B_at_Theta=cond_B_value(Theta, cf, ctrl),
        min_ratio=min_ratio,
        n_probes=n_probes,
        seed=seed,
    )
    return cf, ctrl, plan, mu


def _run_simulate(config_path, out_dir, seed_override, as_json) -> int:
    from .geometry import min_time_oracle
    from .model import build_system
    from .sim import run_three_stage

    conf = load_config(config_path)
    x0 = _require_x0(conf, f"{config_path}: ")
    seed = conf["seed"] if seed_override is None else seed_override
    system = build_system(conf["omegas"])
    qcfg = _quad_config(conf)
    scfg = _sim_config(conf, qcfg)
    _, _, plan, _ = _assemble_plan(conf, system, qcfg, seed)

    traj = run_three_stage(x0, system, plan, scfg)
    tau = None
    if conf["compute_tau"]:
        tau = min_time_oracle(x0, system.omegas, qcfg, tol=conf["mintime"]["tol"])
    summary = traj.summary(tau_oracle=tau)
    summary["spec_version"] = SPEC_VERSION

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / conf["output"]["trajectory"]
    sum_path = out / conf["output"]["summary"]
    traj.to_csv(csv_path)
    sum_path.write_text(_dump_json(summary))

    if traj.error is not None:
        print(f"error: {traj.error}", file=sys.stderr)
        return 1
    _print_doc(summary, as_json)
    return 0 if traj.done else 2


def _batch_worker(args):
    config_path, out_root, seed_override = args
    run_dir = Path(out_root) / Path(config_path).stem
    err = io.StringIO()
    try:
        # keep the parent's stdout byte-stable: only the final report may
        # print there, so the per-run chatter is silenced
        with open(os.devnull, "w") as devnull, \
                contextlib.redirect_stdout(devnull), \
                contextlib.redirect_stderr(err):
            code = _run_simulate(config_path, run_dir, seed_override, as_json=False)
    except Exception as exc:  # per-run isolation: one failure is one report
        return Path(config_path).name, 1, str(exc)
    msg = err.getvalue().strip()
    if msg.startswith("error: "):
        msg = msg[len("error: "):]
    return Path(config_path).name, code, msg or None


def cmd_simulate(args) -> int:
    if args.batch is not None:
        configs = sorted(Path(args.batch).glob("*.json"))
        if not configs:
            print(f"error: no *.json configs in {args.batch}", file=sys.stderr)
            return 1
        jobs = [(str(c), args.out, args.seed) for c in configs]
        workers = min(len(jobs), os.cpu_count() or 1)
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_batch_worker, jobs))
        report = {
            "spec_version": SPEC_VERSION,
            "runs": {
                name: {"exit": code, "error": err}
                for name, code, err in sorted(results)
            },
        }
        sys.stdout.write(_dump_json(report))
        codes = [code for _, code, _ in results]
        if any(c == 1 for c in codes):
            return 1
        if any(c == 2 for c in codes):
            return 2
        return 0
    if args.config is None:
        print("error: simulate needs --config or --batch", file=sys.stderr)
        return 1
    return _run_simulate(args.config, args.out, args.seed, args.json)


def cmd_gauge(args) -> int:
    from .geometry import gauge_rho
    from .model import build_system

    conf = load_config(args.config)
    x0 = _require_x0(conf, f"{args.config}: ")
    system = build_system(conf["omegas"])
    sol = gauge_rho(x0, system.omegas, _quad_config(conf), tol=conf["gauge_tol"])
    doc = {
        "spec_version": SPEC_VERSION,
        "rho": sol.rho,
        "p": sol.p,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "converged": sol.converged,
    }
    _print_doc(doc, args.json)
    return 0 if sol.converged else 1


def cmd_mintime(args) -> int:
    from .geometry import min_time_oracle
    from .model import build_system

    conf = load_config(args.config)
    x0 = _require_x0(conf, f"{args.config}: ")
    system = build_system(conf["omegas"])
    tau = min_time_oracle(
        x0, system.omegas, _quad_config(conf), tol=conf["mintime"]["tol"]
    )
    _print_doc({"spec_version": SPEC_VERSION, "tau": tau}, args.json)
    return 0


def cmd_mu(args) -> int:
    from .model import build_system
    from .singular import estimate_mu

    conf = load_config(args.config)
    seed = conf["seed"] if args.seed is None else args.seed
    system = build_system(conf["omegas"])
    mc = conf["mu"]
    est = estimate_mu(
        system,
        n_seeds=mc["n_seeds"],
        t_horizon=mc["t_horizon"],
        step=mc["step"],
        cfg=_quad_config(conf),
        seed=seed,
        epsilon_margin=mc["epsilon_margin"],
    )
    doc = {
        "spec_version": SPEC_VERSION,
        "mu_hat": est.mu_hat,
        "C_of_AB": est.C_of_AB,
        "epsilon_margin": est.epsilon_margin,
        "per_trajectory_max_f": est.per_trajectory_max_f,
        "trajectories_scanned": est.trajectories_scanned,
        "degenerate": est.degenerate,
    }
    _print_doc(doc, args.json)
    return 0


def cmd_match(args) -> int:
    from .model import build_system

    conf = load_config(args.config)
    seed = conf["seed"] if args.seed is None else args.seed
    system = build_system(conf["omegas"])
    qcfg = _quad_config(conf)
    _, _, plan, _ = _assemble_plan(conf, system, qcfg, seed)
    doc = {
        "spec_version": SPEC_VERSION,
        "Theta": plan.Theta,
        "U": plan.U,
        "C_of_AB": plan.C_of_AB,
        "margins": {
            "theta_margin": plan.theta_margin,
            "U_margin": plan.U_margin,
        },
        "probes": {
            "n_probes": plan.n_probes,
            "min_ratio": plan.min_ratio,
            "Theta_star": plan.Theta_star,
            "cond_B_at_Theta": plan.cond_B_at_Theta,
        },
    }
    _print_doc(doc, args.json)
    return 0


def cmd_check_canonical(args) -> int:
    from .canonical import build_canonical
    from .model import build_system

    conf = load_config(args.config)
    system = build_system(conf["omegas"])
    cf = build_canonical(system.omegas)
    doc = {
        "spec_version": SPEC_VERSION,
        "omegas": cf.omegas,
        "C_row": cf.C,
        "lambdas": cf.lambdas,
        "cond_D": cf.cond_D,
        "residual_reduction": cf.residual_reduction,
        "residual_nilpotent": cf.residual_nilpotent,
        "residual_block_vs_basis": cf.residual_block_vs_basis,
        "pass": bool(
            cf.residual_reduction <= 1e-10
            and cf.residual_nilpotent <= 1e-10
            and cf.residual_block_vs_basis <= 1e-10
        ),
    }
    _print_doc(doc, args.json)
    return 0 if doc["pass"] else 1


def cmd_check_local(args) -> int:
    from .canonical import canonical_pair
    from .local import build_controller, q_gram
    from .model import build_system

    conf = load_config(args.config)
    system = build_system(conf["omegas"])
    N = system.N
    ctrl = build_controller(N)
    n = 2 * N

    q = np.array(q_gram(n), dtype=np.float64)
    identity_err = float(np.abs(q @ ctrl.Q - np.eye(n)).max())
    sym = ctrl.M_frak[:, None] * ctrl.Q + ctrl.Q * ctrl.M_frak[None, :]
    fA, fB = canonical_pair(N)
    S = fA + np.outer(fB, ctrl.C_frak)
    loop = S.T @ ctrl.Q + ctrl.Q @ S
    ev_pos = float(np.linalg.eigvalsh(sym).min())
    ev_neg = float(np.linalg.eigvalsh(loop).max())
    even = all(v % 2 == 0 for row in ctrl.Q_exact for v in row)
    doc = {
        "spec_version": SPEC_VERSION,
        "N": N,
        "Q": [list(r) for r in ctrl.Q_exact],
        "Q11": ctrl.Q_exact[0][0],
        "kappa_sq": float(ctrl.kappa_sq),
        "C_frak": ctrl.C_frak,
        "q_times_Q_identity_error": identity_err,
        "even_integer_Q": even,
        "lyapunov_min_eig": ev_pos,
        "closed_loop_max_eig": ev_neg,
        "pass": bool(
            identity_err <= 1e-8
            and even
            and ctrl.Q_exact[0][0] == 2 * N * (2 * N + 1)
            and ev_pos > 0.0
            and ev_neg < 0.0
        ),
    }
    _print_doc(doc, args.json)
    return 0 if doc["pass"] else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oscdamp",
        description="Three-stage damping of coupled oscillators by a "
                    "single bounded control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=False if name == "simulate" else needs_config,
                       metavar="PATH", help="JSON config file")
        p.add_argument("--out", default=".", metavar="DIR",
                       help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override the config's seed")
        p.add_argument("--json", action="store_true",
                       help="machine-readable stdout")
        if name == "simulate":
            p.add_argument("--batch", default=None, metavar="DIR",
                           help="run every *.json config in DIR in parallel")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "run the three-stage pipeline")
    add("gauge", cmd_gauge, "evaluate the gauge at x0")
    add("mintime", cmd_mintime, "evaluate the minimum-time oracle at x0")
    add("mu", cmd_mu, "estimate the stall margin mu and C(A,B)")
    add("match", cmd_match, "choose the handover size Theta and amplitude U")
    add("check-canonical", cmd_check_canonical, "canonical reduction residuals")
    add("check-local", cmd_check_local, "terminal controller exact-data checks")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
