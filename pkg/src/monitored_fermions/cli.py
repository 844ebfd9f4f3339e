"""Command-line entry point: ``monitored-fermions <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import io as rio
from . import theory, wiener_hopf
from .engine import SimConfig, domain_wall_experiment, run_ensemble
from .lattice import LatticeConfig, derived_scales


def _grid(args, name: str) -> np.ndarray:
    """Explicit ``--<name>`` values, or a log grid from ``--min/--max/--num``."""
    explicit = getattr(args, name)
    if explicit:
        return np.array(explicit, dtype=float)
    return np.geomspace(args.min, args.max, args.num)


def cmd_scales(args) -> int:
    sc = derived_scales(args.gamma, LatticeConfig(max(args.L, 2), args.J, n=args.n))
    for key, value in sc.as_dict().items():
        print(f"{key}={value:.10g}")
    print(f"lcorr={sc.lcorr:.10g}")
    return 0


def _sim_overrides(args) -> dict:
    keys = ("L", "J", "bc", "n", "gamma", "t_warmup", "n_samples", "sample_interval", "n_trajectories",
            "master_seed", "initial_state", "representation", "cumulant_order")
    out = {k: getattr(args, k) for k in keys}
    if args.profile:
        out["record_profile"] = True
    if args.no_spectra:
        out["spectra"] = False
    if args.lengths:
        out["lengths"] = tuple(int(v) for v in args.lengths)
    return out


def _load_sim_config(args) -> SimConfig:
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    return rio.parse_config(text, _sim_overrides(args))


def cmd_simulate(args) -> int:
    config = _load_sim_config(args)
    if args.print_config:
        sys.stdout.write(rio.format_config(config))
        return 0
    started = rio.now_utc()
    progress = None
    if args.verbose:
        progress = lambda k: print(f"trajectory {k}/{config.n_trajectories} done", file=sys.stderr)
    result = run_ensemble(config, workers=args.workers, progress=progress)
    manifest = rio.emit_tables(result, args.out, started)
    print(f"wrote {len(manifest.files)} files to {args.out} "
          f"({manifest.n_trajectories} trajectories, {manifest.n_samples} samples, {manifest.n_events} events)")
    return 0


def _theory_rows(args):
    curve = args.curve
    if curve in ("ctilde", "c", "c2"):
        xs = _grid(args, "u" if curve == "ctilde" else "y")
        tab = theory.tabulate(curve, xs)
        return [(curve, x, v, e, "") for x, v, e in zip(tab.abscissae, tab.values, tab.quad_error)]
    qs = _grid(args, "q")
    if curve == "gaussian":
        vals = np.atleast_1d(theory.gaussian_Cq(qs, args.gamma, args.J, args.n))
        return [(curve, q, v, "", "") for q, v in zip(qs, vals)]
    if curve == "rg":
        rg = theory.rg_corrected(args.gamma, args.J, args.n, q=qs)
        return [(curve, q, c, "", "true" if ok else "false") for q, c, ok in zip(qs, rg.c_of_q, rg.q_valid)]
    if curve == "rg-cumulant":
        ls = np.array(args.l, dtype=float) if args.l else np.geomspace(args.min, args.max, args.num)
        rg = theory.rg_corrected(args.gamma, args.J, args.n, l=ls)
        return [(curve, l, c, "", "true" if ok else "false") for l, c, ok in zip(ls, rg.cumulant_of_l, rg.l_valid)]
    raise ValueError(f"unknown curve {curve!r}")


THEORY_HEADER = ("curve", "x", "value", "quad_error", "valid")


def cmd_theory(args) -> int:
    rows = _theory_rows(args)
    for row in rows:
        print(f"{row[0]}({row[1]:.10g}) = {rio.format_number(row[2])}")
    if args.out:
        started = rio.now_utc()
        manifest = rio.RunManifest(config={"command": "theory", "curve": args.curve, "gamma": args.gamma,
                                           "J": args.J, "n": args.n},
                                   master_seed=0, version=rio.version_string(), started=started,
                                   finished=rio.now_utc())
        rio.write_outputs(args.out, {"theory.csv": rio.csv_text(THEORY_HEADER, rows)}, manifest)
    return 0


WH_HEADER = ("q", "u", "C_wh", "C_bulk", "rel_dev", "h", "t_max", "rel_change_h", "rel_change_t")


def cmd_wiener_hopf(args) -> int:
    """Solve on a q grid (needs ``--gamma``) or directly on scaled momenta ``--u``."""
    if not args.u and args.gamma is None:
        raise ValueError("--gamma is required unless --u is given")
    l0 = derived_scales(args.gamma, LatticeConfig(2, args.J, n=args.n)).l0 if args.gamma else None
    if args.u:
        us = np.array(args.u, dtype=float)
        if l0 is not None and np.any(us > 2 * l0):
            raise ValueError(f"u above the lattice maximum 2 l0 = {2 * l0:.6g}")
        qs = 2 * np.arcsin(us / (2 * l0)) if l0 is not None else np.full(us.shape, math.nan)
    else:
        qs = _grid(args, "q")
        us = 2 * l0 * np.sin(qs / 2)
    rows = []
    f = args.n * (1 - args.n)
    for q, u in zip(qs, us):
        res = wiener_hopf.solve_u(u)
        C = f * res.C
        bulk = f * theory.bulk_scaling_ctilde(u)
        dev = C / bulk - 1 if bulk > 0 else math.nan
        rows.append((q, u, C, bulk, dev, res.h, res.t_max, res.rel_change_h, res.rel_change_t))
        print(f"q={q:.6g} u={u:.6g} C_wh={C:.10g} C_bulk={bulk:.10g} rel_dev={dev:+.4%}")
    if args.out:
        manifest = rio.RunManifest(config={"command": "wiener-hopf", "gamma": args.gamma, "J": args.J, "n": args.n},
                                   master_seed=0, version=rio.version_string(), started=rio.now_utc(),
                                   finished=rio.now_utc())
        rio.write_outputs(args.out, {"wh.csv": rio.csv_text(WH_HEADER, rows)}, manifest)
    return 0


COLLAPSE_HEADER = ("q_index", "q_tilde", "u", "C_mean", "C_stderr", "ratio_sim", "ratio_sim_stderr",
                   "ratio_theory", "ctilde", "deltaC_over_q_tilde", "deltaC_over_q_tilde_stderr")


def collapse_rows(cq_path, config: SimConfig):
    """Join a simulated ``cq.csv`` with the Gaussian prediction at ``u = q_tilde l0``."""
    header, rows = rio.read_csv(cq_path)
    col = {name: i for i, name in enumerate(header)}
    sc = config.scales
    n = config.lattice.n
    f = n * (1 - n)
    out = []
    for r in rows:
        m = int(r[col["q_index"]])
        qt = float(r[col["q_tilde"]])
        if m == 0 or qt <= 0:
            continue
        cm = float(r[col["C_mean"]])
        cs = float(r[col["C_stderr"]]) if r[col["C_stderr"]] else math.nan
        u = qt * sc.l0
        ct = theory.bulk_scaling_ctilde(u)
        out.append((m, qt, u, cm, cs, cm / (sc.g0 * qt), cs / (sc.g0 * qt), ct / (2 * u), ct,
                    (cm - f * ct) / qt, cs / qt))
    return out


def cmd_compare(args) -> int:
    man_path = os.path.join(args.sim, "manifest.json")
    with open(man_path, encoding="utf-8") as fh:
        manifest = rio.RunManifest.from_json(fh.read())
    bad = rio.verify_manifest(man_path)
    if bad:
        raise ValueError(f"checksum mismatch in {args.sim}: {', '.join(bad)}")
    config = SimConfig.from_dict(manifest.config)
    rows = collapse_rows(os.path.join(args.sim, "cq.csv"), config)
    if args.max_q_index:
        rows = [r for r in rows if r[0] <= args.max_q_index]
    out_manifest = rio.RunManifest(config={"command": "compare", "source": manifest.files, **manifest.config},
                                   master_seed=manifest.master_seed, version=rio.version_string(),
                                   started=rio.now_utc(), finished=rio.now_utc(),
                                   derived_scales=manifest.derived_scales)
    rio.write_outputs(args.out, {"collapse.csv": rio.csv_text(COLLAPSE_HEADER, rows)}, out_manifest)
    print(f"wrote collapse.csv with {len(rows)} rows to {args.out}")
    return 0


def cmd_domain_wall(args) -> int:
    config = _load_sim_config(args)
    started = rio.now_utc()
    fit = domain_wall_experiment(config, t_min=args.t_min, t_max=args.t_max, workers=args.workers)
    sc = config.scales
    payload = {
        "D_fit": fit.D if math.isfinite(fit.D) else None,
        "D_stderr": fit.stderr if math.isfinite(fit.stderr) else None,
        "D_theory": sc.Ddiff,
        "accepted": fit.accepted,
        "reason": fit.reason,
        "window": [float(fit.window[0]), float(fit.window[1])],
        "times": fit.times.tolist(),
        "amplitude": fit.amplitude.tolist(),
        "amplitude_stderr": [a if math.isfinite(a) else None for a in fit.amplitude_err.tolist()],
    }
    manifest = rio.RunManifest(config=config.to_dict(), master_seed=config.master_seed,
                               version=rio.version_string(), started=started, finished=rio.now_utc(),
                               derived_scales=sc.as_dict(), n_trajectories=config.n_trajectories)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    rio.write_outputs(args.out, {"dfit.json": text}, manifest)
    state = "accepted" if fit.accepted else f"rejected ({fit.reason})"
    print(f"D_fit={fit.D:.6g} +- {fit.stderr:.3g} (J^2/gamma = {sc.Ddiff:.6g}); {state}")
    return 0


def _add_physics(p, gamma_required=True):
    p.add_argument("--gamma", type=float, required=gamma_required, default=None)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--n", type=float, default=0.5)


def _add_sim_flags(p):
    p.add_argument("--config", help="INI file with [lattice] and [simulation] sections")
    p.add_argument("--gamma", type=float)
    p.add_argument("--J", type=float)
    p.add_argument("--n", type=float)
    p.add_argument("--L", type=int)
    p.add_argument("--bc", choices=("periodic", "open"))
    p.add_argument("--t-warmup", dest="t_warmup", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--sample-interval", dest="sample_interval", type=float)
    p.add_argument("--n-trajectories", dest="n_trajectories", type=int)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--initial-state", dest="initial_state")
    p.add_argument("--representation", choices=("slater", "correlation"))
    p.add_argument("--cumulant-order", dest="cumulant_order", type=int)
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--profile", action="store_true", help="record the density profile")
    p.add_argument("--no-spectra", action="store_true", help="skip entropy and higher cumulants")
    p.add_argument("--workers", type=int, help="worker processes (default: $WORKERS or all cores)")
    p.add_argument("--out", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monitored-fermions", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scales", help="print derived scales")
    _add_physics(p)
    p.add_argument("--L", type=int, default=2)
    p.set_defaults(func=cmd_scales)

    p = sub.add_parser("simulate", help="run an ensemble and emit tables")
    _add_sim_flags(p)
    p.add_argument("--print-config", action="store_true", help="print the canonical config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("theory", help="tabulate scaling functions and predictions")
    p.add_argument("--curve", required=True, choices=("ctilde", "c", "c2", "gaussian", "rg", "rg-cumulant"))
    _add_physics(p, gamma_required=False)
    p.add_argument("--u", type=float, nargs="+")
    p.add_argument("--y", type=float, nargs="+")
    p.add_argument("--q", type=float, nargs="+")
    p.add_argument("--l", type=float, nargs="+")
    p.add_argument("--min", type=float, default=0.01)
    p.add_argument("--max", type=float, default=100.0)
    p.add_argument("--num", type=int, default=41)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("wiener-hopf", help="solve the boundary integral equation on a q grid")
    _add_physics(p, gamma_required=False)
    p.add_argument("--q", type=float, nargs="+")
    p.add_argument("--u", type=float, nargs="+")
    p.add_argument("--min", type=float, default=0.01)
    p.add_argument("--max", type=float, default=math.pi)
    p.add_argument("--num", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_wiener_hopf)

    p = sub.add_parser("compare", help="join simulated C(q) with the Gaussian collapse curve")
    p.add_argument("--sim", required=True, help="directory written by simulate")
    p.add_argument("--max-q-index", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("domain-wall", help="fit the diffusion constant from a relaxing domain wall")
    _add_sim_flags(p)
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.set_defaults(func=cmd_domain_wall)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "theory" and args.curve in ("gaussian", "rg", "rg-cumulant") and args.gamma is None:
        parser.error("--gamma is required for this curve")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
