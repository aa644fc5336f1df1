"""Command line entry point: ``dislo <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .atoms import AtomicMeasure
from .discrete import min_energy_given_mu, mesh_quantization_constant
from .dynamics import (DiscreteFlowConfig, RenormFlowConfig, default_delta,
                       epsilon_limit_study, estimate_gradient_bound, inclusion_limit_study,
                       interpolate, mm_run_discrete, mm_run_renorm, verify_tau_solution)
from .lattice import make_mesh
from .measures import dissipation, flat_distance
from .renormalized import AnisotropyQ, RenormEvaluator

logger = logging.getLogger("dislo")


def _emit(data) -> None:
    print(json.dumps(io._jsonable(data), indent=2))


def _mesh_and_spec(cfg: dict, epsilon=None):
    omega = io.build_domain(cfg.get("omega"), cfg)
    lat = io.build_lattice(cfg.get("lattice"))
    eps = float(epsilon if epsilon is not None else cfg["epsilon"])
    mesh = make_mesh(omega, eps, lat)
    return omega, mesh, io.build_energy_spec(mesh, cfg)


def _evaluator(cfg: dict, omega):
    Q = cfg.get("Q")
    return RenormEvaluator(omega, float(cfg.get("h", 1 / 64)),
                           None if Q is None else AnisotropyQ(np.asarray(Q, dtype=float)),
                           cfg.get("d0"))


def cmd_energy(args) -> int:
    cfg = io.load_config(args.config)
    _, mesh, spec = _mesh_and_spec(cfg, args.epsilon)
    mu = io.load_measure(args.mu, {"_base": "."})
    if args.snap and not mu.is_empty:
        mu = AtomicMeasure(mesh.barycenters[mesh.nearest_triangle(mu.points)], mu.weights)
    value, u = min_energy_given_mu(mu, spec)
    out = {"epsilon": mesh.epsilon, "energy": value, "atoms": mu.to_json(),
           "triangles": mesh.n_triangles}
    if args.field and u is not None:
        io.write_json(args.field, {"nodes": mesh.nodes, "values": u})
    _emit(out)
    return 0


def cmd_dissipation(args) -> int:
    mu = AtomicMeasure.from_json(io.load_json(args.mu))
    nu = AtomicMeasure.from_json(io.load_json(args.nu))
    phi = io.build_norm(args.phi)
    omega = io.build_domain(args.omega) if args.omega else None
    _emit({"dissipation": dissipation(mu, nu, omega, phi),
           "flat": flat_distance(mu, nu, omega)})
    return 0


def cmd_renorm(args) -> int:
    omega = io.build_domain(args.omega)
    mu = AtomicMeasure.from_json(io.load_json(args.atoms))
    Q = None if args.Q is None else AnisotropyQ(np.asarray(json.loads(args.Q), dtype=float))
    ev = RenormEvaluator(omega, args.h, Q)
    out = {"W": ev.measure_energy(mu)}
    if args.grad and not mu.is_empty:
        out["gradient"] = ev.gradient(mu.points, mu.weights)
    _emit(out)
    return 0


def _output_dir(cfg: dict, override) -> Path:
    # an explicit --output is taken as given; a configured one is relative to the config file
    out = Path(override) if override else io._resolve(cfg, cfg.get("output", "dislo_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_evolve_discrete(args) -> int:
    cfg = io.load_config(args.config)
    omega, mesh, spec = _mesh_and_spec(cfg)
    phi = io.build_norm(cfg.get("phi"), cfg)
    if "mu0" in cfg:
        mu0 = io.load_measure(cfg["mu0"], cfg)
    else:
        tri = mesh.nearest_triangle(np.asarray(cfg["x0"], dtype=float))
        mu0 = AtomicMeasure(mesh.barycenters[tri], cfg["d0"])
    fcfg = DiscreteFlowConfig(epsilon=mesh.epsilon, tau=float(cfg["tau"]),
                              delta=float(cfg["delta"]), mode=cfg.get("mode", "local"),
                              radius=cfg.get("radius"), max_steps=int(cfg.get("max_steps", 20)))
    traj = mm_run_discrete(mu0, spec, phi, fcfg,
                           callback=lambda k, r: logger.info("step %d: F=%.6g D=%.3g", k,
                                                             r.energy, r.dissipation))
    out = _output_dir(cfg, args.output)
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    io.write_json(out / "summary.json", {
        "stop_reason": traj.stop_reason, "steps": traj.n_steps,
        "energies": traj.energies, "dissipations": traj.dissipations,
        "final": traj.states[-1], "c0": mesh_quantization_constant(spec)})
    if cfg.get("svg", False):
        io.write_svg(out / "trajectory.svg", omega, traj.states)
    logger.info("%d steps, stop: %s", traj.n_steps, traj.stop_reason)
    return 0


def cmd_evolve_renorm(args) -> int:
    cfg = io.load_config(args.config)
    omega = io.build_domain(cfg.get("omega"), cfg)
    phi = io.build_norm(cfg.get("phi"), cfg)
    ev = _evaluator(cfg, omega)
    x0 = np.asarray(cfg["x0"], dtype=float)
    r = float(cfg["r"])
    if "delta" in cfg:
        delta = float(cfg["delta"])
    else:
        M = estimate_gradient_bound(ev, [x0], rho=r / 2, n_random=int(cfg.get("samples", 20)),
                                    rng=cfg.get("seed", 0))
        delta = default_delta(r, float(cfg.get("c0", 0.125)), M)
        logger.info("delta = %.4g from gradient bound %.4g", delta, M)
    rcfg = RenormFlowConfig(tau=float(cfg["tau"]), delta=delta, r=r,
                            max_steps=int(cfg.get("max_steps", 10_000)))
    traj = mm_run_renorm(x0, ev, phi, rcfg)
    check = verify_tau_solution(interpolate(traj), ev, phi, rcfg.tau, traj.gradients)
    out = _output_dir(cfg, args.output)
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    io.write_json(out / "summary.json", {
        "stop_reason": traj.stop_reason, "steps": traj.n_steps, "info": traj.info,
        "delta": delta, "tau_check": {k: check[k] for k in ("worst_margin", "passed")}})
    if cfg.get("svg", False):
        io.write_svg(out / "trajectory.svg", omega, traj.states, traj.signs)
    logger.info("%d steps, stop: %s", traj.n_steps, traj.stop_reason)
    return 0


def cmd_study(args) -> int:
    cfg = io.load_config(args.config)
    omega = io.build_domain(cfg.get("omega"), cfg)
    phi = io.build_norm(cfg.get("phi"), cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    out = _output_dir(cfg, args.output)
    if args.kind == "tau-limit":
        ev = _evaluator(cfg, omega)
        rep = inclusion_limit_study(x0, ev, phi, float(cfg["r"]), cfg["taus"],
                                    delta=cfg.get("delta"))
        rep.pop("trajectories")
    else:
        rep = epsilon_limit_study(
            x0, cfg["d0"], omega, phi, tau=float(cfg["tau"]), r=float(cfg["r"]),
            delta=float(cfg["delta"]), epsilons=cfg["epsilons"],
            lattice=io.build_lattice(cfg.get("lattice")), Q=cfg.get("Q"),
            h=float(cfg.get("h", 1 / 64)), inject_dipole=cfg.get("inject_dipole"),
            allow_ill_prepared=bool(cfg.get("allow_ill_prepared", False)))
        ren = rep.pop("renormalized")
        rep["renormalized_positions"] = ren.states
        for row in rep["table"]:
            row.pop("trajectory")
    io.write_json(out / f"{args.kind}.json", rep)
    logger.info("wrote %s", out / f"{args.kind}.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dislo", description="Screw dislocation energies and dynamics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("energy", help="minimal lattice energy carrying a measure")
    s.add_argument("--config", required=True)
    s.add_argument("--mu", required=True)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--field", help="write the minimizing field to this JSON file")
    s.add_argument("--snap", action="store_true", help="move atoms to the nearest barycenters")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("dissipation", help="crystalline dissipation and flat distance")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    s.add_argument("--phi", default="euclid")
    s.add_argument("--omega")
    s.set_defaults(func=cmd_dissipation)

    s = sub.add_parser("renorm", help="renormalized energy of a measure")
    s.add_argument("--omega", required=True)
    s.add_argument("--atoms", required=True)
    s.add_argument("--Q")
    s.add_argument("--h", type=float, default=1 / 64)
    s.add_argument("--grad", action="store_true")
    s.set_defaults(func=cmd_renorm)

    for name, fn in (("evolve-discrete", cmd_evolve_discrete), ("evolve-renorm", cmd_evolve_renorm)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--output")
        s.set_defaults(func=fn)

    s = sub.add_parser("study")
    s.add_argument("kind", choices=["eps-limit", "tau-limit"])
    s.add_argument("--config", required=True)
    s.add_argument("--output")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"dislo: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
