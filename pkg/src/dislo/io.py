"""Configuration files and run outputs.

Run configurations are TOML tables.  Recognized keys::

    lattice = "square"            # or "triangular", "honeycomb", or a table
                                  # {v1 = [..], v2 = [..], translations = [[..], ..]}
    omega = "unit_square"         # or {box = 2.0}, {rectangle = [x0, y0, x1, y1]},
                                  # {boundary = [[..], ..], holes = [..]}, {file = "poly.json"}
    potentials = "nearest_neighbour"   # or "uniform", or {by_length = {"1.0" = 1.0}}
    coefficient = 1.0
    phi = "euclid"                # "l1", "linf", "hex", or {vertices = [[..], ..]}
    Q = [[1, 0], [0, 1]]
    epsilon, tau, delta, r, h, max_steps, mode, radius
    x0 = [[x, y], ..]
    d0 = [1, -1, ..]
    mu0 = "mu.json"               # optional lattice initial measure
    output = "out"
    svg = true

Study files add ``epsilons``, ``taus`` and optionally ``inject_dipole``.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .atoms import AtomicMeasure
from .crystalline import PolyhedralNorm
from .discrete import EnergySpec
from .geometry import Domain
from .lattice import ClippedMesh, LatticeSpec

__all__ = [
    "load_config",
    "load_json",
    "build_lattice",
    "build_domain",
    "build_norm",
    "build_energy_spec",
    "write_trajectory_csv",
    "write_json",
    "write_svg",
]


def load_config(path) -> dict:
    path = Path(path)
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    cfg.setdefault("_base", str(path.parent))
    return cfg


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _resolve(cfg: dict, name: str) -> Path:
    p = Path(name)
    if not p.is_absolute():
        p = Path(cfg.get("_base", ".")) / p
    return p


def build_lattice(value) -> LatticeSpec:
    if value is None or isinstance(value, str):
        kind = (value or "square").lower()
        factories = {"square": LatticeSpec.square, "triangular": LatticeSpec.triangular,
                     "honeycomb": LatticeSpec.honeycomb}
        if kind not in factories:
            raise ValueError(f"unknown lattice {value!r}")
        return factories[kind]()
    return LatticeSpec(value["v1"], value["v2"], value.get("translations", [[0.0, 0.0]]))


def build_domain(value, cfg: dict | None = None) -> Domain:
    cfg = cfg or {}
    if value is None or value == "unit_square":
        return Domain.unit_square()
    if isinstance(value, str):
        return Domain.from_json(load_json(_resolve(cfg, value)))
    if isinstance(value, list):
        return Domain(value)
    if "file" in value:
        return Domain.from_json(load_json(_resolve(cfg, value["file"])))
    if "box" in value:
        return Domain.box(float(value["box"]), tuple(value.get("center", (0.0, 0.0))))
    if "rectangle" in value:
        return Domain.rectangle(*value["rectangle"])
    if "regular" in value:
        return Domain.regular_polygon(int(value["regular"]), float(value.get("radius", 1.0)),
                                      tuple(value.get("center", (0.0, 0.0))))
    return Domain.from_json(value)


def build_norm(value, cfg: dict | None = None) -> PolyhedralNorm:
    if value is None:
        return PolyhedralNorm.euclidean_norm()
    if isinstance(value, str) and value.endswith(".json"):
        return PolyhedralNorm.from_json(load_json(_resolve(cfg or {}, value)))
    return PolyhedralNorm.from_json(value)


def build_energy_spec(mesh: ClippedMesh, cfg: dict) -> EnergySpec:
    pot = cfg.get("potentials", "nearest_neighbour")
    c = float(cfg.get("coefficient", 1.0))
    if pot == "nearest_neighbour":
        return EnergySpec.nearest_neighbour(mesh, c)
    if pot == "uniform":
        return EnergySpec.uniform(mesh, c)
    if isinstance(pot, dict) and "by_length" in pot:
        table = {float(k): float(v) for k, v in pot["by_length"].items()}
        return EnergySpec.by_length(mesh, table)
    raise ValueError(f"unknown potentials {pot!r}")


def load_measure(value, cfg: dict) -> AtomicMeasure:
    if isinstance(value, str):
        return AtomicMeasure.from_json(load_json(_resolve(cfg, value)))
    return AtomicMeasure.from_json(value)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, AtomicMeasure):
        return obj.to_json()
    return obj


def write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2)


def write_trajectory_csv(path, traj) -> None:
    """One row per atom and step: step, time, x, y, charge, energy, dissipation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "x", "y", "charge", "energy", "dissipation"])
        for k, (t, s, e, d) in enumerate(zip(traj.times, traj.states, traj.energies,
                                             traj.dissipations)):
            if traj.kind == "positions":
                rows = [(p, q) for p, q in zip(s, traj.signs)]
            else:
                rows = list(s)
            if not rows:
                w.writerow([k, f"{t:.10g}", "", "", "", f"{e:.12g}", f"{d:.12g}"])
            for p, q in rows:
                w.writerow([k, f"{t:.10g}", f"{p[0]:.10g}", f"{p[1]:.10g}", int(q),
                            f"{e:.12g}", f"{d:.12g}"])


def write_svg(path, omega: Domain, states, signs=None, size: int = 480) -> None:
    """Domain outline with atom positions; earlier states drawn fainter."""
    x0, y0, x1, y1 = omega.bbox
    span = max(x1 - x0, y1 - y0)
    pad = 0.05 * span
    scale = size / (span + 2 * pad)

    def tr(p):
        return (p[0] - x0 + pad) * scale, (y1 - p[1] + pad) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for ring in omega.rings:
        pts = " ".join("%.2f,%.2f" % tr(p) for p in ring)
        out.append(f'<polygon points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    n = len(states)
    for k, s in enumerate(states):
        if isinstance(s, AtomicMeasure):
            items = list(s)
        else:
            items = list(zip(np.asarray(s), signs))
        alpha = 0.15 + 0.85 * (k + 1) / n
        for p, q in items:
            cx, cy = tr(p)
            color = "#c0392b" if q > 0 else "#2c3e80"
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{color}" '
                       f'fill-opacity="{alpha:.2f}"/>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out))
