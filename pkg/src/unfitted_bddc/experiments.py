"""Experiment drivers: breakdown, weak scaling, translations, convergence, H/h.

Every driver takes an :class:`ExperimentConfig` and returns a list of
:class:`RunRecord`. ``write_results`` turns them into a CSV table with a
fixed header, a long-format residual table and a JSON manifest.

Config files are plain ``key = value`` lines. ``#`` starts a comment, list
values are comma separated and scalars are parsed as Python literals when
possible (``1e-9``, ``true``, ``16, 32``), otherwise kept as strings::

    geometry = sphere
    geometry.radius = 0.7
    mesh.cells = 16, 32, 64
    mesh.ratio = 8
    bc.cut = nitsche
    bddc.variant = standard, v2
"""

import ast
import csv
import dataclasses
import itertools
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble_global, assemble_subassembled, error_norms, manufactured
from .bddc import BDDCPreconditioner, build_weighting
from .geometry import classify_cells, make_geometry
from .krylov import pcg
from .partition import (
    build_partition,
    check_face_boundaries,
    classify_objects,
    free_edges,
    split_edges_v1,
    split_edges_v2,
)

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "BudgetExceeded",
    "parse_config",
    "load_config",
    "discretize",
    "solve_case",
    "run_solve",
    "run_breakdown",
    "run_weak_scaling",
    "run_translation_sweep",
    "run_convergence",
    "run_hh_study",
    "convergence_slopes",
    "write_results",
    "CSV_HEADER",
]

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "mesh_id", "n_el", "n_dof", "n_sd", "coarse_dofs", "iters",
    "cond_est", "l2_err", "h1_err", "wall_s",
]
CSV_EXTRA = [
    "experiment", "preconditioner", "bc", "ratio", "h", "H", "max_el_sd", "max_dof_sd",
    "eps_over_h", "full_elements", "coarse_rel", "converged",
]

VARIANTS = ("standard", "v1", "v2")


class BudgetExceeded(RuntimeError):
    """A mesh has more DOFs than the configured budget allows."""


@dataclass
class ExperimentConfig:
    geometry: str = "sphere"
    geometry_params: dict = field(default_factory=dict)
    cells: list = field(default_factory=lambda: [16, 32, 64])
    ratio: int = 8
    bc: str = "nitsche"
    beta_safety: float = 2.0
    quad_order: int = 3
    objects: list = field(default_factory=lambda: ["cef"])
    weighting: list = field(default_factory=lambda: ["stiffness"])
    variant: list = field(default_factory=lambda: ["standard"])
    tol: float = 1e-9
    max_iter: int = 2000
    eps_over_h: list = field(default_factory=list)
    sweep_points: int = 11
    sweep_cells: int = 32
    full_elements: bool = False
    ratios: list = field(default_factory=lambda: [4, 8, 16])
    max_dofs: int = 200_000

    def preconditioners(self):
        """All ``(variant, objects, weighting)`` combinations requested."""
        return list(itertools.product(self.variant, self.objects, self.weighting))

    def to_mapping(self):
        return dataclasses.asdict(self)


_KEYS = {
    "geometry": "geometry",
    "mesh.cells": "cells",
    "mesh.ratio": "ratio",
    "bc.cut": "bc",
    "beta.safety": "beta_safety",
    "quad.order": "quad_order",
    "bddc.objects": "objects",
    "bddc.weighting": "weighting",
    "bddc.variant": "variant",
    "solver.tol": "tol",
    "solver.max_iter": "max_iter",
    "sweep.eps_over_h": "eps_over_h",
    "sweep.points": "sweep_points",
    "sweep.cells": "sweep_cells",
    "reference.full_elements": "full_elements",
    "hh.ratios": "ratios",
    "budget.max_dofs": "max_dofs",
}
_LISTS = {"cells", "objects", "weighting", "variant", "eps_over_h", "ratios"}


def _literal(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text, base=None):
    """Parse ``key = value`` lines into an :class:`ExperimentConfig`.

    Raises
    ------
    ValueError
        On malformed lines or unknown keys.
    """
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    cfg.geometry_params = dict(cfg.geometry_params)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("geometry."):
            cfg.geometry_params[key.split(".", 1)[1]] = _literal(value)
            continue
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        name = _KEYS[key]
        if name in _LISTS:
            parsed = [_literal(v) for v in value.split(",") if v.strip()]
        else:
            parsed = _literal(value)
        setattr(cfg, name, parsed)
    return cfg


def load_config(path, base=None):
    return parse_config(Path(path).read_text(), base)


@dataclass
class RunRecord:
    experiment: str
    mesh_id: int
    n_el: int
    n_dof: int
    n_sd: int
    max_el_sd: int
    max_dof_sd: int
    h: float
    H: float
    ratio: int
    coarse_dofs: int
    iters: int
    cond_est: float
    l2_err: float
    h1_err: float
    wall_s: float
    converged: bool
    preconditioner: str
    bc: str
    eps_over_h: float = float("nan")
    full_elements: bool = False
    coarse_rel: float = float("nan")
    coarse_histogram: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def row(self):
        d = dataclasses.asdict(self)
        return [d[k] for k in CSV_HEADER + CSV_EXTRA]


@dataclass
class Discretization:
    """Everything needed to build preconditioners on one mesh."""

    mesh: object
    levelset: object
    system: object
    partition: object
    subsystem: object
    edges: np.ndarray
    objects: object
    mesh_id: int
    setup_time: float
    _weights: dict = field(default_factory=dict)

    def weighting(self, mode):
        if mode not in self._weights:
            self._weights[mode] = build_weighting(self.subsystem, mode)
        return self._weights[mode]

    def node_phi(self):
        return self.mesh.node_phi[self.mesh.dof_node[self.system.free]]

    def split_objects(self, variant, weighting):
        if variant == "standard":
            return self.objects
        if variant == "v1":
            return split_edges_v1(self.objects, self.node_phi(), self.edges)
        if variant == "v2":
            return split_edges_v2(self.objects, self.weighting(weighting).matrix, self.edges)
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")

    def preconditioner(self, variant="standard", objects="cef", weighting="stiffness"):
        obj = self.split_objects(variant, weighting)
        if objects == "ce":
            check_face_boundaries(obj, self.edges)
        return BDDCPreconditioner(
            self.system.matrix, self.subsystem, obj, objects, self.weighting(weighting)
        )


def _cells_for(geometry, n):
    base = np.array(geometry.base_cells)
    return tuple(int(b * n // base[0]) for b in base)


def _geometry(config, **overrides):
    params = dict(config.geometry_params)
    params.update(overrides)
    return make_geometry(config.geometry, **params)


def discretize(config, n, mesh_id=1, offset=None, full_elements=False, ratio=None, geometry=None,
               problem=None):
    """Classify, assemble and partition the mesh with ``n`` cells on the first axis.

    Raises
    ------
    BudgetExceeded
        If the active mesh has more than ``config.max_dofs`` DOFs.
    """
    start = time.perf_counter()
    geo = geometry or _geometry(config)
    dim = geo.lower.size
    mesh = classify_cells(geo.lower, geo.upper, _cells_for(geo, n), geo.levelset, offset)
    if mesh.n_dofs > config.max_dofs:
        raise BudgetExceeded(f"{mesh.n_dofs} DOFs exceed the budget of {config.max_dofs}")
    problem = problem or manufactured(dim)
    system = assemble_global(
        mesh, geo.levelset, problem, config.bc, config.quad_order, config.beta_safety, full_elements
    )
    partition = build_partition(mesh, ratio or config.ratio)
    subsystem = assemble_subassembled(system, partition)
    edges = free_edges(system)
    objects = classify_objects(subsystem, edges, dim)
    return Discretization(
        mesh, geo.levelset, system, partition, subsystem, edges, objects, mesh_id,
        time.perf_counter() - start,
    )


def solve_case(disc, config, variant="standard", objects="cef", weighting="stiffness",
               experiment="solve", eps_over_h=float("nan")):
    """Build one preconditioner on ``disc``, run PCG and collect a record."""
    start = time.perf_counter()
    pre = disc.preconditioner(variant, objects, weighting)
    x, report = pcg(disc.system.matrix, disc.system.rhs, pre, config.tol, config.max_iter)
    wall = time.perf_counter() - start
    l2, h1 = error_norms(disc.system, x)
    cond = report.cond_estimate
    sub = disc.subsystem
    label = "full" if disc.system.full_elements else variant
    return RunRecord(
        experiment=experiment,
        mesh_id=disc.mesh_id,
        n_el=int(disc.mesh.active_cells.size),
        n_dof=int(disc.system.n),
        n_sd=int(sub.n_subdomains),
        max_el_sd=int(disc.partition.cells_per_subdomain.max()),
        max_dof_sd=int(max(loc.n for loc in sub.locals)),
        h=float(disc.mesh.h[0]),
        H=float(disc.partition.H[0]),
        ratio=int(disc.partition.ratio[0]),
        coarse_dofs=int(pre.coarse_size),
        iters=int(report.iterations),
        cond_est=float("nan") if cond is None else float(cond),
        l2_err=l2,
        h1_err=h1,
        wall_s=wall + disc.setup_time,
        converged=bool(report.converged),
        preconditioner=f"{label}-{objects}-{weighting}",
        bc=disc.system.bc,
        eps_over_h=float(eps_over_h),
        full_elements=bool(disc.system.full_elements),
        coarse_histogram=np.bincount(pre.coarse.per_subdomain).tolist(),
        residual_history=[float(r) for r in report.residual_history],
        config=config.to_mapping(),
    )


def _family(config, experiment, cells=None, ratio=None):
    """Discretizations for a mesh family, stopping at the DOF budget."""
    for mesh_id, n in enumerate(cells or config.cells, 1):
        try:
            yield discretize(config, n, mesh_id, ratio=ratio)
        except BudgetExceeded as exc:
            logger.warning("%s: skipping mesh %d and beyond (%s)", experiment, mesh_id, exc)
            return


def _relative_coarse(records):
    """Fill ``coarse_rel`` as the ratio to the standard run on the same mesh."""
    base = {}
    for r in records:
        if r.preconditioner.startswith("standard-"):
            key = (r.mesh_id, r.ratio, r.eps_over_h, r.preconditioner.split("-", 1)[1])
            base[key] = r.coarse_dofs
    for r in records:
        key = (r.mesh_id, r.ratio, r.eps_over_h, r.preconditioner.split("-", 1)[1])
        if key in base and base[key] > 0:
            r.coarse_rel = r.coarse_dofs / base[key]
    return records


def run_solve(config):
    """Every requested preconditioner on the first mesh of the family."""
    disc = discretize(config, config.cells[0])
    return [solve_case(disc, config, *p, experiment="solve") for p in config.preconditioners()]


DEFAULT_BREAKDOWN_EPS = [1.0] + [10.0 ** -k for k in range(1, 12)]


def run_breakdown(config):
    """Moving Neumann side on the 2D rectangle, both weighting modes.

    The left side sits at ``x = left - eps`` with ``left`` on a subdomain
    boundary, so for small ``eps`` one column of subdomains keeps only
    slivers of volume fraction ``eps / h``.
    """
    eps_list = config.eps_over_h or DEFAULT_BREAKDOWN_EPS
    cfg = dataclasses.replace(config, bc="neumann")
    n = config.cells[0]
    base = _geometry(cfg)
    h = (base.upper[0] - base.lower[0]) / _cells_for(base, n)[0]
    records = []
    for eps in eps_list:
        geo = _geometry(cfg, eps=float(eps) * h)
        disc = discretize(cfg, n, geometry=geo)
        for variant, objects in itertools.product(config.variant, config.objects):
            for weighting in ("topological", "stiffness"):
                records.append(solve_case(disc, cfg, variant, objects, weighting, "breakdown", eps))
    return records


def run_weak_scaling(config):
    """Iterations and coarse sizes over a mesh family at fixed ``H/h``."""
    records = []
    for disc in _family(config, "weak-scaling"):
        for p in config.preconditioners():
            records.append(solve_case(disc, config, *p, experiment="weak-scaling"))
        if config.full_elements:
            ref = discretize(config, config.cells[disc.mesh_id - 1], disc.mesh_id, full_elements=True)
            for objects, weighting in itertools.product(config.objects, config.weighting):
                records.append(solve_case(ref, config, "standard", objects, weighting, "weak-scaling"))
    return _relative_coarse(records)


def run_translation_sweep(config):
    """Translate the background mesh by ``eps`` in ``[-h, h]`` along the diagonal."""
    geo = _geometry(config)
    dim = geo.lower.size
    h = (geo.upper[0] - geo.lower[0]) / _cells_for(geo, config.sweep_cells)[0]
    fractions = config.eps_over_h or np.linspace(-1.0, 1.0, config.sweep_points).tolist()
    records = []
    for frac in fractions:
        disc = discretize(config, config.sweep_cells, offset=np.full(dim, float(frac) * h))
        for p in config.preconditioners():
            records.append(solve_case(disc, config, *p, experiment="translation-sweep",
                                      eps_over_h=frac))
    return _relative_coarse(records)


def run_convergence(config):
    """Errors of the first preconditioner's solution over the mesh family."""
    variant, objects, weighting = config.preconditioners()[0]
    return [
        solve_case(disc, config, variant, objects, weighting, "convergence")
        for disc in _family(config, "convergence")
    ]


def convergence_slopes(records):
    """Least-squares slopes of ``log(error)`` against ``log(h)``."""
    h = np.log([r.h for r in records])
    l2 = np.polyfit(h, np.log([r.l2_err for r in records]), 1)[0]
    h1 = np.polyfit(h, np.log([r.h1_err for r in records]), 1)[0]
    return float(l2), float(h1)


def run_hh_study(config):
    """Weak-scaling families for several ``H/h`` ratios."""
    records = []
    for ratio in config.ratios:
        cells = [n for n in config.cells if n % ratio == 0]
        for disc in _family(config, f"hh-study H/h={ratio}", cells=cells, ratio=ratio):
            for p in config.preconditioners():
                records.append(solve_case(disc, config, *p, experiment="hh-study"))
    return _relative_coarse(records)


PRESETS = {
    "solve": dict(cells=[16], variant=["standard", "v1", "v2"]),
    "breakdown": dict(geometry="rectangle", cells=[128], ratio=32, objects=["c"], bc="neumann"),
    "weak-scaling": dict(variant=["standard", "v1", "v2"], full_elements=True),
    "translation-sweep": dict(variant=["standard", "v1", "v2"], sweep_cells=32),
    "convergence": dict(geometry="annulus", cells=[32, 64, 128, 256], ratio=16),
    "hh-study": dict(variant=["standard", "v2"], ratios=[4, 8, 16]),
}


def preset(experiment):
    """Default configuration of a driver (a config file refines it)."""
    return dataclasses.replace(ExperimentConfig(), **PRESETS[experiment])


DRIVERS = {
    "solve": run_solve,
    "breakdown": run_breakdown,
    "weak-scaling": run_weak_scaling,
    "translation-sweep": run_translation_sweep,
    "convergence": run_convergence,
    "hh-study": run_hh_study,
}


def _json_safe(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_results(out_dir, experiment, records, config, extra=None):
    """Write ``<experiment>.csv``, ``<experiment>_residuals.csv`` and ``<experiment>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = experiment.replace("-", "_")
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER + CSV_EXTRA)
        w.writerows(r.row() for r in records)
    with open(out / f"{stem}_residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "iteration", "residual"])
        for i, r in enumerate(records):
            w.writerows((i, k, res) for k, res in enumerate(r.residual_history))
    manifest = {
        "experiment": experiment,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config.to_mapping(),
        "runs": [
            {k: v for k, v in dataclasses.asdict(r).items() if k not in ("residual_history", "config")}
            for r in records
        ],
    }
    if extra:
        manifest.update(extra)
    (out / f"{stem}.json").write_text(json.dumps(_json_safe(manifest), indent=2))
    return out / f"{stem}.csv"
