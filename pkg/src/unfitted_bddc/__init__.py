"""Unfitted Q1 finite elements on Cartesian grids with BDDC preconditioning."""

__version__ = "0.1.0"

from .assembly import assemble_global, assemble_subassembled, error_norms, manufactured
from .bddc import BDDCPreconditioner, build_coarse_space, build_weighting
from .geometry import BackgroundMesh, CellKind, classify_cells, make_geometry
from .krylov import SolveReport, condition_estimate, pcg
from .partition import (
    ObjectKind,
    build_partition,
    classify_objects,
    free_edges,
    split_edges_v1,
    split_edges_v2,
)
from .quadrature import build_cut_quadrature, full_cell_quadrature
