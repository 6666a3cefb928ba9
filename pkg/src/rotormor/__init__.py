"""Certified POD reduced-order models for rotating 2D magnetostatic sweeps."""

from .machine import (
    DofPartition,
    GeometryError,
    MachineSpec,
    Mesh,
    apply_tooth_perturbation,
    build_mesh,
    partition_dofs,
)
from .fem import (
    BlockSystem,
    FullOrderSolver,
    FullSolution,
    RotatedSystem,
    SolverError,
    assemble_loads,
    assemble_stiffness,
    solve_full,
    sweep_full,
)
from .pod import (
    PodBasis,
    SnapshotSet,
    Weight,
    pod_snapshot_method,
    pod_svd,
    truncate_energy,
)
from .affine import CongruenceError, ParametricDecomposition, build_parametric_decomposition
from .rom import ReducedModel, RomSolution, RomSweepSolver, project
from .certify import (
    CertificateConfig,
    ErrorReport,
    ResidualGramian,
    certify_sweep,
    coercivity,
    estimate,
    residual_norm,
)
from .adaptive import (
    AdaptiveRun,
    IndexSetFamily,
    adaptive_solve,
    make_distributed_sets,
    make_pole_local_sets,
    solve_count,
)
from .bench import BenchReport, Scenario, compare_families, eig_decay, run_scenario

__version__ = "0.1.0"
