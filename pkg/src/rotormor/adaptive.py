"""Greedy adaptive snapshot sampling driven by the certified error.

The rotation is partitioned into disjoint index sets; the loop solves the
full-order system on one set at a time, rebuilds the POD bases from all
accumulated snapshots, certifies the reduced model over the whole
revolution and, when the worst relative estimate exceeds the tolerance,
continues with the unused set containing the worst angle (falling back to
the next-worst angle when that set was already consumed).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certify import CertificateConfig, ErrorReport, certify_sweep, coercivity
from .fem import BlockSystem, FullOrderSolver, sweep_full
from .pod import PodBasis, SnapshotSet, pod_svd, truncate_energy
from .rom import ReducedModel, project

# run-level truncation defaults; the amplitude rule keeps the abandoned
# content below the certification floor at desk scale (see README)
DEFAULT_EPS_REL = 1.0 - 1e-9
DEFAULT_TRUNCATION = "amplitude"


@dataclass
class IndexSetFamily:
    """Disjoint angle-index sets covering (a subset of) one revolution."""

    kind: str
    n_interface: int
    sets: list
    used: list = None

    def __post_init__(self):
        self.sets = [np.asarray(s, dtype=int) for s in self.sets]
        if self.used is None:
            self.used = [False] * len(self.sets)
        self.validate()
        lookup = np.full(self.n_interface, -1, dtype=int)
        for i, s in enumerate(self.sets):
            lookup[s] = i
        self._lookup = lookup

    def validate(self):
        seen = np.zeros(self.n_interface, dtype=bool)
        for i, s in enumerate(self.sets):
            if s.size == 0:
                raise ValueError(f"set {i} is empty")
            if s.min() < 0 or s.max() >= self.n_interface:
                raise ValueError(f"set {i} has indices outside [0, {self.n_interface})")
            if np.unique(s).size != s.size or np.any(seen[s]):
                raise ValueError(f"set {i} overlaps another set or repeats indices")
            seen[s] = True

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def set_containing(self, angle: int) -> int:
        """Index of the set holding ``angle``, or -1."""
        return int(self._lookup[int(angle)])

    def fresh(self) -> "IndexSetFamily":
        return IndexSetFamily(self.kind, self.n_interface, [s.copy() for s in self.sets])


def _suggest_interface_count(n_interface, divisor):
    return divisor * max(1, round(n_interface / divisor))


def make_pole_local_sets(
    n_interface: int, n_poles: int, subsets_per_section: int, allow_uneven: bool = False
) -> IndexSetFamily:
    """Pole-local hierarchical sets: the revolution splits into one section
    per pole and each section into strided subsets.

    All indices are 0-based: set ``(i, j)`` is ``{S*i + j + J*m}`` with
    section length ``S = n_interface / n_poles`` and stride
    ``J = subsets_per_section``.  Exact tiling requires ``J | S``; with
    ``allow_uneven`` the literal strided formula is kept and the subsets of
    a section may differ in size by one.
    """
    if n_interface % n_poles:
        raise ValueError(
            f"n_interface={n_interface} not divisible by n_poles={n_poles}; "
            f"nearest admissible is {_suggest_interface_count(n_interface, n_poles)}"
        )
    section = n_interface // n_poles
    j_stride = int(subsets_per_section)
    if section % j_stride and not allow_uneven:
        raise ValueError(
            f"section length {section} not divisible by {j_stride} subsets; "
            f"nearest admissible n_interface is "
            f"{_suggest_interface_count(n_interface, n_poles * j_stride)} "
            f"(or pass allow_uneven=True for the literal strided sets)"
        )
    sets = []
    for i in range(n_poles):
        for j in range(j_stride):
            members = np.arange(j, section, j_stride) + section * i
            sets.append(members)
    return IndexSetFamily("pole-local", n_interface, sets)


def make_distributed_sets(
    n_interface: int, count: int, allow_uneven: bool = False
) -> IndexSetFamily:
    """Distributed sets ``M_i = {i + count*m}`` spreading each set's
    snapshots over the whole revolution (0-based)."""
    if n_interface % count and not allow_uneven:
        raise ValueError(
            f"n_interface={n_interface} not divisible by count={count}; "
            f"nearest admissible is {_suggest_interface_count(n_interface, count)} "
            f"(or pass allow_uneven=True for sets of uneven size)"
        )
    sets = [np.arange(i, n_interface, count) for i in range(count)]
    return IndexSetFamily("distributed", n_interface, sets)


@dataclass
class IterationRecord:
    iteration: int
    set_index: int
    n_new_solves: int
    n_static_basis: int
    n_rotating_basis: int
    max_rel: float
    argmax_angle: int
    delta_rel: np.ndarray = None


@dataclass
class AdaptiveRun:
    """Log and products of one adaptive reduction."""

    eps: float
    eps_rel: float
    truncation: str
    family_kind: str
    records: list = field(default_factory=list)
    converged: bool = False
    termination: str = ""
    basis_static: PodBasis = None
    basis_rotating: PodBasis = None
    model: ReducedModel = None
    snapshots: SnapshotSet = None
    report: ErrorReport = None
    solve_count: int = 0
    wall_time: float = 0.0
    full_solve_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def basis_sizes(self):
        return (self.basis_static.size, self.basis_rotating.size)

    def basis_sizes_at(self, eps_rel: float, mode: str = None):
        """Basis sizes the final snapshot set yields at another truncation
        threshold (used for reporting at the reference 0.9999)."""
        mode = mode or self.truncation
        return (
            truncate_energy(pod_svd(self.snapshots.block("static")), eps_rel, mode).size,
            truncate_energy(pod_svd(self.snapshots.block("rotating")), eps_rel, mode).size,
        )

    @property
    def overhead_fraction(self) -> float:
        if self.wall_time <= 0:
            return 0.0
        return max(0.0, 1.0 - self.full_solve_time / self.wall_time)

    def log_csv(self, path) -> None:
        rows = ["iteration,set_index,new_solves,n_static,n_rotating,max_delta_rel,argmax_angle"]
        for r in self.records:
            rows.append(
                f"{r.iteration},{r.set_index},{r.n_new_solves},{r.n_static_basis},"
                f"{r.n_rotating_basis},{r.max_rel:.17g},{r.argmax_angle}"
            )
        Path(path).write_text("\n".join(rows) + "\n")

    def trace_csv(self, path) -> None:
        """Per-iteration estimator traces in long format."""
        rows = ["iteration,angle,delta_rel"]
        for r in self.records:
            if r.delta_rel is None:
                continue
            for k, d in enumerate(r.delta_rel):
                rows.append(f"{r.iteration},{k},{d:.10g}")
        Path(path).write_text("\n".join(rows) + "\n")

    def summary_dict(self) -> dict:
        return {
            "eps": self.eps,
            "eps_rel": self.eps_rel,
            "truncation": self.truncation,
            "family": self.family_kind,
            "iterations": self.iterations,
            "converged": self.converged,
            "termination": self.termination,
            "basis": list(self.basis_sizes),
            "solve_count": self.solve_count,
            "max_delta_rel": self.report.max_rel if self.report is not None else None,
            "wall_time": self.wall_time,
            "overhead_fraction": self.overhead_fraction,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary_dict(), indent=2) + "\n")


def adaptive_solve(
    system: BlockSystem,
    family: IndexSetFamily,
    eps: float,
    eps_rel: float = DEFAULT_EPS_REL,
    truncation: str = DEFAULT_TRUNCATION,
    initial_set: int = 0,
    config: CertificateConfig = None,
    solver: FullOrderSolver = None,
    max_iterations: int = None,
    keep_traces: bool = True,
) -> AdaptiveRun:
    """Run the adaptive certified reduction until ``max Delta_rel <= eps``.

    Terminates with ``converged=False`` and an explicit reason when the
    family is exhausted (or ``max_iterations`` is hit) without reaching the
    tolerance; this is reported, never silently treated as success.
    """
    if eps <= 0:
        raise ValueError("tolerance eps must be positive")
    family = family.fresh()
    config = config or CertificateConfig()
    t_start = time.perf_counter()
    run = AdaptiveRun(
        eps=eps, eps_rel=eps_rel, truncation=truncation, family_kind=family.kind
    )
    if solver is None:
        solver = FullOrderSolver(system)
    alpha = None
    if config.coercivity_policy == "once":
        alpha = coercivity(system, config.weight, config.eig_tol, k=0)
    current = initial_set
    snapshots = None
    limit = family.n_sets if max_iterations is None else min(max_iterations, family.n_sets)
    for iteration in range(1, limit + 1):
        family.used[current] = True
        t0 = time.perf_counter()
        new = sweep_full(system, family.sets[current], solver=solver)
        run.full_solve_time += time.perf_counter() - t0
        run.solve_count += new.n_snapshots
        snapshots = new if snapshots is None else SnapshotSet.concat(snapshots, new)
        basis_s = truncate_energy(pod_svd(snapshots.block("static")), eps_rel, truncation)
        basis_r = truncate_energy(pod_svd(snapshots.block("rotating")), eps_rel, truncation)
        model = project(system, basis_s, basis_r)
        report = certify_sweep(system, model, config=config, alpha=alpha)
        run.records.append(
            IterationRecord(
                iteration=iteration,
                set_index=current,
                n_new_solves=new.n_snapshots,
                n_static_basis=basis_s.size,
                n_rotating_basis=basis_r.size,
                max_rel=report.max_rel,
                argmax_angle=report.argmax_rel,
                delta_rel=report.delta_rel.copy() if keep_traces else None,
            )
        )
        run.basis_static, run.basis_rotating = basis_s, basis_r
        run.model, run.report, run.snapshots = model, report, snapshots
        if report.max_rel <= eps:
            run.converged = True
            run.termination = "tolerance reached"
            break
        nxt = None
        for k in np.argsort(report.delta_rel)[::-1]:
            cand = family.set_containing(int(report.angles[k]))
            if cand >= 0 and not family.used[cand]:
                nxt = cand
                break
        if nxt is None:
            run.termination = "sets exhausted"
            break
        current = nxt
    else:
        run.termination = f"iteration limit {limit} reached"
    run.wall_time = time.perf_counter() - t_start
    return run


def solve_count(run: AdaptiveRun) -> int:
    """Number of full-order solves the adaptive run consumed."""
    return run.solve_count
