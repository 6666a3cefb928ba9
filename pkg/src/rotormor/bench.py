"""Benchmark scenarios: full-order sweeps versus the adaptive reduction.

The named scenarios bind the reference perturbations (a 5 degree remanence
deviation on one magnet, a 0.3 mm elongation of one tooth); reports carry
wall times, basis sizes, iteration and solve counts, the speedup and the
fraction of adaptive time not spent in full-order solves.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import (
    DEFAULT_EPS_REL,
    DEFAULT_TRUNCATION,
    AdaptiveRun,
    IndexSetFamily,
    adaptive_solve,
    make_distributed_sets,
    make_pole_local_sets,
)
from .certify import CertificateConfig
from .fem import BlockSystem, FullOrderSolver, sweep_full
from .machine import MachineSpec, Mesh, apply_tooth_perturbation, build_mesh, partition_dofs
from .pod import SnapshotSet, pod_svd

NAMED_SCENARIOS = ("sym", "rot", "stat", "rot_stat")
ROT_DEVIATION_RAD = np.deg2rad(5.0)   # reference magnet-angle perturbation
STAT_ELONGATION_M = 0.3e-3            # reference tooth elongation


@dataclass
class Scenario:
    """One benchmark configuration: machine, perturbations, tolerances."""

    name: str = "custom"
    family: str = "K"                  # pole-local "K" | distributed "M"
    eps: float = 1e-3
    eps_rel: float = DEFAULT_EPS_REL
    truncation: str = DEFAULT_TRUNCATION
    dphi: float = 0.0                  # deviation on one magnet [rad]
    dlen: float = 0.0                  # elongation of one tooth [m]
    magnet_index: int = 3
    tooth_index: int = 21
    subsets_per_section: int = 12
    distributed_count: int = None
    initial_set: int = 0
    repeats: int = 3
    seed: int = 0
    max_iterations: int = None
    machine: MachineSpec = field(default_factory=MachineSpec)

    def __post_init__(self):
        if self.family not in ("K", "M"):
            raise ValueError(f"family must be 'K' or 'M', got {self.family!r}")
        if self.name in ("rot", "rot_stat") and self.dphi == 0.0:
            raise ValueError(f"scenario {self.name!r} requires its magnet perturbation")
        if self.name in ("stat", "rot_stat") and self.dlen == 0.0:
            raise ValueError(f"scenario {self.name!r} requires its tooth perturbation")

    @classmethod
    def named(cls, name: str, **overrides) -> "Scenario":
        if name not in NAMED_SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}; choose from {NAMED_SCENARIOS}")
        kwargs = dict(name=name)
        if name in ("rot", "rot_stat"):
            kwargs["dphi"] = ROT_DEVIATION_RAD
        if name in ("stat", "rot_stat"):
            kwargs["dlen"] = STAT_ELONGATION_M
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "Scenario":
        with open(path) as fh:
            data = json.load(fh)
        machine = data.pop("machine", None)
        name = data.pop("name", "custom")
        if name != "custom" and not data.keys() & {"dphi", "dlen"}:
            scenario = cls.named(name)
            data.setdefault("dphi", scenario.dphi)
            data.setdefault("dlen", scenario.dlen)
        kwargs = dict(data, name=name)
        if machine is not None:
            kwargs["machine"] = MachineSpec.from_dict(machine)
        return cls(**kwargs)

    def perturbed_spec(self) -> MachineSpec:
        spec = self.machine
        phis = list(spec.magnet_angles)
        phis[self.magnet_index % spec.n_poles] += self.dphi
        lens = list(spec.tooth_lengths)
        lens[self.tooth_index % spec.n_teeth] += self.dlen
        return dataclasses.replace(
            spec, magnet_angles=tuple(phis), tooth_lengths=tuple(lens)
        )

    def build(self):
        """Perturbed spec, actual mesh, partition and assembled system."""
        spec = self.perturbed_spec()
        mesh = apply_tooth_perturbation(build_mesh(spec), spec)
        partition = partition_dofs(mesh)
        return spec, mesh, partition, BlockSystem.build(mesh, partition, spec)

    def index_family(self) -> IndexSetFamily:
        n_i, n_p = self.machine.n_interface, self.machine.n_poles
        if self.family == "K":
            return make_pole_local_sets(n_i, n_p, self.subsets_per_section)
        count = self.distributed_count or n_p * self.subsets_per_section
        return make_distributed_sets(n_i, count)


@dataclass
class BenchReport:
    """One row of the performance summary."""

    scenario: str
    family: str
    fem_seconds: float
    rom_seconds: float
    basis_static: int
    basis_rotating: int
    iterations: int
    speedup: float
    overhead_fraction: float
    full_solve_count: int
    n_interface: int
    converged: bool
    max_delta_rel: float

    def consistent(self, rtol: float = 1e-9) -> bool:
        ok_speed = abs(self.speedup - self.fem_seconds / self.rom_seconds) <= rtol * self.speedup
        return ok_speed and 0.0 <= self.overhead_fraction <= 1.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    CSV_HEADER = (
        "scenario,family,fem_seconds,rom_seconds,basis_static,basis_rotating,"
        "iterations,speedup,overhead_fraction,full_solve_count,n_interface,"
        "converged,max_delta_rel"
    )

    def csv_row(self) -> str:
        return (
            f"{self.scenario},{self.family},{self.fem_seconds:.6g},{self.rom_seconds:.6g},"
            f"{self.basis_static},{self.basis_rotating},{self.iterations},"
            f"{self.speedup:.6g},{self.overhead_fraction:.6g},{self.full_solve_count},"
            f"{self.n_interface},{int(self.converged)},{self.max_delta_rel:.6g}"
        )


def eig_decay_table(full_sweep: SnapshotSet) -> dict:
    """Normalized POD spectra of the stator, rotor and interface rows."""
    out = {}
    for block in ("static", "rotating", "interface"):
        lam = pod_svd(full_sweep.block(block)).eigenvalues
        out[block] = lam / lam[0]
    return out


def write_eig_decay_csv(table: dict, path) -> None:
    n = max(len(v) for v in table.values())
    rows = ["mode,static,rotating,interface"]
    for i in range(n):
        cells = [str(i + 1)]
        for block in ("static", "rotating", "interface"):
            v = table[block]
            cells.append(f"{v[i]:.10g}" if i < len(v) else "")
        rows.append(",".join(cells))
    Path(path).write_text("\n".join(rows) + "\n")


def run_scenario(
    scenario: Scenario, out_dir=None, full_sweep: SnapshotSet = None
) -> tuple:
    """Execute the full-order reference sweep and the adaptive reduction.

    Wall times are averaged over ``scenario.repeats``; the mesh, the
    assembled blocks and the index family are prepared outside the timed
    regions.  Returns ``(report, run, full_sweep)`` and writes the CSV/JSON
    artifacts when ``out_dir`` is given; a non-convergent adaptive run is
    reported as such, with artifacts still written.
    """
    spec, mesh, partition, system = scenario.build()
    family = scenario.index_family()
    n_i = spec.n_interface
    repeats = max(1, scenario.repeats)

    fem_times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        solver = FullOrderSolver(system)
        sweep = sweep_full(system, range(n_i), solver=solver)
        fem_times.append(time.perf_counter() - t0)
        if full_sweep is None:
            full_sweep = sweep
    fem_seconds = float(np.mean(fem_times))

    rom_times = []
    run = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        run = adaptive_solve(
            system,
            family,
            eps=scenario.eps,
            eps_rel=scenario.eps_rel,
            truncation=scenario.truncation,
            initial_set=scenario.initial_set,
            max_iterations=scenario.max_iterations,
        )
        rom_times.append(time.perf_counter() - t0)
    rom_seconds = float(np.mean(rom_times))

    report = BenchReport(
        scenario=scenario.name,
        family=scenario.family,
        fem_seconds=fem_seconds,
        rom_seconds=rom_seconds,
        basis_static=run.basis_sizes[0],
        basis_rotating=run.basis_sizes[1],
        iterations=run.iterations,
        speedup=fem_seconds / rom_seconds,
        overhead_fraction=run.overhead_fraction,
        full_solve_count=run.solve_count,
        n_interface=n_i,
        converged=run.converged,
        max_delta_rel=run.report.max_rel,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = f"{scenario.name}_{scenario.family}"
        write_eig_decay_csv(eig_decay_table(full_sweep), out / f"eig_decay_{scenario.name}.csv")
        run.log_csv(out / f"adaptive_log_{tag}.csv")
        run.trace_csv(out / f"error_trace_{tag}.csv")
        run.report.export_csv(out / f"final_certificate_{tag}.csv")
        payload = {"scenario": scenario.name, "family": scenario.family, "report": report.to_dict(),
                   "run": run.summary_dict()}
        (out / f"bench_{tag}.json").write_text(json.dumps(payload, indent=2) + "\n")
    return report, run, full_sweep


def eig_decay(scenario: Scenario, out_path=None, full_sweep: SnapshotSet = None):
    """Normalized eigenvalue decay of the three blocks over a revolution."""
    if full_sweep is None:
        _, _, _, system = scenario.build()
        full_sweep = sweep_full(system, range(scenario.machine.n_interface))
    table = eig_decay_table(full_sweep)
    if out_path is not None:
        write_eig_decay_csv(table, out_path)
    return table


def format_report_table(reports: list) -> str:
    """Plain-text summary table, one scenario per row."""
    header = (
        f"{'Setting':10s} {'FEM (s)':>9s} {'ROM (s)':>9s} {'Basis (s,r)':>12s} "
        f"{'Iter.':>5s} {'Speedup':>8s} {'Overhead':>9s} {'Conv.':>5s}"
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.scenario:10s} {r.fem_seconds:9.2f} {r.rom_seconds:9.2f} "
            f"{'(%d,%d)' % (r.basis_static, r.basis_rotating):>12s} {r.iterations:5d} "
            f"{r.speedup:8.2f} {r.overhead_fraction:8.0%} {str(r.converged):>5s}"
        )
    return "\n".join(lines)


def compare_families(scenarios: list, out_dir=None) -> dict:
    """Run each scenario under both index-set families.

    Returns ``{"K": [reports], "M": [reports]}``; failed rows are recorded
    as None and do not abort the remaining rows.
    """
    results = {"K": [], "M": []}
    sweeps = {}
    for base in scenarios:
        for fam in ("K", "M"):
            scen = dataclasses.replace(base, family=fam)
            try:
                report, _, sweep = run_scenario(
                    scen, out_dir=out_dir, full_sweep=sweeps.get(base.name)
                )
                sweeps.setdefault(base.name, sweep)
                results[fam].append(report)
            except Exception as exc:  # pragma: no cover - defensive per-row guard
                print(f"scenario {scen.name}/{fam} failed: {exc}")
                results[fam].append(None)
    if out_dir is not None and scenarios:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [BenchReport.CSV_HEADER]
        for fam in ("K", "M"):
            rows += [r.csv_row() for r in results[fam] if r is not None]
        (out / "compare_families.csv").write_text("\n".join(rows) + "\n")
        text = []
        for fam, title in (("K", "pole-local sets"), ("M", "distributed sets")):
            good = [r for r in results[fam] if r is not None]
            text += [f"Index family {fam} ({title})", format_report_table(good), ""]
        (out / "compare_families.txt").write_text("\n".join(text))
    return results
